use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::oracle::{solver_projection, OracleConfig};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::network::{
    build_matrices, check_feasibility, evaluate_objective, Dispatch, NetworkData, Scenario,
};
use crate::projection::{median, project, BisectionConfig};
use crate::robust::{eval_interior_point, AffineRule};
use crate::surrogate::{DispatchModel, LabeledDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Regression-only network.
    VNn,
    /// Network trained with the feasibility penalties.
    PNn,
    /// Penalized network followed by bisection projection.
    BNn,
    /// Penalized network followed by the solver-based projection baseline.
    SolverProjection,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::VNn => "V-NN",
            Method::PNn => "P-NN",
            Method::BNn => "B-NN",
            Method::SolverProjection => "solver-projection",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub bisection: BisectionConfig,
    /// Also run the solver-based projection for comparison.
    pub solver_baseline: bool,
    pub oracle: OracleConfig,
    /// Test samples evaluated once, untimed, before measuring.
    pub warmup: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            bisection: BisectionConfig::default(),
            solver_baseline: false,
            oracle: OracleConfig::default(),
            warmup: 10,
            execution: Execution::Parallel,
        }
    }
}

/// One method on one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: usize,
    pub method: String,
    pub feasible: bool,
    pub objective: f64,
    pub label_objective: f64,
    /// Relative objective excess over the label in percent; NaN when the
    /// method output is infeasible.
    pub gap_pct: f64,
    pub inference_s: f64,
    pub projection_s: f64,
    pub kappa: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub samples: usize,
    pub feasible_pct: f64,
    /// Mean gap over the feasible outputs only.
    pub mean_gap_pct: f64,
    pub gap_samples: usize,
    /// Feasible outputs that beat the (local) oracle label.
    pub negative_gaps: usize,
    pub mean_inference_s: f64,
    pub median_inference_s: f64,
    pub mean_projection_s: f64,
    pub median_projection_s: f64,
    pub std_projection_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fingerprint: String,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub rows: Vec<SampleRow>,
}

impl BenchReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m.name())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for m in &self.methods {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn evaluate(net: &NetworkData, x: &Scenario, d: &Dispatch, tol: f64) -> Result<(bool, f64)> {
    let r = check_feasibility(net, x, d, tol)?;
    let obj = r
        .state
        .as_ref()
        .map_or(f64::NAN, |s| evaluate_objective(net, x, s, d));
    Ok((r.feasible, obj))
}

fn gap(obj: f64, label: f64, feasible: bool) -> f64 {
    if feasible && obj.is_finite() && label != 0.0 {
        (obj - label) / label.abs() * 100.0
    } else {
        f64::NAN
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

/// Runs every method on the test split. The gap of a method is averaged
/// over the samples where its output is feasible; the feasibility rate is
/// over all test samples.
pub fn run_benchmark(
    net: &NetworkData,
    data: &LabeledDataset,
    pretrained: &DispatchModel,
    penalized: &DispatchModel,
    rule: &AffineRule,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let fp = net.fingerprint();
    for (what, got) in [
        ("V-NN", &pretrained.fingerprint),
        ("P-NN", &penalized.fingerprint),
        ("rule", &rule.fingerprint),
    ] {
        if *got != fp {
            log::error!("{what} artifact was built for another network");
            return Err(Error::Fingerprint {
                expected: got.clone(),
                actual: fp,
            });
        }
    }
    cfg.bisection.validate()?;
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Err(Error::Input("dataset has no test samples".into()));
    }
    let mat = build_matrices(net);
    let tol = cfg.bisection.feasibility_tol;

    for s in test.iter().take(cfg.warmup) {
        let f = penalized.predict(&s.x)?;
        let ip = eval_interior_point(rule, &s.x)?;
        project(net, &s.x, &f, &ip.dispatch, &cfg.bisection)?;
    }

    let per_sample = map_indexed(cfg.execution, test.len(), |i| -> Result<Vec<SampleRow>> {
        let s = test[i];
        let label = s.objective;
        let mut rows = Vec::with_capacity(4);
        let row =
            |m: Method, feasible: bool, obj: f64, inf: f64, proj: f64, kappa: f64, it: usize| {
                SampleRow {
                    id: s.id,
                    method: m.name().to_string(),
                    feasible,
                    objective: obj,
                    label_objective: label,
                    gap_pct: gap(obj, label, feasible),
                    inference_s: inf,
                    projection_s: proj,
                    kappa,
                    iterations: it,
                }
            };
        let (fv, tv) = timed(|| pretrained.predict(&s.x));
        let fv = fv?;
        let (feas, obj) = evaluate(net, &s.x, &fv, tol)?;
        rows.push(row(Method::VNn, feas, obj, tv, 0.0, f64::NAN, 0));

        let (fp_, tp) = timed(|| penalized.predict(&s.x));
        let fp_ = fp_?;
        let (feas, obj) = evaluate(net, &s.x, &fp_, tol)?;
        rows.push(row(Method::PNn, feas, obj, tp, 0.0, f64::NAN, 0));

        let (proj, tb) = timed(|| {
            eval_interior_point(rule, &s.x)
                .and_then(|ip| project(net, &s.x, &fp_, &ip.dispatch, &cfg.bisection))
        });
        let proj = proj?;
        let (feas, obj) = evaluate(net, &s.x, &proj.dispatch, tol)?;
        rows.push(row(
            Method::BNn,
            feas,
            obj,
            tp,
            tb,
            proj.kappa,
            proj.iterations,
        ));

        if cfg.solver_baseline {
            let (res, ts) = timed(|| {
                if check_feasibility(net, &s.x, &fp_, tol)?.feasible {
                    Ok(fp_.clone())
                } else {
                    solver_projection(net, &mat, &s.x, &fp_, &cfg.oracle).map(|r| r.dispatch)
                }
            });
            let (feas, obj) = match res {
                Ok(d) => evaluate(net, &s.x, &d, tol)?,
                Err(Error::Oracle) => (false, f64::NAN),
                Err(e) => return Err(e),
            };
            rows.push(row(
                Method::SolverProjection,
                feas,
                obj,
                tp,
                ts,
                f64::NAN,
                0,
            ));
        }
        Ok(rows)
    });
    let mut rows = Vec::with_capacity(test.len() * 4);
    for r in per_sample {
        rows.extend(r?);
    }

    let mut methods = vec![Method::VNn, Method::PNn, Method::BNn];
    if cfg.solver_baseline {
        methods.push(Method::SolverProjection);
    }
    let summaries = methods.iter().map(|&m| summarize(m, &rows)).collect();
    Ok(BenchReport {
        fingerprint: fp,
        methods: summaries,
        rows,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn summarize(m: Method, rows: &[SampleRow]) -> MethodSummary {
    let mine: Vec<&SampleRow> = rows.iter().filter(|r| r.method == m.name()).collect();
    let gaps: Vec<f64> = mine
        .iter()
        .filter(|r| r.gap_pct.is_finite())
        .map(|r| r.gap_pct)
        .collect();
    let mut inf: Vec<f64> = mine.iter().map(|r| r.inference_s).collect();
    let mut proj: Vec<f64> = mine.iter().map(|r| r.projection_s).collect();
    let mp = mean(&proj);
    let std = if proj.is_empty() {
        f64::NAN
    } else {
        (proj.iter().map(|t| (t - mp).powi(2)).sum::<f64>() / proj.len() as f64).sqrt()
    };
    MethodSummary {
        method: m.name().to_string(),
        samples: mine.len(),
        feasible_pct: 100.0 * mine.iter().filter(|r| r.feasible).count() as f64
            / mine.len().max(1) as f64,
        mean_gap_pct: mean(&gaps),
        gap_samples: gaps.len(),
        negative_gaps: gaps.iter().filter(|g| **g < 0.0).count(),
        mean_inference_s: mean(&inf),
        median_inference_s: median(&mut inf),
        mean_projection_s: mp,
        median_projection_s: median(&mut proj),
        std_projection_s: std,
    }
}
