use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use derdispatch::bench::{generate_dataset, run_benchmark};
use derdispatch::network::{check_feasibility, Dispatch, Scenario};
use derdispatch::projection::project;
use derdispatch::robust::{certify, eval_interior_point, AffineRule, ScenarioBox};
use derdispatch::surrogate::{train, write_log_csv, DispatchModel, LabeledDataset};
use derdispatch::Error;

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "derdispatch",
    version,
    about = "Neural PV dispatch with certified feasibility restoration"
)]
struct Cli {
    /// Key-value configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// "33", "129" or a network JSON file.
    #[arg(long, global = true)]
    network: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// Run batches on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenarios and label them with the reference optimizer.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Fitted rule whose interior point seeds the optimizer.
        #[arg(long)]
        rule: Option<PathBuf>,
    },
    /// Train the regression and penalized networks.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        #[arg(long)]
        penalty_epochs: Option<usize>,
        #[arg(long)]
        pi_v: Option<f64>,
        #[arg(long)]
        pi_l: Option<f64>,
    },
    /// Fit the affine interior-point rule over the scenario box.
    FitIp {
        #[arg(long)]
        out: PathBuf,
        /// Check the rule on this many sampled scenarios afterwards.
        #[arg(long, default_value_t = 1000)]
        verify: usize,
    },
    /// Compare V-NN, P-NN and B-NN on the test split.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vnn: PathBuf,
        #[arg(long)]
        pnn: PathBuf,
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also time the solver-based projection baseline.
        #[arg(long)]
        solver_baseline: bool,
    },
    /// Restore feasibility of one dispatch.
    Project {
        #[arg(long)]
        rule: PathBuf,
        /// Scenario: comma-separated values or a JSON array file.
        #[arg(long)]
        scenario: String,
        /// Dispatch: comma-separated values or a JSON array file.
        #[arg(long)]
        dispatch: String,
    },
    /// Feasibility report for one dispatch.
    Check {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        dispatch: String,
    },
}

fn read_vector(arg: &str) -> Result<Vec<f64>> {
    if let Ok(v) = arg
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
    {
        return Ok(v);
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    serde_json::from_str(&text).with_context(|| format!("{arg} is not a JSON array of numbers"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.common.network {
        cfg.network = n;
    }
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.common.radius {
        cfg.radius = r;
    }
    cfg.sequential |= cli.common.sequential;
    let net = cfg.network()?;

    match cli.command {
        Command::GenData { out, count, rule } => {
            if let Some(c) = count {
                cfg.count = c;
            }
            let rule = rule.map(|p| AffineRule::load(&p, &net)).transpose()?;
            let g = generate_dataset(&net, rule.as_ref(), &cfg.dataset())?;
            g.dataset.write_csv(&out)?;
            log::info!(
                "{} samples written to {} ({} redrawn)",
                g.dataset.len(),
                out.display(),
                g.resampled
            );
        }
        Command::Train {
            data,
            out_dir,
            pretrain_epochs,
            penalty_epochs,
            pi_v,
            pi_l,
        } => {
            cfg.pretrain_epochs = pretrain_epochs.unwrap_or(cfg.pretrain_epochs);
            cfg.penalty_epochs = penalty_epochs.unwrap_or(cfg.penalty_epochs);
            cfg.pi_v = pi_v.unwrap_or(cfg.pi_v);
            cfg.pi_l = pi_l.unwrap_or(cfg.pi_l);
            let ds = LabeledDataset::read_csv(&data)?;
            std::fs::create_dir_all(&out_dir)?;
            let tc = cfg.training();
            let out = train(&net, &ds, &tc)?;
            out.pretrained.save(out_dir.join("vnn.json"))?;
            out.penalized.save(out_dir.join("pnn.json"))?;
            write_log_csv(&out.log, out_dir.join("train_log.csv"))?;
            write_json(&out_dir.join("train_config.json"), &tc)?;
            log::info!("models written to {}", out_dir.display());
        }
        Command::FitIp { out, verify } => {
            let bx = ScenarioBox::around(&net.nominal_scenario(), cfg.radius)?;
            let (_, rule) = certify(&net, &bx, &cfg.certify())?;
            rule.save(&out)?;
            println!("slack {:.6e}", rule.slack);
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut failures = 0;
            for _ in 0..verify {
                let x = bx.sample(&mut rng);
                let ip = eval_interior_point(&rule, &x)?;
                if !check_feasibility(&net, &x, &ip.dispatch, cfg.feasibility_tol)?.feasible {
                    failures += 1;
                }
            }
            println!("verified {verify} scenarios, {failures} failures");
            if failures > 0 {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Bench {
            data,
            vnn,
            pnn,
            rule,
            out_dir,
            solver_baseline,
        } => {
            let ds = LabeledDataset::read_csv(&data)?;
            let vnn = DispatchModel::load(&vnn, &net)?;
            let pnn = DispatchModel::load(&pnn, &net)?;
            let rule = AffineRule::load(&rule, &net)?;
            std::fs::create_dir_all(&out_dir)?;
            let rep = run_benchmark(&net, &ds, &vnn, &pnn, &rule, &cfg.bench(solver_baseline))?;
            rep.write_summary_csv(out_dir.join("report.csv"))?;
            rep.write_rows_csv(out_dir.join("samples.csv"))?;
            std::fs::write(out_dir.join("summary.json"), rep.to_json()?)?;
            for m in &rep.methods {
                println!(
                    "{:<18} feasible {:6.2}%  gap {:7.3}%  inference {:.2e}s  projection {:.2e}s",
                    m.method,
                    m.feasible_pct,
                    m.mean_gap_pct,
                    m.mean_inference_s,
                    m.mean_projection_s
                );
            }
        }
        Command::Project {
            rule,
            scenario,
            dispatch,
        } => {
            let rule = AffineRule::load(&rule, &net)?;
            let x = Scenario(read_vector(&scenario)?);
            let d = Dispatch(read_vector(&dispatch)?);
            let ip = eval_interior_point(&rule, &x)?;
            if !ip.in_box {
                log::warn!("scenario lies outside the certified box");
            }
            let p = project(&net, &x, &d, &ip.dispatch, &cfg.bisection())?;
            let out = serde_json::json!({
                "dispatch": p.dispatch.0,
                "kappa": p.kappa,
                "iterations": p.iterations,
                "feasible_before": p.feasible_before,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Check { scenario, dispatch } => {
            let x = Scenario(read_vector(&scenario)?);
            let d = Dispatch(read_vector(&dispatch)?);
            let r = check_feasibility(&net, &x, &d, cfg.feasibility_tol)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.feasible {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 2: bad or infeasible input, 3: certificate failure, 4: a solver did not
/// converge, 1: anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Topology(_)
        | Error::Input(_)
        | Error::Dimension { .. }
        | Error::Fingerprint { .. }
        | Error::Version(_) => 2,
        Error::NoInteriorRule { .. } | Error::CertificateFailure(_) => 3,
        Error::Divergence { .. }
        | Error::VoltageCollapse { .. }
        | Error::SingularJacobian
        | Error::Lp(_)
        | Error::Training { .. }
        | Error::EmptyBatch
        | Error::Oracle => 4,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
