use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::{Dispatch, DistFlowMatrices, NetworkData, SystemState};

/// Derivatives of the converged state with respect to the dispatch. Every
/// block is `n x 2k`: rows follow bus/branch index, columns follow the
/// dispatch layout `(P^PV, Q^PV)`. `dv` covers non-root voltages only.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub dv: DMatrix<f64>,
    pub dl: DMatrix<f64>,
    pub dp: DMatrix<f64>,
    pub dq: DMatrix<f64>,
}

impl Sensitivity {
    /// Stacked `4n x 2k` matrix in state order `(V, l, P, Q)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m) = (self.dv.nrows(), self.dv.ncols());
        let mut out = DMatrix::zeros(4 * n, m);
        for (b, blk) in [&self.dv, &self.dl, &self.dp, &self.dq]
            .into_iter()
            .enumerate()
        {
            out.view_mut((b * n, 0), (n, m)).copy_from(blk);
        }
        out
    }

    /// `(dV/df)^T g_v + (dl/df)^T g_l`.
    pub fn vjp(&self, g_v: &[f64], g_l: &[f64]) -> Vec<f64> {
        let m = self.dv.ncols();
        let mut out = vec![0.0; m];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for r in 0..self.dv.nrows() {
                acc += self.dv[(r, c)] * g_v[r] + self.dl[(r, c)] * g_l[r];
            }
            *o = acc;
        }
        out
    }
}

fn check_dims(net: &NetworkData, d: &Dispatch, state: &SystemState) -> Result<()> {
    if d.as_slice().len() != net.dispatch_dim() {
        return Err(Error::Dimension {
            what: "dispatch",
            expected: net.dispatch_dim(),
            got: d.as_slice().len(),
        });
    }
    if state.l.len() != net.n() || state.v.len() != net.n() + 1 {
        return Err(Error::Dimension {
            what: "system state",
            expected: net.n(),
            got: state.l.len(),
        });
    }
    Ok(())
}

/// Implicit-function sensitivity `-(dh/dz)^{-1} dh/df` over the full
/// branch-flow residual system `h(z, f) = 0`, with `z = (V, l, P, Q)` and the
/// residuals stacked as active balance, reactive balance, voltage drop and
/// current definition per branch.
pub fn implicit_state_sensitivity(
    net: &NetworkData,
    d: &Dispatch,
    state: &SystemState,
) -> Result<Sensitivity> {
    check_dims(net, d, state)?;
    let n = net.n();
    let k = net.pv_count();
    let (iv, il, ip, iq) = (0, n, 2 * n, 3 * n);
    let mut jac = DMatrix::<f64>::zeros(4 * n, 4 * n);
    for b in 0..n {
        let node = b + 1;
        let par = net.parent(node);
        let (r, x) = (net.r[b], net.x[b]);
        // active balance: P_b - p_b - r l_b - sum P_children
        jac[(b, ip + b)] = 1.0;
        jac[(b, il + b)] = -r;
        // reactive balance
        jac[(n + b, iq + b)] = 1.0;
        jac[(n + b, il + b)] = -x;
        for &ch in net.children(node) {
            jac[(b, ip + ch - 1)] = -1.0;
            jac[(n + b, iq + ch - 1)] = -1.0;
        }
        // voltage drop: V_b - V_par + 2 (r P + x Q) - z^2 l
        let row = 2 * n + b;
        jac[(row, iv + b)] = 1.0;
        if par != 0 {
            jac[(row, iv + par - 1)] = -1.0;
        }
        jac[(row, ip + b)] = 2.0 * r;
        jac[(row, iq + b)] = 2.0 * x;
        jac[(row, il + b)] = -(r * r + x * x);
        // current definition: l V_par - P^2 - Q^2
        let row = 3 * n + b;
        jac[(row, il + b)] = state.v[par];
        if par != 0 {
            jac[(row, iv + par - 1)] = state.l[b];
        }
        jac[(row, ip + b)] = -2.0 * state.p[b];
        jac[(row, iq + b)] = -2.0 * state.q[b];
    }
    let mut rhs = DMatrix::<f64>::zeros(4 * n, 2 * k);
    for (i, &m) in net.pv_buses().iter().enumerate() {
        // p = P^L - P^PV enters the balance with a minus sign
        rhs[(m, i)] = -1.0;
        rhs[(n + m, k + i)] = -1.0;
    }
    let lu = jac.lu();
    if lu.determinant().abs() < f64::MIN_POSITIVE {
        return Err(Error::SingularJacobian);
    }
    let dz = lu.solve(&rhs).ok_or(Error::SingularJacobian)?;
    if dz.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok(Sensitivity {
        dv: dz.rows(iv, n).into_owned(),
        dl: dz.rows(il, n).into_owned(),
        dp: dz.rows(ip, n).into_owned(),
        dq: dz.rows(iq, n).into_owned(),
    })
}

/// Same derivatives through the compact model: only the current equations
/// `l ∘ V_send(l, f) - P(l, f)^2 - Q(l, f)^2 = 0` are differentiated
/// implicitly (an `n x n` solve), flows and voltages follow explicitly.
pub fn reduced_state_sensitivity(
    net: &NetworkData,
    mat: &DistFlowMatrices,
    d: &Dispatch,
    state: &SystemState,
) -> Result<Sensitivity> {
    check_dims(net, d, state)?;
    let n = net.n();
    let k = net.pv_count();
    let cr = &mat.d_r * -1.0;
    let cx = &mat.d_x * -1.0;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, 2 * k);
    for row in 0..n {
        let par = net.parent(row + 1);
        let (l, p, q) = (state.l[row], state.p[row], state.q[row]);
        a[(row, row)] += state.v[par];
        for m in 0..n {
            let mut v = -2.0 * p * cr[(row, m)] - 2.0 * q * cx[(row, m)];
            if par != 0 {
                v -= l * mat.h[(par - 1, m)];
            }
            a[(row, m)] += v;
        }
        for (i, &m) in net.pv_buses().iter().enumerate() {
            let mut dp = 2.0 * p * mat.c[(row, m)];
            let mut dq = 2.0 * q * mat.c[(row, m)];
            if par != 0 {
                dp += l * mat.m_p[(par - 1, m)];
                dq += l * mat.m_q[(par - 1, m)];
            }
            b[(row, i)] = dp;
            b[(row, k + i)] = dq;
        }
    }
    let lu = a.lu();
    let dl = lu.solve(&(-b)).ok_or(Error::SingularJacobian)?;
    if dl.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    // explicit parts
    let mut dv = -&mat.h * &dl;
    let mut dp = &cr * &dl;
    let mut dq = &cx * &dl;
    for (i, &m) in net.pv_buses().iter().enumerate() {
        for r in 0..n {
            dv[(r, i)] += mat.m_p[(r, m)];
            dv[(r, k + i)] += mat.m_q[(r, m)];
            dp[(r, i)] -= mat.c[(r, m)];
            dq[(r, k + i)] -= mat.c[(r, m)];
        }
    }
    Ok(Sensitivity { dv, dl, dp, dq })
}

/// `(dV/df)^T g_v + (dl/df)^T g_l` by one adjoint solve through the
/// compact model, without forming the sensitivity matrices.
pub fn reduced_vjp(
    net: &NetworkData,
    mat: &DistFlowMatrices,
    state: &SystemState,
    g_v: &[f64],
    g_l: &[f64],
) -> Result<Vec<f64>> {
    let n = net.n();
    let k = net.pv_count();
    if g_v.len() != n || g_l.len() != n {
        return Err(Error::Dimension {
            what: "state cotangent",
            expected: n,
            got: g_v.len().min(g_l.len()),
        });
    }
    // A^T mu = g_l - H^T g_v with A the current-equation Jacobian in l
    let mut at = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        let par = net.parent(row + 1);
        let (l, p, q) = (state.l[row], state.p[row], state.q[row]);
        at[(row, row)] += state.v[par];
        for m in 0..n {
            let mut v = 2.0 * p * mat.d_r[(row, m)] + 2.0 * q * mat.d_x[(row, m)];
            if par != 0 {
                v -= l * mat.h[(par - 1, m)];
            }
            at[(m, row)] += v;
        }
    }
    let mut rhs = nalgebra::DVector::from_column_slice(g_l);
    for m in 0..n {
        let mut acc = 0.0;
        for r in 0..n {
            acc += mat.h[(r, m)] * g_v[r];
        }
        rhs[m] -= acc;
    }
    let mu = at.lu().solve(&rhs).ok_or(Error::SingularJacobian)?;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    let mut out = vec![0.0; 2 * k];
    for (i, &m) in net.pv_buses().iter().enumerate() {
        let (mut gp, mut gq) = (0.0, 0.0);
        for r in 0..n {
            gp += mat.m_p[(r, m)] * g_v[r];
            gq += mat.m_q[(r, m)] * g_v[r];
            let par = net.parent(r + 1);
            let c = mat.c[(r, m)];
            let (mut bp, mut bq) = (2.0 * state.p[r] * c, 2.0 * state.q[r] * c);
            if par != 0 {
                bp += state.l[r] * mat.m_p[(par - 1, m)];
                bq += state.l[r] * mat.m_q[(par - 1, m)];
            }
            gp -= bp * mu[r];
            gq -= bq * mu[r];
        }
        out[i] = gp;
        out[k + i] = gq;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_matrices, feeder_33, solve_power_flow, two_bus, Scenario};

    fn fd(net: &NetworkData, x: &Scenario, d: &Dispatch, h: f64) -> DMatrix<f64> {
        let n = net.n();
        let m = d.as_slice().len();
        let mut out = DMatrix::zeros(4 * n, m);
        for c in 0..m {
            let mut plus = d.clone();
            plus.0[c] += h;
            let mut minus = d.clone();
            minus.0[c] -= h;
            let sp = solve_power_flow(net, x, &plus).unwrap();
            let sm = solve_power_flow(net, x, &minus).unwrap();
            for r in 0..n {
                out[(r, c)] = (sp.v[r + 1] - sm.v[r + 1]) / (2.0 * h);
                out[(n + r, c)] = (sp.l[r] - sm.l[r]) / (2.0 * h);
                out[(2 * n + r, c)] = (sp.p[r] - sm.p[r]) / (2.0 * h);
                out[(3 * n + r, c)] = (sp.q[r] - sm.q[r]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn two_bus_matches_finite_differences() {
        let net = two_bus(0.05, 0.05);
        let x = net.nominal_scenario();
        let d = Dispatch(vec![0.06, 0.01]);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let sens = implicit_state_sensitivity(&net, &d, &s).unwrap().stacked();
        assert_eq!(sens.shape(), (4, 2));
        let num = fd(&net, &x, &d, 1e-6);
        let rel = (&sens - &num).norm() / num.norm();
        assert!(rel < 1e-4, "relative error {rel}");
        // local generation raises the local voltage
        assert!(sens[(0, 0)] > 0.0);
    }

    #[test]
    fn routes_agree_on_33() {
        let net = feeder_33();
        let mat = build_matrices(&net);
        let x = net.nominal_scenario();
        let d = Dispatch::zero_curtailment(&net, &x);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let full = implicit_state_sensitivity(&net, &d, &s).unwrap().stacked();
        let reduced = reduced_state_sensitivity(&net, &mat, &d, &s)
            .unwrap()
            .stacked();
        assert!((&full - &reduced).norm() <= 1e-9 * full.norm());
    }

    #[test]
    fn adjoint_matches_matrix_product() {
        let net = feeder_33();
        let mat = build_matrices(&net);
        let x = net.nominal_scenario();
        let d = Dispatch::zero_curtailment(&net, &x);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let g_v: Vec<f64> = (0..net.n()).map(|i| (i as f64 * 0.37).sin()).collect();
        let g_l: Vec<f64> = (0..net.n()).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = reduced_state_sensitivity(&net, &mat, &d, &s)
            .unwrap()
            .vjp(&g_v, &g_l);
        let got = reduced_vjp(&net, &mat, &s, &g_v, &g_l).unwrap();
        for (a, b) in want.iter().zip(&got) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_impedance_pins_voltage() {
        let net = feeder_33().with_zero_impedance();
        let x = net.nominal_scenario();
        let d = Dispatch::zero_curtailment(&net, &x);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let sens = implicit_state_sensitivity(&net, &d, &s).unwrap();
        assert!(sens.dv.iter().all(|v| v.abs() < 1e-12));
    }
}
