use nalgebra::{DMatrix, DVector};

use super::NetworkData;

/// Elementwise split `M = pos + neg` with `pos >= 0` and `neg <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSplit {
    pub pos: DMatrix<f64>,
    pub neg: DMatrix<f64>,
}

impl SignSplit {
    pub fn of(m: &DMatrix<f64>) -> Self {
        SignSplit {
            pos: m.map(|v| v.max(0.0)),
            neg: m.map(|v| v.min(0.0)),
        }
    }
}

/// Compact DistFlow form over bus indices.
///
/// With consumption-positive nodal injections `p = P^L - P^PV`,
/// `q = Q^L - Q^PV`:
///
/// ```text
/// P = C p - D_R l          Q = C q - D_X l
/// V = V0 1 - M_p p - M_q q - H l
/// ```
///
/// `C` is the downstream-accumulation (subtree) matrix: `C[k][j] = 1` when bus
/// `j` lies in the subtree fed by branch `k`. Losses add to every upstream
/// flow, so `D_R = -C R` and `D_X = -C X` are elementwise non-positive, and
/// `H = C^T (2 R C R + 2 X C X - Z^2)` is elementwise non-negative. Both the
/// injection and the loss terms therefore enter `V` with a minus sign.
#[derive(Debug, Clone)]
pub struct DistFlowMatrices {
    pub v0: f64,
    pub c: DMatrix<f64>,
    pub d_r: DMatrix<f64>,
    pub d_x: DMatrix<f64>,
    pub m_p: DMatrix<f64>,
    pub m_q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d_r_split: SignSplit,
    pub d_x_split: SignSplit,
    pub h_split: SignSplit,
}

pub fn build_matrices(net: &NetworkData) -> DistFlowMatrices {
    let n = net.n();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        // walk from bus j up to the root, marking every branch on the path
        let mut node = j + 1;
        while node != 0 {
            c[(node - 1, j)] = 1.0;
            node = net.parent(node);
        }
    }
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&net.r));
    let x = DMatrix::from_diagonal(&DVector::from_column_slice(&net.x));
    let z2 = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        (0..n).map(|k| net.r[k] * net.r[k] + net.x[k] * net.x[k]),
    ));
    let cr = &c * &r;
    let cx = &c * &x;
    let d_r = -&cr;
    let d_x = -&cx;
    let ct = c.transpose();
    let m_p = 2.0 * &ct * &r * &c;
    let m_q = 2.0 * &ct * &x * &c;
    let h = &ct * (2.0 * &r * &cr + 2.0 * &x * &cx - z2);
    DistFlowMatrices {
        v0: net.v0,
        d_r_split: SignSplit::of(&d_r),
        d_x_split: SignSplit::of(&d_x),
        h_split: SignSplit::of(&h),
        c,
        d_r,
        d_x,
        m_p,
        m_q,
        h,
    }
}

impl DistFlowMatrices {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Branch flows and non-root squared voltages for given injections and
    /// squared currents.
    pub fn evaluate(
        &self,
        p: &DVector<f64>,
        q: &DVector<f64>,
        l: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let pf = &self.c * p - &self.d_r * l;
        let qf = &self.c * q - &self.d_x * l;
        let v =
            DVector::from_element(self.n(), self.v0) - &self.m_p * p - &self.m_q * q - &self.h * l;
        (pf, qf, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::feeder_33;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Leaf-to-root propagation of the branch-wise equations; independent of
    /// the matrix construction.
    fn branchwise(
        net: &NetworkData,
        p: &[f64],
        q: &[f64],
        l: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = net.n();
        let mut pf = vec![0.0; n];
        let mut qf = vec![0.0; n];
        for &node in net.order().iter().rev() {
            let k = node - 1;
            let mut ps = p[k] + net.r[k] * l[k];
            let mut qs = q[k] + net.x[k] * l[k];
            for &ch in net.children(node) {
                ps += pf[ch - 1];
                qs += qf[ch - 1];
            }
            pf[k] = ps;
            qf[k] = qs;
        }
        let mut v = vec![0.0; n];
        for &node in net.order() {
            let k = node - 1;
            let up = match net.parent(node) {
                0 => net.v0,
                par => v[par - 1],
            };
            let z2 = net.r[k] * net.r[k] + net.x[k] * net.x[k];
            v[k] = up - 2.0 * (net.r[k] * pf[k] + net.x[k] * qf[k]) + z2 * l[k];
        }
        (pf, qf, v)
    }

    fn max_abs_diff(a: &DVector<f64>, b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_bus_coefficients() {
        let net = crate::network::two_bus(0.05, 0.05);
        let m = build_matrices(&net);
        assert_eq!(m.c[(0, 0)], 1.0);
        assert!((m.m_p[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((m.m_q[(0, 0)] - 0.1).abs() < 1e-15);
        // H = 2r^2 + 2x^2 - z^2 = z^2
        assert!((m.h[(0, 0)] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn zero_impedance_collapses() {
        let net = feeder_33().with_zero_impedance();
        let m = build_matrices(&net);
        for mat in [&m.m_p, &m.m_q, &m.h, &m.d_r, &m.d_x] {
            assert!(mat.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_on_random_states_33() {
        let net = feeder_33();
        let m = build_matrices(&net);
        let n = net.n();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
            let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.2)).collect();
            let (pf, qf, v) = branchwise(&net, &p, &q, &l);
            let (mp, mq, mv) = m.evaluate(
                &DVector::from_vec(p),
                &DVector::from_vec(q),
                &DVector::from_vec(l),
            );
            worst = worst
                .max(max_abs_diff(&mp, &pf))
                .max(max_abs_diff(&mq, &qf))
                .max(max_abs_diff(&mv, &v));
        }
        assert!(worst <= 1e-10, "worst residual {worst:e}");
    }

    #[test]
    fn structural_signs() {
        let m = build_matrices(&feeder_33());
        assert!(m.d_r.iter().all(|&v| v <= 0.0));
        assert!(m.d_x.iter().all(|&v| v <= 0.0));
        assert!(m.h.iter().all(|&v| v >= -1e-15));
        assert_eq!(m.m_p, m.m_p.transpose());
        let eig = m.m_p.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-12));
        for s in [&m.d_r_split, &m.d_x_split, &m.h_split] {
            assert!(s.pos.iter().all(|&v| v >= 0.0));
            assert!(s.neg.iter().all(|&v| v <= 0.0));
        }
        assert_eq!(&m.d_x_split.pos + &m.d_x_split.neg, m.d_x);
    }
}
