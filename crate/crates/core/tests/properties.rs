use std::sync::OnceLock;

use derdispatch::bench::project_box_disk;
use derdispatch::network::{
    build_matrices, check_feasibility, injections, solve_power_flow, two_bus, Dispatch,
    NetworkData, Scenario,
};
use derdispatch::projection::{batch_project, project, BisectionConfig};
use derdispatch::robust::{certify, eval_interior_point, AffineRule, CertifyOptions, ScenarioBox};
use derdispatch::surrogate::{
    evaluate_loss, DispatchModel, Mlp, Normalization, PenaltyWeights, Sample, Split,
};
use derdispatch::Execution;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn certified_two_bus() -> &'static (NetworkData, ScenarioBox, AffineRule) {
    static CELL: OnceLock<(NetworkData, ScenarioBox, AffineRule)> = OnceLock::new();
    CELL.get_or_init(|| {
        let net = two_bus(0.3, 0.25);
        let bx = ScenarioBox::around(&net.nominal_scenario(), 0.25).unwrap();
        let (_, rule) = certify(&net, &bx, &CertifyOptions::default()).unwrap();
        (net, bx, rule)
    })
}

fn scenario_in_box(bx: &ScenarioBox, u: &[f64]) -> Scenario {
    Scenario(
        bx.lower
            .iter()
            .zip(&bx.upper)
            .zip(u)
            .map(|((l, h), t)| l + t * (h - l))
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn box_disk_projection_is_feasible_and_idempotent(
        p in -2.0..2.0f64, q in -2.0..2.0f64, p_max in 0.0..1.5f64, s in 0.0..1.0f64,
    ) {
        let (pp, pq) = project_box_disk(p, q, p_max, s);
        prop_assert!(pp >= 0.0 && pp <= p_max + 1e-15);
        prop_assert!(pp * pp + pq * pq <= s * s * (1.0 + 1e-12) + 1e-15);
        let (p2, q2) = project_box_disk(pp, pq, p_max, s);
        prop_assert!((p2 - pp).abs() <= 1e-12 && (q2 - pq).abs() <= 1e-12);
    }

    #[test]
    fn box_disk_projection_is_no_farther_than_feasible_points(
        p in -2.0..2.0f64, q in -2.0..2.0f64, p_max in 0.0..1.5f64, s in 0.01..1.0f64,
        a in 0.0..1.0f64, r in 0.0..1.0f64,
    ) {
        let (pp, pq) = project_box_disk(p, q, p_max, s);
        // a feasible comparison point
        let angle = std::f64::consts::PI * (a - 0.5);
        let (cp, cq) = project_box_disk(r * s * angle.cos(), r * s * angle.sin(), p_max, s);
        let d_proj = (pp - p).hypot(pq - q);
        let d_other = (cp - p).hypot(cq - q);
        prop_assert!(d_proj <= d_other + 1e-12);
    }

    #[test]
    fn model_outputs_respect_head_bounds(seed in 0u64..1000, u in prop::collection::vec(0.0..1.0f64, 3)) {
        let (net, bx, _) = certified_two_bus();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::init(&[net.scenario_dim(), 4, net.dispatch_dim()], &mut rng);
        for w in mlp.params.iter_mut() {
            *w *= 10.0;
        }
        let model = DispatchModel::new(net, mlp, Normalization::identity(net.scenario_dim())).unwrap();
        let x = scenario_in_box(bx, &u);
        let f = model.predict(&x).unwrap();
        let k = net.pv_count();
        for (i, &b) in net.pv_buses().iter().enumerate() {
            prop_assert!(f.0[i] >= 0.0 && f.0[i] <= x.pv_avail()[b]);
            prop_assert!(f.0[k + i].abs() <= net.inv_cap[b]);
        }
    }

    #[test]
    fn bisection_always_returns_a_feasible_dispatch(
        u in prop::collection::vec(0.0..1.0f64, 3), p in -0.5..0.5f64, q in -0.5..0.5f64,
    ) {
        let (net, bx, rule) = certified_two_bus();
        let x = scenario_in_box(bx, &u);
        let f = Dispatch(vec![p, q]);
        let ip = eval_interior_point(rule, &x).unwrap();
        let cfg = BisectionConfig::default();
        let pr = project(net, &x, &f, &ip.dispatch, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&pr.kappa));
        prop_assert!(pr.iterations <= cfg.max_iter);
        prop_assert!(check_feasibility(net, &x, &pr.dispatch, cfg.feasibility_tol).unwrap().feasible);
        prop_assert!(pr.dispatch.distance(&f) <= ip.dispatch.distance(&f) * (1.0 + 1e-12));
    }

    #[test]
    fn compact_form_reproduces_power_flow(
        u in prop::collection::vec(0.0..1.0f64, 3), a in 0.0..1.0f64, b in -1.0..1.0f64,
    ) {
        let (net, bx, _) = certified_two_bus();
        let x = scenario_in_box(bx, &u);
        let bus = net.pv_buses()[0];
        let d = Dispatch(vec![a * x.pv_avail()[bus], b * 0.5 * net.inv_cap[bus]]);
        let s = solve_power_flow(net, &x, &d).unwrap();
        let (p, q) = injections(net, &x, &d);
        let (pf, qf, v) = build_matrices(net).evaluate(
            &DVector::from_vec(p),
            &DVector::from_vec(q),
            &DVector::from_vec(s.l.clone()),
        );
        prop_assert!((pf[0] - s.p[0]).abs() <= 1e-12);
        prop_assert!((qf[0] - s.q[0]).abs() <= 1e-12);
        prop_assert!((v[0] - s.v[1]).abs() <= 1e-12);
    }

    #[test]
    fn penalty_weight_never_lowers_the_loss(
        seed in 0u64..1000, u in prop::collection::vec(0.0..1.0f64, 3), lo in 0.0..50.0f64, extra in 0.0..50.0f64,
    ) {
        let (net, bx, _) = certified_two_bus();
        let mat = build_matrices(net);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::init(&[net.scenario_dim(), 4, net.dispatch_dim()], &mut rng);
        let model = DispatchModel::new(net, mlp, Normalization::identity(net.scenario_dim())).unwrap();
        let x = scenario_in_box(bx, &u);
        let sample = Sample { id: 0, split: Split::Train, x, label: Dispatch::zeros(1), objective: 0.0 };
        let batch = [&sample];
        let w = |pi: f64| PenaltyWeights { pi_v: pi, pi_l: pi };
        let a = evaluate_loss(&model, net, &mat, &batch, w(lo), Execution::Sequential).unwrap();
        let b = evaluate_loss(&model, net, &mat, &batch, w(lo + extra), Execution::Sequential).unwrap();
        prop_assert!(b.loss >= a.loss);
        prop_assert!(a.penalty >= 0.0);
    }
}

#[test]
fn batch_projection_is_identical_across_execution_modes() {
    let (net, bx, rule) = certified_two_bus();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let items: Vec<(Scenario, Dispatch)> = (0..200)
        .map(|i| {
            let x = bx.sample(&mut rng);
            let f = Dispatch(vec![
                0.2 * (i % 7) as f64 / 6.0,
                -0.15 + 0.3 * (i % 5) as f64 / 4.0,
            ]);
            (x, f)
        })
        .collect();
    let cfg = BisectionConfig::default();
    let seq = batch_project(net, &items, rule, &cfg, Execution::Sequential).unwrap();
    let par = batch_project(net, &items, rule, &cfg, Execution::Parallel).unwrap();
    assert_eq!(seq.dispatches, par.dispatches);
    assert_eq!(seq.feasible_rate, 1.0);
}
