use odeftc::analysis::{aggregate_error_decay, gain_bounds, kappa_sufficient};
use odeftc::centralized::{central_step, CentralizedFilterState, FilterInputs};
use odeftc::consensus::{local_informations, Discretization};
use odeftc::model::network_information;
use odeftc::odeftc::{Network, NodeInputs, NodeState};
use odeftc::simulator::{monte_carlo, realization_rng, run_realization, sqrt_psd, Initialization};
use odeftc::{Matrix, Scenario, Vector};
use rand::Rng;
use rand_distr::StandardNormal;

fn normals(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Replays the simulator's documented draw order with the step-level API
/// (`Network::step`, `central_step`) and compares trajectories.
#[test]
fn simulator_matches_step_api() {
    let s = Scenario::builtin("paper-ltv").unwrap();
    let mut config = s.sim_config().unwrap();
    config.t_end = 0.2;
    config.stride = 1;
    config.init = Initialization::Matched;
    let index = 3;
    let trace = run_realization(&s, &config, index).unwrap();

    let h = config.h;
    let n = s.plant.dim();
    let mut rng = realization_rng(config.seed, index as u64);
    let l0 = s.plant.p0.clone().cholesky().unwrap().unpack();
    let mut x = &s.plant.x0 + l0 * normals(&mut rng, n);
    let nodes: Vec<NodeState> =
        s.sensors.iter().map(|sn| NodeState::new(s.plant.x0.clone(), s.plant.p0.clone(), sn.output_dim())).collect();
    let z0 = local_informations(&s.sensors, 0.0).unwrap();
    let mut net = Network::new(s.graph.clone(), nodes, &z0, config.kappa, config.consensus, Discretization::Saturated).unwrap();
    let mut central = CentralizedFilterState::new(s.plant.x0.clone(), s.plant.p0.clone());
    let stacked_c = odeftc::model::stacked_c(&s.sensors, 0.0);

    let mut worst: f64 = 0.0;
    for k in 0..config.steps() {
        let t = k as f64 * h;
        let a = s.plant.a.eval(t);
        let w = s.plant.w.eval(t);
        let zeta = normals(&mut rng, n);
        let mut ys = Vec::new();
        for sensor in &s.sensors {
            let z = normals(&mut rng, sensor.output_dim());
            let l = sensor.r.eval(t).cholesky().unwrap().unpack();
            ys.push(sensor.c.eval(t) * &x + l * z / h.sqrt());
        }
        x = &x + &a * &x * h + sqrt_psd(&w).unwrap() * zeta * h.sqrt();

        let cs: Vec<Matrix> = s.sensors.iter().map(|sn| sn.c.eval(t)).collect();
        let r_invs: Vec<Matrix> = s.sensors.iter().map(|sn| sn.r_inverse(t).unwrap()).collect();
        let inputs: Vec<NodeInputs> =
            cs.iter().zip(&r_invs).map(|(c, r_inv)| NodeInputs { a: &a, w: &w, c, r_inv }).collect();
        let z_next = local_informations(&s.sensors, t + h).unwrap();
        net.step(&ys, &inputs, &z_next, h, k, t).unwrap();

        let y = Vector::from_iterator(stacked_c.nrows(), ys.iter().flat_map(|y| y.iter().copied()));
        let c = odeftc::model::stacked_c(&s.sensors, t);
        let r_inv = odeftc::linalg::block_diag(&r_invs);
        let info = network_information(&s.sensors, t).unwrap();
        central = central_step(&central, &FilterInputs { a: &a, w: &w, c: &c, r_inv: &r_inv, info: &info }, &y, h, k, t)
            .unwrap();

        let sample = k + 1;
        worst = worst.max((&trace.truth[sample] - &x).amax());
        worst = worst.max((&trace.central_estimate[sample] - &central.xhat).amax());
        for (i, node) in net.nodes().iter().enumerate() {
            worst = worst.max((&trace.node_estimates[sample][i] - &node.xhat).amax());
            worst = worst.max((&trace.p_nodes[sample][i] - &node.p).amax());
        }
    }
    assert!(worst < 1e-9, "max difference {worst:e}");
}

#[test]
fn central_mse_tracks_riccati_trace() {
    let s = Scenario::builtin("paper-lti").unwrap();
    let mut config = s.sim_config().unwrap();
    config.realizations = 200;
    config.t_end = 2.0;
    config.h = 1e-3;
    config.kappa = 0.0;
    let mc = monte_carlo(&s, &config).unwrap();
    for (s_idx, &k) in mc.sample_steps.iter().enumerate().skip(1) {
        let trace_p = mc.p_central[s_idx].trace();
        // MSE is a mean of M squared norms; its spread is bounded by sqrt(2 tr(P^2) / M)
        let p = &mc.p_central[s_idx];
        let se = (2.0 * (p * p).trace() / config.realizations as f64).sqrt();
        let mse = mc.mse_central[k];
        assert!((mse - trace_p).abs() < 3.0 * se + 0.05 * trace_p, "t = {}: mse {mse}, tr P {trace_p}", mc.time(k));
    }
}

#[test]
fn monte_carlo_is_deterministic() {
    let s = Scenario::builtin("paper-ltv").unwrap();
    let mut config = s.sim_config().unwrap();
    config.realizations = 6;
    config.t_end = 0.3;
    let a = monte_carlo(&s, &config).unwrap();
    let b = monte_carlo(&s, &config).unwrap();
    assert_eq!(a.mse_nodes, b.mse_nodes);
    assert_eq!(a.cov_gap, b.cov_gap);
    assert_eq!(a.aggregate_cov_final, b.aggregate_cov_final);
    for cov in a.empirical_cov_nodes.iter().flatten() {
        assert_eq!(cov, &cov.transpose());
        assert!(odeftc::linalg::lambda_min(cov) > -1e-12);
    }
    config.seed += 1;
    let c = monte_carlo(&s, &config).unwrap();
    assert_ne!(a.mse_nodes, c.mse_nodes);
}

#[test]
fn node_mse_stays_bounded_above_threshold_gain() {
    let s = Scenario::builtin("paper-ltv").unwrap();
    let mut config = s.sim_config().unwrap();
    config.realizations = 10;
    config.kappa = 200.0;
    config.init = Initialization::Random;
    let mc = monte_carlo(&s, &config).unwrap();
    let ceiling = 10.0 * mc.mse_central.iter().copied().fold(0.0, f64::max);
    let half = mc.mse_nodes.len() / 2;
    for row in &mc.mse_nodes[half..] {
        assert!(row.iter().all(|&v| v < ceiling));
    }
    assert!(mc.indefinite.iter().all(Option::is_none));
}

#[test]
fn strict_bound_dominates_and_invariant_bound_is_far_larger() {
    for name in ["paper-ltv", "paper-lti"] {
        let s = Scenario::builtin(name).unwrap();
        let report = gain_bounds(&s, None).unwrap();
        assert!(report.kappa0_strict >= report.kappa0_paper);
        // the shipped graph's connectivity is 2 - sqrt(3)
        assert!((report.lambda_g - (2.0 - 3f64.sqrt())).abs() < 1e-12);
    }
    let s = Scenario::builtin("paper-lti").unwrap();
    let report = gain_bounds(&s, Some(0.2679)).unwrap();
    let invariant = report.kappa_battilotti.unwrap();
    assert!(invariant.value / report.kappa0_paper > 100.0);
    assert!(gain_bounds(&Scenario::builtin("paper-ltv").unwrap(), None).unwrap().kappa_battilotti.is_none());
}

#[test]
fn aggregate_error_decays_above_threshold() {
    let s = Scenario::builtin("paper-ltv").unwrap();
    let report = gain_bounds(&s, None).unwrap();
    let kappa = 1.5 * report.kappa0_paper;
    let mut rng = realization_rng(5, 0);
    let e0 = Vector::from_fn(s.nodes() * s.plant.dim(), |_, _| rng.random_range(-1.0..1.0));
    let (start, end) = aggregate_error_decay(&s, kappa, &e0, 10.0, 1e-3).unwrap();
    assert!(end < start, "||e(0)|| = {start}, ||e(10)|| = {end}");
    assert!(kappa_sufficient(report.c, report.r1, report.lambda_g).unwrap() == report.kappa0_paper);
}
