use std::sync::{Arc, OnceLock};

use nalgebra::{dvector, DVector};
use rmc_core::analysis::{
    check_lemma1, closed_loop_residuals, en_channels, estimate_gammas, log_en_channels, sign_switch_mask,
    splitting_residuals, theta_bound_margin, ProofContext, ProofSignals,
};
use rmc_core::controller::{sgn, GainSet};
use rmc_core::plants::{scalar_toy_plant, two_link_as_plant};
use rmc_core::reference::{benchmark_reference, ReferenceTrajectory, Sinusoid};
use rmc_core::simulator::{run_scenario, Scenario, TrajectoryLog};

fn bench_gains() -> GainSet {
    GainSet::new(
        dvector![1.0, 5.0],
        124.0,
        dvector![50.0],
        dvector![5.0, 5.0],
        dvector![1.0, 1.0],
    )
    .unwrap()
}

fn bench_scenario() -> Scenario {
    Scenario {
        plant: Arc::new(two_link_as_plant()),
        reference: Arc::new(benchmark_reference()),
        gains: bench_gains(),
        initial_state: dvector![10f64.to_radians(), 10f64.to_radians(), 0.0, 0.0],
        horizon: 20.0,
        step: 1e-3,
        decimation: 1,
    }
}

fn bench() -> &'static (TrajectoryLog, Vec<ProofSignals>) {
    static CELL: OnceLock<(TrajectoryLog, Vec<ProofSignals>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = bench_scenario();
        let log = run_scenario(&sc).unwrap();
        let ctx = ProofContext::new(sc.plant.as_ref(), sc.reference.as_ref(), &sc.gains).unwrap();
        let sig = ctx.along(&log.samples).unwrap();
        (log, sig)
    })
}

fn toy_reference() -> Sinusoid {
    Sinusoid {
        amplitude: dvector![0.3],
        offset: dvector![0.2],
        omega: 1.0,
        phase: 0.3,
    }
}

/// Scalar toy run whose error keeps one sign over the whole horizon.
fn toy_scenario(step: f64) -> Scenario {
    Scenario {
        plant: Arc::new(scalar_toy_plant()),
        reference: Arc::new(toy_reference()),
        gains: GainSet::new(dvector![1.0], 1.0, dvector![], dvector![0.2], dvector![1.0]).unwrap(),
        initial_state: dvector![toy_reference().position(0.0)[0] - 0.6],
        horizon: 1.2,
        step,
        decimation: 1,
    }
}

#[test]
fn rk4_order_on_smooth_toy_run() {
    let steps = [0.04, 0.02, 0.01, 0.005];
    let fine = run_scenario(&toy_scenario(0.005 / 8.0)).unwrap();
    let channels = log_en_channels(&fine, &toy_scenario(1.0).gains.alpha);
    assert!(
        !sign_switch_mask(&channels, fine.dt, 2).iter().any(|b| *b),
        "scenario is meant to stay on one side of e_n = 0"
    );
    let end = fine.samples.last().unwrap();
    let errs: Vec<f64> = steps
        .iter()
        .map(|&h| {
            let log = run_scenario(&toy_scenario(h)).unwrap();
            let last = log.samples.last().unwrap();
            assert!((last.t - end.t).abs() < 1e-12);
            (&last.x - &end.x).amax() + (&last.pi - &end.pi).amax()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((12.0..24.0).contains(&ratio), "halving ratio {ratio}, errors {errs:?}");
    }
    let slope = (errs[0] / errs[3]).ln() / (steps[0] / steps[3]).ln();
    assert!(slope >= 3.5, "slope {slope}");
}

#[test]
fn benchmark_errors_satisfy_cascade_rates() {
    // e2 = e1' + e1 with e1' from central differences of the log
    let (log, _) = bench();
    let dt = log.dt;
    let mut worst = 0.0_f64;
    for w in log.samples.windows(3) {
        let e1_dot = (w[2].e1() - w[0].e1()) / (2.0 * dt);
        let gap = (&w[1].errors[1] - (e1_dot + w[1].e1())).amax();
        worst = worst.max(gap);
    }
    // e1''' is bounded by the plant and control rates; dt^2 / 6 scaling
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn pi_is_piecewise_linear_with_slope_c() {
    let (log, _) = bench();
    let gains = bench_gains();
    let channels = log_en_channels(log, &gains.alpha);
    let dt = log.dt;
    for (i, ch) in channels.iter().enumerate() {
        let mask = sign_switch_mask(std::slice::from_ref(ch), dt, 0);
        let mut checked = 0;
        for k in 0..log.samples.len() - 1 {
            let slope = (log.samples[k + 1].pi[i] - log.samples[k].pi[i]) / dt;
            // every step averages the stage signs with RK4 weights 1/6, 2/6, 2/6, 1/6
            let sixths = 6.0 * slope / gains.c[i];
            assert!(
                (sixths - sixths.round()).abs() < 1e-6 && sixths.abs() <= 6.0 + 1e-9,
                "channel {i}, t = {}: slope {slope}",
                log.samples[k].t
            );
            // away from the sliding surface all stages share the sample's sign
            if mask[k] || ch.0[k].abs().min(ch.0[k + 1].abs()) < 1e-4 {
                continue;
            }
            checked += 1;
            let expect = gains.c[i] * sgn(&DVector::from_element(1, ch.0[k]))[0];
            assert!(
                (slope - expect).abs() <= 1e-9 * gains.c[i],
                "channel {i}, t = {}: slope {slope}, expected {expect}",
                log.samples[k].t
            );
        }
        assert!(checked > 100, "channel {i}: only {checked} steps off the surface");
    }
}

#[test]
fn benchmark_splitting_and_bound_chain() {
    let (log, sig) = bench();
    let sc = bench_scenario();
    let gains = &sc.gains;
    let ctx = ProofContext::new(sc.plant.as_ref(), sc.reference.as_ref(), gains).unwrap();
    let bounds = ctx.estimate_bounds(sc.horizon, log.dt, 0.1).unwrap();
    for s in sig {
        let res = splitting_residuals(s, gains);
        assert!(
            res.gain_term <= 1e-12 && res.sign_term <= 1e-12 && res.theta_forms <= 1e-12,
            "{res:?}"
        );
        assert_eq!(res.last_entry, 0.0);
        assert!(theta_bound_margin(s, &gains.c, &bounds).min() >= 0.0);
        assert_eq!(s.omega[(1, 0)], 0.0);
        assert_eq!(s.omega[(0, 0)], 0.0);
    }
}

#[test]
fn tilde_terms_vanish_on_reference_states() {
    let sc = bench_scenario();
    let ctx = ProofContext::new(sc.plant.as_ref(), sc.reference.as_ref(), &sc.gains).unwrap();
    for k in 0..200 {
        let t = k as f64 * 0.1;
        let d = sc.reference.derivatives(t, 2);
        let x = dvector![d[0][0], d[0][1], d[1][0], d[1][1]];
        let s = ctx.at_state(t, &x, &d[2]).unwrap();
        assert!(s.n_tilde.iter().all(|v| *v == 0.0), "t = {t}");
        assert!(s.u_tilde().iter().all(|v| *v == 0.0), "t = {t}");
        assert_eq!(s.l, 0.0);
    }
}

#[test]
fn integral_bound_pair_exists_on_benchmark() {
    let (log, sig) = bench();
    let (g1, g2) = estimate_gammas(sig, log.dt)
        .unwrap()
        .expect("feasible pair on the grid");
    for (e, ed) in en_channels(sig) {
        assert!(check_lemma1(&e, &ed, log.dt, g1, g2).unwrap() >= 0.0);
    }
}

#[test]
fn closed_loop_residual_is_second_order_on_smooth_run() {
    let resid = |h: f64| {
        let sc = toy_scenario(h);
        let log = run_scenario(&sc).unwrap();
        let ctx = ProofContext::new(sc.plant.as_ref(), sc.reference.as_ref(), &sc.gains).unwrap();
        let sig = ctx.along(&log.samples).unwrap();
        closed_loop_residuals(&sig, &sc.gains, log.dt)
            .iter()
            .map(|r| r.residual)
            .fold(0.0, f64::max)
    };
    let (a, b) = (resid(0.01), resid(0.005));
    assert!(a < 1e-2, "{a}");
    assert!(a / b > 3.0, "{a} -> {b}");
}

#[test]
fn closed_loop_residual_small_away_from_switches_on_benchmark() {
    let (log, sig) = bench();
    let gains = bench_gains();
    let mask = sign_switch_mask(&en_channels(sig), log.dt, 2);
    let mut rel: Vec<f64> = closed_loop_residuals(sig, &gains, log.dt)
        .iter()
        .enumerate()
        .filter(|(k, _)| !mask[k + 1])
        .map(|(_, r)| r.residual / r.scale)
        .collect();
    assert!(rel.len() > 100);
    rel.sort_by(f64::total_cmp);
    let median = rel[rel.len() / 2];
    assert!(median < 1e-2, "median relative residual {median}");
}
