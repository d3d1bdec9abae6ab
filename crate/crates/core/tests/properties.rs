use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use turnwave::config::RunConfig;
use turnwave::geometry::{turning_point, TurningPointFrame, WaveguideProfile};
use turnwave::noise::{calibrate_sigma, generate_path, NoiseModel};
use turnwave::propagator::build_propagator;
use turnwave::pulse::{limit_envelope, synthesize_envelope, PulseSpec};
use turnwave::reflection::{PhaseOptions, PhaseSolver};
use turnwave::specfun::airy_eval;
use turnwave::verify::wrap_angle;

fn frame() -> TurningPointFrame {
    TurningPointFrame::new(&WaveguideProfile::default_linear(), 1.0).unwrap()
}

fn path_for(solver: &PhaseSolver, seed: u64, sigma: f64) -> turnwave::noise::NoisePath {
    let (lo, hi) = solver.s_range();
    let mut p = generate_path(&NoiseModel::default(), lo - 1.0, hi + 1.0, 0.05, seed).unwrap();
    p.sigma_eps = sigma;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wronskian_is_one_over_pi(x in -20.0f64..20.0) {
        let (ai, bi, aip, bip) = airy_eval(x).unwrap().unscaled();
        prop_assert!((ai * bip - aip * bi - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn determinant_is_two_anywhere(t in 0.0f64..1.0, le in -3.0f64..-2.0) {
        let f = frame();
        let eps = 10f64.powf(le);
        let zb = f.z_of_xi(-8.0 * eps.powf(2.0 / 3.0)).unwrap();
        let z = zb * (1.0 - t);
        let det = build_propagator(&f, z, eps).unwrap().det().unwrap();
        prop_assert!((det - 2.0).abs() < 1e-8, "z={} det={}", z, det);
    }

    #[test]
    fn turning_point_moves_left_with_frequency(w in 0.75f64..1.2, dw in 0.001f64..0.13) {
        let p = WaveguideProfile::default_linear();
        let a = turning_point(&p, w).unwrap();
        let b = turning_point(&p, w + dw).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn wrapped_angles_stay_congruent(x in -100.0f64..100.0) {
        let y = wrap_angle(x);
        prop_assert!((-PI..PI).contains(&y));
        let k = (x - y) / (2.0 * PI);
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn config_echo_round_trips(eps in 1e-6f64..0.5, n in 100usize..100_000, seed in any::<u64>(),
                               offs in prop::collection::vec(-3.0f64..3.0, 1..6), g in any::<bool>()) {
        let c = RunConfig { eps, n, seed_base: seed, offsets: Some(offs), include_g: g, ..Default::default() };
        prop_assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn constant_phase_factors_out(c in -10.0f64..10.0, beta in -3.0f64..3.0, b in 0.5f64..2.0) {
        let spec = PulseSpec::new(1.0, b, 0.0);
        let w = spec.phase_nodes(64);
        let t = spec.default_t_grid();
        let e0 = synthesize_envelope(&spec, 0.0, beta, &w, &vec![0.0; 64], &t).unwrap();
        let e1 = synthesize_envelope(&spec, 0.0, beta, &w, &vec![c; 64], &t).unwrap();
        let rot = Complex64::from_polar(1.0, c);
        for (x, y) in e0.values.iter().zip(&e1.values) {
            prop_assert!((x * rot - y).norm() < 1e-13);
        }
        let l0 = limit_envelope(&spec, 1.0, beta, 0.0, 0.0, &t);
        let l1 = limit_envelope(&spec, 1.0, beta, 0.0, c, &t);
        for (x, y) in l0.values.iter().zip(&l1.values) {
            prop_assert!((x.norm() - y.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn envelopes_obey_sup_and_lipschitz_bounds(psi in prop::collection::vec(-20.0f64..20.0, 64), beta in -3.0f64..3.0) {
        let spec = PulseSpec::new(1.0, 1.0, 0.0);
        let w = spec.phase_nodes(64);
        let t = spec.default_t_grid();
        let e = synthesize_envelope(&spec, 0.0, beta, &w, &psi, &t).unwrap();
        let (sup, lip) = spec.envelope_bounds();
        for (k, v) in e.values.iter().enumerate() {
            prop_assert!(v.norm() <= sup * (1.0 + 1e-9));
            if k > 0 {
                let dv = (v - e.values[k - 1]).norm();
                prop_assert!(dv <= lip * (t[k] - t[k - 1]) * (1.0 + 1e-9));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn phase_is_deterministic_and_flux_conserving(seed in any::<u64>()) {
        let f = frame();
        let eps = 1e-2;
        let sigma = calibrate_sigma(eps, 1.0, &f, &NoiseModel::default()).unwrap();
        let s = PhaseSolver::new(&f, eps, &[-0.5, 0.0, 0.5], &PhaseOptions::default()).unwrap();
        let a = s.run(&path_for(&s, seed, sigma)).unwrap();
        let b = s.run(&path_for(&s, seed, sigma)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.terminal.to_bits(), y.terminal.to_bits());
            prop_assert_eq!(&x.psi, &y.psi);
        }
        for tr in s.run_amplitudes(&path_for(&s, seed, sigma)).unwrap() {
            prop_assert!(tr.max_flux < 1e-8);
        }
    }
}

#[test]
fn step_halving_converges() {
    let f = frame();
    let eps = 1e-3;
    let sigma = calibrate_sigma(eps, 1.0, &f, &NoiseModel::default()).unwrap();
    let coarse = PhaseSolver::new(&f, eps, &[0.0], &PhaseOptions { record: false, ..Default::default() }).unwrap();
    let fine = PhaseSolver::new(&f, eps, &[0.0], &PhaseOptions { record: false, step_scale: 0.5, ..Default::default() }).unwrap();
    assert_eq!(coarse.s_range(), fine.s_range());
    for seed in 0..5 {
        let p = path_for(&coarse, seed, sigma);
        let a = coarse.run(&p).unwrap()[0].terminal;
        let b = fine.run(&p).unwrap()[0].terminal;
        assert!((a - b).abs() < 1e-4, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn second_order_drift_shrinks_like_sigma_squared() {
    let f = frame();
    let model = NoiseModel::default();
    let mut drift = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let sigma = calibrate_sigma(eps, 1.0, &f, &model).unwrap();
        let with = PhaseSolver::new(&f, eps, &[0.0], &PhaseOptions { record: false, ..Default::default() }).unwrap();
        let without =
            PhaseSolver::new(&f, eps, &[0.0], &PhaseOptions { record: false, include_g: false, ..Default::default() }).unwrap();
        let mut acc = 0.0;
        for seed in 0..8 {
            let p = path_for(&with, 500 + seed, sigma);
            acc += with.run(&p).unwrap()[0].terminal - without.run(&p).unwrap()[0].terminal;
        }
        drift.push((acc / 8.0, sigma * sigma));
    }
    for w in drift.windows(2) {
        assert!(w[1].0.abs() < w[0].0.abs(), "{drift:?}");
        // drift / sigma^2 stays of order one
        let r = (w[1].0 / w[1].1) / (w[0].0 / w[0].1);
        assert!(r > 0.5 && r < 2.0, "{drift:?}");
    }
}
