//! Residual suites: deterministic identities and seeded trace comparisons.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{eigenfunction_identities, TurningPointFrame, WaveguideProfile};
use crate::noise::{generate_path, NoiseModel};
use crate::propagator::{build_propagator, lemma1_residual, source_side_entries, evanescent_log_magnitudes};
use crate::reflection::{mode_ode_oracle, OracleOptions, PhaseOptions, PhaseSolver, PhaseTrace};
use crate::specfun::airy_eval;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when value < tol; NaN fails.
    pub fn below(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol, pass: value < tol }
    }
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// max |Ai Bi' - Ai' Bi - 1/pi| on n points of [-20, 20].
pub fn airy_wronskian(n: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = -20.0 + 40.0 * i as f64 / (n - 1) as f64;
        let q = airy_eval(x)?;
        let (ai, bi, aip, bip) = q.unscaled();
        worst = worst.max((ai * bip - aip * bi - 1.0 / PI).abs());
    }
    Ok(Check::below("airy wronskian", worst, 1e-12))
}

/// Boundary point where eta = eta_b.
pub fn boundary_z(frame: &TurningPointFrame, eps: f64, eta_b: f64) -> Result<f64> {
    frame.z_of_xi(eta_b * eps.powf(2.0 / 3.0))
}

/// det M = 2 and the analytic ODE residual on n points of [z_b, 0].
pub fn propagator_suite(frame: &TurningPointFrame, eps: f64, n: usize) -> Result<Vec<Check>> {
    let zb = boundary_z(frame, eps, -8.0)?;
    let (mut det, mut res): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        let z = zb - zb * i as f64 / (n - 1) as f64;
        det = det.max((build_propagator(frame, z, eps)?.det()? - 2.0).abs());
        res = res.max(lemma1_residual(frame, z, eps)?);
    }
    Ok(vec![
        Check::below(format!("det M - 2 (eps {eps:e})"), det, 1e-8),
        Check::below(format!("propagator residual (eps {eps:e})"), res, 1e-8),
    ])
}

/// Source-side entries to 5 eps on |z| <= 0.05 and evanescent log-magnitudes to 1% for eta <= -8.
pub fn regime_suite(frame: &TurningPointFrame, eps: f64) -> Result<Vec<Check>> {
    let mut near: f64 = 0.0;
    for i in 0..11 {
        let z = -0.05 + 0.005 * i as f64;
        let p = build_propagator(frame, z, eps)?;
        let (l11, l21) = source_side_entries(frame, z, eps)?;
        near = near.max((p.m11_full()? - l11).norm() / l11.norm());
        near = near.max((p.m21_full()? - l21).norm() / l21.norm());
    }
    let xi_dom = frame.xi_of_z(frame.profile.z_min)?;
    let e23 = eps.powf(2.0 / 3.0);
    let mut far: f64 = 0.0;
    for i in 0..12 {
        let eta = -8.0 - 4.0 * i as f64;
        if eta * e23 <= xi_dom {
            break;
        }
        let z = frame.z_of_xi(eta * e23)?;
        let p = build_propagator(frame, z, eps)?;
        let (l11, l21) = evanescent_log_magnitudes(frame, z, eps)?;
        far = far.max((p.log_abs_m11() - l11).abs() / l11.abs());
        far = far.max((p.log_abs_m21() - l21).abs() / l21.abs());
    }
    Ok(vec![
        Check::below(format!("source-side entries, rel err (eps {eps:e})"), near, 5.0 * eps),
        Check::below(format!("evanescent log-magnitudes, rel err (eps {eps:e})"), far, 0.01),
    ])
}

/// Transverse identities for modes 1..=5 at the given z values.
pub fn eigenfunction_suite(profile: &WaveguideProfile, zs: &[f64]) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for j in 1..=5 {
        for &z in zs {
            worst = worst.max(eigenfunction_identities(profile, j, z)?.max_residual());
        }
    }
    Ok(Check::below("eigenfunction identities", worst, 1e-10))
}

/// T and beta against Richardson-extrapolated differences of phi(0) in omega.
pub fn travel_dispersion_suite(frame: &TurningPointFrame) -> Result<Vec<Check>> {
    let td = frame.travel_and_dispersion()?;
    let w = frame.omega;
    let phi = |x: f64| -> Result<f64> { Ok(TurningPointFrame::new(&frame.profile, x)?.phi0) };
    let p0 = phi(w)?;
    let diffs = |h: f64| -> Result<(f64, f64)> {
        let (pm, pp) = (phi(w - h)?, phi(w + h)?);
        Ok(((pp - pm) / h, (pp - 2.0 * p0 + pm) / (h * h)))
    };
    let h = 0.01 * w;
    let (t1, b1) = diffs(h)?;
    let (t2, b2) = diffs(0.5 * h)?;
    let t_fd = (4.0 * t2 - t1) / 3.0;
    let b_fd = (4.0 * b2 - b1) / 3.0;
    Ok(vec![
        Check::below("travel time vs phase differences", (td.t - t_fd).abs() / t_fd.abs(), 1e-5),
        Check::below("dispersion vs phase differences", (td.beta - b_fd).abs() / b_fd.abs(), 1e-5),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub seed: u64,
    pub psi: f64,
    pub psi_amplitude: f64,
    pub psi_oracle: f64,
    pub max_flux: f64,
    pub oracle_modulus: f64,
    pub left_max: f64,
    pub zb_doubling: f64,
}

/// One seeded realization compared across the phase equation, the amplitude route, the
/// mode-ODE oracle and a run from a boundary twice as far from the turning point.
pub fn trace_row(frame: &TurningPointFrame, eps: f64, sigma: f64, model: &NoiseModel, seed: u64) -> Result<TraceRow> {
    Ok(trace_detail(frame, eps, sigma, model, seed, false)?.0)
}

/// `trace_row` plus the phase trace itself (recorded when `record` is set).
pub fn trace_detail(
    frame: &TurningPointFrame,
    eps: f64,
    sigma: f64,
    model: &NoiseModel,
    seed: u64,
    record: bool,
) -> Result<(TraceRow, PhaseTrace)> {
    let base = PhaseSolver::new(frame, eps, &[0.0], &PhaseOptions { record, ..Default::default() })?;
    let zb = base.z_start();
    let deep = PhaseSolver::new(
        frame,
        eps,
        &[0.0],
        &PhaseOptions { record: false, z_b: Some(frame.z_t - 2.0 * (frame.z_t - zb)), ..Default::default() },
    )?;
    let (lo, hi) = deep.s_range();
    let mut path = generate_path(model, lo - 1.0, hi + 1.0, 0.05, seed)?;
    path.sigma_eps = sigma;
    let tr = base.run(&path)?.remove(0);
    let am = base.run_amplitudes(&path)?.remove(0);
    let far = deep.run(&path)?.remove(0);
    let or = mode_ode_oracle(frame, eps, &path, &OracleOptions { z_b: Some(zb), ..Default::default() })?;
    let row = TraceRow {
        seed,
        psi: tr.terminal,
        psi_amplitude: am.psi,
        psi_oracle: or.psi,
        max_flux: am.max_flux,
        oracle_modulus: or.modulus,
        left_max: tr.left_max,
        zb_doubling: wrap_angle(far.terminal - tr.terminal).abs(),
    };
    Ok((row, tr))
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSuite {
    pub eps: f64,
    pub sigma: f64,
    pub rows: Vec<TraceRow>,
    pub checks: Vec<Check>,
}

pub fn trace_suite(frame: &TurningPointFrame, eps: f64, sigma: f64, model: &NoiseModel, seeds: &[u64]) -> Result<TraceSuite> {
    let rows: Vec<TraceRow> =
        seeds.par_iter().map(|&s| trace_row(frame, eps, sigma, model, s)).collect::<Result<Vec<_>>>()?;
    let max = |f: &dyn Fn(&TraceRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let checks = vec![
        Check::below("flux |a|^2 - |b|^2", max(&|r| r.max_flux), 1e-8),
        Check::below("oracle ||R| - 1|", max(&|r| (r.oracle_modulus - 1.0).abs()), 1e-5),
        Check::below("oracle vs phase equation (rad)", max(&|r| wrap_angle(r.psi_oracle - r.psi).abs()), 1e-3),
        Check::below("left-side phase", max(&|r| r.left_max), 1e-4),
        Check::below("boundary doubling (rad)", max(&|r| r.zb_doubling), 1e-6),
    ];
    Ok(TraceSuite { eps, sigma, rows, checks })
}
