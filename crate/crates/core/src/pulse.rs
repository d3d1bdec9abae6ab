//! Source pulse, Fourier synthesis of the reflected envelope and stabilization metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{eig_y, TurningPointFrame};
use crate::quad::gauss_legendre;
use crate::reflection::{PhaseOptions, PhaseSolver};
use crate::stats::{realization, EnsembleConfig};
use crate::{Error, Result};

/// Envelope transform, supported in [-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EnvelopeShape {
    /// cos^2(u/2).
    CosSquared,
    /// exp(-u^2 / (2 width^2)) truncated to [-pi, pi].
    TruncatedGaussian { width: f64 },
}

impl EnvelopeShape {
    pub fn fhat(&self, u: f64) -> f64 {
        if u.abs() > PI {
            return 0.0;
        }
        match *self {
            EnvelopeShape::CosSquared => {
                let c = (0.5 * u).cos();
                c * c
            }
            EnvelopeShape::TruncatedGaussian { width } => (-0.5 * u * u / (width * width)).exp(),
        }
    }

    /// Time-domain envelope F(s) = (1/2pi) int Fhat(u) e^{-ius} du, when a closed form exists.
    pub fn time_domain(&self, s: f64) -> Option<f64> {
        match self {
            EnvelopeShape::CosSquared => {
                let sinc = |x: f64| if x.abs() < 1e-12 { PI } else { (PI * x).sin() / x };
                Some((2.0 * sinc(s) + sinc(s - 1.0) + sinc(s + 1.0)) / (4.0 * PI))
            }
            EnvelopeShape::TruncatedGaussian { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseSpec {
    pub omega_o: f64,
    pub bandwidth: f64,
    pub r_star: f64,
    pub shape: EnvelopeShape,
}

impl PulseSpec {
    pub fn new(omega_o: f64, bandwidth: f64, r_star: f64) -> Self {
        PulseSpec { omega_o, bandwidth, r_star, shape: EnvelopeShape::CosSquared }
    }

    pub fn validate(&self, frame: &TurningPointFrame) -> Result<()> {
        if (self.omega_o - frame.omega).abs() > 1e-12 * frame.omega {
            return Err(Error::Config(format!(
                "pulse carrier {} differs from the frame frequency {}",
                self.omega_o, frame.omega
            )));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if let EnvelopeShape::TruncatedGaussian { width } = self.shape {
            if !(width > 0.0) {
                return Err(Error::Config(format!("gaussian width must be positive, got {width}")));
            }
        }
        let d0 = frame.profile.d(0.0);
        if !(self.r_star.abs() < 0.5 * d0) {
            return Err(Error::Config(format!("r_star = {} outside (-{}, {})", self.r_star, 0.5 * d0, 0.5 * d0)));
        }
        Ok(())
    }

    /// sup bound and Lipschitz bound of any synthesized envelope.
    pub fn envelope_bounds(&self) -> (f64, f64) {
        let (x, wt) = gauss_legendre(256);
        let (mut s0, mut s1) = (0.0, 0.0);
        // halves separately: |u| has a kink at 0
        for sign in [-1.0, 1.0] {
            for (xi, wi) in x.iter().zip(&wt) {
                let u = sign * 0.5 * PI * (xi + 1.0);
                let f = self.shape.fhat(u).abs();
                s0 += 0.5 * PI * wi * f;
                s1 += 0.5 * PI * wi * f * u.abs();
            }
        }
        (s0 / (2.0 * PI), self.bandwidth * s1 / (2.0 * PI))
    }

    /// 257 samples over [-4pi/B, 4pi/B].
    pub fn default_t_grid(&self) -> Vec<f64> {
        let t_max = 4.0 * PI / self.bandwidth;
        (0..257).map(|i| -t_max + 2.0 * t_max * i as f64 / 256.0).collect()
    }

    /// Frequency offsets w = B u at the n Gauss-Legendre nodes of [-pi, pi].
    pub fn phase_nodes(&self, n: usize) -> Vec<f64> {
        gauss_legendre(n).0.iter().map(|x| self.bandwidth * PI * x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceAmplitudes {
    pub c_f: f64,
}

impl SourceAmplitudes {
    /// Backward amplitude at 0^- for the physical frequency omega.
    pub fn b_minus(&self, spec: &PulseSpec, eps: f64, omega: f64) -> Complex64 {
        let s = eps.sqrt() * spec.bandwidth;
        let f = spec.shape.fhat((omega - spec.omega_o) / s) + spec.shape.fhat((-omega - spec.omega_o) / s);
        Complex64::new(0.0, self.c_f / s) * f
    }

    /// Forward amplitude to the right of the source.
    pub fn a_plus(a_minus: Complex64, b_minus: Complex64) -> Complex64 {
        a_minus - b_minus
    }
}

pub fn source_amplitudes(spec: &PulseSpec, frame: &TurningPointFrame) -> Result<SourceAmplitudes> {
    spec.validate(frame)?;
    let d0 = frame.profile.d(0.0);
    let y1 = eig_y(1, d0, spec.r_star);
    Ok(SourceAmplitudes { c_f: y1 / (4.0 * (frame.k * frame.k - frame.mu2(0.0)).powf(0.25)) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectedEnvelope {
    pub t: Vec<f64>,
    pub values: Vec<Complex64>,
    pub upsilon2: f64,
    pub beta: f64,
    pub travel_time: f64,
}

impl ReflectedEnvelope {
    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn peak(&self) -> (usize, f64) {
        argmax(&self.modulus())
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
}

fn interp_linear(nodes: &[f64], vals: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return vals[0];
    }
    if x >= nodes[n - 1] {
        return vals[n - 1];
    }
    let i = nodes.partition_point(|&v| v <= x) - 1;
    let t = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    vals[i] + t * (vals[i + 1] - vals[i])
}

fn quadrature_envelope(spec: &PulseSpec, beta: f64, t: &[f64], n: usize, phase: &dyn Fn(f64) -> f64) -> Vec<Complex64> {
    let (x, wt) = gauss_legendre(n);
    let b = spec.bandwidth;
    let terms: Vec<(f64, f64, f64)> = x
        .iter()
        .zip(&wt)
        .map(|(xi, wi)| {
            let u = PI * xi;
            let w = b * u;
            (w, PI * wi * spec.shape.fhat(u) / (2.0 * PI), w * w * beta + phase(w))
        })
        .collect();
    t.iter()
        .map(|&ti| terms.iter().map(|&(w, c, ph)| Complex64::from_polar(c, ph - w * ti)).sum())
        .collect()
}

fn linf(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Envelope from phases at the offsets `nodes` (ascending, in w), linearly interpolated.
pub fn synthesize_envelope(
    spec: &PulseSpec,
    travel_time: f64,
    beta: f64,
    nodes: &[f64],
    psi: &[f64],
    t: &[f64],
) -> Result<ReflectedEnvelope> {
    if nodes.len() != psi.len() {
        return Err(Error::Precondition(format!("{} nodes but {} phases", nodes.len(), psi.len())));
    }
    if nodes.len() < 64 {
        return Err(Error::Resolution(format!("{} phase nodes cannot resolve the envelope support (need 64)", nodes.len())));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("phase nodes must be strictly ascending".into()));
    }
    let phase = |w: f64| interp_linear(nodes, psi, w);
    let mut n = nodes.len().max(64);
    let mut prev = quadrature_envelope(spec, beta, t, n, &phase);
    while n < 8192 {
        n *= 2;
        let next = quadrature_envelope(spec, beta, t, n, &phase);
        let scale = next.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        let change = linf(&next, &prev) / scale;
        prev = next;
        if change < 0.01 {
            return Ok(ReflectedEnvelope { t: t.to_vec(), values: prev, upsilon2: f64::NAN, beta, travel_time });
        }
    }
    Err(Error::Resolution("envelope quadrature did not settle below 1% with 8192 nodes".into()))
}

/// Limit envelope exp(i psi_common - upsilon2/6) times the dispersed source envelope.
pub fn limit_envelope(spec: &PulseSpec, upsilon2: f64, beta: f64, travel_time: f64, psi_common: f64, t: &[f64]) -> ReflectedEnvelope {
    let fac = Complex64::from_polar((-upsilon2 / 6.0).exp(), psi_common);
    let n = 128 + (8.0 * spec.bandwidth * spec.bandwidth * beta.abs() * PI * PI) as usize;
    let vals = quadrature_envelope(spec, beta, t, n.min(4096), &|_| 0.0);
    ReflectedEnvelope { t: t.to_vec(), values: vals.into_iter().map(|v| v * fac).collect(), upsilon2, beta, travel_time }
}

/// Reflected pressure p_ref(T + sqrt(eps) t, rho, 0^-) on the envelope's time grid.
pub fn reflected_pressure(
    spec: &PulseSpec,
    frame: &TurningPointFrame,
    eps: f64,
    env: &ReflectedEnvelope,
    rho: f64,
) -> Result<Vec<(f64, f64)>> {
    spec.validate(frame)?;
    let d0 = frame.profile.d(0.0);
    if !(rho.abs() <= 0.5 * d0) {
        return Err(Error::Domain(format!("rho = {rho} outside [-{}, {}]", 0.5 * d0, 0.5 * d0)));
    }
    if env.t.len() > 1 {
        let dt = (env.t[1] - env.t[0]) * eps.sqrt();
        let period = 2.0 * PI * eps / spec.omega_o;
        if dt > period / 4.0 {
            return Err(Error::Resolution(format!(
                "time step {dt:e} undersamples the carrier period {period:e}; use pressure_t_grid"
            )));
        }
    }
    let amp = -eig_y(1, d0, rho) * eig_y(1, d0, spec.r_star) / (2.0 * (frame.k * frame.k - frame.mu2(0.0)).sqrt());
    let base = 2.0 * frame.phi0 - spec.omega_o * env.travel_time;
    Ok(env
        .t
        .iter()
        .zip(&env.values)
        .map(|(&t, v)| {
            let ph = (base - spec.omega_o * eps.sqrt() * t) / eps;
            (env.travel_time + eps.sqrt() * t, amp * (Complex64::from_polar(1.0, ph) * v).re)
        })
        .collect())
}

/// Uniform scaled-time grid over [t_lo, t_hi] with `per_period` samples per carrier period.
pub fn pressure_t_grid(spec: &PulseSpec, eps: f64, t_lo: f64, t_hi: f64, per_period: usize) -> Vec<f64> {
    let dt = 2.0 * PI * eps.sqrt() / (spec.omega_o * per_period as f64);
    let n = ((t_hi - t_lo) / dt).ceil() as usize;
    (0..=n).map(|i| t_lo + i as f64 * dt).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationMetrics {
    pub n: usize,
    pub upsilon2: f64,
    pub peak_index: usize,
    pub t_peak: f64,
    pub dispersed_peak: f64,
    pub peak_rel_std: f64,
    pub median_peak: f64,
    pub median_peak_target: f64,
    pub median_peak_rel_err: f64,
    pub median_linf_rel: f64,
    pub circular_variance: f64,
    pub phase_variance: f64,
    pub phase_variance_target: f64,
    pub phase_variance_rel_err: f64,
    pub mean_peak: f64,
    pub mean_peak_target: f64,
    pub mean_peak_rel_err: f64,
    pub bound_violations: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reduces an ensemble of envelopes against the dispersed (undamped) envelope.
pub fn stabilization_metrics(
    spec: &PulseSpec,
    envs: &[ReflectedEnvelope],
    dispersed: &ReflectedEnvelope,
    upsilon2: f64,
) -> Result<StabilizationMetrics> {
    let n = envs.len();
    if n < 2 {
        return Err(Error::Precondition(format!("need at least two envelopes, got {n}")));
    }
    let nt = dispersed.t.len();
    if envs.iter().any(|e| e.values.len() != nt) {
        return Err(Error::Precondition("envelopes must share the dispersed envelope's time grid".into()));
    }
    let (_, d_peak) = dispersed.peak();
    let mods: Vec<Vec<f64>> = envs.iter().map(|e| e.modulus()).collect();
    let med_env: Vec<f64> = (0..nt).map(|k| median(mods.iter().map(|m| m[k]).collect())).collect();
    let (ip, _) = argmax(&med_env);

    let at_peak: Vec<f64> = mods.iter().map(|m| m[ip]).collect();
    let mean = at_peak.iter().sum::<f64>() / n as f64;
    let var = at_peak.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let damp = (-upsilon2 / 6.0).exp();
    let median_peak = median(mods.iter().map(|m| argmax(m).1).collect());
    let d_mod = dispersed.modulus();
    let median_linf = (0..nt).map(|k| (med_env[k] - damp * d_mod[k]).abs()).fold(0.0, f64::max) / (damp * d_peak);

    let unit: Complex64 = envs.iter().map(|e| e.values[ip] / e.values[ip].norm().max(1e-300)).sum::<Complex64>() / n as f64;
    let rbar = unit.norm();
    let phase_var = -2.0 * rbar.max(1e-300).ln();
    let phase_target = 2.0 * upsilon2 / 3.0;

    let mean_env: Vec<f64> =
        (0..nt).map(|k| (envs.iter().map(|e| e.values[k]).sum::<Complex64>() / n as f64).norm()).collect();
    let mean_peak = argmax(&mean_env).1;
    let mean_target = (-upsilon2 / 2.0).exp() * d_peak;

    let (sup, lip) = spec.envelope_bounds();
    let bound_violations = envs
        .iter()
        .filter(|e| {
            let over = e.values.iter().any(|v| v.norm() > sup * (1.0 + 1e-9));
            let steep = e.t.windows(2).zip(e.values.windows(2)).any(|(t, v)| (v[1] - v[0]).norm() > lip * (t[1] - t[0]) * (1.0 + 1e-9));
            over || steep
        })
        .count();

    Ok(StabilizationMetrics {
        n,
        upsilon2,
        peak_index: ip,
        t_peak: dispersed.t[ip],
        dispersed_peak: d_peak,
        peak_rel_std: var.sqrt() / mean,
        median_peak,
        median_peak_target: damp * d_peak,
        median_peak_rel_err: (median_peak / (damp * d_peak) - 1.0).abs(),
        median_linf_rel: median_linf,
        circular_variance: 1.0 - rbar,
        phase_variance: phase_var,
        phase_variance_target: phase_target,
        phase_variance_rel_err: if phase_target > 0.0 { (phase_var / phase_target - 1.0).abs() } else { phase_var },
        mean_peak,
        mean_peak_target: mean_target,
        mean_peak_rel_err: (mean_peak / mean_target - 1.0).abs(),
        bound_violations,
    })
}

/// Phase solver over the pulse band with its boundary pinned by the band edges,
/// so that every node count sees the same noise path for a given seed.
pub fn pulse_solver(frame: &TurningPointFrame, spec: &PulseSpec, eps: f64, nodes: usize, options: &PhaseOptions) -> Result<(Vec<f64>, PhaseSolver)> {
    spec.validate(frame)?;
    let edge = spec.bandwidth * PI;
    let probe = PhaseSolver::new(frame, eps, &[-edge, 0.0, edge], &PhaseOptions { record: false, ..options.clone() })?;
    let opts = PhaseOptions { record: false, zeta_start: Some(probe.zeta_start), ..options.clone() };
    let offsets = spec.phase_nodes(nodes);
    let solver = PhaseSolver::new(frame, eps, &offsets, &opts)?;
    Ok((offsets, solver))
}

/// Sup-norm change of the envelope for `seed` between consecutive phase-node counts,
/// relative to the peak of the finer envelope.
pub fn node_refinement(
    frame: &TurningPointFrame,
    spec: &PulseSpec,
    cfg: &EnsembleConfig,
    seed: u64,
    counts: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let td = frame.travel_and_dispersion()?;
    let t = spec.default_t_grid();
    let env_for = |n: usize| -> Result<ReflectedEnvelope> {
        let (w, solver) = pulse_solver(frame, spec, cfg.eps, n, &cfg.options)?;
        let (psi, _) = realization(&solver, cfg, seed)?;
        synthesize_envelope(spec, td.t, td.beta, &w, &psi, &t)
    };
    let mut out = Vec::new();
    let mut prev: Option<ReflectedEnvelope> = None;
    for &n in counts {
        let cur = env_for(n)?;
        if let Some(p) = &prev {
            out.push((n, linf(&cur.values, &p.values) / cur.peak().1));
        }
        prev = Some(cur);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PulseRun {
    pub seeds: Vec<u64>,
    pub envelopes: Vec<ReflectedEnvelope>,
    pub failures: Vec<(u64, String)>,
}

/// One envelope per seed; per-seed failures are collected and the run aborts above 1%.
pub fn run_pulse_ensemble(
    frame: &TurningPointFrame,
    spec: &PulseSpec,
    cfg: &EnsembleConfig,
    nodes: usize,
    n: usize,
    seed_base: u64,
) -> Result<PulseRun> {
    let td = frame.travel_and_dispersion()?;
    let t = spec.default_t_grid();
    let (w, solver) = pulse_solver(frame, spec, cfg.eps, nodes, &cfg.options)?;
    let ups = crate::stats::upsilon2(frame, cfg.eps, cfg.sigma, &cfg.model);
    let results: Vec<(u64, Result<ReflectedEnvelope>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base.wrapping_add(i);
            let r = realization(&solver, cfg, seed).and_then(|(psi, _)| synthesize_envelope(spec, td.t, td.beta, &w, &psi, &t));
            (seed, r.map(|mut e| {
                e.upsilon2 = ups;
                e
            }))
        })
        .collect();
    let mut run = PulseRun { seeds: Vec::new(), envelopes: Vec::new(), failures: Vec::new() };
    for (seed, r) in results {
        match r {
            Ok(e) => {
                run.seeds.push(seed);
                run.envelopes.push(e);
            }
            Err(e) => run.failures.push((seed, e.to_string())),
        }
    }
    if run.failures.len() * 100 > n {
        return Err(Error::Numerical(format!(
            "{} of {n} pulse realizations failed; first: {}",
            run.failures.len(),
            run.failures[0].1
        )));
    }
    Ok(run)
}
