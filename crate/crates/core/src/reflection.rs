//! Reflection phase: the stretched-coordinate phase ODE, the amplitude system and a
//! second-order mode ODE used as an independent check.

use crate::error::{Error, Result};
use crate::geometry::{TurningPointFrame, XiTable};
use crate::noise::NoisePath;
use crate::propagator::{build_propagator, wave_decompose};
use crate::specfun::airy_eval;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest exponent kept when unscaling Bi on the evanescent side.
const EXP_CLAMP: f64 = 700.0;
/// Largest fast-phase advance allowed per step (rad).
const MAX_PHASE_STEP: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseForm {
    /// Full Airy factor and the quadratic g term, from the boundary point.
    Exact,
    /// Oscillatory leading-order form on the interval Airy argument > 3.
    Simplified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub form: PhaseForm,
    /// Quadratic fluctuation term (exact form only).
    pub include_g: bool,
    /// Adds eps Q''/Q to the forcing, i.e. the residual of the approximate propagator.
    pub wkb_correction: bool,
    /// Multiplies the default step eps^{2/3} / (20 J_max).
    pub step_scale: f64,
    /// Airy variable at the boundary point for the most shifted frequency.
    pub eta_b: f64,
    /// Explicit boundary point; overrides `eta_b`.
    pub z_b: Option<f64>,
    /// Explicit start in zeta; overrides the boundary point (exact form only).
    pub zeta_start: Option<f64>,
    /// Keep the full trace; otherwise only terminal values.
    pub record: bool,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            form: PhaseForm::Exact,
            include_g: true,
            wkb_correction: false,
            step_scale: 1.0,
            eta_b: -8.0,
            z_b: None,
            zeta_start: None,
            record: true,
        }
    }
}

impl PhaseOptions {
    pub fn simplified() -> Self {
        PhaseOptions { form: PhaseForm::Simplified, include_g: false, ..Default::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTrace {
    pub omega: f64,
    pub eps: f64,
    pub seed: u64,
    pub form: PhaseForm,
    pub w: f64,
    /// Step points (empty unless recorded).
    pub zeta: Vec<f64>,
    pub psi: Vec<f64>,
    pub terminal: f64,
    /// max |psi| over step points where the frequency's own Airy variable is <= -3.
    pub left_max: f64,
}

/// Quintic smoothstep switching the perturbation off over s in [-1, 0]. Returns (r, dr/ds).
pub fn ramp(s: f64) -> (f64, f64) {
    if s <= -1.0 {
        (1.0, 0.0)
    } else if s >= 0.0 {
        (0.0, 0.0)
    } else {
        let t = -s;
        let r = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let dr = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        (r, -dr)
    }
}

/// Effective (nu, nu') after the ramp, at s.
fn ramped_noise(path: &NoisePath, s: f64) -> Result<(f64, f64)> {
    let (r, dr) = ramp(s);
    if r == 0.0 && dr == 0.0 {
        return Ok((0.0, 0.0));
    }
    let (nu, nup) = path.eval(s)?;
    Ok((r * nu, dr * nu + r * nup))
}

fn g_term(mu2: f64, nu: f64, nup: f64) -> f64 {
    -0.75 * mu2 * nu * nu - PI * PI / 12.0 * nup * nup
}

/// [A cos(psi/2) + B sin(psi/2)]^2 times the forcing. Equals (A^2 + B^2) cos^2(psi/2 - arg(A + iB)).
#[inline]
pub fn exact_rate(forcing: f64, a: f64, b: f64, psi: f64) -> f64 {
    let (s, c) = (0.5 * psi).sin_cos();
    let v = a * c + b * s;
    forcing * v * v
}

#[inline]
fn simplified_rate(forcing: f64, cf: f64, sf: f64, psi: f64) -> f64 {
    let (s, c) = psi.sin_cos();
    forcing * (1.0 + s * cf + c * sf)
}

/// (Ai, Bi) at `x`, unscaled, with the Bi exponent clamped.
fn airy_pair(x: f64) -> Result<(f64, f64)> {
    let q = airy_eval(x)?;
    if q.scaled {
        let z = q.scale_exponent();
        Ok((q.ai * (-z).exp(), q.bi * z.min(EXP_CLAMP).exp()))
    } else {
        Ok((q.ai, q.bi))
    }
}

/// Precomputed deterministic part of the phase ODE for one (frame, eps, offsets).
/// Stage points are the RK4 nodes zeta_0 + k h / 2, k = 0..=2N.
#[derive(Debug, Clone)]
pub struct PhaseSolver {
    pub omega: f64,
    pub eps: f64,
    pub offsets: Vec<f64>,
    pub options: PhaseOptions,
    pub zeta_start: f64,
    pub zeta_s: f64,
    pub h: f64,
    pub n_steps: usize,
    pub table: XiTable,
    stage_zeta: Vec<f64>,
    s: Vec<f64>,
    mu2: Vec<f64>,
    /// 2 pi J^2 (exact) or J^2 mu^2 / (eps^{1/3} sqrt(zeta)) (simplified).
    coef: Vec<f64>,
    wkb: Vec<f64>,
    /// Per offset: (Ai, Bi) or (cos, sin) of the fast phase.
    fa: Vec<Vec<f64>>,
    fb: Vec<Vec<f64>>,
    max_exponent: f64,
    /// Per offset: number of step points whose own Airy variable is <= -3.
    left_steps: Vec<usize>,
}

/// Shifted Airy variable x_j = eps^{-1/3} zeta + eps^{-1/6} w K(eps^{1/3} zeta).
fn shifted(eps: f64, zeta: f64, w: f64, kcal: f64) -> f64 {
    eps.powf(-1.0 / 3.0) * zeta + eps.powf(-1.0 / 6.0) * w * kcal
}

impl PhaseSolver {
    pub fn new(frame: &TurningPointFrame, eps: f64, offsets: &[f64], options: &PhaseOptions) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
        }
        if offsets.is_empty() {
            return Err(Error::Config("at least one frequency offset is required".into()));
        }
        for (i, a) in offsets.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::Config(format!("offset {a} is not finite")));
            }
            if offsets[..i].contains(a) {
                return Err(Error::Config(format!("duplicate frequency offset {a}")));
            }
        }
        if !(options.step_scale > 0.0 && options.step_scale <= 1.0) {
            return Err(Error::Resolution(format!(
                "step scale {} must lie in (0, 1]; larger steps under-resolve the noise",
                options.step_scale
            )));
        }
        let e3 = eps.cbrt();
        let xi_s = frame.xi_of_z(0.0)?;
        let zeta_s = xi_s / e3;
        let xi_dom = frame.xi_of_z(frame.profile.z_min)?;
        let wmax = offsets.iter().cloned().fold(f64::MIN, f64::max);
        let wmin = offsets.iter().cloned().fold(f64::MAX, f64::min);
        let k_at = |xi: f64| -> Result<f64> { Ok(frame.z_map(xi)?.2) };

        let zeta_start = match options.form {
            PhaseForm::Exact => {
                if let Some(z0) = options.zeta_start {
                    z0
                } else if let Some(zb) = options.z_b {
                    frame.xi_of_z(zb)? / e3
                } else {
                    // deepest start needed by the most shifted frequency
                    let mut zeta = options.eta_b * e3;
                    for _ in 0..60 {
                        let xi = (zeta * e3).max(xi_dom);
                        let x = shifted(eps, zeta, wmax.max(0.0), k_at(xi)?);
                        if x <= options.eta_b + 1e-12 {
                            break;
                        }
                        zeta -= (x - options.eta_b) * e3;
                    }
                    zeta
                }
            }
            PhaseForm::Simplified => {
                let mut zeta = 3.0 * e3;
                for _ in 0..60 {
                    let x = shifted(eps, zeta, wmin.min(0.0), k_at(zeta * e3)?);
                    if x >= 3.0 - 1e-12 {
                        break;
                    }
                    zeta += (3.0 - x) * e3;
                }
                zeta
            }
        };
        if zeta_start * e3 < xi_dom {
            return Err(Error::Range(format!(
                "boundary point zeta = {zeta_start} lies outside the profile domain (xi >= {xi_dom})"
            )));
        }
        if !(zeta_start < zeta_s) {
            return Err(Error::Config(format!("start zeta = {zeta_start} is not left of the source {zeta_s}")));
        }
        let xi0 = zeta_start * e3;
        let table = XiTable::new(frame, xi0, xi_s, 5e-4)?;
        let j_max = table.j_max();
        let h_max = options.step_scale * eps.powf(2.0 / 3.0) / (20.0 * j_max);
        let n_steps = ((zeta_s - zeta_start) / h_max).ceil() as usize;
        let h = (zeta_s - zeta_start) / n_steps as f64;
        let m = 2 * n_steps + 1;

        let mut stage_zeta = Vec::with_capacity(m);
        let mut s = Vec::with_capacity(m);
        let mut mu2 = Vec::with_capacity(m);
        let mut coef = Vec::with_capacity(m);
        let mut wkb = Vec::with_capacity(if options.wkb_correction { m } else { 0 });
        let mut kc = Vec::with_capacity(m);
        for k in 0..m {
            let zeta = if k == m - 1 { zeta_s } else { zeta_start + k as f64 * 0.5 * h };
            let xi = (zeta * e3).clamp(xi0, xi_s);
            let (z, j, kk) = table.eval(xi)?;
            let m2 = frame.mu2(z);
            stage_zeta.push(zeta);
            s.push(z / eps);
            mu2.push(m2);
            kc.push(kk);
            coef.push(match options.form {
                PhaseForm::Exact => 2.0 * PI * j * j,
                PhaseForm::Simplified => j * j * m2 / (e3 * zeta.sqrt()),
            });
            if options.wkb_correction {
                wkb.push(eps * table.qpp_over_q(xi)?);
            }
        }
        let mut fa = Vec::with_capacity(offsets.len());
        let mut fb = Vec::with_capacity(offsets.len());
        let mut max_exponent: f64 = 0.0;
        let mut left_steps = Vec::with_capacity(offsets.len());
        for &w in offsets {
            let mut va = Vec::with_capacity(m);
            let mut vb = Vec::with_capacity(m);
            let mut prev = f64::NAN;
            let mut left = 0usize;
            for k in 0..m {
                let x = shifted(eps, stage_zeta[k], w, kc[k]);
                let fast = if x > 0.0 { 4.0 / 3.0 * x.powf(1.5) } else { 0.0 };
                if k % 2 == 0 {
                    if x <= -3.0 {
                        left = k / 2 + 1;
                    }
                    if prev.is_finite() && fast - prev > MAX_PHASE_STEP {
                        return Err(Error::Resolution(format!(
                            "fast phase advances {} rad in one step near zeta = {} (limit {MAX_PHASE_STEP})",
                            fast - prev,
                            stage_zeta[k]
                        )));
                    }
                    prev = fast;
                }
                match options.form {
                    PhaseForm::Exact => {
                        let (a, b) = airy_pair(-x)?;
                        if x < 0.0 {
                            max_exponent = max_exponent.max(2.0 / 3.0 * (-x).powf(1.5));
                        }
                        va.push(a);
                        vb.push(b);
                    }
                    PhaseForm::Simplified => {
                        let (sf, cf) = fast.sin_cos();
                        va.push(cf);
                        vb.push(sf);
                    }
                }
            }
            left_steps.push(left);
            fa.push(va);
            fb.push(vb);
        }
        Ok(PhaseSolver {
            omega: frame.omega,
            eps,
            offsets: offsets.to_vec(),
            options: options.clone(),
            zeta_start,
            zeta_s,
            h,
            n_steps,
            table,
            stage_zeta,
            s,
            mu2,
            coef,
            wkb,
            fa,
            fb,
            max_exponent,
            left_steps,
        })
    }

    /// Noise arguments s = Z/eps spanned by the stage points.
    pub fn s_range(&self) -> (f64, f64) {
        (self.s[0], *self.s.last().unwrap())
    }

    /// Boundary point in z.
    pub fn z_start(&self) -> f64 {
        self.s[0] * self.eps
    }

    /// Forcing at every stage point for one path.
    fn forcing(&self, path: &NoisePath) -> Result<Vec<f64>> {
        let sigma = path.sigma_eps;
        let rs = sigma / self.eps.sqrt();
        let mut out = Vec::with_capacity(self.s.len());
        for k in 0..self.s.len() {
            let (nu, nup) = if sigma == 0.0 { (0.0, 0.0) } else { ramped_noise(path, self.s[k])? };
            let mut f = match self.options.form {
                PhaseForm::Exact => {
                    let mut f = rs * self.mu2[k] * nu;
                    if self.options.include_g {
                        f += sigma * sigma * g_term(self.mu2[k], nu, nup);
                    }
                    if self.options.wkb_correction {
                        f += self.wkb[k];
                    }
                    f
                }
                PhaseForm::Simplified => {
                    let mut f = sigma * nu;
                    if self.options.wkb_correction {
                        f += self.wkb[k] / self.mu2[k];
                    }
                    f
                }
            };
            f *= self.coef[k];
            if !f.is_finite() {
                return Err(Error::Numerical(format!("non-finite forcing at zeta = {}", self.stage_zeta[k])));
            }
            out.push(f);
        }
        Ok(out)
    }

    /// Integrates every offset against one path (sigma taken from the path).
    pub fn run(&self, path: &NoisePath) -> Result<Vec<PhaseTrace>> {
        let f = self.forcing(path)?;
        let mut out = Vec::with_capacity(self.offsets.len());
        for (j, &w) in self.offsets.iter().enumerate() {
            let (a, b) = (&self.fa[j], &self.fb[j]);
            let rate = |k: usize, psi: f64| match self.options.form {
                PhaseForm::Exact => exact_rate(f[k], a[k], b[k], psi),
                PhaseForm::Simplified => simplified_rate(f[k], a[k], b[k], psi),
            };
            let h = self.h;
            let mut psi = 0.0;
            let mut left_max: f64 = 0.0;
            let (mut zs, mut ps) = if self.options.record {
                (Vec::with_capacity(self.n_steps + 1), Vec::with_capacity(self.n_steps + 1))
            } else {
                (Vec::new(), Vec::new())
            };
            if self.options.record {
                zs.push(self.stage_zeta[0]);
                ps.push(0.0);
            }
            for n in 0..self.n_steps {
                let k = 2 * n;
                let k1 = rate(k, psi);
                let k2 = rate(k + 1, psi + 0.5 * h * k1);
                let k3 = rate(k + 1, psi + 0.5 * h * k2);
                let k4 = rate(k + 2, psi + h * k3);
                psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if !psi.is_finite() {
                    return Err(Error::Numerical(format!("phase not finite at zeta = {}", self.stage_zeta[k + 2])));
                }
                if n + 1 < self.left_steps[j] {
                    left_max = left_max.max(psi.abs());
                }
                if self.options.record {
                    zs.push(self.stage_zeta[k + 2]);
                    ps.push(psi);
                }
            }
            out.push(PhaseTrace {
                omega: self.omega,
                eps: self.eps,
                seed: path.seed,
                form: self.options.form,
                w,
                zeta: zs,
                psi: ps,
                terminal: psi,
                left_max,
            });
        }
        Ok(out)
    }

    /// Right-hand side evaluated from scratch (no stage tables) for offset w.
    pub fn rhs(&self, frame: &TurningPointFrame, zeta: f64, psi: f64, nu: f64, nup: f64, sigma: f64, w: f64) -> Result<f64> {
        phase_rhs(frame, &self.table, self.eps, self.options.form, zeta, psi, nu, nup, sigma, w, self.options.include_g)
    }

    /// Amplitude route on the same stage points (exact form only).
    pub fn run_amplitudes(&self, path: &NoisePath) -> Result<Vec<AmplitudeTrace>> {
        if self.options.form != PhaseForm::Exact {
            return Err(Error::Config("the amplitude route needs the exact form".into()));
        }
        if self.max_exponent > 300.0 {
            return Err(Error::Range(format!(
                "Airy exponent {} at the boundary is too large for the amplitude route; use a shallower z_b",
                self.max_exponent
            )));
        }
        let f = self.forcing(path)?;
        let mut out = Vec::with_capacity(self.offsets.len());
        for (j, &w) in self.offsets.iter().enumerate() {
            let (a, b) = (&self.fa[j], &self.fb[j]);
            // N = (F/2) [[AB, iA^2], [iB^2, -AB]], F = 2 pi J^2 f
            let gen = |k: usize| -> [Complex64; 3] {
                let c = 0.5 * f[k];
                [
                    Complex64::new(c * a[k] * b[k], 0.0),
                    Complex64::new(0.0, c * a[k] * a[k]),
                    Complex64::new(0.0, c * b[k] * b[k]),
                ]
            };
            let mut p = Complex64::new(0.0, 0.0);
            let mut sv = Complex64::new(1.0, 0.0);
            let mut psi = 0.0;
            let mut max_flux: f64 = 0.0;
            let mut trace = Vec::new();
            let h = self.h;
            for n in 0..self.n_steps {
                let k = 2 * n;
                let (n0, nm, n1) = (gen(k), gen(k + 1), gen(k + 2));
                // fourth-order Magnus: h/6 (N0 + 4 Nm + N1) + h^2/12 [N1, N0]
                let mut om = [Complex64::new(0.0, 0.0); 3];
                for i in 0..3 {
                    om[i] = h / 6.0 * (n0[i] + 4.0 * nm[i] + n1[i]);
                }
                let c = commutator(n1, n0);
                for i in 0..3 {
                    om[i] += h * h / 12.0 * c[i];
                }
                let (e11, e12, e21, e22) = expm_traceless(om);
                let pn = e11 * p + e12 * sv;
                let sn = e21 * p + e22 * sv;
                p = pn;
                sv = sn;
                let flux = 4.0 * (p * sv.conj()).re;
                max_flux = max_flux.max(flux.abs());
                let ratio = (sv + p) / (sv - p);
                psi = unwrap_near(ratio.arg(), psi);
                if self.options.record {
                    trace.push(AmplitudePoint { zeta: self.stage_zeta[k + 2], p, s: sv, flux, psi });
                }
            }
            if max_flux > 1e-8 {
                return Err(Error::Numerical(format!("flux drift {max_flux:e} exceeds 1e-8 (offset {w})")));
            }
            let a_end = -(sv + p);
            let b_end = sv - p;
            out.push(AmplitudeTrace { w, trace, psi, max_flux, modulus: a_end.norm() / b_end.norm() });
        }
        Ok(out)
    }
}

/// Single evaluation of the phase ODE right-hand side.
#[allow(clippy::too_many_arguments)]
pub fn phase_rhs(
    frame: &TurningPointFrame,
    table: &XiTable,
    eps: f64,
    form: PhaseForm,
    zeta: f64,
    psi: f64,
    nu: f64,
    nup: f64,
    sigma: f64,
    w: f64,
    include_g: bool,
) -> Result<f64> {
    let e3 = eps.cbrt();
    let (z, j, kk) = table.eval(zeta * e3)?;
    let mu2 = frame.mu2(z);
    let x = shifted(eps, zeta, w, kk);
    let r = match form {
        PhaseForm::Exact => {
            let mut f = sigma / eps.sqrt() * mu2 * nu;
            if include_g {
                f += sigma * sigma * g_term(mu2, nu, nup);
            }
            let (a, b) = airy_pair(-x)?;
            exact_rate(2.0 * PI * j * j * f, a, b, psi)
        }
        PhaseForm::Simplified => {
            if zeta <= 0.0 || x <= 0.0 {
                return Err(Error::Domain(format!("simplified form needs zeta > 0 and x > 0, got zeta = {zeta}")));
            }
            let fast = 4.0 / 3.0 * x.powf(1.5);
            let f = sigma * j * j * mu2 * nu / (e3 * zeta.sqrt());
            f * (1.0 + (psi + fast).sin())
        }
    };
    if !r.is_finite() {
        return Err(Error::Numerical(format!("non-finite phase rate at zeta = {zeta}, psi = {psi}")));
    }
    Ok(r)
}

fn commutator(x: [Complex64; 3], y: [Complex64; 3]) -> [Complex64; 3] {
    // traceless 2x2 stored as (m11, m12, m21), m22 = -m11
    let [a, b, c] = x;
    let [d, e, f] = y;
    [b * f - c * e, 2.0 * (a * e - b * d), 2.0 * (c * d - a * f)]
}

fn expm_traceless(m: [Complex64; 3]) -> (Complex64, Complex64, Complex64, Complex64) {
    let [a, b, c] = m;
    let l2 = a * a + b * c;
    let (ch, sh) = if l2.norm() < 1e-6 {
        (1.0 + l2 / 2.0 + l2 * l2 / 24.0, 1.0 + l2 / 6.0 + l2 * l2 / 120.0)
    } else {
        let l = l2.sqrt();
        (l.cosh(), l.sinh() / l)
    };
    (ch + sh * a, sh * b, sh * c, ch - sh * a)
}

fn unwrap_near(p: f64, reference: f64) -> f64 {
    let two_pi = 2.0 * PI;
    p + two_pi * ((reference - p) / two_pi).round()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AmplitudePoint {
    pub zeta: f64,
    #[serde(skip)]
    pub p: Complex64,
    #[serde(skip)]
    pub s: Complex64,
    /// |a|^2 - |b|^2 with |b| = 1 at the boundary.
    pub flux: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeTrace {
    pub w: f64,
    pub trace: Vec<AmplitudePoint>,
    pub psi: f64,
    pub max_flux: f64,
    /// |a/b| at the source.
    pub modulus: f64,
}

/// Convenience: single frequency.
pub fn integrate_phase(frame: &TurningPointFrame, eps: f64, path: &NoisePath, options: &PhaseOptions) -> Result<PhaseTrace> {
    let solver = PhaseSolver::new(frame, eps, &[0.0], options)?;
    Ok(solver.run(path)?.remove(0))
}

pub fn integrate_phase_multi(
    frame: &TurningPointFrame,
    offsets: &[f64],
    eps: f64,
    path: &NoisePath,
    options: &PhaseOptions,
) -> Result<Vec<PhaseTrace>> {
    PhaseSolver::new(frame, eps, offsets, options)?.run(path)
}

pub fn integrate_amplitudes(frame: &TurningPointFrame, eps: f64, path: &NoisePath, options: &PhaseOptions) -> Result<AmplitudeTrace> {
    let solver = PhaseSolver::new(frame, eps, &[0.0], options)?;
    Ok(solver.run_amplitudes(path)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Steps per unit eps in z.
    pub steps_per_eps: f64,
    pub include_g: bool,
    /// Keep the eps Q''/Q residual in the forcing; when false the ODE solved is exactly the one
    /// the phase equation describes.
    pub wkb_correction: bool,
    pub eta_b: f64,
    pub z_b: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { steps_per_eps: 128.0, include_g: true, wkb_correction: false, eta_b: -8.0, z_b: None }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleResult {
    #[serde(skip)]
    pub a: Complex64,
    #[serde(skip)]
    pub b: Complex64,
    pub psi: f64,
    pub modulus: f64,
    pub z_b: f64,
}

/// Second-order mode ODE u'' + [q/eps^2 + f/eps - Q''/Q] u = 0 from the decaying Airy solution
/// at z_b to z = 0, then decomposed into (a, b).
pub fn mode_ode_oracle(frame: &TurningPointFrame, eps: f64, path: &NoisePath, opts: &OracleOptions) -> Result<OracleResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    let e3 = eps.cbrt();
    let z_b = match opts.z_b {
        Some(z) => z,
        None => frame.z_of_xi(opts.eta_b * e3 * e3)?,
    };
    if !(z_b < frame.z_t && z_b >= frame.profile.z_min) {
        return Err(Error::Config(format!("z_b = {z_b} must lie left of the turning point inside the domain")));
    }
    let (eta, q0) = frame.airy_variables(z_b, eps)?;
    let ai = airy_eval(-eta)?;
    if ai.scaled && ai.scale_exponent() > 690.0 {
        return Err(Error::Config(format!(
            "decaying solution underflows at z_b = {z_b} (eta = {eta}); choose a shallower z_b"
        )));
    }
    let (a0, _, ap0, _) = ai.unscaled();
    let (_, dq0, _) = frame.q_derivs(z_b)?;
    let mut u = q0 * a0;
    let mut du = dq0 * a0 - eps.powf(-2.0 / 3.0) / q0 * ap0;

    // Q''/Q on a uniform z grid; it enters only when the residual is removed
    let nq = 2001usize;
    let dzq = -z_b / (nq - 1) as f64;
    let qq: Vec<f64> = if opts.wkb_correction {
        Vec::new()
    } else {
        (0..nq)
            .map(|i| {
                let z = if i == nq - 1 { 0.0 } else { z_b + i as f64 * dzq };
                frame.q_derivs(z).map(|(q, _, d2)| d2 / q)
            })
            .collect::<Result<_>>()?
    };
    let qq_at = |z: f64| -> f64 {
        let t = ((z - z_b) / dzq).clamp(0.0, (nq - 1) as f64);
        let i = (t.floor() as usize).max(1).min(nq - 3);
        let x = t - (i - 1) as f64;
        let (a, b, c, d) = (qq[i - 1], qq[i], qq[i + 1], qq[i + 2]);
        -a * (x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0 + b * x * (x - 2.0) * (x - 3.0) / 2.0
            - c * x * (x - 1.0) * (x - 3.0) / 2.0
            + d * x * (x - 1.0) * (x - 2.0) / 6.0
    };
    let sigma = path.sigma_eps;
    let kappa = |z: f64| -> Result<f64> {
        let mut k = frame.q(z) / (eps * eps);
        if sigma != 0.0 {
            let (nu, nup) = ramped_noise(path, z / eps)?;
            let mu2 = frame.mu2(z);
            let mut f = sigma / eps.sqrt() * mu2 * nu;
            if opts.include_g {
                f += sigma * sigma * g_term(mu2, nu, nup);
            }
            k += f / eps;
        }
        if !opts.wkb_correction {
            k -= qq_at(z);
        }
        Ok(k)
    };
    let n = ((-z_b) * opts.steps_per_eps / eps).ceil() as usize;
    let h = -z_b / n as f64;
    let mut k0 = kappa(z_b)?;
    for i in 0..n {
        let z = z_b + i as f64 * h;
        let zm = z + 0.5 * h;
        let z1 = if i == n - 1 { 0.0 } else { z + h };
        let km = kappa(zm)?;
        let k1 = kappa(z1)?;
        let (a1, b1) = (du, -k0 * u);
        let (a2, b2) = (du + 0.5 * h * b1, -km * (u + 0.5 * h * a1));
        let (a3, b3) = (du + 0.5 * h * b2, -km * (u + 0.5 * h * a2));
        let (a4, b4) = (du + h * b3, -k1 * (u + h * a3));
        u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        du += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        k0 = k1;
    }
    if !(u.is_finite() && du.is_finite()) {
        return Err(Error::Numerical("mode ODE solution not finite".into()));
    }
    let p0 = build_propagator(frame, 0.0, eps)?;
    let (a, b) = wave_decompose(&p0, Complex64::new(u, 0.0), Complex64::new(du, 0.0))?;
    if b.norm() == 0.0 {
        return Err(Error::Numerical("degenerate decomposition: b = 0".into()));
    }
    let lead = Complex64::i() * Complex64::from_polar(1.0, 2.0 * frame.phi0 / eps);
    let psi = (a / (lead * b)).arg();
    Ok(OracleResult { a, b, psi, modulus: a.norm() / b.norm(), z_b })
}
