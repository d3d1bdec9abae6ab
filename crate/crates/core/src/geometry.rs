//! Width profiles, the turning point and the deterministic WKB phase machinery.

use crate::error::{Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Width law D(z) on the scaled arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WidthLaw {
    /// D(z) = sum_k c_k z^k (the linear profile is `[a, b]`).
    Polynomial { coeffs: Vec<f64> },
    /// D(z) = mid + amp * tanh((z - center) / scale).
    SmoothTanh { mid: f64, amp: f64, center: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveguideProfile {
    pub law: WidthLaw,
    pub z_min: f64,
    pub z_max: f64,
}

impl WaveguideProfile {
    pub fn linear(a: f64, b: f64, z_min: f64) -> Self {
        WaveguideProfile { law: WidthLaw::Polynomial { coeffs: vec![a, b] }, z_min, z_max: 0.0 }
    }

    /// D(z) = pi (1.5 + 0.5 z) on [-2.8, 0].
    pub fn default_linear() -> Self {
        Self::linear(1.5 * PI, 0.5 * PI, -2.8)
    }

    pub fn smooth_tanh(mid: f64, amp: f64, center: f64, scale: f64, z_min: f64) -> Self {
        WaveguideProfile { law: WidthLaw::SmoothTanh { mid, amp, center, scale }, z_min, z_max: 0.0 }
    }

    /// D and its first three derivatives.
    pub fn eval(&self, z: f64) -> [f64; 4] {
        match &self.law {
            WidthLaw::Polynomial { coeffs } => {
                let mut out = [0.0; 4];
                for (order, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in (order..coeffs.len()).rev() {
                        let mut f = 1.0;
                        for m in 0..order {
                            f *= (k - m) as f64;
                        }
                        acc = acc * z + f * coeffs[k];
                    }
                    *o = acc;
                }
                out
            }
            WidthLaw::SmoothTanh { mid, amp, center, scale } => {
                let t = ((z - center) / scale).tanh();
                let s = 1.0 - t * t;
                [
                    mid + amp * t,
                    amp * s / scale,
                    -2.0 * amp * t * s / (scale * scale),
                    amp * s * (6.0 * t * t - 2.0) / (scale * scale * scale),
                ]
            }
        }
    }

    pub fn d(&self, z: f64) -> f64 {
        self.eval(z)[0]
    }

    pub fn dd(&self, z: f64) -> f64 {
        self.eval(z)[1]
    }

    /// D(z) - D(z0) without cancellation.
    pub fn width_increment(&self, z: f64, z0: f64) -> f64 {
        self.width_offset(z0, z - z0)
    }

    /// D(z0 + dz) - D(z0), exact in the small offset `dz`.
    pub fn width_offset(&self, z0: f64, dz: f64) -> f64 {
        match &self.law {
            WidthLaw::Polynomial { coeffs } => {
                let z = z0 + dz;
                let mut total = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(1) {
                    let mut s = 0.0;
                    for j in 0..k {
                        s += z.powi(j as i32) * z0.powi((k - 1 - j) as i32);
                    }
                    total += c * s;
                }
                total * dz
            }
            WidthLaw::SmoothTanh { amp, center, scale, .. } => {
                let u = (z0 + dz - center) / scale;
                let u0 = (z0 - center) / scale;
                amp * (dz / scale).sinh() / (u.cosh() * u0.cosh())
            }
        }
    }

    /// Checks positivity and monotonicity on a sampling of the domain.
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min < self.z_max) {
            return Err(Error::Config(format!("profile domain [{}, {}] is empty", self.z_min, self.z_max)));
        }
        let n = 2000;
        for i in 0..=n {
            let z = self.z_min + (self.z_max - self.z_min) * i as f64 / n as f64;
            let [d, dd, d2, d3] = self.eval(z);
            if !(d > 0.0) {
                return Err(Error::Config(format!("width D({z}) = {d} is not positive")));
            }
            if !(dd > 0.0) {
                return Err(Error::Config(format!("width is not increasing at z = {z} (D' = {dd})")));
            }
            if !(d2.is_finite() && d3.is_finite()) {
                return Err(Error::Config(format!("profile derivatives not finite at z = {z}")));
            }
        }
        Ok(())
    }

    /// mu^2 = pi^2 / D^2 and its first three z-derivatives.
    pub fn mu2_derivs(&self, z: f64) -> [f64; 4] {
        let [d, d1, d2, d3] = self.eval(z);
        let p2 = PI * PI;
        [
            p2 / (d * d),
            -2.0 * p2 * d1 / d.powi(3),
            -2.0 * p2 * (d2 / d.powi(3) - 3.0 * d1 * d1 / d.powi(4)),
            -2.0 * p2 * (d3 / d.powi(3) - 9.0 * d1 * d2 / d.powi(4) + 12.0 * d1.powi(3) / d.powi(5)),
        ]
    }
}

/// Location of the turning point D(z_T) = pi / k.
pub fn turning_point(profile: &WaveguideProfile, omega: f64) -> Result<f64> {
    let k = omega;
    if !(k > 0.0) {
        return Err(Error::Config(format!("frequency must be positive, got {omega}")));
    }
    let d0 = profile.d(profile.z_max);
    if !(k > PI / d0) {
        return Err(Error::Config(format!(
            "no propagating mode at the source: need k > pi/D(0) = {}, got k = {k}",
            PI / d0
        )));
    }
    if !(k < 2.0 * PI / d0) {
        return Err(Error::Config(format!(
            "second mode propagates at the source: need k < 2 pi/D(0) = {}, got k = {k}",
            2.0 * PI / d0
        )));
    }
    let target = PI / k;
    let dmin = profile.d(profile.z_min);
    if !(target > dmin) {
        return Err(Error::Config(format!(
            "turning point outside the domain: need pi/k = {target} > D(z_min) = {dmin}"
        )));
    }
    let (mut lo, mut hi) = (profile.z_min, profile.z_max);
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let [d, dd, _, _] = profile.eval(z);
        let f = d - target;
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let mut zn = z - f / dd;
        if !(zn > lo && zn < hi) {
            zn = 0.5 * (lo + hi);
        }
        let step = (zn - z).abs();
        z = zn;
        if step < 1e-15 * (1.0 + z.abs()) {
            break;
        }
    }
    let mu = PI / profile.d(z);
    if (mu - k).abs() > 1e-12 * k {
        return Err(Error::Numerical(format!("turning point root not converged: mu - k = {}", mu - k)));
    }
    Ok(z)
}

/// (gamma, theta, rho) = (-d mu^2, (1/2) d^2 mu^2, (1/6) d^3 mu^2) at z_T.
pub fn local_coefficients(profile: &WaveguideProfile, z_t: f64) -> Result<(f64, f64, f64)> {
    let dd = profile.dd(z_t);
    if !(dd > 0.0) {
        return Err(Error::Domain(format!("degenerate turning point: D'(z_T) = {dd}")));
    }
    let m = profile.mu2_derivs(z_t);
    Ok((-m[1], 0.5 * m[2], m[3] / 6.0))
}

/// Per-frequency bundle of turning-point quantities.
#[derive(Debug, Clone)]
pub struct TurningPointFrame {
    pub profile: WaveguideProfile,
    pub omega: f64,
    pub k: f64,
    pub z_t: f64,
    pub d_t: f64,
    pub gamma: f64,
    pub theta: f64,
    pub rho: f64,
    /// phi(0), the phase from the turning point to the source.
    pub phi0: f64,
}

/// (F, sign) with F = |xi| = |3 phi / 2|^{2/3}.
fn xi_from_phi(phi: f64) -> f64 {
    let f = (1.5 * phi.abs()).powf(2.0 / 3.0);
    if phi < 0.0 {
        -f
    } else {
        f
    }
}

const NEAR_TP: f64 = 1e-3;

impl TurningPointFrame {
    pub fn new(profile: &WaveguideProfile, omega: f64) -> Result<Self> {
        profile.validate()?;
        let z_t = turning_point(profile, omega)?;
        let (gamma, theta, rho) = local_coefficients(profile, z_t)?;
        let mut f = TurningPointFrame {
            profile: profile.clone(),
            omega,
            k: omega,
            z_t,
            d_t: PI / omega,
            gamma,
            theta,
            rho,
            phi0: 0.0,
        };
        f.phi0 = f.phi(profile.z_max)?;
        Ok(f)
    }

    fn check_domain(&self, z: f64) -> Result<()> {
        let p = &self.profile;
        let slack = 1e-12 * (1.0 + p.z_min.abs());
        if !(z >= p.z_min - slack && z <= p.z_max + slack) {
            return Err(Error::Range(format!("z = {z} outside the profile domain [{}, {}]", p.z_min, p.z_max)));
        }
        Ok(())
    }

    /// k^2 - mu^2(z), computed as k^2 (D - D_T)(D + D_T) / D^2.
    pub fn q(&self, z: f64) -> f64 {
        self.q_offset(z - self.z_t)
    }

    /// q(z_T + dz) without rounding the offset into z.
    pub fn q_offset(&self, dz: f64) -> f64 {
        let d = self.profile.d(self.z_t + dz);
        let dm = self.profile.width_offset(self.z_t, dz);
        self.k * self.k * dm * (d + self.d_t) / (d * d)
    }

    pub fn mu2(&self, z: f64) -> f64 {
        let d = self.profile.d(z);
        PI * PI / (d * d)
    }

    /// Signed phase integral from z_T to z.
    pub fn phi(&self, z: f64) -> Result<f64> {
        self.check_domain(z)?;
        let dz = z - self.z_t;
        if dz == 0.0 {
            return Ok(0.0);
        }
        let smax = dz.abs().sqrt();
        let v = if dz > 0.0 {
            quad::adaptive(|s| 2.0 * s * self.q_offset(s * s).max(0.0).sqrt(), 0.0, smax, 1e-300, 1e-14).0
        } else {
            -quad::adaptive(|s| 2.0 * s * (-self.q_offset(-s * s)).max(0.0).sqrt(), 0.0, smax, 1e-300, 1e-14).0
        };
        Ok(v)
    }

    /// Stretched Airy variable xi = sgn(phi) |3 phi / 2|^{2/3} (so eta = eps^{-2/3} xi).
    pub fn xi_of_z(&self, z: f64) -> Result<f64> {
        Ok(xi_from_phi(self.phi(z)?))
    }

    /// Q(z) given xi(z); the removable point z_T uses gamma^{-1/6}.
    fn q_amp(&self, z: f64, xi: f64) -> f64 {
        let a = self.q(z).abs();
        if xi == 0.0 || a == 0.0 {
            return self.gamma.powf(-1.0 / 6.0);
        }
        (xi.abs() / a).powf(0.25)
    }

    /// (eta, Q) at z.
    pub fn airy_variables(&self, z: f64, eps: f64) -> Result<(f64, f64)> {
        let xi = self.xi_of_z(z)?;
        Ok((xi * eps.powf(-2.0 / 3.0), self.q_amp(z, xi)))
    }

    /// (Q, Q', Q'') at z from logarithmic derivatives; near z_T, Q'' is interpolated
    /// through the closed-form turning-point value.
    pub fn q_derivs(&self, z: f64) -> Result<(f64, f64, f64)> {
        let dz = z - self.z_t;
        if dz.abs() < NEAR_TP {
            let g = self.gamma;
            let q0 = g.powf(-1.0 / 6.0);
            let q1 = self.theta / (5.0 * g.powf(7.0 / 6.0));
            let q2 = 3.0 * self.rho / (7.0 * g.powf(7.0 / 6.0)) + 9.0 * self.theta * self.theta / (35.0 * g.powf(13.0 / 6.0));
            if dz == 0.0 {
                return Ok((q0, q1, q2));
            }
            let (_, d1m, d2m) = self.q_derivs_direct(self.z_t - NEAR_TP)?;
            let (_, d1p, d2p) = self.q_derivs_direct(self.z_t + NEAR_TP)?;
            let t = dz / NEAR_TP;
            let quad3 = |m: f64, c: f64, p: f64| c + 0.5 * t * (p - m) + 0.5 * t * t * (p - 2.0 * c + m);
            let q = self.q_amp(z, self.xi_of_z(z)?);
            return Ok((q, quad3(d1m, q1, d1p), quad3(d2m, q2, d2p)));
        }
        self.q_derivs_direct(z)
    }

    fn q_derivs_direct(&self, z: f64) -> Result<(f64, f64, f64)> {
        let xi = self.xi_of_z(z)?;
        let f = xi.abs();
        let qv = self.q(z);
        let a = qv.abs();
        let sq = if qv >= 0.0 { 1.0 } else { -1.0 };
        let s = if z >= self.z_t { 1.0 } else { -1.0 };
        let m = self.profile.mu2_derivs(z);
        let a1 = -sq * m[1];
        let a2 = -sq * m[2];
        let f1 = s * a.sqrt() / f.sqrt();
        let f2 = s * (a1 / (2.0 * a.sqrt() * f.sqrt()) - a.sqrt() * f1 / (2.0 * f.powf(1.5)));
        let l1 = 0.25 * f1 / f - 0.25 * a1 / a;
        let l2 = 0.25 * (f2 / f - (f1 / f).powi(2)) - 0.25 * (a2 / a - (a1 / a).powi(2));
        let q = (f / a).powf(0.25);
        Ok((q, q * l1, q * (l2 + l1 * l1)))
    }

    /// Inverse map: Z(xi) with phi(Z) = (2/3) sgn(xi) |xi|^{3/2}, J = Q^2(Z) and the
    /// frequency-sensitivity function K(xi).
    pub fn z_map(&self, xi: f64) -> Result<(f64, f64, f64)> {
        let z = self.z_of_xi(xi)?;
        Ok((z, self.j_at(z, xi), self.kcal(z, xi)?))
    }

    pub fn z_of_xi(&self, xi: f64) -> Result<f64> {
        if xi == 0.0 {
            return Ok(self.z_t);
        }
        let p = &self.profile;
        let xi_lo = self.xi_of_z(p.z_min)?;
        let xi_hi = self.xi_of_z(p.z_max)?;
        if !(xi >= xi_lo && xi <= xi_hi) {
            return Err(Error::Range(format!("xi = {xi} maps outside the domain (xi range [{xi_lo}, {xi_hi}])")));
        }
        let (mut lo, mut hi) = (p.z_min, p.z_max);
        let mut z = (self.z_t + xi * self.gamma.powf(-1.0 / 3.0)).clamp(lo, hi);
        for _ in 0..200 {
            let x = self.xi_of_z(z)?;
            let r = x - xi;
            if r > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            if r == 0.0 {
                break;
            }
            let jq = self.j_at(z, x);
            let mut zn = z - r * jq;
            if !(zn > lo && zn < hi) {
                zn = 0.5 * (lo + hi);
            }
            let step = (zn - z).abs();
            z = zn;
            if step < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        Ok(z)
    }

    /// J = Q^2 given (z, xi(z)).
    pub fn j_at(&self, z: f64, xi: f64) -> f64 {
        let a = self.q(z).abs();
        if xi.abs() < 1e-14 || a == 0.0 {
            return self.gamma.powf(-1.0 / 3.0);
        }
        (xi.abs() / a).sqrt()
    }

    fn kcal(&self, z: f64, xi: f64) -> Result<f64> {
        let lim = 2.0 * self.k * self.k / (self.gamma.powf(2.0 / 3.0) * self.omega);
        if xi.abs() < 1e-14 {
            return Ok(lim);
        }
        let dz = z - self.z_t;
        let smax = dz.abs().sqrt();
        let integral = if dz > 0.0 {
            quad::adaptive(|s| 2.0 * s / self.q_offset(s * s).sqrt(), 0.0, smax, 1e-300, 1e-14).0
        } else {
            quad::adaptive(|s| 2.0 * s / (-self.q_offset(-s * s)).sqrt(), 0.0, smax, 1e-300, 1e-14).0
        };
        Ok(self.k * self.k / (self.omega * xi.abs().sqrt()) * integral)
    }

    /// Travel time T and dispersion coefficient beta, each with a refinement error estimate.
    pub fn travel_and_dispersion(&self) -> Result<TravelDispersion> {
        let k = self.k;
        let w = self.omega;
        let smax = (self.profile.z_max - self.z_t).sqrt();
        let [dt_, ddt, _, _] = self.profile.eval(self.z_t);
        let t_integrand = |s: f64| 2.0 * s / self.q_offset(s * s).sqrt();
        let b_integrand = |s: f64| {
            let z = self.z_t + s * s;
            let [d, dd, _, _] = self.profile.eval(z);
            let inc = self.profile.width_offset(self.z_t, s * s);
            // mu(z) [mu(z) mu'(z_T) - mu(z_T) mu'(z)] written through widths
            let num = PI * PI / (d * d * dt_ * dt_) * (dt_ * (dd - ddt) - ddt * inc) * PI / d;
            let qv = self.q_offset(s * s);
            if s == 0.0 {
                return 0.0;
            }
            2.0 * s * num / (k * qv * qv.sqrt())
        };
        let mut rows = Vec::new();
        for panels in [4usize, 8, 16] {
            let ti = quad::composite_gl(t_integrand, 0.0, smax, panels, 20);
            let bi = quad::composite_gl(b_integrand, 0.0, smax, panels, 20);
            rows.push((ti, bi));
        }
        let q0 = self.q(self.profile.z_max);
        let tpre = 2.0 * k * k / w;
        let bpre = 2.0 * k.powi(4) / (w * w * self.gamma);
        let ts: Vec<f64> = rows.iter().map(|r| tpre * r.0).collect();
        let bs: Vec<f64> = rows.iter().map(|r| bpre * (1.0 / q0.sqrt() + r.1)).collect();
        let t_err = (ts[2] - ts[1]).abs();
        let b_err = (bs[2] - bs[1]).abs();
        let t_prev = (ts[1] - ts[0]).abs();
        let b_prev = (bs[1] - bs[0]).abs();
        let tol = 1e-10;
        if (t_err > tol * ts[2].abs() && t_err >= t_prev) || (b_err > tol * bs[2].abs() && b_err >= b_prev) {
            return Err(Error::Quadrature(format!(
                "travel/dispersion refinement not shrinking: T diffs {t_prev:e} -> {t_err:e}, beta diffs {b_prev:e} -> {b_err:e}"
            )));
        }
        Ok(TravelDispersion { t: ts[2], beta: bs[2], t_err, beta_err: b_err })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TravelDispersion {
    pub t: f64,
    pub beta: f64,
    /// Change between the last two refinement levels.
    pub t_err: f64,
    pub beta_err: f64,
}

/// Tabulated Z(xi), J(xi), K(xi) and Q''/Q on a uniform xi grid.
///
/// Z and J use cubic Hermite interpolation with the exact slopes J and J' = 2 Q^3 Q';
/// K and Q''/Q use 4-point Lagrange.
#[derive(Debug, Clone)]
pub struct XiTable {
    pub xi0: f64,
    pub dxi: f64,
    z: Vec<f64>,
    j: Vec<f64>,
    dj: Vec<f64>,
    kc: Vec<f64>,
    qq: Vec<f64>,
}

impl XiTable {
    pub fn new(frame: &TurningPointFrame, xi_lo: f64, xi_hi: f64, max_step: f64) -> Result<Self> {
        if !(xi_hi > xi_lo) {
            return Err(Error::Precondition(format!("empty xi range [{xi_lo}, {xi_hi}]")));
        }
        let cells = ((xi_hi - xi_lo) / max_step).ceil().max(3.0) as usize;
        let dxi = (xi_hi - xi_lo) / cells as f64;
        let n = cells + 1;
        let (mut z, mut j, mut dj, mut kc, mut qq) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let xi = if i == cells { xi_hi } else { xi_lo + i as f64 * dxi };
            let (zz, jj, kk) = frame.z_map(xi)?;
            let (q, dq, d2q) = frame.q_derivs(zz)?;
            z.push(zz);
            j.push(jj);
            dj.push(2.0 * q * q * q * dq);
            kc.push(kk);
            qq.push(d2q / q);
        }
        Ok(XiTable { xi0: xi_lo, dxi, z, j, dj, kc, qq })
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi0, self.xi0 + (self.z.len() - 1) as f64 * self.dxi)
    }

    fn locate(&self, xi: f64) -> Result<(usize, f64)> {
        let n = self.z.len();
        let t = (xi - self.xi0) / self.dxi;
        if !(t >= -1e-9 && t <= (n - 1) as f64 + 1e-9) {
            let (a, b) = self.xi_range();
            return Err(Error::Range(format!("xi = {xi} outside the table [{a}, {b}]")));
        }
        let i = (t.floor().max(0.0) as usize).min(n - 2);
        Ok((i, t - i as f64))
    }

    fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, u: f64) -> f64 {
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1
    }

    fn lagrange(&self, v: &[f64], i: usize, u: f64) -> f64 {
        let n = v.len();
        let b = i.saturating_sub(1).min(n - 4);
        let x = (i - b) as f64 + u;
        let (a0, a1, a2, a3) = (v[b], v[b + 1], v[b + 2], v[b + 3]);
        -a0 * (x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0 + a1 * x * (x - 2.0) * (x - 3.0) / 2.0
            - a2 * x * (x - 1.0) * (x - 3.0) / 2.0
            + a3 * x * (x - 1.0) * (x - 2.0) / 6.0
    }

    /// (Z, J, K) at xi.
    pub fn eval(&self, xi: f64) -> Result<(f64, f64, f64)> {
        let (i, u) = self.locate(xi)?;
        let h = self.dxi;
        let z = Self::hermite(self.z[i], self.z[i + 1], self.j[i] * h, self.j[i + 1] * h, u);
        let j = Self::hermite(self.j[i], self.j[i + 1], self.dj[i] * h, self.dj[i + 1] * h, u);
        Ok((z, j, self.lagrange(&self.kc, i, u)))
    }

    /// Largest tabulated J.
    pub fn j_max(&self) -> f64 {
        self.j.iter().cloned().fold(0.0, f64::max)
    }

    /// K(xi) alone.
    pub fn kcal(&self, xi: f64) -> Result<f64> {
        let (i, u) = self.locate(xi)?;
        Ok(self.lagrange(&self.kc, i, u))
    }

    /// Q''/Q at xi.
    pub fn qpp_over_q(&self, xi: f64) -> Result<f64> {
        let (i, u) = self.locate(xi)?;
        Ok(self.lagrange(&self.qq, i, u))
    }
}

/// j-th transverse eigenfunction y_j(rho, z) = sqrt(2/D) sin((2 rho + D) mu_j / 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eigenfunction {
    pub j: usize,
}

impl Eigenfunction {
    pub fn mu_j(&self, profile: &WaveguideProfile, z: f64) -> f64 {
        PI * self.j as f64 / profile.d(z)
    }

    pub fn y(&self, profile: &WaveguideProfile, rho: f64, z: f64) -> f64 {
        eig_y(self.j, profile.d(z), rho)
    }

    pub fn dy_drho(&self, profile: &WaveguideProfile, rho: f64, z: f64) -> f64 {
        let d = profile.d(z);
        let mu = PI * self.j as f64 / d;
        (2.0 / d).sqrt() * mu * ((2.0 * rho + d) * mu / 2.0).cos()
    }

    pub fn dy_dz(&self, profile: &WaveguideProfile, rho: f64, z: f64) -> f64 {
        let [d, dd, _, _] = profile.eval(z);
        let pj = PI * self.j as f64;
        let arg = pj * rho / d + pj / 2.0;
        let c = (2.0 / d).sqrt();
        dd * (-0.5 * c / d * arg.sin() - c * arg.cos() * pj * rho / (d * d))
    }
}

pub fn eig_y(j: usize, d: f64, rho: f64) -> f64 {
    let mu = PI * j as f64 / d;
    (2.0 / d).sqrt() * ((2.0 * rho + d) * mu / 2.0).sin()
}

/// Residuals of the six transverse identities at (j, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub j: usize,
    pub z: f64,
    /// max over q <= 5 of |int y_j y_q - delta_jq|
    pub orthonormality: f64,
    pub odd_moment: f64,
    pub y_dy: f64,
    /// int (2 rho + D) y dy + 1
    pub weighted_y_dy: f64,
    pub y_dz: f64,
    /// int (2 rho + D)^2 y^2 - D^2 (4/3 - 2/(pi j)^2)
    pub weighted_square: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        [self.orthonormality, self.odd_moment, self.y_dy, self.weighted_y_dy, self.y_dz, self.weighted_square]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn eigenfunction_identities(profile: &WaveguideProfile, j: usize, z: f64) -> Result<IdentityReport> {
    if j == 0 {
        return Err(Error::Domain("mode index starts at 1".into()));
    }
    let d = profile.d(z);
    let e = Eigenfunction { j };
    let integrate = |f: &dyn Fn(f64) -> f64| quad::composite_gl(f, -d / 2.0, d / 2.0, 4, 32);
    let mut ortho = 0.0f64;
    for q in 1..=5usize.max(j) {
        let v = integrate(&|r| eig_y(j, d, r) * eig_y(q, d, r));
        let target = if q == j { 1.0 } else { 0.0 };
        ortho = ortho.max((v - target).abs());
    }
    let odd = integrate(&|r| r * eig_y(j, d, r).powi(2));
    let ydy = integrate(&|r| eig_y(j, d, r) * e.dy_drho(profile, r, z));
    let wydy = integrate(&|r| (2.0 * r + d) * eig_y(j, d, r) * e.dy_drho(profile, r, z)) + 1.0;
    let ydz = integrate(&|r| eig_y(j, d, r) * e.dy_dz(profile, r, z));
    let pj = PI * j as f64;
    let wsq = integrate(&|r| (2.0 * r + d).powi(2) * eig_y(j, d, r).powi(2)) - d * d * (4.0 / 3.0 - 2.0 / (pj * pj));
    Ok(IdentityReport {
        j,
        z,
        orthonormality: ortho,
        odd_moment: odd,
        y_dy: ydy,
        weighted_y_dy: wydy,
        y_dz: ydz,
        weighted_square: wsq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> TurningPointFrame {
        TurningPointFrame::new(&WaveguideProfile::default_linear(), 1.0).unwrap()
    }

    #[test]
    fn default_turning_point() {
        let f = frame();
        assert!((f.z_t + 1.0).abs() < 1e-14);
        assert!((f.gamma - 1.0).abs() < 1e-14);
        let z = turning_point(&WaveguideProfile::default_linear(), 1.05).unwrap();
        assert!((z - (PI / 1.05 - 1.5 * PI) / (0.5 * PI)).abs() < 1e-12);
    }

    #[test]
    fn band_violations_are_named() {
        let p = WaveguideProfile::default_linear();
        let e = turning_point(&p, 0.6).unwrap_err();
        assert!(format!("{e}").contains("no propagating mode"));
        let e = turning_point(&p, 1.4).unwrap_err();
        assert!(format!("{e}").contains("second mode"));
    }

    #[test]
    fn width_increment_matches_difference() {
        let p = WaveguideProfile::smooth_tanh(3.0, 1.5, -1.0, 0.7, -3.0);
        for (z, z0) in [(-0.3, -1.1), (-2.0, -0.5), (-1.0, -1.0 + 1e-9)] {
            let direct = p.d(z) - p.d(z0);
            assert!((p.width_increment(z, z0) - direct).abs() < 1e-13 * (1.0 + direct.abs()) + 1e-15);
        }
    }

    #[test]
    fn phase_is_continuous_across_turning_point() {
        let f = frame();
        let mut prev = f.phi(f.z_t - 1e-3).unwrap();
        for i in 1..=200 {
            let z = f.z_t - 1e-3 + 2e-3 * i as f64 / 200.0;
            let v = f.phi(z).unwrap();
            assert!(v >= prev);
            assert!((v - prev).abs() < 1e-5);
            prev = v;
        }
    }

    fn closed_phi(z: f64) -> f64 {
        let (k, b) = (1.0f64, 0.5 * PI);
        let d = PI * (1.5 + 0.5 * z);
        if z >= -1.0 {
            ((k * k * d * d - PI * PI).sqrt() - PI * (PI / (k * d)).acos()) / b
        } else {
            let r = (PI * PI - k * k * d * d).sqrt();
            (r - PI * ((PI + r) / (k * d)).ln()) / b
        }
    }

    #[test]
    fn phase_matches_linear_closed_form() {
        let f = frame();
        for z in [-2.8, -2.0, -1.3, -1.01, -0.99, -0.6, 0.0] {
            let v = f.phi(z).unwrap();
            let c = closed_phi(z);
            assert!((v - c).abs() < 1e-12 * (1.0 + c.abs()), "z={z}: {v} vs {c}");
        }
    }

    #[test]
    fn travel_and_dispersion_closed_form() {
        let f = frame();
        let td = f.travel_and_dispersion().unwrap();
        let (b, d0) = (0.5 * PI, 1.5 * PI);
        let t = 2.0 / b * (d0 * d0 - PI * PI).sqrt();
        let beta = PI * PI / (b * (d0 * d0 - PI * PI).sqrt());
        assert!((td.t - t).abs() < 1e-12 * t, "{} vs {t}", td.t);
        assert!((td.beta - beta).abs() < 1e-10 * beta, "{} vs {beta}", td.beta);
    }

    #[test]
    fn travel_and_dispersion_track_phase_derivatives() {
        let p = WaveguideProfile::smooth_tanh(3.2, 1.6, -1.2, 0.9, -3.0);
        let w = 0.8;
        let f = TurningPointFrame::new(&p, w).unwrap();
        let td = f.travel_and_dispersion().unwrap();
        let h = 1e-3;
        let phi_at = |w: f64| TurningPointFrame::new(&p, w).unwrap().phi0;
        let (pm, p0, pp) = (phi_at(w - h), phi_at(w), phi_at(w + h));
        let d1 = 2.0 * (pp - pm) / (2.0 * h);
        let d2 = (pp - 2.0 * p0 + pm) / (h * h);
        assert!((d1 - td.t).abs() < 1e-5 * td.t, "{d1} vs {}", td.t);
        assert!((d2 - td.beta).abs() < 1e-4 * td.beta.abs(), "{d2} vs {}", td.beta);
    }

    #[test]
    fn amplitude_derivatives_match_finite_differences() {
        let p = WaveguideProfile::smooth_tanh(3.2, 1.6, -1.2, 0.9, -3.0);
        let f = TurningPointFrame::new(&p, 0.8).unwrap();
        let h = 1e-4;
        for dz in [-1.0, -0.3, -0.01, -5e-4, 0.0, 3e-4, 0.02, 0.5] {
            let z = f.z_t + dz;
            let (q, q1, q2) = f.q_derivs(z).unwrap();
            let (qm, _, _) = f.q_derivs(z - h).unwrap();
            let (qp, _, _) = f.q_derivs(z + h).unwrap();
            assert!(((qp - qm) / (2.0 * h) - q1).abs() < 1e-7, "dz={dz}");
            assert!(((qp - 2.0 * q + qm) / (h * h) - q2).abs() < 1e-5, "dz={dz}");
        }
    }

    #[test]
    fn turning_point_amplitude_limits() {
        let p = WaveguideProfile::smooth_tanh(3.2, 1.6, -1.2, 0.9, -3.0);
        let f = TurningPointFrame::new(&p, 0.8).unwrap();
        let (q0, q1, _) = f.q_derivs(f.z_t).unwrap();
        assert!((q0 - f.gamma.powf(-1.0 / 6.0)).abs() < 1e-14);
        assert!((q1 - f.theta / (5.0 * f.gamma.powf(7.0 / 6.0))).abs() < 1e-14);
        let (_, qs) = f.airy_variables(f.z_t + 1e-7, 1e-4).unwrap();
        assert!((qs - q0).abs() < 1e-6);
    }

    #[test]
    fn z_map_inverts_phase() {
        let f = frame();
        let xi0 = f.xi_of_z(0.0).unwrap();
        for xi in [-2.0, -0.5, -1e-6, 0.0, 1e-9, 0.3, xi0 * 0.999] {
            let (z, j, _) = f.z_map(xi).unwrap();
            let target = 2.0 / 3.0 * xi.signum() * xi.abs().powf(1.5);
            assert!((f.phi(z).unwrap() - target).abs() < 1e-10, "xi={xi}");
            assert!(j > 0.0);
        }
        assert!(f.z_map(xi0 + 0.1).is_err());
    }

    #[test]
    fn kcal_limit_and_continuity() {
        let f = frame();
        let lim = 2.0 / f.gamma.powf(2.0 / 3.0);
        let (_, _, k0) = f.z_map(0.0).unwrap();
        assert!((k0 - lim).abs() < 1e-14);
        let (_, _, ks) = f.z_map(1e-6).unwrap();
        assert!((ks - lim).abs() < 1e-5, "{ks} vs {lim}");
    }

    #[test]
    fn xi_table_interpolates_direct_map() {
        let f = frame();
        let t = XiTable::new(&f, -0.3, 0.88, 1e-3).unwrap();
        for i in 0..97 {
            let xi = -0.3 + 1.18 * (i as f64 + 0.37) / 97.0;
            let (z, j, k) = t.eval(xi).unwrap();
            let (z0, j0, k0) = f.z_map(xi).unwrap();
            assert!((z - z0).abs() < 1e-13, "xi={xi} dz={}", z - z0);
            assert!((j - j0).abs() < 1e-10, "xi={xi} dj={}", j - j0);
            assert!((k - k0).abs() < 1e-9, "xi={xi} dk={}", k - k0);
        }
        assert!(t.eval(0.9).is_err());
    }

    #[test]
    fn transverse_identities() {
        let p = WaveguideProfile::default_linear();
        for j in 1..=5 {
            for z in [-2.5, -1.0, 0.0] {
                let r = eigenfunction_identities(&p, j, z).unwrap();
                assert!(r.max_residual() < 1e-12, "{r:?}");
            }
        }
    }
}
