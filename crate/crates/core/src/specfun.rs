//! Airy functions of real argument and the oscillatory envelope/phase built from them.
//!
//! On |x| <= 12 values come from a table of Taylor nodes (spacing 1/4) generated once by
//! integrating w'' = x w from exact data at the origin and, for the recessive solution on the
//! positive axis, from the asymptotic value at x = 12. Beyond |x| = 12 the full asymptotic
//! series are summed to their smallest term. For x > 12 the values are returned scaled by
//! exp(+zeta) (Ai, Ai') and exp(-zeta) (Bi, Bi'), zeta = (2/3) x^{3/2}.

use crate::error::{Error, Result};
use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::OnceLock;

pub const AI0: f64 = 0.355_028_053_887_817_2;
pub const AIP0: f64 = -0.258_819_403_792_806_8;
pub const BI0: f64 = 0.614_926_627_446_000_7;
pub const BIP0: f64 = 0.448_288_357_353_826_4;

const TABLE_EDGE: f64 = 12.0;
const TABLE_STEP: f64 = 0.25;
const TABLE_NODES: usize = 97;
const CENTER: usize = 48;
const NCOEF: usize = 64;

/// Ai, Bi and their derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiryQuad {
    pub x: f64,
    pub ai: f64,
    pub bi: f64,
    pub aip: f64,
    pub bip: f64,
    /// Values carry exp(+zeta) on Ai, Ai' and exp(-zeta) on Bi, Bi'.
    pub scaled: bool,
}

impl AiryQuad {
    /// zeta = (2/3) x^{3/2} if scaled, else 0.
    pub fn scale_exponent(&self) -> f64 {
        if self.scaled {
            2.0 / 3.0 * self.x * self.x.sqrt()
        } else {
            0.0
        }
    }

    /// Unscaled (ai, bi, aip, bip); may underflow or overflow for large x.
    pub fn unscaled(&self) -> (f64, f64, f64, f64) {
        if !self.scaled {
            return (self.ai, self.bi, self.aip, self.bip);
        }
        let z = self.scale_exponent();
        let d = (-z).exp();
        let g = z.exp();
        (self.ai * d, self.bi * g, self.aip * d, self.bip * g)
    }

    /// ai*bip - aip*bi, which is invariant under the scaling.
    pub fn wronskian(&self) -> f64 {
        self.ai * self.bip - self.aip * self.bi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Negative,
    Positive,
}

fn series_coefficients() -> &'static ([f64; NCOEF], [f64; NCOEF]) {
    static C: OnceLock<([f64; NCOEF], [f64; NCOEF])> = OnceLock::new();
    C.get_or_init(|| {
        let mut u = [0.0; NCOEF];
        let mut v = [0.0; NCOEF];
        u[0] = 1.0;
        v[0] = 1.0;
        for k in 1..NCOEF {
            let kf = k as f64;
            u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
                / (216.0 * kf * (2.0 * kf - 1.0));
            v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
        }
        (u, v)
    })
}

/// Sum of sign(k) c_k z^{-k} over k = start, start+step, ..., stopped at the smallest term.
fn asym_sum(c: &[f64; NCOEF], z: f64, start: usize, step: usize, alternate: bool) -> f64 {
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    let mut k = start;
    let mut sign = 1.0;
    while k < NCOEF {
        let term = c[k] * z.powi(-(k as i32));
        if term.abs() > last {
            break;
        }
        sum += sign * term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
        last = term.abs();
        if alternate {
            sign = -sign;
        }
        k += step;
    }
    sum
}

fn asymptotic_negative(x: f64) -> AiryQuad {
    let (u, v) = series_coefficients();
    let a = -x;
    let z = 2.0 / 3.0 * a * a.sqrt();
    let p = asym_sum(u, z, 0, 2, true);
    let q = asym_sum(u, z, 1, 2, true);
    let r = asym_sum(v, z, 0, 2, true);
    let s = asym_sum(v, z, 1, 2, true);
    let (sn, cs) = (z + FRAC_PI_4).sin_cos();
    let a14 = a.powf(0.25);
    let f = 1.0 / (PI.sqrt() * a14);
    let g = a14 / PI.sqrt();
    AiryQuad {
        x,
        ai: f * (sn * p - cs * q),
        bi: f * (cs * p + sn * q),
        aip: -g * (cs * r + sn * s),
        bip: g * (sn * r - cs * s),
        scaled: false,
    }
}

fn asymptotic_positive_scaled(x: f64) -> AiryQuad {
    let (u, v) = series_coefficients();
    let z = 2.0 / 3.0 * x * x.sqrt();
    let la = asym_sum(u, z, 0, 1, true);
    let lb = asym_sum(u, z, 0, 1, false);
    let ma = asym_sum(v, z, 0, 1, true);
    let mb = asym_sum(v, z, 0, 1, false);
    let x14 = x.powf(0.25);
    let sp = PI.sqrt();
    AiryQuad {
        x,
        ai: la / (2.0 * sp * x14),
        bi: lb / (sp * x14),
        aip: -x14 * ma / (2.0 * sp),
        bip: x14 * mb / sp,
        scaled: true,
    }
}

/// Advance (w, w') of w'' = x w from x0 to x0 + t by the Taylor series at x0.
fn taylor_step(x0: f64, w: f64, wp: f64, t: f64) -> (f64, f64) {
    let mut c = [0.0f64; 80];
    c[0] = w;
    c[1] = wp;
    c[2] = x0 * w / 2.0;
    let mut val = w + wp * t;
    let mut der = wp;
    let mut tp = t; // t^{n-1}
    let sv = w.abs().max((wp * t).abs()).max(1e-300);
    let sd = wp.abs().max((x0 * w * t).abs()).max(w.abs() * t * t).max(1e-300);
    let mut small = 0;
    for n in 2..80 {
        if n >= 3 {
            c[n] = (x0 * c[n - 2] + c[n - 3]) / (n as f64 * (n - 1) as f64);
        }
        let dterm = n as f64 * c[n] * tp;
        der += dterm;
        tp *= t;
        let term = c[n] * tp;
        val += term;
        if term.abs() <= 1e-19 * sv && dterm.abs() <= 1e-19 * sd {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
    }
    (val, der)
}

struct Table {
    ai: [f64; TABLE_NODES],
    aip: [f64; TABLE_NODES],
    bi: [f64; TABLE_NODES],
    bip: [f64; TABLE_NODES],
}

fn node_x(j: usize) -> f64 {
    -TABLE_EDGE + TABLE_STEP * j as f64
}

fn table() -> &'static Table {
    static T: OnceLock<Table> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = Table {
            ai: [0.0; TABLE_NODES],
            aip: [0.0; TABLE_NODES],
            bi: [0.0; TABLE_NODES],
            bip: [0.0; TABLE_NODES],
        };
        t.ai[CENTER] = AI0;
        t.aip[CENTER] = AIP0;
        t.bi[CENTER] = BI0;
        t.bip[CENTER] = BIP0;
        for j in (0..CENTER).rev() {
            let x0 = node_x(j + 1);
            let (a, ap) = taylor_step(x0, t.ai[j + 1], t.aip[j + 1], -TABLE_STEP);
            let (b, bp) = taylor_step(x0, t.bi[j + 1], t.bip[j + 1], -TABLE_STEP);
            t.ai[j] = a;
            t.aip[j] = ap;
            t.bi[j] = b;
            t.bip[j] = bp;
        }
        for j in CENTER + 1..TABLE_NODES {
            let x0 = node_x(j - 1);
            let (b, bp) = taylor_step(x0, t.bi[j - 1], t.bip[j - 1], TABLE_STEP);
            t.bi[j] = b;
            t.bip[j] = bp;
        }
        let edge = asymptotic_positive_scaled(TABLE_EDGE);
        let (a, _, ap, _) = edge.unscaled();
        t.ai[TABLE_NODES - 1] = a;
        t.aip[TABLE_NODES - 1] = ap;
        for j in (CENTER + 1..TABLE_NODES - 1).rev() {
            let x0 = node_x(j + 1);
            let (a, ap) = taylor_step(x0, t.ai[j + 1], t.aip[j + 1], -TABLE_STEP);
            t.ai[j] = a;
            t.aip[j] = ap;
        }
        t
    })
}

/// Ai, Bi, Ai', Bi' at x. Scaled for x > 12.
pub fn airy_eval(x: f64) -> Result<AiryQuad> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("airy_eval: non-finite argument {x}")));
    }
    if x < -TABLE_EDGE {
        return Ok(asymptotic_negative(x));
    }
    if x > TABLE_EDGE {
        return Ok(asymptotic_positive_scaled(x));
    }
    let t = table();
    let j = ((x + TABLE_EDGE) / TABLE_STEP).round() as usize;
    let j = j.min(TABLE_NODES - 1);
    let x0 = node_x(j);
    let dt = x - x0;
    if dt == 0.0 {
        return Ok(AiryQuad { x, ai: t.ai[j], bi: t.bi[j], aip: t.aip[j], bip: t.bip[j], scaled: false });
    }
    let (ai, aip) = taylor_step(x0, t.ai[j], t.aip[j], dt);
    let (bi, bip) = taylor_step(x0, t.bi[j], t.bip[j], dt);
    Ok(AiryQuad { x, ai, bi, aip, bip, scaled: false })
}

/// Leading-order large-argument forms (relative error O(|x|^{-3/2})).
pub fn airy_asymptotic(x: f64, side: Side) -> Result<AiryQuad> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("airy_asymptotic: non-finite argument {x}")));
    }
    if x.abs() < 3.0 {
        return Err(Error::Precondition(format!("airy_asymptotic needs |x| >= 3, got {x}")));
    }
    let sp = PI.sqrt();
    match side {
        Side::Negative => {
            if x > 0.0 {
                return Err(Error::Precondition(format!("negative-side expansion at x = {x}")));
            }
            let a = -x;
            let z = 2.0 / 3.0 * a * a.sqrt();
            let (sn, cs) = (z + FRAC_PI_4).sin_cos();
            let a14 = a.powf(0.25);
            Ok(AiryQuad {
                x,
                ai: sn / (sp * a14),
                bi: cs / (sp * a14),
                aip: -a14 * cs / sp,
                bip: a14 * sn / sp,
                scaled: false,
            })
        }
        Side::Positive => {
            if x < 0.0 {
                return Err(Error::Precondition(format!("positive-side expansion at x = {x}")));
            }
            let x14 = x.powf(0.25);
            let scaled = x > TABLE_EDGE;
            let z = 2.0 / 3.0 * x * x.sqrt();
            let (d, g) = if scaled { (1.0, 1.0) } else { ((-z).exp(), z.exp()) };
            Ok(AiryQuad {
                x,
                ai: d / (2.0 * sp * x14),
                bi: g / (sp * x14),
                aip: -d * x14 / (2.0 * sp),
                bip: g * x14 / sp,
                scaled,
            })
        }
    }
}

/// V(xi) = pi sqrt(xi) [Ai^2 + Bi^2](-xi) and the continuous phase of Ai(-xi) + i Bi(-xi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscEnvelope {
    pub xi: f64,
    pub v: f64,
    pub phase: f64,
}

/// Large-argument phase pi/4 - (2/3) xi^{3/2}.
pub fn phase_leading(xi: f64) -> f64 {
    FRAC_PI_4 - 2.0 / 3.0 * xi * xi.sqrt()
}

pub fn osc_envelope(xi: f64) -> Result<OscEnvelope> {
    if !(xi >= 0.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("osc_envelope needs finite xi >= 0, got {xi}")));
    }
    let q = airy_eval(-xi)?;
    let v = PI * xi.sqrt() * (q.ai * q.ai + q.bi * q.bi);
    Ok(OscEnvelope { xi, v, phase: unwrap_to(q.bi.atan2(q.ai), phase_leading(xi)) })
}

/// The branch of `p` (mod 2 pi) closest to `reference`.
pub fn unwrap_to(p: f64, reference: f64) -> f64 {
    let n = ((reference - p) / (2.0 * PI)).round();
    p + 2.0 * PI * n
}
