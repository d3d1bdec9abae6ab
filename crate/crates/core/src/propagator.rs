//! WKB/Airy propagator entries, their identities and the wave decomposition near the source.

use crate::error::{Error, Result};
use crate::geometry::TurningPointFrame;
use crate::specfun::{airy_eval, AiryQuad};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_4, PI};

/// First column of the propagator at one (z, eps).
///
/// `u11`, `u21` are the entries without the common unimodular factor
/// exp(-i phi(0)/eps +- i pi/4); true entries are `m11() * exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
pub struct PropagatorSample {
    pub z: f64,
    pub eps: f64,
    pub eta: f64,
    pub log_scale: f64,
    pub u11: Complex64,
    pub u21: Complex64,
    /// phi(0)/eps reduced mod 2 pi.
    pub phase0: f64,
    pub q_amp: f64,
    pub dq_amp: f64,
    pub d2q_amp: f64,
    pub airy: AiryQuad,
}

impl PropagatorSample {
    /// M11 mantissa (multiply by exp(log_scale)).
    pub fn m11(&self) -> Complex64 {
        Complex64::from_polar(1.0, -self.phase0 + FRAC_PI_4) * self.u11
    }

    /// M21 mantissa (multiply by exp(log_scale)).
    pub fn m21(&self) -> Complex64 {
        Complex64::from_polar(1.0, -self.phase0 - FRAC_PI_4) * self.u21
    }

    /// M11 with the exponent applied; errors if it does not fit a double.
    pub fn m11_full(&self) -> Result<Complex64> {
        self.unscale(self.m11())
    }

    pub fn m21_full(&self) -> Result<Complex64> {
        self.unscale(self.m21())
    }

    fn unscale(&self, m: Complex64) -> Result<Complex64> {
        if self.log_scale > 700.0 {
            return Err(Error::Range(format!(
                "propagator entry overflows at z = {}: exponent {}",
                self.z, self.log_scale
            )));
        }
        Ok(m * self.log_scale.exp())
    }

    /// ln|M11|.
    pub fn log_abs_m11(&self) -> f64 {
        self.u11.norm().ln() + self.log_scale
    }

    pub fn log_abs_m21(&self) -> f64 {
        self.u21.norm().ln() + self.log_scale
    }

    /// det M = 2 Re(M11 conj M21), evaluated in the Airy frame where it is -2 Im(u11 conj u21).
    /// Needs the recessive Ai part to survive the exp(-2 zeta) shrink.
    pub fn det(&self) -> Result<f64> {
        if self.log_scale > 300.0 {
            return Err(Error::Range(format!(
                "determinant not representable at z = {}: exponent {}",
                self.z, self.log_scale
            )));
        }
        let p = self.u11 * self.u21.conj();
        Ok(-2.0 * p.im * (2.0 * self.log_scale).exp())
    }
}

/// Propagator entries at z.
pub fn build_propagator(frame: &TurningPointFrame, z: f64, eps: f64) -> Result<PropagatorSample> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    let (eta, _) = frame.airy_variables(z, eps)?;
    let (q, dq, d2q) = frame.q_derivs(z)?;
    let airy = airy_eval(-eta)?;
    let sp = PI.sqrt();
    let k1 = eps.powf(-1.0 / 6.0) * sp * q;
    let k2 = eps.powf(1.0 / 6.0) * sp / q;
    let k3 = eps.powf(5.0 / 6.0) * sp * dq;
    // Bi dominates on the scaled side, so carry exp(zeta) outside and shrink Ai by exp(-2 zeta)
    let (ls, a, ap, b, bp) = if airy.scaled {
        let zeta = airy.scale_exponent();
        let d = (-2.0 * zeta).exp();
        (zeta, airy.ai * d, airy.aip * d, airy.bi, airy.bip)
    } else {
        (0.0, airy.ai, airy.aip, airy.bi, airy.bip)
    };
    let w = Complex64::new(a, -b);
    let wp = Complex64::new(ap, -bp);
    let u11 = k1 * w;
    let u21 = -k2 * wp + k3 * w;
    if !(u11.is_finite() && u21.is_finite()) {
        return Err(Error::Range(format!("propagator entries not finite at z = {z} (eta = {eta})")));
    }
    Ok(PropagatorSample {
        z,
        eps,
        eta,
        log_scale: ls,
        u11,
        u21,
        phase0: (frame.phi0 / eps).rem_euclid(2.0 * PI),
        q_amp: q,
        dq_amp: dq,
        d2q_amp: d2q,
        airy,
    })
}

/// Relative residual of dM/dz = (i/eps) A(z) M - i eps (Q''/Q) E21 M, with dM/dz assembled
/// from the Airy equation (no finite differences). Only the first column is checked; the
/// second is its conjugate image.
pub fn lemma1_residual(frame: &TurningPointFrame, z: f64, eps: f64) -> Result<f64> {
    let p = build_propagator(frame, z, eps)?;
    let (q, dq, d2q) = (p.q_amp, p.dq_amp, p.d2q_amp);
    let sp = PI.sqrt();
    let x = -p.eta;
    let d = if p.airy.scaled { (-2.0 * p.airy.scale_exponent()).exp() } else { 1.0 };
    let w = Complex64::new(p.airy.ai * d, -p.airy.bi);
    let wp = Complex64::new(p.airy.aip * d, -p.airy.bip);
    // W(-eta) has d/dz = -eta' W'(-eta), and W'' = x W
    let e1 = eps.powf(-2.0 / 3.0) / (q * q);
    let e2 = -2.0 * eps.powf(-2.0 / 3.0) * dq / (q * q * q);
    let c1 = eps.powf(-1.0 / 6.0) * sp;
    let dm11 = c1 * (dq * w - q * e1 * wp);
    let d2m11 = c1 * (d2q * w - 2.0 * dq * e1 * wp - q * e2 * wp + q * e1 * e1 * x * w);
    let rot11 = Complex64::from_polar(1.0, -p.phase0 + FRAC_PI_4);
    let rot21 = Complex64::from_polar(1.0, -p.phase0 - FRAC_PI_4);
    let m11 = rot11 * p.u11;
    let m21 = rot21 * p.u21;
    let dm11 = rot11 * dm11;
    let dm21 = Complex64::new(0.0, -eps) * rot11 * d2m11;
    let qv = frame.q(z);
    let i = Complex64::i();
    let r1 = dm11 - i / eps * m21;
    let rhs2 = i / eps * qv * m11 - i * eps * (d2q / q) * m11;
    let r2 = dm21 - rhs2;
    let scale = dm11.norm() + (m21.norm() / eps) + dm21.norm() + (qv / eps * m11).norm() + (eps * d2q / q * m11).norm();
    Ok((r1.norm() + r2.norm()) / scale)
}

/// (a, b) from (u, du) via the inverse propagator, with v = -i eps du.
pub fn wave_decompose(p: &PropagatorSample, u: Complex64, du: Complex64) -> Result<(Complex64, Complex64)> {
    let m11 = p.m11_full()?;
    let m21 = p.m21_full()?;
    let v = Complex64::new(0.0, -p.eps) * du;
    let a = 0.5 * (m21.conj() * u + m11.conj() * v);
    let b = 0.5 * (-m21 * u + m11 * v);
    Ok((a, b))
}

/// (u, du) from (a, b): the forward map M (a, b).
pub fn wave_compose(p: &PropagatorSample, a: Complex64, b: Complex64) -> Result<(Complex64, Complex64)> {
    let m11 = p.m11_full()?;
    let m21 = p.m21_full()?;
    let u = m11 * a - m11.conj() * b;
    let v = m21 * a + m21.conj() * b;
    Ok((u, v / Complex64::new(0.0, -p.eps)))
}

/// Reflection coefficient a / b; errors when b vanishes.
pub fn reflection_coefficient(a: Complex64, b: Complex64) -> Result<Complex64> {
    if b.norm() == 0.0 {
        return Err(Error::Numerical("degenerate decomposition: backward amplitude is zero".into()));
    }
    Ok(a / b)
}

/// Leading-order source-side entries [q(z)^{-1/4}, q(z)^{1/4}] exp(i (phi(z) - phi(0))/eps).
pub fn source_side_entries(frame: &TurningPointFrame, z: f64, eps: f64) -> Result<(Complex64, Complex64)> {
    let qv = frame.q(z);
    if !(qv > 0.0) {
        return Err(Error::Precondition(format!("z = {z} is not on the propagating side")));
    }
    let ph = Complex64::from_polar(1.0, (frame.phi(z)? - frame.phi0) / eps);
    Ok((qv.powf(-0.25) * ph, qv.powf(0.25) * ph))
}

/// Leading-order evanescent log-magnitudes (ln|M11|, ln|M21|).
pub fn evanescent_log_magnitudes(frame: &TurningPointFrame, z: f64, eps: f64) -> Result<(f64, f64)> {
    let qv = frame.q(z);
    if !(qv < 0.0) {
        return Err(Error::Precondition(format!("z = {z} is not on the evanescent side")));
    }
    let growth = -frame.phi(z)? / eps;
    Ok((growth - 0.25 * (-qv).ln(), growth + 0.25 * (-qv).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WaveguideProfile;

    fn frame() -> TurningPointFrame {
        TurningPointFrame::new(&WaveguideProfile::default_linear(), 1.0).unwrap()
    }

    #[test]
    fn determinant_is_two() {
        let f = frame();
        for eps in [1e-2f64, 1e-3, 1e-4] {
            // down to eta = -8
            let zb = f.z_of_xi(-8.0 * eps.powf(2.0 / 3.0)).unwrap();
            for i in 0..100 {
                let z = zb - zb * i as f64 / 99.0;
                let det = build_propagator(&f, z, eps).unwrap().det().unwrap();
                assert!((det - 2.0).abs() < 1e-10, "eps={eps} z={z} det={det}");
            }
        }
        assert!(build_propagator(&f, -2.5, 1e-4).unwrap().det().is_err());
    }

    #[test]
    fn residual_vanishes_across_turning_point() {
        let f = frame();
        for eps in [1e-2f64, 1e-3] {
            for z in [-1.2, -1.0 - eps.powf(2.0 / 3.0), -1.0, -1.0 + 1e-4, -1.0 + eps.powf(2.0 / 3.0), -0.5, -0.2, 0.0] {
                let r = lemma1_residual(&f, z, eps).unwrap();
                assert!(r < 1e-12, "eps={eps} z={z} r={r}");
            }
        }
    }

    #[test]
    fn source_side_matches_plane_mode() {
        let f = frame();
        for eps in [1e-3, 1e-4] {
            for z in [-0.05, -0.02, 0.0] {
                let p = build_propagator(&f, z, eps).unwrap();
                let (l11, l21) = source_side_entries(&f, z, eps).unwrap();
                let e11 = (p.m11_full().unwrap() - l11).norm() / l11.norm();
                let e21 = (p.m21_full().unwrap() - l21).norm() / l21.norm();
                assert!(e11 < 5.0 * eps && e21 < 5.0 * eps, "eps={eps} z={z} {e11} {e21}");
            }
        }
    }

    #[test]
    fn evanescent_growth() {
        let f = frame();
        let eps = 1e-3;
        for z in [-1.3, -1.2, -1.1] {
            let p = build_propagator(&f, z, eps).unwrap();
            assert!(p.eta <= -8.0);
            let (l11, l21) = evanescent_log_magnitudes(&f, z, eps).unwrap();
            assert!((p.log_abs_m11() - l11).abs() < 0.01 * l11.abs());
            assert!((p.log_abs_m21() - l21).abs() < 0.01 * l21.abs());
        }
    }

    #[test]
    fn decomposition_round_trip() {
        let f = frame();
        let p = build_propagator(&f, -0.01, 1e-3).unwrap();
        let (a0, b0) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        let (u, du) = wave_compose(&p, a0, b0).unwrap();
        let (a, b) = wave_decompose(&p, u, du).unwrap();
        assert!((a - a0).norm() < 1e-10 && (b - b0).norm() < 1e-10);
        let (u, du) = wave_compose(&p, a0, Complex64::new(0.0, 0.0)).unwrap();
        let (_, b) = wave_decompose(&p, u, du).unwrap();
        assert!(b.norm() < 1e-12);
        assert!(reflection_coefficient(a0, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn turning_region_scaling() {
        let f = frame();
        for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
            let p = build_propagator(&f, f.z_t, eps).unwrap();
            let r1 = p.m11().norm() * eps.powf(1.0 / 6.0);
            let r2 = p.m21().norm() * eps.powf(-1.0 / 6.0);
            let base = build_propagator(&f, f.z_t, 1e-2).unwrap();
            let b1 = base.m11().norm() * 1e-2f64.powf(1.0 / 6.0);
            let b2 = base.m21().norm() * 1e-2f64.powf(-1.0 / 6.0);
            assert!(r1 / b1 < 2.0 && b1 / r1 < 2.0);
            assert!(r2 / b2 < 2.0 && b2 / r2 < 2.0);
        }
    }
}
