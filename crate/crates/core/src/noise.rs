//! Stationary boundary fluctuations: spectral synthesis of (nu, nu') and sigma calibration.

use crate::error::{Error, Result};
use crate::geometry::TurningPointFrame;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Correlation kernels, both with R(0) = 1 and integral of R equal to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// R(x) = exp(-pi x^2).
    Gaussian,
    /// R(x) = (1 + a|x|) exp(-a|x|) with a = 4.
    ExponentialSmoothed,
}

const MATERN_A: f64 = 4.0;

impl Kernel {
    pub fn r(&self, x: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-PI * x * x).exp(),
            Kernel::ExponentialSmoothed => {
                let t = MATERN_A * x.abs();
                (1.0 + t) * (-t).exp()
            }
        }
    }

    /// Power spectral density, the Fourier transform of R.
    pub fn psd(&self, k: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-k * k / (4.0 * PI)).exp(),
            Kernel::ExponentialSmoothed => {
                let a = MATERN_A;
                4.0 * a.powi(3) / (a * a + k * k).powi(2)
            }
        }
    }

    /// Integral of R / R(0).
    pub fn correlation_length(&self) -> f64 {
        1.0
    }

    /// Distance beyond which |R| < 1e-16.
    fn support(&self) -> f64 {
        match self {
            Kernel::Gaussian => 3.5,
            Kernel::ExponentialSmoothed => 11.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kernel: Kernel,
    /// Optional smooth clipper nu -> tanh(c nu)/c, renormalized to unit variance.
    pub clip: Option<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { kernel: Kernel::Gaussian, clip: None }
    }
}

impl NoiseModel {
    pub fn psd(&self, k: f64) -> f64 {
        self.kernel.psd(k)
    }
}

/// One realization of (nu, nu') on the uniform grid s_j = s0 + j h, with s = z / eps.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub s0: f64,
    pub step: f64,
    pub nu: Vec<f64>,
    pub nup: Vec<f64>,
    pub nupp: Vec<f64>,
    pub seed: u64,
    pub sigma_eps: f64,
}

impl NoisePath {
    /// Identically zero path covering [s_lo, s_hi].
    pub fn zeros(s_lo: f64, s_hi: f64, step: f64) -> Self {
        let (j0, n) = grid_span(s_lo, s_hi, step);
        NoisePath { s0: j0 as f64 * step, step, nu: vec![0.0; n], nup: vec![0.0; n], nupp: vec![0.0; n], seed: 0, sigma_eps: 0.0 }
    }

    /// Path with nu = c everywhere.
    pub fn constant(s_lo: f64, s_hi: f64, step: f64, c: f64) -> Self {
        let mut p = Self::zeros(s_lo, s_hi, step);
        p.nu.iter_mut().for_each(|v| *v = c);
        p
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn s_end(&self) -> f64 {
        self.s0 + (self.len() - 1) as f64 * self.step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.s0 + j as f64 * self.step).collect()
    }

    /// (nu, nu') at s: cubic Hermite for both, using the sampled nu' and nu'' as slopes.
    pub fn eval(&self, s: f64) -> Result<(f64, f64)> {
        let n = self.len();
        let t = (s - self.s0) / self.step;
        if !(t >= 1.0 && t <= (n - 3) as f64) {
            return Err(Error::Range(format!(
                "noise argument s = {s} outside the generated path [{}, {}]",
                self.s0 + self.step,
                self.s0 + (n - 3) as f64 * self.step
            )));
        }
        let j = (t.floor() as usize).min(n - 4);
        let u = t - j as f64;
        let h = self.step;
        let (p0, p1, m0, m1) = (self.nu[j], self.nu[j + 1], self.nup[j] * h, self.nup[j + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        let nu = (2.0 * u3 - 3.0 * u2 + 1.0) * p0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * p1
            + (u3 - u2) * m1;
        let (q0, q1, n0, n1) = (self.nup[j], self.nup[j + 1], self.nupp[j] * h, self.nupp[j + 1] * h);
        let nup = (2.0 * u3 - 3.0 * u2 + 1.0) * q0
            + (u3 - 2.0 * u2 + u) * n0
            + (-2.0 * u3 + 3.0 * u2) * q1
            + (u3 - u2) * n1;
        Ok((nu, nup))
    }
}

fn grid_span(s_lo: f64, s_hi: f64, step: f64) -> (i64, usize) {
    let j0 = (s_lo / step).floor() as i64 - 3;
    let j1 = (s_hi / step).ceil() as i64 + 3;
    (j0, (j1 - j0 + 1) as usize)
}

/// Stationary Gaussian path on a grid anchored at s = 0 and covering [s_lo, s_hi].
/// nu and nu' come from the same spectral amplitudes.
pub fn generate_path(model: &NoiseModel, s_lo: f64, s_hi: f64, step: f64, seed: u64) -> Result<NoisePath> {
    if !(step > 0.0) || step > model.kernel.correlation_length() / 20.0 + 1e-15 {
        return Err(Error::Resolution(format!(
            "noise step {step} must be positive and at most correlation length / 20 = {}",
            model.kernel.correlation_length() / 20.0
        )));
    }
    if !(s_hi > s_lo) {
        return Err(Error::Config(format!("empty noise interval [{s_lo}, {s_hi}]")));
    }
    let (j0, n) = grid_span(s_lo, s_hi, step);
    let pad = (model.kernel.support() / step).ceil() as usize;
    let nfft = (n + pad).next_power_of_two();
    let dk = 2.0 * PI / (nfft as f64 * step);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut w = vec![Complex64::new(0.0, 0.0); nfft];
    let mut wd = vec![Complex64::new(0.0, 0.0); nfft];
    let mut wdd = vec![Complex64::new(0.0, 0.0); nfft];
    for m in 0..nfft {
        let mi = if m <= nfft / 2 { m as f64 } else { m as f64 - nfft as f64 };
        let k = mi * dk;
        let x: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let amp = (model.psd(k) * dk / (2.0 * PI)).sqrt();
        w[m] = Complex64::new(amp * x, amp * y);
        // the Nyquist bin has no well-defined sign for the derivative
        let kd = if 2 * m == nfft { 0.0 } else { k };
        wd[m] = Complex64::new(0.0, kd) * w[m];
        wdd[m] = -kd * kd * w[m];
    }
    let fft = FftPlanner::new().plan_fft_inverse(nfft);
    fft.process(&mut w);
    fft.process(&mut wd);
    fft.process(&mut wdd);
    let mut nu: Vec<f64> = w[..n].iter().map(|c| c.re).collect();
    let mut nup: Vec<f64> = wd[..n].iter().map(|c| c.re).collect();
    let mut nupp: Vec<f64> = wdd[..n].iter().map(|c| c.re).collect();
    if let Some(c) = model.clip {
        if !(c > 0.0) {
            return Err(Error::Config(format!("clip parameter must be positive, got {c}")));
        }
        let norm = clip_norm(c);
        for i in 0..n {
            let t = (c * nu[i]).tanh();
            let g = 1.0 - t * t;
            nupp[i] = (g * nupp[i] - 2.0 * c * t * g * nup[i] * nup[i]) / norm;
            nup[i] *= g / norm;
            nu[i] = t / (c * norm);
        }
    }
    Ok(NoisePath { s0: j0 as f64 * step, step, nu, nup, nupp, seed, sigma_eps: 0.0 })
}

/// sqrt(E[tanh^2(c X)/c^2]) for standard normal X.
fn clip_norm(c: f64) -> f64 {
    let f = |x: f64| ((c * x).tanh() / c).powi(2) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    crate::quad::composite_gl(f, -12.0, 12.0, 48, 16).sqrt()
}

/// sigma_eps giving the target upsilon at finite eps.
pub fn calibrate_sigma(eps: f64, upsilon_target: f64, frame: &TurningPointFrame, model: &NoiseModel) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(upsilon_target >= 0.0) {
        return Err(Error::Config(format!("upsilon target must be non-negative, got {upsilon_target}")));
    }
    let log = (frame.phi0 / eps).ln();
    if !(log > 0.0) {
        return Err(Error::Config(format!("ln(phi(0)/eps) = {log} is not positive; eps too large")));
    }
    let k4 = frame.k.powi(4);
    Ok(upsilon_target * (frame.gamma / (k4 * model.psd(0.0) * log)).sqrt())
}

/// Empirical autocorrelation and periodogram of a path.
#[derive(Debug, Clone, Serialize)]
pub struct AutocorrReport {
    pub lags: Vec<f64>,
    pub acf: Vec<f64>,
    /// Approximate 95% band for a single lag, 2 / sqrt(n).
    pub acf_band: f64,
    pub freqs: Vec<f64>,
    pub periodogram: Vec<f64>,
    /// Estimate of the PSD at k = 0 from the lag sum over the kernel support.
    pub psd_zero: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn autocorr_report(path: &NoisePath, max_lag: f64) -> Result<AutocorrReport> {
    let n = path.len();
    if n < 10_000 {
        return Err(Error::Precondition(format!("autocorrelation report needs >= 1e4 samples, got {n}")));
    }
    let h = path.step;
    let mean = path.nu.iter().sum::<f64>() / n as f64;
    let nfft = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = path.nu.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    let nf = n / 2;
    let freqs: Vec<f64> = (0..nf).map(|m| 2.0 * PI * m as f64 / (n as f64 * h)).collect();
    // periodogram of the unpadded series at its own Fourier frequencies
    let mut direct: Vec<Complex64> = path.nu.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut direct);
    let periodogram: Vec<f64> = direct[..nf].iter().map(|c| h * c.norm_sqr() / n as f64).collect();
    let mut power: Vec<Complex64> = buf.iter().map(|c| Complex64::new(c.norm_sqr(), 0.0)).collect();
    planner.plan_fft_inverse(nfft).process(&mut power);
    let nl = ((max_lag / h).round() as usize).min(n - 1);
    let lags: Vec<f64> = (0..=nl).map(|l| l as f64 * h).collect();
    let acf: Vec<f64> = (0..=nl).map(|l| power[l].re / (nfft as f64 * n as f64)).collect();
    let variance = acf[0];
    let mut psd_zero = acf[0];
    for a in acf.iter().skip(1) {
        psd_zero += 2.0 * a;
    }
    psd_zero *= h;
    Ok(AutocorrReport {
        lags,
        acf,
        acf_band: 2.0 / (n as f64).sqrt(),
        freqs,
        periodogram,
        psd_zero,
        mean,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WaveguideProfile;

    #[test]
    fn kernels_are_normalized() {
        for k in [Kernel::Gaussian, Kernel::ExponentialSmoothed] {
            assert_eq!(k.r(0.0), 1.0);
            let integral = crate::quad::composite_gl(|x| k.r(x), -20.0, 20.0, 400, 16);
            assert!((integral - 1.0).abs() < 1e-12);
            assert!((k.psd(0.0) - 1.0).abs() < 1e-15);
            let ft = crate::quad::composite_gl(|x| k.r(x) * (1.3 * x).cos(), -20.0, 20.0, 400, 16);
            assert!((ft - k.psd(1.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let m = NoiseModel::default();
        let a = generate_path(&m, -500.0, 1.0, 0.05, 7).unwrap();
        let b = generate_path(&m, -500.0, 1.0, 0.05, 7).unwrap();
        assert_eq!(a.nu, b.nu);
        assert_eq!(a.nup, b.nup);
        let c = generate_path(&m, -500.0, 1.0, 0.05, 8).unwrap();
        assert_ne!(a.nu, c.nu);
    }

    #[test]
    fn grid_contains_origin() {
        let p = generate_path(&NoiseModel::default(), -10.0, 0.5, 0.05, 1).unwrap();
        let j = (-p.s0 / p.step).round();
        assert!((p.s0 + j * p.step).abs() < 1e-12);
        assert!(p.s0 <= -10.0 && p.s_end() >= 0.5);
    }

    #[test]
    fn coarse_step_rejected() {
        assert!(matches!(
            generate_path(&NoiseModel::default(), -1.0, 0.0, 0.1, 0),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn derivative_consistent_with_values() {
        let p = generate_path(&NoiseModel::default(), -200.0, 0.0, 0.01, 3).unwrap();
        let h = p.step;
        let mut worst = 0.0f64;
        for j in 1..p.len() - 1 {
            let cd = (p.nu[j + 1] - p.nu[j - 1]) / (2.0 * h);
            worst = worst.max((cd - p.nup[j]).abs());
        }
        // h^2/6 times a few standard deviations of nu''' (sd = sqrt(15 (2 pi)^3) ~ 61)
        assert!(worst < 60.0 * h * h, "{worst}");
        // trapezoid of nu' reproduces the increment of nu
        let n = p.len();
        let trap: f64 = (0..n - 1).map(|j| 0.5 * h * (p.nup[j] + p.nup[j + 1])).sum();
        let inc = p.nu[n - 1] - p.nu[0];
        assert!((trap - inc).abs() < 1e-3 * (1.0 + inc.abs()) + 20.0 * h * h, "{trap} {inc}");
    }

    #[test]
    fn interpolation_hits_nodes() {
        let p = generate_path(&NoiseModel::default(), -20.0, 0.0, 0.05, 5).unwrap();
        for j in [5usize, 100, 300] {
            let s = p.s0 + j as f64 * p.step;
            let (v, d) = p.eval(s).unwrap();
            assert!((v - p.nu[j]).abs() < 1e-12);
            assert!((d - p.nup[j]).abs() < 1e-12);
        }
        assert!(p.eval(p.s0).is_err());
    }

    #[test]
    fn calibration_inverts_variance_formula() {
        let f = TurningPointFrame::new(&WaveguideProfile::default_linear(), 1.0).unwrap();
        let m = NoiseModel::default();
        assert_eq!(calibrate_sigma(1e-3, 0.0, &f, &m).unwrap(), 0.0);
        let s = calibrate_sigma(1e-3, 1.0, &f, &m).unwrap();
        let ups2 = f.k.powi(4) / f.gamma * m.psd(0.0) * s * s * (f.phi0 / 1e-3).ln();
        assert!((ups2 - 1.0).abs() < 1e-14);
        let r = calibrate_sigma(1e-4, 1.0, &f, &m).unwrap() / calibrate_sigma(1e-2, 1.0, &f, &m).unwrap();
        let want = ((f.phi0 / 1e-2).ln() / (f.phi0 / 1e-4).ln()).sqrt();
        assert!((r - want).abs() < 1e-14);
        assert!(calibrate_sigma(0.9, 1.0, &f, &m).is_err());
    }

    #[test]
    fn zero_path_has_zero_spectrum() {
        let p = NoisePath::zeros(-1000.0, 0.0, 0.05);
        let r = autocorr_report(&p, 3.0).unwrap();
        assert!(r.periodogram.iter().all(|&v| v == 0.0));
        assert_eq!(r.psd_zero, 0.0);
    }

    #[test]
    fn clipped_path_has_unit_variance() {
        let m = NoiseModel { kernel: Kernel::Gaussian, clip: Some(1.0) };
        let p = generate_path(&m, -20_000.0, 0.0, 0.05, 11).unwrap();
        let var = p.nu.iter().map(|v| v * v).sum::<f64>() / p.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let bound = 1.0 / clip_norm(1.0);
        assert!(p.nu.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn long_path_matches_kernel() {
        let m = NoiseModel::default();
        let p = generate_path(&m, -50_000.0, 0.0, 0.05, 2024).unwrap();
        assert!(p.len() >= 1_000_000);
        let r = autocorr_report(&p, 3.5).unwrap();
        // the sample mean has variance (integral of R) / length
        assert!(r.mean.abs() < 5.0 * (1.0f64 / 50_000.0).sqrt(), "{}", r.mean);
        assert!((r.acf[0] - 1.0).abs() < 0.01, "{}", r.acf[0]);
        let worst = r.lags.iter().zip(&r.acf).map(|(l, a)| (a - m.kernel.r(*l)).abs()).fold(0.0, f64::max);
        assert!(worst < 0.02, "{worst}");
        assert!((r.psd_zero - m.psd(0.0)).abs() < 0.05, "{}", r.psd_zero);
        assert!(r.periodogram.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn halves_share_statistics() {
        let p = generate_path(&NoiseModel::default(), -20_000.0, 0.0, 0.05, 99).unwrap();
        let half = p.len() / 2;
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        };
        let (m1, v1) = stats(&p.nu[..half]);
        let (m2, v2) = stats(&p.nu[half..]);
        // one half has length 10^4 correlation lengths
        let se = (2.0f64 / 1e4).sqrt();
        assert!((m1 - m2).abs() < 5.0 * se, "{m1} {m2}");
        assert!((v1 - v2).abs() < 5.0 * se, "{v1} {v2}");
    }
}
