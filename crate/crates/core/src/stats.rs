//! Monte Carlo ensembles of terminal phases and the Gaussian-limit comparisons.

use crate::error::{Error, Result};
use crate::geometry::TurningPointFrame;
use crate::noise::{generate_path, NoiseModel};
use crate::quad;
use crate::reflection::{PhaseOptions, PhaseSolver};
use rayon::prelude::*;
use serde::Serialize;

/// Limit-law predictions at finite eps.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryPrediction {
    pub eps: f64,
    pub sigma: f64,
    pub upsilon2: f64,
    /// (upsilon^2 / 3) (I + 2 J).
    pub cov: Vec<Vec<f64>>,
}

pub fn upsilon2(frame: &TurningPointFrame, eps: f64, sigma: f64, model: &NoiseModel) -> f64 {
    frame.k.powi(4) / frame.gamma * model.psd(0.0) * sigma * sigma * (frame.phi0 / eps).ln()
}

pub fn theory_predictions(frame: &TurningPointFrame, eps: f64, sigma: f64, model: &NoiseModel, m: usize) -> TheoryPrediction {
    let u2 = upsilon2(frame, eps, sigma, model);
    let cov = (0..m)
        .map(|i| (0..m).map(|j| if i == j { u2 } else { 2.0 * u2 / 3.0 }).collect())
        .collect();
    TheoryPrediction { eps, sigma, upsilon2: u2, cov }
}

/// Diffusion coefficients (a, b) of the limiting generator at zeta > 0.
pub fn generator_coefficients(
    frame: &TurningPointFrame,
    eps: f64,
    sigma: f64,
    model: &NoiseModel,
    zeta: f64,
) -> Result<(f64, f64)> {
    if !(zeta > 0.0) {
        return Err(Error::Domain(format!("generator coefficients need zeta > 0, got {zeta}")));
    }
    let xi = eps.cbrt() * zeta;
    let (z, j, _) = frame.z_map(xi)?;
    let mu2 = frame.mu2(z);
    let pre = sigma * sigma * j.powi(3) * mu2 * mu2 / (2.0 * zeta);
    let kk = 2.0 * xi.sqrt() / j;
    let a = pre * (model.psd(0.0) + 0.5 * model.psd(kk));
    let r = |x: f64| model.kernel.r(x) * (kk * x).sin();
    let (sin_int, _) = quad::adaptive(r, 0.0, 16.0, 1e-14, 1e-12);
    Ok((a, -pre * sin_int))
}

/// 2 * integral of a over [zeta_lo, zeta_s]; `leading` uses the constant-coefficient a.
pub fn variance_integral(
    frame: &TurningPointFrame,
    eps: f64,
    sigma: f64,
    model: &NoiseModel,
    zeta_lo: f64,
    leading: bool,
) -> Result<f64> {
    let zeta_s = frame.xi_of_z(0.0)? / eps.cbrt();
    if leading {
        let c = 3.0 * sigma * sigma * frame.k.powi(4) * model.psd(0.0) / (4.0 * frame.gamma);
        return Ok(2.0 * c * (zeta_s / zeta_lo).ln());
    }
    // log substitution zeta = exp(t) flattens the 1/zeta profile
    let f = |t: f64| {
        let z = t.exp();
        generator_coefficients(frame, eps, sigma, model, z).map(|(a, _)| a * z).unwrap_or(f64::NAN)
    };
    let (v, _) = quad::adaptive(f, zeta_lo.ln(), zeta_s.ln(), 1e-12, 1e-9);
    if !v.is_finite() {
        return Err(Error::Quadrature("variance integral not finite".into()));
    }
    Ok(2.0 * v)
}

/// Residual correlation of the oscillatory parts of two frequencies with offset gap `dw`:
/// the log-weighted average of cos(2 eps^{-1/6} dw K(0) sqrt(x)) over Airy variables x in [3, x_s].
pub fn fast_phase_overlap(frame: &TurningPointFrame, eps: f64, dw: f64) -> Result<f64> {
    let x_s = frame.xi_of_z(0.0)? / eps.cbrt();
    if x_s <= 3.0 {
        return Err(Error::Config(format!("eps = {eps} leaves no oscillatory interval (x_s = {x_s})")));
    }
    let k0 = 2.0 * frame.k * frame.k / (frame.gamma.powf(2.0 / 3.0) * frame.omega);
    let c = 2.0 * eps.powf(-1.0 / 6.0) * dw * k0;
    let (v, _) = quad::adaptive(|u: f64| 2.0 * (c * u).cos() / u, 3f64.sqrt(), x_s.sqrt(), 1e-13, 1e-11);
    Ok(v / (x_s / 3.0).ln())
}

/// m symmetric offsets whose neighbours have turning points one Airy length apart
/// (gap eps^{1/6} / K(0)), widened by 1% steps until the fast-phase overlap is below `threshold`.
pub fn close_offsets(frame: &TurningPointFrame, eps: f64, m: usize, threshold: f64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Config("need at least one offset".into()));
    }
    let k0 = 2.0 * frame.k * frame.k / (frame.gamma.powf(2.0 / 3.0) * frame.omega);
    let mut dw = eps.powf(1.0 / 6.0) / k0;
    let mut tries = 0;
    while fast_phase_overlap(frame, eps, dw)?.abs() > threshold {
        dw *= 1.01;
        tries += 1;
        if tries > 500 {
            return Err(Error::Config(format!("no offset gap reaches overlap {threshold} at eps = {eps}")));
        }
    }
    let mid = (m as f64 - 1.0) / 2.0;
    Ok((0..m).map(|i| (i as f64 - mid) * dw).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleConfig {
    pub eps: f64,
    pub sigma: f64,
    pub offsets: Vec<f64>,
    pub model: NoiseModel,
    pub options: PhaseOptions,
    pub noise_step: f64,
}

/// Terminal phases of an ensemble, one row per successful realization.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleRun {
    pub seeds: Vec<u64>,
    pub samples: Vec<Vec<f64>>,
    pub left_max: f64,
    pub failures: Vec<(u64, String)>,
}

/// One realization: path from the derived seed, then all offsets on that path.
pub fn realization(solver: &PhaseSolver, cfg: &EnsembleConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    let (lo, hi) = solver.s_range();
    let mut path = generate_path(&cfg.model, lo - 1.0, hi + 1.0, cfg.noise_step, seed)?;
    path.sigma_eps = cfg.sigma;
    let tr = solver.run(&path)?;
    let left = tr.iter().map(|t| t.left_max).fold(0.0, f64::max);
    Ok((tr.into_iter().map(|t| t.terminal).collect(), left))
}

pub fn run_ensemble(frame: &TurningPointFrame, cfg: &EnsembleConfig, n: usize, seed_base: u64) -> Result<EnsembleRun> {
    if n < 100 {
        return Err(Error::Config(format!("ensembles need n >= 100, got {n}")));
    }
    let opts = PhaseOptions { record: false, ..cfg.options.clone() };
    let solver = PhaseSolver::new(frame, cfg.eps, &cfg.offsets, &opts)?;
    let results: Vec<(u64, Result<(Vec<f64>, f64)>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base.wrapping_add(i);
            (seed, realization(&solver, cfg, seed))
        })
        .collect();
    let mut run = EnsembleRun { seeds: Vec::new(), samples: Vec::new(), left_max: 0.0, failures: Vec::new() };
    for (seed, r) in results {
        match r {
            Ok((v, left)) => {
                run.seeds.push(seed);
                run.samples.push(v);
                run.left_max = run.left_max.max(left);
            }
            Err(e) => run.failures.push((seed, e.to_string())),
        }
    }
    if run.failures.len() * 100 > n {
        return Err(Error::Numerical(format!(
            "{} of {n} realizations failed; first: {}",
            run.failures.len(),
            run.failures[0].1
        )));
    }
    Ok(run)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub failures: usize,
    pub offsets: Vec<f64>,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub var_se: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
    pub corr_se: Vec<Vec<f64>>,
    pub skew: Vec<f64>,
    pub exkurt: Vec<f64>,
    pub skew_se: f64,
    pub exkurt_se: f64,
    pub upsilon2_hat: f64,
    pub upsilon2_hat_se: f64,
    pub theory: TheoryPrediction,
    /// Relative Frobenius residual of the best fit v (I + 2J) / 3.
    pub structure_residual: f64,
    pub structure_v: f64,
}

pub fn summarize(run: &EnsembleRun, offsets: &[f64], theory: TheoryPrediction) -> Result<EnsembleSummary> {
    let n = run.samples.len();
    if n < 2 {
        return Err(Error::Precondition("fewer than two successful realizations".into()));
    }
    let m = offsets.len();
    let nf = n as f64;
    let mean: Vec<f64> = (0..m).map(|j| run.samples.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let mut cov = vec![vec![0.0; m]; m];
    for r in &run.samples {
        for i in 0..m {
            for j in 0..m {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= nf - 1.0);
    let mut skew = Vec::with_capacity(m);
    let mut exkurt = Vec::with_capacity(m);
    let mut var_se = Vec::with_capacity(m);
    for j in 0..m {
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for r in &run.samples {
            let d = r[j] - mean[j];
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        skew.push(m3 / m2.powf(1.5));
        exkurt.push(m4 / (m2 * m2) - 3.0);
        var_se.push(((m4 - m2 * m2) / nf).sqrt());
    }
    let corr: Vec<Vec<f64>> =
        (0..m).map(|i| (0..m).map(|j| cov[i][j] / (cov[i][i] * cov[j][j]).sqrt()).collect()).collect();
    let corr_se = corr.iter().map(|row| row.iter().map(|r| (1.0 - r * r) / nf.sqrt()).collect()).collect();
    let upsilon2_hat = (0..m).map(|j| cov[j][j]).sum::<f64>() / m as f64;
    let upsilon2_hat_se = (0..m).map(|j| var_se[j]).sum::<f64>() / m as f64;
    let (structure_v, structure_residual) = structure_fit(&cov);
    Ok(EnsembleSummary {
        n,
        failures: run.failures.len(),
        offsets: offsets.to_vec(),
        mean_se: (0..m).map(|j| (cov[j][j] / nf).sqrt()).collect(),
        mean,
        cov,
        var_se,
        corr,
        corr_se,
        skew,
        exkurt,
        skew_se: (6.0 / nf).sqrt(),
        exkurt_se: (24.0 / nf).sqrt(),
        upsilon2_hat,
        upsilon2_hat_se,
        theory,
        structure_residual,
        structure_v,
    })
}

/// Least-squares v in C ~ v (I + 2J)/3 and the relative Frobenius residual.
pub fn structure_fit(cov: &[Vec<f64>]) -> (f64, f64) {
    let m = cov.len();
    let t = |i: usize, j: usize| if i == j { 1.0 } else { 2.0 / 3.0 };
    let (mut ct, mut tt, mut cc) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            ct += cov[i][j] * t(i, j);
            tt += t(i, j) * t(i, j);
            cc += cov[i][j] * cov[i][j];
        }
    }
    let v = ct / tt;
    let mut r = 0.0;
    for i in 0..m {
        for j in 0..m {
            r += (cov[i][j] - v * t(i, j)).powi(2);
        }
    }
    (v, if cc > 0.0 { (r / cc).sqrt() } else { 0.0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicRow {
    pub m: usize,
    pub modulus: f64,
    pub target: f64,
    pub rel_err: f64,
}

/// |E exp(i sum_{j<m} psi_j)| against exp(-m(2m+1) upsilon^2 / 6).
pub fn characteristic_check(samples: &[Vec<f64>], ms: &[usize], upsilon2_hat: f64) -> Result<Vec<CharacteristicRow>> {
    let mut out = Vec::new();
    for &m in ms {
        if samples.iter().any(|r| r.len() < m) {
            return Err(Error::Precondition(format!("characteristic check for m = {m} needs {m} phases per sample")));
        }
        let (mut c, mut s) = (0.0, 0.0);
        for r in samples {
            let t: f64 = r[..m].iter().sum();
            c += t.cos();
            s += t.sin();
        }
        let nf = samples.len() as f64;
        let modulus = (c * c + s * s).sqrt() / nf;
        let mf = m as f64;
        let target = (-mf * (2.0 * mf + 1.0) * upsilon2_hat / 6.0).exp();
        out.push(CharacteristicRow { m, modulus, target, rel_err: (modulus - target).abs() / target });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Gaussianity {
    pub skew: f64,
    pub exkurt: f64,
    pub skew_se: f64,
    pub exkurt_se: f64,
    pub pass: bool,
}

pub fn gaussianity_diagnostics(samples: &[f64]) -> Result<Gaussianity> {
    let n = samples.len();
    if n < 1000 {
        return Err(Error::Precondition(format!("gaussianity diagnostics need n >= 1000, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let skew = m3 / m2.powf(1.5);
    let exkurt = m4 / (m2 * m2) - 3.0;
    let skew_se = (6.0 / nf).sqrt();
    let exkurt_se = (24.0 / nf).sqrt();
    let pass = skew.abs() <= 5.0 * skew_se && exkurt.abs() <= 5.0 * exkurt_se;
    Ok(Gaussianity { skew, exkurt, skew_se, exkurt_se, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub eps: f64,
    pub log_term: f64,
    pub var: f64,
    pub var_se: f64,
    pub upsilon2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ladder {
    pub sigma0: f64,
    pub rows: Vec<LadderRow>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_theory: f64,
    pub slope_rel_err: f64,
}

/// Variance at fixed sigma over several eps, regressed on ln(phi(0)/eps).
pub fn variance_ladder(
    frame: &TurningPointFrame,
    base: &EnsembleConfig,
    eps_list: &[f64],
    sigma0: f64,
    n: usize,
    seed_base: u64,
) -> Result<Ladder> {
    let mut rows = Vec::new();
    for (i, &eps) in eps_list.iter().enumerate() {
        let cfg = EnsembleConfig { eps, sigma: sigma0, offsets: vec![0.0], ..base.clone() };
        let run = run_ensemble(frame, &cfg, n, seed_base.wrapping_add(1_000_000 * i as u64))?;
        let th = theory_predictions(frame, eps, sigma0, &base.model, 1);
        let s = summarize(&run, &[0.0], th.clone())?;
        rows.push(LadderRow { eps, log_term: (frame.phi0 / eps).ln(), var: s.cov[0][0], var_se: s.var_se[0], upsilon2: th.upsilon2 });
    }
    let (slope, intercept) = linear_fit(&rows.iter().map(|r| (r.log_term, r.var)).collect::<Vec<_>>());
    let slope_theory = sigma0 * sigma0 * frame.k.powi(4) * base.model.psd(0.0) / frame.gamma;
    Ok(Ladder { sigma0, rows, slope, intercept, slope_theory, slope_rel_err: (slope - slope_theory).abs() / slope_theory })
}

/// Ordinary least squares y = a x + b.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WaveguideProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn frame() -> TurningPointFrame {
        TurningPointFrame::new(&WaveguideProfile::default_linear(), 1.0).unwrap()
    }

    #[test]
    fn zero_sigma_gives_zero_prediction() {
        let t = theory_predictions(&frame(), 1e-3, 0.0, &NoiseModel::default(), 2);
        assert_eq!(t.upsilon2, 0.0);
        assert!(t.cov.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn two_frequency_covariance_shape() {
        let f = frame();
        let t = theory_predictions(&f, 1e-4, 0.3, &NoiseModel::default(), 2);
        let u = t.upsilon2;
        assert!((t.cov[0][0] - u).abs() < 1e-15 && (t.cov[0][1] / u - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn leading_coefficient_integrates_to_upsilon() {
        let f = frame();
        let m = NoiseModel::default();
        for eps in [1e-2f64, 1e-3, 1e-4] {
            let sigma = 0.37;
            let lo = 1.5f64.powf(2.0 / 3.0) * eps.cbrt();
            // independent numerical integral of the leading a
            let c = 3.0 * sigma * sigma * f.k.powi(4) * m.psd(0.0) / (4.0 * f.gamma);
            let zs = f.xi_of_z(0.0).unwrap() / eps.cbrt();
            let num = 2.0 * quad::adaptive(|z| c / z, lo, zs, 1e-14, 1e-13).0;
            let u2 = upsilon2(&f, eps, sigma, &m);
            assert!((num - u2).abs() < 1e-10 * u2, "{num} {u2}");
            assert!((variance_integral(&f, eps, sigma, &m, lo, true).unwrap() - u2).abs() < 1e-12 * u2);
        }
    }

    #[test]
    fn generator_coefficient_limits() {
        let f = frame();
        let m = NoiseModel::default();
        let eps: f64 = 1e-6;
        let zeta = 1e-3;
        let (a, b) = generator_coefficients(&f, eps, 1.0, &m, zeta).unwrap();
        let lead = 3.0 * f.k.powi(4) * m.psd(0.0) / (4.0 * f.gamma * zeta);
        assert!((a - lead).abs() < 1e-3 * lead);
        assert!(b.abs() < 1e-3 * lead);
    }

    #[test]
    fn gaussianity_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(gaussianity_diagnostics(&g).unwrap().pass);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        let r = gaussianity_diagnostics(&v).unwrap();
        assert!(!r.pass);
        assert!((r.exkurt + 1.2).abs() < 0.1);
    }

    #[test]
    fn characteristic_of_gaussian_vector() {
        // psi = sqrt(2/3) c X0 + sqrt(1/3) c Xj has covariance c^2 (I + 2J) / 3
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c2: f64 = 0.8;
        let s: Vec<Vec<f64>> = (0..40_000)
            .map(|_| {
                let x0: f64 = StandardNormal.sample(&mut rng);
                (0..2)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        c2.sqrt() * ((2.0f64 / 3.0).sqrt() * x0 + (1.0f64 / 3.0).sqrt() * x)
                    })
                    .collect()
            })
            .collect();
        for row in characteristic_check(&s, &[1, 2], c2).unwrap() {
            assert!(row.rel_err < 0.05, "{row:?}");
        }
        let zero = vec![vec![0.0, 0.0]; 10];
        assert!(characteristic_check(&zero, &[2], 0.0).unwrap()[0].modulus == 1.0);
    }

    #[test]
    fn overlap_decays_with_gap() {
        let f = frame();
        assert!((fast_phase_overlap(&f, 1e-4, 0.0).unwrap() - 1.0).abs() < 1e-10);
        let o = close_offsets(&f, 1e-4, 3, 0.1).unwrap();
        assert_eq!(o.len(), 3);
        assert!(o[1] == 0.0 && (o[0] + o[2]).abs() < 1e-15 && o[2] > 0.0);
        assert!(fast_phase_overlap(&f, 1e-4, o[2]).unwrap().abs() <= 0.1);
        // gap puts neighbouring turning points one Airy length apart
        let k0 = 2.0 * f.k * f.k / (f.gamma.powf(2.0 / 3.0) * f.omega);
        assert!(o[2] * k0 * 1e-4f64.powf(-1.0 / 6.0) >= 1.0 - 1e-12);
    }

    #[test]
    fn structure_fit_exact() {
        let c = vec![vec![3.0, 2.0, 2.0], vec![2.0, 3.0, 2.0], vec![2.0, 2.0, 3.0]];
        let (v, r) = structure_fit(&c);
        assert!((v - 3.0).abs() < 1e-14 && r < 1e-14);
    }

    #[test]
    fn zero_sigma_ensemble_is_exactly_zero() {
        let f = frame();
        let cfg = EnsembleConfig {
            eps: 1e-2,
            sigma: 0.0,
            offsets: vec![0.0, 1.0],
            model: NoiseModel::default(),
            options: PhaseOptions::default(),
            noise_step: 0.05,
        };
        let run = run_ensemble(&f, &cfg, 100, 0).unwrap();
        assert!(run.samples.iter().flatten().all(|&p| p == 0.0));
        let s = summarize(&run, &cfg.offsets, theory_predictions(&f, 1e-2, 0.0, &cfg.model, 2)).unwrap();
        assert!(s.cov.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn ensemble_is_reproducible() {
        let f = frame();
        let m = NoiseModel::default();
        let cfg = EnsembleConfig {
            eps: 1e-2,
            sigma: calibrate(&f, 1e-2),
            offsets: vec![0.0],
            model: m,
            options: PhaseOptions::default(),
            noise_step: 0.05,
        };
        let a = run_ensemble(&f, &cfg, 100, 42).unwrap();
        let b = run_ensemble(&f, &cfg, 100, 42).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    fn calibrate(f: &TurningPointFrame, eps: f64) -> f64 {
        crate::noise::calibrate_sigma(eps, 1.0, f, &NoiseModel::default()).unwrap()
    }
}
