//! Run configuration: a `key = value` text file, one entry per line, `#` starts a comment.
//!
//! Keys (defaults in brackets):
//!
//! | key | meaning |
//! |---|---|
//! | `profile` | `linear` or `tanh` [linear] |
//! | `profile_coeffs` | polynomial coefficients of D(z), comma separated [1.5 pi, 0.5 pi] |
//! | `profile_tanh` | `mid, amp, center, scale` for D = mid + amp tanh((z - center)/scale) |
//! | `z_min` | left end of the domain [-2.8] |
//! | `omega` | carrier frequency [1] |
//! | `eps` | scale ratio for trace, ensemble and pulse runs [1e-4] |
//! | `eps_ladder` | eps values for the geometry table and variance ladder [1e-2, 1e-3, 1e-4] |
//! | `sigma_policy` | `upsilon` (calibrate to `upsilon2` at each eps) or `fixed` (use `sigma0`) [upsilon] |
//! | `upsilon2`, `sigma0` | target upsilon^2 [1], fixed noise level [0.1] |
//! | `kernel` | `gaussian` or `exponential_smoothed` [gaussian] |
//! | `clip` | `none` or the clipper constant c [none] |
//! | `form` | `exact` or `simplified` [exact] |
//! | `include_g`, `wkb_correction` | second-order drift, Q''/Q term [true, false] |
//! | `step_scale`, `eta_b`, `noise_step` | solver step factor, boundary eta, path grid step [1, -8, 0.05] |
//! | `offsets` | `auto` or a comma separated list [auto] |
//! | `m`, `overlap_threshold` | frequency count and overlap bound for `auto` [3, 0.1] |
//! | `n`, `seed_base`, `seed` | ensemble size, first ensemble seed, trace seed [4000, 1000, 42] |
//! | `ladder`, `ladder_n` | run the variance ladder, its ensemble size [false, 4000] |
//! | `verify_eps`, `verify_seeds` | eps and path count of the trace suite [1e-3, 20] |
//! | `bandwidth`, `r_star` | pulse bandwidth B and source cross-range [1, 0] |
//! | `pulse_n`, `pulse_nodes` | pulse ensemble size and phase nodes [500, 64] |
//! | `output` | output root (overridden by `--out` and `TURNWAVE_OUTPUT`) [turnwave-out] |

use std::f64::consts::PI;
use std::fmt::Write;

use serde::Serialize;

use crate::geometry::WaveguideProfile;
use crate::noise::{Kernel, NoiseModel};
use crate::reflection::{PhaseForm, PhaseOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProfileKind {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SigmaPolicy {
    Upsilon,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub profile: ProfileKind,
    pub profile_coeffs: Vec<f64>,
    pub profile_tanh: [f64; 4],
    pub z_min: f64,
    pub omega: f64,
    pub eps: f64,
    pub eps_ladder: Vec<f64>,
    pub sigma_policy: SigmaPolicy,
    pub upsilon2: f64,
    pub sigma0: f64,
    pub kernel: Kernel,
    pub clip: Option<f64>,
    pub form: PhaseForm,
    pub include_g: bool,
    pub wkb_correction: bool,
    pub step_scale: f64,
    pub eta_b: f64,
    pub noise_step: f64,
    pub offsets: Option<Vec<f64>>,
    pub m: usize,
    pub overlap_threshold: f64,
    pub n: usize,
    pub seed_base: u64,
    pub seed: u64,
    pub ladder: bool,
    pub ladder_n: usize,
    pub verify_eps: f64,
    pub verify_seeds: usize,
    pub bandwidth: f64,
    pub r_star: f64,
    pub pulse_n: usize,
    pub pulse_nodes: usize,
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: ProfileKind::Linear,
            profile_coeffs: vec![1.5 * PI, 0.5 * PI],
            profile_tanh: [3.2, 1.6, -1.2, 0.9],
            z_min: -2.8,
            omega: 1.0,
            eps: 1e-4,
            eps_ladder: vec![1e-2, 1e-3, 1e-4],
            sigma_policy: SigmaPolicy::Upsilon,
            upsilon2: 1.0,
            sigma0: 0.1,
            kernel: Kernel::Gaussian,
            clip: None,
            form: PhaseForm::Exact,
            include_g: true,
            wkb_correction: false,
            step_scale: 1.0,
            eta_b: -8.0,
            noise_step: 0.05,
            offsets: None,
            m: 3,
            overlap_threshold: 0.1,
            n: 4000,
            seed_base: 1000,
            seed: 42,
            ladder: false,
            ladder_n: 4000,
            verify_eps: 1e-3,
            verify_seeds: 20,
            bandwidth: 1.0,
            r_star: 0.0,
            pulse_n: 500,
            pulse_nodes: 64,
            output: "turnwave-out".into(),
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| num(key, x)).collect()
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Defaults overridden by the entries of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", i + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "profile" => {
                self.profile = match v {
                    "linear" => ProfileKind::Linear,
                    "tanh" => ProfileKind::Tanh,
                    _ => return Err(Error::Config(format!("profile: unknown kind '{v}'"))),
                }
            }
            "profile_coeffs" => self.profile_coeffs = list(key, v)?,
            "profile_tanh" => {
                let l = list(key, v)?;
                self.profile_tanh = l
                    .try_into()
                    .map_err(|_| Error::Config("profile_tanh: expected mid, amp, center, scale".into()))?;
            }
            "z_min" => self.z_min = num(key, v)?,
            "omega" => self.omega = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "eps_ladder" => self.eps_ladder = list(key, v)?,
            "sigma_policy" => {
                self.sigma_policy = match v {
                    "upsilon" => SigmaPolicy::Upsilon,
                    "fixed" => SigmaPolicy::Fixed,
                    _ => return Err(Error::Config(format!("sigma_policy: expected upsilon or fixed, got '{v}'"))),
                }
            }
            "upsilon2" => self.upsilon2 = num(key, v)?,
            "sigma0" => self.sigma0 = num(key, v)?,
            "kernel" => {
                self.kernel = match v {
                    "gaussian" => Kernel::Gaussian,
                    "exponential_smoothed" => Kernel::ExponentialSmoothed,
                    _ => return Err(Error::Config(format!("kernel: unknown kernel '{v}'"))),
                }
            }
            "clip" => self.clip = if v == "none" { None } else { Some(num(key, v)?) },
            "form" => {
                self.form = match v {
                    "exact" => PhaseForm::Exact,
                    "simplified" => PhaseForm::Simplified,
                    _ => return Err(Error::Config(format!("form: expected exact or simplified, got '{v}'"))),
                }
            }
            "include_g" => self.include_g = boolean(key, v)?,
            "wkb_correction" => self.wkb_correction = boolean(key, v)?,
            "step_scale" => self.step_scale = num(key, v)?,
            "eta_b" => self.eta_b = num(key, v)?,
            "noise_step" => self.noise_step = num(key, v)?,
            "offsets" => self.offsets = if v == "auto" { None } else { Some(list(key, v)?) },
            "m" => self.m = int(key, v)?,
            "overlap_threshold" => self.overlap_threshold = num(key, v)?,
            "n" => self.n = int(key, v)?,
            "seed_base" => self.seed_base = int(key, v)?,
            "seed" => self.seed = int(key, v)?,
            "ladder" => self.ladder = boolean(key, v)?,
            "ladder_n" => self.ladder_n = int(key, v)?,
            "verify_eps" => self.verify_eps = num(key, v)?,
            "verify_seeds" => self.verify_seeds = int(key, v)?,
            "bandwidth" => self.bandwidth = num(key, v)?,
            "r_star" => self.r_star = num(key, v)?,
            "pulse_n" => self.pulse_n = int(key, v)?,
            "pulse_nodes" => self.pulse_nodes = int(key, v)?,
            "output" => self.output = v.to_string(),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value; `parse(render())` reproduces the config exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("profile", match self.profile { ProfileKind::Linear => "linear", ProfileKind::Tanh => "tanh" }.into());
        put("profile_coeffs", join(&self.profile_coeffs));
        put("profile_tanh", join(&self.profile_tanh));
        put("z_min", format!("{:?}", self.z_min));
        put("omega", format!("{:?}", self.omega));
        put("eps", format!("{:?}", self.eps));
        put("eps_ladder", join(&self.eps_ladder));
        put("sigma_policy", match self.sigma_policy { SigmaPolicy::Upsilon => "upsilon", SigmaPolicy::Fixed => "fixed" }.into());
        put("upsilon2", format!("{:?}", self.upsilon2));
        put("sigma0", format!("{:?}", self.sigma0));
        put(
            "kernel",
            match self.kernel { Kernel::Gaussian => "gaussian", Kernel::ExponentialSmoothed => "exponential_smoothed" }.into(),
        );
        put("clip", self.clip.map_or("none".into(), |c| format!("{c:?}")));
        put("form", match self.form { PhaseForm::Exact => "exact", PhaseForm::Simplified => "simplified" }.into());
        put("include_g", self.include_g.to_string());
        put("wkb_correction", self.wkb_correction.to_string());
        put("step_scale", format!("{:?}", self.step_scale));
        put("eta_b", format!("{:?}", self.eta_b));
        put("noise_step", format!("{:?}", self.noise_step));
        put("offsets", self.offsets.as_ref().map_or("auto".into(), |o| join(o)));
        put("m", self.m.to_string());
        put("overlap_threshold", format!("{:?}", self.overlap_threshold));
        put("n", self.n.to_string());
        put("seed_base", self.seed_base.to_string());
        put("seed", self.seed.to_string());
        put("ladder", self.ladder.to_string());
        put("ladder_n", self.ladder_n.to_string());
        put("verify_eps", format!("{:?}", self.verify_eps));
        put("verify_seeds", self.verify_seeds.to_string());
        put("bandwidth", format!("{:?}", self.bandwidth));
        put("r_star", format!("{:?}", self.r_star));
        put("pulse_n", self.pulse_n.to_string());
        put("pulse_nodes", self.pulse_nodes.to_string());
        put("output", self.output.clone());
        s
    }

    pub fn profile(&self) -> WaveguideProfile {
        match self.profile {
            ProfileKind::Linear => WaveguideProfile {
                law: crate::geometry::WidthLaw::Polynomial { coeffs: self.profile_coeffs.clone() },
                z_min: self.z_min,
                z_max: 0.0,
            },
            ProfileKind::Tanh => {
                let [mid, amp, center, scale] = self.profile_tanh;
                WaveguideProfile::smooth_tanh(mid, amp, center, scale, self.z_min)
            }
        }
    }

    pub fn model(&self) -> NoiseModel {
        NoiseModel { kernel: self.kernel, clip: self.clip }
    }

    pub fn phase_options(&self) -> PhaseOptions {
        PhaseOptions {
            form: self.form,
            include_g: self.include_g,
            wkb_correction: self.wkb_correction,
            step_scale: self.step_scale,
            eta_b: self.eta_b,
            record: false,
            ..PhaseOptions::default()
        }
    }

    /// Constraint checks that do not need the geometry.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |name: &str, e: f64| -> Result<()> {
            if e > 0.0 && e < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {e}")))
            }
        };
        in_unit("eps", self.eps)?;
        in_unit("verify_eps", self.verify_eps)?;
        for &e in &self.eps_ladder {
            in_unit("eps_ladder entry", e)?;
        }
        if !(self.omega > 0.0) {
            return Err(Error::Config(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.upsilon2 >= 0.0 && self.sigma0 >= 0.0) {
            return Err(Error::Config("upsilon2 and sigma0 must be non-negative".into()));
        }
        if !(self.noise_step > 0.0 && self.noise_step <= 0.25) {
            return Err(Error::Config(format!("noise_step must lie in (0, 0.25], got {}", self.noise_step)));
        }
        if let Some(o) = &self.offsets {
            if o.is_empty() {
                return Err(Error::Config("offsets list is empty".into()));
            }
        } else if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.profile == ProfileKind::Linear && self.profile_coeffs.is_empty() {
            return Err(Error::Config("profile_coeffs is empty".into()));
        }
        if self.verify_seeds == 0 {
            return Err(Error::Config("verify_seeds must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let c = RunConfig::parse("# run\neps = 1e-3  # coarse\noffsets = -0.5, 0, 0.5\nclip = 2\nladder = true\n").unwrap();
        assert_eq!(c.eps, 1e-3);
        assert_eq!(c.offsets, Some(vec![-0.5, 0.0, 0.5]));
        assert_eq!(c.clip, Some(2.0));
        assert!(c.ladder);
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("eps 1").is_err());
        assert!(RunConfig::parse("n = -3").is_err());
        assert!(RunConfig::parse("include_g = yes").is_err());
        let mut c = RunConfig::default();
        c.eps = 1.5;
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
