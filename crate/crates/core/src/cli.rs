//! Command-line driver: subcommands, artifact directories and gates.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, SigmaPolicy};
use crate::geometry::TurningPointFrame;
use crate::noise::calibrate_sigma;
use crate::pulse::{
    limit_envelope, node_refinement, pressure_t_grid, pulse_solver, reflected_pressure, run_pulse_ensemble,
    source_amplitudes, stabilization_metrics, synthesize_envelope, PulseSpec,
};
use crate::stats::{
    characteristic_check, close_offsets, gaussianity_diagnostics, realization, run_ensemble, summarize,
    theory_predictions, upsilon2, variance_ladder, EnsembleConfig,
};
use crate::verify::{
    airy_wronskian, eigenfunction_suite, propagator_suite, regime_suite, trace_detail, trace_suite,
    travel_dispersion_suite, wrap_angle, Check,
};
use crate::{Error, Result};

/// Environment variable naming the output root.
pub const OUTPUT_ENV: &str = "TURNWAVE_OUTPUT";

#[derive(Debug, Parser)]
#[command(name = "turnwave", version, about = "Turning-point reflection in a randomly perturbed waveguide")]
pub struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration entry (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output root; the run writes into <root>/<subcommand>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Turning point, travel time, dispersion and the upsilon^2 table.
    Geometry,
    /// Deterministic identity suites and seeded trace comparisons.
    Verify,
    /// One seeded realization with oracle comparison.
    Trace {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Multi-frequency phase statistics.
    Ensemble,
    /// Reflected pulse synthesis and stabilization metrics.
    Pulse,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Geometry => "geometry",
            Command::Verify => "verify",
            Command::Trace { .. } => "trace",
            Command::Ensemble => "ensemble",
            Command::Pulse => "pulse",
        }
    }
}

/// Decimal with 17 significant digits.
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Output directory written under a hidden partial name and renamed on success.
/// Dropped without `finish`, it removes itself.
pub struct Artifacts {
    partial: PathBuf,
    target: PathBuf,
    done: bool,
}

impl Artifacts {
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        let partial = root.join(format!(".{name}.partial"));
        let target = root.join(name);
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
        }
        fs::create_dir_all(&partial)?;
        Ok(Artifacts { partial, target, done: false })
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.text(name, &s)
    }

    pub fn json(&self, name: &str, v: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn text(&self, name: &str, s: &str) -> Result<()> {
        fs::write(self.partial.join(name), s)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.partial, &self.target)?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.partial);
        }
    }
}

/// Outcome of one subcommand.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn sigma_at(cfg: &RunConfig, frame: &TurningPointFrame, eps: f64) -> Result<f64> {
    match cfg.sigma_policy {
        SigmaPolicy::Upsilon => calibrate_sigma(eps, cfg.upsilon2.sqrt(), frame, &cfg.model()),
        SigmaPolicy::Fixed => Ok(cfg.sigma0),
    }
}

/// Resolves the configuration from file, overrides and environment.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Command::Trace { seed: Some(s) } = cli.command {
        cfg.seed = s;
    }
    cfg.validate()?;
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output));
    Ok((cfg, root))
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let (cfg, root) = resolve_config(cli)?;
    let frame = TurningPointFrame::new(&cfg.profile(), cfg.omega)?;
    let art = Artifacts::create(&root, cli.command.name())?;
    art.text("config.resolved", &cfg.render())?;
    let (summary, checks) = match cli.command {
        Command::Geometry => geometry(&cfg, &frame, &art)?,
        Command::Verify => verify(&cfg, &frame, &art)?,
        Command::Trace { .. } => trace(&cfg, &frame, &art)?,
        Command::Ensemble => ensemble(&cfg, &frame, &art)?,
        Command::Pulse => pulse(&cfg, &frame, &art)?,
    };
    let pass = checks.iter().all(|c| c.pass);
    art.csv(
        "gates.csv",
        &["name", "value", "tol", "pass"],
        &checks.iter().map(|c| vec![c.name.clone(), f17(c.value), f17(c.tol), c.pass.to_string()]).collect::<Vec<_>>(),
    )?;
    art.json(
        "summary.json",
        &json!({
            "command": cli.command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed_base": cfg.seed_base,
            "seed": cfg.seed,
            "pass": pass,
            "gates": to_json(&checks),
            "result": summary,
        }),
    )?;
    let dir = art.finish()?;
    Ok(Outcome { dir, checks })
}

fn frame_json(frame: &TurningPointFrame) -> Result<Value> {
    let td = frame.travel_and_dispersion()?;
    let k0 = 2.0 * frame.k * frame.k / (frame.gamma.powf(2.0 / 3.0) * frame.omega);
    Ok(json!({
        "omega": frame.omega, "k": frame.k, "z_t": frame.z_t, "gamma": frame.gamma,
        "theta": frame.theta, "rho": frame.rho, "phi0": frame.phi0,
        "travel_time": td.t, "beta": td.beta, "travel_time_err": td.t_err, "beta_err": td.beta_err,
        "k_cal_0": k0,
    }))
}

fn geometry(cfg: &RunConfig, frame: &TurningPointFrame, art: &Artifacts) -> Result<(Value, Vec<Check>)> {
    let model = cfg.model();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &eps in &cfg.eps_ladder {
        let sigma = sigma_at(cfg, frame, eps)?;
        let u2 = upsilon2(frame, eps, sigma, &model);
        let log = (frame.phi0 / eps).ln();
        rows.push(vec![f17(eps), f17(log), f17(sigma), f17(u2)]);
        table.push(json!({"eps": eps, "log_term": log, "sigma": sigma, "upsilon2": u2}));
    }
    art.csv("upsilon2.csv", &["eps", "log_term", "sigma", "upsilon2"], &rows)?;
    let td = frame.travel_and_dispersion()?;
    art.csv(
        "geometry.csv",
        &["z_t", "gamma", "theta", "rho", "phi0", "travel_time", "beta"],
        &[vec![f17(frame.z_t), f17(frame.gamma), f17(frame.theta), f17(frame.rho), f17(frame.phi0), f17(td.t), f17(td.beta)]],
    )?;
    Ok((json!({"frame": frame_json(frame)?, "upsilon2": table}), Vec::new()))
}

fn verify(cfg: &RunConfig, frame: &TurningPointFrame, art: &Artifacts) -> Result<(Value, Vec<Check>)> {
    let mut checks = vec![airy_wronskian(1000)?];
    for eps in [1e-2, 1e-3] {
        checks.extend(propagator_suite(frame, eps, 200)?);
    }
    for eps in [1e-3, 1e-4] {
        checks.extend(regime_suite(frame, eps)?);
    }
    checks.push(eigenfunction_suite(&frame.profile, &[0.5 * (frame.profile.z_min + frame.z_t), frame.z_t, 0.0])?);
    checks.extend(travel_dispersion_suite(frame)?);
    let eps = cfg.verify_eps;
    let sigma = sigma_at(cfg, frame, eps)?;
    let seeds: Vec<u64> = (0..cfg.verify_seeds as u64).map(|i| cfg.seed_base.wrapping_add(i)).collect();
    eprintln!("verify: {} seeded traces at eps = {eps:e}", seeds.len());
    let suite = trace_suite(frame, eps, sigma, &cfg.model(), &seeds)?;
    checks.extend(suite.checks.iter().cloned());
    art.csv(
        "traces.csv",
        &["seed", "psi", "psi_amplitude", "psi_oracle", "max_flux", "oracle_modulus", "left_max", "zb_doubling"],
        &suite
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    f17(r.psi),
                    f17(r.psi_amplitude),
                    f17(r.psi_oracle),
                    f17(r.max_flux),
                    f17(r.oracle_modulus),
                    f17(r.left_max),
                    f17(r.zb_doubling),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    Ok((json!({"frame": frame_json(frame)?, "trace_eps": eps, "trace_sigma": sigma}), checks))
}

fn trace(cfg: &RunConfig, frame: &TurningPointFrame, art: &Artifacts) -> Result<(Value, Vec<Check>)> {
    let eps = cfg.eps;
    let sigma = sigma_at(cfg, frame, eps)?;
    let (row, tr) = trace_detail(frame, eps, sigma, &cfg.model(), cfg.seed, true)?;
    art.csv(
        "trace.csv",
        &["zeta", "psi"],
        &tr.zeta.iter().zip(&tr.psi).map(|(z, p)| vec![f17(*z), f17(*p)]).collect::<Vec<_>>(),
    )?;
    let checks = vec![
        Check::below("flux |a|^2 - |b|^2", row.max_flux, 1e-8),
        Check::below("oracle ||R| - 1|", (row.oracle_modulus - 1.0).abs(), 1e-5),
        Check::below("oracle vs phase equation (rad)", wrap_angle(row.psi_oracle - row.psi).abs(), 1e-3),
        Check::below("left-side phase", row.left_max, 1e-4),
        Check::below("boundary doubling (rad)", row.zb_doubling, 1e-6),
    ];
    Ok((json!({"eps": eps, "sigma": sigma, "row": to_json(&row)}), checks))
}

fn ensemble(cfg: &RunConfig, frame: &TurningPointFrame, art: &Artifacts) -> Result<(Value, Vec<Check>)> {
    let eps = cfg.eps;
    let model = cfg.model();
    let sigma = sigma_at(cfg, frame, eps)?;
    let offsets = match &cfg.offsets {
        Some(o) => o.clone(),
        None => close_offsets(frame, eps, cfg.m, cfg.overlap_threshold)?,
    };
    let m = offsets.len();
    let ecfg = EnsembleConfig { eps, sigma, offsets: offsets.clone(), model, options: cfg.phase_options(), noise_step: cfg.noise_step };
    eprintln!("ensemble: n = {} at eps = {eps:e}, offsets {offsets:?}", cfg.n);
    let run = run_ensemble(frame, &ecfg, cfg.n, cfg.seed_base)?;
    let th = theory_predictions(frame, eps, sigma, &model, m);
    let s = summarize(&run, &offsets, th.clone())?;
    let ms: Vec<usize> = [1, 2].into_iter().filter(|&k| k <= m).collect();
    let chars = characteristic_check(&run.samples, &ms, s.upsilon2_hat)?;

    let mut head = vec!["seed".to_string()];
    head.extend((0..m).map(|j| format!("psi_{j}")));
    let head: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
    art.csv(
        "samples.csv",
        &head,
        &run.seeds
            .iter()
            .zip(&run.samples)
            .map(|(sd, v)| std::iter::once(sd.to_string()).chain(v.iter().map(|x| f17(*x))).collect())
            .collect::<Vec<_>>(),
    )?;
    let mut cov_rows = Vec::new();
    for i in 0..m {
        for j in 0..m {
            cov_rows.push(vec![
                i.to_string(),
                j.to_string(),
                f17(offsets[i]),
                f17(offsets[j]),
                f17(s.cov[i][j]),
                f17(s.corr[i][j]),
                f17(s.corr_se[i][j]),
                f17(th.cov[i][j]),
            ]);
        }
    }
    art.csv("covariance.csv", &["i", "j", "w_i", "w_j", "cov", "corr", "corr_se", "theory_cov"], &cov_rows)?;
    art.csv(
        "characteristic.csv",
        &["m", "modulus", "target", "rel_err"],
        &chars.iter().map(|c| vec![c.m.to_string(), f17(c.modulus), f17(c.target), f17(c.rel_err)]).collect::<Vec<_>>(),
    )?;

    let mut checks = Vec::new();
    let centre = (0..m).min_by(|&a, &b| offsets[a].abs().total_cmp(&offsets[b].abs())).unwrap();
    let u2 = th.upsilon2;
    if u2 > 0.0 {
        let v = s.cov[centre][centre] / u2;
        checks.push(Check { name: "variance / upsilon^2 in [0.75, 1.25]".into(), value: v, tol: 0.25, pass: (v - 1.0).abs() <= 0.25 });
    }
    for i in 0..m {
        for j in i + 1..m {
            checks.push(Check::below(format!("|corr({i},{j}) - 2/3|"), (s.corr[i][j] - 2.0 / 3.0).abs(), 0.10));
        }
    }
    if run.samples.len() >= 1000 {
        for j in 0..m {
            let col: Vec<f64> = run.samples.iter().map(|v| v[j]).collect();
            let g = gaussianity_diagnostics(&col)?;
            checks.push(Check::below(format!("|skewness_{j}| / SE"), g.skew.abs() / g.skew_se, 5.0));
            checks.push(Check::below(format!("|excess kurtosis_{j}| / SE"), g.exkurt.abs() / g.exkurt_se, 5.0));
        }
    }
    for c in &chars {
        checks.push(Check::below(format!("characteristic function m = {}", c.m), c.rel_err, 0.10));
    }
    let mut ladder_json = Value::Null;
    if cfg.ladder {
        eprintln!("ensemble: variance ladder over {:?}", cfg.eps_ladder);
        let lad = variance_ladder(frame, &ecfg, &cfg.eps_ladder, sigma, cfg.ladder_n, cfg.seed_base)?;
        art.csv(
            "ladder.csv",
            &["eps", "log_term", "var", "var_se", "upsilon2"],
            &lad.rows.iter().map(|r| vec![f17(r.eps), f17(r.log_term), f17(r.var), f17(r.var_se), f17(r.upsilon2)]).collect::<Vec<_>>(),
        )?;
        checks.push(Check::below("ladder slope rel err", lad.slope_rel_err, 0.20));
        ladder_json = to_json(&lad);
    }
    Ok((
        json!({"eps": eps, "sigma": sigma, "offsets": offsets, "summary": to_json(&s), "characteristic": to_json(&chars),
               "left_max": run.left_max, "ladder": ladder_json}),
        checks,
    ))
}

fn pulse(cfg: &RunConfig, frame: &TurningPointFrame, art: &Artifacts) -> Result<(Value, Vec<Check>)> {
    let eps = cfg.eps;
    let model = cfg.model();
    let sigma = sigma_at(cfg, frame, eps)?;
    let spec = PulseSpec::new(cfg.omega, cfg.bandwidth, cfg.r_star);
    let src = source_amplitudes(&spec, frame)?;
    let ecfg = EnsembleConfig { eps, sigma, offsets: Vec::new(), model, options: cfg.phase_options(), noise_step: cfg.noise_step };
    let td = frame.travel_and_dispersion()?;
    let u2 = upsilon2(frame, eps, sigma, &model);
    let t = spec.default_t_grid();

    eprintln!("pulse: node refinement on seed {}", cfg.seed_base);
    let n0 = cfg.pulse_nodes;
    let refinement = node_refinement(frame, &spec, &ecfg, cfg.seed_base, &[n0, 2 * n0])?;
    eprintln!("pulse: {} envelopes at eps = {eps:e} with {n0} phase nodes", cfg.pulse_n);
    let run = run_pulse_ensemble(frame, &spec, &ecfg, n0, cfg.pulse_n, cfg.seed_base)?;
    let dispersed = limit_envelope(&spec, 0.0, td.beta, td.t, 0.0, &t);
    let limit = limit_envelope(&spec, u2, td.beta, td.t, 0.0, &t);
    let met = stabilization_metrics(&spec, &run.envelopes, &dispersed, u2)?;

    let n = run.envelopes.len() as f64;
    let mut env_rows = Vec::new();
    for k in 0..t.len() {
        let mut mods: Vec<f64> = run.envelopes.iter().map(|e| e.values[k].norm()).collect();
        mods.sort_by(|a, b| a.total_cmp(b));
        let med = mods[mods.len() / 2];
        let mean: num_complex::Complex64 = run.envelopes.iter().map(|e| e.values[k]).sum::<num_complex::Complex64>() / n;
        let d = dispersed.values[k];
        env_rows.push(vec![
            f17(t[k]),
            f17(d.re),
            f17(d.im),
            f17(d.norm()),
            f17(limit.values[k].norm()),
            f17(med),
            f17(mean.re),
            f17(mean.im),
            f17(mean.norm()),
        ]);
    }
    art.csv(
        "envelopes.csv",
        &["t", "dispersed_re", "dispersed_im", "dispersed_abs", "limit_abs", "median_abs", "mean_re", "mean_im", "mean_abs"],
        &env_rows,
    )?;
    let ip = met.peak_index;
    art.csv(
        "peaks.csv",
        &["seed", "abs_at_peak", "arg_at_peak", "max_abs"],
        &run.seeds
            .iter()
            .zip(&run.envelopes)
            .map(|(s, e)| {
                let v = e.values[ip];
                vec![s.to_string(), f17(v.norm()), f17(v.arg()), f17(e.peak().1)]
            })
            .collect::<Vec<_>>(),
    )?;
    let first = &run.envelopes[0];
    art.csv(
        "envelope_first.csv",
        &["t", "re", "im", "abs"],
        &first.t.iter().zip(&first.values).map(|(t, v)| vec![f17(*t), f17(v.re), f17(v.im), f17(v.norm())]).collect::<Vec<_>>(),
    )?;

    // pressure trace of the first realization on a carrier-resolving grid
    let (w, solver) = pulse_solver(frame, &spec, eps, n0, &ecfg.options)?;
    let (psi, _) = realization(&solver, &ecfg, cfg.seed_base)?;
    let tp = pressure_t_grid(&spec, eps, t[0], *t.last().unwrap(), 8);
    let fine = synthesize_envelope(&spec, td.t, td.beta, &w, &psi, &tp)?;
    let p = reflected_pressure(&spec, frame, eps, &fine, cfg.r_star)?;
    art.csv("pressure.csv", &["time", "pressure"], &p.iter().map(|(a, b)| vec![f17(*a), f17(*b)]).collect::<Vec<_>>())?;

    let checks = vec![
        Check::below("peak modulus relative std", met.peak_rel_std, 0.10),
        Check::below("median peak vs damped dispersed peak, rel err", met.median_peak_rel_err, 0.15),
        Check::below("peak phase variance vs 2 upsilon^2 / 3, rel err", met.phase_variance_rel_err, 0.20),
        Check::below("mean envelope peak vs exp(-upsilon^2/2) dispersed peak, rel err", met.mean_peak_rel_err, 0.15),
        Check { name: "envelope bound violations".into(), value: met.bound_violations as f64, tol: 0.0, pass: met.bound_violations == 0 },
    ];
    Ok((
        json!({"eps": eps, "sigma": sigma, "upsilon2": u2, "travel_time": td.t, "beta": td.beta, "c_f": src.c_f,
               "phase_nodes": n0, "node_refinement": refinement, "failures": run.failures.len(),
               "metrics": to_json(&met)}),
        checks,
    ))
}
