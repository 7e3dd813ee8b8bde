//! One function per batch command. Each computes in parallel and writes its
//! files from the calling thread.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use stray::environment::{serialize_environment, Waveguide};
use stray::fronts::{
    extract_front, receiver_time_series, trace_source_fan, write_arrivals_csv, write_fronts_csv, write_receiver_csv,
    EigenrayOptions, Fan, Front, FrontField, ReceiverOptions,
};
use stray::modes::{write_dispersion_csv, DirectDispersion, Dispersion};
use stray::raytrace::{write_ray_csv, TraceStatus};
use stray::source::{validate_coherence, SourceSurface};
use stray::variational::{detect_caustics, write_caustics_csv};
use stray::{Error, Result};

use crate::config::{Command, RunConfig};

/// A file written by a command.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct OutputFile {
    pub file: String,
    pub rows: usize,
}

/// Everything a command reports back to the driver.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub outputs: Vec<OutputFile>,
    pub counts: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    /// Set when the command ran but the model failed a validation gate.
    pub validation_failed: bool,
}

impl Outcome {
    fn count(&mut self, key: &str, v: impl Into<Value>) {
        self.counts.insert(key.to_string(), v.into());
    }

    fn write_csv(
        &mut self,
        dir: &Path,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<usize>,
    ) -> Result<()> {
        let path: PathBuf = dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        let rows = f(&mut w)?;
        w.flush()?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            rows,
        });
        Ok(())
    }
}

/// Failure classes mapped to exit codes by the driver.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or a model that violates an invariant.
    Validation(Error),
    Runtime(Error),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "validation failed: {e}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

struct Model {
    env: Waveguide<f64>,
    disp: Option<Box<dyn Dispersion<f64>>>,
    source: Option<SourceSurface<f64>>,
}

fn build(cfg: &RunConfig, cmd: Command) -> Result<Model> {
    cfg.require(cmd)?;
    let env = cfg.waveguide()?;
    if cmd == Command::Modes {
        return Ok(Model {
            env,
            disp: None,
            source: None,
        });
    }
    let disp = cfg.dispersion(&env)?;
    let source = cfg.source(disp.as_ref())?;
    Ok(Model {
        env,
        disp: Some(disp),
        source: Some(source),
    })
}

/// Builds the model (validation phase) and runs `cmd` (runtime phase).
pub fn execute(cfg: &RunConfig, cmd: Command, out_dir: &Path) -> std::result::Result<Outcome, Failure> {
    let model = build(cfg, cmd).map_err(Failure::Validation)?;
    let mut outcome = Outcome::default();
    outcome.warnings.extend(model.env.warnings().iter().cloned());
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Runtime(e.into()))?;
    let res = match cmd {
        Command::Validate => validate(&model, &mut outcome),
        Command::Modes => modes(cfg, &model, out_dir, &mut outcome),
        Command::Trace => trace(cfg, &model, out_dir, &mut outcome),
        Command::Caustics => caustics(cfg, &model, out_dir, &mut outcome),
        Command::Fronts => fronts(cfg, &model, out_dir, &mut outcome),
        Command::Receiver => receiver(cfg, &model, out_dir, &mut outcome),
    };
    res.map_err(Failure::Runtime)?;
    Ok(outcome)
}

fn parts(model: &Model) -> (&dyn Dispersion<f64>, &SourceSurface<f64>) {
    (
        model.disp.as_deref().expect("dispersion built for this command"),
        model.source.as_ref().expect("source built for this command"),
    )
}

/// Coherence check shared by every source-driven command; returns whether it passed.
fn coherence(model: &Model, out: &mut Outcome, echo: bool) -> Result<bool> {
    let (disp, source) = parts(model);
    let report = validate_coherence(source, disp)?;
    if echo {
        for line in report.lines() {
            println!("coherence: {line}");
        }
    }
    out.count("coherence_max_residual", report.max_residual);
    out.count(
        "coherence_failing_row",
        report.failing_row.map(Value::from).unwrap_or(Value::Null),
    );
    out.count("coherence_pass", report.pass);
    if !report.pass && !echo {
        out.warnings.push(format!(
            "source fails the coherence check (max residual {:.3e}, row {})",
            report.max_residual,
            report.failing_row.unwrap_or("det")
        ));
    }
    Ok(report.pass)
}

fn validate(model: &Model, out: &mut Outcome) -> Result<()> {
    print!("{}", serialize_environment(&model.env));
    let (disp, source) = parts(model);
    println!(
        "source: {} mu [{}, {}] nu [{}, {}] mode {}",
        source.family_name(),
        source.mu[0],
        source.mu[1],
        source.nu[0],
        source.nu[1],
        disp.mode_index()
    );
    if !coherence(model, out, true)? {
        out.validation_failed = true;
    }
    Ok(())
}

fn modes(cfg: &RunConfig, model: &Model, dir: &Path, out: &mut Outcome) -> Result<()> {
    let m = cfg.modes.as_ref().expect("modes section checked");
    let k0s: Vec<f64> = (0..m.n_k0)
        .map(|i| m.k0[0] + (m.k0[1] - m.k0[0]) * i as f64 / (m.n_k0 - 1) as f64)
        .collect();
    for &l in &m.modes {
        let disp = DirectDispersion::new(model.env.clone(), l);
        let evals: Vec<Result<[f64; 4]>> = k0s
            .par_iter()
            .map(|&k| disp.eval(m.position, k).map(|p| [k, p.q, p.dq_dk0, p.v]))
            .collect();
        let mut rows = Vec::new();
        let mut below = 0usize;
        for e in evals {
            match e {
                Ok(r) => rows.push(r),
                Err(Error::BelowCutoff { .. }) => below += 1,
                Err(e) => return Err(e),
            }
        }
        if below > 0 {
            out.warnings
                .push(format!("mode {l}: {below} k0 samples below cutoff omitted"));
        }
        let monotone = rows.windows(2).all(|w| w[1][1] > w[0][1]);
        if !monotone {
            out.warnings.push(format!("mode {l}: q(k0) is not increasing"));
        }
        out.count(&format!("mode{l}_monotone"), monotone);
        out.count(&format!("mode{l}_below_cutoff"), below);
        out.write_csv(dir, &format!("dispersion_mode{l}.csv"), |w| {
            write_dispersion_csv(w, &rows)
        })?;
    }
    Ok(())
}

fn fan(cfg: &RunConfig, model: &Model, out: &mut Outcome) -> Fan<f64> {
    let (disp, source) = parts(model);
    let tau_max = cfg.run.tau_max.expect("tau_max checked");
    let fan = trace_source_fan(source, disp, cfg.run.n_mu, cfg.run.n_nu, tau_max, &cfg.tolerances());
    for (mu, nu, e) in &fan.errors {
        out.warnings.push(format!("ray (mu {mu}, nu {nu}) failed: {e}"));
    }
    out.count("rays_traced", fan.traced().count());
    out.count("rays_failed", fan.errors.len());
    fan
}

fn trace(cfg: &RunConfig, model: &Model, dir: &Path, out: &mut Outcome) -> Result<()> {
    coherence(model, out, false)?;
    let fan = fan(cfg, model, out);
    let mut left = 0usize;
    let mut h_max = 0.0f64;
    for (i, p) in fan.paths.iter().enumerate() {
        let Some(vp) = p else { continue };
        if matches!(vp.path.status, TraceStatus::LeftDomain { .. }) {
            left += 1;
        }
        h_max = h_max.max(vp.path.max_hamiltonian());
        out.write_csv(dir, &format!("ray_{i:04}.csv"), |w| write_ray_csv(w, &vp.path))?;
    }
    out.count("rays_left_domain", left);
    out.count("max_hamiltonian_residual", h_max);
    Ok(())
}

fn caustics(cfg: &RunConfig, model: &Model, dir: &Path, out: &mut Outcome) -> Result<()> {
    coherence(model, out, false)?;
    let (disp, _) = parts(model);
    let fan = fan(cfg, model, out);
    let rays: Vec<_> = fan.traced().collect();
    let found: Vec<Result<Vec<_>>> = rays.par_iter().map(|vp| detect_caustics(vp, disp)).collect();
    let mut rows = Vec::new();
    let mut rays_with = 0usize;
    for (vp, r) in rays.iter().zip(found) {
        let cs = r?;
        if !cs.is_empty() {
            rays_with += 1;
        }
        rows.extend(cs.into_iter().map(|c| (vp.path.mu, vp.path.nu, c)));
    }
    let first = rows.iter().map(|(_, _, c)| c.tau).fold(f64::INFINITY, f64::min);
    out.count("caustics", rows.len());
    out.count("rays_with_caustics", rays_with);
    out.count(
        "first_caustic_tau",
        if first.is_finite() { json!(first) } else { Value::Null },
    );
    out.write_csv(dir, "caustics.csv", |w| write_caustics_csv(w, &rows))?;
    Ok(())
}

fn fronts(cfg: &RunConfig, model: &Model, dir: &Path, out: &mut Outcome) -> Result<()> {
    coherence(model, out, false)?;
    let (disp, _) = parts(model);
    let fan = fan(cfg, model, out);
    let mut all = Vec::new();
    for spec in &cfg.fronts {
        let field = FrontField::parse(&spec.field)?;
        for &level in &spec.levels {
            let mut merged = Front {
                field,
                level,
                branches: Vec::new(),
                omitted: Vec::new(),
            };
            for i_nu in 0..fan.nus.len() {
                let f = extract_front(&fan.row(i_nu), disp, field, level);
                merged.branches.extend(f.branches);
                merged.omitted.extend(f.omitted);
            }
            all.push(merged);
        }
    }
    let samples: usize = all.iter().map(Front::len).sum();
    let branches: usize = all.iter().map(|f| f.branches.len()).sum();
    let omitted: usize = all.iter().map(|f| f.omitted.len()).sum();
    out.count("front_samples", samples);
    out.count("front_branches", branches);
    out.count("front_rays_omitted", omitted);
    out.write_csv(dir, "fronts.csv", |w| write_fronts_csv(w, &all))?;
    Ok(())
}

fn receiver(cfg: &RunConfig, model: &Model, dir: &Path, out: &mut Outcome) -> Result<()> {
    coherence(model, out, false)?;
    let (disp, source) = parts(model);
    let r = cfg.receiver.as_ref().expect("receiver section checked");
    let rho: Vec<f64> = if r.n_rho == 1 {
        vec![r.rho[0]]
    } else {
        (0..r.n_rho)
            .map(|i| r.rho[0] + (r.rho[1] - r.rho[0]) * i as f64 / (r.n_rho - 1) as f64)
            .collect()
    };
    let opts = ReceiverOptions {
        n_mu: r.n_mu.unwrap_or(cfg.run.n_mu),
        n_nu: r.n_nu.unwrap_or(cfg.run.n_nu),
        epsilon: r.epsilon,
        eigen: EigenrayOptions {
            tol: cfg.tolerances(),
            max_iter: r.max_iter,
            residual_rel: r.residual_rel,
            ..EigenrayOptions::default()
        },
    };
    let series = receiver_time_series(source, disp, r.position, &rho, &opts)?;
    let arrivals: usize = series.rows.iter().map(|r| r.arrivals.len()).sum();
    let caustic: usize = series
        .rows
        .iter()
        .flat_map(|r| &r.arrivals)
        .filter(|a| a.caustic)
        .count();
    let failed: usize = series.rows.iter().map(|r| r.failed_seeds).sum();
    out.count("times", series.rows.len());
    out.count("arrivals", arrivals);
    out.count("caustic_arrivals", caustic);
    out.count("failed_seeds", failed);
    out.count("gaps", series.gaps.len());
    out.count("fan_errors", series.fan_errors);
    for g in &series.gaps {
        out.warnings
            .push(format!("no arrivals for rho in [{}, {}]", g[0], g[1]));
    }
    out.write_csv(dir, "receiver.csv", |w| write_receiver_csv(w, &series))?;
    out.write_csv(dir, "receiver_arrivals.csv", |w| write_arrivals_csv(w, &series))?;
    Ok(())
}
