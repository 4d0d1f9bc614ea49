//! Subcommand bodies: resolve flags against the config, run, write files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use spiked_edgeworth::harness::{
    run_density, run_moments, run_table, CoefficientSource, ExperimentKind, ExperimentSpec,
    Setting, TABLE_CELLS,
};
use spiked_edgeworth::inference::{estimate_spike_count, Gate, Method, SpikeCountOptions};
use spiked_edgeworth::model::EntryDistribution;
use spiked_edgeworth::output::{
    density_summary, write_accuracy_csv, write_curves_csv, write_json, write_moments_csv,
    write_samples_csv, CSV_SCHEMA_VERSION,
};
use spiked_edgeworth::Error;

use crate::config::RunConfig;
use crate::data::read_matrix;
use crate::{CliError, DensityArgs, MomentsArgs, SpikesArgs, TableArgs};

/// Bad experiment parameters are usage errors; everything else is numerical.
fn core_err(e: Error) -> CliError {
    match e {
        Error::InvalidInput(m) => CliError::Usage(m),
        other => CliError::Numerical(other.to_string()),
    }
}

fn parse<T>(raw: &str, what: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| CliError::Usage(format!("--{what}: {e}")))
}

fn dist(raw: Option<String>, default: EntryDistribution) -> Result<EntryDistribution, CliError> {
    raw.map_or(Ok(default), |s| parse(&s, "dist"))
}

fn gate(raw: Option<String>) -> Result<Gate, CliError> {
    match raw.as_deref() {
        None | Some("edge") | Some("bulk_edge") => Ok(Gate::BulkEdge),
        Some("theta") => Ok(Gate::Theta),
        Some(other) => Err(CliError::Usage(format!("--gate: expected edge or theta, got '{other}'"))),
    }
}

fn methods(raw: Option<String>) -> Result<Vec<Method>, CliError> {
    match raw.as_deref() {
        None | Some("all") => Ok(Method::ALL.to_vec()),
        Some(list) => list
            .split(',')
            .map(|m| parse(m.trim(), "methods"))
            .collect(),
    }
}

/// `all`, or every `(p, n)` pair read from the integers in `raw`.
fn rows(raw: Option<String>) -> Result<Option<Vec<(usize, usize)>>, CliError> {
    let Some(raw) = raw.filter(|r| r.trim() != "all") else {
        return Ok(None);
    };
    let nums: Vec<usize> = raw
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| parse(s, "rows"))
        .collect::<Result<_, _>>()?;
    if nums.is_empty() || !nums.len().is_multiple_of(2) {
        return Err(CliError::Usage(format!("--rows: '{raw}' is not a list of (p,n) pairs")));
    }
    let cells: Vec<(usize, usize)> = nums.chunks(2).map(|c| (c[0], c[1])).collect();
    if let Some(bad) = cells.iter().find(|c| !TABLE_CELLS.contains(c)) {
        return Err(CliError::Usage(format!("--rows: ({}, {}) is not a table cell", bad.0, bad.1)));
    }
    Ok(Some(cells))
}

fn out_dir(path: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = path.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(format!("write failed: {e}"))
}

pub fn density(a: &DensityArgs, cfg: &RunConfig, workers: Option<usize>) -> Result<(), CliError> {
    let setting = cfg.pick(a.setting, "setting")?.unwrap_or(1);
    let mut spec = ExperimentSpec::new(
        ExperimentKind::Density,
        Setting::Table(setting),
        dist(cfg.pick(a.dist.clone(), "dist")?, EntryDistribution::Gaussian)?,
        cfg.pick(a.n, "n")?.unwrap_or(200),
        cfg.pick(a.p, "p")?.unwrap_or(20),
    )
    .with_workers(workers);
    if let Some(r) = cfg.pick(a.reps, "reps")? {
        spec = spec.with_reps(r);
    }
    spec = spec.with_seed(cfg.pick(a.seed, "seed")?.unwrap_or(0));
    spec.density.coefficients = match cfg.pick(a.coefficients.clone(), "coefficients")?.as_deref() {
        None | Some("oracle") => CoefficientSource::Oracle,
        Some("plugin") | Some("plug_in") => CoefficientSource::PlugIn,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "--coefficients: expected oracle or plugin, got '{other}'"
            )))
        }
    };
    if let Some(b) = cfg.pick(a.bins, "bins")? {
        spec.density.bins = b;
    }
    if let Some(lo) = cfg.pick(a.lo, "lo")? {
        spec.density.lo = lo;
    }
    if let Some(hi) = cfg.pick(a.hi, "hi")? {
        spec.density.hi = hi;
    }
    if let Some(g) = cfg.pick(a.grid_points, "grid_points")? {
        spec.density.grid_points = g;
    }
    if !(spec.density.lo < spec.density.hi) {
        return Err(CliError::Usage("--lo must be below --hi".into()));
    }
    let res = run_density(&spec).map_err(core_err)?;
    let dir = out_dir(cfg.pick(a.out.clone(), "out")?)?;
    write_samples_csv(create(&dir.join("samples.csv"))?, &res).map_err(core_err)?;
    write_curves_csv(create(&dir.join("curves.csv"))?, &res).map_err(core_err)?;
    write_json(create(&dir.join("summary.json"))?, &density_summary(&res)).map_err(core_err)?;
    Ok(())
}

pub fn table(a: &TableArgs, cfg: &RunConfig, workers: Option<usize>) -> Result<(), CliError> {
    let id = cfg.pick(a.table, "table")?.unwrap_or(2);
    let cells = rows(cfg.pick(a.rows.clone(), "rows")?)?;
    let mut template = ExperimentSpec::new(
        ExperimentKind::Accuracy,
        Setting::Table(1),
        EntryDistribution::Gaussian,
        100,
        10,
    )
    .with_workers(workers)
    .with_methods(methods(cfg.pick(a.methods.clone(), "methods")?)?)
    .with_seed(cfg.pick(a.seed, "seed")?.unwrap_or(0));
    if let Some(r) = cfg.pick(a.reps, "reps")? {
        template = template.with_reps(r);
    }
    apply_count_options(
        &mut template.spike_count,
        cfg.pick(a.r0, "r0")?,
        cfg.pick(a.level, "level")?,
        cfg.pick(a.bootstrap_size, "bootstrap_size")?,
        cfg.pick(a.gate.clone(), "gate")?,
    )?;
    let out = run_table(id, cells.as_deref(), &template).map_err(core_err)?;
    let dir = out_dir(cfg.pick(a.out.clone(), "out")?)?;
    write_accuracy_csv(create(&dir.join("accuracy.csv"))?, &out).map_err(core_err)
}

fn apply_count_options(
    opts: &mut SpikeCountOptions,
    r0: Option<usize>,
    level: Option<f64>,
    bootstrap_size: Option<usize>,
    gate_raw: Option<String>,
) -> Result<(), CliError> {
    if let Some(r0) = r0 {
        if r0 == 0 {
            return Err(CliError::Usage("--r0 must be at least 1".into()));
        }
        opts.r0 = r0;
    }
    if let Some(level) = level {
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Usage(format!("--level {level} is not in (0, 1)")));
        }
        opts.level = level;
    }
    if let Some(m) = bootstrap_size {
        if m < 2 {
            return Err(CliError::Usage("--bootstrap-size must be at least 2".into()));
        }
        opts.bootstrap_size = m;
    }
    opts.gate = gate(gate_raw)?;
    Ok(())
}

pub fn moments(a: &MomentsArgs, cfg: &RunConfig, workers: Option<usize>) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::new(
        ExperimentKind::Moments,
        Setting::Table(1),
        dist(cfg.pick(a.dist.clone(), "dist")?, EntryDistribution::Gaussian)?,
        cfg.pick(a.n, "n")?.unwrap_or(500),
        cfg.pick(a.p, "p")?.unwrap_or(50),
    )
    .with_workers(workers)
    .with_seed(cfg.pick(a.seed, "seed")?.unwrap_or(0));
    if let Some(r) = cfg.pick(a.reps, "reps")? {
        spec = spec.with_reps(r);
    }
    let res = run_moments(&spec).map_err(core_err)?;
    match cfg.pick(a.out.clone(), "out")? {
        Some(dir) => {
            let dir = out_dir(Some(dir))?;
            write_moments_csv(create(&dir.join("moments.csv"))?, &res).map_err(core_err)
        }
        None => write_moments_csv(std::io::stdout().lock(), &res).map_err(core_err),
    }
}

pub fn spikes(a: &SpikesArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg
        .pick(a.data.clone(), "data")?
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let method: Method = match cfg.pick(a.method.clone(), "method")? {
        Some(m) => parse(&m, "method")?,
        None => Method::JbE,
    };
    let mut opts = SpikeCountOptions::default();
    apply_count_options(
        &mut opts,
        cfg.pick(a.r0, "r0")?,
        cfg.pick(a.level, "level")?,
        cfg.pick(a.bootstrap_size, "bootstrap_size")?,
        cfg.pick(a.gate.clone(), "gate")?,
    )?;
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(0);
    let x = read_matrix(&path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est = estimate_spike_count(&x, method, &opts, &mut rng).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Data(m),
        other => CliError::Numerical(other.to_string()),
    })?;
    let intervals: Vec<_> = est
        .intervals
        .iter()
        .map(|ci| {
            let l_hat = est.sample_eigenvalues[ci.target];
            json!({
                "k": ci.target + 1,
                "l_hat": l_hat,
                "lo": ci.lo,
                "hi": ci.hi,
                "contains": ci.contains(l_hat),
                "degenerate": ci.degenerate,
            })
        })
        .collect();
    let moments = est.moment_estimates.as_ref().map(|m| {
        json!({
            "beta_z": m.beta_z_hat,
            "gamma_sq": m.gamma_sq_hat,
            "delta": m.delta_hat,
            "regime": m.regime,
            "notes": m.notes,
        })
    });
    let top: Vec<f64> = est.sample_eigenvalues.iter().take(opts.r0).copied().collect();
    let report = json!({
        "schema_version": CSV_SCHEMA_VERSION,
        "method": method.label(),
        "n": x.n(),
        "d": x.d(),
        "level": opts.level,
        "r0": opts.r0,
        "seed": seed,
        "r_hat": est.r_hat,
        "sample_eigenvalues": top,
        "intervals": intervals,
        "plugin_spikes": est.plugin_spikes,
        "moment_estimates": moments,
    });
    match cfg.pick(a.out.clone(), "out")? {
        Some(file) => write_json(create(&file)?, &report).map_err(core_err),
        None => {
            let mut out = std::io::stdout().lock();
            write_json(&mut out, &report).map_err(core_err)?;
            out.flush().map_err(write_err)
        }
    }
}
