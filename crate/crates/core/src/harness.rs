//! Seeded Monte Carlo experiments: density fits of the standardized spiked
//! eigenvalue, spike-count accuracy tables and moment-estimator calibration.
//!
//! Every replicate draws from its own ChaCha8 stream seeded with
//! [`derive_seed`]`(seed, i)`, and results are collected in replicate order,
//! so the output does not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edgeworth::{coefficients, EdgeworthCoefficients, SpikeContext};
use crate::error::{Error, Result};
use crate::inference::{bulk_edge, estimate_spike_counts, invert_psi, Method, SpikeCountOptions};
use crate::linalg::{sample_covariance, sym_eigen};
use crate::model::{
    build_model, generate_data, table_setting, EntryDistribution, MomentTriple, Rotation,
    SpikedModel, VPowerSums,
};
use crate::moments::{estimate_all, MomentOptions};
use crate::normal;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream seed for replicate `i`: the splitmix64 finalizer applied to
/// `master + GOLDEN * (i + 1)` (wrapping). Both steps are bijections of
/// `u64`, so distinct replicates never share a seed.
pub fn derive_seed(master: u64, replicate: u64) -> u64 {
    let mut z = master.wrapping_add(GOLDEN.wrapping_mul(replicate.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn replicate_rng(master: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, i as u64))
}

/// Random rotations are drawn once per experiment from a stream that no
/// replicate uses.
fn model_rng(master: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Density,
    Accuracy,
    Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Numbered setting 1..=9.
    Table(u8),
    Explicit { spikes: Vec<f64>, rotation: Rotation },
}

impl Setting {
    pub fn resolve(&self) -> Result<(Vec<f64>, Rotation)> {
        match self {
            Setting::Table(id) => table_setting(*id),
            Setting::Explicit { spikes, rotation } => Ok((spikes.clone(), *rotation)),
        }
    }
}

/// Coefficients used to standardize the statistic in density runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    /// True spikes, eigenvectors and entry moments.
    #[default]
    Oracle,
    /// Per-replicate estimates.
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    pub coefficients: CoefficientSource,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            bins: 60,
            lo: -4.0,
            hi: 4.0,
            grid_points: 401,
            coefficients: CoefficientSource::Oracle,
        }
    }
}

/// One experiment. `p` is the dimension of the sample covariance matrix;
/// the bulk has `p - r` unit eigenvalues and `gamma_n = (p - r) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub setting: Setting,
    pub dist: EntryDistribution,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub density: DensityOptions,
    pub spike_count: SpikeCountOptions,
    pub moments: MomentOptions,
}

impl ExperimentSpec {
    pub fn default_reps(kind: ExperimentKind) -> usize {
        match kind {
            ExperimentKind::Density => 10_000,
            ExperimentKind::Accuracy => 1_000,
            ExperimentKind::Moments => 200,
        }
    }

    pub fn new(kind: ExperimentKind, setting: Setting, dist: EntryDistribution, n: usize, p: usize) -> Self {
        Self {
            kind,
            setting,
            dist,
            n,
            p,
            reps: Self::default_reps(kind),
            seed: 0,
            methods: Method::ALL.to_vec(),
            workers: None,
            density: DensityOptions::default(),
            spike_count: SpikeCountOptions::default(),
            moments: MomentOptions::default(),
        }
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_methods(mut self, methods: Vec<Method>) -> Self {
        self.methods = methods;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        let (spikes, _) = self.setting.resolve()?;
        if self.p < spikes.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "p = {} must exceed the number of spikes {}",
                self.p,
                spikes.len()
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n = {} is too small", self.n)));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidInput("workers must be at least 1".into()));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: ExperimentKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidInput(format!(
                "experiment kind {:?} passed to the {kind:?} runner",
                self.kind
            )));
        }
        self.validate()
    }

    fn model(&self) -> Result<SpikedModel> {
        let (spikes, rotation) = self.setting.resolve()?;
        let bulk = self.p - spikes.len();
        build_model(&spikes, bulk, rotation, &mut model_rng(self.seed))
    }
}

/// Runs `f(i)` for every replicate on a pool of `workers` threads and
/// returns the results in replicate order.
pub fn par_replicates<T, F>(reps: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let run = || (0..reps).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match workers {
        None => run(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?
            .install(run),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Included samples outside `[edges[0], edges[bins]]`.
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        let (mut below, mut above) = (0, 0);
        for &x in samples {
            if x < lo {
                below += 1;
            } else if x > hi {
                above += 1;
            } else {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self {
            edges,
            counts,
            below,
            above,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub gaussian_pdf: f64,
    pub edgeworth_pdf: f64,
}

/// Per-spike output of a density run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeDensity {
    pub k: usize,
    /// One entry per replicate; `None` for excluded (subcritical) ones.
    pub samples: Vec<Option<f64>>,
    pub histogram: Histogram,
    pub curves: Vec<CurvePoint>,
    pub coefficients: EdgeworthCoefficients,
    pub ks_gauss: f64,
    pub ks_edgeworth: f64,
    pub excluded: usize,
}

impl SpikeDensity {
    pub fn included(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityResult {
    pub spikes: Vec<SpikeDensity>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Kolmogorov distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / m).abs()).max(((i + 1) as f64 / m - f).abs());
    }
    d
}

/// Oracle coefficients for every spike of `model` at sample size `n`.
pub fn oracle_coefficients(
    model: &SpikedModel,
    dist: EntryDistribution,
    n: usize,
) -> Result<Vec<EdgeworthCoefficients>> {
    let g = model.gamma_n(n);
    let moments = dist.population_moments();
    (0..model.r())
        .map(|k| {
            let ctx = SpikeContext::new(model.spikes().to_vec(), k, g, n)?;
            coefficients(&ctx, &moments, &model.v_power_sums(k)?)
        })
        .collect()
}

/// Standardized statistics `R_k` for one replicate; `None` when `l_hat_k`
/// does not clear the bulk edge.
fn density_replicate(
    spec: &ExperimentSpec,
    model: &SpikedModel,
    oracle: &[EdgeworthCoefficients],
    i: usize,
) -> Result<Vec<Option<f64>>> {
    let mut rng = replicate_rng(spec.seed, i);
    let x = generate_data(model, spec.dist, spec.n, &mut rng)?;
    let eig = sym_eigen(&sample_covariance(&x), 1e-10)?;
    let g = model.gamma_n(spec.n);
    let edge = bulk_edge(g);
    let plug = match spec.density.coefficients {
        CoefficientSource::Oracle => None,
        CoefficientSource::PlugIn => Some(plugin_coefficients(spec, model, &x, &eig)?),
    };
    Ok((0..model.r())
        .map(|k| {
            let l_hat = eig.eigenvalues[k];
            if !(l_hat > edge) {
                return None;
            }
            let c = match &plug {
                None => oracle.get(k),
                Some(p) => p.get(k).and_then(|c| c.as_ref()),
            }?;
            Some(c.r_statistic(l_hat, spec.n))
        })
        .collect())
}

fn plugin_coefficients(
    spec: &ExperimentSpec,
    model: &SpikedModel,
    x: &crate::linalg::DataMatrix,
    eig: &crate::linalg::EigenDecomposition,
) -> Result<Vec<Option<EdgeworthCoefficients>>> {
    let g = model.gamma_n(spec.n);
    let est = estimate_all(x, &spec.moments)?;
    let moments = MomentTriple::new(est.beta_z_hat, est.gamma_sq_hat.max(0.0), est.delta_hat);
    let spikes: Vec<f64> = (0..model.r())
        .map_while(|k| invert_psi(eig.eigenvalues[k], g).ok())
        .collect();
    Ok((0..model.r())
        .map(|k| {
            if k >= spikes.len() {
                return None;
            }
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let ctx = SpikeContext::new(spikes.clone(), k, g, spec.n).ok()?;
            coefficients(&ctx, &moments, &VPowerSums::from_vector(&col)).ok()
        })
        .collect())
}

/// Histogram, theoretical curves and KS distances of `R_k` for each spike.
pub fn run_density(spec: &ExperimentSpec) -> Result<DensityResult> {
    spec.expect_kind(ExperimentKind::Density)?;
    let model = spec.model()?;
    let oracle = oracle_coefficients(&model, spec.dist, spec.n)?;
    let per_rep = par_replicates(spec.reps, spec.workers, |i| {
        density_replicate(spec, &model, &oracle, i)
    })?;
    let opts = &spec.density;
    let grid_n = opts.grid_points.max(2);
    let step = (opts.hi - opts.lo) / (grid_n - 1) as f64;
    let spikes = (0..model.r())
        .map(|k| {
            let samples: Vec<Option<f64>> = per_rep.iter().map(|r| r[k]).collect();
            let included: Vec<f64> = samples.iter().flatten().copied().collect();
            let c = oracle[k];
            let curves = (0..grid_n)
                .map(|j| {
                    let x = opts.lo + step * j as f64;
                    CurvePoint {
                        x,
                        gaussian_pdf: normal::pdf(x),
                        edgeworth_pdf: c.pdf(x, spec.n),
                    }
                })
                .collect();
            let (ks_gauss, ks_edgeworth) = if included.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    ks_distance(&included, normal::cdf),
                    ks_distance(&included, |x| c.cdf(x, spec.n)),
                )
            };
            SpikeDensity {
                k,
                histogram: Histogram::new(&included, opts.bins, opts.lo, opts.hi),
                excluded: samples.len() - included.len(),
                samples,
                curves,
                coefficients: c,
                ks_gauss,
                ks_edgeworth,
            }
        })
        .collect();
    Ok(DensityResult {
        spikes,
        n: spec.n,
        reps: spec.reps,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: Method,
    /// `100 * #{r_hat = r} / reps`.
    pub percent: f64,
    /// Histogram of `r_hat` over `0..=r0`.
    pub r_hat_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub p: usize,
    pub n: usize,
    pub methods: Vec<MethodAccuracy>,
    pub reps: usize,
    pub seed: u64,
}

impl AccuracyResult {
    pub fn percent(&self, method: Method) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.percent)
    }
}

/// Exact-recovery rates of the spike-count estimator for one `(p, n)` cell.
/// All methods share each replicate's data and bootstrap draw.
pub fn run_accuracy(spec: &ExperimentSpec) -> Result<AccuracyResult> {
    spec.expect_kind(ExperimentKind::Accuracy)?;
    if spec.methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let model = spec.model()?;
    let r = model.r();
    let per_rep = par_replicates(spec.reps, spec.workers, |i| {
        let mut rng = replicate_rng(spec.seed, i);
        let x = generate_data(&model, spec.dist, spec.n, &mut rng)?;
        let est = estimate_spike_counts(&x, &spec.methods, &spec.spike_count, &mut rng)?;
        Ok(est.into_iter().map(|e| e.r_hat).collect::<Vec<_>>())
    })?;
    let r0 = spec.spike_count.r0;
    let methods = spec
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let mut r_hat_counts = vec![0; r0 + 1];
            for rep in &per_rep {
                r_hat_counts[rep[m].min(r0)] += 1;
            }
            let hits = per_rep.iter().filter(|rep| rep[m] == r).count();
            MethodAccuracy {
                method,
                percent: 100.0 * hits as f64 / spec.reps as f64,
                r_hat_counts,
            }
        })
        .collect();
    Ok(AccuracyResult {
        p: spec.p,
        n: spec.n,
        methods,
        reps: spec.reps,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub truth: f64,
}

impl EstimatorSummary {
    fn from_values(values: &[f64], truth: f64) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / m).sqrt(),
            truth,
        }
    }

    /// `|mean - truth| / se`.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.truth).abs() / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsResult {
    pub beta_z: EstimatorSummary,
    pub gamma_sq: EstimatorSummary,
    pub delta: EstimatorSummary,
    pub mse_beta_z: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Replicate means and standard errors of the moment estimators.
pub fn run_moments(spec: &ExperimentSpec) -> Result<MomentsResult> {
    spec.expect_kind(ExperimentKind::Moments)?;
    let model = spec.model()?;
    let per_rep = par_replicates(spec.reps, spec.workers, |i| {
        let mut rng = replicate_rng(spec.seed, i);
        let x = generate_data(&model, spec.dist, spec.n, &mut rng)?;
        let e = estimate_all(&x, &spec.moments)?;
        Ok([e.beta_z_hat, e.gamma_sq_hat, e.delta_hat])
    })?;
    let truth = spec.dist.population_moments();
    let col = |j: usize| per_rep.iter().map(|v| v[j]).collect::<Vec<_>>();
    let b = col(0);
    let mse_beta_z = b.iter().map(|v| (v - truth.beta_z).powi(2)).sum::<f64>() / b.len() as f64;
    Ok(MomentsResult {
        beta_z: EstimatorSummary::from_values(&b, truth.beta_z),
        gamma_sq: EstimatorSummary::from_values(&col(1), truth.gamma_sq),
        delta: EstimatorSummary::from_values(&col(2), truth.delta),
        mse_beta_z,
        reps: spec.reps,
        seed: spec.seed,
    })
}

/// One row group of the spike-count accuracy tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDefinition {
    pub id: u8,
    pub dist: EntryDistribution,
    pub rotation: TableRotation,
    pub cells: Vec<(usize, usize)>,
}

/// Spike eigenvector layout used by the accuracy tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableRotation {
    Diagonal,
    /// Haar block on the spike coordinates.
    Block,
    General,
}

impl TableRotation {
    fn rotation(self, r: usize) -> Rotation {
        match self {
            TableRotation::Diagonal => Rotation::Identity,
            TableRotation::Block => Rotation::EmbeddedHaar(r),
            TableRotation::General => Rotation::FullHaar,
        }
    }
}

/// Spikes of the accuracy tables.
pub const TABLE_SPIKES: [f64; 3] = [3.5, 3.0, 2.5];

/// `(p, n)` cells shared by all accuracy tables.
pub const TABLE_CELLS: [(usize, usize); 12] = [
    (5, 50),
    (10, 100),
    (20, 200),
    (40, 400),
    (10, 50),
    (20, 100),
    (40, 200),
    (80, 400),
    (15, 50),
    (30, 100),
    (60, 200),
    (120, 400),
];

/// Tables 2-4 are diagonal covariances under Ga12, uniform and Gaussian
/// entries; table 5 stacks the three laws under a general rotation; table 6
/// under a block rotation.
pub fn table_definitions(id: u8) -> Result<Vec<TableDefinition>> {
    let one = |dist, rotation| TableDefinition {
        id,
        dist,
        rotation,
        cells: TABLE_CELLS.to_vec(),
    };
    let laws = [
        EntryDistribution::Ga12,
        EntryDistribution::Uniform,
        EntryDistribution::Gaussian,
    ];
    match id {
        2 => Ok(vec![one(EntryDistribution::Ga12, TableRotation::Diagonal)]),
        3 => Ok(vec![one(EntryDistribution::Uniform, TableRotation::Diagonal)]),
        4 => Ok(vec![one(EntryDistribution::Gaussian, TableRotation::Diagonal)]),
        5 => Ok(laws.into_iter().map(|d| one(d, TableRotation::General)).collect()),
        6 => Ok(laws.into_iter().map(|d| one(d, TableRotation::Block)).collect()),
        _ => Err(Error::InvalidInput(format!(
            "table must be one of 2, 3, 4, 5, 6; got {id}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub dist: EntryDistribution,
    pub rotation: TableRotation,
    pub result: AccuracyResult,
}

/// Runs the accuracy table `id`, optionally restricted to `rows`.
/// Each cell gets its own master seed `derive_seed(seed, cell index)`.
pub fn run_table(
    id: u8,
    rows: Option<&[(usize, usize)]>,
    template: &ExperimentSpec,
) -> Result<Vec<TableCell>> {
    let mut out = Vec::new();
    let mut cell_index = 0u64;
    for def in table_definitions(id)? {
        for &(p, n) in &def.cells {
            let this = cell_index;
            cell_index += 1;
            if rows.is_some_and(|r| !r.contains(&(p, n))) {
                continue;
            }
            let spec = ExperimentSpec {
                kind: ExperimentKind::Accuracy,
                setting: Setting::Explicit {
                    spikes: TABLE_SPIKES.to_vec(),
                    rotation: def.rotation.rotation(TABLE_SPIKES.len()),
                },
                dist: def.dist,
                n,
                p,
                seed: derive_seed(template.seed, this),
                ..template.clone()
            };
            out.push(TableCell {
                dist: def.dist,
                rotation: def.rotation,
                result: run_accuracy(&spec)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_seed_is_injective_on_a_million_indices() {
        let mut seen = HashSet::with_capacity(1_000_000);
        for i in 0..1_000_000u64 {
            assert!(seen.insert(derive_seed(42, i)));
        }
    }

    #[test]
    fn derive_seed_is_a_pure_function() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
        // pinned so that the stream layout is stable across releases
        assert_eq!(derive_seed(0, 0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn histogram_conserves_mass() {
        let xs = [-5.0, -4.0, -0.1, 0.0, 3.99, 4.0, 4.5];
        let h = Histogram::new(&xs, 8, -4.0, 4.0);
        assert_eq!(h.edges.len(), 9);
        assert_eq!(h.total(), xs.len() as u64);
        assert_eq!((h.below, h.above), (1, 1));
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[7], 2);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 1000;
        let xs: Vec<f64> = (0..m)
            .map(|i| normal::quantile((i as f64 + 0.5) / m as f64))
            .collect();
        assert!((ks_distance(&xs, normal::cdf) - 0.5 / m as f64).abs() < 1e-9);
    }

    #[test]
    fn single_replicate_density() {
        let spec = ExperimentSpec::new(
            ExperimentKind::Density,
            Setting::Table(1),
            EntryDistribution::Gaussian,
            200,
            20,
        )
        .with_reps(1)
        .with_seed(3);
        let res = run_density(&spec).unwrap();
        assert_eq!(res.spikes.len(), 1);
        let s = &res.spikes[0];
        assert_eq!(s.histogram.total() + s.excluded as u64, 1);
        assert_eq!(s.curves.len(), 401);
        assert_eq!(s.histogram.counts.len(), 60);
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let spec = ExperimentSpec::new(
            ExperimentKind::Density,
            Setting::Table(2),
            EntryDistribution::Ga12,
            100,
            12,
        )
        .with_reps(64)
        .with_seed(11);
        let serial = run_density(&spec.clone().with_workers(Some(1))).unwrap();
        let parallel = run_density(&spec.with_workers(Some(4))).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = ExperimentSpec::new(
            ExperimentKind::Accuracy,
            Setting::Explicit {
                spikes: TABLE_SPIKES.to_vec(),
                rotation: Rotation::Identity,
            },
            EntryDistribution::Gaussian,
            100,
            10,
        );
        assert!(run_accuracy(&base.clone().with_reps(0)).is_err());
        let mut narrow = base.clone();
        narrow.p = 3;
        assert!(run_accuracy(&narrow).is_err());
        assert!(run_density(&base).is_err());
    }

    #[test]
    fn table_definitions_cover_all_cells() {
        assert_eq!(table_definitions(2).unwrap()[0].cells.len(), 12);
        assert_eq!(table_definitions(5).unwrap().len(), 3);
        assert!(table_definitions(7).is_err());
    }
}
