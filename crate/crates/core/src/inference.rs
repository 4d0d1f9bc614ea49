//! Pivots, confidence intervals for spikes and the spike-count estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::edgeworth::{
    centering_rho, coefficients, tilde_sigma_sq, EdgeworthCoefficients, SpikeContext,
};
use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, sym_eigen, DataMatrix};
use crate::model::{MomentTriple, VPowerSums};
use crate::moments::{estimate_all, GammaVariant, MomentEstimates, MomentOptions};
use crate::normal;

/// Bisection tolerance (absolute, in `l`) for [`ci_root_solving`].
pub const ROOT_TOL: f64 = 1e-8;
pub const ROOT_MAX_ITER: usize = 200;
/// Grid used to bracket sign changes before bisecting.
const ROOT_SCAN_POINTS: usize = 400;
const ROOT_RESIDUAL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Scaled interval around the plug-in centre, Cornish-Fisher quantiles.
    #[serde(rename = "JB_E")]
    JbE,
    /// Root-solving interval, Cornish-Fisher quantiles.
    #[serde(rename = "YJ_E")]
    YjE,
    /// Scaled interval with normal quantiles.
    #[serde(rename = "JB_Gauss")]
    JbGauss,
    /// Root-solving interval with normal quantiles.
    #[serde(rename = "YJ_Gauss")]
    YjGauss,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::JbE, Method::YjE, Method::JbGauss, Method::YjGauss];

    pub fn label(self) -> &'static str {
        match self {
            Method::JbE => "JB_E",
            Method::YjE => "YJ_E",
            Method::JbGauss => "JB_Gauss",
            Method::YjGauss => "YJ_Gauss",
        }
    }

    pub fn corrected(self) -> bool {
        matches!(self, Method::JbE | Method::YjE)
    }

    pub fn root_solving(self) -> bool {
        matches!(self, Method::YjE | Method::YjGauss)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "jbe" => Ok(Method::JbE),
            "yje" => Ok(Method::YjE),
            "jb" | "jbgauss" => Ok(Method::JbGauss),
            "yj" | "yjgauss" => Ok(Method::YjGauss),
            _ => Err(Error::InvalidInput(format!(
                "unknown method '{s}' (expected jbe, yje, jb or yj)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: Method,
    /// Zero-based spike index.
    pub target: usize,
    /// Set when no root was found and the interval collapsed to the plug-in.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// `(1 + sqrt(gamma))^2`, the almost-sure limit of the largest bulk eigenvalue.
pub fn bulk_edge(gamma_n: f64) -> f64 {
    (1.0 + gamma_n.sqrt()).powi(2)
}

/// `(1 + sqrt(gamma))^2 + n^{-1/3} sqrt(gamma)`.
pub fn theta_n(gamma_n: f64, n: usize) -> f64 {
    bulk_edge(gamma_n) + (n as f64).powf(-1.0 / 3.0) * gamma_n.sqrt()
}

/// Inverts `rho(l) = l + gamma l / (l - 1)`: the larger root of
/// `l^2 - (l_hat + 1 - gamma) l + l_hat = 0`.
pub fn invert_psi(l_hat: f64, gamma_n: f64) -> Result<f64> {
    let threshold = bulk_edge(gamma_n);
    if !(l_hat > threshold + 1e-12) {
        return Err(Error::BelowThreshold { l_hat, threshold });
    }
    let b = l_hat + 1.0 - gamma_n;
    let disc = (b * b - 4.0 * l_hat).max(0.0);
    Ok(0.5 * (b + disc.sqrt()))
}

fn z_stat(l_hat: f64, coeffs: &EdgeworthCoefficients, n: usize) -> f64 {
    coeffs.r_statistic(l_hat, n)
}

/// `u^z = 1 - Phi(z_n)` with `z_n = sqrt(n) (l_hat - rho(l)) / tilde_sigma(l)`.
/// `coeffs` must be evaluated at the hypothesised `l`.
pub fn z_pivot(l_hat: f64, coeffs: &EdgeworthCoefficients, n: usize) -> f64 {
    normal::sf(z_stat(l_hat, coeffs, n))
}

/// `u^E = 1 - F^E(z_n)`, clamped to `[0, 1]`.
pub fn e_pivot(l_hat: f64, coeffs: &EdgeworthCoefficients, n: usize) -> f64 {
    let z = z_stat(l_hat, coeffs, n);
    (1.0 - coeffs.cdf_raw(z, n)).clamp(0.0, 1.0)
}

fn tail_levels(level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} not in (0, 1)")));
    }
    let a = 0.5 * (1.0 - level);
    Ok((a, 1.0 - a))
}

fn quantile_or_z(coeffs: Option<&EdgeworthCoefficients>, q: f64, n: usize) -> Result<f64> {
    match coeffs {
        Some(c) => c.quantile(q, n),
        None => Ok(normal::quantile(q)),
    }
}

/// Scaled interval `[(E_lo s / sqrt(n) + 1) rho, (E_hi s / sqrt(n) + 1) rho]`
/// where `s = tilde_sigma / rho` is the relative scale. `coeffs = None` gives
/// the normal-quantile baseline.
pub fn ci_scaled(
    rho_plug: f64,
    tilde_sigma_rel: f64,
    coeffs: Option<&EdgeworthCoefficients>,
    n: usize,
    level: f64,
    target: usize,
) -> Result<ConfidenceInterval> {
    if !(rho_plug > 0.0) {
        return Err(Error::InvalidInput(format!("rho {rho_plug} must be positive")));
    }
    let (ql, qh) = tail_levels(level)?;
    let root_n = (n as f64).sqrt();
    let el = quantile_or_z(coeffs, ql, n)?;
    let eh = quantile_or_z(coeffs, qh, n)?;
    let a = (el * tilde_sigma_rel / root_n + 1.0) * rho_plug;
    let b = (eh * tilde_sigma_rel / root_n + 1.0) * rho_plug;
    Ok(ConfidenceInterval {
        lo: a.min(b),
        hi: a.max(b),
        level,
        method: if coeffs.is_some() {
            Method::JbE
        } else {
            Method::JbGauss
        },
        target,
        degenerate: false,
    })
}

/// Root-solving interval: the endpoints solve
/// `rho(l) + n^{-1/2} tilde_sigma(l) E_q(l) = l_hat_obs` for the two tail
/// levels `q`. `coeffs_fn(l)` returns the coefficients at trial spike `l`;
/// `corrected = false` uses `z_q` for `E_q`.
///
/// The bracket `(1 + sqrt(gamma) + 1e-6, 100 l_hat_obs]` is scanned for sign
/// changes. When an equation has several roots, the lower endpoint is the
/// root nearest below the plug-in `invert_psi(l_hat_obs)` and the upper one
/// the root nearest above it.
pub fn ci_root_solving<F>(
    l_hat_obs: f64,
    gamma_n: f64,
    n: usize,
    coeffs_fn: F,
    corrected: bool,
    level: f64,
    target: usize,
) -> Result<ConfidenceInterval>
where
    F: Fn(f64) -> Result<EdgeworthCoefficients>,
{
    let plug = invert_psi(l_hat_obs, gamma_n)?;
    let (ql, qh) = tail_levels(level)?;
    let lo_b = 1.0 + gamma_n.sqrt() + 1e-6;
    let hi_b = 100.0 * l_hat_obs;
    let root_n = (n as f64).sqrt();
    let eq = |l: f64, q: f64| -> Option<f64> {
        let c = coeffs_fn(l).ok()?;
        let e = if corrected {
            c.quantile(q, n).ok()?
        } else {
            normal::quantile(q)
        };
        let v = c.rho + c.tilde_sigma() * e / root_n - l_hat_obs;
        v.is_finite().then_some(v)
    };
    // the upper quantile gives the lower endpoint and vice versa
    let r_hi_tail = pick_root(&find_roots(|l| eq(l, qh), lo_b, hi_b), plug, false);
    let r_lo_tail = pick_root(&find_roots(|l| eq(l, ql), lo_b, hi_b), plug, true);
    let method = if corrected { Method::YjE } else { Method::YjGauss };
    match (r_hi_tail, r_lo_tail) {
        (Some(a), Some(b)) => Ok(ConfidenceInterval {
            lo: a.min(b),
            hi: a.max(b),
            level,
            method,
            target,
            degenerate: false,
        }),
        _ => Err(Error::NoRoot { lo: lo_b, hi: hi_b }),
    }
}

/// Like [`ci_root_solving`] but a missing root yields the degenerate
/// interval `[plug, plug]` instead of an error.
pub fn ci_root_solving_or_plugin<F>(
    l_hat_obs: f64,
    gamma_n: f64,
    n: usize,
    coeffs_fn: F,
    corrected: bool,
    level: f64,
    target: usize,
) -> Result<ConfidenceInterval>
where
    F: Fn(f64) -> Result<EdgeworthCoefficients>,
{
    match ci_root_solving(l_hat_obs, gamma_n, n, coeffs_fn, corrected, level, target) {
        Err(Error::NoRoot { .. }) => {
            let plug = invert_psi(l_hat_obs, gamma_n)?;
            Ok(ConfidenceInterval {
                lo: plug,
                hi: plug,
                level,
                method: if corrected { Method::YjE } else { Method::YjGauss },
                target,
                degenerate: true,
            })
        }
        other => other,
    }
}

fn find_roots<F: Fn(f64) -> Option<f64>>(f: F, lo: f64, hi: f64) -> Vec<f64> {
    // log-spaced scan: most of the action is close to the threshold
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (ROOT_SCAN_POINTS - 1) as f64;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..ROOT_SCAN_POINTS {
        let x = (a + step * i as f64).exp();
        let Some(v) = f(x) else {
            prev = None;
            continue;
        };
        if let Some((px, pv)) = prev {
            if pv == 0.0 || pv.signum() != v.signum() {
                // a sign flip across a pole of the coefficients leaves a
                // large residual at the bisection point
                let root = bisect(&f, px, x, pv)
                    .filter(|&r| f(r).is_some_and(|fr| fr.abs() <= ROOT_RESIDUAL * (1.0 + r)));
                roots.extend(root);
            }
        }
        prev = Some((x, v));
    }
    roots
}

/// Nearest root to `plug` on the requested side, else nearest overall.
fn pick_root(roots: &[f64], plug: f64, above: bool) -> Option<f64> {
    let nearest = |it: &mut dyn Iterator<Item = f64>| {
        it.min_by(|a, b| (a - plug).abs().total_cmp(&(b - plug).abs()))
    };
    let side = nearest(&mut roots.iter().copied().filter(|&r| if above { r >= plug } else { r <= plug }));
    side.or_else(|| nearest(&mut roots.iter().copied()))
}

fn bisect<F: Fn(f64) -> Option<f64>>(f: &F, mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    if fa == 0.0 {
        return Some(a);
    }
    for _ in 0..ROOT_MAX_ITER {
        let m = 0.5 * (a + b);
        if b - a < ROOT_TOL {
            return Some(m);
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Where the moment triple feeding the bootstrap coefficients comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    /// The bootstrap resample. Repeated rows inflate the pair statistic
    /// behind `gamma_sq_hat`.
    Bootstrap,
    /// The original data.
    #[default]
    Original,
}

/// Which sample eigenvalues are eligible for membership in the count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// `l_hat_k > (1 + sqrt(gamma_n))^2`.
    #[default]
    BulkEdge,
    /// `l_hat_k > theta_n`.
    Theta,
}

/// How the plug-in spike values are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginSource {
    /// `invert_psi(l_hat*_k, d / m)` on the bootstrap resample.
    #[default]
    Bootstrap,
    /// `invert_psi(l_hat_k, d / n)` on the original sample; the bootstrap
    /// then only supplies the moment triple.
    Sample,
}

/// Scale used by the normal-quantile baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineScale {
    /// `sigma(l)`, the scale under Gaussian entries.
    #[default]
    Gaussian,
    /// `tilde_sigma(l)` with the estimated fourth cumulant.
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeCountOptions {
    pub r0: usize,
    pub level: f64,
    /// Bootstrap sample size.
    pub bootstrap_size: usize,
    /// Number of resamples whose plug-ins and moments are averaged.
    pub bootstrap_reps: usize,
    pub moment_source: MomentSource,
    pub gate: Gate,
    pub gamma_variant: GammaVariant,
    pub baseline_scale: BaselineScale,
    pub plugin_source: PluginSource,
    /// Re-run the coefficient step with the previous pass's plug-ins as
    /// spike values; `0` is the one-pass procedure.
    pub extra_passes: usize,
}

impl Default for SpikeCountOptions {
    fn default() -> Self {
        Self {
            r0: 5,
            level: 0.90,
            bootstrap_size: 1000,
            bootstrap_reps: 1,
            moment_source: MomentSource::Original,
            gate: Gate::BulkEdge,
            gamma_variant: GammaVariant::ProofSymmetric,
            baseline_scale: BaselineScale::Gaussian,
            plugin_source: PluginSource::Bootstrap,
            extra_passes: 0,
        }
    }
}

/// Plug-in spikes and coefficients from a bootstrap resample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCoefficients {
    pub plugin_spikes: Vec<f64>,
    /// Eigenvector power sums matching `plugin_spikes`.
    pub vsums: Vec<VPowerSums>,
    pub coefficients: Vec<EdgeworthCoefficients>,
    pub moments: MomentTriple,
    pub moment_estimates: Option<MomentEstimates>,
}

fn gate_cutoff(gate: Gate, gamma_n: f64, n: usize) -> f64 {
    match gate {
        Gate::BulkEdge => bulk_edge(gamma_n),
        Gate::Theta => theta_n(gamma_n, n),
    }
}

fn resample<R: Rng + ?Sized>(x: &DataMatrix, m: usize, rng: &mut R) -> Result<DataMatrix> {
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..x.n())).collect();
    x.select_rows(&idx)
}

fn moment_triple(est: &MomentEstimates) -> MomentTriple {
    // the clamp only feeds the coefficients; the raw estimate is kept in
    // `moment_estimates`
    MomentTriple::new(est.beta_z_hat, est.gamma_sq_hat.max(0.0), est.delta_hat)
}

/// Resamples `opts.bootstrap_size` rows with replacement, inverts the top
/// supercritical eigenvalues (at ratio `d / m`) into plug-in spikes and
/// assembles coefficients at the original `(n, d / n)`.
pub fn bootstrap_coefficients<R: Rng + ?Sized>(
    x: &DataMatrix,
    opts: &SpikeCountOptions,
    rng: &mut R,
) -> Result<BootstrapCoefficients> {
    let (n, d) = (x.n(), x.d());
    if opts.r0 == 0 {
        return Err(Error::InvalidInput("r0 must be at least 1".into()));
    }
    if d < opts.r0 + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least r0 + 1 = {} columns, got {d}",
            opts.r0 + 1
        )));
    }
    let m = opts.bootstrap_size;
    let reps = opts.bootstrap_reps.max(1);
    let gm = d as f64 / m as f64;
    let mopts = MomentOptions {
        gamma_variant: opts.gamma_variant,
        clamp_gamma_sq: false,
    };

    let mut plug_sum = vec![0.0; opts.r0];
    let mut plug_cnt = vec![0usize; opts.r0];
    let mut vsum = vec![[0.0; 4]; opts.r0];
    let mut mom_acc = [0.0; 3];
    let mut last_est = None;
    for _ in 0..reps {
        let xb = resample(x, m, rng)?;
        let eig = sym_eigen(&sample_covariance(&xb), 1e-10)?;
        for k in 0..opts.r0 {
            let Ok(l) = invert_psi(eig.eigenvalues[k], gm) else {
                break;
            };
            plug_sum[k] += l;
            plug_cnt[k] += 1;
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let v = VPowerSums::from_vector(&col);
            for (acc, val) in vsum[k].iter_mut().zip([v.s3, v.s4, v.s6, v.s3sq]) {
                *acc += val;
            }
        }
        let est = match opts.moment_source {
            MomentSource::Bootstrap => estimate_all(&xb, &mopts)?,
            MomentSource::Original => estimate_all(x, &mopts)?,
        };
        mom_acc[0] += est.beta_z_hat;
        mom_acc[1] += est.gamma_sq_hat;
        mom_acc[2] += est.delta_hat;
        last_est = Some(est);
    }
    let rf = reps as f64;
    let raw = MomentEstimates {
        beta_z_hat: mom_acc[0] / rf,
        gamma_sq_hat: mom_acc[1] / rf,
        delta_hat: mom_acc[2] / rf,
        ..last_est.expect("at least one bootstrap pass")
    };
    let moments = moment_triple(&raw);

    // keep the leading run of spikes found in every resample
    let mut plugin_spikes = Vec::new();
    let mut vsums = Vec::new();
    for k in 0..opts.r0 {
        if plug_cnt[k] < reps {
            break;
        }
        plugin_spikes.push(plug_sum[k] / rf);
        let a = vsum[k].map(|s| s / rf);
        vsums.push(VPowerSums {
            s3: a[0],
            s4: a[1],
            s6: a[2],
            s3sq: a[3],
        });
    }

    let g = d as f64 / n as f64;
    let eig = sym_eigen(&sample_covariance(x), 1e-10)?;
    // resampling pulls the bulk edge down to `d / m`; only indices whose
    // original eigenvalue clears the gate count as spikes
    let cutoff = gate_cutoff(opts.gate, g, n);
    let detached = eig.eigenvalues.iter().take(opts.r0).take_while(|&&l| l > cutoff).count();
    plugin_spikes.truncate(detached);
    vsums.truncate(detached);
    if opts.plugin_source == PluginSource::Sample {
        plugin_spikes.clear();
        vsums.clear();
        for k in 0..opts.r0 {
            let Ok(l) = invert_psi(eig.eigenvalues[k], g) else {
                break;
            };
            plugin_spikes.push(l);
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            vsums.push(VPowerSums::from_vector(&col));
        }
    }
    let coefficients = assemble(&plugin_spikes, &vsums, &moments, g, n);
    let mut out = BootstrapCoefficients {
        plugin_spikes,
        vsums,
        coefficients,
        moments,
        moment_estimates: Some(raw),
    };
    // iteration hook: spikes are refreshed from the corrected centres
    for _ in 0..opts.extra_passes {
        for (l, c) in out.plugin_spikes.iter_mut().zip(&out.coefficients) {
            if let Ok(v) = invert_psi(c.rho, g) {
                *l = v;
            }
        }
        out.coefficients = assemble(&out.plugin_spikes, &out.vsums, &out.moments, g, n);
    }
    Ok(out)
}

/// Coefficients for every plug-in spike; spikes whose coefficients cannot
/// be formed (subcritical at the original ratio, coincident spikes) are cut
/// off together with everything below them.
fn assemble(
    spikes: &[f64],
    vsums: &[VPowerSums],
    moments: &MomentTriple,
    gamma_n: f64,
    n: usize,
) -> Vec<EdgeworthCoefficients> {
    let usable = spikes
        .iter()
        .take_while(|&&l| (l - 1.0).powi(2) > gamma_n + crate::edgeworth::SINGULAR_TOL)
        .count();
    let set = &spikes[..usable];
    let mut out = Vec::with_capacity(usable);
    for k in 0..usable {
        let Ok(ctx) = SpikeContext::new(set.to_vec(), k, gamma_n, n) else {
            break;
        };
        match coefficients(&ctx, moments, &vsums[k]) {
            Ok(c) => out.push(c),
            Err(_) => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCountEstimate {
    pub r_hat: usize,
    pub method: Method,
    pub sample_eigenvalues: Vec<f64>,
    pub intervals: Vec<ConfidenceInterval>,
    pub plugin_spikes: Vec<f64>,
    pub coefficients: Vec<EdgeworthCoefficients>,
    pub moment_estimates: Option<MomentEstimates>,
}

/// `r_hat = #{k <= r0 : l_hat_k in C_k}`.
pub fn estimate_spike_count<R: Rng + ?Sized>(
    x: &DataMatrix,
    method: Method,
    opts: &SpikeCountOptions,
    rng: &mut R,
) -> Result<SpikeCountEstimate> {
    let boot = bootstrap_coefficients(x, opts, rng)?;
    count_with(x, method, opts, &boot)
}

/// Spike counts for several methods sharing one bootstrap draw.
pub fn estimate_spike_counts<R: Rng + ?Sized>(
    x: &DataMatrix,
    methods: &[Method],
    opts: &SpikeCountOptions,
    rng: &mut R,
) -> Result<Vec<SpikeCountEstimate>> {
    let boot = bootstrap_coefficients(x, opts, rng)?;
    methods
        .iter()
        .map(|&m| count_with(x, m, opts, &boot))
        .collect()
}

fn count_with(
    x: &DataMatrix,
    method: Method,
    opts: &SpikeCountOptions,
    boot: &BootstrapCoefficients,
) -> Result<SpikeCountEstimate> {
    let (n, d) = (x.n(), x.d());
    let g = d as f64 / n as f64;
    let eig = sym_eigen(&sample_covariance(x), 1e-10)?;
    let l_hat: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let cutoff = gate_cutoff(opts.gate, g, n);
    let kmax = opts.r0.min(d);
    let mut intervals = Vec::new();
    let mut r_hat = 0;
    for (k, &lk) in l_hat.iter().enumerate().take(kmax) {
        if !(lk > cutoff) {
            break;
        }
        let coeffs = boot.coefficients.get(k);
        let ci = if method.root_solving() {
            yj_interval(lk, k, g, n, boot, method, opts)?
        } else {
            jb_interval(lk, k, g, n, coeffs, method, opts)?
        };
        if ci.contains(lk) {
            r_hat += 1;
        }
        intervals.push(ci);
    }
    Ok(SpikeCountEstimate {
        r_hat,
        method,
        sample_eigenvalues: l_hat,
        intervals,
        plugin_spikes: boot.plugin_spikes.clone(),
        coefficients: boot.coefficients.clone(),
        moment_estimates: boot.moment_estimates.clone(),
    })
}

fn jb_interval(
    l_hat: f64,
    k: usize,
    g: f64,
    n: usize,
    coeffs: Option<&EdgeworthCoefficients>,
    method: Method,
    opts: &SpikeCountOptions,
) -> Result<ConfidenceInterval> {
    let gaussian_scale = !method.corrected() && opts.baseline_scale == BaselineScale::Gaussian;
    // without bootstrap coefficients the centre falls back to the sample
    // eigenvalue and the scale to the Gaussian one
    let (rho, tsr) = match coeffs {
        Some(c) if gaussian_scale => (c.rho, c.sigma_sq.sqrt() / c.rho),
        Some(c) => (c.rho, c.tilde_sigma() / c.rho),
        None => {
            let l = invert_psi(l_hat, g)?;
            let rho = centering_rho(l, g)?;
            (rho, tilde_sigma_sq(l, g, 0.0)?.sqrt() / rho)
        }
    };
    let c = if method.corrected() { coeffs } else { None };
    let mut ci = ci_scaled(rho, tsr, c, n, opts.level, k)?;
    ci.method = method;
    Ok(ci)
}

fn yj_interval(
    l_hat: f64,
    k: usize,
    g: f64,
    n: usize,
    boot: &BootstrapCoefficients,
    method: Method,
    opts: &SpikeCountOptions,
) -> Result<ConfidenceInterval> {
    let level = opts.level;
    let corrected = method.corrected() && k < boot.coefficients.len();
    let moments = boot.moments;
    // without a bootstrap eigenvector the scale is the Gaussian one
    let pi = match opts.baseline_scale {
        BaselineScale::Gaussian => 0.0,
        BaselineScale::PlugIn => boot.vsums.get(k).map_or(0.0, |v| moments.beta_z * v.s4),
    };
    // the cross-spike term has poles at the other plug-in spikes; it is held
    // at its plug-in value while the single-spike terms follow the trial `l`
    let a_plug = boot.coefficients.get(k).map_or(0.0, |c| c.a_cross);
    let f = |l: f64| -> Result<EdgeworthCoefficients> {
        if corrected {
            let ctx = SpikeContext::single(l, g, n)?;
            let c = coefficients(&ctx, &moments, &boot.vsums[k])?;
            Ok(EdgeworthCoefficients { a_cross: a_plug, ..c })
        } else {
            let rho = centering_rho(l, g)?;
            Ok(EdgeworthCoefficients::gaussian_limit(
                rho,
                tilde_sigma_sq(l, g, pi)?,
            ))
        }
    };
    ci_root_solving_or_plugin(l_hat, g, n, f, corrected, level, k).map(|mut ci| {
        ci.method = method;
        ci
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, generate_data, EntryDistribution, Rotation};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss_single(l: f64, g: f64, n: usize) -> Result<EdgeworthCoefficients> {
        let ctx = SpikeContext::single(l, g, n)?;
        coefficients(&ctx, &MomentTriple::GAUSSIAN, &VPowerSums::AXIS)
    }

    #[test]
    fn invert_psi_values() {
        let rho = centering_rho(4.0, 0.1).unwrap();
        assert_relative_eq!(rho, 4.133_333_333_333_333, epsilon = 1e-12);
        assert_relative_eq!(invert_psi(rho, 0.1).unwrap(), 4.0, epsilon = 1e-10);
        assert_eq!(invert_psi(3.7, 0.0).unwrap(), 3.7);
        // larger root of l^2 - 5.3 l + 4.5
        let l = invert_psi(4.5, 0.2).unwrap();
        assert_relative_eq!(l, (5.3 + (5.3f64 * 5.3 - 18.0).sqrt()) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(l, 4.238_238_017_426_859, epsilon = 1e-12);
    }

    #[test]
    fn invert_psi_below_edge() {
        let err = invert_psi(1.5, 0.25).unwrap_err();
        assert!(matches!(err, Error::BelowThreshold { .. }), "{err}");
        assert!(invert_psi(bulk_edge(0.25), 0.25).is_err());
    }

    proptest! {
        #[test]
        fn psi_round_trip(g in 0.0f64..2.0, excess in 1e-3f64..50.0) {
            let x = bulk_edge(g) + excess;
            let l = invert_psi(x, g).unwrap();
            prop_assert!(l > 1.0 + g.sqrt());
            prop_assert!((centering_rho(l, g).unwrap() - x).abs() <= 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn theta_exceeds_edge() {
        assert_relative_eq!(theta_n(0.1, 200), bulk_edge(0.1) + 0.1f64.sqrt() / 200f64.cbrt(), epsilon = 1e-14);
        assert!(theta_n(0.1, 200) > bulk_edge(0.1));
    }

    #[test]
    fn pivots_at_centre_and_without_correction() {
        let c = gauss_single(4.0, 0.1, 200).unwrap();
        assert_relative_eq!(z_pivot(c.rho, &c, 200), 0.5, epsilon = 1e-15);
        let flat = EdgeworthCoefficients::gaussian_limit(c.rho, c.tilde_sigma_sq);
        for l_hat in [3.0, 3.9, 4.1333, 4.6, 6.0] {
            assert_relative_eq!(e_pivot(l_hat, &flat, 200), z_pivot(l_hat, &flat, 200), epsilon = 1e-15);
            let u = e_pivot(l_hat, &c, 200);
            assert!((0.0..=1.0).contains(&u));
        }
    }

    #[test]
    fn scaled_interval_baseline() {
        let (rho, s, n) = (4.2, 0.35, 100);
        let ci = ci_scaled(rho, s, None, n, 0.9, 0).unwrap();
        let z = normal::quantile(0.95);
        assert_relative_eq!(ci.lo, (-z * s / 10.0 + 1.0) * rho, epsilon = 1e-12);
        assert_relative_eq!(ci.hi, (z * s / 10.0 + 1.0) * rho, epsilon = 1e-12);
        assert_eq!(ci.method, Method::JbGauss);

        let flat = EdgeworthCoefficients::gaussian_limit(rho, 1.0);
        let e = ci_scaled(rho, s, Some(&flat), n, 0.9, 0).unwrap();
        assert_relative_eq!(e.lo, ci.lo, epsilon = 1e-12);
        assert_relative_eq!(e.hi, ci.hi, epsilon = 1e-12);

        let zero = ci_scaled(rho, 0.0, None, n, 0.9, 0).unwrap();
        assert_eq!((zero.lo, zero.hi), (rho, rho));
        assert!(ci_scaled(-1.0, s, None, n, 0.9, 0).is_err());
        assert!(ci_scaled(rho, s, None, n, 1.0, 0).is_err());
    }

    #[test]
    fn scaled_interval_widens_with_level() {
        let c = gauss_single(3.0, 0.1, 200).unwrap();
        let mut prev = (f64::INFINITY, f64::NEG_INFINITY);
        for level in [0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999] {
            let ci = ci_scaled(c.rho, c.tilde_sigma() / c.rho, Some(&c), 200, level, 0).unwrap();
            assert!(ci.lo < prev.0 && ci.hi > prev.1, "level {level}");
            prev = (ci.lo, ci.hi);
        }
    }

    #[test]
    fn root_solving_with_stub_coefficients() {
        // constant scale and no correction: rho(endpoint) = l_hat -/+ z sigma / sqrt(n)
        let (g, n, ts2, l_hat) = (0.1, 200, 30.0, 4.3);
        let stub = |l: f64| Ok(EdgeworthCoefficients::gaussian_limit(centering_rho(l, g)?, ts2));
        let ci = ci_root_solving(l_hat, g, n, stub, false, 0.9, 0).unwrap();
        let half = normal::quantile(0.95) * ts2.sqrt() / (n as f64).sqrt();
        assert_relative_eq!(ci.lo, invert_psi(l_hat - half, g).unwrap(), epsilon = 1e-7);
        assert_relative_eq!(ci.hi, invert_psi(l_hat + half, g).unwrap(), epsilon = 1e-7);
        assert!(!ci.degenerate);
    }

    #[test]
    fn root_solving_without_sign_change() {
        // centre far above every trial value in the bracket
        let stub = |_l: f64| Ok(EdgeworthCoefficients::gaussian_limit(1e6, 1.0));
        let err = ci_root_solving(4.0, 0.1, 100, stub, false, 0.9, 0).unwrap_err();
        assert!(matches!(err, Error::NoRoot { .. }));
        let ci = ci_root_solving_or_plugin(4.0, 0.1, 100, stub, false, 0.9, 2).unwrap();
        assert!(ci.degenerate);
        assert_eq!(ci.lo, invert_psi(4.0, 0.1).unwrap());
        assert_eq!(ci.lo, ci.hi);
        assert_eq!(ci.target, 2);
    }

    #[test]
    fn root_solving_ignores_poles() {
        let g = 0.1;
        // 1 / (l - 3) flips sign across l = 3 without a root there
        let f = |l: f64| {
            let rho = centering_rho(l, g)?;
            Ok(EdgeworthCoefficients::gaussian_limit(rho + 0.01 / (l - 3.0), 30.0))
        };
        let ci = ci_root_solving(4.3, g, 200, f, false, 0.9, 0).unwrap();
        assert!(ci.lo > 3.05, "{ci:?}");
    }

    /// Single spike `l = 4` in dimension 20 with Gaussian entries.
    fn coverage_draws(reps: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = build_model(&[4.0], 19, Rotation::Identity, &mut rng).unwrap();
        (0..reps)
            .map(|_| {
                let x = generate_data(&model, EntryDistribution::Gaussian, 200, &mut rng).unwrap();
                crate::linalg::sample_eigenvalues(&x).unwrap()[0]
            })
            .collect()
    }

    #[test]
    fn root_solving_coverage() {
        let (g, n) = (0.1, 200);
        let draws = coverage_draws(1000, 11);
        let mut hits = 0;
        let mut ordered = 0;
        let mut tested = 0;
        for &l_hat in &draws {
            let Ok(plug) = invert_psi(l_hat, g) else { continue };
            tested += 1;
            let ci = ci_root_solving(l_hat, g, n, |l| gauss_single(l, g, n), true, 0.9, 0).unwrap();
            hits += ci.contains(4.0) as usize;
            ordered += (ci.lo < plug && plug < ci.hi) as usize;
        }
        let cover = hits as f64 / tested as f64;
        assert!((cover - 0.9).abs() <= 0.03, "coverage {cover}");
        assert!(ordered as f64 >= 0.99 * tested as f64, "{ordered}/{tested}");
    }

    #[test]
    fn scaled_membership_rate() {
        let (g, n) = (0.1, 200);
        let c = gauss_single(4.0, g, n).unwrap();
        let ci = ci_scaled(c.rho, c.tilde_sigma() / c.rho, Some(&c), n, 0.9, 0).unwrap();
        let draws = coverage_draws(1000, 12);
        let rate = draws.iter().filter(|&&x| ci.contains(x)).count() as f64 / draws.len() as f64;
        assert!((rate - 0.9).abs() <= 0.03, "membership {rate}");
    }

    fn spiked(spikes: &[f64], d: usize, n: usize, dist: EntryDistribution, rng: &mut ChaCha8Rng) -> DataMatrix {
        let model = build_model(spikes, d - spikes.len(), Rotation::Identity, rng).unwrap();
        generate_data(&model, dist, n, rng).unwrap()
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = spiked(&[3.5, 3.0, 2.5], 20, 200, EntryDistribution::Gaussian, &mut rng);
        let opts = SpikeCountOptions::default();
        let a = bootstrap_coefficients(&x, &opts, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = bootstrap_coefficients(&x, &opts, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coefficients.len(), a.plugin_spikes.len().min(a.coefficients.len()));
    }

    #[test]
    fn bootstrap_finds_three_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let opts = SpikeCountOptions::default();
        let reps = 60;
        let found = (0..reps)
            .filter(|_| {
                let x = spiked(&[3.5, 3.0, 2.5], 40, 400, EntryDistribution::Gaussian, &mut rng);
                bootstrap_coefficients(&x, &opts, &mut rng).unwrap().plugin_spikes.len() >= 3
            })
            .count();
        assert!(found as f64 >= 0.95 * reps as f64, "{found}/{reps}");
    }

    #[test]
    fn bootstrap_moments_on_gaussian_noise() {
        // a single draw of gamma_sq_hat has sd near 1 at this size, so the
        // tolerance is applied to the mean of a few datasets
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 10;
        let mut acc = [0.0; 3];
        for _ in 0..reps {
            let x = spiked(&[], 20, 200, EntryDistribution::Gaussian, &mut rng);
            let boot = bootstrap_coefficients(&x, &SpikeCountOptions::default(), &mut rng).unwrap();
            let est = boot.moment_estimates.unwrap();
            assert_eq!(boot.moments.gamma_sq, est.gamma_sq_hat.max(0.0));
            acc[0] += est.beta_z_hat / reps as f64;
            acc[1] += est.gamma_sq_hat / reps as f64;
            acc[2] += est.delta_hat / reps as f64;
        }
        assert!(acc[0].abs() <= 1.0, "{acc:?}");
        assert!(acc[1].abs() <= 1.0, "{acc:?}");
        assert!((acc[2] - 15.0).abs() <= 30.0, "{acc:?}");
    }

    #[test]
    fn repeated_rows_inflate_resample_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let opts = SpikeCountOptions { moment_source: MomentSource::Bootstrap, ..Default::default() };
        let mean = (0..10)
            .map(|_| {
                let x = spiked(&[], 20, 200, EntryDistribution::Gaussian, &mut rng);
                let boot = bootstrap_coefficients(&x, &opts, &mut rng).unwrap();
                boot.moment_estimates.unwrap().gamma_sq_hat
            })
            .sum::<f64>()
            / 10.0;
        assert!(mean > 1.5, "{mean}");
    }

    #[test]
    fn null_count_is_mostly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let opts = SpikeCountOptions::default();
        let reps = 100;
        let mut zeros = [0usize; 4];
        for _ in 0..reps {
            let x = spiked(&[], 20, 200, EntryDistribution::Gaussian, &mut rng);
            let est = estimate_spike_counts(&x, &Method::ALL, &opts, &mut rng).unwrap();
            for (z, e) in zeros.iter_mut().zip(&est) {
                *z += (e.r_hat == 0) as usize;
            }
        }
        for (m, z) in Method::ALL.iter().zip(zeros) {
            assert!(z as f64 >= 0.8 * reps as f64, "{m}: {z}/{reps}");
        }
    }

    #[test]
    fn count_ignores_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = spiked(&[3.5, 3.0, 2.5], 20, 200, EntryDistribution::Gaussian, &mut rng);
        let mut idx: Vec<usize> = (0..x.n()).collect();
        idx.shuffle(&mut rng);
        let y = x.select_rows(&idx).unwrap();
        let opts = SpikeCountOptions::default();
        // the normal-quantile root-solving interval uses no resample
        let a = estimate_spike_count(&x, Method::YjGauss, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = estimate_spike_count(&y, Method::YjGauss, &opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.r_hat, b.r_hat);
        for (u, v) in a.intervals.iter().zip(&b.intervals) {
            assert_relative_eq!(u.lo, v.lo, epsilon = 1e-9);
            assert_relative_eq!(u.hi, v.hi, epsilon = 1e-9);
        }
        // bootstrap methods: permuting rows and resample indices together
        let boot_x = bootstrap_coefficients(&x, &opts, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let inv: Vec<usize> = {
            let mut inv = vec![0; idx.len()];
            for (pos, &i) in idx.iter().enumerate() {
                inv[i] = pos;
            }
            inv
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let picks: Vec<usize> = (0..opts.bootstrap_size).map(|_| r1.random_range(0..x.n())).collect();
        let xb = x.select_rows(&picks).unwrap();
        let yb = y.select_rows(&picks.iter().map(|&i| inv[i]).collect::<Vec<_>>()).unwrap();
        assert_eq!(xb.values(), yb.values());
        for k in 0..3 {
            let ex = count_with(&x, Method::JbE, &opts, &boot_x).unwrap();
            let ey = count_with(&y, Method::JbE, &opts, &boot_x).unwrap();
            assert_eq!(ex.r_hat, ey.r_hat, "k {k}");
        }
    }

    #[test]
    fn count_nondecreasing_in_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let x = spiked(&[3.5, 3.0, 2.5], 20, 200, EntryDistribution::Gaussian, &mut rng);
            let seed = rng.random::<u64>();
            let mut prev = [0usize; 2];
            for level in [0.5, 0.8, 0.9, 0.99] {
                let opts = SpikeCountOptions { level, ..Default::default() };
                let est = estimate_spike_counts(
                    &x,
                    &[Method::JbE, Method::JbGauss],
                    &opts,
                    &mut ChaCha8Rng::seed_from_u64(seed),
                )
                .unwrap();
                for (p, e) in prev.iter_mut().zip(&est) {
                    assert!(e.r_hat >= *p, "level {level}");
                    assert!(e.r_hat <= e.intervals.len());
                    *p = e.r_hat;
                }
            }
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.label()));
        }
        assert_eq!("jb".parse::<Method>().unwrap(), Method::JbGauss);
        assert!("pca".parse::<Method>().is_err());
    }

    #[test]
    fn too_few_columns() {
        let x = spiked(&[], 4, 50, EntryDistribution::Gaussian, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(bootstrap_coefficients(&x, &SpikeCountOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
