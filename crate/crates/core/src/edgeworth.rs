//! Closed-form first-order Edgeworth corrections for a spiked eigenvalue.
//!
//! For a supercritical spike `l` with `gamma_n = p / n`, the standardized
//! statistic `R = sqrt(n) (l_hat - rho) / tilde_sigma` satisfies
//!
//! ```text
//! P(R <= x) = Phi(x) + n^{-1/2} p1(x) phi(x) + o(n^{-1/2}),
//! p1(x) = kappa3 / (6 kappa2^{3/2}) (1 - x^2) - (mu + A) / kappa2^{1/2}.
//! ```
//!
//! `kappa3` uses the form with `(l - 1)^3 + gamma_n` in the numerator for
//! both the single- and multi-spike paths, so that the multi-spike
//! coefficients with one spike coincide with the single-spike ones.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{MomentTriple, VPowerSums};
use crate::normal;

/// Distance from the singular locus `(l - 1)^2 = gamma_n` below which
/// coefficients are refused.
pub const SINGULAR_TOL: f64 = 1e-8;

/// The spike being corrected and the spectrum it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeContext {
    pub all_spikes: Vec<f64>,
    pub k: usize,
    pub gamma_n: f64,
    pub n: usize,
}

impl SpikeContext {
    pub fn new(all_spikes: Vec<f64>, k: usize, gamma_n: f64, n: usize) -> Result<Self> {
        if k >= all_spikes.len() {
            return Err(Error::InvalidInput(format!(
                "spike index {k} out of range ({} spikes)",
                all_spikes.len()
            )));
        }
        if !(gamma_n >= 0.0 && gamma_n.is_finite()) {
            return Err(domain("gamma_n", format!("{gamma_n} is not a ratio")));
        }
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        let l = all_spikes[k];
        check_spike(l, gamma_n)?;
        Ok(Self {
            all_spikes,
            k,
            gamma_n,
            n,
        })
    }

    /// Context for a lone spike.
    pub fn single(l: f64, gamma_n: f64, n: usize) -> Result<Self> {
        Self::new(vec![l], 0, gamma_n, n)
    }

    pub fn l(&self) -> f64 {
        self.all_spikes[self.k]
    }

    /// Same spectrum with the target spike replaced by `l`.
    pub fn with_target(&self, l: f64) -> Result<Self> {
        let mut spikes = self.all_spikes.clone();
        spikes[self.k] = l;
        Self::new(spikes, self.k, self.gamma_n, self.n)
    }
}

fn check_spike(l: f64, gamma_n: f64) -> Result<()> {
    if !(l > 1.0) || !l.is_finite() {
        return Err(domain("spike", format!("l = {l} must exceed 1")));
    }
    if ((l - 1.0).powi(2) - gamma_n).abs() < SINGULAR_TOL {
        return Err(domain(
            "spike",
            format!("l = {l} sits on the singular locus (l - 1)^2 = gamma_n = {gamma_n}"),
        ));
    }
    Ok(())
}

fn check_supercritical(what: &'static str, l: f64, gamma_n: f64) -> Result<f64> {
    check_spike(l, gamma_n)?;
    let gap = (l - 1.0).powi(2) - gamma_n;
    if gap <= 0.0 {
        return Err(domain(
            what,
            format!("l = {l} is subcritical for gamma_n = {gamma_n}"),
        ));
    }
    Ok(gap)
}

/// `rho(l) = l + gamma_n l / (l - 1)`, the almost-sure limit of `l_hat`.
pub fn centering_rho(l: f64, gamma_n: f64) -> Result<f64> {
    if !(l > 1.0) {
        return Err(domain("centering", format!("l = {l} must exceed 1")));
    }
    Ok(l + gamma_n * l / (l - 1.0))
}

/// Gaussian-case variance `2 l^2 (1 - gamma_n / (l - 1)^2)`; negative below
/// the phase transition.
pub fn sigma_sq(l: f64, gamma_n: f64) -> f64 {
    2.0 * l * l * (1.0 - gamma_n / (l - 1.0).powi(2))
}

/// `(4 sigma^-2 + pi l^-2) / (4 sigma^-4)`, with `pi = beta_z sum v^4`,
/// evaluated as `sigma^2 + pi sigma^4 / (4 l^2)` so that `pi = 0` returns
/// `sigma^2` exactly.
pub fn tilde_sigma_sq(l: f64, gamma_n: f64, pi_k: f64) -> Result<f64> {
    let s2 = sigma_sq(l, gamma_n);
    if !(s2 > 0.0) || !(l > 1.0) {
        return Err(domain(
            "scale",
            format!("sigma^2 = {s2} is not positive at l = {l}, gamma_n = {gamma_n}"),
        ));
    }
    Ok(s2 + pi_k * s2 * s2 / (4.0 * l * l))
}

/// `beta_z sum v^4 + 2`.
pub fn tilde_kappa2(beta_z: f64, s4: f64) -> f64 {
    beta_z * s4 + 2.0
}

/// `(Delta - 15 beta_z - 15) s6 + 12 beta_z s4 + 10 Gamma^2 (s3sq - s6) + 8`.
pub fn tilde_kappa3(m: &MomentTriple, v: &VPowerSums) -> f64 {
    (m.delta - 15.0 * m.beta_z - 15.0) * v.s6
        + 12.0 * m.beta_z * v.s4
        + 10.0 * m.gamma_sq * (v.s3sq - v.s6)
        + 8.0
}

/// `tk2 (1 - 1/l)^2 / ((l - 1)^2 - gamma_n)`.
pub fn kappa2(l: f64, gamma_n: f64, tk2: f64) -> Result<f64> {
    let gap = check_supercritical("kappa2", l, gamma_n)?;
    Ok(tk2 * (1.0 - 1.0 / l).powi(2) / gap)
}

/// `tk3 (1 - 1/l)^3 ((l - 1)^3 + gamma_n) / ((l - 1)^2 - gamma_n)^3`.
pub fn kappa3(l: f64, gamma_n: f64, tk3: f64) -> Result<f64> {
    let gap = check_supercritical("kappa3", l, gamma_n)?;
    Ok(tk3 * (1.0 - 1.0 / l).powi(3) * ((l - 1.0).powi(3) + gamma_n) / gap.powi(3))
}

/// Mean term of the linear spectral statistic:
/// `[gamma (l-1)^2 - beta_z gamma^{3/2} ((l-1)^2 - gamma)] / [((l-1)^2 - gamma)^2 (l-1)]`.
pub fn mu_g(l: f64, gamma_n: f64, beta_z: f64) -> Result<f64> {
    let gap = check_supercritical("mu", l, gamma_n)?;
    let a = (l - 1.0).powi(2);
    Ok((gamma_n * a - beta_z * gamma_n.powf(1.5) * gap) / (gap * gap * (l - 1.0)))
}

/// Cross-spike shift
/// `A = (l_k - 1) / ((l_k - 1)^2 - gamma_n) sum_{j != k} (l_j - 1) / (l_k - l_j)`.
pub fn cross_spike_a(ctx: &SpikeContext) -> Result<f64> {
    let lk = ctx.l();
    let gap = check_supercritical("cross-spike term", lk, ctx.gamma_n)?;
    let mut sum = 0.0;
    for (j, &lj) in ctx.all_spikes.iter().enumerate() {
        if j == ctx.k {
            continue;
        }
        if lj == lk {
            return Err(domain(
                "cross-spike term",
                format!("spikes {j} and {} coincide at {lk}", ctx.k),
            ));
        }
        sum += (lj - 1.0) / (lk - lj);
    }
    Ok((lk - 1.0) / gap * sum)
}

/// Every scalar feeding `p1` for one spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthCoefficients {
    pub rho: f64,
    pub sigma_sq: f64,
    pub tilde_sigma_sq: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub mu: f64,
    pub a_cross: f64,
}

/// Assembles the coefficients for spike `ctx.k`.
pub fn coefficients(
    ctx: &SpikeContext,
    moments: &MomentTriple,
    vsums: &VPowerSums,
) -> Result<EdgeworthCoefficients> {
    let l = ctx.l();
    let g = ctx.gamma_n;
    let pi_k = moments.beta_z * vsums.s4;
    Ok(EdgeworthCoefficients {
        rho: centering_rho(l, g)?,
        sigma_sq: sigma_sq(l, g),
        tilde_sigma_sq: tilde_sigma_sq(l, g, pi_k)?,
        kappa2: kappa2(l, g, tilde_kappa2(moments.beta_z, vsums.s4))?,
        kappa3: kappa3(l, g, tilde_kappa3(moments, vsums))?,
        mu: mu_g(l, g, moments.beta_z)?,
        a_cross: cross_spike_a(ctx)?,
    })
}

/// Single-spike coefficients written directly in the `r = 1` form.
pub fn single_spike_coefficients(
    l: f64,
    gamma_n: f64,
    moments: &MomentTriple,
    vsums: &VPowerSums,
) -> Result<EdgeworthCoefficients> {
    check_supercritical("single spike", l, gamma_n)?;
    let lm1 = l - 1.0;
    let shrink = 1.0 - 1.0 / l;
    let gap = lm1 * lm1 - gamma_n;
    let s2 = 2.0 * l * l * (1.0 - gamma_n / (lm1 * lm1));
    let pi = moments.beta_z * vsums.s4;
    let tk2 = pi + 2.0;
    let tk3 = (moments.delta - 15.0 * moments.beta_z - 15.0) * vsums.s6
        + 12.0 * pi
        + 10.0 * moments.gamma_sq * (vsums.s3sq - vsums.s6)
        + 8.0;
    Ok(EdgeworthCoefficients {
        rho: l + gamma_n * l / lm1,
        sigma_sq: s2,
        tilde_sigma_sq: s2 + pi * s2 * s2 / (4.0 * l * l),
        kappa2: tk2 * shrink * shrink / gap,
        kappa3: tk3 * shrink.powi(3) * (lm1.powi(3) + gamma_n) / gap.powi(3),
        mu: (gamma_n * lm1 * lm1 - moments.beta_z * gamma_n.powf(1.5) * gap)
            / (gap * gap * lm1),
        a_cross: 0.0,
    })
}

impl EdgeworthCoefficients {
    /// Coefficients with all corrections switched off (`p1 = 0`).
    pub fn gaussian_limit(rho: f64, tilde_sigma_sq: f64) -> Self {
        Self {
            rho,
            sigma_sq: tilde_sigma_sq,
            tilde_sigma_sq,
            kappa2: 1.0,
            kappa3: 0.0,
            mu: 0.0,
            a_cross: 0.0,
        }
    }

    pub fn tilde_sigma(&self) -> f64 {
        self.tilde_sigma_sq.sqrt()
    }

    /// `p1(x)`.
    pub fn p1(&self, x: f64) -> f64 {
        let k2 = self.kappa2;
        self.kappa3 / (6.0 * k2.powf(1.5)) * (1.0 - x * x) - (self.mu + self.a_cross) / k2.sqrt()
    }

    /// `p1'(x)`.
    pub fn p1_prime(&self, x: f64) -> f64 {
        -self.kappa3 / (3.0 * self.kappa2.powf(1.5)) * x
    }

    /// `Phi(x) + n^{-1/2} p1(x) phi(x)`, unclamped.
    pub fn cdf_raw(&self, x: f64, n: usize) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        normal::cdf(x) + self.p1(x) * normal::pdf(x) / (n as f64).sqrt()
    }

    /// Corrected CDF clamped to `[0, 1]`.
    pub fn cdf(&self, x: f64, n: usize) -> f64 {
        self.cdf_raw(x, n).clamp(0.0, 1.0)
    }

    /// Exact derivative of [`Self::cdf_raw`]:
    /// `phi(x) [1 + n^{-1/2} (p1'(x) - x p1(x))]`.
    pub fn pdf(&self, x: f64, n: usize) -> f64 {
        if !x.is_finite() {
            return 0.0;
        }
        let corr = (self.p1_prime(x) - x * self.p1(x)) / (n as f64).sqrt();
        normal::pdf(x) * (1.0 + corr)
    }

    /// Cornish-Fisher quantile `z_alpha - n^{-1/2} p1(z_alpha)`.
    pub fn quantile(&self, alpha: f64, n: usize) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "quantile level {alpha} not in (0, 1)"
            )));
        }
        let z = normal::quantile(alpha);
        Ok(z - self.p1(z) / (n as f64).sqrt())
    }

    /// `sqrt(n) (l_hat - rho) / tilde_sigma`.
    pub fn r_statistic(&self, l_hat: f64, n: usize) -> f64 {
        (n as f64).sqrt() * (l_hat - self.rho) / self.tilde_sigma()
    }

    /// Scans `[lo, hi]` on `points` grid nodes for a negative density.
    pub fn monotonicity(&self, n: usize, lo: f64, hi: f64, points: usize) -> Monotonicity {
        let points = points.max(2);
        let step = (hi - lo) / (points - 1) as f64;
        let mut report = Monotonicity {
            min_density: f64::INFINITY,
            first_violation: None,
        };
        for i in 0..points {
            let x = lo + step * i as f64;
            let f = self.pdf(x, n);
            report.min_density = report.min_density.min(f);
            if f < 0.0 && report.first_violation.is_none() {
                report.first_violation = Some(x);
            }
        }
        report
    }
}

/// Result of [`EdgeworthCoefficients::monotonicity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub min_density: f64,
    pub first_violation: Option<f64>,
}

impl Monotonicity {
    pub fn is_monotone(&self) -> bool {
        self.first_violation.is_none()
    }
}

pub fn correction_poly_p1(x: f64, c: &EdgeworthCoefficients) -> f64 {
    c.p1(x)
}

pub fn edgeworth_cdf(x: f64, c: &EdgeworthCoefficients, n: usize) -> f64 {
    c.cdf(x, n)
}

pub fn edgeworth_pdf(x: f64, c: &EdgeworthCoefficients, n: usize) -> f64 {
    c.pdf(x, n)
}

pub fn cornish_fisher_quantile(alpha: f64, c: &EdgeworthCoefficients, n: usize) -> Result<f64> {
    c.quantile(alpha, n)
}

pub fn r_statistic(l_hat: f64, c: &EdgeworthCoefficients, n: usize) -> f64 {
    c.r_statistic(l_hat, n)
}
