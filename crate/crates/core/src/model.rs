//! Spiked population model, standardized entry laws and data generation.
//!
//! The population covariance is `Sigma = V diag(l_1, .., l_r, 1, .., 1) V'`
//! on `d = p + r` variables, and data are generated as `X = Z Sigma^{1/2}`
//! with i.i.d. standardized entries `Z_ij`.
//!
//! Gamma laws are parameterized as `Ga(shape, rate)`, so `Ga(1, 2)` has mean
//! `1/2`. Under that reading `Ga(1,1) - 1` and `2 Ga(1,2) - 1` are the same
//! law (a centered unit exponential); both tags are kept.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DataMatrix;

/// Standardized (mean 0, variance 1) entry distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryDistribution {
    /// `N(0, 1)`.
    Gaussian,
    /// `U(-sqrt 3, sqrt 3)`.
    Uniform,
    /// `(chi^2(1) - 1) / sqrt 2`.
    Chi1,
    /// `Ga(1, 1) - 1`.
    Ga11,
    /// `2 Ga(1, 2) - 1`.
    Ga12,
    /// `sqrt 2 (Ga(2, 2) - 1)`.
    Ga22,
    /// `sqrt 3 (Ga(3, 3) - 1)`.
    Ga33,
}

impl EntryDistribution {
    pub const ALL: [EntryDistribution; 7] = [
        Self::Gaussian,
        Self::Uniform,
        Self::Chi1,
        Self::Ga11,
        Self::Ga12,
        Self::Ga22,
        Self::Ga33,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
            Self::Chi1 => "chi1",
            Self::Ga11 => "ga11",
            Self::Ga12 => "ga12",
            Self::Ga22 => "ga22",
            Self::Ga33 => "ga33",
        }
    }

    /// Gamma shape `a` such that the law is `(W - a) / sqrt(a)` with
    /// `W ~ Ga(a, 1)`; `None` for the two symmetric laws.
    fn gamma_shape(self) -> Option<f64> {
        match self {
            Self::Gaussian | Self::Uniform => None,
            Self::Chi1 => Some(0.5),
            Self::Ga11 | Self::Ga12 => Some(1.0),
            Self::Ga22 => Some(2.0),
            Self::Ga33 => Some(3.0),
        }
    }

    pub fn sampler(self) -> EntrySampler {
        let kind = match self {
            Self::Gaussian => SamplerKind::Normal,
            Self::Uniform => SamplerKind::Uniform,
            Self::Chi1 => SamplerKind::Chi1,
            Self::Ga11 => SamplerKind::Exp,
            // rand_distr's Gamma takes (shape, scale = 1 / rate).
            Self::Ga12 => SamplerKind::Affine {
                gamma: Gamma::new(1.0, 0.5).expect("valid gamma"),
                mul: 2.0,
                shift: 1.0,
            },
            Self::Ga22 => SamplerKind::Affine {
                gamma: Gamma::new(2.0, 0.5).expect("valid gamma"),
                mul: 2f64.sqrt(),
                shift: 2f64.sqrt(),
            },
            Self::Ga33 => SamplerKind::Affine {
                gamma: Gamma::new(3.0, 1.0 / 3.0).expect("valid gamma"),
                mul: 3f64.sqrt(),
                shift: 3f64.sqrt(),
            },
        };
        EntrySampler { kind }
    }

    /// Exact `(beta_z, Gamma^2, Delta)` of the law.
    pub fn population_moments(self) -> MomentTriple {
        match self {
            Self::Gaussian => MomentTriple::new(0.0, 0.0, 15.0),
            Self::Uniform => MomentTriple::new(-1.2, 0.0, 27.0 / 7.0),
            _ => {
                // Central moments of Ga(a, 1) from its cumulants a (m-1)!:
                // m3 = 2a, m4 = 3a^2 + 6a, m6 = 15a^3 + 130a^2 + 120a.
                let a = self.gamma_shape().expect("gamma law");
                MomentTriple::new(
                    6.0 / a,
                    4.0 / a,
                    15.0 + 130.0 / a + 120.0 / (a * a),
                )
            }
        }
    }
}

impl fmt::Display for EntryDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EntryDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // accept the long tags too: "StdGa12", "Uniform√3"
        let lower = s.to_lowercase().replace("√3", "").replace("sqrt3", "");
        let key = lower.strip_prefix("std").unwrap_or(&lower);
        let found = match key {
            "gaussian" | "normal" | "n01" => Self::Gaussian,
            "uniform" | "unif" => Self::Uniform,
            "chi1" | "chisq1" => Self::Chi1,
            "ga11" => Self::Ga11,
            "ga12" => Self::Ga12,
            "ga22" => Self::Ga22,
            "ga33" => Self::Ga33,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown distribution '{s}' (expected one of gaussian, uniform, chi1, ga11, ga12, ga22, ga33)"
                )))
            }
        };
        Ok(found)
    }
}

#[derive(Debug, Clone, Copy)]
enum SamplerKind {
    Normal,
    Uniform,
    Chi1,
    Exp,
    /// `mul * G - shift`.
    Affine { gamma: Gamma<f64>, mul: f64, shift: f64 },
}

/// Prepared sampler for one [`EntryDistribution`].
#[derive(Debug, Clone, Copy)]
pub struct EntrySampler {
    kind: SamplerKind,
}

impl Distribution<f64> for EntrySampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            SamplerKind::Normal => rng.sample(StandardNormal),
            SamplerKind::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            SamplerKind::Chi1 => {
                let z: f64 = rng.sample(StandardNormal);
                (z * z - 1.0) / 2f64.sqrt()
            }
            SamplerKind::Exp => {
                let e: f64 = rng.sample(Exp1);
                e - 1.0
            }
            SamplerKind::Affine { gamma, mul, shift } => mul * gamma.sample(rng) - shift,
        }
    }
}

/// One draw from `dist`.
pub fn sample_entry<R: Rng + ?Sized>(dist: EntryDistribution, rng: &mut R) -> f64 {
    dist.sampler().sample(rng)
}

/// `(beta_z, Gamma^2, Delta) = (E Z^4 - 3, (E Z^3)^2, E Z^6)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTriple {
    pub beta_z: f64,
    pub gamma_sq: f64,
    pub delta: f64,
}

impl MomentTriple {
    pub const GAUSSIAN: MomentTriple = MomentTriple {
        beta_z: 0.0,
        gamma_sq: 0.0,
        delta: 15.0,
    };

    pub fn new(beta_z: f64, gamma_sq: f64, delta: f64) -> Self {
        Self {
            beta_z,
            gamma_sq,
            delta,
        }
    }

    /// Whether the triple can belong to a standardized law.
    pub fn is_admissible(&self) -> bool {
        self.beta_z >= -2.0 && self.gamma_sq >= 0.0 && self.delta >= 1.0
    }
}

/// Orientation of the spike eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    /// `Sigma` diagonal; spike `k` sits on coordinate `k`.
    Identity,
    /// A `k x k` Haar block on the leading coordinates, identity elsewhere.
    EmbeddedHaar(usize),
    /// A full `d x d` Haar rotation.
    FullHaar,
}

/// Population description: spikes, bulk dimension and eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel {
    spikes: Vec<f64>,
    bulk_dim: usize,
    rotation: Rotation,
    /// Full orthogonal eigenvector matrix `V`; the leading `r` columns are `V1`.
    v: DMatrix<f64>,
    sqrt_sigma: DMatrix<f64>,
}

impl SpikedModel {
    pub fn spikes(&self) -> &[f64] {
        &self.spikes
    }

    pub fn r(&self) -> usize {
        self.spikes.len()
    }

    pub fn bulk_dim(&self) -> usize {
        self.bulk_dim
    }

    /// Total dimension `p + r`.
    pub fn dim(&self) -> usize {
        self.bulk_dim + self.spikes.len()
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Spike eigenvectors, `(p + r) x r`.
    pub fn v1(&self) -> DMatrix<f64> {
        self.v.columns(0, self.r()).into_owned()
    }

    pub fn sqrt_sigma(&self) -> &DMatrix<f64> {
        &self.sqrt_sigma
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.sqrt_sigma * &self.sqrt_sigma
    }

    /// `gamma_n = (d - r) / n`, the bulk dimension over the sample size.
    pub fn gamma_n(&self, n: usize) -> f64 {
        self.bulk_dim as f64 / n as f64
    }

    /// Per-spike flag `l_k > 1 + sqrt(gamma_n)`.
    pub fn supercritical(&self, n: usize) -> Vec<bool> {
        let edge = 1.0 + self.gamma_n(n).sqrt();
        self.spikes.iter().map(|&l| l > edge).collect()
    }

    /// Power sums of spike eigenvector `k`.
    pub fn v_power_sums(&self, k: usize) -> Result<VPowerSums> {
        v_power_sums(&self.v1(), k)
    }
}

pub fn validate_spikes(spikes: &[f64]) -> Result<()> {
    if let Some(bad) = spikes.iter().find(|l| !l.is_finite() || **l <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "spikes must be finite and > 1, got {bad}"
        )));
    }
    if spikes.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidInput(format!(
            "spikes must be strictly decreasing, got {spikes:?}"
        )));
    }
    Ok(())
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// columns of `Q` re-signed so that `R` has a positive diagonal.
pub fn haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds `Sigma = V diag(spikes, 1, .., 1) V'` with `V = Q'` and `Q`
/// drawn according to `rotation`.
pub fn build_model<R: Rng + ?Sized>(
    spikes: &[f64],
    p: usize,
    rotation: Rotation,
    rng: &mut R,
) -> Result<SpikedModel> {
    validate_spikes(spikes)?;
    let r = spikes.len();
    let d = p + r;
    if d == 0 {
        return Err(Error::InvalidInput("model has zero dimension".into()));
    }
    let q = match rotation {
        Rotation::Identity => DMatrix::identity(d, d),
        Rotation::EmbeddedHaar(k) => {
            if k == 0 || k > d {
                return Err(Error::InvalidInput(format!(
                    "embedded Haar block of size {k} does not fit dimension {d}"
                )));
            }
            let mut q = DMatrix::identity(d, d);
            q.view_mut((0, 0), (k, k)).copy_from(&haar_orthogonal(k, rng));
            q
        }
        Rotation::FullHaar => haar_orthogonal(d, rng),
    };
    let v = q.transpose();
    let mut root = DVector::from_element(d, 1.0);
    for (k, &l) in spikes.iter().enumerate() {
        root[k] = l.sqrt();
    }
    let mut sqrt_sigma = &v * DMatrix::from_diagonal(&root) * v.transpose();
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (sqrt_sigma[(i, j)] + sqrt_sigma[(j, i)]);
            sqrt_sigma[(i, j)] = m;
            sqrt_sigma[(j, i)] = m;
        }
    }
    Ok(SpikedModel {
        spikes: spikes.to_vec(),
        bulk_dim: p,
        rotation,
        v,
        sqrt_sigma,
    })
}

/// Standardized entry matrix `Z` (`n x d`), filled row by row.
pub fn sample_entries<R: Rng + ?Sized>(
    dist: EntryDistribution,
    n: usize,
    d: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let sampler = dist.sampler();
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = sampler.sample(rng);
        }
    }
    z
}

/// `X = Z Sigma^{1/2}` with `n` observations.
pub fn generate_data<R: Rng + ?Sized>(
    model: &SpikedModel,
    dist: EntryDistribution,
    n: usize,
    rng: &mut R,
) -> Result<DataMatrix> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2, got {n}")));
    }
    let z = sample_entries(dist, n, model.dim(), rng);
    let x = if model.rotation == Rotation::Identity {
        let mut x = z;
        for (k, &l) in model.spikes.iter().enumerate() {
            x.column_mut(k).scale_mut(l.sqrt());
        }
        x
    } else {
        z * &model.sqrt_sigma
    };
    DataMatrix::new(x)
}

/// `(sum v^3, sum v^4, sum v^6, (sum v^3)^2)` over one spike eigenvector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPowerSums {
    pub s3: f64,
    pub s4: f64,
    pub s6: f64,
    pub s3sq: f64,
}

impl VPowerSums {
    /// Values for a coordinate-axis eigenvector.
    pub const AXIS: VPowerSums = VPowerSums {
        s3: 1.0,
        s4: 1.0,
        s6: 1.0,
        s3sq: 1.0,
    };

    pub fn from_vector(v: &[f64]) -> Self {
        let (mut s3, mut s4, mut s6) = (0.0, 0.0, 0.0);
        for &x in v {
            let x2 = x * x;
            s3 += x2 * x;
            s4 += x2 * x2;
            s6 += x2 * x2 * x2;
        }
        Self {
            s3,
            s4,
            s6,
            s3sq: s3 * s3,
        }
    }
}

/// Power sums of column `k` of `v1`.
pub fn v_power_sums(v1: &DMatrix<f64>, k: usize) -> Result<VPowerSums> {
    if k >= v1.ncols() {
        return Err(Error::InvalidInput(format!(
            "column {k} out of range ({} spike vectors)",
            v1.ncols()
        )));
    }
    let col: Vec<f64> = v1.column(k).iter().copied().collect();
    Ok(VPowerSums::from_vector(&col))
}

/// Numbered experimental settings: `(spikes, rotation)` for ids 1..=9.
pub fn table_setting(id: u8) -> Result<(Vec<f64>, Rotation)> {
    let spikes = match id {
        1 | 4 | 7 => vec![4.0],
        2 | 5 | 8 => vec![6.0, 4.0],
        3 | 6 | 9 => vec![8.0, 6.0, 4.0],
        _ => {
            return Err(Error::InvalidInput(format!(
                "setting must be in 1..=9, got {id}"
            )))
        }
    };
    let rotation = match id {
        1..=3 => Rotation::Identity,
        4..=6 => Rotation::EmbeddedHaar(3),
        _ => Rotation::FullHaar,
    };
    Ok((spikes, rotation))
}
