//! Estimators of `beta_z = E Z^4 - 3`, `Gamma^2 = (E Z^3)^2` and
//! `Delta = E Z^6` built from leave-one-out / leave-two-out quadratic forms
//! `x_j' S_j^-1 x_j` and `x_j' S_jk^-1 x_k`.
//!
//! The statistics are affine invariant: replacing `X` by `X A` for any
//! invertible `A` leaves every quadratic form unchanged, so spiked
//! population covariances do not bias them.
//!
//! All quadratic forms are derived from one `n x n` matrix:
//!
//! - `d < n - 2`: `G = X S^-1 X'`; removing a set `R` of rows gives
//!   `Q_R = n G_RR (n I - G_RR)^-1` (Woodbury on the `|R| x |R|` block).
//! - `d >= n`: the pseudo-inverse route. With `P = (X X')^-1`,
//!   `Q_R = n (P_RR^-1 (P^2)_RR P_RR^-1 - I)`.
//! - `n - 2 <= d < n`: each removal is handled explicitly.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, spd_inverse, DataMatrix, DEFAULT_RANK_TOL};
use crate::model::MomentTriple;

/// Which estimator family produced the numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Genuine leave-out inverses (`p < n - 2`).
    PLtN,
    /// Leave-out pseudo-inverses, no `gamma_n` adjustment (`p >= n - 2`).
    PGtNPseudo,
}

/// The two displayed forms of the squared-skewness estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaVariant {
    /// `sum_{i != j} (x_i' S_ij^-1 x_j)^2 (x_j' S_ij^-1 x_j)`.
    MainText,
    /// `sum_{j != k} (x_j' S_jk^-1 x_j)(x_j' S_jk^-1 x_k)(x_k' S_jk^-1 x_k)`.
    #[default]
    ProofSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentOptions {
    pub gamma_variant: GammaVariant,
    /// Replace a negative `Gamma^2` estimate by zero.
    pub clamp_gamma_sq: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub beta_z_hat: f64,
    pub gamma_sq_hat: f64,
    pub delta_hat: f64,
    pub regime: Regime,
    /// Raw `Gamma^2` estimate was negative (reported unclamped unless
    /// [`MomentOptions::clamp_gamma_sq`] is set).
    pub gamma_sq_negative: bool,
    pub notes: Vec<String>,
}

impl MomentEstimates {
    pub fn triple(&self) -> MomentTriple {
        MomentTriple::new(self.beta_z_hat, self.gamma_sq_hat, self.delta_hat)
    }
}

enum Engine {
    Downdate { g: DMatrix<f64> },
    Pseudo { p: DMatrix<f64>, p2: DMatrix<f64> },
    Explicit { k: DMatrix<f64> },
}

/// Leave-out quadratic forms of one data matrix.
pub struct QuadForms<'a> {
    x: &'a DataMatrix,
    engine: Engine,
}

impl<'a> QuadForms<'a> {
    pub fn new(x: &'a DataMatrix) -> Result<Self> {
        let (n, d) = (x.n(), x.d());
        let xm = x.values();
        let engine = if d + 2 < n {
            let s_inv = spd_inverse(&(xm.tr_mul(xm) / n as f64))
                .map_err(|_| Error::Singular("sample covariance".into()))?;
            Engine::Downdate {
                g: xm * s_inv * xm.transpose(),
            }
        } else if d >= n {
            let k = xm * xm.transpose();
            let p = spd_inverse(&k)
                .map_err(|_| Error::Singular("observation Gram matrix".into()))?;
            let p2 = &p * &p;
            Engine::Pseudo { p, p2 }
        } else {
            Engine::Explicit {
                k: xm * xm.transpose(),
            }
        };
        Ok(Self { x, engine })
    }

    pub fn regime(&self) -> Regime {
        match self.engine {
            Engine::Downdate { .. } => Regime::PLtN,
            _ => Regime::PGtNPseudo,
        }
    }

    /// `x_j' S_j^-1 x_j` (pseudo-inverse when `S_j` is singular).
    pub fn loo(&self, j: usize) -> Result<f64> {
        let n = self.x.n() as f64;
        match &self.engine {
            Engine::Downdate { g } => {
                let h = g[(j, j)];
                let den = n - h;
                if den.abs() < 1e-8 * n {
                    return Err(Error::Singular(format!("leave-one-out covariance S_{j}")));
                }
                Ok(n * h / den)
            }
            Engine::Pseudo { p, p2 } => {
                let pjj = p[(j, j)];
                Ok(n * (p2[(j, j)] / (pjj * pjj) - 1.0))
            }
            Engine::Explicit { k } => Ok(self.explicit(k, &[j])?[(0, 0)]),
        }
    }

    /// `(x_j' S_jk^-1 x_j, x_j' S_jk^-1 x_k, x_k' S_jk^-1 x_k)`.
    pub fn lto(&self, j: usize, k: usize) -> Result<[f64; 3]> {
        let n = self.x.n() as f64;
        let q = match &self.engine {
            Engine::Downdate { g } => {
                let h = Matrix2::new(g[(j, j)], g[(j, k)], g[(k, j)], g[(k, k)]);
                let inv = (Matrix2::identity() * n - h).try_inverse().ok_or_else(|| {
                    Error::Singular(format!("leave-two-out covariance S_{j}{k}"))
                })?;
                h * inv * n
            }
            Engine::Pseudo { p, p2 } => {
                let prr = Matrix2::new(p[(j, j)], p[(j, k)], p[(k, j)], p[(k, k)]);
                let p2rr = Matrix2::new(p2[(j, j)], p2[(j, k)], p2[(k, j)], p2[(k, k)]);
                let inv = prr.try_inverse().ok_or_else(|| {
                    Error::Singular(format!("Gram block for rows {j}, {k}"))
                })?;
                (inv * p2rr * inv - Matrix2::identity()) * n
            }
            Engine::Explicit { k: gram } => {
                let m = self.explicit(gram, &[j, k])?;
                Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
            }
        };
        Ok([q[(0, 0)], 0.5 * (q[(0, 1)] + q[(1, 0)]), q[(1, 1)]])
    }

    /// Direct evaluation of `x_a' (A'A / n)^+ x_b` for `a, b` in `removed`,
    /// `A` the remaining rows.
    fn explicit(&self, gram: &DMatrix<f64>, removed: &[usize]) -> Result<DMatrix<f64>> {
        explicit_quad_forms(self.x, gram, removed)
    }
}

/// Reference evaluation of the leave-out quadratic forms straight from the
/// definition; `gram` is `X X'`.
pub fn explicit_quad_forms(
    x: &DataMatrix,
    gram: &DMatrix<f64>,
    removed: &[usize],
) -> Result<DMatrix<f64>> {
    let (n, d) = (x.n(), x.d());
    let keep: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
    let r = removed.len();
    let mut out = DMatrix::zeros(r, r);
    if keep.len() > d {
        let a = x.select_rows(&keep)?;
        let s = a.values().tr_mul(a.values()) / n as f64;
        let inv = match spd_inverse(&s) {
            Ok(inv) => inv,
            Err(_) => pseudo_inverse(&s, DEFAULT_RANK_TOL)?,
        };
        for (ai, &ra) in removed.iter().enumerate() {
            for (bi, &rb) in removed.iter().enumerate() {
                out[(ai, bi)] = x.row(ra).dot(&(&inv * x.row(rb)));
            }
        }
    } else {
        // (A'A)^+ = A' (A A')^-2 A for A of full row rank.
        let kaa = DMatrix::from_fn(keep.len(), keep.len(), |i, j| gram[(keep[i], keep[j])]);
        let kinv = match spd_inverse(&kaa) {
            Ok(inv) => inv,
            Err(_) => pseudo_inverse(&kaa, DEFAULT_RANK_TOL)?,
        };
        let k2 = &kinv * &kinv;
        let cols: Vec<_> = removed
            .iter()
            .map(|&ra| {
                nalgebra::DVector::from_iterator(keep.len(), keep.iter().map(|&i| gram[(i, ra)]))
            })
            .collect();
        for ai in 0..r {
            for bi in 0..r {
                out[(ai, bi)] = n as f64 * cols[ai].dot(&(&k2 * &cols[bi]));
            }
        }
    }
    Ok(out)
}

fn gamma_n(x: &DataMatrix) -> f64 {
    x.d() as f64 / x.n() as f64
}

fn loo_forms(q: &QuadForms<'_>) -> Result<Vec<f64>> {
    (0..q.x.n()).map(|j| q.loo(j)).collect()
}

fn beta_from_forms(forms: &[f64], n: usize, p: usize) -> f64 {
    let g = p as f64 / n as f64;
    let c = 1.0 - g;
    let centre = p as f64 / c;
    let ss: f64 = forms.iter().map(|f| (f - centre).powi(2)).sum();
    c * c / (n as f64 * p as f64) * ss - 2.0 / c
}

fn delta_from_forms(forms: &[f64], n: usize, p: usize, beta_hat: f64) -> f64 {
    let g = p as f64 / n as f64;
    let c = 1.0 - g;
    let centre = p as f64 / c;
    let s3: f64 = forms.iter().map(|f| (f - centre).powi(3)).sum();
    c.powi(3) / (n as f64 * p as f64) * s3 - (12.0 * beta_hat + 6.0) / c + 15.0 * beta_hat + 21.0
        - 8.0 * (1.0 + g) / (c * c)
}

fn gamma_from_forms(q: &QuadForms<'_>, variant: GammaVariant) -> Result<f64> {
    let (n, p) = (q.x.n(), q.x.d());
    let c = 1.0 - gamma_n(q.x);
    let mut total = 0.0;
    for j in 0..n {
        let mut row = 0.0;
        for k in (j + 1)..n {
            let [jj, jk, kk] = q.lto(j, k)?;
            row += match variant {
                // symmetric in (j, k): both ordered pairs contribute equally
                GammaVariant::ProofSymmetric => 2.0 * jj * jk * kk,
                // (i, j) = (j, k) and (k, j)
                GammaVariant::MainText => jk * jk * (kk + jj),
            };
        }
        total += row;
    }
    Ok(c.powi(3) / (n as f64 * (n as f64 - 1.0) * p as f64) * total)
}

fn require_inverse_regime(x: &DataMatrix, slack: usize, what: &str) -> Result<()> {
    if x.d() + slack >= x.n() {
        return Err(Error::InvalidInput(format!(
            "{what} needs p < n - {slack} (p = {}, n = {}); use estimate_all for the pseudo-inverse regime",
            x.d(),
            x.n()
        )));
    }
    Ok(())
}

/// `(1-g)^2 / (n p) sum_j (x_j' S_j^-1 x_j - p/(1-g))^2 - 2/(1-g)`.
pub fn estimate_beta_z(x: &DataMatrix) -> Result<f64> {
    require_inverse_regime(x, 2, "beta_z estimator")?;
    let q = QuadForms::new(x)?;
    Ok(beta_from_forms(&loo_forms(&q)?, x.n(), x.d()))
}

/// Squared-skewness estimator from leave-two-out quadratic forms.
pub fn estimate_gamma_sq(x: &DataMatrix, variant: GammaVariant) -> Result<f64> {
    require_inverse_regime(x, 2, "Gamma^2 estimator")?;
    gamma_from_forms(&QuadForms::new(x)?, variant)
}

/// Sixth-moment estimator; `beta_hat` is the fourth-cumulant estimate.
pub fn estimate_delta(x: &DataMatrix, beta_hat: f64) -> Result<f64> {
    require_inverse_regime(x, 2, "Delta estimator")?;
    let q = QuadForms::new(x)?;
    Ok(delta_from_forms(&loo_forms(&q)?, x.n(), x.d(), beta_hat))
}

/// All three estimators, dispatching on `p` vs `n`.
pub fn estimate_all(x: &DataMatrix, opts: &MomentOptions) -> Result<MomentEstimates> {
    let (n, p) = (x.n(), x.d());
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "moment estimation needs n >= 10, got {n}"
        )));
    }
    let q = QuadForms::new(x)?;
    let regime = q.regime();
    let forms = loo_forms(&q)?;
    let beta_z_hat = beta_from_forms(&forms, n, p);
    let delta_hat = delta_from_forms(&forms, n, p, beta_z_hat);
    let raw_gamma = gamma_from_forms(&q, opts.gamma_variant)?;

    let mut notes = vec![
        format!("beta_z, delta: {n} leave-one-out terms"),
        format!("gamma_sq ({:?}): {} ordered pairs", opts.gamma_variant, n * (n - 1)),
    ];
    if regime == Regime::PGtNPseudo {
        notes.push(format!(
            "p = {p} >= n - 2 = {}: pseudo-inverse statistics, no gamma_n adjustment",
            n.saturating_sub(2)
        ));
    }
    let gamma_sq_negative = raw_gamma < 0.0;
    let gamma_sq_hat = if gamma_sq_negative && opts.clamp_gamma_sq {
        notes.push(format!("gamma_sq clamped from {raw_gamma}"));
        0.0
    } else {
        raw_gamma
    };
    Ok(MomentEstimates {
        beta_z_hat,
        gamma_sq_hat,
        delta_hat,
        regime,
        gamma_sq_negative,
        notes,
    })
}
