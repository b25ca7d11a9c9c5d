//! Super-population generators with closed-form moments.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{open_unit, standard_normal};
use crate::population::{FinitePopulation, Outcome, Unit};
use num_rational::BigRational;

/// A hypothetical infinite population of `(Y(1), Y(0))` pairs.
///
/// Gaussian draws use inverse-CDF sampling ([`crate::normal::normal_quantile`])
/// on `(k + 1/2)·2^-52` uniforms, two uniforms per unit in the order
/// `Y(0)`-noise then `Y(1)`-noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SuperPopulationModel {
    BivariateGaussian {
        #[serde(default)]
        mean1: f64,
        #[serde(default)]
        mean0: f64,
        var1: f64,
        var0: f64,
        rho: f64,
    },
    /// `Y(0) ~ N(mean0, var0)` and `Y(1) = Y(0) + tau`.
    ConstantEffect {
        #[serde(default)]
        mean0: f64,
        var0: f64,
        tau: f64,
    },
    /// Each margin takes two values; `probs[a][b] = P(Y(1) = values1[a], Y(0) = values0[b])`.
    TwoPoint {
        values1: [f64; 2],
        values0: [f64; 2],
        probs: [[f64; 2]; 2],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelMoments {
    pub mean1: f64,
    pub mean0: f64,
    pub tau: f64,
    pub v1: f64,
    pub v0: f64,
    pub cov: f64,
    pub vtau: f64,
}

impl SuperPopulationModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        let all_finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            SuperPopulationModel::BivariateGaussian { mean1, mean0, var1, var0, rho } => {
                if !all_finite(&[mean1, mean0, var1, var0, rho]) {
                    return bad("parameters must be finite".into());
                }
                if var1 < 0.0 || var0 < 0.0 {
                    return bad(format!("variances must be ≥ 0, got {var1}, {var0}"));
                }
                if !(-1.0..=1.0).contains(&rho) {
                    return bad(format!("rho must lie in [-1, 1], got {rho}"));
                }
            }
            SuperPopulationModel::ConstantEffect { mean0, var0, tau } => {
                if !all_finite(&[mean0, var0, tau]) {
                    return bad("parameters must be finite".into());
                }
                if var0 < 0.0 {
                    return bad(format!("var0 must be ≥ 0, got {var0}"));
                }
            }
            SuperPopulationModel::TwoPoint { values1, values0, probs } => {
                let masses = probs.as_flattened();
                if !all_finite(&values1) || !all_finite(&values0) || !all_finite(masses) {
                    return bad("parameters must be finite".into());
                }
                if masses.iter().any(|&p| p < 0.0) {
                    return bad("masses must be nonnegative".into());
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("masses must sum to 1, got {total}"));
                }
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> ModelMoments {
        match *self {
            SuperPopulationModel::BivariateGaussian { mean1, mean0, var1, var0, rho } => {
                let cov = rho * (var1 * var0).sqrt();
                ModelMoments {
                    mean1,
                    mean0,
                    tau: mean1 - mean0,
                    v1: var1,
                    v0: var0,
                    cov,
                    vtau: (var1 + var0 - 2.0 * cov).max(0.0),
                }
            }
            SuperPopulationModel::ConstantEffect { mean0, var0, tau } => ModelMoments {
                mean1: mean0 + tau,
                mean0,
                tau,
                v1: var0,
                v0: var0,
                cov: var0,
                vtau: 0.0,
            },
            SuperPopulationModel::TwoPoint { values1, values0, probs } => {
                let mut m1 = 0.0;
                let mut m0 = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        m1 += probs[a][b] * values1[a];
                        m0 += probs[a][b] * values0[b];
                    }
                }
                let (mut v1, mut v0, mut cov, mut vtau) = (0.0, 0.0, 0.0, 0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        let p = probs[a][b];
                        let d1 = values1[a] - m1;
                        let d0 = values0[b] - m0;
                        v1 += p * d1 * d1;
                        v0 += p * d0 * d0;
                        cov += p * d1 * d0;
                        vtau += p * (d1 - d0) * (d1 - d0);
                    }
                }
                ModelMoments {
                    mean1: m1,
                    mean0: m0,
                    tau: m1 - m0,
                    v1,
                    v0,
                    cov,
                    vtau,
                }
            }
        }
    }

    /// Correlation of `(Y(1), Y(0))`, when both variances are positive.
    pub fn rho(&self) -> Option<f64> {
        let m = self.moments();
        (m.v1 > 0.0 && m.v0 > 0.0).then(|| m.cov / (m.v1 * m.v0).sqrt())
    }

    /// One IID draw of `(y1, y0)`.
    pub fn draw_unit<R: RngCore + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match *self {
            SuperPopulationModel::BivariateGaussian { mean1, mean0, var1, var0, rho } => {
                let z0 = standard_normal(rng);
                let z1 = standard_normal(rng);
                let y0 = mean0 + var0.sqrt() * z0;
                let y1 = mean1 + var1.sqrt() * (rho * z0 + (1.0 - rho * rho).sqrt() * z1);
                (y1, y0)
            }
            SuperPopulationModel::ConstantEffect { mean0, var0, tau } => {
                let y0 = mean0 + var0.sqrt() * standard_normal(rng);
                (y0 + tau, y0)
            }
            SuperPopulationModel::TwoPoint { values1, values0, probs } => {
                let u = open_unit(rng.next_u64());
                let mut acc = 0.0;
                for (a, row) in probs.iter().enumerate() {
                    for (b, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return (values1[a], values0[b]);
                        }
                    }
                }
                // Rounding left a sliver above the last cumulative mass.
                let (a, b) = last_positive_cell(&probs);
                (values1[a], values0[b])
            }
        }
    }
}

fn last_positive_cell(probs: &[[f64; 2]; 2]) -> (usize, usize) {
    [(1, 1), (1, 0), (0, 1), (0, 0)]
        .into_iter()
        .find(|&(a, b)| probs[a][b] > 0.0)
        .unwrap_or((1, 1))
}

impl SuperPopulationModel {
    /// One draw as stored outcomes. Constant-effect units are kept as exact
    /// dyadic rationals so that `y1 − y0 = tau` holds exactly.
    pub fn draw_outcomes<R: RngCore + ?Sized>(&self, rng: &mut R) -> (Outcome, Outcome) {
        let (y1, y0) = self.draw_unit(rng);
        match *self {
            SuperPopulationModel::ConstantEffect { tau, .. } => {
                let exact = |x: f64| BigRational::from_float(x).expect("draws are finite");
                let y0 = exact(y0);
                (Outcome::Exact(&y0 + exact(tau)), Outcome::Exact(y0))
            }
            _ => (Outcome::Float(y1), Outcome::Float(y0)),
        }
    }
}

pub fn model_moments(model: &SuperPopulationModel) -> ModelMoments {
    model.moments()
}

/// Draws `n` IID units. Unit ids are `1..=n`.
pub fn draw_population<R: RngCore + ?Sized>(
    model: &SuperPopulationModel,
    n: usize,
    rng: &mut R,
) -> Result<FinitePopulation> {
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    model.validate()?;
    let units = (1..=n)
        .map(|i| {
            let (y1, y0) = model.draw_outcomes(rng);
            Unit::new(i.to_string(), y1, y0)
        })
        .collect();
    FinitePopulation::new(units)
}
