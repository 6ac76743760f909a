//! The generator contract and its two implementations: a seeded synthetic
//! oracle with hidden, skewed group structure, and an HTTP client for an
//! external generator.

mod external;

pub use external::{protocol_router, ExternalGenerator, GenerateRequest, GenerateResponse};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{self, LatentVector, RngHandle};

/// Repo-pinned seed for the default oracle.
pub const DEFAULT_ORACLE_SEED: u64 = 20_240_917;

/// Scale applied to the mixing matrix before `tanh`. Keeps typical
/// pre-activations around 0.5 so the map stays close to linear.
const MIXING_SCALE: f64 = 0.5;

/// Generated output standing in for an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        latent::check_components(&components)?;
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// One generator output: the feature vector and, for real generators, an
/// opaque image reference (path or data URI).
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub feature: FeatureVector,
    pub image_ref: Option<String>,
}

/// Maps latents to feature vectors, order-preserving.
pub trait Generator {
    fn latent_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn generate_batch(&self, batch: &[LatentVector]) -> Result<Vec<Generated>>;
    /// Self-description written into manifest headers.
    fn descriptor(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub group_count: usize,
    pub oracle_seed: u64,
    /// Added to the majority group's hidden score.
    pub skew_bias: f64,
    /// Probability that a training label is replaced by a different group.
    pub label_noise: f64,
    pub majority_group: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            feature_dim: 64,
            group_count: 5,
            oracle_seed: DEFAULT_ORACLE_SEED,
            skew_bias: 2.0,
            label_noise: 0.0,
            majority_group: 3,
        }
    }
}

impl OracleConfig {
    /// Desk-scale preset: d = 16, m = 8, otherwise default.
    pub fn desk() -> Self {
        Self {
            latent_dim: 16,
            feature_dim: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("oracle: {msg}")));
        if self.latent_dim < 2 {
            return fail(format!("latent_dim must be >= 2, got {}", self.latent_dim));
        }
        if self.feature_dim < 2 {
            return fail(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if self.group_count < 2 {
            return fail(format!("group_count must be >= 2, got {}", self.group_count));
        }
        if !(self.skew_bias.is_finite() && self.skew_bias >= 0.0) {
            return fail(format!("skew_bias must be finite and >= 0, got {}", self.skew_bias));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail(format!("label_noise must be in [0, 1), got {}", self.label_noise));
        }
        if self.majority_group >= self.group_count {
            return fail(format!(
                "majority_group {} out of range for {} groups",
                self.majority_group, self.group_count
            ));
        }
        Ok(())
    }
}

/// Hidden structure of the oracle. Exposed for verification only; the
/// pipeline never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// K unit-norm rows, one hidden direction per group.
    pub group_directions: Vec<Vec<f64>>,
    /// K biases; the majority group carries the skew.
    pub group_biases: Vec<f64>,
    /// m x d mixing matrix.
    pub mixing: Vec<Vec<f64>>,
    /// Unit directions whose sign defines the binary synthetic attributes.
    pub attribute_directions: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Builds the hidden structure from `cfg.oracle_seed`.
    ///
    /// Group directions form a regular simplex inside a random K-dimensional
    /// subspace; attribute directions are orthogonal to that subspace when
    /// `d` allows. The rows of the mixing matrix span both, so features carry
    /// the group and attribute signal through the `tanh`.
    pub fn from_seed(cfg: &OracleConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, m, k) = (cfg.latent_dim, cfg.feature_dim, cfg.group_count);
        let mut rng = RngHandle::from_seed(cfg.oracle_seed);
        let extra = m.saturating_sub(k);
        let basis = orthonormal_rows(k + extra, d, &mut rng);

        let mean: Vec<f64> = (0..d)
            .map(|j| basis[..k].iter().map(|row| row[j]).sum::<f64>() / k as f64)
            .collect();
        let group_directions = basis[..k]
            .iter()
            .map(|row| {
                let centered: Vec<f64> = row.iter().zip(&mean).map(|(a, b)| a - b).collect();
                latent::normalized(&centered)
            })
            .collect::<Result<Vec<_>>>()?;
        let attribute_directions = basis[k..].to_vec();

        let mut stacked: Vec<&Vec<f64>> = group_directions.iter().take(m).collect();
        stacked.extend(attribute_directions.iter());
        let rotation = orthonormal_rows(m, m, &mut rng);
        let mixing = rotation
            .iter()
            .map(|r| {
                (0..d)
                    .map(|j| MIXING_SCALE * r.iter().zip(&stacked).map(|(c, row)| c * row[j]).sum::<f64>())
                    .collect()
            })
            .collect();

        let mut group_biases = vec![0.0; k];
        group_biases[cfg.majority_group] = cfg.skew_bias;
        Ok(Self {
            group_directions,
            group_biases,
            mixing,
            attribute_directions,
        })
    }
}

/// `count` unit rows in R^dim; the first `min(count, dim)` are orthonormal.
fn orthonormal_rows(count: usize, dim: usize, rng: &mut RngHandle) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        if rows.len() < dim {
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for r in &rows {
                    let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
                }
            }
        }
        if let Ok(unit) = latent::normalized(&v) {
            rows.push(unit);
        }
    }
    rows
}

/// Seeded synthetic generator: `x = tanh(A z)`, group = argmax_k (W_k z + b_k).
#[derive(Debug, Clone)]
pub struct Oracle {
    cfg: OracleConfig,
    truth: GroundTruth,
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        let truth = GroundTruth::from_seed(&cfg)?;
        Ok(Self { cfg, truth })
    }

    /// Oracle over a hand-built ground truth.
    pub fn with_ground_truth(cfg: OracleConfig, truth: GroundTruth) -> Result<Self> {
        cfg.validate()?;
        let (d, m, k) = (cfg.latent_dim, cfg.feature_dim, cfg.group_count);
        let bad = |what: &str| Err(Error::Config(format!("ground truth: {what}")));
        if truth.group_directions.len() != k || truth.group_biases.len() != k {
            return bad("expected one direction and one bias per group");
        }
        if truth.mixing.len() != m {
            return bad("mixing matrix must have feature_dim rows");
        }
        let rows = truth
            .group_directions
            .iter()
            .chain(&truth.mixing)
            .chain(&truth.attribute_directions);
        for row in rows {
            if row.len() != d {
                return bad("every row must have latent_dim columns");
            }
        }
        Ok(Self { cfg, truth })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn attribute_count(&self) -> usize {
        self.truth.attribute_directions.len()
    }

    pub fn generate(&self, z: &LatentVector) -> Result<FeatureVector> {
        self.check_dim(z)?;
        let x = self
            .truth
            .mixing
            .iter()
            .map(|row| row.iter().zip(z.as_slice()).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect();
        FeatureVector::new(x)
    }

    /// Hidden group; ties go to the lowest index.
    pub fn true_group(&self, z: &LatentVector) -> Result<usize> {
        self.check_dim(z)?;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, (w, b)) in self
            .truth
            .group_directions
            .iter()
            .zip(&self.truth.group_biases)
            .enumerate()
        {
            let score = latent::dot_slices(w, z.as_slice())? + b;
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        Ok(best)
    }

    /// Hidden binary attribute `index`: positive side of its direction.
    pub fn true_attribute(&self, index: usize, z: &LatentVector) -> Result<bool> {
        self.check_dim(z)?;
        let dir = self
            .truth
            .attribute_directions
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("oracle attribute {index}")))?;
        Ok(latent::dot_slices(dir, z.as_slice())? > 0.0)
    }

    /// `n` standard-normal latents with their (possibly noise-flipped) group.
    pub fn labeled_latents(&self, n: usize, rng: &mut RngHandle) -> Result<Vec<(LatentVector, usize)>> {
        let k = self.cfg.group_count;
        (0..n)
            .map(|_| {
                let z = latent::sample_latent(rng, self.cfg.latent_dim)?;
                let mut g = self.true_group(&z)?;
                if self.cfg.label_noise > 0.0 && rng.uniform() < self.cfg.label_noise {
                    g = (g + 1 + rng.below(k - 1)) % k;
                }
                Ok((z, g))
            })
            .collect()
    }

    fn check_dim(&self, z: &LatentVector) -> Result<()> {
        latent::ensure_same_len(self.cfg.latent_dim, z.dim())
    }
}

impl Generator for Oracle {
    fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    fn generate_batch(&self, batch: &[LatentVector]) -> Result<Vec<Generated>> {
        batch
            .iter()
            .map(|z| {
                Ok(Generated {
                    feature: self.generate(z)?,
                    image_ref: None,
                })
            })
            .collect()
    }

    fn descriptor(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "oracle", "config": self.cfg })
    }
}
