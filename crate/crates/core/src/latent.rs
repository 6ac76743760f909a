//! Latent vectors, seeded Gaussian sampling and the small linear-algebra
//! kernel shared by the rest of the crate.
//!
//! Sampling uses ChaCha20 from `rand_chacha` with the ziggurat standard
//! normal from `rand_distr`. Outputs are bit-reproducible for a given seed on
//! a given build; cross-implementation equality is not promised, which is why
//! [`PRNG_ID`] is written into run metadata.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identity of the random stream, recorded in manifests and reports.
pub const PRNG_ID: &str = "chacha20(rand_chacha-0.9)+ziggurat-normal(rand_distr-0.5)";

/// Norms at or below this are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// A point in the generator's input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_components(&components)?;
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
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

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl AsRef<[f64]> for LatentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for LatentVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LatentVector> for Vec<f64> {
    fn from(v: LatentVector) -> Self {
        v.0
    }
}

pub(crate) fn check_components(components: &[f64]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::InvalidDimension(
            "vector must have at least one component".into(),
        ));
    }
    match components.iter().position(|c| !c.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Seeded random stream. One handle per worker; see [`RngHandle::for_worker`].
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngHandle {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Worker `index` draws from the stream seeded with `root ^ index`.
    pub fn for_worker(root: u64, index: u64) -> Self {
        Self::from_seed(root ^ index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.rng, 0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, &mut self.rng);
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws a latent with i.i.d. standard-normal components.
pub fn sample_latent(rng: &mut RngHandle, dim: usize) -> Result<LatentVector> {
    if dim == 0 {
        return Err(Error::InvalidDimension("latent dimension must be at least 1".into()));
    }
    let components = (0..dim).map(|_| rng.standard_normal()).collect();
    Ok(LatentVector(components))
}

pub fn dot(a: &LatentVector, b: &LatentVector) -> Result<f64> {
    dot_slices(&a.0, &b.0)
}

/// Unit-norm copy of `v`.
pub fn normalize(v: &LatentVector) -> Result<LatentVector> {
    Ok(LatentVector(normalized(&v.0)?))
}

/// `z + scale * dir`.
pub fn add_scaled(z: &LatentVector, dir: &LatentVector, scale: f64) -> Result<LatentVector> {
    ensure_same_len(z.dim(), dir.dim())?;
    let out: Vec<f64> = z.0.iter().zip(&dir.0).map(|(a, b)| a + scale * b).collect();
    LatentVector::new(out)
}

pub fn dot_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm.is_nan() || norm <= DEGENERATE_EPS {
        return Err(Error::DegenerateVector {
            norm,
            eps: DEGENERATE_EPS,
        });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if !(na > DEGENERATE_EPS && nb > DEGENERATE_EPS) {
        return Err(Error::DegenerateVector {
            norm: na.min(nb),
            eps: DEGENERATE_EPS,
        });
    }
    Ok(dot_slices(a, b)? / (na * nb))
}

pub(crate) fn ensure_same_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
