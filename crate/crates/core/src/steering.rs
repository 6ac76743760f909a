//! Steering directions from latent probes.
//!
//! A probe `sigma(<theta, z> + b)` is maximized over the unit sphere by
//! `z* = theta / |theta|`: `<theta, z> = |theta| |z| cos(angle)` peaks when
//! the angle is zero. That unit vector is the normal of the probe's decision
//! hyperplane, pointing to the positive side. The bias shifts the plane but
//! contributes no direction, so it is dropped.

use serde::{Deserialize, Serialize};

use crate::classifier::{LinearModel, Space};
use crate::error::{Error, Result};
use crate::latent::{self, LatentVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerDirection {
    /// Unit-norm hyperplane normal.
    pub direction: LatentVector,
    pub group: usize,
    pub source_model_id: String,
    /// `|theta|` of the source probe, the step length in raw mode.
    pub raw_theta_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerMode {
    /// Add the probe's parameter vector itself: `z + theta`.
    #[default]
    RawTheta,
    /// Add `alpha` times the unit direction.
    UnitScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteerPolicy {
    pub mode: SteerMode,
    /// Step length in `unit_scaled` mode; ignored in `raw_theta` mode.
    pub alpha: f64,
}

impl Default for SteerPolicy {
    fn default() -> Self {
        Self {
            mode: SteerMode::RawTheta,
            alpha: 1.0,
        }
    }
}

impl SteerPolicy {
    pub fn raw_theta() -> Self {
        Self::default()
    }

    pub fn unit_scaled(alpha: f64) -> Self {
        Self {
            mode: SteerMode::UnitScaled,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "steer: alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Step length for a given direction.
    pub fn step(&self, dir: &SteerDirection) -> f64 {
        match self.mode {
            SteerMode::RawTheta => dir.raw_theta_norm,
            SteerMode::UnitScaled => self.alpha,
        }
    }
}

fn latent_weights(model: &LinearModel) -> Result<&[f64]> {
    if model.space_tag != Space::Latent {
        return Err(Error::WrongSpace {
            expected: Space::Latent.as_str(),
            actual: model.space_tag.as_str(),
        });
    }
    Ok(&model.weights)
}

pub fn direction_from_model(model: &LinearModel) -> Result<SteerDirection> {
    let weights = latent_weights(model)?;
    let unit = latent::normalized(weights)?;
    Ok(SteerDirection {
        direction: LatentVector::new(unit)?,
        group: model.positive_class,
        source_model_id: model.fingerprint(),
        raw_theta_norm: latent::l2_norm(weights),
    })
}

/// The maximizer of the probe's score over unit-norm latents.
pub fn best_unit_latent(model: &LinearModel) -> Result<LatentVector> {
    LatentVector::new(latent::normalized(latent_weights(model)?)?)
}

/// Shifts `z` along `dir`. The result is not renormalized.
pub fn steer(z: &LatentVector, dir: &SteerDirection, policy: &SteerPolicy) -> Result<LatentVector> {
    policy.validate()?;
    latent::add_scaled(z, &dir.direction, policy.step(dir))
}

/// Directions for every probe, indexed by the probe's positive class.
pub fn directions_by_group(probes: &[LinearModel], group_count: usize) -> Result<Vec<SteerDirection>> {
    (0..group_count)
        .map(|k| {
            let probe = probes
                .iter()
                .find(|m| m.positive_class == k)
                .ok_or_else(|| Error::InvalidModels(format!("no latent probe for group {k}")))?;
            direction_from_model(probe)
        })
        .collect()
}
