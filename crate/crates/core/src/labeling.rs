//! Downstream attribute labeling with confidence gating, and the manual
//! review queue for low-confidence labels.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, GroupSet, LinearModel, Space, TrainConfig};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::pipeline::DatasetRecord;

pub const HEAD_FORMAT: &str = "attribute-head/1";

/// Review threshold used when none is configured.
pub const DEFAULT_REVIEW_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Auto,
    Manual,
}

/// One attribute label on a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamLabel {
    pub value: String,
    pub confidence: f64,
    /// Values the attribute can take.
    pub allowed: Vec<String>,
    /// Original automatic prediction, kept once a human overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<DateTime<Utc>>,
}

/// Linear attribute classifier over feature vectors. A single model is a
/// binary head (`value_names[1]` is the positive side); otherwise one
/// one-vs-rest model per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadWire", into = "HeadWire")]
pub struct AttributeHead {
    pub attribute: String,
    pub value_names: Vec<String>,
    pub models: Vec<LinearModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadWire {
    format: String,
    attribute: String,
    value_names: Vec<String>,
    models: Vec<LinearModel>,
}

impl TryFrom<HeadWire> for AttributeHead {
    type Error = Error;

    fn try_from(w: HeadWire) -> Result<Self> {
        if w.format != HEAD_FORMAT {
            return Err(Error::Config(format!("unsupported head format {:?}", w.format)));
        }
        AttributeHead::new(w.attribute, w.value_names, w.models)
    }
}

impl From<AttributeHead> for HeadWire {
    fn from(h: AttributeHead) -> Self {
        HeadWire {
            format: HEAD_FORMAT.into(),
            attribute: h.attribute,
            value_names: h.value_names,
            models: h.models,
        }
    }
}

impl AttributeHead {
    pub fn new(attribute: String, value_names: Vec<String>, models: Vec<LinearModel>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidModels(format!("head {attribute:?}: {msg}")));
        if value_names.len() < 2 {
            return bad("needs at least two values".into());
        }
        if GroupSet::new(value_names.clone()).is_err() {
            return bad("value names must be unique".into());
        }
        match classifier::check_model_set(&models, Space::Feature) {
            Ok(_) => {}
            Err(e) => return bad(e.to_string()),
        }
        let consistent = if models.len() == 1 {
            value_names.len() == 2
        } else {
            models.len() == value_names.len() && (0..models.len()).all(|k| models.iter().any(|m| m.positive_class == k))
        };
        if !consistent {
            return bad(format!(
                "{} models do not cover {} values",
                models.len(),
                value_names.len()
            ));
        }
        Ok(Self {
            attribute,
            value_names,
            models,
        })
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    /// Predicted value index and its confidence.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64)> {
        if let [model] = self.models.as_slice() {
            let p = model.probability(x)?;
            Ok(if p >= 0.5 { (1, p) } else { (0, 1.0 - p) })
        } else {
            let pred = classifier::predict_group(&self.models, x)?;
            Ok((pred.group, pred.confidence))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(
            &fs::read_to_string(path).map_err(crate::error::io_at(path))?,
        )?)
    }
}

/// Trains a head from `(features, value index)` pairs.
pub fn train_attribute_head<V>(
    attribute: &str,
    value_names: Vec<String>,
    data: &[(V, usize)],
    cfg: &TrainConfig,
) -> Result<AttributeHead>
where
    V: AsRef<[f64]> + Sync,
{
    let models = if value_names.len() == 2 {
        let binary: Vec<(&[f64], bool)> = data.iter().map(|(x, v)| (x.as_ref(), *v == 1)).collect();
        vec![classifier::train_binary(&binary, Space::Feature, cfg)?]
    } else {
        let values = GroupSet::new(value_names.clone())?;
        classifier::train_ovr(data, &values, Space::Feature, cfg)?
    };
    AttributeHead::new(attribute.to_string(), value_names, models)
}

/// Returns `records` with an automatic label from every head. Labels a
/// human already resolved are left untouched.
pub fn label_records(records: &[DatasetRecord], heads: &[AttributeHead]) -> Result<Vec<DatasetRecord>> {
    if let Some(r) = records.first() {
        for h in heads {
            if h.dim() != r.feature.dim() {
                return Err(Error::InvalidModels(format!(
                    "head {:?} expects {} features, records have {}",
                    h.attribute,
                    h.dim(),
                    r.feature.dim()
                )));
            }
        }
    }
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            for h in heads {
                if r.label_provenance.get(&h.attribute) == Some(&Provenance::Manual) {
                    continue;
                }
                let (value, confidence) = h.predict(r.feature.as_slice()).map_err(|e| {
                    Error::InvalidModels(format!("head {:?} on record {}: {e}", h.attribute, r.record_id))
                })?;
                out.downstream_labels.insert(
                    h.attribute.clone(),
                    DownstreamLabel {
                        value: h.value_names[value].clone(),
                        confidence,
                        allowed: h.value_names.clone(),
                        auto_value: None,
                        auto_confidence: None,
                        resolver: None,
                        resolved_at: None,
                    },
                );
                out.label_provenance.insert(h.attribute.clone(), Provenance::Auto);
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub record_id: String,
    pub attribute: String,
    pub auto_value: String,
    pub confidence: f64,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<DateTime<Utc>>,
}

/// Pending items for every automatic label with confidence strictly below
/// `threshold`, lowest confidence first, ties by record id then attribute.
pub fn build_review_queue<'a, I>(records: I, threshold: f64) -> Vec<ReviewItem>
where
    I: IntoIterator<Item = &'a DatasetRecord>,
{
    let mut items: Vec<ReviewItem> = records
        .into_iter()
        .filter(|r| !r.rejected)
        .flat_map(|r| {
            r.downstream_labels.iter().filter_map(move |(attr, label)| {
                let auto = r.label_provenance.get(attr) == Some(&Provenance::Auto);
                (auto && label.confidence < threshold).then(|| ReviewItem {
                    record_id: r.record_id.clone(),
                    attribute: attr.clone(),
                    auto_value: label.value.clone(),
                    confidence: label.confidence,
                    status: ReviewStatus::Pending,
                    resolved_value: None,
                    resolver: None,
                    resolved_at: None,
                })
            })
        })
        .collect();
    items.sort_by(|a, b| {
        a.confidence
            .total_cmp(&b.confidence)
            .then_with(|| a.record_id.cmp(&b.record_id))
            .then_with(|| a.attribute.cmp(&b.attribute))
    });
    items
}

/// Outcome of a manual resolution. `appended` is the superseding record
/// version when the manifest changed, `None` on an idempotent repeat.
#[derive(Debug, Clone)]
pub struct Resolution {
    pub item: ReviewItem,
    pub appended: Option<DatasetRecord>,
}

fn resolved_item(record_id: &str, attribute: &str, label: &DownstreamLabel) -> ReviewItem {
    ReviewItem {
        record_id: record_id.to_string(),
        attribute: attribute.to_string(),
        auto_value: label.auto_value.clone().unwrap_or_else(|| label.value.clone()),
        confidence: label.auto_confidence.unwrap_or(label.confidence),
        status: ReviewStatus::Resolved,
        resolved_value: Some(label.value.clone()),
        resolver: label.resolver.clone(),
        resolved_at: label.resolved_at,
    }
}

/// Replaces one label with a human decision: provenance becomes manual,
/// confidence 1.0, and a new record version is appended to `manifest`.
/// Repeating an identical resolution changes nothing.
pub fn apply_manual_label(
    manifest: &mut Manifest,
    record_id: &str,
    attribute: &str,
    value: &str,
    resolver: &str,
) -> Result<Resolution> {
    let current = manifest
        .latest(record_id)
        .ok_or_else(|| Error::NotFound(format!("record {record_id}")))?;
    let label = current
        .downstream_labels
        .get(attribute)
        .ok_or_else(|| Error::NotFound(format!("attribute {attribute:?} on record {record_id}")))?;
    if !label.allowed.iter().any(|v| v == value) {
        return Err(Error::InvalidValue {
            attribute: attribute.to_string(),
            value: value.to_string(),
            allowed: label.allowed.clone(),
        });
    }
    let manual = current.label_provenance.get(attribute) == Some(&Provenance::Manual);
    if manual && label.value == value {
        return Ok(Resolution {
            item: resolved_item(record_id, attribute, label),
            appended: None,
        });
    }

    let mut next = current.clone();
    let prior = label.clone();
    let updated = DownstreamLabel {
        value: value.to_string(),
        confidence: 1.0,
        allowed: prior.allowed.clone(),
        auto_value: Some(prior.auto_value.unwrap_or(prior.value)),
        auto_confidence: Some(prior.auto_confidence.unwrap_or(prior.confidence)),
        resolver: Some(resolver.to_string()),
        resolved_at: Some(Utc::now()),
    };
    let item = resolved_item(record_id, attribute, &updated);
    next.downstream_labels.insert(attribute.to_string(), updated);
    next.label_provenance.insert(attribute.to_string(), Provenance::Manual);
    let appended = manifest.push_version(next)?.clone();
    Ok(Resolution {
        item,
        appended: Some(appended),
    })
}

/// Saves each head to `<dir>/<attribute>.json`.
pub fn save_heads(dir: &Path, heads: &[AttributeHead]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for h in heads {
        h.save(&dir.join(format!("{}.json", classifier::sanitize(&h.attribute))))?;
    }
    Ok(())
}

/// Loads every head in `dir`, sorted by attribute. A missing directory
/// holds no heads.
pub fn load_heads(dir: &Path) -> Result<Vec<AttributeHead>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut heads = Vec::new();
    for entry in fs::read_dir(dir).map_err(crate::error::io_at(dir))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            heads.push(AttributeHead::load(&path)?);
        }
    }
    heads.sort_by(|a, b| a.attribute.cmp(&b.attribute));
    Ok(heads)
}
