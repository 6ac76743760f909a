//! Logistic-regression probes.
//!
//! The same trainer serves two roles: the feature-space group classifier
//! applied to generator outputs, and the latent-space one-vs-rest probes
//! whose weights become steering directions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::{self, RngHandle};

pub const MODEL_FORMAT: &str = "linear-model/1";

pub const DEFAULT_GROUP_NAMES: [&str; 5] = ["Asian", "Black", "Indian", "White", "Others"];

/// Which space a model's inputs live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Feature,
    Latent,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Feature => "feature",
            Space::Latent => "latent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLabel {
    pub index: usize,
    pub name: String,
}

/// Ordered, uniquely named set of groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GroupSet(Vec<String>);

impl GroupSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("group set must not be empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate group name {n:?}")));
            }
        }
        Ok(Self(names))
    }

    /// The five default names for K = 5, `group-<i>` otherwise.
    pub fn default_for(k: usize) -> Self {
        if k == DEFAULT_GROUP_NAMES.len() {
            Self(DEFAULT_GROUP_NAMES.iter().map(|s| s.to_string()).collect())
        } else {
            Self((0..k).map(|i| format!("group-{i}")).collect())
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn label(&self, index: usize) -> Result<GroupLabel> {
        let name = self
            .0
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("group index {index} (have {})", self.0.len())))?;
        Ok(GroupLabel {
            index,
            name: name.clone(),
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = GroupLabel> + '_ {
        self.0.iter().enumerate().map(|(index, name)| GroupLabel {
            index,
            name: name.clone(),
        })
    }
}

impl TryFrom<Vec<String>> for GroupSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GroupSet> for Vec<String> {
    fn from(g: GroupSet) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 50,
            batch_size: 16,
            early_stop_patience: 3,
            validation_fraction: 0.1,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("train: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return fail(format!(
                "validation_fraction must be in (0, 0.5), got {}",
                self.validation_fraction
            ));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return fail("max_epochs and batch_size must be positive".into());
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return fail(format!("l2_penalty must be >= 0, got {}", self.l2_penalty));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub best_validation_loss: f64,
    pub validation_losses: Vec<f64>,
    pub seed: u64,
}

/// Logistic-regression parameters over feature or latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelWire", into = "ModelWire")]
pub struct LinearModel {
    pub space_tag: Space,
    pub positive_class: usize,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub training_meta: Option<TrainingMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelWire {
    format: String,
    space_tag: Space,
    positive_class: usize,
    bias: f64,
    weights: Vec<f64>,
    #[serde(default)]
    training_meta: Option<TrainingMeta>,
}

impl TryFrom<ModelWire> for LinearModel {
    type Error = Error;

    fn try_from(w: ModelWire) -> Result<Self> {
        if w.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                w.format
            )));
        }
        LinearModel::new(w.space_tag, w.positive_class, w.weights, w.bias).map(|m| LinearModel {
            training_meta: w.training_meta,
            ..m
        })
    }
}

impl From<LinearModel> for ModelWire {
    fn from(m: LinearModel) -> Self {
        ModelWire {
            format: MODEL_FORMAT.to_string(),
            space_tag: m.space_tag,
            positive_class: m.positive_class,
            bias: m.bias,
            weights: m.weights,
            training_meta: m.training_meta,
        }
    }
}

impl LinearModel {
    pub fn new(space_tag: Space, positive_class: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        latent::check_components(&weights)?;
        if !bias.is_finite() {
            return Err(Error::NonFinite(weights.len()));
        }
        Ok(Self {
            space_tag,
            positive_class,
            bias,
            weights,
            training_meta: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Logit `<w, x> + b`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(latent::dot_slices(&self.weights, x)? + self.bias)
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }

    /// Same model with weights and bias multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut m = Self::new(
            self.space_tag,
            self.positive_class,
            self.weights.iter().map(|w| w * c).collect(),
            self.bias * c,
        )?;
        m.training_meta = self.training_meta.clone();
        Ok(m)
    }

    /// Short content hash of the parameters, used as a model id.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.space_tag.as_str().as_bytes());
        h.update((self.positive_class as u64).to_le_bytes());
        h.update(self.bias.to_le_bytes());
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
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

/// Numerically stable logistic function; saturates instead of overflowing.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (bias unpenalized).
pub fn logistic_loss<V: AsRef<[f64]>>(weights: &[f64], bias: f64, data: &[(V, bool)], l2: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    loss_on(weights, bias, data, &idx, l2)
}

/// Analytic gradient of [`logistic_loss`] as `(d/dw, d/db)`.
pub fn logistic_gradient<V: AsRef<[f64]>>(
    weights: &[f64],
    bias: f64,
    data: &[(V, bool)],
    l2: f64,
) -> Result<(Vec<f64>, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    gradient_on(weights, bias, data, &idx, l2)
}

fn loss_on<V: AsRef<[f64]>>(weights: &[f64], bias: f64, data: &[(V, bool)], idx: &[usize], l2: f64) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let (x, y) = &data[i];
        let t = latent::dot_slices(weights, x.as_ref())? + bias;
        // -[y ln s(t) + (1-y) ln(1 - s(t))] = softplus(t) - y t
        total += softplus(t) - if *y { t } else { 0.0 };
    }
    let penalty = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    Ok(total / idx.len().max(1) as f64 + penalty)
}

fn gradient_on<V: AsRef<[f64]>>(
    weights: &[f64],
    bias: f64,
    data: &[(V, bool)],
    idx: &[usize],
    l2: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for &i in idx {
        let (x, y) = &data[i];
        let x = x.as_ref();
        let residual = sigmoid(latent::dot_slices(weights, x)? + bias) - if *y { 1.0 } else { 0.0 };
        gw.iter_mut().zip(x).for_each(|(g, xi)| *g += residual * xi);
        gb += residual;
    }
    let n = idx.len().max(1) as f64;
    gw.iter_mut().zip(weights).for_each(|(g, w)| *g = *g / n + l2 * w);
    Ok((gw, gb / n))
}

/// Trains one logistic model by mini-batch gradient descent with early
/// stopping on a held-out split. The returned parameters are those of the
/// epoch with the best validation loss; `positive_class` is set to 1.
pub fn train_binary<V: AsRef<[f64]>>(data: &[(V, bool)], space: Space, cfg: &TrainConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let dim = uniform_dim(data.iter().map(|(x, _)| x.as_ref()))?;
    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::DegenerateTraining(format!(
            "need both classes, got {positives} positive of {}",
            data.len()
        )));
    }

    let mut rng = RngHandle::from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let n_val = ((data.len() as f64 * cfg.validation_fraction) as usize).clamp(1, data.len() - 1);
    let (train_idx, val_idx) = order.split_at(data.len() - n_val);
    let mut train_idx = train_idx.to_vec();

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let initial_loss = loss_on(&weights, bias, data, &train_idx, cfg.l2_penalty)?;
    let mut best = (weights.clone(), bias);
    let mut best_val = loss_on(&weights, bias, data, val_idx, cfg.l2_penalty)?;
    let mut best_epoch = 0;
    let mut validation_losses = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut train_idx);
        for batch in train_idx.chunks(cfg.batch_size) {
            let (gw, gb) = gradient_on(&weights, bias, data, batch, cfg.l2_penalty)?;
            weights
                .iter_mut()
                .zip(&gw)
                .for_each(|(w, g)| *w -= cfg.learning_rate * g);
            bias -= cfg.learning_rate * gb;
        }
        let val = loss_on(&weights, bias, data, val_idx, cfg.l2_penalty)?;
        if !val.is_finite() {
            return Err(Error::DegenerateTraining(format!(
                "validation loss diverged at epoch {epoch}"
            )));
        }
        validation_losses.push(val);
        if val < best_val {
            best_val = val;
            best = (weights.clone(), bias);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let (weights, bias) = best;
    let final_train_loss = loss_on(&weights, bias, data, &train_idx, cfg.l2_penalty)?;
    let mut model = LinearModel::new(space, 1, weights, bias)?;
    model.training_meta = Some(TrainingMeta {
        epochs_run: validation_losses.len(),
        best_epoch,
        stopped_early,
        initial_loss,
        final_train_loss,
        best_validation_loss: best_val,
        validation_losses,
        seed: cfg.seed,
    });
    Ok(model)
}

/// One model per group, positives = that group, negatives = the rest.
/// Groups train on separate threads; results do not depend on scheduling.
pub fn train_ovr<V>(data: &[(V, usize)], groups: &GroupSet, space: Space, cfg: &TrainConfig) -> Result<Vec<LinearModel>>
where
    V: AsRef<[f64]> + Sync,
{
    cfg.validate()?;
    for label in groups.labels() {
        if !data.iter().any(|(_, g)| *g == label.index) {
            return Err(Error::MissingGroup {
                index: label.index,
                name: label.name,
            });
        }
    }
    if let Some((_, g)) = data.iter().find(|(_, g)| *g >= groups.len()) {
        return Err(Error::NotFound(format!("group index {g} (have {})", groups.len())));
    }

    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..groups.len())
            .map(|k| {
                scope.spawn(move || {
                    let binary: Vec<(&[f64], bool)> = data.iter().map(|(x, g)| (x.as_ref(), *g == k)).collect();
                    train_binary(&binary, space, cfg).map(|mut m| {
                        m.positive_class = k;
                        m
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("probe training thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub group: usize,
    /// The winning model's sigmoid score, not renormalized across models.
    pub confidence: f64,
}

/// Checks that `models` is non-empty and agrees on space and input size.
pub fn check_model_set(models: &[LinearModel], space: Space) -> Result<usize> {
    let first = models.first().ok_or_else(|| Error::InvalidModels("no models".into()))?;
    for m in models {
        if m.space_tag != space {
            return Err(Error::WrongSpace {
                expected: space.as_str(),
                actual: m.space_tag.as_str(),
            });
        }
        latent::ensure_same_len(first.dim(), m.dim())?;
    }
    Ok(first.dim())
}

/// Highest-scoring model wins; ties go to the earliest model.
pub fn predict_group(models: &[LinearModel], x: &[f64]) -> Result<Prediction> {
    let space = models
        .first()
        .ok_or_else(|| Error::InvalidModels("no models".into()))?
        .space_tag;
    check_model_set(models, space)?;
    let mut best: Option<(usize, f64)> = None;
    for m in models {
        let t = m.logit(x)?;
        if best.is_none_or(|(_, bt)| t > bt) {
            best = Some((m.positive_class, t));
        }
    }
    let (group, t) = best.expect("models is non-empty");
    Ok(Prediction {
        group,
        confidence: sigmoid(t),
    })
}

/// Fraction of `data` whose predicted group matches its label.
pub fn accuracy<V: AsRef<[f64]>>(models: &[LinearModel], data: &[(V, usize)]) -> Result<f64> {
    let mut hits = 0usize;
    for (x, g) in data {
        if predict_group(models, x.as_ref())?.group == *g {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Area under the ROC curve via the rank-sum statistic, ties averaged.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

fn uniform_dim<'a>(mut rows: impl Iterator<Item = &'a [f64]>) -> Result<usize> {
    let first = rows
        .next()
        .ok_or_else(|| Error::DegenerateTraining("empty training set".into()))?;
    latent::check_components(first)?;
    for r in rows {
        latent::ensure_same_len(first.len(), r.len())?;
    }
    Ok(first.len())
}

/// A group classifier on disk: one one-vs-rest model per group, with the
/// group names it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSetWire", into = "ModelSetWire")]
pub struct ModelSet {
    pub groups: GroupSet,
    pub models: Vec<LinearModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSetWire {
    format: String,
    groups: GroupSet,
    models: Vec<LinearModel>,
}

pub const MODEL_SET_FORMAT: &str = "linear-model-set/1";

impl TryFrom<ModelSetWire> for ModelSet {
    type Error = Error;

    fn try_from(w: ModelSetWire) -> Result<Self> {
        if w.format != MODEL_SET_FORMAT {
            return Err(Error::Config(format!("unsupported model set format {:?}", w.format)));
        }
        ModelSet::new(w.groups, w.models)
    }
}

impl From<ModelSet> for ModelSetWire {
    fn from(s: ModelSet) -> Self {
        ModelSetWire {
            format: MODEL_SET_FORMAT.into(),
            groups: s.groups,
            models: s.models,
        }
    }
}

impl ModelSet {
    /// Sorts `models` by class; they must cover every group exactly once.
    pub fn new(groups: GroupSet, mut models: Vec<LinearModel>) -> Result<Self> {
        models.sort_by_key(|m| m.positive_class);
        let classes: Vec<usize> = models.iter().map(|m| m.positive_class).collect();
        if classes != (0..groups.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidModels(format!(
                "model classes {classes:?} do not cover {} groups",
                groups.len()
            )));
        }
        Ok(Self { groups, models })
    }

    pub fn space(&self) -> Space {
        self.models[0].space_tag
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

    /// Writes one model file per group, `<index>-<name>.json`, into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (m, name) in self.models.iter().zip(self.groups.names()) {
            m.save(&dir.join(format!("{}-{}.json", m.positive_class, sanitize(name))))?;
        }
        Ok(())
    }

    /// Reads every `*.json` model in `dir` back into a set for `groups`.
    pub fn load_dir(dir: &Path, groups: GroupSet) -> Result<Self> {
        let mut models = Vec::new();
        for entry in fs::read_dir(dir).map_err(crate::error::io_at(dir))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                models.push(LinearModel::load(&path)?);
            }
        }
        Self::new(groups, models)
    }
}

pub(crate) fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
