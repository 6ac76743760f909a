//! End-to-end steps driven by a [`RunConfig`]: the same operations the
//! `fairgen` command exposes, callable from code.
//!
//! Each step draws from its own seeded stream, so re-running one step
//! never shifts the randomness of another.

use crate::classifier::{self, ModelSet, Space};
use crate::config::{GeneratorConfig, RunConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, Oracle};
use crate::labeling::{self, AttributeHead};
use crate::latent::RngHandle;
use crate::manifest::{Manifest, ManifestHeader};
use crate::pipeline::{self, BalancedRun, DatasetRecord, SurveyRun};
use std::path::Path;

const STREAM_CLASSIFIER: u64 = 1;
const STREAM_HEADS: u64 = 2;
const STREAM_SURVEY: u64 = 3;
const STREAM_GENERATE: u64 = 4;

/// The oracle, when the config uses it. Steps that need ground truth
/// (classifier and head training) cannot run against an external model.
pub fn oracle(cfg: &RunConfig) -> Result<Oracle> {
    match cfg.generator {
        GeneratorConfig::Oracle => cfg.oracle(),
        GeneratorConfig::External { .. } => Err(Error::Config(
            "ground-truth training needs the oracle generator; train against a real model elsewhere".into(),
        )),
    }
}

/// Feature-space group classifier trained on oracle samples labelled by
/// their hidden group.
pub fn train_feature_classifier(cfg: &RunConfig) -> Result<ModelSet> {
    let oracle = oracle(cfg)?;
    let groups = cfg.group_set()?;
    let mut rng = RngHandle::for_worker(cfg.seed, STREAM_CLASSIFIER);
    let data = oracle
        .labeled_latents(cfg.samples.classifier, &mut rng)?
        .into_iter()
        .map(|(z, g)| Ok((oracle.generate(&z)?.into_inner(), g)))
        .collect::<Result<Vec<_>>>()?;
    let models = classifier::train_ovr(&data, &groups, Space::Feature, &cfg.train)?;
    ModelSet::new(groups, models)
}

/// Latent probes trained on a survey manifest: each stored latent labelled
/// with the group the feature classifier assigned it.
pub fn train_latent_probes(cfg: &RunConfig, manifest: &Manifest) -> Result<ModelSet> {
    let groups = manifest.header.groups.clone();
    let data: Vec<(&[f64], usize)> = manifest
        .latest_records()
        .filter(|r| !r.rejected)
        .map(|r| (r.latent.as_slice(), r.group.index))
        .collect();
    let models = classifier::train_ovr(&data, &groups, Space::Latent, &cfg.probe_train)?;
    ModelSet::new(groups, models)
}

fn check_classifier(cfg: &RunConfig, set: &ModelSet, space: Space) -> Result<()> {
    let groups = cfg.group_set()?;
    if set.groups != groups {
        return Err(Error::Config(format!(
            "model groups {:?} differ from configured groups {:?}",
            set.groups.names(),
            groups.names()
        )));
    }
    if set.space() != space {
        return Err(Error::WrongSpace {
            expected: space.as_str(),
            actual: set.space().as_str(),
        });
    }
    Ok(())
}

fn header_for(cfg: &RunConfig, generator: &dyn Generator) -> Result<ManifestHeader> {
    let mut header = ManifestHeader::new(
        generator.latent_dim(),
        generator.feature_dim(),
        cfg.group_set()?,
        cfg.seed,
        generator.descriptor(),
    );
    header.config = Some(cfg.to_value());
    Ok(header)
}

/// Unguided survey of `n` samples through the configured generator.
pub fn survey(cfg: &RunConfig, n: usize, classifier: &ModelSet) -> Result<(SurveyRun, Manifest)> {
    check_classifier(cfg, classifier, Space::Feature)?;
    let generator = cfg.generator()?;
    let mut rng = RngHandle::for_worker(cfg.seed, STREAM_SURVEY);
    let mut run = pipeline::survey(n, generator.as_ref(), &classifier.models, &classifier.groups, &mut rng)?;
    run.report.seed = cfg.seed;
    let mut header = header_for(cfg, generator.as_ref())?;
    header.run_report = Some(run.report.clone());
    let mut manifest = Manifest::new(header);
    for r in &run.records {
        manifest.push(r.clone())?;
    }
    Ok((run, manifest))
}

/// Steered generation to the configured plan; `quota` overrides the
/// plan's per-group quota.
pub fn generate(
    cfg: &RunConfig,
    quota: Option<usize>,
    classifier: &ModelSet,
    probes: &ModelSet,
) -> Result<(BalancedRun, Manifest)> {
    check_classifier(cfg, classifier, Space::Feature)?;
    check_classifier(cfg, probes, Space::Latent)?;
    let plan = cfg.balance_plan(quota)?;
    let generator = cfg.generator()?;
    let mut rng = RngHandle::for_worker(cfg.seed, STREAM_GENERATE);
    let mut run = pipeline::generate_balanced(
        &plan,
        generator.as_ref(),
        &probes.models,
        &classifier.models,
        &classifier.groups,
        &mut rng,
    )?;
    run.report.seed = cfg.seed;
    let mut header = header_for(cfg, generator.as_ref())?;
    header.run_report = Some(run.report.clone());
    let mut manifest = Manifest::new(header);
    for r in run.records.iter().chain(&run.rejects) {
        manifest.push(r.clone())?;
    }
    Ok((run, manifest))
}

/// One head per configured attribute, the n-th trained against the
/// oracle's n-th hidden attribute.
pub fn train_heads_from_oracle(cfg: &RunConfig) -> Result<Vec<AttributeHead>> {
    let oracle = oracle(cfg)?;
    if cfg.heads.len() > oracle.attribute_count() {
        return Err(Error::Config(format!(
            "{} heads configured but the oracle has {} hidden attributes",
            cfg.heads.len(),
            oracle.attribute_count()
        )));
    }
    let mut rng = RngHandle::for_worker(cfg.seed, STREAM_HEADS);
    let samples: Vec<_> = oracle
        .labeled_latents(cfg.samples.heads, &mut rng)?
        .into_iter()
        .map(|(z, _)| z)
        .collect();
    let features = samples
        .iter()
        .map(|z| oracle.generate(z).map(|f| f.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    cfg.heads
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            if spec.values.len() != 2 {
                return Err(Error::Config(format!(
                    "oracle attributes are binary; head {:?} has {} values",
                    spec.attribute,
                    spec.values.len()
                )));
            }
            let data = samples
                .iter()
                .zip(&features)
                .map(|(z, x)| Ok((x.as_slice(), oracle.true_attribute(i, z)? as usize)))
                .collect::<Result<Vec<_>>>()?;
            labeling::train_attribute_head(&spec.attribute, spec.values.clone(), &data, &cfg.train)
        })
        .collect()
}

/// Labels every latest record with `heads` and appends the changed
/// versions to the manifest file at `path`. Returns how many changed.
pub fn label_manifest(manifest: &mut Manifest, path: &Path, heads: &[AttributeHead]) -> Result<usize> {
    let latest: Vec<DatasetRecord> = manifest.latest_records().cloned().collect();
    let labeled = labeling::label_records(&latest, heads)?;
    let changed: Vec<DatasetRecord> = latest
        .iter()
        .zip(labeled)
        .filter(|(old, new)| old.downstream_labels != new.downstream_labels)
        .map(|(old, mut new)| {
            new.version = old.version + 1;
            new
        })
        .collect();
    let n = changed.len();
    if n > 0 {
        manifest.append_to_file(path, changed)?;
    }
    Ok(n)
}
