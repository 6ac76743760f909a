//! Unguided survey and guided, verified, quota-exact generation.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, GroupLabel, GroupSet, LinearModel, Space};
use crate::error::{Error, Result};
use crate::generator::{FeatureVector, Generator};
use crate::labeling::{DownstreamLabel, Provenance};
use crate::latent::{self, LatentVector, RngHandle};
use crate::steering::{self, SteerPolicy};

/// One stored sample: latent, generated output, verified group, plus
/// downstream labels added later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    /// Starts at 1; a relabel appends a copy with the next version.
    #[serde(default = "first_version")]
    pub version: u32,
    pub latent: LatentVector,
    pub feature: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub group: GroupLabel,
    pub group_confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steered_toward: Option<GroupLabel>,
    #[serde(default)]
    pub downstream_labels: BTreeMap<String, DownstreamLabel>,
    #[serde(default)]
    pub label_provenance: BTreeMap<String, Provenance>,
    pub created_at: DateTime<Utc>,
    /// Set on samples that failed verification and were kept for analysis.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rejected: bool,
}

fn first_version() -> u32 {
    1
}

/// ULID-shaped ids: 48-bit millisecond timestamp + 80 seeded random bits,
/// Crockford base32.
#[derive(Debug, Clone)]
pub struct RecordIdGenerator {
    rng: RngHandle,
}

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

impl RecordIdGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: RngHandle::from_seed(seed ^ 0x05EE_D1D5_u64),
        }
    }

    pub fn next_id(&mut self, at: DateTime<Utc>) -> String {
        let ms = (at.timestamp_millis().max(0) as u128) & ((1 << 48) - 1);
        let random = ((rand::RngCore::next_u64(&mut self.rng) as u128) << 16)
            | (rand::RngCore::next_u32(&mut self.rng) as u128 & 0xFFFF);
        let value = (ms << 80) | random;
        (0..26)
            .rev()
            .map(|i| CROCKFORD[((value >> (i * 5)) & 0x1F) as usize] as char)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    Unguided,
    Guided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTally {
    pub index: usize,
    pub name: String,
    pub count: usize,
    /// Share of the report total, in percent.
    pub percentage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<usize>,
    /// `count / attempts`, in `(0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub mode: ReportMode,
    pub seed: u64,
    pub total: usize,
    pub groups: Vec<GroupTally>,
}

impl DistributionReport {
    /// Unguided report from per-group counts (one count per group); the
    /// total is their sum.
    pub fn from_counts(groups: &GroupSet, counts: &[usize], seed: u64) -> Result<Self> {
        Self::from_counts_over(groups, counts, counts.iter().sum(), seed)
    }

    /// Unguided report with percentages taken over a stated number of
    /// samples, for tallies whose counts do not add up to the sample size.
    pub fn from_counts_over(groups: &GroupSet, counts: &[usize], total: usize, seed: u64) -> Result<Self> {
        latent::ensure_same_len(groups.len(), counts.len())?;
        let groups = groups
            .labels()
            .zip(counts)
            .map(|(label, &count)| GroupTally {
                index: label.index,
                name: label.name,
                count,
                percentage: percent(count, total),
                attempts: None,
                acceptance_rate: None,
            })
            .collect();
        Ok(Self {
            mode: ReportMode::Unguided,
            seed,
            total,
            groups,
        })
    }

    /// Guided report over the listed groups with accepted and attempted counts.
    pub fn guided(labels: &[GroupLabel], accepted: &[usize], attempts: &[usize], seed: u64) -> Result<Self> {
        latent::ensure_same_len(labels.len(), accepted.len())?;
        latent::ensure_same_len(labels.len(), attempts.len())?;
        let total = accepted.iter().sum();
        let groups = labels
            .iter()
            .zip(accepted.iter().zip(attempts))
            .map(|(label, (&count, &tries))| GroupTally {
                index: label.index,
                name: label.name.clone(),
                count,
                percentage: percent(count, total),
                attempts: Some(tries),
                acceptance_rate: (tries > 0).then(|| count as f64 / tries as f64),
            })
            .collect();
        Ok(Self {
            mode: ReportMode::Guided,
            seed,
            total,
            groups,
        })
    }

    pub fn tally(&self, group: usize) -> Option<&GroupTally> {
        self.groups.iter().find(|g| g.index == group)
    }

    /// Share of `group` as a fraction in `[0, 1]`.
    pub fn share(&self, group: usize) -> f64 {
        self.tally(group).map_or(0.0, |t| t.percentage / 100.0)
    }
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Per-group `accepted / attempted` for every tally that carries attempts.
pub fn acceptance_rates(report: &DistributionReport) -> Vec<(GroupLabel, f64)> {
    report
        .groups
        .iter()
        .filter_map(|t| {
            t.acceptance_rate.map(|r| {
                (
                    GroupLabel {
                        index: t.index,
                        name: t.name.clone(),
                    },
                    r,
                )
            })
        })
        .collect()
}

/// Guided acceptance rate divided by unguided share, per guided group.
/// Groups absent from the unguided sample get `f64::INFINITY`.
pub fn uplift(unguided: &DistributionReport, guided: &DistributionReport) -> Vec<(GroupLabel, f64)> {
    acceptance_rates(guided)
        .into_iter()
        .map(|(label, rate)| {
            let base = unguided.share(label.index);
            let ratio = if base > 0.0 { rate / base } else { f64::INFINITY };
            (label, ratio)
        })
        .collect()
}

/// Unguided samples with their classified groups.
#[derive(Debug, Clone)]
pub struct SurveyRun {
    pub records: Vec<DatasetRecord>,
    pub report: DistributionReport,
}

const SURVEY_BATCH: usize = 256;

fn check_group_models(models: &[LinearModel], space: Space, dim: usize, groups: &GroupSet) -> Result<()> {
    let model_dim = classifier::check_model_set(models, space).map_err(|e| match e {
        Error::InvalidModels(_) => Error::InvalidModels(format!("no trained {} models", space.as_str())),
        other => other,
    })?;
    latent::ensure_same_len(dim, model_dim)?;
    for label in groups.labels() {
        if !models.iter().any(|m| m.positive_class == label.index) {
            return Err(Error::InvalidModels(format!(
                "missing {} model for group {} ({})",
                space.as_str(),
                label.index,
                label.name
            )));
        }
    }
    Ok(())
}

/// Samples `n` latents, generates, classifies and tallies.
pub fn survey<G: Generator + ?Sized>(
    n: usize,
    generator: &G,
    feature_models: &[LinearModel],
    groups: &GroupSet,
    rng: &mut RngHandle,
) -> Result<SurveyRun> {
    if n == 0 {
        return Err(Error::Config("survey size must be positive".into()));
    }
    check_group_models(feature_models, Space::Feature, generator.feature_dim(), groups)?;
    let mut ids = RecordIdGenerator::new(rng.seed());
    let mut counts = vec![0usize; groups.len()];
    let mut records = Vec::with_capacity(n);
    while records.len() < n {
        let take = SURVEY_BATCH.min(n - records.len());
        let latents = (0..take)
            .map(|_| latent::sample_latent(rng, generator.latent_dim()))
            .collect::<Result<Vec<_>>>()?;
        let outputs = generator.generate_batch(&latents)?;
        for (z, out) in latents.into_iter().zip(outputs) {
            let pred = classifier::predict_group(feature_models, out.feature.as_slice())?;
            counts[pred.group] += 1;
            let now = Utc::now();
            records.push(DatasetRecord {
                record_id: ids.next_id(now),
                version: 1,
                latent: z,
                feature: out.feature,
                image_ref: out.image_ref,
                group: groups.label(pred.group)?,
                group_confidence: pred.confidence,
                steered_toward: None,
                downstream_labels: BTreeMap::new(),
                label_provenance: BTreeMap::new(),
                created_at: now,
                rejected: false,
            });
        }
    }
    let report = DistributionReport::from_counts(groups, &counts, rng.seed())?;
    Ok(SurveyRun { records, report })
}

/// [`survey`] without keeping the records.
pub fn survey_unguided<G: Generator + ?Sized>(
    n: usize,
    generator: &G,
    feature_models: &[LinearModel],
    groups: &GroupSet,
    rng: &mut RngHandle,
) -> Result<DistributionReport> {
    survey(n, generator, feature_models, groups, rng).map(|run| run.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancePlan {
    pub quota_per_group: usize,
    /// Group indices to fill, in order.
    pub groups: Vec<usize>,
    pub max_attempts_per_group: usize,
    pub steer_policy: SteerPolicy,
    pub verify: bool,
    pub keep_rejects: bool,
    /// Latents generated per generator call.
    pub batch_size: usize,
}

impl BalancePlan {
    /// Plan over `groups` with the default attempt budget of `50 * quota`.
    pub fn new(quota_per_group: usize, groups: Vec<usize>) -> Self {
        Self {
            quota_per_group,
            groups,
            max_attempts_per_group: 50 * quota_per_group,
            steer_policy: SteerPolicy::default(),
            verify: true,
            keep_rejects: false,
            batch_size: 64,
        }
    }

    pub fn validate(&self, group_count: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("plan: {msg}")));
        if self.quota_per_group == 0 {
            return fail("quota_per_group must be positive".into());
        }
        if self.max_attempts_per_group < self.quota_per_group {
            return fail(format!(
                "max_attempts_per_group ({}) must be >= quota_per_group ({})",
                self.max_attempts_per_group, self.quota_per_group
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.groups.is_empty() {
            return fail("no groups to fill".into());
        }
        if let Some(g) = self.groups.iter().find(|g| **g >= group_count) {
            return fail(format!("group {g} out of range for {group_count} groups"));
        }
        self.steer_policy.validate()
    }
}

#[derive(Debug, Clone)]
pub struct BalancedRun {
    pub records: Vec<DatasetRecord>,
    /// Failed-verification samples, only when `keep_rejects` is set.
    pub rejects: Vec<DatasetRecord>,
    pub report: DistributionReport,
}

/// For each planned group: sample, steer toward the group, generate,
/// classify, and keep the sample only if the classifier agrees (when
/// `verify`), until exactly `quota_per_group` are accepted.
pub fn generate_balanced<G: Generator + ?Sized>(
    plan: &BalancePlan,
    generator: &G,
    latent_probes: &[LinearModel],
    feature_models: &[LinearModel],
    groups: &GroupSet,
    rng: &mut RngHandle,
) -> Result<BalancedRun> {
    plan.validate(groups.len())?;
    check_group_models(feature_models, Space::Feature, generator.feature_dim(), groups)?;
    classifier::check_model_set(latent_probes, Space::Latent)?;
    let mut ids = RecordIdGenerator::new(rng.seed());
    let mut records = Vec::with_capacity(plan.quota_per_group * plan.groups.len());
    let mut rejects = Vec::new();
    let mut accepted_counts = Vec::with_capacity(plan.groups.len());
    let mut attempt_counts = Vec::with_capacity(plan.groups.len());
    let mut labels = Vec::with_capacity(plan.groups.len());

    for &target in &plan.groups {
        let target_label = groups.label(target)?;
        let probe = latent_probes
            .iter()
            .find(|m| m.positive_class == target)
            .ok_or_else(|| Error::InvalidModels(format!("missing latent probe for group {target}")))?;
        latent::ensure_same_len(generator.latent_dim(), probe.dim())?;
        let direction = steering::direction_from_model(probe)?;
        let mut accepted = 0usize;
        let mut attempts = 0usize;

        'fill: while accepted < plan.quota_per_group {
            if attempts >= plan.max_attempts_per_group {
                return Err(Error::QuotaUnreachable {
                    group: target_label.name.clone(),
                    accepted,
                    attempts,
                });
            }
            let take = plan.batch_size.min(plan.max_attempts_per_group - attempts);
            let latents = (0..take)
                .map(|_| {
                    let z = latent::sample_latent(rng, generator.latent_dim())?;
                    steering::steer(&z, &direction, &plan.steer_policy)
                })
                .collect::<Result<Vec<_>>>()?;
            let outputs = generator.generate_batch(&latents)?;
            for (z, out) in latents.into_iter().zip(outputs) {
                attempts += 1;
                let pred = classifier::predict_group(feature_models, out.feature.as_slice())?;
                let ok = !plan.verify || pred.group == target;
                if !ok && !plan.keep_rejects {
                    continue;
                }
                let now = Utc::now();
                let record = DatasetRecord {
                    record_id: ids.next_id(now),
                    version: 1,
                    latent: z,
                    feature: out.feature,
                    image_ref: out.image_ref,
                    group: groups.label(pred.group)?,
                    group_confidence: pred.confidence,
                    steered_toward: Some(target_label.clone()),
                    downstream_labels: BTreeMap::new(),
                    label_provenance: BTreeMap::new(),
                    created_at: now,
                    rejected: !ok,
                };
                if ok {
                    records.push(record);
                    accepted += 1;
                    if accepted == plan.quota_per_group {
                        break 'fill;
                    }
                } else {
                    rejects.push(record);
                }
            }
        }
        labels.push(target_label);
        accepted_counts.push(accepted);
        attempt_counts.push(attempts);
    }

    let report = DistributionReport::guided(&labels, &accepted_counts, &attempt_counts, rng.seed())?;
    Ok(BalancedRun {
        records,
        rejects,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TrainConfig;
    use crate::generator::{Oracle, OracleConfig};

    fn table2_counts() -> [usize; 5] {
        [882, 449, 975, 6837, 867]
    }

    fn table2() -> DistributionReport {
        // these counts add up to 10,010 while the shares are over 10,000 samples
        DistributionReport::from_counts_over(&GroupSet::default_for(5), &table2_counts(), 10_000, 0).unwrap()
    }

    #[test]
    fn counts_sum_to_total_by_default() {
        let r = DistributionReport::from_counts(&GroupSet::default_for(5), &table2_counts(), 0).unwrap();
        assert_eq!(r.total, r.groups.iter().map(|g| g.count).sum::<usize>());
        for g in &r.groups {
            assert!((g.percentage - 100.0 * g.count as f64 / r.total as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn report_percentages_from_counts() {
        let r = table2();
        assert_eq!(r.total, 10_000);
        let pct: Vec<f64> = r.groups.iter().map(|g| g.percentage).collect();
        for (got, want) in pct.iter().zip([8.82, 4.49, 9.75, 68.37, 8.67]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn acceptance_rates_from_guided_counts() {
        let groups = GroupSet::default_for(5);
        let labels: Vec<GroupLabel> = (0..3).map(|i| groups.label(i).unwrap()).collect();
        let r = DistributionReport::guided(&labels, &[423, 633, 259], &[1000; 3], 0).unwrap();
        let rates: Vec<f64> = acceptance_rates(&r).into_iter().map(|(_, x)| x).collect();
        assert_eq!(rates, vec![0.423, 0.633, 0.259]);

        let full = DistributionReport::guided(&labels[..1], &[10], &[10], 0).unwrap();
        assert_eq!(acceptance_rates(&full)[0].1, 1.0);

        let base = table2();
        let up = uplift(&base, &r);
        assert!((up[0].1 - 42.3 / 8.82).abs() < 1e-9);
        assert!(up.iter().all(|(_, x)| *x >= 2.65));
    }

    #[test]
    fn record_ids_are_ulid_shaped_and_unique() {
        let mut ids = RecordIdGenerator::new(1);
        let now = Utc::now();
        let a = ids.next_id(now);
        let b = ids.next_id(now);
        assert_eq!(a.len(), 26);
        assert_ne!(a, b);
        assert!(a.bytes().all(|c| CROCKFORD.contains(&c)));
        assert_eq!(a[..10], b[..10]);
    }

    struct Fixture {
        oracle: Oracle,
        groups: GroupSet,
        feature_models: Vec<LinearModel>,
        probes: Vec<LinearModel>,
    }

    fn fixture() -> Fixture {
        let oracle = Oracle::new(OracleConfig::desk()).unwrap();
        let groups = GroupSet::default_for(5);
        let data = oracle.labeled_latents(3_000, &mut RngHandle::from_seed(1)).unwrap();
        let feats: Vec<(FeatureVector, usize)> = data.iter().map(|(z, g)| (oracle.generate(z).unwrap(), *g)).collect();
        let cfg = TrainConfig::default();
        Fixture {
            feature_models: classifier::train_ovr(&feats, &groups, Space::Feature, &cfg).unwrap(),
            probes: classifier::train_ovr(&data, &groups, Space::Latent, &cfg).unwrap(),
            oracle,
            groups,
        }
    }

    #[test]
    fn survey_of_one_counts_one() {
        let f = fixture();
        let r = survey_unguided(1, &f.oracle, &f.feature_models, &f.groups, &mut RngHandle::from_seed(3)).unwrap();
        assert_eq!(r.total, 1);
        assert_eq!(r.groups.iter().filter(|g| g.count == 1).count(), 1);
        assert_eq!(r.groups.iter().map(|g| g.count).sum::<usize>(), 1);
    }

    #[test]
    fn survey_requires_models() {
        let f = fixture();
        let err = survey_unguided(10, &f.oracle, &[], &f.groups, &mut RngHandle::from_seed(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidModels(_)));
        let err = survey_unguided(
            10,
            &f.oracle,
            &f.feature_models[..4],
            &f.groups,
            &mut RngHandle::from_seed(3),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModels(_)));
        let err = survey_unguided(10, &f.oracle, &f.probes, &f.groups, &mut RngHandle::from_seed(3)).unwrap_err();
        assert!(matches!(err, Error::WrongSpace { .. }));
    }

    #[test]
    fn balanced_generation_fills_exact_quotas() {
        let f = fixture();
        let plan = BalancePlan::new(20, (0..5).collect());
        let run = generate_balanced(
            &plan,
            &f.oracle,
            &f.probes,
            &f.feature_models,
            &f.groups,
            &mut RngHandle::from_seed(5),
        )
        .unwrap();
        for k in 0..5 {
            let n = run
                .records
                .iter()
                .filter(|r| r.steered_toward.as_ref().unwrap().index == k)
                .count();
            assert_eq!(n, 20);
        }
        assert!(run.records.iter().all(|r| Some(&r.group) == r.steered_toward.as_ref()));
        assert!(run.rejects.is_empty());
        for t in &run.report.groups {
            assert_eq!(t.count, 20);
            assert!(t.attempts.unwrap() >= 20);
        }
    }

    #[test]
    fn unverified_generation_accepts_everything() {
        let f = fixture();
        let mut plan = BalancePlan::new(15, vec![0, 1]);
        plan.verify = false;
        let run = generate_balanced(
            &plan,
            &f.oracle,
            &f.probes,
            &f.feature_models,
            &f.groups,
            &mut RngHandle::from_seed(5),
        )
        .unwrap();
        for (_, rate) in acceptance_rates(&run.report) {
            assert_eq!(rate, 1.0);
        }
        assert!(run.report.groups.iter().all(|t| t.attempts == Some(15)));
    }

    #[test]
    fn kept_rejects_are_flagged() {
        let f = fixture();
        let mut plan = BalancePlan::new(10, vec![1]);
        plan.keep_rejects = true;
        plan.steer_policy = SteerPolicy::unit_scaled(0.0);
        let run = generate_balanced(
            &plan,
            &f.oracle,
            &f.probes,
            &f.feature_models,
            &f.groups,
            &mut RngHandle::from_seed(8),
        )
        .unwrap();
        assert!(!run.rejects.is_empty());
        assert!(run.rejects.iter().all(|r| r.rejected && r.group.index != 1));
        assert_eq!(run.rejects.len() + 10, run.report.groups[0].attempts.unwrap());
    }

    #[test]
    fn anti_aligned_probe_makes_quota_unreachable() {
        let f = fixture();
        let target = 1;
        let w = &f.oracle.ground_truth().group_directions[target];
        let anti = LinearModel::new(Space::Latent, target, w.iter().map(|x| -3.0 * x).collect(), 0.0).unwrap();
        let mut plan = BalancePlan::new(50, vec![target]);
        plan.max_attempts_per_group = 100;
        let err = generate_balanced(
            &plan,
            &f.oracle,
            &[anti],
            &f.feature_models,
            &f.groups,
            &mut RngHandle::from_seed(2),
        )
        .unwrap_err();
        match err {
            Error::QuotaUnreachable {
                group,
                accepted,
                attempts,
            } => {
                assert_eq!(group, "Black");
                assert!(accepted < 50);
                assert_eq!(attempts, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plan_validation() {
        let mut plan = BalancePlan::new(10, vec![0]);
        plan.max_attempts_per_group = 5;
        assert!(plan.validate(5).is_err());
        assert!(BalancePlan::new(0, vec![0]).validate(5).is_err());
        assert!(BalancePlan::new(1, vec![7]).validate(5).is_err());
        assert!(BalancePlan::new(1, vec![]).validate(5).is_err());
    }
}
