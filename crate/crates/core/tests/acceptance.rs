// Acceptance gate. Runs as a plain binary (no libtest harness) so every
// criterion prints one PASS/FAIL line even when all of them pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fairgen::classifier::{
    accuracy, logistic_gradient, logistic_loss, predict_group, train_ovr, GroupLabel, GroupSet, LinearModel, ModelSet,
    Space,
};
use fairgen::config::RunConfig;
use fairgen::generator::{Oracle, OracleConfig};
use fairgen::labeling::{apply_manual_label, build_review_queue, Provenance};
use fairgen::latent::{cosine_similarity, dot_slices, normalize, sample_latent, RngHandle};
use fairgen::manifest::Manifest;
use fairgen::pipeline::{acceptance_rates, generate_balanced, BalancePlan, DistributionReport};
use fairgen::report::{render_report, ReportFormat};
use fairgen::review::{router, ServiceState};
use fairgen::steering::best_unit_latent;
use fairgen::workflow;
use tower::ServiceExt;

const SEED: u64 = 2024;
const MAJORITY: usize = 3;

// Frozen from one run of this suite at SEED with the default oracle seed.
const GOLDEN_TRUE_COUNTS: [usize; 5] = [672, 660, 639, 7400, 629];
const GOLDEN_SURVEY_COUNTS: [usize; 5] = [549, 476, 483, 8012, 480];

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn desk_config() -> RunConfig {
    RunConfig {
        seed: SEED,
        oracle: OracleConfig::desk(),
        ..RunConfig::default()
    }
}

/// Shared artifacts: the feature classifier and the unguided survey.
struct Desk {
    cfg: RunConfig,
    oracle: Oracle,
    classifier: ModelSet,
    survey: DistributionReport,
    setup_time: Duration,
}

fn desk() -> Result<Desk, String> {
    let start = Instant::now();
    let cfg = desk_config();
    let oracle = cfg.oracle().map_err(fail)?;
    let classifier = workflow::train_feature_classifier(&cfg).map_err(fail)?;
    let (run, _) = workflow::survey(&cfg, 10_000, &classifier).map_err(fail)?;
    Ok(Desk {
        cfg,
        oracle,
        classifier,
        survey: run.report,
        setup_time: start.elapsed(),
    })
}

fn latent_probes(desk: &Desk) -> Result<Vec<LinearModel>, String> {
    let mut rng = RngHandle::from_seed(SEED + 1);
    let data = desk.oracle.labeled_latents(5_000, &mut rng).map_err(fail)?;
    train_ovr(&data, &desk.classifier.groups, Space::Latent, &desk.cfg.probe_train).map_err(fail)
}

fn skew_reproduction(desk: &Desk) -> Check {
    let mut rng = RngHandle::from_seed(SEED);
    let mut truth = [0usize; 5];
    for _ in 0..10_000 {
        let z = sample_latent(&mut rng, 16).map_err(fail)?;
        truth[desk.oracle.true_group(&z).map_err(fail)?] += 1;
    }
    let survey: Vec<usize> = desk.survey.groups.iter().map(|g| g.count).collect();
    let share = desk.survey.share(MAJORITY);
    ensure!(share > 0.60, "majority share {:.2}% is not above 60%", 100.0 * share);
    ensure!(
        truth == GOLDEN_TRUE_COUNTS,
        "hidden-group counts {truth:?} differ from golden {GOLDEN_TRUE_COUNTS:?}"
    );
    ensure!(
        survey == GOLDEN_SURVEY_COUNTS,
        "survey counts {survey:?} differ from golden {GOLDEN_SURVEY_COUNTS:?}"
    );
    ensure!(desk.setup_time < Duration::from_secs(10), "took {:?}", desk.setup_time);
    Ok(format!(
        "majority {:.2}% of 10000, counts {survey:?}, {:.1}s incl. classifier training",
        100.0 * share,
        desk.setup_time.as_secs_f64()
    ))
}

fn guided_uplift(desk: &Desk) -> Check {
    let start = Instant::now();
    let probes = latent_probes(desk)?;
    let mut rng = RngHandle::from_seed(SEED + 2);
    let plan = BalancePlan::new(100, (0..5).collect());
    let run = generate_balanced(
        &plan,
        &desk.oracle,
        &probes,
        &desk.classifier.models,
        &desk.classifier.groups,
        &mut rng,
    )
    .map_err(fail)?;
    let elapsed = start.elapsed();
    let mut ratios = Vec::new();
    for (label, rate) in acceptance_rates(&run.report) {
        if label.index == MAJORITY {
            continue;
        }
        let ratio = rate / desk.survey.share(label.index);
        ensure!(
            ratio >= 2.5,
            "{}: acceptance {:.3} is only {ratio:.2}x its unguided share",
            label.name,
            rate
        );
        ratios.push(format!("{} {ratio:.1}x", label.name));
    }
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{}, {:.1}s", ratios.join(", "), elapsed.as_secs_f64()))
}

fn quota_exactness(desk: &Desk) -> Check {
    let probes = latent_probes(desk)?;
    let run_once = || {
        let mut rng = RngHandle::from_seed(SEED + 3);
        generate_balanced(
            &BalancePlan::new(100, (0..5).collect()),
            &desk.oracle,
            &probes,
            &desk.classifier.models,
            &desk.classifier.groups,
            &mut rng,
        )
        .map_err(fail)
    };
    let a = run_once()?;
    let b = run_once()?;
    for k in 0..5 {
        let n = a.records.iter().filter(|r| r.group.index == k).count();
        ensure!(n == 100, "group {k} has {n} records");
    }
    for r in &a.records {
        let pred = predict_group(&desk.classifier.models, r.feature.as_slice()).map_err(fail)?;
        let target = r.steered_toward.as_ref().map(|g| g.index);
        ensure!(
            pred.group == r.group.index && target == Some(pred.group),
            "record {} re-classifies as {} (stored {}, target {target:?})",
            r.record_id,
            pred.group,
            r.group.index
        );
    }
    // ids and timestamps carry wall-clock time; everything else must match
    let same = a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| {
            x.latent == y.latent
                && x.feature == y.feature
                && x.group == y.group
                && x.group_confidence == y.group_confidence
                && x.steered_toward == y.steered_toward
        })
        && a.report == b.report;
    ensure!(same, "two runs with the same seed differ");
    Ok("500 records, 100 per group, re-classified and repeated identically".into())
}

fn unit_direction_optimality() -> Check {
    let mut rng = RngHandle::from_seed(SEED + 4);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..20 {
        let theta = sample_latent(&mut rng, 16).map_err(fail)?.into_inner();
        let model = LinearModel::new(Space::Latent, 0, theta.clone(), 0.0).map_err(fail)?;
        let best = dot_slices(&theta, best_unit_latent(&model).map_err(fail)?.as_slice()).map_err(fail)?;
        for _ in 0..10_000 {
            let u = normalize(&sample_latent(&mut rng, 16).map_err(fail)?).map_err(fail)?;
            let v = dot_slices(&theta, u.as_slice()).map_err(fail)?;
            ensure!(v <= best + 1e-9, "<theta, u> = {v} beats {best}");
            worst_gap = worst_gap.min(best - v);
        }
    }
    Ok(format!(
        "20 x 10000 unit vectors, closest approach {worst_gap:.3e} below the optimum"
    ))
}

// Test-side loss oracle: the textbook formula, no stabilisation tricks.
fn naive_loss(w: &[f64], b: f64, data: &[(Vec<f64>, bool)], l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in data {
        let t: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        let p = 1.0 / (1.0 + (-t).exp());
        total -= if *y { p.ln() } else { (1.0 - p).ln() };
    }
    total / data.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn gradient_correctness() -> Check {
    let mut rng = RngHandle::from_seed(SEED + 5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (set, (dim, n, l2)) in [
        (3, 40, 0.0),
        (5, 100, 1e-4),
        (8, 60, 0.01),
        (16, 200, 1e-4),
        (2, 25, 0.1),
    ]
    .into_iter()
    .enumerate()
    {
        let truth: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let data: Vec<(Vec<f64>, bool)> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
                let t: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
                let y = t + 0.5 * rng.standard_normal() > 0.0;
                (x, y)
            })
            .collect();
        for _ in 0..10 {
            let w: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
            let b = rng.standard_normal();
            let analytic_loss = logistic_loss(&w, b, &data, l2).map_err(fail)?;
            let reference = naive_loss(&w, b, &data, l2);
            ensure!(
                (analytic_loss - reference).abs() <= 1e-12 * reference.abs().max(1.0),
                "dataset {set}: loss {analytic_loss} vs reference {reference}"
            );
            let (gw, gb) = logistic_gradient(&w, b, &data, l2).map_err(fail)?;
            let mut params = w.clone();
            params.push(b);
            let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
            for i in 0..params.len() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p[i] += delta;
                    let bias = p.pop().unwrap();
                    naive_loss(&p, bias, &data, l2)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let scale = analytic[i].abs().max(numeric.abs());
                let rel = if scale == 0.0 {
                    0.0
                } else {
                    (analytic[i] - numeric).abs() / scale
                };
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst < 1e-5, "max relative error {worst:.3e}");
    Ok(format!("5 datasets x 10 points, max relative error {worst:.2e}"))
}

fn classifier_sanity(desk: &Desk) -> Check {
    let mut rng = RngHandle::from_seed(SEED + 6);
    let held_out = desk.oracle.labeled_latents(5_000, &mut rng).map_err(fail)?;
    let data: Vec<(Vec<f64>, usize)> = held_out
        .iter()
        .map(|(z, g)| Ok((desk.oracle.generate(z)?.into_inner(), *g)))
        .collect::<fairgen::Result<_>>()
        .map_err(fail)?;
    let acc = accuracy(&desk.classifier.models, &data).map_err(fail)?;
    ensure!(acc >= 0.90, "held-out accuracy {acc:.4}");
    Ok(format!("held-out accuracy {acc:.4} on 5000 fresh samples"))
}

fn probe_recovery(desk: &Desk) -> Check {
    let probes = latent_probes(desk)?;
    let mut parts = Vec::new();
    for p in probes.iter().filter(|p| p.positive_class != MAJORITY) {
        let w = &desk.oracle.ground_truth().group_directions[p.positive_class];
        let cos = cosine_similarity(&p.weights, w).map_err(fail)?;
        ensure!(cos > 0.8, "group {} cosine {cos:.3}", p.positive_class);
        parts.push(format!("{cos:.3}"));
    }
    Ok(format!("cosines {}", parts.join(", ")))
}

fn manifest_round_trip(desk: &Desk) -> Check {
    let (_, mut manifest) = workflow::survey(&desk.cfg, 1_000, &desk.classifier).map_err(fail)?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let first = dir.path().join("a.manifest");
    let second = dir.path().join("b.manifest");
    manifest.write(&first).map_err(fail)?;
    let heads = workflow::train_heads_from_oracle(&desk.cfg).map_err(fail)?;
    workflow::label_manifest(&mut manifest, &first, &heads).map_err(fail)?;
    let read = Manifest::read(&first).map_err(fail)?;
    ensure!(read == manifest, "read-back manifest differs from the written one");
    read.write(&second).map_err(fail)?;
    let (a, b) = (
        std::fs::read(&first).map_err(fail)?,
        std::fs::read(&second).map_err(fail)?,
    );
    ensure!(a == b, "second write differs from the first");
    Ok(format!("{} lines, {} bytes, byte-identical", read.len() + 1, a.len()))
}

fn percentage_row(text: &str) -> Vec<String> {
    let row = text.lines().find(|l| l.starts_with("Percentage")).unwrap_or("");
    row.split('|').skip(1).map(|c| c.trim().to_string()).collect()
}

fn report_fixtures() -> Check {
    let groups = GroupSet::default_for(5);
    let table2 = DistributionReport::from_counts_over(&groups, &[882, 449, 975, 6837, 867], 10_000, 0).map_err(fail)?;
    let row2 = percentage_row(&render_report(&table2, ReportFormat::Text));
    ensure!(
        row2 == ["8.82%", "4.49%", "9.75%", "68.37%", "8.67%"],
        "unguided row {row2:?}"
    );
    let labels: Vec<GroupLabel> = (0..3).map(|i| groups.label(i).unwrap()).collect();
    let table3 = DistributionReport::guided(&labels, &[423, 633, 259], &[1000; 3], 0).map_err(fail)?;
    let row3 = percentage_row(&render_report(&table3, ReportFormat::Text));
    ensure!(row3 == ["42.3%", "63.3%", "25.9%"], "guided row {row3:?}");
    Ok(format!("{} / {}", row2.join(" "), row3.join(" ")))
}

fn review_flow(desk: &Desk) -> Check {
    let (_, mut manifest) = workflow::survey(&desk.cfg, 400, &desk.classifier).map_err(fail)?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("review.manifest");
    manifest.write(&path).map_err(fail)?;
    let heads = workflow::train_heads_from_oracle(&desk.cfg).map_err(fail)?;
    workflow::label_manifest(&mut manifest, &path, &heads).map_err(fail)?;

    let threshold = desk.cfg.review.threshold;
    let queue = build_review_queue(manifest.latest_records(), threshold);
    ensure!(queue.len() >= 2, "queue too short to exercise: {}", queue.len());
    ensure!(
        queue.windows(2).all(|w| w[0].confidence <= w[1].confidence),
        "queue is not in ascending confidence"
    );

    // library path: provenance flips to manual with confidence 1
    let mut scratch = manifest.clone();
    let first = &queue[0];
    let res = apply_manual_label(
        &mut scratch,
        &first.record_id,
        &first.attribute,
        &first.auto_value,
        "gate",
    )
    .map_err(fail)?;
    let latest = scratch.latest(&first.record_id).unwrap();
    ensure!(
        latest.label_provenance[&first.attribute] == Provenance::Manual
            && latest.downstream_labels[&first.attribute].confidence == 1.0
            && res.item.resolver.as_deref() == Some("gate"),
        "manual label did not flip provenance"
    );

    // service path: POST, drop the service, reopen from disk
    let target = &queue[1];
    let value = heads
        .iter()
        .find(|h| h.attribute == target.attribute)
        .and_then(|h| h.value_names.iter().find(|v| **v != target.auto_value))
        .cloned()
        .unwrap();
    let rt = tokio::runtime::Runtime::new().map_err(fail)?;
    let status = rt.block_on(async {
        let state = ServiceState::open(&path, threshold).map_err(fail)?;
        let body = serde_json::json!({
            "record_id": target.record_id,
            "attribute": target.attribute,
            "value": value,
            "resolver": "gate",
        });
        let req = Request::post("/api/label")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .map_err(fail)?;
        let resp = router(state, None).oneshot(req).await.map_err(fail)?;
        Ok::<_, String>(resp.status())
    })?;
    ensure!(status == StatusCode::OK, "POST /api/label returned {status}");

    let reopened = ServiceState::open(&path, threshold).map_err(fail)?;
    let reread = Manifest::read(&path).map_err(fail)?;
    let rec = reread.latest(&target.record_id).unwrap();
    ensure!(
        rec.label_provenance[&target.attribute] == Provenance::Manual
            && rec.downstream_labels[&target.attribute].value == value,
        "resolution not durable after restart"
    );
    let pending = reopened.queue().len();
    ensure!(
        pending == queue.len() - 1,
        "pending {pending}, expected {}",
        queue.len() - 1
    );
    ensure!(
        reread.latest(&target.record_id).unwrap().group == manifest.latest(&target.record_id).unwrap().group,
        "service changed a group label"
    );
    Ok(format!(
        "{} queued, resolution survived restart, {pending} pending",
        queue.len()
    ))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let desk = desk();
    let desk = desk.as_ref();
    let desk_check = |f: fn(&Desk) -> Check| -> Box<dyn Fn() -> Check + '_> {
        Box::new(move || match desk {
            Ok(d) => f(d),
            Err(e) => Err(format!("setup failed: {e}")),
        })
    };
    let criteria: Vec<Criterion> = vec![
        ("skew reproduction", desk_check(skew_reproduction)),
        ("guided uplift", desk_check(guided_uplift)),
        ("quota exactness", desk_check(quota_exactness)),
        ("unit direction optimality", Box::new(unit_direction_optimality)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("classifier sanity", desk_check(classifier_sanity)),
        ("probe direction recovery", desk_check(probe_recovery)),
        ("manifest round trip", desk_check(manifest_round_trip)),
        ("report fixtures", Box::new(report_fixtures)),
        ("headless review flow", desk_check(review_flow)),
    ];

    let mut failed = 0;
    println!("\nacceptance criteria");
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "{} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
