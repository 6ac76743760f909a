// Automatic attribute labels with confidence gating. Labels below the
// review threshold land in a queue; a manual resolution appends a new
// record version to the manifest on disk.

use fairgen::config::RunConfig;
use fairgen::generator::OracleConfig;
use fairgen::labeling::{apply_manual_label, build_review_queue, Provenance};
use fairgen::manifest::{append_records, Manifest};
use fairgen::workflow;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 21,
        oracle: OracleConfig::desk(),
        ..RunConfig::default()
    };
    let classifier = workflow::train_feature_classifier(&cfg)?;
    let (_, mut manifest) = workflow::survey(&cfg, 300, &classifier)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("survey.manifest");
    manifest.write(&path)?;

    let heads = workflow::train_heads_from_oracle(&cfg)?;
    let changed = workflow::label_manifest(&mut manifest, &path, &heads)?;
    let queue = build_review_queue(manifest.latest_records(), cfg.review.threshold);
    println!("labelled {changed} records, {} labels need review", queue.len());

    let item = &queue[0];
    println!(
        "least confident: {} {} = {} ({:.3})",
        item.record_id, item.attribute, item.auto_value, item.confidence
    );
    let resolution = apply_manual_label(
        &mut manifest,
        &item.record_id,
        &item.attribute,
        &item.auto_value,
        "reviewer",
    )?;
    append_records(&path, resolution.appended.as_slice())?;

    let reread = Manifest::read(&path)?;
    let latest = reread.latest(&item.record_id).unwrap();
    assert_eq!(latest.label_provenance[&item.attribute], Provenance::Manual);
    assert_eq!(latest.version, 3);
    let left = build_review_queue(reread.latest_records(), cfg.review.threshold).len();
    println!("after one resolution: {left} pending");
    assert_eq!(left, queue.len() - 1);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
