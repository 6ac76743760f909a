// The full guided loop: survey, probe training on the surveyed latents,
// then steered generation with feature-space verification until every
// group holds exactly its quota.

use fairgen::config::RunConfig;
use fairgen::generator::OracleConfig;
use fairgen::pipeline::uplift;
use fairgen::report::{render_report, ReportFormat};
use fairgen::workflow;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 5,
        oracle: OracleConfig::desk(),
        ..RunConfig::default()
    };
    let classifier = workflow::train_feature_classifier(&cfg)?;
    let (survey, survey_manifest) = workflow::survey(&cfg, 5_000, &classifier)?;
    let probes = workflow::train_latent_probes(&cfg, &survey_manifest)?;
    let (run, manifest) = workflow::generate(&cfg, Some(50), &classifier, &probes)?;

    print!("{}", render_report(&survey.report, ReportFormat::Text));
    print!("{}", render_report(&run.report, ReportFormat::Text));
    for (group, factor) in uplift(&survey.report, &run.report) {
        println!("{:>7}: {factor:.1}x more likely than unguided", group.name);
    }
    assert!(run.report.groups.iter().all(|g| g.count == 50));
    assert_eq!(manifest.len(), 250);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
