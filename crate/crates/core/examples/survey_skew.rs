// Measure how skewed an unguided sampler is: train a feature-space group
// classifier on oracle samples, then classify fresh unguided samples.

use fairgen::config::RunConfig;
use fairgen::generator::OracleConfig;
use fairgen::report::{render_report, ReportFormat};
use fairgen::workflow;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 11,
        oracle: OracleConfig::desk(),
        ..RunConfig::default()
    };
    let classifier = workflow::train_feature_classifier(&cfg)?;
    let (run, _manifest) = workflow::survey(&cfg, 5_000, &classifier)?;
    print!("{}", render_report(&run.report, ReportFormat::Text));

    let majority = run.report.groups.iter().max_by_key(|g| g.count).unwrap();
    println!("majority group: {} at {:.1}%", majority.name, majority.percentage);
    assert!(majority.percentage > 60.0);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
