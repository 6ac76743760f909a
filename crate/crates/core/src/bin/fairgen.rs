use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairgen::classifier::ModelSet;
use fairgen::config::RunConfig;
use fairgen::labeling::{build_review_queue, load_heads, save_heads};
use fairgen::manifest::Manifest;
use fairgen::report::{render_report, report_from_manifest, ReportFormat};
use fairgen::review::{self, ServiceState};
use fairgen::{workflow, Error, Result};

/// Balanced synthetic dataset generation by latent-space steering.
#[derive(Parser)]
#[command(name = "fairgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the feature-space group classifier on oracle samples.
    TrainClassifier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one latent probe per group from a survey manifest.
    ProbeLatent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample without steering and report the group distribution.
    Survey {
        #[arg(long)]
        config: PathBuf,
        #[arg(short = 'n', default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to `artifacts.classifier` from the config.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Also store every sample, for probe training.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Steered generation until every group meets its quota.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// `Q=<n>` per-group quota; the config's plan when omitted.
        #[arg(long)]
        plan: Option<String>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        probes: Option<PathBuf>,
    },
    /// Attach automatic attribute labels. Heads are trained on the oracle
    /// and saved when the heads directory is empty.
    Label {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        heads: PathBuf,
    },
    /// Serve the review queue API (and the UI, when built).
    ReviewServe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = fairgen::labeling::DEFAULT_REVIEW_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Static UI files served at `/` if the directory exists.
        #[arg(long, default_value = "review-ui/dist")]
        ui_dir: PathBuf,
    },
    /// Print the distribution report stored in a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairgen: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Artifact path from a flag, else from the config (relative to the
/// config file).
fn artifact(flag: Option<PathBuf>, configured: &Option<PathBuf>, config: &Path, what: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    let p = configured
        .as_ref()
        .ok_or_else(|| Error::Config(format!("no {what} given: pass --{what} or set artifacts.{what}")))?;
    Ok(match config.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.clone(),
    })
}

fn parse_plan(s: &str) -> Result<usize> {
    let n = s.strip_prefix("Q=").unwrap_or(s);
    n.parse()
        .map_err(|_| Error::Config(format!("bad plan {s:?}, expected Q=<per-group quota>")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainClassifier { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let set = workflow::train_feature_classifier(&cfg)?;
            set.save(&out)?;
            eprintln!("trained {} group models -> {}", set.models.len(), out.display());
        }
        Command::ProbeLatent { config, manifest, out } => {
            let cfg = RunConfig::load(&config)?;
            let m = Manifest::read(&manifest)?;
            let probes = workflow::train_latent_probes(&cfg, &m)?;
            probes.save_dir(&out)?;
            for (p, name) in probes.models.iter().zip(probes.groups.names()) {
                println!(
                    "{name}: |theta| = {:.4}, id {}",
                    fairgen::latent::l2_norm(&p.weights),
                    p.fingerprint()
                );
            }
        }
        Command::Survey {
            config,
            n,
            report,
            classifier,
            manifest,
        } => {
            let cfg = RunConfig::load(&config)?;
            let clf = ModelSet::load(&artifact(classifier, &cfg.artifacts.classifier, &config, "classifier")?)?;
            let (run, m) = workflow::survey(&cfg, n, &clf)?;
            fs::write(&report, render_report(&run.report, ReportFormat::Json))?;
            if let Some(path) = manifest {
                m.write(&path)?;
            }
            print!("{}", render_report(&run.report, ReportFormat::Text));
        }
        Command::Generate {
            config,
            plan,
            manifest,
            classifier,
            probes,
        } => {
            let cfg = RunConfig::load(&config)?;
            let quota = plan.as_deref().map(parse_plan).transpose()?;
            let clf = ModelSet::load(&artifact(classifier, &cfg.artifacts.classifier, &config, "classifier")?)?;
            let probe_dir = artifact(probes, &cfg.artifacts.probes, &config, "probes")?;
            let probes = ModelSet::load_dir(&probe_dir, cfg.group_set()?)?;
            let (run, m) = workflow::generate(&cfg, quota, &clf, &probes)?;
            m.write(&manifest)?;
            print!("{}", render_report(&run.report, ReportFormat::Text));
        }
        Command::Label {
            config,
            manifest,
            heads,
        } => {
            let cfg = RunConfig::load(&config)?;
            let mut loaded = load_heads(&heads)?;
            if loaded.is_empty() {
                loaded = workflow::train_heads_from_oracle(&cfg)?;
                save_heads(&heads, &loaded)?;
                eprintln!("trained {} heads -> {}", loaded.len(), heads.display());
            }
            let mut m = Manifest::read(&manifest)?;
            let changed = workflow::label_manifest(&mut m, &manifest, &loaded)?;
            let pending = build_review_queue(m.latest_records(), cfg.review.threshold).len();
            println!(
                "labelled {changed} records; {pending} labels below confidence {} await review",
                cfg.review.threshold
            );
        }
        Command::ReviewServe {
            manifest,
            port,
            threshold,
            host,
            ui_dir,
        } => {
            let state = ServiceState::open(&manifest, threshold)?;
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("review service on http://{addr}");
            rt.block_on(review::serve(state, addr, Some(&ui_dir)))?;
        }
        Command::Report { manifest, format } => {
            let format: ReportFormat = format.parse()?;
            let m = Manifest::read(&manifest)?;
            print!("{}", render_report(&report_from_manifest(&m)?, format));
        }
    }
    Ok(())
}
