//! Command-line front end for the texture-guided protection pipeline.
//!
//! Exit codes: 0 success, 1 configuration error, 2 missing input artifact,
//! 3 non-finite value detected.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use texguard::config::RunConfig;
use texguard::pipeline::{self, DefenseVariant, MissingArtifact, NanDetected};
use texguard_core::surrogate::EditKind;

#[derive(Parser)]
#[command(name = "texguard", about = "Texture-guided proactive image protection")]
struct Cli {
    /// Path to a `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the L-infinity perturbation budget.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural train/test corpus.
    GenCorpus,
    /// Train the local and global texture classifiers.
    TrainClassifiers,
    /// Train surrogate editors against the analytic edits.
    TrainSurrogate {
        /// hair-recolor, region-invert, or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Train the perturbation-enhancement head.
    TrainDefense {
        #[arg(long, default_value = "dual")]
        variant: String,
    },
    /// Protect the test split and write protected PNGs.
    Protect {
        #[arg(long, default_value = "dual")]
        variant: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the surrogate editors to the test split (and optionally to
    /// previously protected images).
    Attack {
        /// Directory of protected PNGs from `protect`.
        #[arg(long)]
        protected_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained defense: PSNR/SSIM/distortion/DSR reports.
    Evaluate {
        #[arg(long, default_value = "dual")]
        variant: String,
        /// Distortion threshold for counting a defense success.
        #[arg(long, default_value_t = texguard_core::metrics::DSR_THRESHOLD)]
        threshold: f64,
    },
    /// Train and evaluate all three guidance variants.
    Ablation {
        #[arg(long, default_value_t = texguard_core::metrics::DSR_THRESHOLD)]
        threshold: f64,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(eps) = cli.epsilon {
        cfg.defense.epsilon = eps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn edit_kinds(s: &str) -> Result<Vec<EditKind>> {
    match s {
        "all" => Ok(vec![EditKind::HairRecolor, EditKind::RegionInvert]),
        "hair-recolor" => Ok(vec![EditKind::HairRecolor]),
        "region-invert" => Ok(vec![EditKind::RegionInvert]),
        other => anyhow::bail!("unknown edit kind `{other}` (hair-recolor, region-invert, all)"),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::GenCorpus => {
            let (train, test) = pipeline::generate_corpus(&cfg)?;
            println!(
                "generated {train} train and {test} test faces under {}",
                cfg.corpus_dir.display()
            );
        }
        Cmd::TrainClassifiers => {
            let (local_acc, global_acc) = pipeline::train_classifiers(&cfg)?;
            println!("local classifier final train accuracy:  {local_acc:.3}");
            println!("global classifier final train accuracy: {global_acc:.3}");
        }
        Cmd::TrainSurrogate { kind } => {
            for k in edit_kinds(kind)? {
                let hist = pipeline::train_editor(&cfg, k)?;
                println!(
                    "surrogate {}: final train MSE {:.6}",
                    k.name(),
                    hist.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Cmd::TrainDefense { variant } => {
            let v = DefenseVariant::parse(variant)?;
            let logs = pipeline::train_defense_variant(&cfg, v)?;
            if let Some(last) = logs.last() {
                println!(
                    "defense {} epoch {}: total {:.6} (mae {:.6}, mse {:.6}, cam {:.6})",
                    v.name(),
                    last.epoch,
                    last.total,
                    last.mae,
                    last.mse,
                    last.cam
                );
            }
        }
        Cmd::Protect { variant, out } => {
            let v = DefenseVariant::parse(variant)?;
            let paths = pipeline::protect_corpus(&cfg, v, out)?;
            println!("protected {} images into {}", paths.len(), out.display());
        }
        Cmd::Attack { protected_dir, out } => {
            let n = pipeline::attack_corpus(&cfg, protected_dir.as_deref(), out)?;
            println!("wrote {n} edited images into {}", out.display());
        }
        Cmd::Evaluate { variant, threshold } => {
            let v = DefenseVariant::parse(variant)?;
            let report = pipeline::evaluate(&cfg, v, *threshold)?;
            for row in &report.rows {
                println!(
                    "{}: DSR {:.1}% | distortion {:.4} | PSNR {:.2} dB | SSIM {:.4}",
                    row.edit_kind, row.dsr_percent, row.mean_distortion, row.mean_psnr, row.mean_ssim
                );
            }
        }
        Cmd::Ablation { threshold } => {
            let report = pipeline::ablation(&cfg, *threshold)?;
            for row in &report.rows {
                println!(
                    "{}: DSR {:.1}% | distortion {:.4} | PSNR {:.2} dB | SSIM {:.4}",
                    row.edit_kind, row.dsr_percent, row.mean_distortion, row.mean_psnr, row.mean_ssim
                );
            }
        }
        Cmd::Gradcheck => {
            let reports = texguard_core::gradcheck::run_all(cfg.seed)?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{status:4} {:32} max rel err {:.3e} (tol {:.0e}, {} coords)",
                    r.name, r.max_rel_err, r.tolerance, r.coords_checked
                );
                if !r.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(NanDetected(format!("{failed} gradient checks failed")).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingArtifact>().is_some() {
                ExitCode::from(2)
            } else if e.downcast_ref::<NanDetected>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
