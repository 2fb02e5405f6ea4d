//! Command-line front end. Each subcommand runs one pipeline stage and
//! persists its output so later stages can resume from files.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime
//! failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::calibration::{load_stats, save_stats, DEFAULT_SIGMA_FLOOR};
use crate::composition::DEFAULT_MIN_AREA;
use crate::error::{Error, Result};
use crate::interchange::{
    load_manifest, load_rulespec, load_text_bank, read_tensor, write_tensor, Manifest, Split,
    Tensor, TextBank,
};
use crate::metrics::{
    read_scores_csv, report, write_report_csv, write_report_json, write_scores_csv,
};
use crate::patch::{load_bank, save_bank, AnomalyMap};
use crate::pipeline::{
    build_reference_bank, calibrate_few_shot, calibrate_on_validation, load_bank_references,
    load_config, pixel_metric, run_pipeline, validate_dataset, write_records, Scorer,
    DEFAULT_FEW_SHOT_RATIO, DEFAULT_FULL_DATA_RATIO,
};
use crate::synth::{generate_dataset, load_synth_spec, SynthSpec};

/// Environment variable capping rayon workers (0 = one per core).
pub const THREADS_ENV: &str = "LOGSAD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "logsad",
    version,
    about = "Training-free anomaly detection over precomputed embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Pushpins,
    Juice,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted anomalies.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "spec")]
        preset: Option<Preset>,
        /// JSON synthesis spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the structural perturbation magnitude.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Check a manifest (and optionally rules and text bank) and list every problem.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        text_bank: Option<PathBuf>,
    },
    /// Build the patch memory bank from normal training images.
    BuildBank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        coreset_ratio: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        k_shot: Option<usize>,
    },
    /// Fit calibration statistics on anomaly-free scores.
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score each bank reference against the others instead of the
        /// validation split.
        #[arg(long)]
        leave_one_out: bool,
        #[arg(long, default_value_t = DEFAULT_SIGMA_FLOOR)]
        sigma_floor: f64,
    },
    /// Score every test image and write one CSV row per image.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        text_bank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Full records with rule verdicts, as JSON.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Directory for per-image anomaly maps.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_AREA)]
        min_area: f64,
    },
    /// Compute image-level (and, given maps, pixel-level) metrics.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Run every stage from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(items) = root_cause(&e) {
                for item in items {
                    eprintln!("  - {item}");
                }
            }
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root_cause(source),
        other => other,
    }
}

fn configure_threads() {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    // Fails harmlessly when a pool already exists in this process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            preset,
            spec,
            seed,
            epsilon,
        } => {
            let mut spec = match (spec, preset) {
                (Some(path), _) => load_synth_spec(path)?,
                (None, Some(Preset::Juice)) => SynthSpec::juice_like(0),
                (None, _) => SynthSpec::pushpins_like(0),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let (Some(eps), Some(s)) = (epsilon, spec.structural.as_mut()) {
                s.epsilon = eps;
            }
            let written = generate_dataset(&spec, &out)?;
            println!("{}", written.manifest.display());
            Ok(())
        }
        Command::Validate {
            manifest,
            rules,
            text_bank,
        } => {
            let manifest = load_manifest(&manifest)?;
            let spec = rules.map(load_rulespec).transpose()?;
            let bank = text_bank.map(load_text_bank).transpose()?;
            validate_dataset(&manifest, spec.as_ref(), bank.as_ref())?;
            println!("ok: {} images", manifest.images.len());
            Ok(())
        }
        Command::BuildBank {
            manifest,
            out,
            coreset_ratio,
            seed,
            k_shot,
        } => {
            let manifest = load_manifest(&manifest)?;
            let ratio = coreset_ratio.unwrap_or(if k_shot.is_some() {
                DEFAULT_FEW_SHOT_RATIO
            } else {
                DEFAULT_FULL_DATA_RATIO
            });
            let (bank, _) = build_reference_bank(&manifest, k_shot, ratio, seed)?;
            save_bank(&bank, &out)
        }
        Command::Calibrate {
            manifest,
            bank,
            out,
            leave_one_out,
            sigma_floor,
        } => {
            let manifest = load_manifest(&manifest)?;
            let bank = load_bank(&bank)?;
            let references = load_bank_references(&manifest, &bank)?;
            let stats = if leave_one_out {
                calibrate_few_shot(
                    &references,
                    bank.coreset.ratio,
                    bank.coreset.seed,
                    sigma_floor,
                )?
            } else {
                calibrate_on_validation(&manifest, &bank, &references, sigma_floor)?
            };
            save_stats(&stats, &out)
        }
        Command::Score {
            manifest,
            bank,
            calib,
            rules,
            text_bank,
            out,
            records,
            maps,
            min_area,
        } => {
            let manifest = load_manifest(&manifest)?;
            let bank = load_bank(&bank)?;
            let stats = load_stats(&calib)?;
            let spec = rules.map(load_rulespec).transpose()?;
            let text = text_bank.map(load_text_bank).transpose()?;
            validate_dataset(&manifest, spec.as_ref(), text.as_ref())?;
            let references = load_bank_references(&manifest, &bank)?;
            let empty = TextBank::empty(0);
            let scorer = Scorer {
                bank: &bank,
                references: references.iter().map(|r| r.interests.clone()).collect(),
                stats: &stats,
                rules: spec.as_ref().map(|s| s.rules.as_slice()),
                text_bank: text.as_ref().unwrap_or(&empty),
                min_area,
            };
            let scored = scorer.score_test_split(&manifest)?;
            let (scores, anomaly_maps): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
            write_scores_csv(&scores, &out)?;
            if let Some(path) = records {
                write_records(&scores, path)?;
            }
            if let Some(dir) = maps {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (record, map) in scores.iter().zip(&anomaly_maps) {
                    write_tensor(&map_tensor(map), map_path(&dir, &record.image_id))?;
                }
            }
            Ok(())
        }
        Command::Eval {
            scores,
            manifest,
            out,
            csv,
            maps,
        } => {
            let manifest = load_manifest(&manifest)?;
            let records = read_scores_csv(&scores)?;
            let mut rep = report(&records, &manifest)?;
            match maps {
                Some(dir) => {
                    rep.pixel_auroc = pixel_from_files(&manifest, &dir)?;
                    if rep.pixel_auroc.is_none() {
                        rep.notes
                            .push("pixel_auroc: no pixel ground truth in test split".into());
                    }
                }
                None => rep
                    .notes
                    .push("pixel_auroc: no anomaly maps supplied".into()),
            }
            write_report_json(&rep, &out)?;
            if let Some(path) = csv {
                write_report_csv(&rep, path)?;
            }
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(
                stdout,
                "auroc={} f1_max={}",
                fmt_opt(rep.auroc),
                fmt_opt(rep.f1_max)
            );
            Ok(())
        }
        Command::Run { config } => {
            let config = load_config(&config)?;
            let out = run_pipeline(&config)?;
            println!(
                "auroc={} f1_max={}",
                fmt_opt(out.report.auroc),
                fmt_opt(out.report.f1_max)
            );
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn map_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.lsad"))
}

fn map_tensor(map: &AnomalyMap) -> Tensor {
    Tensor::new(
        vec![map.height, map.width],
        map.data.iter().map(|&v| v as f32).collect(),
    )
    .expect("map shape is valid")
}

fn pixel_from_files(manifest: &Manifest, dir: &Path) -> Result<Option<f64>> {
    let maps = manifest
        .split(Split::Test)
        .map(|r| {
            let t = read_tensor(map_path(dir, &r.image_id))?;
            let &[h, w] = t.dims() else {
                return Err(Error::DimensionMismatch {
                    context: format!("anomaly map rank for {}", r.image_id),
                    expected: 2,
                    actual: t.ndim(),
                });
            };
            Ok(AnomalyMap::new(
                h,
                w,
                t.data().iter().map(|&v| f64::from(v)).collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    pixel_metric(manifest, &maps)
}
