//! `inse`: command-line driver for the coded-audio quality pipeline.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use inse_core::dataset::{
    build_manifest, BuildOptions, CodecClient, ContentType, LabelOracle, Manifest,
};
use inse_core::evaluation::{
    apply_subjective_scores, attach_predictions, evaluate_scored, format_table,
    load_predictions_tsv, load_subjective_scores, write_reports_csv, Grouping, Predictor,
};
use inse_core::frontend::GammatoneFrontend;
use inse_core::synth::{
    build_toy_dataset, make_synthetic_pairs, synthetic_rungs, NoiseColor, NoiseSpec, SynthCodec,
    ToyConfig, SYNTH_MAX_LEVEL_DBFS,
};
use inse_core::training::{summary, train};

use config::{CliConfig, TrainOverrides};

#[derive(Parser, Debug)]
#[command(
    name = "inse",
    version,
    about = "Intrusive quality prediction for coded 48 kHz audio"
)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, env = "INSE_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads for data preparation and scoring [default: all cores]
    #[arg(long, global = true, env = "INSE_WORKERS")]
    workers: Option<usize>,

    /// Base seed for every random stream [default: 0]
    #[arg(long, global = true, env = "INSE_SEED")]
    seed: Option<u64>,

    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the gammatone spectrogram of a WAV file (GTSPEC1 output)
    Spectrogram { input: PathBuf, output: PathBuf },
    /// Write low-level high-passed noise and silence pairs labelled 5
    Synth(SynthArgs),
    /// Write the fully synthetic toy corpus (tones and noise beds at graded SNRs)
    Toy(ToyArgs),
    /// Segment inputs into excerpts, run codecs and label every pair
    BuildManifest(BuildArgs),
    /// k-fold cross-validated training
    Train(TrainArgs),
    /// Score pairs with a checkpoint; prints `deg_path<TAB>mos`
    Predict(PredictArgs),
    /// Correlation reports for a manifest
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory (manifest.csv is written here)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Noise colours
    #[arg(long, value_delimiter = ',', default_value = "white,pink,brown")]
    colors: Vec<NoiseColor>,
    /// Excerpts per colour
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// RMS level in dBFS
    #[arg(long, default_value_t = SYNTH_MAX_LEVEL_DBFS, allow_hyphen_values = true)]
    level_db: f64,
    /// Leave out the digital-silence pair
    #[arg(long)]
    no_silence: bool,
    /// Also code each excerpt at 80/96/128 kbps with the configured `aac` codec
    #[arg(long)]
    coded: bool,
}

#[derive(Args, Debug)]
struct ToyArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of reference excerpts
    #[arg(long, default_value_t = 40)]
    excerpts: usize,
    /// SNR levels in dB, cleanest first
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "30,24,18,12,6,0",
        allow_hyphen_values = true
    )]
    snr_db: Vec<f64>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Source WAV files (48 kHz, mono or stereo)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// music, speech, mixed, noise or silence
    #[arg(long, default_value = "music")]
    content: ContentType,
    /// Skip the 3.5 kHz and 7 kHz low-pass anchors
    #[arg(long)]
    no_anchors: bool,
    /// Excerpt length in seconds
    #[arg(long, default_value_t = 7.2)]
    excerpt_seconds: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Manifest CSV
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for checkpoints and reports
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Score every entry of this manifest
    #[arg(long, conflicts_with_all = ["reference", "degraded"])]
    manifest: Option<PathBuf>,
    /// Reference WAV of a single pair
    #[arg(long = "ref", requires = "degraded")]
    reference: Option<PathBuf>,
    /// Degraded WAV of a single pair
    #[arg(long = "deg", requires = "reference")]
    degraded: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Score the manifest with this checkpoint
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    checkpoint: Option<PathBuf>,
    /// Use precomputed `deg_path<TAB>mos` predictions instead
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// CSV `deg_path,score` replacing the manifest labels
    #[arg(long)]
    subjective: Option<PathBuf>,
    /// Groupings to report
    #[arg(long, value_delimiter = ',', default_value = "overall,codec,bitrate")]
    group_by: Vec<Grouping>,
    /// Leave references and anchors out of every group
    #[arg(long)]
    no_anchors: bool,
    /// Report CSV path
    #[arg(long, default_value = "correlation_report.csv")]
    output: PathBuf,
}

/// Errors the user can fix by changing the invocation.
fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<inse_core::Error>().is_some_and(|e| {
            e.is_not_found()
                || matches!(
                    e,
                    inse_core::Error::Argument(_) | inse_core::Error::Config(_)
                )
        }) || cause.downcast_ref::<config::UsageError>().is_some()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(if is_usage_error(&err) { 2 } else { 1 })
        }
    }
}

/// The error chain on one line, leaving out causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn out_dir(flag: Option<PathBuf>, cfg: &CliConfig, fallback: &str) -> anyhow::Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(std::path::absolute(&dir)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = CliConfig::resolve(cli.config.as_deref(), std::env::vars())?;
    let workers = cli.workers.or(cfg.workers);
    if let Some(n) = workers {
        if n == 0 {
            return Err(config::UsageError("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);

    match cli.command {
        Command::Spectrogram { input, output } => {
            let frontend = GammatoneFrontend::new(cfg.gammatone.clone())?;
            let spec = frontend.compute_file(&input)?;
            spec.save(&output)?;
            println!(
                "{}\t{}x{}",
                output.display(),
                spec.n_bands(),
                spec.n_frames()
            );
        }
        Command::Synth(args) => {
            let dir = out_dir(args.out_dir, &cfg, "synth")?;
            let specs: Vec<NoiseSpec> = args
                .colors
                .iter()
                .flat_map(|&color| {
                    (0..args.count as u64).map(move |i| NoiseSpec {
                        color,
                        duration_s: inse_core::dataset::EXCERPT_SECONDS,
                        seed: seed.wrapping_add(i),
                        target_level_db: args.level_db,
                        highpass_fc: None,
                    })
                })
                .collect();
            let client = CodecClient::new(&cfg.tools);
            let codec = SynthCodec {
                client: &client,
                rungs: synthetic_rungs(),
            };
            let entries =
                make_synthetic_pairs(&specs, !args.no_silence, &dir, args.coded.then_some(&codec))?;
            save_manifest(entries, &dir)?;
        }
        Command::Toy(args) => {
            let dir = out_dir(args.out_dir, &cfg, "toy")?;
            let config = ToyConfig {
                excerpts: args.excerpts,
                snr_db: args.snr_db,
                seed,
            };
            save_manifest(build_toy_dataset(&dir, &config)?, &dir)?;
        }
        Command::BuildManifest(args) => {
            let dir = out_dir(args.out_dir, &cfg, "corpus")?;
            let manifest = build_manifest(
                &args.inputs,
                &dir,
                &CodecClient::new(&cfg.tools),
                &LabelOracle::new(&cfg.tools.oracle)?,
                &BuildOptions {
                    content_type: args.content,
                    anchors: !args.no_anchors,
                    excerpt_seconds: args.excerpt_seconds,
                },
            )?;
            save_manifest(manifest.entries, &dir)?;
        }
        Command::Train(args) => {
            let dir = out_dir(args.out_dir, &cfg, "run")?;
            let mut config = args.overrides.apply(cfg.train.clone());
            config.seed = seed;
            config.gammatone = cfg.gammatone.clone();
            let manifest = Manifest::load(&args.manifest)?;
            let report = train(&manifest, &config, Some(&dir))?;
            print!("{}", summary(&report, &config));
            if report.folds.is_empty() {
                bail!("every fold failed");
            }
        }
        Command::Predict(args) => {
            let predictor = Predictor::load(&args.checkpoint)?;
            let mut out = std::io::stdout().lock();
            match (args.manifest, args.reference, args.degraded) {
                (Some(m), _, _) => {
                    let manifest = Manifest::load(&m)?;
                    for s in predictor.score_entries(&manifest.entries)? {
                        writeln!(out, "{}\t{:.4}", s.entry.deg_path.display(), s.prediction)?;
                    }
                }
                (None, Some(r), Some(d)) => {
                    writeln!(
                        out,
                        "{}\t{:.4}",
                        d.display(),
                        predictor.score_files(&r, &d)?
                    )?;
                }
                _ => {
                    return Err(config::UsageError(
                        "give --manifest or both --ref and --deg".into(),
                    )
                    .into())
                }
            }
        }
        Command::Evaluate(args) => {
            let mut manifest = Manifest::load(&args.manifest)?;
            if let Some(path) = &args.subjective {
                manifest = apply_subjective_scores(&manifest, &load_subjective_scores(path)?)?;
            }
            let scored = match (&args.checkpoint, &args.predictions) {
                (Some(c), _) => Predictor::load(c)?.score_entries(&manifest.entries)?,
                (None, Some(p)) => attach_predictions(&manifest, &load_predictions_tsv(p)?)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            let eval = evaluate_scored(scored, &args.group_by, !args.no_anchors);
            write_reports_csv(&eval.reports, &args.output)?;
            print!("{}", format_table(&eval.reports));
            if let Some(rate) = eval.ranking_violation_rate {
                println!("ranking violation rate {rate:.4}");
            }
        }
    }
    Ok(())
}

fn save_manifest(entries: Vec<inse_core::dataset::DatasetEntry>, dir: &Path) -> anyhow::Result<()> {
    let manifest = Manifest::new(entries)?;
    let path = dir.join("manifest.csv");
    manifest.save(&path)?;
    println!("{}\t{} entries", path.display(), manifest.len());
    Ok(())
}
