//! `dmcnet`: scan datasets, run seeded experiments, embed features and run
//! the verification suite.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmcnet_core::dataset::{scan_dataset, synthetic, ClassLabel, DatasetError, DatasetManifest};
use dmcnet_core::harness::{
    emit_report, reduce, render_table, repeat_experiments_with, write_reduction_csv,
    ExperimentConfig, FeatureCache, HarnessError, MethodId, Overrides, ReduceAlgo, ReduceConfig,
    Reduction, Summary,
};
use dmcnet_core::verify::run_suite;

use config::{merge_overrides, required, FileConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data.
    Invalid(String),
    Io(String),
    /// The verification suite ran and found failures.
    ChecksFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
            CliError::ChecksFailed(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        HarnessError::from(e).into()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dmcnet",
    version,
    about = "Engagement classification experiments"
)]
struct Cli {
    /// JSON file supplying any flag; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index a dataset directory into a manifest.
    Scan {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic PPM corpus in the dataset layout.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Images per class as `c0,c1,c2`.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeated seeded runs of one method.
    Run {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// All eight methods with their default repeat counts.
    RunAll {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// 2-D embedding of a balanced pool's pixels.
    Reduce {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle and gradient-check suite.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Also write embedding.csv with this algorithm (pca or tsne).
    #[arg(long)]
    embed: Option<String>,
    #[arg(long)]
    perplexity: Option<f64>,
}

#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    head_epochs: Option<usize>,
    #[arg(long)]
    head_lr: Option<f64>,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    svm_gamma: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    balance_count: Option<usize>,
    /// Network input channels: 1 (gray) or 3 (RGB).
    #[arg(long)]
    channels: Option<usize>,
    /// Network input side in pixels.
    #[arg(long)]
    side: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            epochs: a.epochs,
            batch: a.batch,
            lr: a.lr,
            head_epochs: a.head_epochs,
            head_lr: a.head_lr,
            svm_c: a.svm_c,
            svm_gamma: a.svm_gamma,
            svm_tol: a.svm_tol,
            train_fraction: a.train_fraction,
            balance_count: a.balance_count,
            channels: a.channels,
            side: a.side,
        }
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    Ok(DatasetManifest::load(path)?)
}

fn parse_method(s: &str) -> Result<MethodId, CliError> {
    Ok(s.parse::<MethodId>()?)
}

fn parse_algo(s: &str) -> Result<ReduceAlgo, CliError> {
    Ok(s.parse::<ReduceAlgo>()?)
}

fn embedding(
    manifest: &DatasetManifest,
    algo: Option<ReduceAlgo>,
    perplexity: f64,
    seed: u64,
) -> Result<Option<Reduction>, CliError> {
    let Some(algo) = algo else { return Ok(None) };
    Ok(Some(reduce(
        manifest,
        &ReduceConfig {
            algo,
            perplexity,
            seed,
            ..ReduceConfig::default()
        },
    )?))
}

fn report(
    summaries: &[Summary],
    out: &Path,
    reduction: Option<&Reduction>,
) -> Result<(), CliError> {
    let files = emit_report(summaries, out, reduction)?;
    print!("{}", render_table(summaries, 3));
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Scan { root, out } => {
            let root = required(root, file.root, "root")?;
            let out = required(out, file.out, "out")?;
            let manifest = scan_dataset(&root)?;
            manifest.save(&out)?;
            println!(
                "{} images (disengaged {}, partially engaged {}, engaged {}), {} skipped, checksum {}",
                manifest.len(),
                manifest.count(ClassLabel::Disengaged),
                manifest.count(ClassLabel::PartiallyEngaged),
                manifest.count(ClassLabel::Engaged),
                manifest.skipped,
                manifest.checksum
            );
        }
        Command::Synth {
            out,
            counts,
            side,
            seed,
        } => {
            let out = required(out, file.out, "out")?;
            let counts = match counts {
                Some(c) => c
                    .try_into()
                    .map_err(|_| CliError::Invalid("--counts takes three values".into()))?,
                None => file.counts.unwrap_or(synthetic::BUNDLED_COUNTS),
            };
            let side = side.or(file.side).unwrap_or(synthetic::BUNDLED_SIDE);
            let seed = seed.or(file.seed).unwrap_or(synthetic::BUNDLED_SEED);
            synthetic::write_corpus(&out, counts, side, seed)?;
            println!(
                "wrote {} images under {}",
                counts.iter().sum::<usize>(),
                out.display()
            );
        }
        Command::Run {
            manifest,
            method,
            repeats,
            seed,
            out,
            embed,
            overrides,
        } => {
            let manifest = load_manifest(&required(manifest, file.manifest, "manifest")?)?;
            let method = parse_method(&required(method, file.method, "method")?)?;
            let out = required(out, file.out, "out")?;
            let seed = seed.or(file.seed).unwrap_or(0);
            let cfg = ExperimentConfig {
                method,
                repeats: repeats.or(file.repeats).unwrap_or(method.default_repeats()),
                base_seed: seed,
                overrides: merge_overrides(overrides.into(), &file.overrides),
            };
            let algo = embed
                .embed
                .or(file.embed)
                .as_deref()
                .map(parse_algo)
                .transpose()?;
            let summary = repeat_experiments_with(&cfg, &manifest, &mut FeatureCache::default())?;
            let red = embedding(
                &manifest,
                algo,
                embed.perplexity.or(file.perplexity).unwrap_or(30.0),
                seed,
            )?;
            report(&[summary], &out, red.as_ref())?;
        }
        Command::RunAll {
            manifest,
            seed,
            out,
            embed,
            overrides,
        } => {
            let manifest = load_manifest(&required(manifest, file.manifest, "manifest")?)?;
            let out = required(out, file.out, "out")?;
            let seed = seed.or(file.seed).unwrap_or(0);
            let overrides = merge_overrides(overrides.into(), &file.overrides);
            let algo = embed
                .embed
                .or(file.embed)
                .as_deref()
                .map(parse_algo)
                .transpose()?;
            let mut cache = FeatureCache::default();
            let mut summaries = Vec::new();
            for method in MethodId::ALL {
                let cfg = ExperimentConfig {
                    overrides: overrides.clone(),
                    ..ExperimentConfig::new(method, seed)
                };
                summaries.push(repeat_experiments_with(&cfg, &manifest, &mut cache)?);
            }
            let red = embedding(
                &manifest,
                algo,
                embed.perplexity.or(file.perplexity).unwrap_or(30.0),
                seed,
            )?;
            report(&summaries, &out, red.as_ref())?;
        }
        Command::Reduce {
            manifest,
            algo,
            perplexity,
            iterations,
            seed,
            out,
        } => {
            let manifest = load_manifest(&required(manifest, file.manifest, "manifest")?)?;
            let out = required(out, file.out, "out")?;
            let defaults = ReduceConfig::default();
            let cfg = ReduceConfig {
                algo: parse_algo(&required(algo, file.algo, "algo")?)?,
                perplexity: perplexity
                    .or(file.perplexity)
                    .unwrap_or(defaults.perplexity),
                iterations: iterations
                    .or(file.iterations)
                    .unwrap_or(defaults.iterations),
                seed: seed.or(file.seed).unwrap_or(0),
                ..defaults
            };
            let red = reduce(&manifest, &cfg)?;
            write_reduction_csv(&out, &red)?;
            match (red.initial_kl, red.kl) {
                (Some(a), Some(b)) => println!("{} points, KL {a:.4} -> {b:.4}", red.points.len()),
                _ => println!("{} points", red.points.len()),
            }
        }
        Command::Verify { seed } => {
            let outcomes = run_suite(seed.or(file.seed).unwrap_or(0));
            let mut failed = 0;
            for o in &outcomes {
                println!(
                    "{} {} ({:.2}s): {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.seconds,
                    o.detail
                );
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<(), CliError> {
        run(Cli::try_parse_from(std::iter::once("dmcnet").chain(args.iter().copied())).unwrap())
    }

    fn corpus() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        synthetic::write_bundled(&data).unwrap();
        let manifest = dir.path().join("manifest.json");
        let (d, m) = (data.to_str().unwrap(), manifest.to_str().unwrap());
        run_args(&["scan", "--root", d, "--out", m]).unwrap();
        (dir, manifest)
    }

    #[test]
    fn unknown_method_is_a_validation_error() {
        let (_dir, manifest) = corpus();
        let err = run_args(&[
            "run",
            "--manifest",
            manifest.to_str().unwrap(),
            "--method",
            "vgg",
            "--out",
            "x",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let err = run_args(&[
            "run",
            "--manifest",
            "/nonexistent/m.json",
            "--method",
            "cnn",
            "--out",
            "x",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        let err =
            run_args(&["scan", "--root", "/nonexistent/root", "--out", "m.json"]).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        let err = run_args(&["--config", "/nonexistent/c.json", "verify"]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_required_value() {
        assert_eq!(
            run_args(&["scan", "--out", "m.json"])
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn config_file_supplies_flags_and_flags_win() {
        let (dir, manifest) = corpus();
        let out_file = dir.path().join("from_file");
        let cfg = dir.path().join("cfg.json");
        std::fs::write(
            &cfg,
            serde_json::json!({
                "manifest": manifest,
                "method": "hog_svm",
                "repeats": 2,
                "seed": 3,
                "out": out_file,
            })
            .to_string(),
        )
        .unwrap();
        run_args(&["--config", cfg.to_str().unwrap(), "run"]).unwrap();
        let report = std::fs::read_to_string(out_file.join("boxplot.csv")).unwrap();
        assert_eq!(report.lines().count(), 3);
        assert!(report.contains("hog_svm,1,4,"));

        let out_flag = dir.path().join("from_flag");
        run_args(&[
            "--config",
            cfg.to_str().unwrap(),
            "run",
            "--repeats",
            "1",
            "--out",
            out_flag.to_str().unwrap(),
        ])
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(out_flag.join("boxplot.csv"))
                .unwrap()
                .lines()
                .count(),
            2
        );
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"sede": 3}"#).unwrap();
        assert_eq!(
            run_args(&["--config", cfg.to_str().unwrap(), "verify"])
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn overrides_merge_field_wise() {
        let flags = Overrides {
            epochs: Some(3),
            ..Overrides::default()
        };
        let file = Overrides {
            epochs: Some(9),
            lr: Some(0.5),
            ..Overrides::default()
        };
        let m = merge_overrides(flags, &file);
        assert_eq!((m.epochs, m.lr), (Some(3), Some(0.5)));
    }

    #[test]
    fn reduce_writes_embedding() {
        let (dir, manifest) = corpus();
        let out = dir.path().join("emb.csv");
        run_args(&[
            "reduce",
            "--manifest",
            manifest.to_str().unwrap(),
            "--algo",
            "pca",
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("x,y,label\n"));
        assert_eq!(text.lines().count(), 19);
        let bad = run_args(&[
            "reduce",
            "--manifest",
            manifest.to_str().unwrap(),
            "--algo",
            "umap",
            "--out",
            "e.csv",
        ]);
        assert_eq!(bad.unwrap_err().exit_code(), 2);
    }

    #[test]
    fn synth_then_scan_counts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("s");
        run_args(&[
            "synth",
            "--out",
            root.to_str().unwrap(),
            "--counts",
            "3,4,5",
            "--side",
            "24",
        ])
        .unwrap();
        let m = scan_dataset(&root).unwrap();
        assert_eq!(ClassLabel::ALL.map(|c| m.count(c)), [3, 4, 5]);
        let two = run_args(&["synth", "--out", root.to_str().unwrap(), "--counts", "3,4"]);
        assert_eq!(two.unwrap_err().exit_code(), 2);
    }
}
