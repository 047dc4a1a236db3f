//! `xeval`: command-line front end for the cross-training explanation
//! metrics toolkit.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! error, 4 numeric failure (divergence, undefined metric, failed check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xeval::attribution::Method;
use xeval::datasets::{gen_shapes, load_idx, save_dataset};
use xeval::degradation::DegradationKind;
use xeval::distance::DistanceKind;
use xeval::pipeline::{
    self, build_ensemble, collect_reports, degrade_sweep, ensemble_dir, evaluate, explain_run,
    load_ensemble, load_explanations, prepare_data, save_ensemble, save_explanations, save_report,
    sweep_specs, write_reports, write_tables, RunConfig, MANIFEST_FILE,
};
use xeval::sanity::{default_sigmas, noise_base, sanity_noise, sanity_spatial, SanityReport};
use xeval::{Error, ErrorClass};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "xeval", version, about = "Cross-training metrics (ReCo, MeGe) for gradient explanations")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Output directory, overriding the config's `output_dir`.
    #[arg(short, long, env = "XEVAL_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> xeval::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the default run configuration as TOML.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the glyph dataset (or convert IDX files) into a dataset file.
    GenData {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Convert an IDX image file instead of generating glyphs.
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long, requires = "idx_images")]
        idx_labels: Option<PathBuf>,
        /// Maximum number of IDX samples to keep.
        #[arg(long, default_value_t = usize::MAX)]
        limit: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(short, long, env = "XEVAL_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Train the k leave-one-block-out models and write the ensemble manifest.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Abort when the fold accuracy spread exceeds the tolerance.
        #[arg(long)]
        strict: bool,
    },
    /// Explain every sample under every fold model into explanation archives.
    Explain {
        /// Ensemble manifest written by `train`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Run the spatial and noise sanity checks for every shipped distance.
    Sanity {
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, env = "XEVAL_OUTPUT_DIR", default_value = "xeval-out")]
        output_dir: PathBuf,
    },
    /// Build S= / S≠ from stored archives and write a metric report.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        distance: Option<DistanceKind>,
    },
    /// Repeat the metrics over the standard degradation grid.
    DegradeSweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated method codes (SM,GI,IG,SG,GC).
        #[arg(long, value_delimiter = ',', default_value = "SM")]
        methods: Vec<Method>,
        /// Comma-separated degradation kinds.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "randomize_weights,invert_labels,limit_data"
        )]
        kinds: Vec<DegradationKind>,
    },
    /// Merge metric reports into CSV tables and histogram data.
    Report {
        /// Directory holding metric report JSON files.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, explain and evaluate in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("reports")
}

fn dispatch(command: Command) -> xeval::Result<u8> {
    match command {
        Command::InitConfig { out } => {
            let text = RunConfig::default().to_toml()?;
            match out {
                Some(path) => {
                    RunConfig::default().save(&path)?;
                    println!("{}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::GenData {
            n,
            size,
            classes,
            seed,
            idx_images,
            idx_labels,
            limit,
            out,
            output_dir,
        } => {
            let (data, provenance) = match (idx_images, idx_labels) {
                (Some(images), Some(labels)) => {
                    let data = load_idx(&images, &labels, limit)?;
                    let prov = serde_json::json!({
                        "source": "idx",
                        "images": images,
                        "labels": labels,
                        "limit": limit,
                    });
                    (data, prov)
                }
                _ => {
                    let data = gen_shapes(n, size, classes, seed)?;
                    let prov = serde_json::json!({
                        "source": "shapes", "n": n, "size": size, "classes": classes, "seed": seed,
                    });
                    (data, prov)
                }
            };
            let path = out.unwrap_or_else(|| {
                output_dir
                    .unwrap_or_else(|| PathBuf::from("xeval-out"))
                    .join("dataset.xds")
            });
            save_dataset(&data, provenance, &path)?;
            println!("{}", path.display());
        }
        Command::Train { config, strict } => {
            let mut cfg = config.load()?;
            cfg.ensemble.strict |= strict;
            let prepared = prepare_data(&cfg)?;
            let run = build_ensemble(&cfg, &prepared)?;
            let manifest = save_ensemble(&cfg, &run, &ensemble_dir(&cfg))?;
            for (i, acc) in run.ensemble.accuracies.iter().enumerate() {
                eprintln!("fold {i}: test accuracy {acc:.4}");
            }
            eprintln!("accuracy spread {:.4}", run.ensemble.spread);
            println!("{}", manifest.display());
        }
        Command::Explain { manifest, method } => {
            let (m, run) = load_ensemble(&manifest)?;
            let cfg = m.config;
            let method = method.unwrap_or(cfg.method);
            let table = explain_run(&cfg, &run, method)?;
            for path in save_explanations(&cfg, &table)? {
                println!("{}", path.display());
            }
        }
        Command::Sanity {
            size,
            steps,
            repeats,
            seed,
            output_dir,
        } => return sanity(size, steps, repeats, seed, &output_dir),
        Command::Metrics {
            manifest,
            method,
            distance,
        } => {
            let (m, run) = load_ensemble(&manifest)?;
            let cfg = RunConfig {
                method: method.unwrap_or(m.config.method),
                distance: distance.unwrap_or(m.config.distance),
                ..m.config
            };
            let table = load_explanations(&cfg, cfg.method, run.ensemble.k)?;
            let report = evaluate(&cfg, &run, &table, cfg.distance)?;
            println!("{}", save_report(&report, &reports_dir(&cfg))?.display());
        }
        Command::DegradeSweep {
            config,
            methods,
            kinds,
        } => {
            let cfg = config.load()?;
            let (seed, sigma) = cfg
                .degradation
                .as_ref()
                .map_or((cfg.training.seed, 0.5), |d| (d.seed, d.noise_sigma));
            let specs = sweep_specs(&kinds, seed, sigma);
            let reports = degrade_sweep(&cfg, &methods, &specs)?;
            let dir = reports_dir(&cfg);
            write_reports(&reports, &dir)?;
            let (table, hist) = write_tables(&reports, &cfg.output_dir.join("tables"))?;
            println!("{}\n{}", table.display(), hist.display());
        }
        Command::Report { reports, out } => {
            let all = collect_reports(&reports)?;
            if all.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no metric reports (*.json) found in {}",
                    reports.display()
                )));
            }
            let out = out.unwrap_or_else(|| reports.join("tables"));
            let (table, hist) = write_tables(&all, &out)?;
            println!("{}\n{}", table.display(), hist.display());
        }
        Command::Run { config } => {
            let cfg = config.load()?;
            cfg.save(&cfg.output_dir.join("config.toml"))?;
            let report = pipeline::run_to_disk(&cfg)?;
            eprintln!("ensemble manifest {}", ensemble_dir(&cfg).join(MANIFEST_FILE).display());
            println!("{}", report.display());
        }
    }
    Ok(0)
}

fn write_sanity(report: &SanityReport, dir: &Path) -> xeval::Result<()> {
    let stem = format!("{}-{}", report.test, report.distance);
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let json = serde_json::to_string_pretty(report)? + "\n";
    for (name, text) in [(format!("{stem}.json"), json), (format!("{stem}.csv"), report.to_csv())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn sanity(size: usize, steps: usize, repeats: usize, seed: u64, output_dir: &Path) -> xeval::Result<u8> {
    let dir = output_dir.join("sanity");
    let base = noise_base(size);
    let mut all_passed = true;
    println!("{:<8} {:<14} {:>8} {:>10} result", "test", "distance", "rho", "monotone");
    for kind in DistanceKind::SHIPPED {
        let reports = [
            sanity_spatial(kind, size, steps)?,
            sanity_noise(kind, &base, &default_sigmas(), repeats, seed)?,
        ];
        for r in &reports {
            write_sanity(r, &dir)?;
            all_passed &= r.passed;
            println!(
                "{:<8} {:<14} {:>8.4} {:>10.3} {}",
                r.test,
                r.distance,
                r.spearman_vs_index,
                r.monotone_fraction,
                if r.passed { "pass" } else { "FAIL" }
            );
        }
    }
    Ok(if all_passed { 0 } else { EXIT_NUMERIC })
}
