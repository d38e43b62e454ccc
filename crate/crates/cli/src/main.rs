//! `dpmood` command-line tool.
//!
//! Exit codes: 0 on success, 1 when arguments, config or inputs fail
//! validation, 2 when the work itself fails.

mod output;
mod overrides;

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dpmood::analysis::{dayofweek_stats, hourly_stats, pairwise_grid, usage_histogram, write_bucket_csv, write_histogram_csv, Feature};
use dpmood::config::Config;
use dpmood::datamodel::{load_dir, Dataset};
use dpmood::modelzoo::{gradient_suite, model_grad_check, GradSuiteEntry, Model, Variant};
use dpmood::synthgen::{generate_dataset, parse_truth, recovery_report, write_truth, GenConfig, TRUTH_FILE};
use dpmood::trainer::{
    evaluate_labeled, labeled_sessions, ratio_sweep, split_dataset, train, write_sweep_csv, RunSummary, TrainConfig,
    SWEEP_FRACTIONS,
};
use log::{info, warn};

use output::{write_atomic, write_atomic_bytes, RunManifest};
use overrides::{resolve, GenFlags, TrainFlags};

/// Gradient checks pass at or below this relative error.
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "dpmood", version, about = "Mood-score regression from typing sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Where to write the run manifest. Defaults next to the main output,
    /// or stderr for commands without one.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted calibration.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: GenFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Train one variant and save its checkpoint.
    Train {
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long, default_value = "dpMood-dropna")]
        variant: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// RMSE of a checkpoint over the whole dataset and its train/test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain once per train fraction and report test RMSE.
    Sweep {
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long, default_value = "dpMood-dropna")]
        variant: String,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_FRACTIONS.to_vec())]
        fractions: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Hourly, weekday, usage and pairwise t-test tables.
    Analyze {
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        /// Features to tabulate; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        feature: Vec<String>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and numeric gradients.
    Gradcheck {
        /// Check one whole model; without it the layer checks and both
        /// dpMood variants run.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare learned calibrations with planted ones.
    Recover {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Per-subject CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    /// Bad input: exit 1.
    fn invalid(self) -> Outcome<T>;
    /// Failure while doing the work: exit 2, except for library errors that
    /// still describe bad input.
    fn runtime(self) -> Outcome<T>;
}

fn input_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<dpmood::Error>(),
        Some(
            dpmood::Error::Config(_)
                | dpmood::Error::UnknownVariant(_)
                | dpmood::Error::UnknownFeature(_)
                | dpmood::Error::MissingColumn(_)
                | dpmood::Error::Checkpoint(_)
        )
    )
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| {
            let error = e.into();
            let code = if input_error(&error) { 1 } else { 2 };
            Failure { code, error }
        })
    }
}

fn bad<T>(msg: String) -> Outcome<T> {
    Err(Failure { code: 1, error: anyhow!(msg) })
}

fn require_file(flag: &str, p: &Path) -> Outcome<()> {
    if !p.is_file() {
        return bad(format!("--{flag}: {} is not a file", p.display()));
    }
    Ok(())
}

fn require_dir(flag: &str, p: &Path) -> Outcome<()> {
    if !p.is_dir() {
        return bad(format!("--{flag}: {} is not a directory", p.display()));
    }
    Ok(())
}

/// Canonical form of a path that may not exist yet: its nearest existing
/// ancestor, canonicalized, with the rest appended.
fn absolute(p: &Path) -> PathBuf {
    let mut missing = Vec::new();
    let mut cur = if p.is_absolute() { p.to_path_buf() } else { Path::new(".").join(p) };
    loop {
        if let Ok(c) = cur.canonicalize() {
            return missing.into_iter().rev().fold(c, |acc, part| acc.join(part));
        }
        match (cur.file_name(), cur.parent()) {
            (Some(name), Some(parent)) => {
                missing.push(name.to_os_string());
                cur = parent.to_path_buf();
            }
            _ => return p.to_path_buf(),
        }
    }
}

/// Inputs are read-only: refuse outputs inside the data directory.
fn outside_data(flag: &str, out: &Path, data_dir: &Path) -> Outcome<()> {
    if absolute(out).starts_with(absolute(data_dir)) {
        return bad(format!("--{flag}: {} is inside the data directory {}", out.display(), data_dir.display()));
    }
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_data(dir: &Path) -> Outcome<Dataset> {
    require_dir("data-dir", dir)?;
    let (ds, report) = load_dir(dir).with_context(|| format!("--data-dir {}", dir.display())).runtime()?;
    if report.malformed_rows() > 0 {
        warn!(
            "skipped malformed rows: {} keypress, {} accel, {} label",
            report.malformed_keypress_rows, report.malformed_accel_rows, report.malformed_label_rows
        );
    }
    if report.dropped_without_accel > 0 {
        warn!("dropped {} session(s) without accelerometer rows", report.dropped_without_accel);
    }
    info!("loaded {} sessions and {} ratings", ds.sessions.len(), ds.labels.len());
    Ok(ds)
}

fn train_config(config: Option<&Path>, flags: &TrainFlags, manifest: &mut RunManifest) -> Outcome<TrainConfig> {
    if let Some(p) = config {
        require_file("config", p)?;
    }
    let cfg = resolve(config, &flags.pairs(), &TrainConfig::KEYS).invalid()?;
    let mut tc = TrainConfig::default();
    tc.apply(&cfg).invalid()?;
    manifest.config_path = config.map(Path::to_path_buf);
    manifest.params = tc.to_config();
    manifest.seed = Some(tc.seed);
    Ok(tc)
}

fn parse_variant(s: &str) -> Outcome<Variant> {
    s.parse::<Variant>()
        .map_err(|e| anyhow!("--variant: {e}; expected one of {}", variant_list()))
        .invalid()
}

fn variant_list() -> String {
    Variant::ALL.iter().map(|v| v.tag()).collect::<Vec<_>>().join(", ")
}

fn add_param(manifest: &mut RunManifest, key: &str, value: impl ToString) {
    manifest.params.set(key, value.to_string()).expect("static key");
}

/// Run one command. `manifest_at` receives the path the manifest should be
/// written to, once known.
fn run(command: Command, manifest: &mut RunManifest, manifest_at: &mut Option<PathBuf>) -> Outcome<()> {
    match command {
        Command::Generate { config, out_dir, flags, common } => {
            *manifest_at = Some(common.manifest.unwrap_or_else(|| out_dir.join("manifest.txt")));
            if let Some(p) = &config {
                require_file("config", p)?;
            }
            let cfg = resolve(config.as_deref(), &flags.pairs(), &GenConfig::KEYS).invalid()?;
            let mut gc = GenConfig::default();
            gc.apply(&cfg).invalid()?;
            gc.validate().invalid()?;
            manifest.config_path = config;
            manifest.params = gc.to_config();
            manifest.seed = Some(gc.seed);

            let (ds, truth) = generate_dataset(&gc).runtime()?;
            use dpmood::datamodel::{write_accel, write_keypresses, write_labels, ACCEL_FILE, KEYPRESS_FILE, LABEL_FILE};
            let files: [(&str, &dyn Fn(&mut dyn Write) -> dpmood::Result<()>); 4] = [
                (KEYPRESS_FILE, &|w| write_keypresses(w, &ds.sessions)),
                (ACCEL_FILE, &|w| write_accel(w, &ds.sessions)),
                (LABEL_FILE, &|w| write_labels(w, &ds.labels)),
                (TRUTH_FILE, &|w| write_truth(w, &truth)),
            ];
            for (name, fill) in files {
                let path = out_dir.join(name);
                write_atomic(&path, |w| Ok(fill(w)?)).runtime()?;
                manifest.artifacts.push(path);
            }
            println!("generated {} sessions for {} subjects in {}", ds.sessions.len(), gc.n_subjects(), out_dir.display());
            Ok(())
        }

        Command::Train { data_dir, variant, config, out, flags, common } => {
            let at = common.manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.txt"));
            outside_data("out", &out, &data_dir)?;
            outside_data("manifest", &at, &data_dir)?;
            *manifest_at = Some(at);
            let variant = parse_variant(&variant)?;
            let tc = train_config(config.as_deref(), &flags, manifest)?;
            add_param(manifest, "variant", variant);
            add_param(manifest, "data_dir", data_dir.display());
            let ds = load_data(&data_dir)?;
            let split = split_dataset(&ds, &tc).runtime()?;
            info!("{} train and {} test sessions", split.train.len(), split.test.len());
            let (model, history) = train(variant, &split.train, &split.test, &tc).runtime()?;

            write_atomic_bytes(&out, &model.to_bytes()).runtime()?;
            manifest.artifacts.push(out.clone());
            let metrics = sibling(&out, "metrics.csv");
            write_atomic(&metrics, |w| Ok(history.write_csv(w, tc.record_time)?)).runtime()?;
            manifest.artifacts.push(metrics);
            let summary = RunSummary::new(variant, &tc, &history);
            let results = sibling(&out, "results.txt");
            write_atomic(&results, |w| Ok(write!(w, "{summary}")?)).runtime()?;
            manifest.artifacts.push(results);
            if history.rejected_updates > 0 {
                warn!("{} update(s) skipped for non-finite gradients", history.rejected_updates);
            }
            print!("{summary}");
            Ok(())
        }

        Command::Eval { model, data_dir, config, flags, common } => {
            if let Some(at) = &common.manifest {
                outside_data("manifest", at, &data_dir)?;
            }
            *manifest_at = common.manifest;
            require_file("model", &model)?;
            let tc = train_config(config.as_deref(), &flags, manifest)?;
            add_param(manifest, "model", model.display());
            add_param(manifest, "data_dir", data_dir.display());
            let net = Model::load(&model).with_context(|| format!("--model {}", model.display())).runtime()?;
            let ds = load_data(&data_dir)?;
            let all = labeled_sessions(&ds, &tc);
            let split = split_dataset(&ds, &tc).runtime()?;
            let rmse = |s: &[dpmood::datamodel::LabeledSession]| -> Outcome<String> {
                if s.is_empty() {
                    return Ok("none".into());
                }
                Ok(evaluate_labeled(&net, s).runtime()?.to_string())
            };
            let mut report = Config::new();
            let rows = [
                ("variant", net.variant.to_string()),
                ("target", tc.target.to_string()),
                ("cohort", tc.cohort.to_string()),
                ("sessions", all.len().to_string()),
                ("rmse", rmse(&all)?),
                ("train_sessions", split.train.len().to_string()),
                ("train_rmse", rmse(&split.train)?),
                ("test_sessions", split.test.len().to_string()),
                ("test_rmse", rmse(&split.test)?),
            ];
            for (k, v) in rows {
                report.set(k, v).expect("static key");
            }
            print!("{report}");
            Ok(())
        }

        Command::Sweep { data_dir, variant, fractions, config, out, flags, common } => {
            let at = common.manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.txt"));
            outside_data("out", &out, &data_dir)?;
            outside_data("manifest", &at, &data_dir)?;
            *manifest_at = Some(at);
            let variant = parse_variant(&variant)?;
            let tc = train_config(config.as_deref(), &flags, manifest)?;
            add_param(manifest, "variant", variant);
            add_param(manifest, "data_dir", data_dir.display());
            let shown: Vec<String> = fractions.iter().map(f64::to_string).collect();
            add_param(manifest, "fractions", shown.join(","));
            if fractions.is_empty() {
                return bad("--fractions: need at least one value".into());
            }
            if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
                return bad(format!("--fractions: {f} is not in (0, 1)"));
            }
            let ds = load_data(&data_dir)?;
            let sessions = labeled_sessions(&ds, &tc);
            let rows = ratio_sweep(variant, &sessions, &fractions, &tc).runtime()?;
            write_atomic(&out, |w| Ok(write_sweep_csv(w, &rows)?)).runtime()?;
            manifest.artifacts.push(out);
            write_sweep_csv(io::stdout().lock(), &rows).runtime()?;
            Ok(())
        }

        Command::Analyze { data_dir, feature, out_dir, common } => {
            let at = common.manifest.unwrap_or_else(|| out_dir.join("manifest.txt"));
            outside_data("out-dir", &out_dir, &data_dir)?;
            outside_data("manifest", &at, &data_dir)?;
            *manifest_at = Some(at);
            let features: Vec<Feature> = if feature.is_empty() {
                Feature::ALL.to_vec()
            } else {
                feature
                    .iter()
                    .map(|f| f.parse::<Feature>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| anyhow!("--feature: {e}"))
                    .invalid()?
            };
            let shown: Vec<&str> = features.iter().map(|f| f.as_str()).collect();
            add_param(manifest, "feature", shown.join(","));
            add_param(manifest, "data_dir", data_dir.display());
            let ds = load_data(&data_dir)?;

            let mut put = |name: String, fill: &dyn Fn(&mut dyn Write) -> dpmood::Result<()>| -> Outcome<()> {
                let path = out_dir.join(name);
                write_atomic(&path, |w| Ok(fill(w)?)).runtime()?;
                manifest.artifacts.push(path);
                Ok(())
            };
            let h = usage_histogram(&ds);
            put("histogram.csv".into(), &|w| write_histogram_csv(w, &h))?;
            for f in features {
                let hourly = hourly_stats(&ds, f);
                put(format!("hourly_{f}.csv"), &|w| write_bucket_csv(w, "hour", &hourly))?;
                let daily = dayofweek_stats(&ds, f);
                put(format!("dayofweek_{f}.csv"), &|w| write_bucket_csv(w, "weekday", &daily))?;
                let grid = pairwise_grid(&ds, f).runtime()?;
                put(format!("ttest_{f}.csv"), &|w| grid.write_csv(w))?;
            }
            println!("wrote {} file(s) to {}", manifest.artifacts.len(), out_dir.display());
            Ok(())
        }

        Command::Gradcheck { variant, seed, common } => {
            *manifest_at = common.manifest;
            manifest.seed = Some(seed);
            add_param(manifest, "tolerance", GRAD_TOL);
            let entries: Vec<GradSuiteEntry> = match variant {
                Some(v) => {
                    let v = parse_variant(&v)?;
                    add_param(manifest, "variant", v);
                    let report = model_grad_check(v, seed).runtime()?;
                    vec![GradSuiteEntry { name: v.tag().to_string(), report }]
                }
                None => {
                    add_param(manifest, "variant", "all");
                    gradient_suite(seed).runtime()?
                }
            };
            let mut failed = Vec::new();
            for e in &entries {
                let ok = e.report.passes(GRAD_TOL);
                println!(
                    "{:<24} max_rel_err = {:.3e}  checked = {}  {}",
                    e.name,
                    e.report.max_rel_err,
                    e.report.checked,
                    if ok { "PASS" } else { "FAIL" }
                );
                if !ok {
                    failed.push(e.name.clone());
                }
            }
            let worst = entries.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max);
            println!("max_rel_err = {worst:.3e} (threshold {GRAD_TOL:e})");
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure { code: 2, error: anyhow!("gradient check failed for {}", failed.join(", ")) })
            }
        }

        Command::Recover { model, truth, out, common } => {
            *manifest_at = common.manifest.or_else(|| out.as_ref().map(|o| with_suffix(o, ".manifest.txt")));
            require_file("model", &model)?;
            require_file("truth", &truth)?;
            add_param(manifest, "model", model.display());
            add_param(manifest, "truth", truth.display());
            let net = Model::load(&model).with_context(|| format!("--model {}", model.display())).runtime()?;
            let file = File::open(&truth).with_context(|| format!("--truth {}", truth.display())).invalid()?;
            let rows = parse_truth(BufReader::new(file)).with_context(|| format!("--truth {}", truth.display())).invalid()?;
            let learned = net.calibration.learned(&net.store);
            let report = recovery_report(&learned, &rows);
            if report.subjects.is_empty() {
                warn!("no subject is shared by the checkpoint and the truth file");
            }
            match &out {
                Some(path) => {
                    write_atomic(path, |w| Ok(report.write_csv(w)?)).runtime()?;
                    manifest.artifacts.push(path.clone());
                }
                None => report.write_csv(io::stdout().lock()).runtime()?,
            }
            let (bp, bn) = report.sign_agreements_where(|d| d.is_bipolar());
            let (cp, cn) = report.sign_agreements_where(|d| !d.is_bipolar());
            eprintln!(
                "sign of delta agrees for {}/{} subjects ({bp}/{bn} bipolar, {cp}/{cn} control)",
                report.sign_agreements(),
                report.subjects.len()
            );
            for id in &report.missing_learned {
                warn!("{id}: in the truth file but has no learned calibration");
            }
            Ok(())
        }
    }
}

fn init_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var("DPMOOD_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return bad(format!("DPMOOD_THREADS: expected a positive integer, got `{raw}`")),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Sweep { .. } => "sweep",
        Command::Analyze { .. } => "analyze",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Recover { .. } => "recover",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut manifest = RunManifest::new(command_name(&cli.command), argv);
    let mut manifest_at = None;
    let result = init_threads().and_then(|_| run(cli.command, &mut manifest, &mut manifest_at));
    let (code, error) = match &result {
        Ok(()) => (0u8, None),
        Err(f) => (f.code, Some(format!("{:#}", f.error))),
    };
    if let Some(msg) = &error {
        eprintln!("error: {msg}");
    }
    let text = manifest.render(code as i32, error.as_deref());
    let written = match &manifest_at {
        Some(path) => {
            let r = write_atomic_bytes(path, text.as_bytes());
            if let Err(e) = &r {
                eprintln!("could not write manifest {}: {e:#}", path.display());
            }
            r.is_ok()
        }
        None => false,
    };
    if !written {
        eprint!("{text}");
    }
    ExitCode::from(code)
}
