use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biosynth::experiments::{self, ExperimentConfig};
use biosynth::io;
use biosynth::matcher::{self, FeatureSubset, ImpostorPolicy, Metric, SessionPolicy};
use biosynth::reliability::{classify_reliability, icc_two_sessions};
use biosynth::rng::RngStream;
use biosynth::synthgen::{assemble_banded_db, BandSpec, SyntheticDatabase, DEFAULT_MAX_ATTEMPTS_PER_FEATURE};
use biosynth::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "biosynth", version, about = "Synthetic biometric databases with controlled ICC")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a banded database and its sidecar.
    Generate(GenerateArgs),
    /// Per-feature ICC table with reliability labels.
    Icc {
        db: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a feature subset and report its EER.
    Evaluate(EvaluateArgs),
    /// Feature intercorrelation summary and |r| histogram.
    Intercorr {
        db: PathBuf,
        #[arg(long, default_value = "session1")]
        policy: String,
        /// Histogram CSV destination (summary JSON goes next to it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment from a TOML config or a named preset.
    Experiment(ExperimentArgs),
    /// Recompute ICCs and bands and cross-check the sidecar.
    Verify { db: PathBuf },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    band1: usize,
    #[arg(long, default_value_t = 0)]
    band2: usize,
    #[arg(long, default_value_t = 0)]
    band3: usize,
    #[arg(long, default_value_t = 0)]
    band4: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS_PER_FEATURE)]
    max_attempts: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    db: PathBuf,
    /// Comma-separated feature names (f0001,...) or 1-based numbers.
    #[arg(long, value_delimiter = ',', conflicts_with = "count")]
    features: Vec<String>,
    /// Evaluate a random subset of this many features.
    #[arg(long)]
    count: Option<usize>,
    /// Seed for the random subset and sampled impostor pairs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    /// `exhaustive`, `sampled:<count>` or `auto`.
    #[arg(long, default_value = "auto")]
    impostors: String,
    /// Table CSV destination (JSON goes next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// fig1, fig2, fig4, fig5, fig6_7, fig8 or fig8_full.
    #[arg(long, requires = "seed")]
    preset: Option<String>,
    /// Seed for a preset.
    #[arg(long)]
    seed: Option<u64>,
    /// Result CSV (JSON with provenance goes next to it).
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Generate(a) => generate(a)?,
        Command::Icc { db, out } => icc(&db, out.as_deref())?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Intercorr { db, policy, out } => intercorr(&db, &policy, out.as_deref())?,
        Command::Experiment(a) => experiment(a)?,
        Command::Verify { db } => return verify(&db),
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let quotas = [a.band1, a.band2, a.band3, a.band4];
    if quotas.iter().all(|&q| q == 0) {
        return Err(Failure::Usage("give at least one --bandN quota".into()));
    }
    let specs: Vec<BandSpec> = BandSpec::defaults(quotas).into_iter().filter(|s| s.quota > 0).collect();
    let db = assemble_banded_db(a.subjects, &specs, a.seed, a.max_attempts)?;
    io::write_db(&db, &a.out)?;
    eprintln!(
        "wrote {} subjects x {} features to {}",
        db.n_subjects,
        db.n_features(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct IccRow {
    feature: String,
    icc: f64,
    raw_icc: f64,
    label: String,
    mult: Option<f64>,
}

fn icc(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let db = io::read_db(path)?;
    let rows = db
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let est = icc_two_sessions(&f.session1, &f.session2)?;
            Ok(IccRow {
                feature: io::feature_name(i),
                icc: est.icc,
                raw_icc: est.raw_icc,
                label: classify_reliability(est.icc)?.to_string(),
                mult: f.mult.is_finite().then_some(f.mult),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_table(out, &rows)
}

fn write_table<T: Serialize>(out: Option<&Path>, rows: &[T]) -> Result<(), Failure> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => Box::new(std::io::stdout().lock()),
    };
    let name = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let fail = |e: csv::Error| Error::Format {
        path: name.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: name.clone(),
        source: e,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    std::fs::write(path, text).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn parse_metric(s: &str) -> Result<Metric, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn parse_impostors(s: &str, n: usize, seed: u64) -> Result<ImpostorPolicy, Failure> {
    match s {
        "auto" => Ok(ImpostorPolicy::default_for(n, seed)),
        "exhaustive" => Ok(ImpostorPolicy::Exhaustive),
        _ => s
            .strip_prefix("sampled:")
            .and_then(|c| c.parse().ok())
            .map(|count| ImpostorPolicy::Sampled { count, seed })
            .ok_or_else(|| Failure::Usage(format!("bad --impostors {s:?}; use exhaustive, sampled:<count> or auto"))),
    }
}

fn parse_feature(s: &str, m: usize) -> Result<usize, Failure> {
    let digits = s.strip_prefix('f').unwrap_or(s);
    match digits.parse::<usize>() {
        Ok(k) if (1..=m).contains(&k) => Ok(k - 1),
        _ => Err(Failure::Usage(format!("unknown feature {s:?} (database has {m})"))),
    }
}

#[derive(Serialize)]
struct EvaluateOutput {
    features: Vec<String>,
    metric: Metric,
    n_genuine: usize,
    n_impostor: usize,
    #[serde(flatten)]
    result: matcher::EvalResult,
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let metric = parse_metric(&a.metric)?;
    let db: SyntheticDatabase = io::read_db(&a.db)?;
    let m = db.n_features();
    let subset = match a.count {
        Some(c) => FeatureSubset::random(m, c, RngStream::new(a.seed, 0))?,
        None if a.features.is_empty() => FeatureSubset::all(m)?,
        None => FeatureSubset::new(
            a.features.iter().map(|f| parse_feature(f, m)).collect::<Result<_, _>>()?,
            m,
        )?,
    };
    let policy = parse_impostors(&a.impostors, db.n_subjects, a.seed)?;
    let scores = matcher::score_database(&db, &subset, metric, &policy)?;
    let output = EvaluateOutput {
        features: subset.indices().iter().map(|&i| io::feature_name(i)).collect(),
        metric,
        n_genuine: scores.genuine.len(),
        n_impostor: scores.impostor.len(),
        result: matcher::eer(&scores)?,
    };
    println!("{}", serde_json::to_string_pretty(&output).expect("serialisable"));
    if let Some(out) = a.out {
        write_table(Some(&out), &[&output.result])?;
        write_json(&out.with_extension("json"), &output)?;
    }
    Ok(())
}

fn intercorr(path: &Path, policy: &str, out: Option<&Path>) -> Result<(), Failure> {
    let policy = match policy {
        "session1" => SessionPolicy::Session1,
        "pooled" => SessionPolicy::Pooled,
        other => return Err(Failure::Usage(format!("bad --policy {other:?}; use session1 or pooled"))),
    };
    let db = io::read_db(path)?;
    let summary = matcher::intercorr_summary(&db, policy)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "median_abs_r": summary.median_abs_r,
            "p95_abs_r": summary.p95_abs_r,
            "n_pairs": summary.n_pairs,
        }))
        .expect("serialisable")
    );
    if let Some(out) = out {
        write_table(Some(out), &summary.histogram)?;
        write_json(&out.with_extension("json"), &summary)?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let config = match (&a.config, &a.preset) {
        (Some(path), None) => io::load_config(path)?,
        (None, Some(name)) => {
            let seed = a.seed.expect("clap enforces --seed with --preset");
            ExperimentConfig::preset(name, seed).map_err(|e| Failure::Usage(e.to_string()))?
        }
        _ => unreachable!("clap enforces exactly one of config and --preset"),
    };
    let result = experiments::run(&config)?;
    io::write_result(&result, &a.out)?;
    eprintln!("wrote {} rows to {}", result.rows.len(), a.out.display());
    for (k, v) in &result.summary {
        println!("{k} = {v}");
    }
    Ok(())
}

fn verify(path: &Path) -> Result<ExitCode, Failure> {
    let report = io::verify_db(path)?;
    if report.ok() {
        println!(
            "ok: {} subjects x {} features match the sidecar",
            report.n_subjects, report.n_features
        );
        return Ok(ExitCode::SUCCESS);
    }
    for m in &report.mismatches {
        eprintln!(
            "mismatch: {} {}: sidecar {}, recomputed {}",
            m.feature, m.field, m.stored, m.recomputed
        );
    }
    Ok(ExitCode::from(2))
}
