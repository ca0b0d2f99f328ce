use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitprint::classifier::ModelKind;
use gaitprint::evaluation::{accuracy_svg, write_accuracy_table};
use gaitprint::fingerprint::{fingerprint_image, read_features_bin, SecondFeature};
use gaitprint::ingest::write_recording;
use gaitprint::partition::{Minutes, Paradigm};
use gaitprint::pipeline::{read_report, run, DetectorChoice, PipelineConfig, Stage, Variant, LABELS_FILE};
use gaitprint::synth::{synthesize_corpus, write_labels, CorpusConfig, ParamRanges, Schedule};
use gaitprint::{Error, Result};

#[derive(Parser)]
#[command(name = "gaitprint", version, about = "Walking fingerprints from wrist accelerometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus: one recording CSV per person plus labels.csv.
    Simulate(SimulateArgs),
    /// Parse recordings and apply the wear mask.
    Ingest(PipelineArgs),
    /// Detect steps and assemble walking bouts.
    Segment(PipelineArgs),
    /// Compute grid-cell predictors for valid seconds.
    Fingerprint(PipelineArgs),
    /// Split participants into train and test seconds and subgroups.
    Partition(PipelineArgs),
    /// Fit one-vs-rest models per subgroup.
    Train(PipelineArgs),
    /// Score test subjects and compute rank metrics.
    Evaluate(PipelineArgs),
    /// Run every stage and write the report.
    Run(PipelineArgs),
    /// Fingerprint heatmaps and accuracy-versus-n plots.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    bouts_per_day: Option<usize>,
    #[arg(long)]
    bout_seconds: Option<usize>,
    #[arg(long)]
    rest_seconds: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    drift_frequency: Option<f64>,
    #[arg(long)]
    drift_amplitude: Option<f64>,
}

/// Flags mirror the configuration file keys and override them.
#[derive(Args)]
struct PipelineArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// random or temporal
    #[arg(long)]
    paradigm: Option<Paradigm>,
    /// 3 or 6
    #[arg(long)]
    minutes: Option<u32>,
    #[arg(long)]
    subgroup_size: Option<usize>,
    /// none, weighted, two-stage or oversample:<p>
    #[arg(long)]
    variant: Option<Variant>,
    /// logistic or lasso
    #[arg(long)]
    model: Option<String>,
    /// template or oracle
    #[arg(long)]
    detector: Option<String>,
    /// Step labels for the oracle detector.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    grid_width: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    /// Comma-separated lags in samples.
    #[arg(long, value_delimiter = ',')]
    lags: Option<Vec<usize>>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Report JSON; writes accuracy.csv and accuracy.svg.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Feature cache (features.bin) for fingerprint heatmaps.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Participants to draw; all when omitted.
    #[arg(long, value_delimiter = ',')]
    participant: Vec<String>,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    cell_px: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut ranges = ParamRanges::default();
    let mut schedule = Schedule::default();
    if let Some(v) = a.sigma {
        ranges.sigma = v;
    }
    if let Some(v) = a.drift_frequency {
        ranges.drift_frequency = v;
    }
    if let Some(v) = a.drift_amplitude {
        ranges.drift_amplitude = v;
    }
    if let Some(v) = a.days {
        schedule.days = v;
    }
    if let Some(v) = a.bouts_per_day {
        schedule.bouts_per_day = v;
    }
    if let Some(v) = a.bout_seconds {
        schedule.bout_seconds = v;
    }
    if let Some(v) = a.rest_seconds {
        schedule.rest_seconds = v;
    }
    let corpus = synthesize_corpus(&CorpusConfig {
        persons: a.n,
        seed: a.seed,
        ranges,
        schedule,
    })?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (p, rec) in &corpus {
        let path = a.out.join(format!("{}.csv", p.participant_id));
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_recording(&rec.recording, f)?;
    }
    let path = a.out.join(LABELS_FILE);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_labels(&corpus.iter().map(|(_, r)| r).collect::<Vec<_>>(), f)?;
    log::info!("wrote {} recordings to {}", corpus.len(), a.out.display());
    Ok(())
}

fn config(a: &PipelineArgs, stage: Stage) -> Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    if stage != Stage::Report || a.config.is_none() {
        c.stages = vec![stage];
    }
    if let Some(v) = &a.input {
        c.input = v.clone();
    }
    if let Some(v) = &a.output {
        c.output = v.clone();
    }
    if let Some(v) = &a.cache_dir {
        c.cache_dir = Some(v.clone());
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.paradigm {
        c.paradigm = v;
    }
    if let Some(v) = a.minutes {
        c.minutes = Minutes::try_from(v)?;
    }
    if let Some(v) = a.subgroup_size {
        c.subgroup_size = Some(v);
    }
    if let Some(v) = a.variant {
        c.variant = v;
    }
    if let Some(v) = &a.model {
        c.model.kind = match v.as_str() {
            "logistic" => ModelKind::Logistic,
            "lasso" => ModelKind::Lasso,
            other => return Err(Error::Config(format!("unknown model {other:?}"))),
        };
    }
    match a.detector.as_deref() {
        Some("oracle") => c.detector = DetectorChoice::Oracle { labels: a.labels.clone() },
        Some("template") => {
            if !matches!(c.detector, DetectorChoice::Template(_)) {
                c.detector = DetectorChoice::default();
            }
        }
        Some(other) => return Err(Error::Config(format!("unknown detector {other:?}"))),
        None => {
            if let (DetectorChoice::Oracle { labels }, Some(l)) = (&mut c.detector, &a.labels) {
                *labels = Some(l.clone());
            }
        }
    }
    if let Some(v) = a.grid_width {
        c.grid.width = v;
    }
    if let Some(v) = a.grid_hi {
        c.grid.hi = v;
    }
    if let Some(v) = &a.lags {
        c.grid.lags = v.clone();
    }
    if let Some(v) = a.workers {
        c.workers = Some(v);
    }
    Ok(c)
}

fn run_pipeline(a: &PipelineArgs, stage: Stage) -> Result<()> {
    let c = config(a, stage)?;
    let summary = run(&c)?;
    for s in &summary.stages {
        let state = if s.cached { "cached" } else { "done" };
        println!("{:<12} {state:<7} {}", s.stage.name(), s.dir.display());
    }
    if let Some(p) = summary.report {
        println!("report       {}", p.display());
    }
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    if a.report.is_none() && a.features.is_none() {
        return Err(Error::Config("plot needs --report and/or --features".into()));
    }
    if let Some(path) = &a.report {
        let report = read_report(path)?;
        let mut buf = Vec::new();
        write_accuracy_table(&report.summary, &mut buf)?;
        write_file(&a.out.join("accuracy.csv"), &buf)?;
        write_file(&a.out.join("accuracy.svg"), accuracy_svg(&report.summary).as_bytes())?;
    }
    if let Some(path) = &a.features {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let m = read_features_bin(f)?;
        let mut by_id: std::collections::BTreeMap<&str, Vec<SecondFeature>> = Default::default();
        for (i, (p, s)) in m.keys.iter().enumerate() {
            if a.participant.is_empty() || a.participant.contains(p) {
                by_id.entry(p.as_str()).or_default().push(SecondFeature {
                    participant_id: p.clone(),
                    second_index: *s,
                    counts: m.row(i).to_vec(),
                });
            }
        }
        for wanted in &a.participant {
            if !by_id.contains_key(wanted.as_str()) {
                return Err(Error::Config(format!("no feature rows for participant {wanted}")));
            }
        }
        for (p, rows) in by_id {
            let img = fingerprint_image(&rows, &m.grid)?;
            write_file(&a.out.join(format!("fingerprint-{p}.svg")), img.to_svg(a.cell_px).as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => run_pipeline(a, Stage::Ingest),
        Command::Segment(a) => run_pipeline(a, Stage::Segment),
        Command::Fingerprint(a) => run_pipeline(a, Stage::Fingerprint),
        Command::Partition(a) => run_pipeline(a, Stage::Partition),
        Command::Train(a) => run_pipeline(a, Stage::Train),
        Command::Evaluate(a) => run_pipeline(a, Stage::Evaluate),
        Command::Run(a) => run_pipeline(a, Stage::Report),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
