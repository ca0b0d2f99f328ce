//! Pipeline configuration and the cached stage runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::cache::{file_digest, sha256_hex, StageDir, StageManifest};
use super::experiment::{
    evaluate_subgroup, group_ids, partition_all, segment_participant, select_partitions, train_subgroup,
    valid_features, ModelSettings, Segmented, Variant,
};
use crate::classifier::bank_io::{read_bank, write_bank, write_bank_json};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy_svg, subgroup_summary, write_accuracy_table, write_scores, RankReport, SummaryRow};
use crate::fingerprint::{read_features_bin, write_features_bin, FeatureMatrix, GridSpec};
use crate::ingest::{mask_flags, parse_recording, read_mask, read_vm_bin, write_vm_bin, VmSecond, SAMPLE_RATE};
use crate::par;
use crate::partition::{read_manifest, write_manifest, DatedSecond, Minutes, Paradigm, Partition};
use crate::segment::{write_bouts, write_steps, Bout, DetectorConfig, OracleDetector, StepDetector, TemplateDetector};
use crate::seed;
use crate::synth::read_labels;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "GAITPRINT_CACHE_DIR";
pub const LABELS_FILE: &str = "labels.csv";
pub const MASK_FILE: &str = "mask.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Segment,
    Fingerprint,
    Partition,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Segment,
        Stage::Fingerprint,
        Stage::Partition,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Fingerprint => "fingerprint",
            Stage::Partition => "partition",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorChoice {
    Template(DetectorConfig),
    /// Ground-truth step labels, `participant_id,second_index,walking,steps`.
    /// Defaults to `labels.csv` in the input directory.
    Oracle {
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

impl Default for DetectorChoice {
    fn default() -> Self {
        DetectorChoice::Template(DetectorConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stages to run; earlier stages they depend on are resumed from cache
    /// or recomputed.
    pub stages: Vec<Stage>,
    /// Directory of recording CSVs, plus optional `mask.csv` and `labels.csv`.
    pub input: PathBuf,
    pub output: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub paradigm: Paradigm,
    pub minutes: Minutes,
    /// `None` evaluates all eligible participants as one group.
    pub subgroup_size: Option<usize>,
    pub variant: Variant,
    pub model: ModelSettings,
    pub detector: DetectorChoice,
    pub grid: GridSpec,
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Stage::ALL.to_vec(),
            input: PathBuf::from("data"),
            output: PathBuf::from("out"),
            cache_dir: None,
            seed: 0,
            paradigm: Paradigm::Random,
            minutes: Minutes::Three,
            subgroup_size: None,
            variant: Variant::None,
            model: ModelSettings::default(),
            detector: DetectorChoice::default(),
            grid: GridSpec::default(),
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("no stages selected".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if matches!(self.subgroup_size, Some(n) if n < 2) {
            return Err(Error::Config("subgroup size must be at least 2".into()));
        }
        self.variant.validate()?;
        self.grid.validate()?;
        if self.grid.samples_per_second != SAMPLE_RATE {
            return Err(Error::Config(format!("grid must use {SAMPLE_RATE} samples per second")));
        }
        if let DetectorChoice::Template(d) = &self.detector {
            d.validate()?;
        }
        Ok(())
    }

    /// The configuration as embedded in manifests: settings that cannot
    /// change results (worker count, cache location) are blanked.
    pub fn canonical(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.workers = None;
        c.cache_dir = None;
        serde_json::to_value(c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().to_string().as_bytes())
    }

    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| self.output.join("cache"))
    }

    fn labels_path(&self) -> Option<PathBuf> {
        match &self.detector {
            DetectorChoice::Oracle { labels } => Some(labels.clone().unwrap_or_else(|| self.input.join(LABELS_FILE))),
            DetectorChoice::Template(_) => None,
        }
    }

    fn last_stage(&self) -> Stage {
        *self.stages.iter().max().expect("validated non-empty")
    }
}

/// Final report. Contains nothing that depends on timing or worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub stage_keys: BTreeMap<String, String>,
    pub excluded: Vec<(String, String)>,
    pub reports: Vec<RankReport>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage: Stage,
    pub dir: PathBuf,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<StageRun>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValidRow {
    participant_id: String,
    second_index: i64,
    date: NaiveDate,
}

#[derive(Debug, Serialize, Deserialize)]
struct Groups {
    groups: Vec<Vec<String>>,
    excluded: Vec<(String, String)>,
}

fn bank_name(g: usize) -> String {
    format!("bank-{g:03}.bin")
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    root: PathBuf,
    config_hash: String,
    done: BTreeMap<Stage, StageManifest>,
    runs: Vec<StageRun>,
}

impl Runner<'_> {
    fn dir(&self, stage: Stage) -> &Path {
        &self.runs.iter().find(|r| r.stage == stage).expect("stage ran").dir
    }

    fn stage_dir(&self, stage: Stage) -> StageDir {
        StageDir {
            stage: stage.name().into(),
            key: self.done[&stage].key.clone(),
            path: self.dir(stage).to_path_buf(),
        }
    }

    fn upstream(&self, stages: &[Stage]) -> BTreeMap<String, String> {
        stages
            .iter()
            .map(|s| (s.name().to_string(), self.done[s].output_digest()))
            .collect()
    }

    /// Runs `body` unless a complete cache exists for the same key.
    fn stage(
        &mut self,
        stage: Stage,
        settings: serde_json::Value,
        inputs: BTreeMap<String, String>,
        body: impl FnOnce(&Self, &StageDir) -> Result<()>,
    ) -> Result<()> {
        let key = super::cache::stage_key(stage.name(), &settings, &inputs);
        let dir = StageDir::new(&self.root, stage.name(), &key);
        let (manifest, cached) = match dir.load() {
            Some(m) => {
                log::info!("{stage}: cached at {}", dir.path.display());
                (m, true)
            }
            None => {
                log::info!("{stage}: running");
                dir.prepare().map_err(|e| e.in_stage(stage.name()))?;
                body(self, &dir).map_err(|e| e.in_stage(stage.name()))?;
                (
                    dir.finish(&self.config_hash, settings, inputs)
                        .map_err(|e| e.in_stage(stage.name()))?,
                    false,
                )
            }
        };
        self.done.insert(stage, manifest);
        self.runs.push(StageRun {
            stage,
            dir: dir.path.clone(),
            cached,
        });
        Ok(())
    }

    fn read_vm(&self) -> Result<Vec<Vec<VmSecond>>> {
        let bytes = self.stage_dir(Stage::Ingest).read("vm.bin")?;
        Ok(split_by_participant(read_vm_bin(bytes.as_slice())?))
    }

    fn read_valid(&self) -> Result<BTreeMap<String, Vec<DatedSecond>>> {
        let bytes = self.stage_dir(Stage::Segment).read("valid.csv")?;
        let mut out: BTreeMap<String, Vec<DatedSecond>> = BTreeMap::new();
        for row in csv::Reader::from_reader(bytes.as_slice()).deserialize() {
            let row: ValidRow = row?;
            out.entry(row.participant_id).or_default().push(DatedSecond {
                second_index: row.second_index,
                date: row.date,
            });
        }
        Ok(out)
    }

    fn read_features(&self) -> Result<FeatureMatrix> {
        read_features_bin(self.stage_dir(Stage::Fingerprint).read("features.bin")?.as_slice())
    }

    fn read_partitions(&self) -> Result<(Vec<Partition>, Groups)> {
        let d = self.stage_dir(Stage::Partition);
        let parts = read_manifest(d.read("partitions.csv")?.as_slice())?;
        let groups: Groups = serde_json::from_slice(&d.read("groups.json")?)?;
        Ok((parts, groups))
    }
}

fn split_by_participant(seconds: Vec<VmSecond>) -> Vec<Vec<VmSecond>> {
    let mut out: Vec<Vec<VmSecond>> = Vec::new();
    for s in seconds {
        match out.last_mut() {
            Some(g) if g[0].participant_id == s.participant_id => g.push(s),
            _ => out.push(vec![s]),
        }
    }
    out
}

/// Recording CSVs in the input directory, sorted by file name.
pub fn recording_files(input: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(input, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.extension().is_some_and(|e| e == "csv") && name != LABELS_FILE && name != MASK_FILE {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::format(input, "no recording CSV files"));
    }
    Ok(files)
}

fn ingest(cfg: &PipelineConfig, files: &[PathBuf], dir: &StageDir) -> Result<()> {
    let mask_path = cfg.input.join(MASK_FILE);
    let mask = if mask_path.exists() {
        let f = fs::File::open(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
        Some(read_mask(f).map_err(|e| Error::format(&mask_path, e.to_string()))?)
    } else {
        None
    };
    let mut per = par::try_map(files, |path| {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let rec = parse_recording(f, SAMPLE_RATE).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::format(path, other.to_string()),
        })?;
        let flags = match &mask {
            Some(m) => mask_flags(&rec, m),
            None => rec.mask.clone(),
        };
        crate::ingest::apply_mask(&rec, &flags)
            .map(|vm| (rec.participant_id.clone(), vm))
    })?;
    per.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = per.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!("participant {} appears in two recordings", w[0].0)));
    }
    let all: Vec<VmSecond> = per.into_iter().flat_map(|(_, v)| v).collect();
    let mut buf = Vec::new();
    write_vm_bin(&all, &mut buf)?;
    dir.write("vm.bin", &buf)
}

fn detector(cfg: &PipelineConfig) -> Result<Box<dyn StepDetector>> {
    match &cfg.detector {
        DetectorChoice::Template(d) => Ok(Box::new(TemplateDetector::new(d.clone())?)),
        DetectorChoice::Oracle { .. } => {
            let path = cfg.labels_path().expect("oracle has labels");
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let labels = read_labels(f).map_err(|e| Error::format(&path, e.to_string()))?;
            Ok(Box::new(OracleDetector::from_labels(
                labels.iter().map(|(p, l)| (p.as_str(), l.second_index, l.steps)),
            )))
        }
    }
}

fn write_segments(segs: &[Segmented], dir: &StageDir) -> Result<()> {
    let mut buf = Vec::new();
    write_steps(&segs.iter().map(|s| s.steps.clone()).collect::<Vec<_>>(), &mut buf)?;
    dir.write("steps.csv", &buf)?;
    let bouts: Vec<Bout> = segs.iter().flat_map(|s| s.bouts.clone()).collect();
    let mut buf = Vec::new();
    write_bouts(&bouts, &mut buf)?;
    dir.write("bouts.csv", &buf)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["participant_id", "second_index", "date"])?;
    for s in segs {
        for v in &s.valid {
            w.serialize(ValidRow {
                participant_id: s.participant_id.clone(),
                second_index: v.second_index,
                date: v.date,
            })?;
        }
    }
    let buf = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    dir.write("valid.csv", &buf)
}

fn segments_from_valid(valid: BTreeMap<String, Vec<DatedSecond>>) -> Vec<Segmented> {
    valid
        .into_iter()
        .map(|(participant_id, valid)| Segmented {
            steps: crate::segment::StepSeries {
                participant_id: participant_id.clone(),
                entries: Vec::new(),
            },
            participant_id,
            bouts: Vec::new(),
            valid,
        })
        .collect()
}

/// Runs the configured stages, reusing complete caches.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    par::with_workers(cfg.workers, || run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunSummary> {
    let last = cfg.last_stage();
    let mut r = Runner {
        cfg,
        root: cfg.cache_root(),
        config_hash: cfg.hash(),
        done: BTreeMap::new(),
        runs: Vec::new(),
    };

    let files = recording_files(&cfg.input).map_err(|e| e.in_stage("ingest"))?;
    let mut inputs = BTreeMap::new();
    for f in files.iter().chain(Some(&cfg.input.join(MASK_FILE)).filter(|p| p.exists())) {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        inputs.insert(format!("input/{name}"), file_digest(f).map_err(|e| e.in_stage("ingest"))?);
    }
    let settings = serde_json::json!({ "sample_rate": SAMPLE_RATE });
    r.stage(Stage::Ingest, settings, inputs, |r, dir| ingest(r.cfg, &files, dir))?;
    if last == Stage::Ingest {
        return Ok(finish(r, None));
    }

    let mut inputs = r.upstream(&[Stage::Ingest]);
    if let Some(p) = cfg.labels_path() {
        inputs.insert("labels".into(), file_digest(&p).map_err(|e| e.in_stage("segment"))?);
    }
    let settings = serde_json::to_value(&cfg.detector)?;
    r.stage(Stage::Segment, settings, inputs, |r, dir| {
        let det = detector(r.cfg)?;
        let vm = r.read_vm()?;
        let segs = par::try_map(&vm, |p| segment_participant(p, det.as_ref()))?;
        write_segments(&segs, dir)
    })?;
    if last == Stage::Segment {
        return Ok(finish(r, None));
    }

    let settings = serde_json::to_value(&cfg.grid)?;
    let inputs = r.upstream(&[Stage::Ingest, Stage::Segment]);
    r.stage(Stage::Fingerprint, settings, inputs, |r, dir| {
        let vm = r.read_vm()?;
        let valid = r.read_valid()?;
        let segs: HashMap<String, Segmented> = segments_from_valid(valid)
            .into_iter()
            .map(|s| (s.participant_id.clone(), s))
            .collect();
        let mats = par::try_map(&vm, |p| match segs.get(&p[0].participant_id) {
            Some(s) => valid_features(p, s, &r.cfg.grid),
            None => Ok(FeatureMatrix::empty(&r.cfg.grid)),
        })?;
        let m = FeatureMatrix::concat(mats)?;
        let mut buf = Vec::new();
        write_features_bin(&m, &mut buf)?;
        dir.write("features.bin", &buf)
    })?;
    if last == Stage::Fingerprint {
        return Ok(finish(r, None));
    }

    let settings = serde_json::json!({
        "paradigm": cfg.paradigm,
        "minutes": cfg.minutes,
        "seed": cfg.seed,
        "subgroup_size": cfg.subgroup_size,
    });
    let inputs = r.upstream(&[Stage::Segment]);
    r.stage(Stage::Partition, settings, inputs, |r, dir| {
        let valid = r.read_valid()?;
        let dates: HashMap<(String, i64), NaiveDate> = valid
            .iter()
            .flat_map(|(p, v)| v.iter().map(move |s| ((p.clone(), s.second_index), s.date)))
            .collect();
        let segs = segments_from_valid(valid);
        let (parts, excluded) = partition_all(&segs, r.cfg.paradigm, r.cfg.minutes, r.cfg.seed);
        for (p, why) in &excluded {
            log::info!("excluded {p}: {why}");
        }
        let ids: Vec<String> = parts.iter().map(|p| p.participant_id.clone()).collect();
        let groups = group_ids(&ids, r.cfg.subgroup_size, r.cfg.seed)?;
        let mut buf = Vec::new();
        write_manifest(&parts, &|p, s| dates.get(&(p.to_string(), s)).copied(), &mut buf)?;
        dir.write("partitions.csv", &buf)?;
        dir.write("groups.json", &serde_json::to_vec_pretty(&Groups { groups, excluded })?)
    })?;
    if last == Stage::Partition {
        return Ok(finish(r, None));
    }

    let model_settings = serde_json::json!({
        "variant": cfg.variant,
        "model": cfg.model,
        "seed": cfg.seed,
    });
    let train_cfg = |g: usize| cfg.model.train_config(cfg.variant, seed::mix(cfg.seed, g as u64));
    let inputs = r.upstream(&[Stage::Fingerprint, Stage::Partition]);
    r.stage(Stage::Train, model_settings.clone(), inputs, |r, dir| {
        let features = r.read_features()?;
        let (parts, groups) = r.read_partitions()?;
        for (g, ids) in groups.groups.iter().enumerate() {
            let sub = select_partitions(&parts, ids)?;
            let bank = train_subgroup(&features, &sub, &train_cfg(g))?;
            let mut buf = Vec::new();
            write_bank(&bank, &mut buf)?;
            dir.write(&bank_name(g), &buf)?;
            let mut buf = Vec::new();
            write_bank_json(&bank, &mut buf)?;
            dir.write(&format!("bank-{g:03}.json"), &buf)?;
        }
        Ok(())
    })?;
    if last == Stage::Train {
        return Ok(finish(r, None));
    }

    let inputs = r.upstream(&[Stage::Fingerprint, Stage::Partition, Stage::Train]);
    r.stage(Stage::Evaluate, model_settings, inputs, |r, dir| {
        let features = r.read_features()?;
        let (parts, groups) = r.read_partitions()?;
        let train = r.stage_dir(Stage::Train);
        let mut reports = Vec::new();
        for (g, ids) in groups.groups.iter().enumerate() {
            let sub = select_partitions(&parts, ids)?;
            let bank = read_bank(train.read(&bank_name(g))?.as_slice())?;
            let (scores, rs) = evaluate_subgroup(&features, &sub, &bank, r.cfg.variant, &train_cfg(g), g)?;
            let mut buf = Vec::new();
            write_scores(&scores, &mut buf)?;
            dir.write(&format!("scores-{g:03}.csv"), &buf)?;
            reports.extend(rs);
        }
        dir.write("ranks.json", &serde_json::to_vec_pretty(&reports)?)
    })?;
    if last == Stage::Evaluate {
        return Ok(finish(r, None));
    }

    let path = write_report(&mut r).map_err(|e| e.in_stage("report"))?;
    Ok(finish(r, Some(path)))
}

fn write_report(r: &mut Runner<'_>) -> Result<PathBuf> {
    let reports: Vec<RankReport> = serde_json::from_slice(&r.stage_dir(Stage::Evaluate).read("ranks.json")?)?;
    let (_, groups) = r.read_partitions()?;
    let summary = subgroup_summary(&reports);
    let report = Report {
        config: r.cfg.canonical(),
        config_hash: r.config_hash.clone(),
        stage_keys: r.done.iter().map(|(s, m)| (s.name().to_string(), m.key.clone())).collect(),
        excluded: groups.excluded,
        reports,
        summary,
    };
    let out = &r.cfg.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("report.json");
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let mut buf = Vec::new();
    write_accuracy_table(&report.summary, &mut buf)?;
    let csv_path = out.join("accuracy.csv");
    fs::write(&csv_path, buf).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out.join("accuracy.svg");
    fs::write(&svg_path, accuracy_svg(&report.summary)).map_err(|e| Error::io(&svg_path, e))?;
    r.runs.push(StageRun {
        stage: Stage::Report,
        dir: out.clone(),
        cached: false,
    });
    Ok(path)
}

fn finish(r: Runner<'_>, report: Option<PathBuf>) -> RunSummary {
    RunSummary { stages: r.runs, report }
}

pub fn read_report(path: &Path) -> Result<Report> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
