//! Experiment plumbing: flat configuration, single runs, sweeps and aggregation.
//!
//! A run executes load → diffuse → train → probe → emit. Its artifacts are
//! `<out>/<run_id>.metrics.jsonl`, `<out>/<run_id>.encoder.bin`, and one row
//! appended to `<out>/results.csv`. Every row carries the resolved config as
//! JSON, so a row is enough to rerun it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::diffusion::{compute_ppr, compute_ppr_cached, DiffusionConfig};
use crate::encoder::{encode, Activation, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{generate_sbm_with_noise, load_graph_dir, make_split, Graph, SplitSpec, SBM_FEATURE_NOISE};
use crate::loss::LossConfig;
use crate::miner::{MinerConfig, ViewMode};
use crate::probe::{accuracy, fit_probe};
use crate::synth::{MixConfig, MixMode};
use crate::train::{train_observed, MixLevel, TrainConfig, TrainLog, TrainerConfigs};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: [&str; 11] = [
    "run_id",
    "mode",
    "view_mode",
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "seed",
    "val_acc",
    "test_acc",
    "config",
];

/// Every knob of a run, flat so it maps one-to-one onto flags and `key = value` lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Directory with `features.txt`, `edges.txt`, `labels.txt` and optional split files.
    pub dataset: Option<PathBuf>,
    /// Synthetic graph `NxB[:p_in:p_out[:dim[:noise]]]`, used when `dataset` is unset.
    pub sbm: String,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub teleport: f64,
    pub series_tol: f64,
    pub sparsify_eps: f64,
    pub topk: Option<usize>,

    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub final_activation: bool,

    pub view_mode: ViewMode,
    pub alpha: f64,
    pub beta: f64,

    pub mode: MixMode,
    pub mix_level: MixLevel,
    pub lambda: f64,
    pub gamma: f64,
    pub synth_per_anchor: usize,

    pub tau: f64,
    pub intra_negatives: bool,
    pub symmetric: bool,

    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub warmup: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub timing: bool,

    pub out: PathBuf,
    /// Diffusion cache; defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DiffusionConfig::default();
        let e = EncoderConfig::default();
        let m = MinerConfig::default();
        let x = MixConfig::default();
        let l = LossConfig::default();
        let t = TrainConfig::default();
        Self {
            dataset: None,
            sbm: "100x2".into(),
            train_ratio: 0.1,
            val_ratio: 0.1,
            test_ratio: 0.8,
            teleport: d.teleport,
            series_tol: d.series_tol,
            sparsify_eps: d.sparsify_eps,
            topk: d.topk,
            hidden: e.hidden,
            layers: e.layers,
            activation: e.activation,
            final_activation: e.final_activation,
            view_mode: m.view_mode,
            alpha: m.lower_pct,
            beta: m.upper_pct,
            mode: x.mode,
            mix_level: MixLevel::default(),
            lambda: x.lambda,
            gamma: x.gamma,
            synth_per_anchor: x.synth_per_anchor,
            tau: l.tau,
            intra_negatives: l.include_intra_view_negatives,
            symmetric: l.symmetric,
            lr: t.lr,
            weight_decay: t.weight_decay,
            epochs: t.epochs_max,
            patience: t.patience,
            warmup: t.warmup_epochs,
            eval_every: t.eval_every,
            seed: t.seed,
            timing: t.record_timing,
            out: PathBuf::from("runs"),
            cache_dir: None,
        }
    }
}

/// Canonical key spellings accepted by [`ExperimentConfig::set`] besides the field names.
fn canonical_key(key: &str) -> String {
    let k = key.trim().trim_start_matches("--").replace('-', "_");
    match k.as_str() {
        "warmup_epochs" => "warmup".into(),
        "epochs_max" => "epochs".into(),
        "lower_pct" => "alpha".into(),
        "upper_pct" => "beta".into(),
        _ => k,
    }
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Sets one field from its textual value, rejecting unknown keys.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let key = canonical_key(key);
        let raw = raw.trim();
        let mut map = match self.to_json() {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        if !map.contains_key(&key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let mut candidates = Vec::new();
        if raw.eq_ignore_ascii_case("none") || raw.is_empty() {
            candidates.push(Value::Null);
        }
        if let Ok(v) = serde_json::from_str::<Value>(raw) {
            candidates.push(v);
        }
        candidates.push(Value::String(raw.to_string()));
        for v in candidates {
            map.insert(key.clone(), v);
            if let Ok(cfg) = serde_json::from_value::<ExperimentConfig>(Value::Object(map.clone())) {
                *self = cfg;
                return Ok(());
            }
        }
        Err(Error::Config(format!("invalid value {raw:?} for {key}")))
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, n + 1, "expected key = value"))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}:{}: {msg}", origin.display(), n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            teleport: self.teleport,
            series_tol: self.series_tol,
            sparsify_eps: self.sparsify_eps,
            topk: self.topk,
        }
    }

    pub fn trainer(&self) -> TrainerConfigs {
        TrainerConfigs {
            encoder: EncoderConfig {
                hidden: self.hidden,
                layers: self.layers,
                activation: self.activation,
                final_activation: self.final_activation,
            },
            miner: MinerConfig {
                lower_pct: self.alpha,
                upper_pct: self.beta,
                view_mode: self.view_mode,
            },
            mix: MixConfig {
                mode: self.mode,
                lambda: self.lambda,
                gamma: self.gamma,
                synth_per_anchor: self.synth_per_anchor,
            },
            mix_level: self.mix_level,
            loss: LossConfig {
                tau: self.tau,
                include_intra_view_negatives: self.intra_negatives,
                symmetric: self.symmetric,
            },
            train: TrainConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                epochs_max: self.epochs,
                patience: self.patience,
                warmup_epochs: self.warmup,
                eval_every: self.eval_every,
                seed: self.seed,
                record_timing: self.timing,
                ..TrainConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion().validate()?;
        self.trainer().validate()?;
        if self.dataset.is_none() {
            SbmSpec::parse(&self.sbm)?;
        }
        Ok(())
    }

    /// Config as it appears in results rows: everything except output locations.
    pub fn resolved_json(&self) -> Value {
        let mut v = self.to_json();
        if let Value::Object(m) = &mut v {
            m.remove("out");
            m.remove("cache_dir");
        }
        v
    }

    /// Digest of the resolved config; identical configs share a run id.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.resolved_json().to_string().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `NxB[:p_in:p_out[:dim[:noise]]]`: `B` blocks of `N` nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmSpec {
    pub n_per_block: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
}

impl SbmSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad sbm spec {s:?}, expected NxB[:p_in:p_out[:dim[:noise]]]"));
        let parts: Vec<&str> = s.split(':').collect();
        if !matches!(parts.len(), 1 | 3 | 4 | 5) {
            return Err(bad());
        }
        let (n, b) = parts[0].split_once(['x', 'X']).ok_or_else(bad)?;
        let mut spec = SbmSpec {
            n_per_block: n.trim().parse().map_err(|_| bad())?,
            n_blocks: b.trim().parse().map_err(|_| bad())?,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 8,
            feature_noise: SBM_FEATURE_NOISE,
        };
        if parts.len() >= 3 {
            spec.p_in = parts[1].parse().map_err(|_| bad())?;
            spec.p_out = parts[2].parse().map_err(|_| bad())?;
        }
        if parts.len() >= 4 {
            spec.feature_dim = parts[3].parse().map_err(|_| bad())?;
        }
        if parts.len() == 5 {
            spec.feature_noise = parts[4].parse().map_err(|_| bad())?;
        }
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if spec.n_per_block == 0
            || spec.n_blocks == 0
            || spec.feature_dim == 0
            || !p_ok(spec.p_in)
            || !p_ok(spec.p_out)
            || !(spec.feature_noise > 0.0 && spec.feature_noise.is_finite())
        {
            return Err(bad());
        }
        Ok(spec)
    }
}

/// Pipeline stage an error came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Diffuse,
    Train,
    Probe,
    Emit,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "graph",
            Stage::Diffuse => "diffusion",
            Stage::Train => "trainer",
            Stage::Probe => "probe",
            Stage::Emit => "output",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.as_str(), self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    /// 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.stage) {
            (Error::Config(_), _) | (_, Stage::Config) => 2,
            (Error::Diverged { .. } | Error::DegenerateEmbedding { .. }, _) => 4,
            (Error::Parse { .. } | Error::Validation(_) | Error::Csv(_) | Error::Json(_), _) => 3,
            (Error::Io { .. }, Stage::Load) => 3,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "stage": self.stage.as_str(),
            "kind": self.error.kind(),
            "message": self.error.to_string(),
        })
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// One results row.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub mode: MixMode,
    pub view_mode: ViewMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub config: Value,
}

impl ResultRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.mode.as_str().into(),
            self.view_mode.as_str().into(),
            self.alpha.to_string(),
            self.beta.to_string(),
            self.gamma.to_string(),
            self.lambda.to_string(),
            self.seed.to_string(),
            self.val_acc.to_string(),
            self.test_acc.to_string(),
            self.config.to_string(),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub row: ResultRow,
    pub log: TrainLog,
    pub params: crate::encoder::EncoderParams,
}

/// Loads or generates the graph and its split.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Graph, SplitSpec)> {
    let ratios = (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio);
    match &cfg.dataset {
        Some(dir) => {
            let graph = load_graph_dir(dir)?;
            let split = if dir.join("train.txt").exists() {
                SplitSpec::load(dir, graph.n_nodes())?
            } else {
                make_split(&graph, ratios, cfg.seed)?
            };
            Ok((graph, split))
        }
        None => {
            let s = SbmSpec::parse(&cfg.sbm)?;
            let graph = generate_sbm_with_noise(
                s.n_per_block,
                s.n_blocks,
                s.p_in,
                s.p_out,
                s.feature_dim,
                s.feature_noise,
                cfg.seed,
            )?;
            let split = make_split(&graph, ratios, cfg.seed)?;
            Ok((graph, split))
        }
    }
}

/// Runs the pipeline without touching the filesystem (beyond the diffusion cache, if given).
pub fn execute(
    cfg: &ExperimentConfig,
    cache_dir: Option<&Path>,
    observe: &mut dyn FnMut(&crate::train::EpochRecord) -> Result<()>,
) -> std::result::Result<RunOutput, StageError> {
    cfg.validate().at(Stage::Config)?;
    let (graph, split) = load_data(cfg).at(Stage::Load)?;
    let dcfg = cfg.diffusion();
    let diffusion = match cache_dir {
        Some(dir) => compute_ppr_cached(graph.adjacency_norm(), &dcfg, dir),
        None => compute_ppr(graph.adjacency_norm(), &dcfg),
    }
    .at(Stage::Diffuse)?;
    let tcfg = cfg.trainer();
    let (params, log) = train_observed(&graph, &diffusion.matrix, &split, &tcfg, observe).at(Stage::Train)?;

    let labels = graph
        .labels()
        .ok_or_else(|| Error::Validation("graph has no labels".into()))
        .at(Stage::Probe)?;
    let embeds = encode(&graph, &diffusion.matrix, &params, &tcfg.encoder)
        .map(|p| p.embeddings().readout())
        .at(Stage::Probe)?;
    let probe = fit_probe(&embeds, labels, &split).at(Stage::Probe)?;
    let val_acc = accuracy(&probe, &embeds, labels, &split.val_idx).at(Stage::Probe)?;
    let test_acc = accuracy(&probe, &embeds, labels, &split.test_idx).at(Stage::Probe)?;
    let row = ResultRow {
        run_id: cfg.run_id(),
        mode: cfg.mode,
        view_mode: cfg.view_mode,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        seed: cfg.seed,
        val_acc,
        test_acc,
        config: cfg.resolved_json(),
    };
    Ok(RunOutput { row, log, params })
}

fn default_cache(cfg: &ExperimentConfig) -> PathBuf {
    cfg.cache_dir.clone().unwrap_or_else(|| cfg.out.join("cache"))
}

/// Writes the per-run artifacts (metrics log and checkpoint) into `cfg.out`.
fn write_artifacts(cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    let id = &out.row.run_id;
    out.log.write_json_lines(&cfg.out.join(format!("{id}.metrics.jsonl")))?;
    out.params.save(&cfg.out.join(format!("{id}.encoder.bin")))
}

/// Appends rows to `<dir>/results.csv`, writing the header for a new file.
pub fn append_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESULTS_FILE);
    let fresh = !path.exists() || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Full run: pipeline plus artifacts in `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunOutput, StageError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::io(&cfg.out, e))
        .at(Stage::Emit)?;
    let out = execute(cfg, Some(&default_cache(cfg)), &mut |_| Ok(()))?;
    write_artifacts(cfg, &out).at(Stage::Emit)?;
    append_results(&cfg.out, std::slice::from_ref(&out.row)).at(Stage::Emit)?;
    Ok(out)
}

/// Expands `a:b:step` (inclusive) or a comma list into textual values.
pub fn parse_values(spec: &str) -> Result<Vec<String>> {
    let spec = spec.trim();
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad range {spec:?}, expected start:stop:step")))
        };
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(Error::Config(format!(
                "range {spec:?} needs step > 0 and start <= stop"
            )));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        let integral = [a, step].iter().all(|x| x.fract() == 0.0) && !spec.contains('.');
        return Ok((0..count)
            .map(|i| {
                let v = a + i as f64 * step;
                if integral {
                    format!("{}", v as i64)
                } else {
                    // Drop float noise such as 0.30000000000000004.
                    format!("{}", (v * 1e12).round() / 1e12)
                }
            })
            .collect());
    }
    let values: Vec<String> = spec
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config("empty value list".into()));
    }
    Ok(values)
}

/// A grid over config keys, crossed with a list of seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub base: ExperimentConfig,
    pub axes: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
}

impl Sweep {
    /// Every grid point crossed with every seed, seeds varying fastest.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut points = vec![self.base.clone()];
        for (key, values) in &self.axes {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut c = p.clone();
                    c.set(key, v)?;
                    next.push(c);
                }
            }
            points = next;
        }
        let mut out = Vec::with_capacity(points.len() * self.seeds.len());
        for p in points {
            for &s in &self.seeds {
                let mut c = p.clone();
                c.seed = s;
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// Runs every sweep config, in parallel, and appends the rows in grid order.
pub fn run_sweep(sweep: &Sweep) -> std::result::Result<Vec<RunOutput>, StageError> {
    let configs = sweep.configs().at(Stage::Config)?;
    let out_dir = sweep.base.out.clone();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(&out_dir, e))
        .at(Stage::Emit)?;
    let cache = default_cache(&sweep.base);
    let outputs: Vec<std::result::Result<RunOutput, StageError>> = configs
        .par_iter()
        .map(|c| {
            let out = execute(c, Some(&cache), &mut |_| Ok(()))?;
            write_artifacts(c, &out).at(Stage::Emit)?;
            Ok(out)
        })
        .collect();
    let outputs: Vec<RunOutput> = outputs.into_iter().collect::<std::result::Result<_, _>>()?;
    let rows: Vec<ResultRow> = outputs.iter().map(|o| o.row.clone()).collect();
    append_results(&out_dir, &rows).at(Stage::Emit)?;
    Ok(outputs)
}

/// Mean and sample standard deviation of `test_acc` for one config group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: String,
    pub view_mode: String,
    pub alpha: String,
    pub beta: String,
    pub gamma: String,
    pub lambda: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Shared config of the group, seed removed.
    pub config: String,
}

/// Welford's update, which keeps a constant sequence's mean exact.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (m2 / (xs.len() - 1) as f64).sqrt())
}

/// Groups results rows by every config field except the seed. Output is
/// sorted by the group's config text.
pub fn aggregate(results_csv: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(results_csv).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(results_csv, io),
        other => Error::Validation(format!("{}: {other:?}", results_csv.display())),
    })?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("{}: missing column {name}", results_csv.display())))
    };
    let idx: Vec<usize> = [
        "mode",
        "view_mode",
        "alpha",
        "beta",
        "gamma",
        "lambda",
        "test_acc",
        "config",
    ]
    .iter()
    .map(|c| col(c))
    .collect::<Result<_>>()?;
    let mut groups: BTreeMap<String, (Vec<String>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
        let acc: f64 = get(6)
            .parse()
            .map_err(|_| Error::parse(results_csv, line + 2, "test_acc is not a number"))?;
        let mut config: Value = serde_json::from_str(&get(7))
            .map_err(|e| Error::parse(results_csv, line + 2, format!("config column: {e}")))?;
        if let Value::Object(m) = &mut config {
            m.remove("seed");
        }
        let key = config.to_string();
        let entry = groups
            .entry(key)
            .or_insert_with(|| ((0..6).map(get).collect(), Vec::new()));
        entry.1.push(acc);
    }
    if groups.is_empty() {
        return Err(Error::Validation(format!("{}: no result rows", results_csv.display())));
    }
    Ok(groups
        .into_iter()
        .map(|(config, (labels, accs))| {
            let (mean, std) = mean_std(&accs);
            SummaryRow {
                mode: labels[0].clone(),
                view_mode: labels[1].clone(),
                alpha: labels[2].clone(),
                beta: labels[3].clone(),
                gamma: labels[4].clone(),
                lambda: labels[5].clone(),
                n: accs.len(),
                mean,
                std,
                config,
            }
        })
        .collect())
}

/// Writes summary rows as CSV.
pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_parses_by_field_type() {
        let mut c = ExperimentConfig::default();
        c.set("gamma", "0.5").unwrap();
        c.set("--synth-per-anchor", "8").unwrap();
        c.set("mode", "none").unwrap();
        c.set("mode", "mixup").unwrap();
        c.set("topk", "none").unwrap();
        c.set("dataset", "data/cora").unwrap();
        c.set("view_mode", "local").unwrap();
        assert_eq!(c.gamma, 0.5);
        assert_eq!(c.synth_per_anchor, 8);
        assert_eq!(c.mode, MixMode::Mixup);
        assert_eq!(c.topk, None);
        assert_eq!(c.dataset, Some(PathBuf::from("data/cora")));
        assert_eq!(c.view_mode, ViewMode::Local);
        assert!(c.set("gama", "0.5").is_err());
        assert!(c.set("epochs", "many").is_err());
    }

    #[test]
    fn text_config_rejects_unknown_keys() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# comment\nlr = 0.01\nwarmup = 3 # inline\n", Path::new("x.cfg"))
            .unwrap();
        assert_eq!((c.lr, c.warmup), (0.01, 3));
        assert!(c.apply_text("bogus = 1\n", Path::new("x.cfg")).is_err());
        assert!(c.apply_text("lr 0.1\n", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn sbm_specs() {
        let s = SbmSpec::parse("100x2").unwrap();
        assert_eq!(
            (s.n_per_block, s.n_blocks, s.p_in, s.p_out, s.feature_dim),
            (100, 2, 0.1, 0.01, 8)
        );
        let s = SbmSpec::parse("50x4:0.2:0.05:16").unwrap();
        assert_eq!((s.n_blocks, s.p_in, s.feature_dim), (4, 0.2, 16));
        assert_eq!(SbmSpec::parse("5x2:0.5:0.1:4:1.5").unwrap().feature_noise, 1.5);
        for bad in ["100", "0x2", "10x2:0.1", "10x2:2:0.1", "axb", "5x2:0.5:0.1:4:0"] {
            assert!(SbmSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(
            parse_values("0.1:0.6:0.1").unwrap(),
            ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6"]
        );
        assert_eq!(parse_values("1:5:2").unwrap(), ["1", "3", "5"]);
        assert_eq!(parse_values("none,mixup").unwrap(), ["none", "mixup"]);
        assert!(parse_values("1:0:1").is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.8, 0.8, 0.8]), (0.8, 0.0));
        let (m, s) = mean_std(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn run_id_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.run_id(), b.run_id());
        b.seed = 9;
        assert_ne!(a.run_id(), b.run_id());
    }
}
