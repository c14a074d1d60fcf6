//! Command implementations behind the `avfuse` binary.
//!
//! Each command takes fully resolved settings, does its work, and writes a
//! reproducibility record beside its output: the settings, their SHA-256
//! hash and the seed. Hyperparameters come from a [`RunConfig`] assembled
//! from command-line flags over an optional TOML file over the environment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{logmel, pad_or_crop, read_wav, AudioArch, AudioModel, MelConfig, REFERENCE_FRAMES};
use crate::checkpoint::Archive;
use crate::data::{
    read_labels, read_scores, split, write_labels, write_scores, BenchmarkSplit, Manifest, Record, ScoreMatrix,
    SplitTag, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fusion::{train_fusion, AttentionVariant, FusionBundle, FusionMethod, FusionTrainConfig};
use crate::metrics::analysis::{
    bubble_data, improvement_histogram, mean_attention_weights, write_attention_csv, write_bubble_csv,
    write_histogram_csv, AttentionSummary, ImprovementSummary,
};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::train::{sweep_learning_rate, SequentialModel, Split, TrainConfig, TrainReport};
use crate::tensor::Tensor;
use crate::visual::{bag_vector, visual_train_config, VisualArch, VisualModel};

/// Environment variable naming the directory that relative manifest paths
/// and the default `--data` directory are resolved against.
pub const DATA_ROOT_ENV: &str = "AVFUSE_DATA_ROOT";

/// Settings shared by several commands. Every field is optional so layers
/// can be merged; commands fill remaining gaps with their own defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rates: Option<Vec<f64>>,
    pub method: Option<FusionMethod>,
    pub variant: Option<AttentionVariant>,
    pub hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub l2: Option<f64>,
    pub val_fraction: Option<f64>,
    pub data_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn from_env() -> Self {
        RunConfig {
            data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
            ..RunConfig::default()
        }
    }

    /// Keeps every field set in `self` and takes the rest from `lower`.
    pub fn or(self, lower: RunConfig) -> RunConfig {
        RunConfig {
            seed: self.seed.or(lower.seed),
            epochs: self.epochs.or(lower.epochs),
            batch_size: self.batch_size.or(lower.batch_size),
            learning_rates: self.learning_rates.or(lower.learning_rates),
            method: self.method.or(lower.method),
            variant: self.variant.or(lower.variant),
            hidden: self.hidden.or(lower.hidden),
            dropout: self.dropout.or(lower.dropout),
            l2: self.l2.or(lower.l2),
            val_fraction: self.val_fraction.or(lower.val_fraction),
            data_root: self.data_root.or(lower.data_root),
        }
    }

    /// Flags, then the config file, then the environment.
    pub fn resolve(flags: RunConfig, file: Option<&Path>) -> Result<RunConfig> {
        let from_file = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(flags.or(from_file).or(RunConfig::from_env()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `dir` if given, otherwise the data root.
    pub fn data_dir(&self, dir: Option<PathBuf>) -> Result<PathBuf> {
        dir.or_else(|| self.data_root.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("no data directory: pass --data or set {DATA_ROOT_ENV}")))
    }
}

/// What was run, with which settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of `{command, settings}`.
    pub config_hash: String,
    pub settings: serde_json::Value,
}

impl RunRecord {
    pub fn new(command: &str, settings: &impl Serialize, seed: u64) -> Result<Self> {
        let settings = serde_json::to_value(settings)?;
        let canonical = serde_json::to_vec(&serde_json::json!({ "command": command, "settings": settings }))?;
        Ok(RunRecord {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: hex::encode(Sha256::digest(&canonical)),
            settings,
        })
    }

    /// Writes the record beside `output` (see [`record_path`]).
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let path = record_path(output);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
        Ok(path)
    }
}

/// `<dir>/run.json` for directories, `<file>.run.json` otherwise.
pub fn record_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("run.json")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        output.with_file_name(name)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::file(p, e)),
        _ => Ok(()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

/// Resolves a path stored in a manifest: absolute paths stand, relative
/// ones are taken from the data root, or else from the manifest's directory.
pub fn manifest_path(root: Option<&Path>, manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match root {
        Some(r) => r.join(p),
        None => manifest.parent().unwrap_or(Path::new("")).join(p),
    }
}

fn check_id(line: usize, id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(Error::Manifest {
            line,
            message: format!("id `{id}` cannot be used as a file name"),
        });
    }
    Ok(())
}

fn load_manifest(path: &Path, only: Option<SplitTag>) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    Ok(match only {
        Some(tag) => m.subset(tag),
        None => m,
    })
}

fn missing(record: &Record, line: usize, field: &str) -> Error {
    Error::Manifest {
        line,
        message: format!("record `{}` has no `{field}` path", record.id),
    }
}

// ---------------------------------------------------------------- synth

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
}

impl SynthSettings {
    /// The default benchmark: 64 classes, 20 000 / 2 000 / 4 000 recordings.
    pub fn benchmark(out: impl Into<PathBuf>, seed: u64) -> Self {
        let spec = SyntheticSpec::benchmark(seed);
        SynthSettings {
            out: out.into(),
            seed,
            classes: spec.classes,
            n_train: spec.n_train,
            n_val: spec.n_val,
            n_eval: spec.n_eval,
        }
    }
}

/// Writes `train/`, `val/` and `eval/` split directories plus `spec.json`
/// describing every class.
pub fn synth(s: &SynthSettings) -> Result<SyntheticSpec> {
    let spec = SyntheticSpec::with_sizes(s.classes, s.n_train, s.n_val, s.n_eval, s.seed);
    let data = spec.generate()?;
    create_dir(&s.out)?;
    for (name, part) in [("train", &data.train), ("val", &data.val), ("eval", &data.eval)] {
        part.save(s.out.join(name))?;
    }
    let spec_path = s.out.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)?).map_err(|e| Error::file(&spec_path, e))?;
    RunRecord::new("synth", s, s.seed)?.write_beside(&s.out)?;
    Ok(spec)
}

// ------------------------------------------------------------- features

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSettings {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub data_root: Option<PathBuf>,
    pub mel: MelConfig,
}

/// Computes log-mel features for every manifest record with a waveform and
/// writes `<out>/<id>.avf` (entry `features`, `T x 64`). Returns the number
/// of files written.
pub fn features(s: &FeaturesSettings) -> Result<usize> {
    let manifest = Manifest::load(&s.manifest)?;
    create_dir(&s.out)?;
    let mut written = 0;
    for (i, r) in manifest.records.iter().enumerate() {
        check_id(i + 1, &r.id)?;
        let wav = r.wav.as_ref().ok_or_else(|| missing(r, i + 1, "wav"))?;
        let samples = read_wav(
            manifest_path(s.data_root.as_deref(), &s.manifest, wav),
            s.mel.sample_rate,
        )?;
        let feats = crate::audio::LogMel::new(s.mel.clone())?.compute(&samples)?;
        let mut a = Archive::new();
        a.put_tensor("features", &feats);
        a.save(s.out.join(format!("{}.avf", r.id)))?;
        written += 1;
    }
    RunRecord::new("features", s, 0)?.write_beside(&s.out)?;
    Ok(written)
}

// ---------------------------------------------------------- audio-infer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AudioWeights {
    /// A checkpoint written by [`AudioModel::save`].
    Checkpoint(PathBuf),
    /// Random weights for the reference architecture (smoke tests only).
    Random { classes: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioInferSettings {
    pub manifest: PathBuf,
    pub weights: AudioWeights,
    /// Directory of cached `<id>.avf` feature files; without it features
    /// are computed from each record's waveform.
    pub features: Option<PathBuf>,
    pub split: Option<SplitTag>,
    pub frames: usize,
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
    pub labels_out: Option<PathBuf>,
}

impl AudioInferSettings {
    pub fn new(manifest: impl Into<PathBuf>, weights: AudioWeights, out: impl Into<PathBuf>) -> Self {
        AudioInferSettings {
            manifest: manifest.into(),
            weights,
            features: None,
            split: None,
            frames: REFERENCE_FRAMES,
            data_root: None,
            out: out.into(),
            labels_out: None,
        }
    }
}

fn record_features(s: &AudioInferSettings, r: &Record, line: usize) -> Result<Tensor> {
    match &s.features {
        Some(dir) => Archive::load(dir.join(format!("{}.avf", r.id)))?.tensor("features"),
        None => {
            let wav = r.wav.as_ref().ok_or_else(|| missing(r, line, "wav"))?;
            logmel(&read_wav(
                manifest_path(s.data_root.as_deref(), &s.manifest, wav),
                MelConfig::default().sample_rate,
            )?)
        }
    }
}

fn write_labels_if(path: Option<&Path>, manifest: &Manifest, classes: usize) -> Result<()> {
    if let Some(p) = path {
        create_parent(p)?;
        write_labels(p, &manifest.labels(classes)?)?;
    }
    Ok(())
}

/// Bag-level audio predictions `N x C`, rows in manifest order.
pub fn audio_infer(s: &AudioInferSettings) -> Result<ScoreMatrix> {
    let manifest = load_manifest(&s.manifest, s.split)?;
    let model = match &s.weights {
        AudioWeights::Checkpoint(p) => AudioModel::load(p)?,
        AudioWeights::Random { classes, seed } => AudioModel::init(AudioArch::reference(*classes), *seed)?,
    };
    let c = model.classes();
    manifest.validate(c)?;
    let mut rows = Vec::with_capacity(manifest.len());
    for (i, r) in manifest.records.iter().enumerate() {
        check_id(i + 1, &r.id)?;
        let feats = pad_or_crop(&record_features(s, r, i + 1)?, s.frames)?;
        rows.push(model.forward(&feats)?.bag);
    }
    let scores = Tensor::new(vec![rows.len(), c], rows.concat())?;
    create_parent(&s.out)?;
    write_scores(&s.out, &scores)?;
    write_labels_if(s.labels_out.as_deref(), &manifest, c)?;
    let seed = match s.weights {
        AudioWeights::Random { seed, .. } => seed,
        AudioWeights::Checkpoint(_) => 0,
    };
    RunRecord::new("audio-infer", s, seed)?.write_beside(&s.out)?;
    Ok(scores)
}

// --------------------------------------------------------- visual models

/// Reads a record's frame features: entry `frames`, either `64 x D` frame
/// rows (mean-pooled here) or an already pooled `D` vector.
fn bag_of(root: Option<&Path>, manifest_file: &Path, r: &Record, line: usize) -> Result<Vec<f64>> {
    let path = r.frames.as_ref().ok_or_else(|| missing(r, line, "frames"))?;
    let t = Archive::load(manifest_path(root, manifest_file, path))?.tensor("frames")?;
    match t.rank() {
        1 => Ok(t.into_data()),
        _ => bag_vector(&t),
    }
}

fn bag_matrix(root: Option<&Path>, manifest_file: &Path, m: &Manifest) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(m.len());
    for (i, r) in m.records.iter().enumerate() {
        rows.push(bag_of(root, manifest_file, r, i + 1)?);
    }
    if let Some(d) = rows.first().map(Vec::len) {
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!(
                "record `{}` has {}-d frames, expected {d}",
                m.records[bad].id,
                rows[bad].len()
            )));
        }
    }
    Tensor::from_rows(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualTrainSettings {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub data_root: Option<PathBuf>,
    /// Class count; inferred from the largest label when absent.
    pub classes: Option<usize>,
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rates: Vec<f64>,
    pub seed: u64,
    /// Used only when the manifest tags no record as `val`.
    pub val_fraction: f64,
}

impl VisualTrainSettings {
    /// Reference widths, 20 epochs, batch 144, learning rate 1e-3.
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>, seed: u64) -> Self {
        let arch = VisualArch::reference(1);
        let cfg = visual_train_config(seed);
        VisualTrainSettings {
            manifest: manifest.into(),
            out: out.into(),
            data_root: None,
            classes: None,
            widths: arch.hidden,
            dropout: arch.dropout,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rates: vec![cfg.adam.lr],
            seed,
            val_fraction: 0.0125,
        }
    }
}

/// Trains the visual classifier and saves it (with its training report
/// under the `report` entry).
pub fn visual_train(s: &VisualTrainSettings) -> Result<(VisualModel, TrainReport)> {
    let mut manifest = Manifest::load(&s.manifest)?;
    let classes = s.classes.unwrap_or_else(|| manifest.inferred_classes());
    manifest.validate(classes)?;
    if !manifest.records.iter().any(|r| r.split == Some(SplitTag::Val)) {
        let tags = split(&manifest, s.val_fraction, s.seed)?;
        for (r, t) in manifest.records.iter_mut().zip(tags) {
            r.split = Some(t);
        }
    }
    let mut train_m = manifest.subset(SplitTag::Train);
    train_m
        .records
        .extend(manifest.records.iter().filter(|r| r.split.is_none()).cloned());
    let val_m = manifest.subset(SplitTag::Val);
    let root = s.data_root.as_deref();
    let (x_train, x_val) = (
        bag_matrix(root, &s.manifest, &train_m)?,
        bag_matrix(root, &s.manifest, &val_m)?,
    );
    let (y_train, y_val) = (train_m.labels(classes)?, val_m.labels(classes)?);
    let arch = VisualArch {
        input_dim: x_train.cols(),
        hidden: s.widths.clone(),
        classes,
        dropout_layers: 2,
        dropout: s.dropout,
    };
    let spec = arch.spec()?;
    let cfg = TrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed: s.seed,
        ..visual_train_config(s.seed)
    };
    let (model, report, _) = sweep_learning_rate(
        &s.learning_rates,
        || SequentialModel::new(spec.clone(), s.seed),
        Split::new(&x_train, &y_train)?,
        Split::new(&x_val, &y_val)?,
        &cfg,
    )?;
    let vm = VisualModel { arch, model };
    let mut a = vm.to_archive();
    a.put_bytes("report", serde_json::to_vec(&report)?);
    create_parent(&s.out)?;
    a.save(&s.out)?;
    RunRecord::new("visual-train", s, s.seed)?.write_beside(&s.out)?;
    Ok((vm, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualInferSettings {
    pub manifest: PathBuf,
    pub weights: PathBuf,
    pub split: Option<SplitTag>,
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
    pub labels_out: Option<PathBuf>,
}

pub fn visual_infer(s: &VisualInferSettings) -> Result<ScoreMatrix> {
    let manifest = load_manifest(&s.manifest, s.split)?;
    let model = VisualModel::load(&s.weights)?;
    manifest.validate(model.classes())?;
    let scores = model.predict(&bag_matrix(s.data_root.as_deref(), &s.manifest, &manifest)?)?;
    create_parent(&s.out)?;
    write_scores(&s.out, &scores)?;
    write_labels_if(s.labels_out.as_deref(), &manifest, model.classes())?;
    RunRecord::new("visual-infer", s, 0)?.write_beside(&s.out)?;
    Ok(scores)
}

// --------------------------------------------------------------- fusion

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuseTrainSettings {
    pub method: FusionMethod,
    pub variant: AttentionVariant,
    /// Split directories holding `audio.avf`, `visual.avf`, `labels.avf`.
    pub train: PathBuf,
    pub val: PathBuf,
    pub out: PathBuf,
    pub config: FusionTrainConfig,
}

impl FuseTrainSettings {
    /// Defaults: 100 epochs, batch 256, learning rate swept over
    /// {1e-2, 1e-3, 1e-4}; `cfg` overrides any of them.
    pub fn from_config(
        cfg: &RunConfig,
        train: impl Into<PathBuf>,
        val: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
    ) -> Self {
        let mut config = FusionTrainConfig::default();
        config.train.seed = cfg.seed();
        if let Some(e) = cfg.epochs {
            config.train.epochs = e;
        }
        if let Some(b) = cfg.batch_size {
            config.train.batch_size = b;
        }
        if let Some(lr) = &cfg.learning_rates {
            config.learning_rates = lr.clone();
        }
        if let Some(h) = cfg.hidden {
            config.hidden = h;
        }
        if let Some(d) = cfg.dropout {
            config.dropout = d;
        }
        if let Some(l2) = cfg.l2 {
            config.l2 = l2;
        }
        FuseTrainSettings {
            method: cfg.method.unwrap_or(FusionMethod::Attention),
            variant: cfg.variant.unwrap_or_default(),
            train: train.into(),
            val: val.into(),
            out: out.into(),
            config,
        }
    }
}

/// Trains a fusion model and saves its bundle. The bundle records the hash
/// of these settings; a training report, when there is one, is stored
/// under the `report` entry.
pub fn fuse_train(s: &FuseTrainSettings) -> Result<(FusionBundle, Option<TrainReport>)> {
    if s.config.learning_rates.is_empty() {
        return Err(Error::InvalidArgument("at least one learning rate is required".into()));
    }
    let train = BenchmarkSplit::load(&s.train)?;
    let val = BenchmarkSplit::load(&s.val)?;
    let record = RunRecord::new("fuse-train", s, s.config.train.seed)?;
    let (mut bundle, report) = train_fusion(s.method, s.variant, &train, &val, &s.config)?;
    bundle.meta.seed = s.config.train.seed;
    bundle.meta.config_hash = Some(record.config_hash.clone());
    let mut a = bundle.to_archive();
    if let Some(r) = &report {
        a.put_bytes("report", serde_json::to_vec(r)?);
    }
    create_parent(&s.out)?;
    a.save(&s.out)?;
    record.write_beside(&s.out)?;
    Ok((bundle, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuseInferSettings {
    pub bundle: PathBuf,
    pub audio: PathBuf,
    pub visual: PathBuf,
    pub out: PathBuf,
    /// Where to write the `N x C` audio attention weights.
    pub attention_out: Option<PathBuf>,
}

/// `<out>` with its extension replaced by `attention.avf`.
pub fn default_attention_path(out: &Path) -> PathBuf {
    out.with_extension("attention.avf")
}

pub fn fuse_infer(s: &FuseInferSettings) -> Result<ScoreMatrix> {
    let bundle = FusionBundle::load(&s.bundle)?;
    let pred = bundle.predict(&read_scores(&s.audio)?, &read_scores(&s.visual)?)?;
    create_parent(&s.out)?;
    write_scores(&s.out, &pred.scores)?;
    if let Some(p) = &s.attention_out {
        let alpha = pred
            .alpha_audio
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} fusion has no attention weights", bundle.meta.method)))?;
        create_parent(p)?;
        write_scores(p, alpha)?;
    }
    RunRecord::new("fuse-infer", s, bundle.meta.seed)?.write_beside(&s.out)?;
    Ok(pred.scores)
}

// ----------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSettings {
    pub scores: PathBuf,
    pub labels: PathBuf,
    /// JSON report destination; nothing is written when absent.
    pub out: Option<PathBuf>,
}

pub fn evaluate_files(s: &EvaluateSettings) -> Result<EvalReport> {
    let report = evaluate(&read_scores(&s.scores)?, &read_labels(&s.labels)?)?;
    if let Some(out) = &s.out {
        create_parent(out)?;
        let mut text = serde_json::to_string_pretty(&report.to_json())?;
        text.push('\n');
        fs::write(out, text).map_err(|e| Error::file(out, e))?;
        RunRecord::new("evaluate", s, 0)?.write_beside(out)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSettings {
    pub fused: PathBuf,
    pub audio: PathBuf,
    pub visual: PathBuf,
    pub labels: PathBuf,
    pub attention: Option<PathBuf>,
    pub out: PathBuf,
    pub bin_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisOutput {
    /// Classes with positives, the only ones with a defined AP.
    pub classes: Vec<usize>,
    pub improvement: ImprovementSummary,
    pub attention: Option<AttentionSummary>,
}

/// Writes `bubble.csv`, `histogram.csv`, `summary.json` and, given
/// attention weights, `attention.csv` into `out`.
pub fn analyze(s: &AnalyzeSettings) -> Result<AnalysisOutput> {
    let labels = read_labels(&s.labels)?;
    let ap = |p: &Path| -> Result<Vec<Option<f64>>> { Ok(evaluate(&read_scores(p)?, &labels)?.ap_vector()) };
    let (fused, audio, visual) = (ap(&s.fused)?, ap(&s.audio)?, ap(&s.visual)?);
    let classes: Vec<usize> = (0..labels.cols()).filter(|&c| fused[c].is_some()).collect();
    let pick = |v: &[Option<f64>]| classes.iter().map(|&c| v[c].unwrap_or(0.0)).collect::<Vec<_>>();
    let (f, a, v) = (pick(&fused), pick(&audio), pick(&visual));
    let hist = improvement_histogram(&f, &a, &v, s.bin_width)?;
    let mut rows = bubble_data(&a, &v, &f)?;
    for (row, &c) in rows.iter_mut().zip(&classes) {
        row.class_id = c;
    }
    create_dir(&s.out)?;
    let csv = |name: &str| -> Result<(PathBuf, fs::File)> {
        let p = s.out.join(name);
        let file = fs::File::create(&p).map_err(|e| Error::file(&p, e))?;
        Ok((p, file))
    };
    write_bubble_csv(&rows, csv("bubble.csv")?.1)?;
    write_histogram_csv(&hist, csv("histogram.csv")?.1)?;
    let attention = match &s.attention {
        Some(p) => {
            let summary = mean_attention_weights(&read_scores(p)?, &labels)?;
            write_attention_csv(&summary, &labels, csv("attention.csv")?.1)?;
            Some(summary)
        }
        None => None,
    };
    let output = AnalysisOutput {
        classes,
        improvement: hist.summary,
        attention,
    };
    let summary = s.out.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&output)?).map_err(|e| Error::file(&summary, e))?;
    RunRecord::new("analyze", s, 0)?.write_beside(&s.out)?;
    Ok(output)
}

// ---------------------------------------------------------------- split

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub val_fraction: f64,
    pub seed: u64,
}

/// Re-tags the non-eval records of a manifest as `train` / `val`.
pub fn split_manifest(s: &SplitSettings) -> Result<Manifest> {
    let mut m = Manifest::load(&s.manifest)?;
    let tags = split(&m, s.val_fraction, s.seed)?;
    for (r, t) in m.records.iter_mut().zip(tags) {
        r.split = Some(t);
    }
    create_parent(&s.out)?;
    m.save(&s.out)?;
    RunRecord::new("split", s, s.seed)?.write_beside(&s.out)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_env() {
        let flags = RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        };
        let file = RunConfig::from_toml("seed = 3\nepochs = 5\ndata_root = \"/from/file\"\n").unwrap();
        let env = RunConfig {
            data_root: Some("/from/env".into()),
            batch_size: Some(9),
            ..RunConfig::default()
        };
        let merged = flags.or(file).or(env);
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.epochs, Some(5));
        assert_eq!(merged.batch_size, Some(9));
        assert_eq!(merged.data_root, Some(PathBuf::from("/from/file")));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = RunConfig::from_toml("sede = 1\n").unwrap_err();
        assert_eq!(err.class().exit_code(), 2);
        let ok = RunConfig::from_toml("method = \"mlp\"\nvariant = \"no-nav\"\nlearning_rates = [0.01]\n").unwrap();
        assert_eq!(ok.method, Some(FusionMethod::Mlp));
        assert_eq!(ok.variant, Some(AttentionVariant::NoNav));
    }

    #[test]
    fn record_hash_tracks_settings() {
        let a = RunRecord::new("synth", &SynthSettings::benchmark("x", 1), 1).unwrap();
        let b = RunRecord::new("synth", &SynthSettings::benchmark("x", 1), 1).unwrap();
        let c = RunRecord::new("synth", &SynthSettings::benchmark("x", 2), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn record_paths() {
        assert_eq!(
            record_path(Path::new("out/model.avf")),
            PathBuf::from("out/model.avf.run.json")
        );
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(record_path(dir.path()), dir.path().join("run.json"));
        assert_eq!(
            default_attention_path(Path::new("a/fused.avf")),
            PathBuf::from("a/fused.attention.avf")
        );
    }

    #[test]
    fn manifest_paths_resolve_against_root_then_manifest_dir() {
        let m = Path::new("/data/lists/m.jsonl");
        assert_eq!(
            manifest_path(None, m, Path::new("a.wav")),
            PathBuf::from("/data/lists/a.wav")
        );
        assert_eq!(
            manifest_path(Some(Path::new("/root")), m, Path::new("a.wav")),
            PathBuf::from("/root/a.wav")
        );
        assert_eq!(
            manifest_path(Some(Path::new("/root")), m, Path::new("/abs.wav")),
            PathBuf::from("/abs.wav")
        );
        assert!(check_id(1, "../x").is_err());
        assert!(check_id(1, "clip_01").is_ok());
    }
}
