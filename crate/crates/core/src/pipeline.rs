//! End-to-end runs driven by one TOML document.
//!
//! ```toml
//! version = 1
//! seed = 7
//! output_dir = "out"
//!
//! [data]
//! accounts = "accounts.csv"
//! edges = "edges.csv"
//! labels = "labels.csv"
//!
//! [augment]
//! mode = "target-ca"
//! patterns = ["P2"]
//!
//! [evaluate]
//! models = ["lr", "svm"]
//! ```
//!
//! Relative paths are resolved against the directory holding the config.
//! Every random choice draws from a stream derived from `seed` and the
//! stage name.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_matrix, Aggregator, AugmentMode, AugmentationConfig};
use crate::embed::{self, SkipGramConfig, WalkConfig, WalkStrategy};
use crate::features::all_node_features;
use crate::graph::io::{load_dataset, write_labels_csv, DatasetPaths, ParseOptions, RecordFormat};
use crate::graph::{sample_negatives, AccountId, BuildOptions, GraphStats, HetGraph, Label};
use crate::matrix::FeatureMatrix;
use crate::metapath::{compile_pattern, MatchLimits};
use crate::mlkit::{self, CvConfig, CvReport, Dataset, GainRow, Hyper, ModelKind};
use crate::seed::derive_seed;

pub const CONFIG_VERSION: u32 = 1;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            PipelineError::Config(_) => None,
        }
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub accounts: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    /// `csv` or `jsonl`; taken from the file extension when unset.
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default)]
    pub drop_call_into_eoa: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    #[default]
    Manual,
    Embedding,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Manual => "manual",
            FeatureSource::Embedding => "embedding",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub source: FeatureSource,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            source: FeatureSource::Manual,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// `deepwalk` or `node2vec`.
    pub strategy: String,
    pub p: f64,
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub undirected: bool,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub workers: usize,
    pub normalize: bool,
    /// Pick (p, q) from {0.5, 1, 2}² by cross-validated score of the
    /// first model before the main run.
    pub grid_search: bool,
}

impl Default for EmbedSection {
    fn default() -> Self {
        let w = WalkConfig::default();
        let s = SkipGramConfig::default();
        EmbedSection {
            strategy: "deepwalk".into(),
            p: 1.0,
            q: 1.0,
            walks_per_node: w.walks_per_node,
            walk_length: w.walk_length,
            undirected: w.undirected,
            dim: s.dim,
            window: s.window,
            negatives: s.negatives,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            workers: s.workers,
            normalize: s.normalize,
            grid_search: false,
        }
    }
}

impl EmbedSection {
    pub fn walk_config(&self, seed: u64) -> Result<WalkConfig, String> {
        let strategy = match self.strategy.to_ascii_lowercase().as_str() {
            "deepwalk" | "uniform" => WalkStrategy::Uniform,
            "node2vec" => WalkStrategy::Node2Vec {
                p: self.p,
                q: self.q,
            },
            other => return Err(format!("unknown walk strategy `{other}`")),
        };
        let cfg = WalkConfig {
            walks_per_node: self.walks_per_node,
            walk_length: self.walk_length,
            strategy,
            seed,
            undirected: self.undirected,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn skipgram_config(&self, seed: u64) -> Result<SkipGramConfig, String> {
        let cfg = SkipGramConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            workers: self.workers,
            normalize: self.normalize,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSet {
    /// Only the accounts used for classification.
    #[default]
    Samples,
    /// Every account compatible with the mode.
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub mode: String,
    pub patterns: Vec<String>,
    pub max_instances: usize,
    pub dedupe: bool,
    pub aggregator: String,
    pub targets: TargetSet,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            mode: "target-ca".into(),
            patterns: vec!["P1".into(), "P2".into()],
            max_instances: MatchLimits::default().max_instances,
            dedupe: true,
            aggregator: "sum".into(),
            targets: TargetSet::Samples,
        }
    }
}

impl AugmentSection {
    pub fn to_config(&self) -> Result<AugmentationConfig, String> {
        let mode: AugmentMode = self.mode.parse()?;
        let patterns = self
            .patterns
            .iter()
            .map(|p| compile_pattern(p).map_err(|e| format!("pattern `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = AugmentationConfig {
            mode,
            patterns,
            limits: MatchLimits {
                max_instances: self.max_instances,
            },
            dedupe: self.dedupe,
            aggregator: self.aggregator.parse::<Aggregator>()?,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSource {
    /// As many non-Ponzi contracts as Ponzi labels, drawn at random.
    #[default]
    Sampled,
    /// Every account labeled non-Ponzi.
    Labeled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Vec<String>,
    pub k: usize,
    pub repeats: usize,
    pub standardize: bool,
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: NegativeSource,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let h = Hyper::default();
        let cv = CvConfig::default();
        EvaluateSection {
            models: vec!["lr".into(), "svm".into()],
            k: cv.k,
            repeats: cv.repeats,
            standardize: cv.standardize,
            l2: h.l2,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            negatives: NegativeSource::Sampled,
        }
    }
}

impl EvaluateSection {
    pub fn models(&self) -> Result<Vec<ModelKind>, String> {
        if self.models.is_empty() {
            return Err("evaluate.models is empty".into());
        }
        self.models.iter().map(|m| m.parse()).collect()
    }

    pub fn hyper(&self, seed: u64) -> Hyper {
        Hyper {
            l2: self.l2,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: None,
            seed,
        }
    }

    pub fn cv(&self, seed: u64) -> CvConfig {
        CvConfig {
            k: self.k,
            repeats: self.repeats,
            seed,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproductionSection {
    /// Fail ingest unless the data has the reference dataset's counts.
    pub check_reference_counts: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub reproduction: ReproductionSection,
}

impl PipelineConfig {
    /// Parses a config; relative paths are joined onto `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        resolve(&mut cfg.data.accounts);
        resolve(&mut cfg.data.edges);
        resolve(&mut cfg.data.labels);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Checks every stage section without touching the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = PipelineError::Config;
        if let Some(f) = &self.data.format {
            RecordFormat::parse(f).ok_or_else(|| bad(format!("unknown record format `{f}`")))?;
        }
        self.embed.walk_config(0).map_err(bad)?;
        self.embed.skipgram_config(0).map_err(bad)?;
        self.augment.to_config().map_err(bad)?;
        self.evaluate.models().map_err(bad)?;
        self.evaluate.hyper(0).validate().map_err(|e| bad(e.to_string()))?;
        if self.evaluate.k < 2 || self.evaluate.repeats == 0 {
            return Err(bad("evaluate.k must be at least 2 and repeats at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct StatsArtifact {
    pub stats: GraphStats,
    pub ingest: crate::graph::io::IngestReport,
    pub reference_check: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub output_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub stats: GraphStats,
    pub gains: Vec<GainRow>,
    pub grid: Option<embed::GridResult>,
}

struct Out {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Out {
    fn create(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), BoxError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn matrix(&mut self, name: &str, m: &FeatureMatrix) -> Result<(), BoxError> {
        let mut w = self.create(name)?;
        m.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Positive and negative accounts used for classification, positives first.
pub fn classification_samples(
    g: &HetGraph,
    source: NegativeSource,
    seed: u64,
) -> Result<Vec<(AccountId, u8)>, crate::graph::GraphError> {
    let mut samples: Vec<(AccountId, u8)> = g.labels().ponzi().map(|id| (id.clone(), 1)).collect();
    match source {
        NegativeSource::Sampled => {
            samples.extend(sample_negatives(g, seed)?.into_iter().map(|id| (id, 0)));
        }
        NegativeSource::Labeled => samples.extend(
            g.labels()
                .iter()
                .filter(|(_, l)| *l == Label::NonPonzi)
                .map(|(id, _)| (id.clone(), 0)),
        ),
    }
    Ok(samples)
}

/// Runs ingest, features, augmentation and evaluation, writing every
/// artifact into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    cfg.validate()?;
    let seed = cfg.seed;
    std::fs::create_dir_all(&cfg.output_dir).stage("output")?;
    let mut out = Out {
        dir: cfg.output_dir.clone(),
        written: Vec::new(),
    };

    // ingest
    let format = cfg.data.format.as_deref().and_then(RecordFormat::parse);
    let paths = DatasetPaths {
        accounts: &cfg.data.accounts,
        edges: &cfg.data.edges,
        labels: Some(&cfg.data.labels),
    };
    let (het, ingest) = load_dataset(
        &paths,
        format,
        ParseOptions {
            lenient: cfg.data.lenient,
        },
        BuildOptions {
            drop_call_into_eoa: cfg.data.drop_call_into_eoa,
        },
    )
    .stage("ingest")?;
    let stats = het.stats();
    let reference_check = if cfg.reproduction.check_reference_counts {
        let diffs: Vec<String> = stats
            .mismatches(&GraphStats::REFERENCE_DATASET)
            .into_iter()
            .map(|(name, got, want)| format!("{name}: found {got}, expected {want}"))
            .collect();
        if !diffs.is_empty() {
            return Err(format!(
                "dataset does not match the reference counts ({})",
                diffs.join("; ")
            ))
            .stage("ingest");
        }
        Some(diffs)
    } else {
        None
    };
    log::info!(
        "ingest: {} nodes, {} trans edges, {} call edges, {} ponzi labels",
        stats.nodes,
        stats.trans_edges,
        stats.call_edges,
        stats.ponzi_labels
    );
    out.json(
        "graph_stats.json",
        &StatsArtifact {
            stats,
            ingest,
            reference_check,
        },
    )
    .stage("ingest")?;
    let hom = het.project_hom();

    let samples =
        classification_samples(&het, cfg.evaluate.negatives, derive_seed(seed, "negatives"))
            .stage("dataset")?;
    {
        let labeled: Vec<(AccountId, Label)> = samples
            .iter()
            .map(|(id, y)| (id.clone(), if *y == 1 { Label::Ponzi } else { Label::NonPonzi }))
            .collect();
        let w = out.create("dataset.csv").stage("dataset")?;
        write_labels_csv(w, labeled.iter().map(|(id, l)| (id, *l))).stage("dataset")?;
    }

    let models = cfg.evaluate.models().map_err(PipelineError::Config)?;
    let hyper = cfg.evaluate.hyper(derive_seed(seed, "fit"));
    let cv = cfg.evaluate.cv(derive_seed(seed, "cv"));

    // features
    let mut grid = None;
    let raw = match cfg.features.source {
        FeatureSource::Manual => all_node_features(&hom),
        FeatureSource::Embedding => {
            let mut walk = cfg
                .embed
                .walk_config(derive_seed(seed, "walks"))
                .map_err(PipelineError::Config)?;
            let sg = cfg
                .embed
                .skipgram_config(derive_seed(seed, "skipgram"))
                .map_err(PipelineError::Config)?;
            if cfg.embed.grid_search {
                let result = embed::grid_pq(
                    &hom,
                    &samples,
                    &walk,
                    &sg,
                    models[0],
                    &hyper,
                    &cv,
                    &embed::PQ_GRID,
                )
                .stage("embed")?;
                walk.strategy = WalkStrategy::Node2Vec {
                    p: result.best.p,
                    q: result.best.q,
                };
                grid = Some(result);
            }
            let emb = embed::embed_graph(&hom, &walk, &sg).stage("embed")?;
            out.json(
                "embed_report.json",
                &serde_json::json!({
                    "walk": walk,
                    "skipgram": sg,
                    "epoch_loss": emb.epoch_loss,
                    "absent_nodes": emb.absent,
                    "grid": grid,
                }),
            )
            .stage("embed")?;
            emb.matrix
        }
    };
    out.matrix("features_raw.csv", &raw).stage("features")?;

    // augment
    let aug_cfg = cfg.augment.to_config().map_err(PipelineError::Config)?;
    let targets: Vec<AccountId> = match cfg.augment.targets {
        TargetSet::Samples => samples.iter().map(|(id, _)| id.clone()).collect(),
        TargetSet::All => het
            .nodes()
            .nodes()
            .filter(|v| {
                aug_cfg.mode == AugmentMode::HeadNode
                    || het.kind(*v) == crate::graph::AccountKind::Ca
            })
            .map(|v| het.nodes().id(v).clone())
            .collect(),
    };
    let (augmented, report) = augment_matrix(&het, &raw, &targets, &aug_cfg).stage("augment")?;
    out.matrix("features_augmented.csv", &augmented).stage("augment")?;
    out.json("augment_diagnostics.json", &report).stage("augment")?;

    // evaluate
    let raw_ds = Dataset::from_samples(&raw, &samples).stage("evaluate")?;
    let aug_ds = Dataset::from_samples(&augmented, &samples).stage("evaluate")?;
    let mut gains = Vec::new();
    for model in &models {
        let raw_report: CvReport =
            mlkit::cross_validate(&raw_ds, *model, &hyper, &cv).stage("evaluate")?;
        let aug_report: CvReport =
            mlkit::cross_validate(&aug_ds, *model, &hyper, &cv).stage("evaluate")?;
        out.json(&format!("cv_raw_{}.json", model.short()), &raw_report)
            .stage("evaluate")?;
        out.json(&format!("cv_augmented_{}.json", model.short()), &aug_report)
            .stage("evaluate")?;
        gains.push(
            mlkit::compare_reports(cfg.features.source.as_str(), &raw_report, &aug_report)
                .stage("report")?,
        );
    }
    out.json("gain_table.json", &gains).stage("report")?;
    {
        let mut w = out.create("gain_table.txt").stage("report")?;
        w.write_all(mlkit::render_gain_table(&gains).as_bytes())
            .and_then(|_| w.flush())
            .stage("report")?;
    }

    Ok(PipelineSummary {
        output_dir: out.dir,
        artifacts: out.written,
        stats,
        gains,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
version = 1
output_dir = "out"
[data]
accounts = "a.csv"
edges = "e.csv"
labels = "l.csv"
"#,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.data.accounts, Path::new("/base/a.csv"));
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
        assert_eq!(cfg.augment.patterns, vec!["P1", "P2"]);
        assert_eq!(cfg.evaluate.k, 5);
        assert_eq!(cfg.evaluate.repeats, 10);
        assert_eq!(cfg.features.source, FeatureSource::Manual);
    }

    #[test]
    fn version_is_required_and_checked() {
        let text = r#"
output_dir = "out"
[data]
accounts = "a.csv"
edges = "e.csv"
labels = "l.csv"
"#;
        assert!(matches!(
            PipelineConfig::from_toml(text, Path::new(".")),
            Err(PipelineError::Config(_))
        ));
        let v2 = format!("version = 2\n{text}");
        let err = PipelineConfig::from_toml(&v2, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let base = r#"
version = 1
output_dir = "out"
[data]
accounts = "a.csv"
edges = "e.csv"
labels = "l.csv"
"#;
        for extra in [
            "[augment]\nmode = \"sideways\"",
            "[augment]\npatterns = [\"CA -call-> EOA\"]",
            "[evaluate]\nmodels = [\"rf\"]",
            "[embed]\nstrategy = \"node2vec\"\np = 0.0",
            "[features]\nsource = \"magic\"",
            "[evaluate]\nunknown_key = 1",
        ] {
            let text = format!("{base}{extra}\n");
            assert!(
                PipelineConfig::from_toml(&text, Path::new(".")).is_err(),
                "{extra}"
            );
        }
    }
}
