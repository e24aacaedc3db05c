//! End-to-end evaluation: unimodal arms, early fusion (concatenated inputs),
//! late fusion (combined conformal p-values), winner selection, and a
//! persisted bundle for single-design detection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::conformal::{
    calibrate, combine_p_values, nonconformity, point_prediction, prediction_region, region_stats,
    CalibrationTable, ClassPValues, Combiner, ConformalConfig, ConformalError, RegionStats,
};
use crate::dataset::{ClassLabel, Dataset, DatasetError, Modality, SplitIndices, SplitSpec};
use crate::features::{
    build_dataflow_graph, extract_branching_features, extract_graph_features, NormStats,
    NormalizeError,
};
use crate::gan::{augment_to_target, impute_missing, GanConfig, GanError};
use crate::metrics::{metrics_bundle, MetricsBundle, MetricsError, ProbForecast};
use crate::mlp::{fit, Activation, MlpConfig, MlpError, MlpModel};
use crate::rtl::{parse, FrontendError, ParseMode};
use crate::seed::{derive_seed, rng, sha256_hex};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const BUNDLE_FORMAT: &str = "htdetect-bundle/1";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Classifier(#[from] MlpError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Parse(#[from] FrontendError),
    #[error("missing result for the {0} arm")]
    MissingArm(Arm),
    #[error("bundle rejected: {0}")]
    Bundle(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

impl PipelineError {
    /// Training blew up rather than the inputs being wrong.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            PipelineError::Classifier(MlpError::Divergence { .. })
                | PipelineError::Conformal(ConformalError::Scorer(MlpError::Divergence { .. }))
                | PipelineError::Gan(GanError::Divergence { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Tabular,
    Graph,
    Early,
    Late,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Tabular, Arm::Graph, Arm::Early, Arm::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Tabular => "tabular",
            Arm::Graph => "graph",
            Arm::Early => "early",
            Arm::Late => "late",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the Brier-score probability of TI is derived for each test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbRule {
    /// p̂_TI / (p̂_TF + p̂_TI) from the (combined) conformal p-values.
    #[default]
    NormalizedPValue,
    /// Mean scorer softmax output; late fusion averages the modalities.
    RawSoftmax,
}

/// Classifier settings for one arm; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            activation: Activation::Tanh,
            epochs: 150,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 1e-4,
        }
    }
}

impl ScorerConfig {
    pub fn mlp(&self, input_dim: usize, seed: u64) -> MlpConfig {
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend(&self.hidden);
        layer_sizes.push(2);
        MlpConfig {
            layer_sizes,
            activation: self.activation,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            l2: self.l2,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            train: s.train,
            calibration: s.calibration,
            test: s.test,
            stratified: s.stratified,
        }
    }
}

impl SplitConfig {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train: self.train,
            calibration: self.calibration,
            test: self.test,
            stratified: self.stratified,
            seed,
        }
    }
}

/// Imputation plus GAN augmentation applied before splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub target_total: usize,
    pub balance: f64,
    pub gan: GanConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_total: 500,
            balance: 0.5,
            gan: GanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; the split, scorer, GAN and τ streams all derive from it.
    pub seed: u64,
    pub split: SplitConfig,
    /// `None` runs on the dataset as given.
    pub augmentation: Option<AugmentConfig>,
    pub tabular: ScorerConfig,
    pub graph: ScorerConfig,
    pub early: ScorerConfig,
    pub conformal: ConformalConfig,
    pub prob_rule: ProbRule,
    pub calibration_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: SplitConfig::default(),
            augmentation: None,
            tabular: ScorerConfig::default(),
            graph: ScorerConfig::default(),
            early: ScorerConfig::default(),
            conformal: ConformalConfig::default(),
            prob_rule: ProbRule::default(),
            calibration_bins: 10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.split
            .spec(self.seed)
            .validate()
            .map_err(|e| cfg(e.to_string()))?;
        for (name, s) in [("tabular", &self.tabular), ("graph", &self.graph), ("early", &self.early)] {
            s.mlp(1, 0)
                .validate()
                .map_err(|e| cfg(format!("{name}: {e}")))?;
        }
        self.conformal.validate().map_err(|e| cfg(e.to_string()))?;
        if let Some(a) = &self.augmentation {
            a.gan.validate().map_err(|e| cfg(format!("augmentation: {e}")))?;
            if !(a.balance > 0.0 && a.balance < 1.0) {
                return Err(cfg(format!("augmentation balance {} is outside (0, 1)", a.balance)));
            }
        }
        if self.calibration_bins < 2 {
            return Err(cfg("calibration_bins must be at least 2".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn scorer(&self, key: &str) -> &ScorerConfig {
        match key {
            "tabular" => &self.tabular,
            "graph" => &self.graph,
            _ => &self.early,
        }
    }

    /// Every derived seed, keyed by purpose.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::from([
            ("root".to_string(), self.seed),
            ("split".to_string(), derive_seed(self.seed, "split")),
            ("gan".to_string(), derive_seed(self.seed, "gan")),
        ]);
        for t in 0..self.conformal.ensemble_size {
            s.insert(format!("scorer/{t}"), scorer_seed(self.seed, t));
        }
        for key in ["tabular", "graph", "early"] {
            s.insert(format!("tau/{key}"), derive_seed(self.seed, &format!("tau/{key}")));
        }
        s
    }
}

/// Scorer `t` gets the same seed in every arm.
fn scorer_seed(seed: u64, t: usize) -> u64 {
    derive_seed(seed, &format!("scorer/{t}"))
}

/// Trained scorers, calibration table and normalization for one input
/// layout: a single modality, or the concatenation used by early fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub key: String,
    pub inputs: Vec<Modality>,
    pub norms: Vec<NormStats>,
    pub scorers: Vec<MlpModel>,
    pub table: CalibrationTable,
}

impl Component {
    fn input(&self, raw: &BTreeMap<Modality, Vec<f64>>, design_id: &str) -> Result<Vec<f64>, PipelineError> {
        let mut x = Vec::new();
        for (m, n) in self.inputs.iter().zip(&self.norms) {
            let v = raw.get(m).ok_or_else(|| DatasetError::MissingModality {
                design_id: design_id.to_string(),
                modality: *m,
            })?;
            x.extend(n.apply(v)?);
        }
        Ok(x)
    }

    /// Per-class p-values and mean softmax P(TI) for a normalized input.
    fn score(&self, x: &[f64], smoothing: bool, tau: f64) -> Result<(ClassPValues, f64), PipelineError> {
        let mut p = [0.0; 2];
        for c in ClassLabel::ALL {
            let s = nonconformity(&self.scorers, x, c)?;
            p[c.index()] = self.table.p_value(s, c, smoothing, tau)?;
        }
        let mut soft = 0.0;
        for s in &self.scorers {
            soft += s.predict_proba(x)?[ClassLabel::TI.index()];
        }
        Ok((ClassPValues::new(p), soft / self.scorers.len() as f64))
    }
}

/// Dataset plus its split, shared by every arm.
struct Prepared<'a> {
    data: &'a Dataset,
    split: SplitIndices,
    /// Test indices ordered by design id.
    test: Vec<usize>,
}

impl<'a> Prepared<'a> {
    fn new(data: &'a Dataset, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let split = crate::dataset::split_indices(data, &cfg.split.spec(derive_seed(cfg.seed, "split")))?;
        split.assert_disjoint(data.len());
        let mut test = split.test.clone();
        test.sort_by(|&a, &b| data.samples()[a].design_id.cmp(&data.samples()[b].design_id));
        Ok(Self { data, split, test })
    }

    fn fit(&self, key: &str, inputs: &[Modality], cfg: &PipelineConfig) -> Result<Component, PipelineError> {
        let mut columns = Vec::new();
        let mut norms = Vec::new();
        let mut labels = Vec::new();
        for m in inputs {
            let (xs, ys) = self.data.matrix(*m)?;
            let train: Vec<Vec<f64>> = self.split.train.iter().map(|&i| xs[i].clone()).collect();
            let stats = NormStats::fit(&train)?;
            columns.push(stats.apply_all(&xs)?);
            norms.push(stats);
            labels = ys;
        }
        let joined: Vec<Vec<f64>> = (0..self.data.len())
            .map(|i| columns.iter().flat_map(|c| c[i].iter().copied()).collect())
            .collect();
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<ClassLabel>) {
            (idx.iter().map(|&i| joined[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
        };
        let (xt, yt) = pick(&self.split.train);
        let (xc, yc) = pick(&self.split.calibration);
        let dim = joined.first().map_or(0, Vec::len);
        let scorers = (0..cfg.conformal.ensemble_size)
            .map(|t| fit(&xt, &yt, &cfg.scorer(key).mlp(dim, scorer_seed(cfg.seed, t))))
            .collect::<Result<Vec<_>, _>>()?;
        let table = calibrate(&scorers, &xc, &yc, key)?;
        Ok(Component {
            key: key.to_string(),
            inputs: inputs.to_vec(),
            norms,
            scorers,
            table,
        })
    }

    /// (p-values, softmax P(TI)) per test sample, in `self.test` order.
    fn scores(&self, c: &Component, cfg: &PipelineConfig) -> Result<Vec<(ClassPValues, f64)>, PipelineError> {
        let mut taus = rng(derive_seed(cfg.seed, &format!("tau/{}", c.key)));
        self.test
            .iter()
            .map(|&i| {
                let s = &self.data.samples()[i];
                let x = c.input(&s.modalities, &s.design_id)?;
                c.score(&x, cfg.conformal.smoothing, taus.random::<f64>())
            })
            .collect()
    }

    fn result(
        &self,
        arm: Arm,
        scores: Vec<(ClassPValues, f64)>,
        cfg: &PipelineConfig,
    ) -> Result<FusionResult, PipelineError> {
        let e = cfg.conformal.confidence;
        let mut rows = Vec::with_capacity(scores.len());
        for (&i, (p, soft)) in self.test.iter().zip(scores) {
            let s = &self.data.samples()[i];
            let region = prediction_region(p, e);
            rows.push(PredictionRow {
                design_id: s.design_id.clone(),
                truth: s.label,
                p_values: p,
                prob_ti: match cfg.prob_rule {
                    ProbRule::NormalizedPValue => p.ti / (p.tf + p.ti),
                    ProbRule::RawSoftmax => soft,
                },
                point_prediction: point_prediction(p),
                empty: region.empty,
                uncertain: region.uncertain,
                region: region.labels,
            });
        }
        FusionResult::from_rows(arm, e, rows, cfg.calibration_bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub design_id: String,
    pub truth: ClassLabel,
    pub p_values: ClassPValues,
    /// Probability of TI fed to the Brier score.
    pub prob_ti: f64,
    pub region: Vec<ClassLabel>,
    pub empty: bool,
    pub uncertain: bool,
    pub point_prediction: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub arm: Arm,
    pub confidence: f64,
    pub rows: Vec<PredictionRow>,
    pub region_stats: RegionStats,
    pub metrics: MetricsBundle,
}

impl FusionResult {
    fn from_rows(arm: Arm, confidence: f64, rows: Vec<PredictionRow>, bins: usize) -> Result<Self, PipelineError> {
        let truths: Vec<ClassLabel> = rows.iter().map(|r| r.truth).collect();
        let regions: Vec<_> = rows
            .iter()
            .map(|r| prediction_region(r.p_values, confidence))
            .collect();
        let points: Vec<ClassLabel> = rows.iter().map(|r| r.point_prediction).collect();
        let forecast = ProbForecast::from_labels(rows.iter().map(|r| r.prob_ti).collect(), &truths)?;
        Ok(Self {
            arm,
            confidence,
            region_stats: region_stats(&regions, &truths)?,
            metrics: metrics_bundle(&forecast, Some(&points), bins)?,
            rows,
        })
    }

    pub fn brier(&self) -> f64 {
        self.metrics.brier
    }

    pub fn forecast(&self) -> ProbForecast {
        ProbForecast::from_labels(
            self.rows.iter().map(|r| r.prob_ti).collect(),
            &self.rows.iter().map(|r| r.truth).collect::<Vec<_>>(),
        )
        .expect("rows hold valid probabilities")
    }
}

/// Apply the configured imputation and augmentation, if any.
pub fn prepare_dataset(d: &Dataset, cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    match &cfg.augmentation {
        None => Ok(d.clone()),
        Some(a) => {
            let gan = GanConfig {
                seed: derive_seed(cfg.seed, "gan"),
                ..a.gan.clone()
            };
            let filled = impute_missing(d, &gan)?;
            Ok(augment_to_target(&filled, a.target_total.max(filled.len()), a.balance, &gan)?)
        }
    }
}

fn late(p: &Prepared, tab: &Component, graph: &Component, cfg: &PipelineConfig) -> Result<FusionResult, PipelineError> {
    let a = p.scores(tab, cfg)?;
    let b = p.scores(graph, cfg)?;
    let combined = a
        .iter()
        .zip(&b)
        .map(|((pa, sa), (pb, sb))| {
            let mut out = [0.0; 2];
            for c in ClassLabel::ALL {
                out[c.index()] = combine_p_values(&[pa.get(c), pb.get(c)], cfg.conformal.combiner)?;
            }
            Ok((ClassPValues::new(out), (sa + sb) / 2.0))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    p.result(Arm::Late, combined, cfg)
}

fn key_of(m: Modality) -> &'static str {
    m.as_str()
}

/// One modality: split, train, calibrate, score the test split.
pub fn run_unimodal(d: &Dataset, modality: Modality, cfg: &PipelineConfig) -> Result<FusionResult, PipelineError> {
    cfg.validate()?;
    let d = prepare_dataset(d, cfg)?;
    let p = Prepared::new(&d, cfg)?;
    let c = p.fit(key_of(modality), &[modality], cfg)?;
    let arm = match modality {
        Modality::Tabular => Arm::Tabular,
        Modality::Graph => Arm::Graph,
    };
    p.result(arm, p.scores(&c, cfg)?, cfg)
}

/// Normalized tabular ++ graph vectors through one scorer and one ICP.
pub fn run_early_fusion(d: &Dataset, cfg: &PipelineConfig) -> Result<FusionResult, PipelineError> {
    cfg.validate()?;
    let d = prepare_dataset(d, cfg)?;
    let p = Prepared::new(&d, cfg)?;
    let c = p.fit("early", &Modality::ALL, cfg)?;
    p.result(Arm::Early, p.scores(&c, cfg)?, cfg)
}

/// One ICP per modality, p-values combined per class.
pub fn run_late_fusion(d: &Dataset, cfg: &PipelineConfig) -> Result<FusionResult, PipelineError> {
    cfg.validate()?;
    let d = prepare_dataset(d, cfg)?;
    let p = Prepared::new(&d, cfg)?;
    for m in Modality::ALL {
        d.matrix(m)?;
    }
    let (tab, graph) = rayon::join(
        || p.fit("tabular", &[Modality::Tabular], cfg),
        || p.fit("graph", &[Modality::Graph], cfg),
    );
    late(&p, &tab?, &graph?, cfg)
}

/// Lower Brier wins; a tie goes to late fusion.
pub fn pick_winner(early_brier: f64, late_brier: f64) -> Arm {
    if early_brier < late_brier {
        Arm::Early
    } else {
        Arm::Late
    }
}

/// Winning fusion arm among the results; unimodal arms are not eligible.
pub fn select_winner(results: &BTreeMap<Arm, FusionResult>) -> Result<Arm, PipelineError> {
    let brier = |a: Arm| results.get(&a).map(FusionResult::brier).ok_or(PipelineError::MissingArm(a));
    Ok(pick_winner(brier(Arm::Early)?, brier(Arm::Late)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerReport {
    pub tool_version: String,
    pub winner: Arm,
    pub brier: BTreeMap<Arm, f64>,
    pub metrics: BTreeMap<Arm, MetricsBundle>,
    pub region_stats: BTreeMap<Arm, RegionStats>,
    /// Class counts of the evaluated dataset (after any augmentation).
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Filled in by the caller; keyed by role.
    pub input_hashes: BTreeMap<String, String>,
}

pub struct PipelineOutcome {
    pub results: BTreeMap<Arm, FusionResult>,
    pub report: WinnerReport,
    pub bundle: ModelBundle,
}

/// All four arms on one split, winner selection and the winner's bundle.
pub fn run_all(d: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let d = prepare_dataset(d, cfg)?;
    for m in Modality::ALL {
        d.matrix(m)?;
    }
    let p = Prepared::new(&d, cfg)?;
    let ((tab, graph), early) = rayon::join(
        || {
            rayon::join(
                || p.fit("tabular", &[Modality::Tabular], cfg),
                || p.fit("graph", &[Modality::Graph], cfg),
            )
        },
        || p.fit("early", &Modality::ALL, cfg),
    );
    let (tab, graph, early) = (tab?, graph?, early?);
    let mut results = BTreeMap::new();
    results.insert(Arm::Tabular, p.result(Arm::Tabular, p.scores(&tab, cfg)?, cfg)?);
    results.insert(Arm::Graph, p.result(Arm::Graph, p.scores(&graph, cfg)?, cfg)?);
    results.insert(Arm::Early, p.result(Arm::Early, p.scores(&early, cfg)?, cfg)?);
    results.insert(Arm::Late, late(&p, &tab, &graph, cfg)?);
    let winner = select_winner(&results)?;
    let counts = d.class_counts();
    let report = WinnerReport {
        tool_version: TOOL_VERSION.to_string(),
        winner,
        brier: results.iter().map(|(a, r)| (*a, r.brier())).collect(),
        metrics: results.iter().map(|(a, r)| (*a, r.metrics.clone())).collect(),
        region_stats: results.iter().map(|(a, r)| (*a, r.region_stats.clone())).collect(),
        class_counts: ClassLabel::ALL.into_iter().map(|c| (c, counts[c.index()])).collect(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds(),
        input_hashes: BTreeMap::new(),
    };
    let components = match winner {
        Arm::Early => vec![early],
        _ => vec![tab, graph],
    };
    let bundle = ModelBundle::seal(winner, cfg, d.schemas().clone(), components);
    Ok(PipelineOutcome {
        results,
        report,
        bundle,
    })
}

/// Everything `detect` needs, with a content hash over the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: String,
    pub tool_version: String,
    pub arm: Arm,
    pub seed: u64,
    pub combiner: Combiner,
    pub smoothing: bool,
    pub config_hash: String,
    pub schemas: BTreeMap<Modality, usize>,
    pub components: Vec<Component>,
    pub content_hash: String,
}

impl ModelBundle {
    fn seal(arm: Arm, cfg: &PipelineConfig, schemas: BTreeMap<Modality, usize>, components: Vec<Component>) -> Self {
        let mut b = Self {
            format: BUNDLE_FORMAT.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            arm,
            seed: cfg.seed,
            combiner: cfg.conformal.combiner,
            smoothing: cfg.conformal.smoothing,
            config_hash: cfg.hash(),
            schemas,
            components,
            content_hash: String::new(),
        };
        b.content_hash = b.compute_hash();
        b
    }

    /// sha256 of the JSON encoding with an empty `content_hash`.
    pub fn compute_hash(&self) -> String {
        let mut unsealed = self.clone();
        unsealed.content_hash.clear();
        sha256_hex(&serde_json::to_vec(&unsealed).expect("bundle serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// Parse and verify format and content hash.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let b: ModelBundle =
            serde_json::from_str(text).map_err(|e| PipelineError::Bundle(format!("unreadable: {e}")))?;
        if b.format != BUNDLE_FORMAT {
            return Err(PipelineError::Bundle(format!("unsupported format `{}`", b.format)));
        }
        let h = b.compute_hash();
        if h != b.content_hash {
            return Err(PipelineError::Bundle(format!(
                "content hash mismatch: recorded {}, computed {h}",
                b.content_hash
            )));
        }
        if b.components.is_empty() {
            return Err(PipelineError::Bundle("no components".into()));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub design_id: String,
    pub point_prediction: ClassLabel,
    pub region: Vec<ClassLabel>,
    pub p_values: ClassPValues,
    #[serde(rename = "confidence_E")]
    pub confidence: f64,
    pub empty: bool,
    pub uncertain: bool,
    pub arm: Arm,
    pub model_hash: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub input_hash: String,
}

/// Feature vectors of one Verilog source, keyed by modality.
pub fn featurize_source(source: &str, mode: ParseMode) -> Result<BTreeMap<Modality, Vec<f64>>, PipelineError> {
    let ast = parse(source, mode)?;
    Ok(BTreeMap::from([
        (Modality::Tabular, extract_branching_features(&ast).to_vec()),
        (Modality::Graph, extract_graph_features(&build_dataflow_graph(&ast).0).to_vec()),
    ]))
}

/// Classify one design with a persisted bundle.
pub fn detect(bundle: &ModelBundle, design_id: &str, source: &str, confidence: f64) -> Result<DetectionReport, PipelineError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(PipelineError::Config(format!("confidence {confidence} is outside (0, 1)")));
    }
    let raw = featurize_source(source, ParseMode::Strict)?;
    for (m, v) in &raw {
        if let Some(w) = bundle.schemas.get(m) {
            if *w != v.len() {
                return Err(PipelineError::SchemaMismatch(format!(
                    "{m}: bundle expects {w} slots, extractor produced {}",
                    v.len()
                )));
            }
        }
    }
    for c in &bundle.components {
        for (m, n) in c.inputs.iter().zip(&c.norms) {
            if bundle.schemas.get(m) != Some(&n.dim()) {
                return Err(PipelineError::SchemaMismatch(format!(
                    "component {} normalizes {m} with {} slots",
                    c.key,
                    n.dim()
                )));
            }
        }
    }
    let input_hash = sha256_hex(source.as_bytes());
    let mut per = Vec::with_capacity(bundle.components.len());
    for c in &bundle.components {
        let tau = rng(derive_seed(bundle.seed, &format!("detect/{}/{input_hash}", c.key))).random::<f64>();
        per.push(c.score(&c.input(&raw, design_id)?, bundle.smoothing, tau)?.0);
    }
    let mut p = [0.0; 2];
    for c in ClassLabel::ALL {
        let ps: Vec<f64> = per.iter().map(|x| x.get(c)).collect();
        p[c.index()] = combine_p_values(&ps, bundle.combiner)?;
    }
    let p = ClassPValues::new(p);
    let region = prediction_region(p, confidence);
    Ok(DetectionReport {
        design_id: design_id.to_string(),
        point_prediction: point_prediction(p),
        region: region.labels,
        p_values: p,
        confidence,
        empty: region.empty,
        uncertain: region.uncertain,
        arm: bundle.arm,
        model_hash: bundle.content_hash.clone(),
        tool_version: TOOL_VERSION.to_string(),
        config_hash: bundle.config_hash.clone(),
        seed: bundle.seed,
        input_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, LabeledSample};

    fn quick() -> PipelineConfig {
        let s = ScorerConfig {
            epochs: 60,
            ..ScorerConfig::default()
        };
        PipelineConfig {
            seed: 11,
            tabular: s.clone(),
            graph: s.clone(),
            early: s,
            ..PipelineConfig::default()
        }
    }

    /// Features equal to the label plus tiny jitter.
    fn separable(n: usize) -> Dataset {
        let mut d = Dataset::new(BTreeMap::from([(Modality::Tabular, 3), (Modality::Graph, 2)]));
        let mut r = rng(4);
        for i in 0..n {
            let y = if i % 2 == 0 { ClassLabel::TF } else { ClassLabel::TI };
            let v = y.index() as f64;
            let mut j = || v + 0.01 * r.random::<f64>();
            let tab = vec![j(), j(), j()];
            let graph = vec![j(), j()];
            d.push(
                LabeledSample::new(format!("s{i:03}"), y)
                    .with(Modality::Tabular, tab)
                    .with(Modality::Graph, graph),
            )
            .unwrap();
        }
        d
    }

    #[test]
    fn synthetic_tabular_arm_beats_no_skill() {
        let (_, d) = synth_generate(200, 0.5, 11);
        let r = run_unimodal(&d, Modality::Tabular, &quick()).unwrap();
        assert!(r.brier() > 0.0 && r.brier() < 0.25, "{}", r.brier());
        assert_eq!(r.rows.len(), 40);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.prob_ti)));
    }

    #[test]
    fn separable_data_gives_low_brier() {
        let r = run_unimodal(&separable(200), Modality::Tabular, &quick()).unwrap();
        assert!(r.brier() < 0.05, "{}", r.brier());
    }

    #[test]
    fn missing_modality_is_reported() {
        let mut d = separable(40);
        let mut s = LabeledSample::new("zz_partial", ClassLabel::TI).with(Modality::Tabular, vec![1.0; 3]);
        s.provenance = crate::dataset::Provenance::Real;
        d.push(s).unwrap();
        match run_unimodal(&d, Modality::Graph, &quick()) {
            Err(PipelineError::Dataset(DatasetError::MissingModality { design_id, .. })) => {
                assert_eq!(design_id, "zz_partial")
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            run_early_fusion(&d, &quick()),
            Err(PipelineError::Dataset(DatasetError::MissingModality { .. }))
        ));
        // The tabular arm does not look at the graph column.
        assert!(run_unimodal(&d, Modality::Tabular, &quick()).is_ok());
    }

    #[test]
    fn early_fusion_is_order_independent() {
        let d = separable(60);
        let mut rev: Vec<LabeledSample> = d.samples().to_vec();
        rev.reverse();
        let d2 = Dataset::from_samples(d.schemas().clone(), rev).unwrap();
        let a = run_early_fusion(&d, &quick()).unwrap();
        let b = run_early_fusion(&d2, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unimodal_ignores_the_other_modality() {
        let d = separable(60);
        let only: Vec<LabeledSample> = d
            .samples()
            .iter()
            .map(|s| LabeledSample::new(s.design_id.clone(), s.label).with(Modality::Tabular, s.get(Modality::Tabular).unwrap().to_vec()))
            .collect();
        let d2 = Dataset::from_samples(BTreeMap::from([(Modality::Tabular, 3)]), only).unwrap();
        let a = run_unimodal(&d, Modality::Tabular, &quick()).unwrap();
        let b = run_unimodal(&d2, Modality::Tabular, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_modality_late_matches_unimodal_points() {
        // Identical columns in both modalities give identical scorers.
        let base = separable(80);
        let dup: Vec<LabeledSample> = base
            .samples()
            .iter()
            .map(|s| {
                let v = s.get(Modality::Graph).unwrap().to_vec();
                LabeledSample::new(s.design_id.clone(), s.label)
                    .with(Modality::Tabular, v.clone())
                    .with(Modality::Graph, v)
            })
            .collect();
        let d = Dataset::from_samples(BTreeMap::from([(Modality::Tabular, 2), (Modality::Graph, 2)]), dup).unwrap();
        let mut cfg = quick();
        // Same τ stream on both sides makes the p-values identical too.
        cfg.conformal.smoothing = false;
        let uni = run_unimodal(&d, Modality::Tabular, &cfg).unwrap();
        let late = run_late_fusion(&d, &cfg).unwrap();
        let a: Vec<_> = uni.rows.iter().map(|r| r.point_prediction).collect();
        let b: Vec<_> = late.rows.iter().map(|r| r.point_prediction).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn high_confidence_flags_uncertain_regions() {
        let (_, d) = synth_generate(120, 0.5, 2);
        let mut cfg = quick();
        cfg.tabular.epochs = 2;
        cfg.conformal.confidence = 0.99;
        let r = run_unimodal(&d, Modality::Tabular, &cfg).unwrap();
        assert!(r.region_stats.uncertain_fraction > 0.0);
    }

    #[test]
    fn winner_rule() {
        assert_eq!(pick_winner(0.1685, 0.1589), Arm::Late);
        assert_eq!(pick_winner(0.10, 0.20), Arm::Early);
        assert_eq!(pick_winner(0.2, 0.2), Arm::Late);
        assert!(matches!(select_winner(&BTreeMap::new()), Err(PipelineError::MissingArm(Arm::Early))));
    }

    #[test]
    fn run_all_bundle_round_trip_and_detect() {
        let (designs, d) = synth_generate(200, 0.5, 11);
        let out = run_all(&d, &quick()).unwrap();
        assert_eq!(out.results.len(), 4);
        assert_eq!(out.report.winner, select_winner(&out.results).unwrap());
        let json = out.bundle.to_json();
        let b = ModelBundle::from_json(&json).unwrap();
        assert_eq!(b, out.bundle);
        let ti = designs.iter().find(|s| s.label == ClassLabel::TI).unwrap();
        let rep = detect(&b, &ti.design_id, &ti.source, 0.9).unwrap();
        assert_eq!(rep, detect(&b, &ti.design_id, &ti.source, 0.9).unwrap());
        assert_eq!(rep.model_hash, b.content_hash);
        // Tampering with any number breaks the hash.
        let tampered = json.replacen("\"seed\":11", "\"seed\":12", 1);
        assert!(matches!(ModelBundle::from_json(&tampered), Err(PipelineError::Bundle(_))));
        assert!(matches!(
            detect(&b, "x", "module broken(", 0.9),
            Err(PipelineError::Parse(_))
        ));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"seed": 1, "sed": 2}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
        let c: PipelineConfig = serde_json::from_str(r#"{"tabular": {"epochs": 5}}"#).unwrap();
        assert_eq!(c.tabular.epochs, 5);
        assert_eq!(c.tabular.hidden, vec![16]);
    }
}
