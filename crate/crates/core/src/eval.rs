//! End-to-end evaluation, ablations and sweeps.
//!
//! [`evaluate`] runs every mention of a split through retrieval, prompt
//! assembly and a generator, and aggregates an [`EvalReport`]. The report's
//! JSON form is a pure function of its inputs (wall-clock time is kept out
//! of it), so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{train, ContrastiveConfig, EmbedError, Embedder, NGramConfig, NGramEncoder, TrainError, TrainOutcome};
use crate::generator::{Answer, GeneratorBackend, GeneratorError, NameAnswer};
use crate::knnstore::{
    assemble_enhanced_prompt, build_datastore, AnswerStyle, AssembleOptions, BlockSeparator, Datastore, NeighborOrder,
    NeighborSet, StoreError,
};
use crate::mcp::{augment, make_choice_set, ChoiceSet, DisplayName, LabelMode, McpError, PromptInstance, PromptRecord, Provenance, Symbol, MAX_OPTIONS};
use crate::ontology::{training_pairs, Mention, Ontology, Split};
use crate::vecindex::{Candidate, IndexError, IndexMiner, VectorIndex};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("neighbor mode {0:?} needs a datastore")]
    MissingDatastore(NeighborMode),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] McpError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    #[default]
    Similar,
    Random,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    #[default]
    Symbol,
    GenerateNames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_options: usize,
    pub k_neighbors: usize,
    /// Order-swap augmentation of exported training prompts.
    pub augmentation: bool,
    /// Swapped copies per training instance when augmenting.
    pub swaps: usize,
    pub neighbor_mode: NeighborMode,
    pub answer_mode: AnswerMode,
    pub display: DisplayName,
    pub neighbor_order: NeighborOrder,
    pub separator: BlockSeparator,
    pub max_prompt_chars: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_options: 5,
            k_neighbors: 3,
            augmentation: true,
            swaps: 1,
            neighbor_mode: NeighborMode::Similar,
            answer_mode: AnswerMode::Symbol,
            display: DisplayName::Matched,
            neighbor_order: NeighborOrder::MostSimilarFirst,
            separator: BlockSeparator::Space,
            max_prompt_chars: None,
            seed: 17,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_options == 0 || self.n_options > MAX_OPTIONS {
            return Err(EvalError::InvalidConfig(format!(
                "n_options must be within 1..={MAX_OPTIONS}, got {}",
                self.n_options
            )));
        }
        Ok(())
    }

    /// Neighbors actually prepended: zero when the kNN module is off.
    pub fn effective_k(&self) -> usize {
        match self.neighbor_mode {
            NeighborMode::None => 0,
            _ => self.k_neighbors,
        }
    }

    fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            order: self.neighbor_order,
            separator: self.separator,
            answer_style: match self.answer_mode {
                AnswerMode::Symbol => AnswerStyle::Symbol,
                AnswerMode::GenerateNames => AnswerStyle::Name,
            },
            max_chars: self.max_prompt_chars,
        }
    }

    /// Canonical form for reports: with the kNN module off, `k` is zero,
    /// so a disabled module and `k = 0` echo the same configuration.
    fn echo(&self) -> EvalConfig {
        let k = self.effective_k();
        EvalConfig {
            k_neighbors: k,
            neighbor_mode: if k == 0 { NeighborMode::None } else { self.neighbor_mode },
            ..self.clone()
        }
    }
}

/// Everything a prepared pipeline provides to [`evaluate`].
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub ontology: &'a Ontology,
    pub embedder: &'a dyn Embedder,
    pub index: &'a VectorIndex,
    pub datastore: Option<&'a Datastore>,
    pub generator: &'a GeneratorBackend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub ordinal: usize,
    pub mention: String,
    pub gold_id: Option<String>,
    pub candidates: Vec<String>,
    pub neighbors: Vec<usize>,
    pub symbol: Option<Symbol>,
    pub emitted_name: Option<String>,
    pub predicted_id: Option<String>,
    pub outcome: Outcome,
    pub gold_in_candidates: bool,
    pub invalid_output: bool,
    pub no_match: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub generator: String,
    pub config: EvalConfig,
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub failed: usize,
    pub accuracy: f64,
    /// Retriever recall at `n_options`.
    pub gold_in_candidates_rate: f64,
    pub invalid_outputs: usize,
    pub invalid_output_rate: f64,
    pub no_match: usize,
    pub records: Vec<InstanceRecord>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything computed for one mention, kept for inspection by `link`.
#[derive(Debug, Clone)]
pub struct Trace<'a> {
    pub candidates: Vec<Candidate>,
    pub choice_set: ChoiceSet,
    pub neighbors: NeighborSet<'a>,
    pub prompt: PromptInstance,
    pub answer: Option<Answer>,
    pub named: Option<NameAnswer>,
    pub predicted_id: Option<String>,
    pub invalid_output: bool,
}

fn neighbor_seed(seed: u64, ordinal: usize) -> u64 {
    seed ^ (ordinal as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn neighbors<'a>(
    engine: &Engine<'a>,
    query: &crate::embedder::EmbeddingVector,
    exclude: Option<usize>,
    ordinal: usize,
    cfg: &EvalConfig,
) -> Result<NeighborSet<'a>, EvalError> {
    let k = cfg.effective_k();
    if k == 0 {
        return Ok(NeighborSet::default());
    }
    let store = engine.datastore.ok_or(EvalError::MissingDatastore(cfg.neighbor_mode))?;
    Ok(match cfg.neighbor_mode {
        NeighborMode::Similar => store.query(query, k, exclude)?,
        NeighborMode::Random => store.random_sample(query, k, neighbor_seed(cfg.seed, ordinal), exclude)?,
        NeighborMode::None => NeighborSet::default(),
    })
}

/// Links one mention: retrieve, build the choice set (never injecting the
/// gold), fetch neighbors, assemble and answer.
pub fn trace<'a>(
    mention: &Mention,
    query: &crate::embedder::EmbeddingVector,
    engine: &Engine<'a>,
    cfg: &EvalConfig,
) -> Result<Trace<'a>, EvalError> {
    let candidates = engine.index.top_n(query, cfg.n_options)?;
    let choice_set = make_choice_set(
        &mention.text,
        &candidates,
        mention.usable_gold(),
        LabelMode::Eval,
        cfg.display,
        engine.ontology,
    )?;
    let exclude = (mention.split == Split::Train).then_some(mention.ordinal);
    let neighbors = neighbors(engine, query, exclude, mention.ordinal, cfg)?;
    let prompt = assemble_enhanced_prompt(&neighbors, &choice_set, &cfg.assemble_options());
    let mut out = Trace {
        candidates,
        choice_set,
        neighbors,
        prompt,
        answer: None,
        named: None,
        predicted_id: None,
        invalid_output: false,
    };
    match cfg.answer_mode {
        AnswerMode::Symbol => {
            let answer = engine.generator.answer(&out.prompt, &out.choice_set)?;
            let chosen = answer.symbol.and_then(|s| out.choice_set.option(s));
            out.invalid_output = chosen.is_none();
            // An output naming no option falls back to the rank-1 candidate.
            let chosen = chosen.unwrap_or(&out.choice_set.options()[0]);
            out.predicted_id = Some(chosen.entity_id.clone());
            out.answer = Some(answer);
        }
        AnswerMode::GenerateNames => {
            let named = engine
                .generator
                .answer_generate_names(&out.prompt, &out.choice_set, engine.ontology)?;
            out.predicted_id = named.entity_id.clone();
            out.named = Some(named);
        }
    }
    Ok(out)
}

fn record(mention: &Mention, traced: Result<Trace<'_>, EvalError>) -> InstanceRecord {
    let gold = mention.usable_gold();
    let mut rec = InstanceRecord {
        ordinal: mention.ordinal,
        mention: mention.text.clone(),
        gold_id: gold.map(str::to_string),
        candidates: Vec::new(),
        neighbors: Vec::new(),
        symbol: None,
        emitted_name: None,
        predicted_id: None,
        outcome: Outcome::Failed,
        gold_in_candidates: false,
        invalid_output: false,
        no_match: false,
        error: None,
    };
    match traced {
        Ok(t) => {
            rec.candidates = t.candidates.iter().map(|c| c.entity_id.clone()).collect();
            rec.gold_in_candidates = gold.is_some_and(|g| rec.candidates.iter().any(|c| c == g));
            rec.neighbors = t.neighbors.ordinals();
            rec.symbol = t.answer.as_ref().and_then(|a| a.symbol);
            rec.emitted_name = t.named.as_ref().map(|n| n.emitted.clone());
            rec.no_match = t.named.as_ref().is_some_and(|n| n.entity_id.is_none());
            rec.invalid_output = t.invalid_output;
            rec.outcome = if gold.is_some() && t.predicted_id.as_deref() == gold {
                Outcome::Correct
            } else {
                Outcome::Incorrect
            };
            rec.predicted_id = t.predicted_id;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Evaluates every mention of `split`. Per-instance failures are recorded
/// as [`Outcome::Failed`]; configuration and wiring problems are errors.
pub fn evaluate(label: &str, split: &[Mention], engine: &Engine<'_>, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    if cfg.effective_k() > 0 && engine.datastore.is_none() {
        return Err(EvalError::MissingDatastore(cfg.neighbor_mode));
    }
    if let Some(store) = engine.datastore {
        store.check_encoder(engine.embedder)?;
    }
    let started = Instant::now();
    let queries: Vec<Result<crate::embedder::EmbeddingVector, EmbedError>> = {
        let texts: Vec<&str> = split.iter().map(|m| m.text.as_str()).collect();
        match engine.embedder.embed(&texts) {
            Ok(v) => v.into_iter().map(Ok).collect(),
            // Fall back to one call per mention to attribute the failure.
            Err(_) => texts.iter().map(|t| engine.embedder.embed_one(t)).collect(),
        }
    };
    let run = || -> Vec<InstanceRecord> {
        split
            .par_iter()
            .zip(queries.par_iter())
            .map(|(m, q)| {
                let traced = match q {
                    Ok(q) => trace(m, q, engine, cfg),
                    Err(e) => Err(EvalError::Embed(e.clone())),
                };
                record(m, traced)
            })
            .collect()
    };
    let mut records = match engine.generator {
        GeneratorBackend::Remote(r) => rayon::ThreadPoolBuilder::new()
            .num_threads(r.max_in_flight.max(1))
            .build()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?
            .install(run),
        _ => run(),
    };
    records.sort_by_key(|r| r.ordinal);
    Ok(aggregate(label, engine.generator.kind(), cfg, records, started.elapsed()))
}

fn aggregate(label: &str, generator: &str, cfg: &EvalConfig, records: Vec<InstanceRecord>, wall_clock: Duration) -> EvalReport {
    let total = records.len();
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let (correct, incorrect, failed) = (count(Outcome::Correct), count(Outcome::Incorrect), count(Outcome::Failed));
    let rate = |k: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    let in_candidates = records.iter().filter(|r| r.gold_in_candidates).count();
    let invalid_outputs = records.iter().filter(|r| r.invalid_output).count();
    EvalReport {
        label: label.to_string(),
        generator: generator.to_string(),
        config: cfg.echo(),
        total,
        correct,
        incorrect,
        failed,
        accuracy: rate(correct),
        gold_in_candidates_rate: rate(in_candidates),
        invalid_outputs,
        invalid_output_rate: rate(invalid_outputs),
        no_match: records.iter().filter(|r| r.no_match).count(),
        records,
        wall_clock,
    }
}

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoAug,
    NoKnn,
    RandomNeighbors,
    GenerateNames,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoAug,
        Ablation::NoKnn,
        Ablation::RandomNeighbors,
        Ablation::GenerateNames,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAug => "no-aug",
            Ablation::NoKnn => "no-knn",
            Ablation::RandomNeighbors => "random-neighbors",
            Ablation::GenerateNames => "generate-names",
        }
    }

    pub fn apply(self, base: &EvalConfig) -> EvalConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoAug => cfg.augmentation = false,
            Ablation::NoKnn => cfg.neighbor_mode = NeighborMode::None,
            Ablation::RandomNeighbors => cfg.neighbor_mode = NeighborMode::Random,
            Ablation::GenerateNames => cfg.answer_mode = AnswerMode::GenerateNames,
        }
        cfg
    }
}

/// One report per ablation row, all sharing `base`'s seed.
///
/// Augmentation acts on the generator's training data, so the `no-aug` row
/// is answered by `no_aug_generator` (a generator trained without swaps)
/// when one is given, and by the engine's generator otherwise.
pub fn run_ablations(
    split: &[Mention],
    engine: &Engine<'_>,
    base: &EvalConfig,
    no_aug_generator: Option<&GeneratorBackend>,
) -> Result<Vec<EvalReport>, EvalError> {
    Ablation::ALL
        .iter()
        .map(|&row| {
            let cfg = row.apply(base);
            let engine = match (row, no_aug_generator) {
                (Ablation::NoAug, Some(g)) => Engine { generator: g, ..*engine },
                _ => *engine,
            };
            evaluate(row.label(), split, &engine, &cfg)
        })
        .collect()
}

/// Aligned text table of reports.
pub fn report_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>7}  {:>8}  {:>6}  {:>9}\n",
        "label", "accuracy", "recall@N", "invalid", "no-match", "failed", "time"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>9.4}  {:>7.4}  {:>8}  {:>6}  {:>8.2}s",
            r.label,
            r.accuracy,
            r.gold_in_candidates_rate,
            r.invalid_output_rate,
            r.no_match,
            r.failed,
            r.wall_clock.as_secs_f64()
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    N,
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "N" | "n" => Ok(SweepParam::N),
            "K" | "k" => Ok(SweepParam::K),
            other => Err(format!("unknown sweep parameter {other:?}, expected N or K")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub accuracy: f64,
    pub gold_in_candidates_rate: f64,
}

/// Retrieval, datastore and training data that evaluation runs share.
pub struct Pipeline<E: Embedder> {
    pub ontology: Ontology,
    pub embedder: E,
    pub index: VectorIndex,
    pub train: Vec<Mention>,
}

impl<E: Embedder> Pipeline<E> {
    pub fn new(ontology: Ontology, embedder: E, train: Vec<Mention>) -> Result<Pipeline<E>, EvalError> {
        let index = crate::vecindex::build_index(&ontology, &embedder)?;
        Ok(Pipeline {
            ontology,
            embedder,
            index,
            train,
        })
    }

    /// Labelled training choice sets over the top `n` candidates, with the
    /// gold injected where retrieval missed it.
    pub fn training_choice_sets(&self, n: usize, display: DisplayName) -> Result<Vec<(Mention, ChoiceSet)>, EvalError> {
        let labelled: Vec<&Mention> = self.train.iter().filter(|m| m.usable_gold().is_some()).collect();
        if labelled.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<&str> = labelled.iter().map(|m| m.text.as_str()).collect();
        let queries = self.embedder.embed(&texts)?;
        labelled
            .into_iter()
            .zip(queries)
            .map(|(m, q)| {
                let cands = self.index.top_n(&q, n)?;
                let cs = make_choice_set(&m.text, &cands, m.usable_gold(), LabelMode::Train, display, &self.ontology)?;
                Ok((m.clone(), cs))
            })
            .collect()
    }

    pub fn datastore(&self, n: usize, display: DisplayName) -> Result<Datastore, EvalError> {
        Ok(build_datastore(&self.training_choice_sets(n, display)?, &self.embedder)?)
    }

    pub fn engine<'a>(&'a self, datastore: Option<&'a Datastore>, generator: &'a GeneratorBackend) -> Engine<'a> {
        Engine {
            ontology: &self.ontology,
            embedder: &self.embedder,
            index: &self.index,
            datastore,
            generator,
        }
    }

    /// Retriever recall at `n` over `mentions` with a usable gold.
    pub fn recall_at(&self, mentions: &[Mention], n: usize) -> Result<f64, EvalError> {
        let labelled: Vec<&Mention> = mentions.iter().filter(|m| m.usable_gold().is_some()).collect();
        if labelled.is_empty() {
            return Ok(0.0);
        }
        let texts: Vec<&str> = labelled.iter().map(|m| m.text.as_str()).collect();
        let queries = self.embedder.embed(&texts)?;
        let mut hits = 0;
        for (m, q) in labelled.iter().zip(&queries) {
            if self.index.top_n(q, n)?.iter().any(|c| Some(c.entity_id.as_str()) == m.usable_gold()) {
                hits += 1;
            }
        }
        Ok(hits as f64 / labelled.len() as f64)
    }

    /// One evaluation per value of `param`, everything else fixed. Sweeping
    /// `N` rebuilds the datastore so neighbor blocks carry `N` options too.
    pub fn sweep(
        &self,
        param: SweepParam,
        values: &[usize],
        split: &[Mention],
        generator: &GeneratorBackend,
        cfg: &EvalConfig,
    ) -> Result<Vec<SweepPoint>, EvalError> {
        if values.is_empty() {
            return Err(EvalError::InvalidConfig("sweep needs at least one value".into()));
        }
        let needs_store = cfg.neighbor_mode != NeighborMode::None;
        let shared = match (param, needs_store) {
            (SweepParam::K, true) => Some(self.datastore(cfg.n_options, cfg.display)?),
            _ => None,
        };
        values
            .iter()
            .map(|&v| {
                let mut c = cfg.clone();
                let own;
                let store = match param {
                    SweepParam::N => {
                        c.n_options = v;
                        c.validate()?;
                        own = if needs_store && c.effective_k() > 0 {
                            Some(self.datastore(v, c.display)?)
                        } else {
                            None
                        };
                        own.as_ref()
                    }
                    SweepParam::K => {
                        c.k_neighbors = v;
                        shared.as_ref()
                    }
                };
                let report = evaluate(&format!("{param:?}={v}"), split, &self.engine(store, generator), &c)?;
                Ok(SweepPoint {
                    value: v,
                    accuracy: report.accuracy,
                    gold_in_candidates_rate: report.gold_in_candidates_rate,
                })
            })
            .collect()
    }

    /// Retrieval-enhanced prompts for the training split as JSONL rows: the
    /// original of every labelled instance plus, with augmentation on,
    /// `cfg.swaps` order-swapped copies. Neighbors never include the
    /// instance itself.
    pub fn export_training_prompts(&self, store: Option<&Datastore>, cfg: &EvalConfig) -> Result<Vec<PromptRecord>, EvalError> {
        cfg.validate()?;
        let generator = GeneratorBackend::ScriptedOracle;
        let engine = self.engine(store, &generator);
        let opts = cfg.assemble_options();
        let mut rows = Vec::new();
        for (m, cs) in self.training_choice_sets(cfg.n_options, cfg.display)? {
            let q = self.embedder.embed_one(&m.text)?;
            let nbrs = neighbors(&engine, &q, Some(m.ordinal), m.ordinal, cfg)?;
            rows.push(PromptRecord::new(&assemble_enhanced_prompt(&nbrs, &cs, &opts), m.ordinal));
            if cfg.augmentation && cs.len() >= 2 {
                for swapped in augment(&cs, cfg.swaps, neighbor_seed(cfg.seed, m.ordinal))? {
                    let mut p = assemble_enhanced_prompt(&nbrs, &swapped, &opts);
                    p.provenance = Provenance::AugmentedSwap;
                    rows.push(PromptRecord::new(&p, m.ordinal));
                }
            }
        }
        Ok(rows)
    }
}

/// Writes sweep points as CSV with a header row.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = String::from("param,value,accuracy,gold_in_candidates_rate\n");
    for p in points {
        let _ = writeln!(out, "{param:?},{},{},{}", p.value, p.accuracy, p.gold_in_candidates_rate);
    }
    out
}

/// Retriever settings for [`train_retriever`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RetrieverConfig {
    pub ngram: NGramConfig,
    pub contrastive: ContrastiveConfig,
}

/// Builds an encoder over the ontology names and training mentions and
/// trains it contrastively with index-mined hard negatives.
pub fn train_retriever(ontology: &Ontology, train_mentions: &[Mention], cfg: &RetrieverConfig) -> Result<TrainOutcome, EvalError> {
    let corpus = ontology
        .named_rows()
        .map(|(_, n)| n)
        .chain(train_mentions.iter().map(|m| m.text.as_str()));
    let encoder = NGramEncoder::new(cfg.ngram.clone(), corpus);
    let pairs = training_pairs(train_mentions, ontology);
    Ok(train(encoder, &pairs, ontology, &cfg.contrastive, &mut IndexMiner::new())?)
}

/// Result of [`search_learning_rate`].
#[derive(Debug, Clone)]
pub struct RateSearch {
    pub learning_rate: f64,
    /// `(learning rate, dev recall@1)` for every rate tried.
    pub tried: Vec<(f64, f64)>,
    pub outcome: TrainOutcome,
}

/// Trains once per rate in `grid` and keeps the encoder with the best
/// recall@1 on `dev` (earlier rates win ties).
pub fn search_learning_rate(
    ontology: &Ontology,
    train_mentions: &[Mention],
    dev: &[Mention],
    cfg: &RetrieverConfig,
    grid: &[f64],
) -> Result<RateSearch, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::InvalidConfig("learning rate grid is empty".into()));
    }
    let mut best: Option<(f64, TrainOutcome)> = None;
    let (learning_rate, tried) = crate::embedder::train::select_learning_rate(grid, |lr| {
        let mut c = cfg.clone();
        c.contrastive.learning_rate = lr;
        let outcome = train_retriever(ontology, train_mentions, &c)?;
        let pipeline = Pipeline::new(ontology.clone(), outcome.encoder.clone(), Vec::new())?;
        let recall = pipeline.recall_at(dev, 1)?;
        if best.as_ref().is_none_or(|(r, _)| recall > *r) {
            best = Some((recall, outcome));
        }
        Ok::<_, EvalError>(recall)
    })?;
    let (_, outcome) = best.expect("non-empty grid");
    Ok(RateSearch {
        learning_rate,
        tried,
        outcome,
    })
}
