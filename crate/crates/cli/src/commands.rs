use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elqa::embedder::train::LEARNING_RATE_GRID;
use elqa::embedder::RemoteEmbedder;
use elqa::eval::{self, Engine, NeighborMode, Pipeline, SweepParam};
use elqa::generator::{GeneratorBackend, RemoteGenerator};
use elqa::knnstore::Datastore;
use elqa::ontology::{ingest_mentions, write_mentions, FileFormat};
use elqa::remote::RemoteConfig;
use elqa::synthetic::{generate, SyntheticConfig};
use elqa::vecindex::{build_index, VectorIndex};
use elqa::{Embedder, EmbedderBackend, Mention, NGramEncoder, Ontology, Split};

use crate::config::{usage, EmbedderKind, GeneratorKind, RunConfig};

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| usage(format!("--{flag} is required for this command")))
}

fn format_of(cfg: &RunConfig, path: &Path) -> FileFormat {
    cfg.format.unwrap_or_else(|| FileFormat::from_path(path))
}

fn load_ontology(cfg: &RunConfig) -> Result<Ontology> {
    let path = require(&cfg.ontology, "ontology")?;
    Ontology::load(path, format_of(cfg, path)).with_context(|| format!("loading ontology {}", path.display()))
}

fn load_mentions(cfg: &RunConfig, path: &Path, split: Split, ontology: &Ontology) -> Result<Vec<Mention>> {
    let file = ingest_mentions(path, split, format_of(cfg, path), ontology)
        .with_context(|| format!("loading {split} mentions {}", path.display()))?;
    if file.dangling > 0 {
        log::warn!("{split}: {} mentions name an id missing from the ontology", file.dangling);
    }
    Ok(file.mentions)
}

fn remote_config(cfg: &RunConfig, url: &str) -> RemoteConfig {
    RemoteConfig {
        timeout: cfg.timeout,
        retries: cfg.retries,
        ..RemoteConfig::new(url)
    }
}

fn load_embedder(cfg: &RunConfig) -> Result<EmbedderBackend> {
    match cfg.embedder {
        EmbedderKind::Builtin => {
            let path = require(&cfg.checkpoint, "checkpoint")?;
            let encoder = NGramEncoder::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            log::info!("checkpoint fingerprint {}", encoder.fingerprint());
            Ok(EmbedderBackend::Builtin(encoder))
        }
        EmbedderKind::Remote => {
            let url = cfg
                .embed_url
                .as_deref()
                .ok_or_else(|| usage("--embedder remote needs --embed-url or ELQA_EMBED_URL"))?;
            Ok(EmbedderBackend::Remote(RemoteEmbedder::new(remote_config(cfg, url))))
        }
    }
}

fn load_generator(cfg: &RunConfig) -> Result<GeneratorBackend> {
    Ok(match cfg.generator {
        GeneratorKind::Lexical => GeneratorBackend::Lexical(cfg.lexical),
        GeneratorKind::Oracle => GeneratorBackend::ScriptedOracle,
        GeneratorKind::Remote => {
            let url = cfg
                .generate_url
                .as_deref()
                .ok_or_else(|| usage("--generator remote needs --generate-url or ELQA_GENERATE_URL"))?;
            let mut g = RemoteGenerator::new(remote_config(cfg, url));
            g.max_in_flight = cfg.max_in_flight;
            GeneratorBackend::Remote(g)
        }
    })
}

/// Ontology, embedder, name index and (when given) training mentions.
fn load_pipeline(cfg: &RunConfig) -> Result<Pipeline<EmbedderBackend>> {
    let ontology = load_ontology(cfg)?;
    let train = match &cfg.train {
        Some(p) => load_mentions(cfg, p, Split::Train, &ontology)?,
        None => Vec::new(),
    };
    let embedder = load_embedder(cfg)?;
    let index = match &cfg.index {
        Some(p) => {
            let index = VectorIndex::load(p).with_context(|| format!("loading index {}", p.display()))?;
            if index.fingerprint() != embedder.fingerprint() {
                bail!("index {} was built with a different encoder; rebuild it with `elqa index`", p.display());
            }
            index
        }
        None => build_index(&ontology, &embedder)?,
    };
    Ok(Pipeline {
        ontology,
        embedder,
        index,
        train,
    })
}

/// The datastore for neighbor retrieval: loaded from --datastore, or
/// built from --train at the configured N.
fn load_datastore(cfg: &RunConfig, pipeline: &Pipeline<EmbedderBackend>, needed: bool) -> Result<Option<Datastore>> {
    if !needed {
        return Ok(None);
    }
    match &cfg.datastore {
        Some(p) => {
            let store = Datastore::load(p).with_context(|| format!("loading datastore {}", p.display()))?;
            store
                .check_encoder(&pipeline.embedder)
                .with_context(|| format!("datastore {}", p.display()))?;
            Ok(Some(store))
        }
        None if !pipeline.train.is_empty() => Ok(Some(pipeline.datastore(cfg.eval.n_options, cfg.eval.display)?)),
        None => Err(usage("neighbor blocks need --datastore or --train (or --neighbor-mode none)")),
    }
}

fn split_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.split_path()
        .ok_or_else(|| usage(format!("--split {0} needs --{0}", cfg.split)))
}

/// Writes to --out when set, stdout otherwise.
fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let ontology = load_ontology(cfg)?;
    println!("ontology: {} entities, {} names", ontology.len(), ontology.name_count());
    for (split, path) in [(Split::Train, &cfg.train), (Split::Dev, &cfg.dev), (Split::Test, &cfg.test)] {
        if let Some(p) = path {
            let file = ingest_mentions(p, split, format_of(cfg, p), &ontology)
                .with_context(|| format!("loading {split} mentions {}", p.display()))?;
            println!("{split}: {} mentions, {} dangling", file.mentions.len(), file.dangling);
        }
    }
    Ok(())
}

pub fn train_retriever(cfg: &RunConfig) -> Result<()> {
    if cfg.embedder != EmbedderKind::Builtin {
        return Err(usage("train-retriever trains the builtin encoder; drop --embedder remote"));
    }
    let out = require(&cfg.checkpoint, "checkpoint")?;
    let ontology = load_ontology(cfg)?;
    let train = load_mentions(cfg, require(&cfg.train, "train")?, Split::Train, &ontology)?;
    let outcome = if cfg.lr_search {
        let dev = load_mentions(cfg, require(&cfg.dev, "dev")?, Split::Dev, &ontology)?;
        let search = eval::search_learning_rate(&ontology, &train, &dev, &cfg.retriever, &LEARNING_RATE_GRID)?;
        for (lr, recall) in &search.tried {
            println!("learning rate {lr:e}: dev recall@1 {recall:.4}");
        }
        println!("selected learning rate {:e}", search.learning_rate);
        search.outcome
    } else {
        eval::train_retriever(&ontology, &train, &cfg.retriever)?
    };
    for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    }
    if outcome.skipped > 0 {
        log::warn!("{} pair visits had no negative and were skipped", outcome.skipped);
    }
    outcome
        .encoder
        .save(out)
        .with_context(|| format!("writing checkpoint {}", out.display()))?;
    println!("wrote {} (fingerprint {})", out.display(), outcome.encoder.fingerprint());
    Ok(())
}

pub fn index(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.index, "index")?;
    let ontology = load_ontology(cfg)?;
    let embedder = load_embedder(cfg)?;
    let index = build_index(&ontology, &embedder)?;
    index.save(out).with_context(|| format!("writing index {}", out.display()))?;
    println!("wrote {}: {} rows, dimension {}", out.display(), index.len(), index.dimension());
    Ok(())
}

pub fn build_datastore(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.datastore, "datastore")?;
    require(&cfg.train, "train")?;
    let pipeline = load_pipeline(cfg)?;
    let store = pipeline.datastore(cfg.eval.n_options, cfg.eval.display)?;
    store.save(out).with_context(|| format!("writing datastore {}", out.display()))?;
    println!("wrote {}: {} solved instances, N={}", out.display(), store.len(), cfg.eval.n_options);
    Ok(())
}

pub fn link(cfg: &RunConfig, text: &str, gold: Option<&str>) -> Result<()> {
    if text.trim().is_empty() {
        return Err(usage("--mention must not be empty"));
    }
    let pipeline = load_pipeline(cfg)?;
    let store = load_datastore(cfg, &pipeline, cfg.eval.effective_k() > 0)?;
    let generator = load_generator(cfg)?;
    let engine = pipeline.engine(store.as_ref(), &generator);
    let mention = Mention::new(text, gold, Split::Test, 0);
    let query = pipeline.embedder.embed_one(text)?;
    let t = eval::trace(&mention, &query, &engine, &cfg.eval)?;

    let mut out = String::new();
    out.push_str(&format!("mention: {text}\n\ncandidates:\n"));
    for c in &t.candidates {
        out.push_str(&format!("  {:>2}. {:<12} {:<40} {:.4}\n", c.rank, c.entity_id, c.matched_name, c.similarity));
    }
    out.push_str(&format!("\nneighbors ({}):\n", t.neighbors.len()));
    for n in &t.neighbors.neighbors {
        let gold = n.entry.choice_set.gold_option().expect("datastore entries are labelled");
        out.push_str(&format!(
            "  #{:<5} {:.4}  {} -> {}. {}\n",
            n.entry.ordinal, n.similarity, n.entry.mention_text, gold.symbol, gold.display_name
        ));
    }
    out.push_str(&format!("\nprompt:\n{}\n", t.prompt.text));
    if let Some(a) = &t.answer {
        out.push_str("\nscores:\n");
        for (symbol, p) in &a.scores {
            let name = t.choice_set.option(*symbol).map_or("", |o| o.display_name.as_str());
            out.push_str(&format!("  {symbol}  {p:.4}  {name}\n"));
        }
        if t.invalid_output {
            out.push_str("  (output named no option; falling back to rank 1)\n");
        }
    }
    if let Some(n) = &t.named {
        out.push_str(&format!("\ngenerated name: {}\n", n.emitted));
    }
    match t.predicted_id.as_deref().and_then(|id| pipeline.ontology.get(id)) {
        Some(e) => out.push_str(&format!("\nentity: {} ({})\n", e.id, e.canonical_name)),
        None => out.push_str("\nentity: none\n"),
    }
    emit(cfg, &out)
}

fn engine_parts(cfg: &RunConfig, ablate: bool) -> Result<(Pipeline<EmbedderBackend>, Option<Datastore>, GeneratorBackend, Vec<Mention>)> {
    let path = split_path(cfg)?;
    let pipeline = load_pipeline(cfg)?;
    let split = load_mentions(cfg, path, cfg.split, &pipeline.ontology)?;
    // Ablations add a random-neighbor row even when the base config has none.
    let needed = if ablate {
        cfg.eval.k_neighbors > 0
    } else {
        cfg.eval.effective_k() > 0
    };
    let store = load_datastore(cfg, &pipeline, needed)?;
    let generator = load_generator(cfg)?;
    Ok((pipeline, store, generator, split))
}

pub fn evaluate(cfg: &RunConfig, label: &str) -> Result<()> {
    let (pipeline, store, generator, split) = engine_parts(cfg, false)?;
    let report = eval::evaluate(label, &split, &pipeline.engine(store.as_ref(), &generator), &cfg.eval)?;
    if let Some(p) = &cfg.report {
        std::fs::write(p, report.to_json() + "\n").with_context(|| format!("writing report {}", p.display()))?;
    }
    print!("{}", eval::report_table(std::slice::from_ref(&report)));
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let (pipeline, store, generator, split) = engine_parts(cfg, true)?;
    let engine: Engine<'_> = pipeline.engine(store.as_ref(), &generator);
    let base = if cfg.eval.neighbor_mode == NeighborMode::None {
        eval::EvalConfig {
            neighbor_mode: NeighborMode::Similar,
            ..cfg.eval.clone()
        }
    } else {
        cfg.eval.clone()
    };
    let reports = eval::run_ablations(&split, &engine, &base, None)?;
    if let Some(p) = &cfg.report {
        let json = serde_json::to_string_pretty(&reports)?;
        std::fs::write(p, json + "\n").with_context(|| format!("writing report {}", p.display()))?;
    }
    print!("{}", eval::report_table(&reports));
    Ok(())
}

pub fn sweep(cfg: &RunConfig, param: SweepParam, values: Option<Vec<usize>>) -> Result<()> {
    let values = values.unwrap_or_else(|| match param {
        SweepParam::N => (1..=10).collect(),
        SweepParam::K => (0..=5).collect(),
    });
    let path = split_path(cfg)?;
    if cfg.eval.neighbor_mode != NeighborMode::None && cfg.train.is_none() {
        return Err(usage("sweep rebuilds the datastore from --train (or use --neighbor-mode none)"));
    }
    let pipeline = load_pipeline(cfg)?;
    let split = load_mentions(cfg, path, cfg.split, &pipeline.ontology)?;
    let generator = load_generator(cfg)?;
    let points = pipeline
        .sweep(param, &values, &split, &generator, &cfg.eval)
        .map_err(|e| match e {
            eval::EvalError::InvalidConfig(m) => usage(m),
            other => other.into(),
        })?;
    emit(cfg, &eval::sweep_csv(param, &points))
}

pub fn export_prompts(cfg: &RunConfig) -> Result<()> {
    require(&cfg.train, "train")?;
    let pipeline = load_pipeline(cfg)?;
    let store = load_datastore(cfg, &pipeline, cfg.eval.effective_k() > 0)?;
    let rows = pipeline.export_training_prompts(store.as_ref(), &cfg.eval)?;
    let mut text = String::new();
    for row in &rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    log::info!("exported {} prompts", rows.len());
    emit(cfg, &text)
}

pub fn synth(cfg: &RunConfig, seed: u64) -> Result<()> {
    let dir = require(&cfg.out, "out")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let bench = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    });
    let path = dir.join("ontology.tsv");
    bench
        .ontology
        .write(BufWriter::new(File::create(&path)?), FileFormat::Tsv)
        .with_context(|| format!("writing {}", path.display()))?;
    for (name, mentions) in [("train", &bench.train), ("dev", &bench.dev), ("test", &bench.test)] {
        let path = dir.join(format!("{name}.tsv"));
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_mentions(&mut w, mentions)?;
        w.flush()?;
    }
    println!(
        "wrote {}: {} entities, {} train, {} dev, {} test mentions",
        dir.display(),
        bench.ontology.len(),
        bench.train.len(),
        bench.dev.len(),
        bench.test.len()
    );
    Ok(())
}
