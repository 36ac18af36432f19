use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satbot_core::comprehension::{evaluate, read_labeled_file, EmotionModel};
use satbot_core::embedding::{EmbeddingStore, DEFAULT_DIMENSION};
use satbot_core::engine::load_store;
use satbot_core::flow::FlowGraph;
use satbot_core::model::EmotionLabel;
use satbot_core::reward::{build_pool, read_bases_file, read_candidates_file, Weights};
use satbot_core::selector::render_pool_records;
use satbot_core::teacher::{self, read_qa_file, AugmentationRecipe, KnowledgeBase};
use satbot_core::{Config, Deployment, Store};
use tokio::net::TcpListener;

use crate::{require, CliError, Format, RewriteArgs};

fn store_for(config: Option<&Config>) -> Result<Store, CliError> {
    match config {
        Some(c) => Ok(load_store(c)?),
        None => Ok(EmbeddingStore::fallback(DEFAULT_DIMENSION)),
    }
}

pub fn serve(config: Config, listen: Option<String>) -> Result<(), CliError> {
    let addr = listen.unwrap_or_else(|| config.listen_address.clone());
    let deployment = Deployment::<f64>::load(config)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::failed)?;
    rt.block_on(async move {
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Failed(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(CliError::failed)?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        satbot_service::serve(deployment, listener, shutdown_signal())
            .await
            .map_err(CliError::failed)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn validate_graph(path: &Path) -> Result<(), CliError> {
    let graph = FlowGraph::load_file(require(path)?).map_err(CliError::failed)?;
    println!(
        "ok: {} nodes, {} edges, {} exercises",
        graph.nodes.len(),
        graph.edges().count(),
        graph.exercise_catalog.len()
    );
    Ok(())
}

pub fn validate(config: Config) -> Result<(), CliError> {
    let d = Deployment::<f64>::load(config)?;
    let g = d.engine.graph();
    println!("flow graph: {} nodes, {} edges, {} exercises", g.nodes.len(), g.edges().count(), g.exercise_catalog.len());
    println!(
        "pools: {} utterances in {} pools",
        d.engine.pools().utterances().count(),
        d.engine.pools().iter().count()
    );
    println!("qa: {} entries", d.teacher.entries().len());
    println!("ok");
    Ok(())
}

struct Scored {
    build: satbot_core::reward::PoolBuild<f64>,
    bases: std::collections::BTreeMap<String, satbot_core::reward::BaseUtterance>,
}

fn score(config: Option<&Config>, args: &RewriteArgs, keep_top: usize) -> Result<Scored, CliError> {
    let candidates = read_candidates_file::<f64>(require(&args.candidates)?).map_err(CliError::failed)?;
    let bases = read_bases_file(require(&args.bases)?).map_err(CliError::failed)?;
    let weights = Weights::parse(&args.weights).map_err(|e| CliError::Usage(e.to_string()))?;
    if !(args.repetition_penalty >= 0.0) {
        return Err(CliError::Usage("--repetition-penalty must be non-negative".into()));
    }
    let store = store_for(config)?;
    let build = build_pool(&candidates, &bases, weights, keep_top, args.repetition_penalty, &store).map_err(CliError::failed)?;
    for d in &build.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(Scored { build, bases })
}

pub fn score_rewrites(config: Option<Config>, args: &RewriteArgs, keep_top: usize) -> Result<(), CliError> {
    let s = score(config.as_ref(), args, keep_top)?;
    print!("{}", s.build.render_scores());
    Ok(())
}

pub fn build_pools(config: Option<Config>, args: &RewriteArgs, keep_top: usize, output: &Path) -> Result<(), CliError> {
    let s = score(config.as_ref(), args, keep_top)?;
    let utterances = s.build.utterances(&s.bases);
    std::fs::write(output, render_pool_records(&utterances))
        .map_err(|e| CliError::Failed(format!("{}: {e}", output.display())))?;
    let bases: std::collections::BTreeSet<_> = s.build.entries.iter().map(|e| &e.base_id).collect();
    println!("wrote {} utterances for {} bases to {}", utterances.len(), bases.len(), output.display());
    Ok(())
}

pub fn eval_teacher(
    config: Config,
    variants: Option<usize>,
    max_substitutions: Option<usize>,
    seed: Option<u64>,
    identity: bool,
    format: Format,
) -> Result<(), CliError> {
    let store = Arc::new(store_for(Some(&config))?);
    let entries = read_qa_file(require(&config.resolve(&config.assets.qa))?).map_err(CliError::failed)?;
    let recipe = match (&config.assets.augmentation, identity) {
        (Some(p), false) => AugmentationRecipe::load_file(require(&config.resolve(p))?).map_err(CliError::failed)?,
        _ => AugmentationRecipe::identity(),
    };
    let kb = KnowledgeBase::new(entries, store).map_err(CliError::failed)?;
    let t = &config.teacher;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(t.seed));
    let report = teacher::validate(
        &kb,
        &recipe,
        variants.unwrap_or(t.variants_per_entry),
        max_substitutions.unwrap_or(t.max_substitutions),
        &mut rng,
    )
    .map_err(CliError::failed)?;
    match format {
        Format::Human => {
            println!("SAT Teacher validation ({} entries)", kb.entries().len());
            print!("{}", report.render());
        }
        Format::Machine => {
            println!("variants\t{}", report.total_variants);
            println!("correct\t{}", report.correct);
            println!("accuracy\t{:.6}", report.accuracy);
            for m in &report.misses {
                println!("miss\t{}\t{}\t{:.6}\t{}", m.qa_id, m.predicted, m.score, m.variant);
            }
        }
    }
    Ok(())
}

pub fn eval_emotion(config: Option<Config>, test: &Path, train: Option<&Path>, format: Format) -> Result<(), CliError> {
    let train_path = match (train, &config) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => c.resolve(&c.assets.emotion_training),
        (None, None) => return Err(CliError::Usage("no training set: pass --train or a configuration".into())),
    };
    let store = store_for(config.as_ref())?;
    let training = read_labeled_file(require(&train_path)?).map_err(CliError::failed)?;
    let held_out = read_labeled_file(require(test)?).map_err(CliError::failed)?;
    let model = EmotionModel::train(&training, &store).map_err(CliError::failed)?;
    let rows: Vec<String> = EmotionLabel::ALL.iter().map(|l| l.as_str().to_owned()).collect();
    let report = evaluate(model.centroids(), &held_out, &store, Some(&rows)).map_err(CliError::failed)?;
    match format {
        Format::Human => print!("{}", report.render_table("Emotion")),
        Format::Machine => print!("{}", report.render_machine()),
    }
    Ok(())
}

pub fn embed_file(config: Option<Config>, input: &Path, output: &Path, dimension: Option<usize>) -> Result<(), CliError> {
    let store: Store = match (&config, dimension) {
        (Some(c), Some(d)) if d != c.embedding.dimension => {
            return Err(CliError::Usage(format!(
                "--dimension {d} conflicts with the configured dimension {}",
                c.embedding.dimension
            )))
        }
        (Some(c), _) => load_store(c)?,
        (None, Some(0)) => return Err(CliError::Usage("--dimension must be positive".into())),
        (None, d) => EmbeddingStore::fallback(d.unwrap_or(DEFAULT_DIMENSION)),
    };
    let text = std::fs::read_to_string(require(input)?).map_err(|e| CliError::Failed(format!("{}: {e}", input.display())))?;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in text.lines().map(|l| l.trim_end_matches('\r')) {
        if line.trim().is_empty() || !seen.insert(line) {
            continue;
        }
        entries.push((line.to_owned(), store.embed(line).map_err(CliError::failed)?));
    }
    let out = EmbeddingStore::precomputed(store.dimension(), entries).map_err(CliError::failed)?;
    out.write_file(output).map_err(CliError::failed)?;
    println!("embedded {} texts (dimension {}) into {}", out.len(), out.dimension(), output.display());
    Ok(())
}
