use std::io::{self, BufRead, Write};
use std::path::Path;

use satbot_core::engine::parse_script;
use satbot_core::flow::{FlowError, NodeKind};
use satbot_core::{Config, Deployment, Engine};

use crate::{require, CliError};

/// Runs one conversation. The transcript depends only on the seed, the
/// assets and the inputs, so scripted runs are byte-identical.
pub fn run(config: Config, script: Option<&Path>, seed: u64) -> Result<(), CliError> {
    let inputs = match script {
        Some(p) => Some(parse_script(&std::fs::read_to_string(require(p)?).map_err(CliError::failed)?)),
        None => None,
    };
    let deployment = Deployment::<f64>::load(config)?;
    let engine = &deployment.engine;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: io::Error| CliError::failed(e);

    let (mut session, greeting) = engine.start(seed).map_err(CliError::failed)?;
    for line in &greeting {
        writeln!(out, "bot> {line}").map_err(io_err)?;
    }

    let mut lines: Box<dyn Iterator<Item = String>> = match inputs {
        Some(v) => Box::new(v.into_iter()),
        None => Box::new(io::stdin().lock().lines().map_while(Result::ok)),
    };
    let scripted = script.is_some();
    loop {
        if ended(engine, &session.current_node) {
            writeln!(out, "-- conversation ended --").map_err(io_err)?;
            break;
        }
        if !scripted {
            write!(out, "you> ").map_err(io_err)?;
            out.flush().map_err(io_err)?;
        }
        let Some(input) = lines.next() else { break };
        if input.trim().is_empty() {
            continue;
        }
        if scripted {
            writeln!(out, "you> {input}").map_err(io_err)?;
        }
        let outcome = match engine.step(&mut session, &input) {
            Ok(o) => o,
            Err(FlowError::Ended) => break,
            Err(e) => return Err(CliError::failed(e)),
        };
        for line in &outcome.bot_utterances {
            writeln!(out, "bot> {line}").map_err(io_err)?;
        }
        for id in &outcome.recommended_exercises {
            let title = engine
                .graph()
                .exercise_catalog
                .get(id)
                .map_or("", |e| e.title.as_str());
            writeln!(out, "  [{id}] {title}").map_err(io_err)?;
        }
    }
    if scripted && lines.next().is_some() {
        tracing::warn!("script continues past the end of the conversation");
    }
    out.flush().map_err(io_err)
}

fn ended(engine: &Engine<f64>, node: &str) -> bool {
    engine.graph().node(node).is_some_and(|n| n.kind == NodeKind::Terminal)
}
