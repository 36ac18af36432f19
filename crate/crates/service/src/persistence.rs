//! Append-only session logs.
//!
//! Each session lives in `<dir>/<session_id>.ndjson`: a header line followed
//! by one record per engine call (the greeting, then every user message).
//! A record carries the turns that call appended and a snapshot of the
//! session's state after it, so reloading never re-runs the engine.
//! `<dir>/index.ndjson` lists sessions in creation order.
//!
//! Every record is written with a single `write` and synced before the caller
//! acknowledges it. A final line without its newline is a torn write from a
//! crash; it was never acknowledged, so it is dropped and truncated on load.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use satbot_core::flow::SessionDelta;
use satbot_core::model::{now_millis, EmotionLabel, Formality, Session, Turn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_TAG: &str = "SATLOG1";
pub const INDEX_FILE: &str = "index.ndjson";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

impl PersistError {
    fn io(path: &Path, source: io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Session fields other than identity and transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub current_node: String,
    pub formality: Option<Formality>,
    pub user_name: Option<String>,
    pub detected_emotion: Option<EmotionLabel>,
    pub steps: u64,
    pub clarify_attempts: u32,
    pub path: Vec<String>,
    pub used_utterances: BTreeSet<String>,
}

impl SessionState {
    pub fn of(s: &Session) -> Self {
        SessionState {
            current_node: s.current_node.clone(),
            formality: s.formality,
            user_name: s.user_name.clone(),
            detected_emotion: s.detected_emotion,
            steps: s.steps,
            clarify_attempts: s.clarify_attempts,
            path: s.path.clone(),
            used_utterances: s.used_utterances.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Header {
        format: String,
        session_id: String,
        seed: u64,
        created: u64,
    },
    Step {
        seq: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<String>,
        turns: Vec<Turn>,
        #[serde(default, skip_serializing_if = "SessionDelta::is_empty")]
        delta: SessionDelta,
        state: SessionState,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum IndexLine {
    Index { format: String },
    Session { session_id: String, created: u64 },
}

/// Open handle on one session's log.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl SessionLog {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records one engine call: the turns appended to `session.history` past
    /// `prior_len`, plus the resulting state. Returns once the record is on disk.
    pub fn append(
        &mut self,
        session: &Session,
        prior_len: usize,
        input: Option<&str>,
        delta: &SessionDelta,
    ) -> Result<(), PersistError> {
        let record = Record::Step {
            seq: self.next_seq,
            input: input.map(str::to_owned),
            turns: session.history[prior_len..].to_vec(),
            delta: delta.clone(),
            state: SessionState::of(session),
        };
        write_line(&mut self.file, &self.path, &record)?;
        self.next_seq += 1;
        Ok(())
    }
}

fn write_line<S: Serialize>(file: &mut File, path: &Path, value: &S) -> Result<(), PersistError> {
    let mut line = serde_json::to_string(value).expect("records serialize");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| PersistError::io(path, e))?;
    file.sync_data().map_err(|e| PersistError::io(path, e))
}

fn sync_dir(dir: &Path) -> Result<(), PersistError> {
    #[cfg(unix)]
    File::open(dir).and_then(|d| d.sync_all()).map_err(|e| PersistError::io(dir, e))?;
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}

/// Complete lines of `path` with their 1-based numbers. A torn final line is
/// cut off the file.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, PersistError> {
    let bytes = fs::read(path).map_err(|e| PersistError::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "dropping torn final record");
        let f = OpenOptions::new().write(true).open(path).map_err(|e| PersistError::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| PersistError::io(path, e))?;
        f.sync_all().map_err(|e| PersistError::io(path, e))?;
    }
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect())
}

/// Replays one log file into a session.
pub fn read_session(path: &Path) -> Result<(Session, u64), PersistError> {
    let corrupt = |line: usize, message: String| PersistError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    let lines = read_lines(path)?;
    let mut records = lines.iter().map(|(n, l)| {
        serde_json::from_str::<Record>(l)
            .map(|r| (*n, r))
            .map_err(|e| corrupt(*n, e.to_string()))
    });
    let (session_id, seed) = match records.next().transpose()? {
        Some((_, Record::Header { format, session_id, seed, .. })) => {
            if format != FORMAT_TAG {
                return Err(corrupt(1, format!("format {format:?}, expected {FORMAT_TAG}")));
            }
            (session_id, seed)
        }
        _ => return Err(corrupt(1, "missing header".into())),
    };
    let mut history = Vec::new();
    let mut last_state = None;
    let mut next_seq = 0;
    for r in records {
        match r? {
            (n, Record::Step { seq, turns, state, .. }) => {
                if seq != next_seq {
                    return Err(corrupt(n, format!("record {seq} out of order, expected {next_seq}")));
                }
                next_seq += 1;
                history.extend(turns);
                last_state = Some(state);
            }
            (n, Record::Header { .. }) => return Err(corrupt(n, "second header".into())),
        }
    }
    let st = last_state.ok_or_else(|| corrupt(1, "no greeting record".into()))?;
    let session = Session {
        session_id,
        current_node: st.current_node,
        formality: st.formality,
        user_name: st.user_name,
        history,
        detected_emotion: st.detected_emotion,
        rng_seed: seed,
        steps: st.steps,
        clarify_attempts: st.clarify_attempts,
        path: st.path,
        used_utterances: st.used_utterances,
    };
    Ok((session, next_seq))
}

/// Directory of session logs plus its index.
#[derive(Debug)]
pub struct LogDir {
    dir: PathBuf,
    index: Mutex<File>,
}

impl LogDir {
    /// Opens (creating if needed) a log directory and reloads every indexed session.
    pub fn open(dir: &Path) -> Result<(Self, Vec<(Session, SessionLog)>), PersistError> {
        fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;
        let index_path = dir.join(INDEX_FILE);
        let fresh = !index_path.exists();
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(|e| PersistError::io(&index_path, e))?;
        if fresh {
            write_line(
                &mut index,
                &index_path,
                &IndexLine::Index {
                    format: FORMAT_TAG.into(),
                },
            )?;
            sync_dir(dir)?;
        }

        let mut sessions = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in read_lines(&index_path)? {
            let entry: IndexLine = serde_json::from_str(&line).map_err(|e| PersistError::Corrupt {
                path: index_path.clone(),
                line: n,
                message: e.to_string(),
            })?;
            let id = match entry {
                IndexLine::Index { format } if format == FORMAT_TAG => continue,
                IndexLine::Index { format } => {
                    return Err(PersistError::Corrupt {
                        path: index_path.clone(),
                        line: n,
                        message: format!("format {format:?}, expected {FORMAT_TAG}"),
                    })
                }
                IndexLine::Session { session_id, .. } => session_id,
            };
            if !seen.insert(id.clone()) {
                continue;
            }
            let path = session_path(dir, &id);
            if !path.exists() {
                tracing::warn!(session = %id, "indexed session has no log, skipping");
                continue;
            }
            let (session, next_seq) = read_session(&path)?;
            let file = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| PersistError::io(&path, e))?;
            sessions.push((session, SessionLog { path, file, next_seq }));
        }
        // The index was reopened for append after any truncation.
        let index = OpenOptions::new()
            .append(true)
            .open(&index_path)
            .map_err(|e| PersistError::io(&index_path, e))?;
        Ok((
            LogDir {
                dir: dir.to_path_buf(),
                index: Mutex::new(index),
            },
            sessions,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Persists a freshly greeted session: its log first, then its index entry.
    pub fn create(&self, session: &Session) -> Result<SessionLog, PersistError> {
        let path = session_path(&self.dir, &session.session_id);
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| PersistError::io(&path, e))?;
        let created = now_millis();
        write_line(
            &mut file,
            &path,
            &Record::Header {
                format: FORMAT_TAG.into(),
                session_id: session.session_id.clone(),
                seed: session.rng_seed,
                created,
            },
        )?;
        let mut log = SessionLog { path, file, next_seq: 0 };
        log.append(session, 0, None, &SessionDelta::default())?;
        sync_dir(&self.dir)?;

        let index_path = self.dir.join(INDEX_FILE);
        let mut index = self.index.lock().expect("index lock");
        write_line(
            &mut index,
            &index_path,
            &IndexLine::Session {
                session_id: session.session_id.clone(),
                created,
            },
        )?;
        Ok(log)
    }
}

fn session_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ndjson"))
}
