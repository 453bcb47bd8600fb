use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fixture_key, ChatGateway, ChatRequest, Completion, GatewayError, LlmRole, Usage};

/// One recorded response. Stored one per line in `<dir>/<role>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: String,
    /// Human-readable preview of the request, for reviewing fixture files.
    pub request_digest: String,
    pub content: String,
    #[serde(default = "default_finish")]
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

fn default_finish() -> String {
    "stop".into()
}

impl FixtureRecord {
    pub fn completion(&self) -> Completion {
        Completion { content: self.content.clone(), finish_reason: self.finish_reason.clone(), usage: self.usage }
    }
}

pub fn request_digest(req: &ChatRequest) -> String {
    let last = req.messages.last().map(|m| m.content.as_str()).unwrap_or("");
    let preview: String = last.chars().take(120).collect::<String>().replace('\n', " ");
    format!("{} | {} messages | last: {}", req.role_target, req.messages.len(), preview)
}

#[derive(Default)]
struct StoreState {
    records: BTreeMap<LlmRole, BTreeMap<String, FixtureRecord>>,
    /// Keys that were on disk when the store was opened.
    preexisting: BTreeSet<String>,
}

/// Directory of JSONL fixture files keyed by [`fixture_key`].
pub struct FixtureStore {
    dir: PathBuf,
    state: Mutex<StoreState>,
}

impl FixtureStore {
    /// Opens a fixture directory. A missing directory is an empty store.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        let mut state = StoreState::default();
        if dir.is_dir() {
            for role in LlmRole::ALL {
                let path = dir.join(format!("{}.jsonl", role.as_str()));
                if !path.exists() {
                    continue;
                }
                let file = fs::File::open(&path).map_err(|e| store_err(&path, e))?;
                let table = state.records.entry(role).or_default();
                for (n, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| store_err(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: FixtureRecord = serde_json::from_str(&line)
                        .map_err(|e| GatewayError::Store(format!("{}:{}: {e}", path.display(), n + 1)))?;
                    state.preexisting.insert(rec.key.clone());
                    table.insert(rec.key.clone(), rec);
                }
            }
        } else if dir.exists() {
            return Err(GatewayError::Store(format!("{} is not a directory", dir.display())));
        }
        Ok(FixtureStore { dir, state: Mutex::new(state) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.lock().records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, role: LlmRole, key: &str) -> Option<FixtureRecord> {
        self.lock().records.get(&role).and_then(|t| t.get(key)).cloned()
    }

    /// Inserts a record. Keys already on disk are only replaced when `force`
    /// is set; re-recording a key within a session must reproduce the same
    /// content.
    pub fn insert(&self, role: LlmRole, rec: FixtureRecord, force: bool) -> Result<(), GatewayError> {
        let mut state = self.lock();
        let preexisting = state.preexisting.contains(&rec.key);
        let table = state.records.entry(role).or_default();
        if let Some(existing) = table.get(&rec.key) {
            if !force && (preexisting || existing.content != rec.content) {
                return Err(GatewayError::Conflict { key: rec.key });
            }
        }
        table.insert(rec.key.clone(), rec);
        Ok(())
    }

    /// Writes every role file, records sorted by key.
    pub fn flush(&self) -> Result<(), GatewayError> {
        let state = self.lock();
        fs::create_dir_all(&self.dir).map_err(|e| store_err(&self.dir, e))?;
        for (role, table) in &state.records {
            let path = self.dir.join(format!("{}.jsonl", role.as_str()));
            let tmp = path.with_extension("jsonl.tmp");
            let mut out = std::io::BufWriter::new(fs::File::create(&tmp).map_err(|e| store_err(&tmp, e))?);
            for rec in table.values() {
                let line = serde_json::to_string(rec).map_err(|e| GatewayError::Store(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| store_err(&tmp, e))?;
            }
            out.flush().map_err(|e| store_err(&tmp, e))?;
            drop(out);
            fs::rename(&tmp, &path).map_err(|e| store_err(&path, e))?;
        }
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StoreState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn store_err(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Store(format!("{}: {e}", path.display()))
}

/// Answers from recorded fixtures only. A missing key fails fast.
pub struct ReplayGateway {
    store: FixtureStore,
}

impl ReplayGateway {
    pub fn new(store: FixtureStore) -> Self {
        ReplayGateway { store }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(ReplayGateway { store: FixtureStore::open(dir)? })
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl ChatGateway for ReplayGateway {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let key = fixture_key(req);
        self.store
            .get(req.role_target, &key)
            .map(|r| r.completion())
            .ok_or(GatewayError::MissingFixture { role: req.role_target, key })
    }
}

/// Forwards to an inner backend and records every answer. Repeated
/// requests within a session are served from what was just recorded.
pub struct RecordingGateway<G> {
    inner: G,
    store: FixtureStore,
    force: bool,
}

impl<G: ChatGateway> RecordingGateway<G> {
    pub fn new(inner: G, store: FixtureStore, force: bool) -> Self {
        RecordingGateway { inner, store, force }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    pub fn flush(&self) -> Result<(), GatewayError> {
        self.store.flush()
    }

    pub fn into_store(self) -> FixtureStore {
        self.store
    }
}

impl<G: ChatGateway> ChatGateway for RecordingGateway<G> {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let key = fixture_key(req);
        let already = self.store.get(req.role_target, &key);
        if let Some(rec) = &already {
            let on_disk = self.store.lock().preexisting.contains(&key);
            if !on_disk {
                return Ok(rec.completion());
            }
            if !self.force {
                return Err(GatewayError::Conflict { key });
            }
        }
        let completion = self.inner.chat(req)?;
        let rec = FixtureRecord {
            key,
            request_digest: request_digest(req),
            content: completion.content.clone(),
            finish_reason: completion.finish_reason.clone(),
            usage: completion.usage,
        };
        self.store.insert(req.role_target, rec, self.force)?;
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, DecodeParams, FnGateway};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(LlmRole::Agent, vec![ChatMessage::user(text)], DecodeParams::default())
    }

    fn echo() -> FnGateway<impl Fn(&ChatRequest) -> Result<Completion, GatewayError> + Send + Sync> {
        FnGateway(|r: &ChatRequest| Ok(Completion::stop(format!("echo: {}", r.messages[0].content))))
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingGateway::new(echo(), FixtureStore::open(dir.path()).unwrap(), false);
        let live = rec.chat(&req("hello")).unwrap();
        rec.flush().unwrap();

        let replay = ReplayGateway::open(dir.path()).unwrap();
        assert_eq!(replay.chat(&req("hello")).unwrap().content, live.content);
        assert!(matches!(replay.chat(&req("other")), Err(GatewayError::MissingFixture { .. })));
    }

    #[test]
    fn recorded_file_schema() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingGateway::new(echo(), FixtureStore::open(dir.path()).unwrap(), false);
        rec.chat(&req("a")).unwrap();
        rec.chat(&req("b")).unwrap();
        rec.flush().unwrap();
        let text = fs::read_to_string(dir.path().join("agent.jsonl")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for field in ["key", "request_digest", "content"] {
                assert!(v.get(field).is_some(), "missing {field}");
            }
        }
    }

    #[test]
    fn overwrite_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let first = RecordingGateway::new(echo(), FixtureStore::open(dir.path()).unwrap(), false);
        first.chat(&req("x")).unwrap();
        first.flush().unwrap();

        let again = RecordingGateway::new(echo(), FixtureStore::open(dir.path()).unwrap(), false);
        assert!(matches!(again.chat(&req("x")), Err(GatewayError::Conflict { .. })));

        let forced = RecordingGateway::new(
            FnGateway(|_: &ChatRequest| Ok(Completion::stop("new"))),
            FixtureStore::open(dir.path()).unwrap(),
            true,
        );
        assert_eq!(forced.chat(&req("x")).unwrap().content, "new");
        forced.flush().unwrap();
        assert_eq!(ReplayGateway::open(dir.path()).unwrap().chat(&req("x")).unwrap().content, "new");
    }

    #[test]
    fn repeated_request_in_session_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let count = std::sync::atomic::AtomicU32::new(0);
        let inner = FnGateway(|_: &ChatRequest| {
            count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(Completion::stop("same"))
        });
        let rec = RecordingGateway::new(inner, FixtureStore::open(dir.path()).unwrap(), false);
        rec.chat(&req("q")).unwrap();
        rec.chat(&req("q")).unwrap();
        assert_eq!(count.load(std::sync::atomic::Ordering::SeqCst), 1);
    }

    #[test]
    fn flush_is_sorted_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingGateway::new(echo(), FixtureStore::open(dir.path()).unwrap(), false);
        for t in ["c", "a", "b"] {
            rec.chat(&req(t)).unwrap();
        }
        rec.flush().unwrap();
        let first = fs::read(dir.path().join("agent.jsonl")).unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        store.flush().unwrap();
        assert_eq!(first, fs::read(dir.path().join("agent.jsonl")).unwrap());
        let text = String::from_utf8(first).unwrap();
        let keys: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<FixtureRecord>(l).unwrap().key)
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
