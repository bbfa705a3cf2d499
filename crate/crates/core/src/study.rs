//! Blind perceptual-realism study: image pool, sessions of `k` images drawn
//! without replacement, an append-only judgment store, and per-method
//! aggregation.
//!
//! Participants only ever see opaque session and item tokens. Method labels
//! stay in the pool manifest and are joined back in by [`session_results`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{naturalness_table, Judgment};

/// Version tag carried by every stored record and API payload.
pub const PAYLOAD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate image id {0}")]
    DuplicateImage(String),
    #[error("session size {k} exceeds pool size {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("session size must be at least 1")]
    EmptySession,
    #[error("unknown session {0}")]
    SessionNotFound(String),
    #[error("unknown image {0}")]
    ImageNotFound(String),
    #[error("item {got} is out of order, expected {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error("item {0} already judged")]
    Duplicate(String),
    #[error("session {0} is complete")]
    Complete(String),
    #[error("no judgments recorded")]
    EmptyStore,
    #[error("store record {line}: {reason}")]
    Store { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub image_id: String,
    pub method_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct StudyPool {
    entries: Vec<PoolEntry>,
    index: HashMap<String, usize>,
}

impl StudyPool {
    pub fn from_entries(entries: Vec<PoolEntry>) -> Result<Self, StudyError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(StudyError::DuplicateImage(e.image_id.clone()));
            }
        }
        Ok(StudyPool { entries, index })
    }

    /// Tab-separated `image_id  method_id  path` records; blank lines and
    /// `#` comments ignored; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, origin: &str) -> Result<Self, StudyError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image_id, method_id, path] = fields[..] else {
                return Err(StudyError::Manifest {
                    path: origin.into(),
                    line: i + 1,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            };
            if image_id.is_empty() || method_id.is_empty() || path.is_empty() {
                return Err(StudyError::Manifest {
                    path: origin.into(),
                    line: i + 1,
                    reason: "empty field".into(),
                });
            }
            entries.push(PoolEntry {
                image_id: image_id.into(),
                method_id: method_id.into(),
                path: base.join(path),
            });
        }
        Self::from_entries(entries)
    }

    /// Reads a manifest and checks every listed image is a readable file.
    pub fn load(manifest: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let pool = Self::parse(&text, base, &manifest.display().to_string())?;
        for e in &pool.entries {
            fs::File::open(&e.path).map_err(io_err(&e.path))?;
        }
        Ok(pool)
    }

    pub fn to_manifest(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.image_id, e.method_id, e.path.display()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: &str) -> Option<&PoolEntry> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }
}

/// A participant's answer for one item. `Skipped` is recorded when the
/// display time limit expires before an answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Realistic,
    Unrealistic,
    Skipped,
}

impl Verdict {
    pub fn realistic(self) -> Option<bool> {
        match self {
            Verdict::Realistic => Some(true),
            Verdict::Unrealistic => Some(false),
            Verdict::Skipped => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudySession {
    pub session_id: String,
    pub participant_id: String,
    pub image_ids: Vec<String>,
    pub cursor: usize,
    pub verdicts: Vec<Verdict>,
}

fn token(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl StudySession {
    pub fn k(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.image_ids.len()
    }

    /// Opaque participant-facing token for the item at `position`.
    pub fn item_token(&self, position: usize) -> String {
        token(&[&self.session_id, &position.to_string(), &self.image_ids[position]])
    }

    pub fn current_image(&self) -> Option<&str> {
        self.image_ids.get(self.cursor).map(String::as_str)
    }

    fn position_of_token(&self, item: &str) -> Option<usize> {
        (0..self.k()).find(|&i| self.item_token(i) == item)
    }
}

/// Draws `k` distinct pool entries in random order.
pub fn create_session(
    pool: &StudyPool,
    k: usize,
    seed: u64,
    session_id: impl Into<String>,
    participant_id: impl Into<String>,
) -> Result<StudySession, StudyError> {
    if k == 0 {
        return Err(StudyError::EmptySession);
    }
    if k > pool.len() {
        return Err(StudyError::PoolTooSmall { k, pool: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, k);
    Ok(StudySession {
        session_id: session_id.into(),
        participant_id: participant_id.into(),
        image_ids: chosen.iter().map(|&i| pool.entries[i].image_id.clone()).collect(),
        cursor: 0,
        verdicts: Vec::new(),
    })
}

/// One line of the judgment store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreRecord {
    Session {
        v: u32,
        session_id: String,
        participant_id: String,
        image_ids: Vec<String>,
    },
    Judgment {
        v: u32,
        session_id: String,
        image_id: String,
        position: usize,
        verdict: Verdict,
    },
}

/// Append-only JSON-lines file. Appends are serialized through a lock, so
/// concurrent sessions never interleave or lose records.
#[derive(Debug)]
pub struct JudgmentStore {
    path: PathBuf,
    file: Mutex<fs::File>,
}

impl JudgmentStore {
    pub fn open(path: &Path) -> Result<Self, StudyError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(JudgmentStore {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &StoreRecord) -> Result<(), StudyError> {
        let mut line = serde_json::to_string(rec).expect("record serializes");
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.flush().map_err(io_err(&self.path))
    }

    pub fn read(&self) -> Result<Vec<StoreRecord>, StudyError> {
        read_store(&self.path)
    }
}

/// Parses a store file. A torn final line (no trailing newline) from an
/// interrupted write is ignored; any other malformed line is an error.
pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>, StudyError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    parse_store(&text)
}

pub fn parse_store(text: &str) -> Result<Vec<StoreRecord>, StudyError> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StoreRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if !complete && i + 1 == lines.len() => {}
            Err(e) => {
                return Err(StudyError::Store {
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method_id: String,
    pub realistic: usize,
    pub judged: usize,
    /// Percentage of judged items marked realistic.
    pub naturalness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub v: u32,
    pub methods: Vec<MethodRow>,
    pub sessions: usize,
    pub completed_sessions: usize,
    /// Sessions with fewer recorded items than drawn.
    pub abandoned_sessions: usize,
    pub skipped: usize,
}

impl ResultsTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("method\trealistic\tjudged\tnaturalness\n");
        for r in &self.methods {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.2}%\n",
                r.method_id, r.realistic, r.judged, r.naturalness
            ));
        }
        s.push_str(&format!(
            "sessions {} (completed {}, abandoned {}), skipped items {}\n",
            self.sessions, self.completed_sessions, self.abandoned_sessions, self.skipped
        ));
        s
    }
}

/// Joins stored judgments with the pool's method labels.
pub fn judgments(pool: &StudyPool, records: &[StoreRecord]) -> Result<Vec<Judgment>, StudyError> {
    let participants: HashMap<&str, &str> = records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Session {
                session_id,
                participant_id,
                ..
            } => Some((session_id.as_str(), participant_id.as_str())),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for r in records {
        if let StoreRecord::Judgment {
            session_id,
            image_id,
            verdict,
            ..
        } = r
        {
            let Some(realistic) = verdict.realistic() else {
                continue;
            };
            let entry = pool
                .get(image_id)
                .ok_or_else(|| StudyError::ImageNotFound(image_id.clone()))?;
            out.push(Judgment {
                image_id: image_id.clone(),
                method_id: entry.method_id.clone(),
                realistic,
                participant_id: participants.get(session_id.as_str()).unwrap_or(&"").to_string(),
            });
        }
    }
    Ok(out)
}

/// Per-method naturalness over every recorded verdict, plus session counts.
pub fn session_results(pool: &StudyPool, records: &[StoreRecord]) -> Result<ResultsTable, StudyError> {
    let judged = judgments(pool, records)?;
    if judged.is_empty() {
        return Err(StudyError::EmptyStore);
    }
    let mut drawn: BTreeMap<&str, usize> = BTreeMap::new();
    let mut answered: HashMap<&str, usize> = HashMap::new();
    let mut skipped = 0;
    for r in records {
        match r {
            StoreRecord::Session {
                session_id,
                image_ids,
                ..
            } => {
                drawn.insert(session_id, image_ids.len());
            }
            StoreRecord::Judgment {
                session_id, verdict, ..
            } => {
                *answered.entry(session_id).or_default() += 1;
                skipped += (*verdict == Verdict::Skipped) as usize;
            }
        }
    }
    let completed = drawn
        .iter()
        .filter(|(s, &k)| answered.get(*s).copied().unwrap_or(0) >= k)
        .count();
    let methods = naturalness_table(&judged)
        .into_iter()
        .map(|(method_id, (realistic, judged, naturalness))| MethodRow {
            method_id,
            realistic,
            judged,
            naturalness,
        })
        .collect();
    Ok(ResultsTable {
        v: PAYLOAD_VERSION,
        methods,
        sessions: drawn.len(),
        completed_sessions: completed,
        abandoned_sessions: drawn.len() - completed,
        skipped,
    })
}

/// Session summary sent to the participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub v: u32,
    pub session_id: String,
    pub k: usize,
    pub cursor: usize,
    pub time_limit_ms: Option<u64>,
}

/// The item a participant should judge next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub v: u32,
    pub session_id: String,
    pub item_id: String,
    pub position: usize,
    pub k: usize,
    pub time_limit_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub v: u32,
    pub session_id: String,
    pub cursor: usize,
    pub k: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySettings {
    pub k: usize,
    pub seed: u64,
    pub time_limit_ms: Option<u64>,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            k: 50,
            seed: 0,
            time_limit_ms: None,
        }
    }
}

fn split_mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Session bookkeeping over a pool and a store. Sessions found in an
/// existing store are restored, so a restarted server picks up where it
/// stopped.
#[derive(Debug)]
pub struct Study {
    pool: StudyPool,
    settings: StudySettings,
    sessions: HashMap<String, StudySession>,
    created: u64,
    store: JudgmentStore,
}

impl Study {
    pub fn open(pool: StudyPool, settings: StudySettings, store_path: &Path) -> Result<Self, StudyError> {
        if settings.k == 0 {
            return Err(StudyError::EmptySession);
        }
        if settings.k > pool.len() {
            return Err(StudyError::PoolTooSmall {
                k: settings.k,
                pool: pool.len(),
            });
        }
        let records = read_store(store_path)?;
        let store = JudgmentStore::open(store_path)?;
        let mut sessions = HashMap::new();
        for r in records {
            match r {
                StoreRecord::Session {
                    session_id,
                    participant_id,
                    image_ids,
                    ..
                } => {
                    sessions.insert(
                        session_id.clone(),
                        StudySession {
                            session_id,
                            participant_id,
                            image_ids,
                            cursor: 0,
                            verdicts: Vec::new(),
                        },
                    );
                }
                StoreRecord::Judgment {
                    session_id, verdict, ..
                } => {
                    if let Some(s) = sessions.get_mut(&session_id) {
                        s.cursor += 1;
                        s.verdicts.push(verdict);
                    }
                }
            }
        }
        Ok(Study {
            created: sessions.len() as u64,
            pool,
            settings,
            sessions,
            store,
        })
    }

    pub fn pool(&self) -> &StudyPool {
        &self.pool
    }

    pub fn settings(&self) -> &StudySettings {
        &self.settings
    }

    pub fn session(&self, id: &str) -> Option<&StudySession> {
        self.sessions.get(id)
    }

    fn view(&self, s: &StudySession) -> SessionView {
        SessionView {
            v: PAYLOAD_VERSION,
            session_id: s.session_id.clone(),
            k: s.k(),
            cursor: s.cursor,
            time_limit_ms: self.settings.time_limit_ms,
        }
    }

    pub fn create_session(&mut self, participant_id: Option<&str>) -> Result<SessionView, StudyError> {
        let n = self.created;
        let seed = split_mix(self.settings.seed ^ split_mix(n));
        let session_id = token(&["session", &self.settings.seed.to_string(), &n.to_string()]);
        let participant = participant_id.map_or_else(|| session_id.clone(), str::to_string);
        let s = create_session(&self.pool, self.settings.k, seed, session_id.clone(), participant)?;
        self.store.append(&StoreRecord::Session {
            v: PAYLOAD_VERSION,
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            image_ids: s.image_ids.clone(),
        })?;
        self.created += 1;
        let view = self.view(&s);
        self.sessions.insert(session_id, s);
        Ok(view)
    }

    pub fn session_view(&self, session_id: &str) -> Result<SessionView, StudyError> {
        let s = self
            .sessions
            .get(session_id)
            .ok_or_else(|| StudyError::SessionNotFound(session_id.into()))?;
        Ok(self.view(s))
    }

    /// `None` once every item has been judged.
    pub fn current_item(&self, session_id: &str) -> Result<Option<ItemView>, StudyError> {
        let s = self
            .sessions
            .get(session_id)
            .ok_or_else(|| StudyError::SessionNotFound(session_id.into()))?;
        if s.is_complete() {
            return Ok(None);
        }
        Ok(Some(ItemView {
            v: PAYLOAD_VERSION,
            session_id: s.session_id.clone(),
            item_id: s.item_token(s.cursor),
            position: s.cursor,
            k: s.k(),
            time_limit_ms: self.settings.time_limit_ms,
        }))
    }

    /// File backing an item token of a session (current or already judged).
    pub fn item_path(&self, session_id: &str, item_id: &str) -> Result<&Path, StudyError> {
        let s = self
            .sessions
            .get(session_id)
            .ok_or_else(|| StudyError::SessionNotFound(session_id.into()))?;
        let pos = s
            .position_of_token(item_id)
            .ok_or_else(|| StudyError::ImageNotFound(item_id.into()))?;
        let entry = self
            .pool
            .get(&s.image_ids[pos])
            .ok_or_else(|| StudyError::ImageNotFound(item_id.into()))?;
        Ok(&entry.path)
    }

    pub fn record_judgment(&mut self, session_id: &str, item_id: &str, verdict: Verdict) -> Result<Ack, StudyError> {
        let s = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| StudyError::SessionNotFound(session_id.into()))?;
        match s.position_of_token(item_id) {
            Some(p) if p < s.cursor => return Err(StudyError::Duplicate(item_id.into())),
            _ if s.is_complete() => return Err(StudyError::Complete(session_id.into())),
            Some(p) if p == s.cursor => {}
            _ => {
                return Err(StudyError::OutOfOrder {
                    expected: s.item_token(s.cursor),
                    got: item_id.into(),
                })
            }
        }
        self.store.append(&StoreRecord::Judgment {
            v: PAYLOAD_VERSION,
            session_id: session_id.into(),
            image_id: s.image_ids[s.cursor].clone(),
            position: s.cursor,
            verdict,
        })?;
        s.cursor += 1;
        s.verdicts.push(verdict);
        Ok(Ack {
            v: PAYLOAD_VERSION,
            session_id: session_id.into(),
            cursor: s.cursor,
            k: s.k(),
            complete: s.is_complete(),
        })
    }

    pub fn results(&self) -> Result<ResultsTable, StudyError> {
        session_results(&self.pool, &self.store.read()?)
    }
}

/// Method labels, which must never reach a participant.
pub fn hidden_labels(pool: &StudyPool) -> HashSet<&str> {
    pool.entries.iter().map(|e| e.method_id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize, methods: &[&str]) -> StudyPool {
        StudyPool::from_entries(
            (0..n)
                .map(|i| PoolEntry {
                    image_id: format!("img{i:04}"),
                    method_id: methods[i % methods.len()].into(),
                    path: PathBuf::from(format!("{i}.png")),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn manifest_parsing() {
        let p = StudyPool::parse("# c\na\treal\tx.png\n\nb\tfull\tsub/y.png\n", Path::new("/d"), "m").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.get("b").unwrap().path, Path::new("/d/sub/y.png"));
        assert!(matches!(
            StudyPool::parse("a\treal\n", Path::new("."), "m"),
            Err(StudyError::Manifest { line: 1, .. })
        ));
        assert!(matches!(
            StudyPool::parse("a\treal\tx\na\tfake\ty\n", Path::new("."), "m"),
            Err(StudyError::DuplicateImage(_))
        ));
    }

    #[test]
    fn sessions_draw_without_replacement() {
        let p = pool(1600, &["real", "full"]);
        let s = create_session(&p, 50, 1, "s", "p").unwrap();
        assert_eq!(s.image_ids.iter().collect::<HashSet<_>>().len(), 50);
        let all = create_session(&p, 1600, 2, "s", "p").unwrap();
        let mut ids = all.image_ids.clone();
        ids.sort();
        assert_eq!(ids, p.entries().iter().map(|e| e.image_id.clone()).collect::<Vec<_>>());
        assert!(matches!(create_session(&p, 1601, 0, "s", "p"), Err(StudyError::PoolTooSmall { .. })));
        assert_eq!(create_session(&p, 50, 9, "s", "p").unwrap(), create_session(&p, 50, 9, "s", "p").unwrap());
    }

    #[test]
    fn different_seeds_give_different_orders() {
        let p = pool(100, &["real"]);
        for t in 0..20 {
            let a = create_session(&p, 100, 2 * t, "s", "p").unwrap();
            let b = create_session(&p, 100, 2 * t + 1, "s", "p").unwrap();
            assert_ne!(a.image_ids, b.image_ids);
        }
    }

    #[test]
    fn protocol_rules() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("store.jsonl");
        let mut st = Study::open(pool(10, &["real", "x"]), StudySettings { k: 3, ..Default::default() }, &store).unwrap();
        let s = st.create_session(None).unwrap();
        let first = st.current_item(&s.session_id).unwrap().unwrap();
        let second_token = st.session(&s.session_id).unwrap().item_token(1);
        match st.record_judgment(&s.session_id, &second_token, Verdict::Realistic) {
            Err(StudyError::OutOfOrder { expected, .. }) => assert_eq!(expected, first.item_id),
            other => panic!("{other:?}"),
        }
        let ack = st.record_judgment(&s.session_id, &first.item_id, Verdict::Realistic).unwrap();
        assert_eq!(ack.cursor, 1);
        let before = fs::read(&store).unwrap();
        assert!(matches!(
            st.record_judgment(&s.session_id, &first.item_id, Verdict::Unrealistic),
            Err(StudyError::Duplicate(_))
        ));
        assert_eq!(fs::read(&store).unwrap(), before);
        assert!(matches!(
            st.record_judgment("nope", &first.item_id, Verdict::Realistic),
            Err(StudyError::SessionNotFound(_))
        ));
        let t1 = st.current_item(&s.session_id).unwrap().unwrap().item_id;
        st.record_judgment(&s.session_id, &t1, Verdict::Skipped).unwrap();
        let t2 = st.current_item(&s.session_id).unwrap().unwrap().item_id;
        assert!(st.record_judgment(&s.session_id, &t2, Verdict::Unrealistic).unwrap().complete);
        assert!(st.current_item(&s.session_id).unwrap().is_none());

        let reopened = Study::open(st.pool().clone(), st.settings().clone(), &store).unwrap();
        assert_eq!(reopened.session(&s.session_id), st.session(&s.session_id));
        let r = reopened.results().unwrap();
        assert_eq!((r.sessions, r.completed_sessions, r.skipped), (1, 1, 1));
        assert_eq!(r.methods.iter().map(|m| m.judged).sum::<usize>(), 2);
    }

    #[test]
    fn empty_store_has_no_results() {
        assert!(matches!(session_results(&pool(3, &["a"]), &[]), Err(StudyError::EmptyStore)));
    }

    #[test]
    fn torn_final_line_is_ignored() {
        let rec = StoreRecord::Judgment {
            v: 1,
            session_id: "s".into(),
            image_id: "i".into(),
            position: 0,
            verdict: Verdict::Realistic,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(parse_store(&format!("{line}\n{{\"kind\":")).unwrap(), [rec.clone()]);
        assert!(parse_store(&format!("garbage\n{line}\n")).is_err());
    }
}
