//! File-per-version store rooted at one directory:
//!
//! ```text
//! taxonomies/<id>/v<N>.json
//! sessions/<id>.json
//! templates/<id>.json
//! annotations/<template_id>/<coder_id>.json
//! reports/
//! ```
//!
//! Every file is written to a temporary name first. Taxonomy versions are then
//! published with a hard link, which fails if the version already exists, so
//! two writers racing on one version number cannot both succeed even across
//! processes. Other files are published with a rename.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::annotation::{AnnotationRecord, WritingTemplate};
use crate::dialogue::{SessionRecord, SessionState};
use crate::taxonomy::{deserialize, serialize, CodecError, Taxonomy};

const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("version conflict on {taxonomy_id}: expected version {expected}, got {got}")]
    VersionConflict { taxonomy_id: String, expected: u32, got: u32 },
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid identifier {0:?}")]
    BadId(String),
    #[error("taxonomy {taxonomy_id} already has an active session {session_id}")]
    ActiveSession { taxonomy_id: String, session_id: String },
    #[error("cannot store taxonomy: {0}")]
    Codec(#[from] CodecError),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Places where a fault-injection hook may run during a version write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Half of the temporary file has been written.
    AfterPartialWrite,
    /// The temporary file is complete but not yet published.
    BeforePublish,
}

type CrashHook = Box<dyn Fn(CrashPoint) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxonomySummary {
    pub taxonomy_id: String,
    pub domain: String,
    pub task: String,
    pub versions: Vec<u32>,
}

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    crash_hook: Option<CrashHook>,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identifiers become path components, so they are restricted to a safe set.
pub fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadId(id.to_string()))
    }
}

fn version_of(file_name: &str) -> Option<u32> {
    file_name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
}

impl Store {
    /// Opens (creating if needed) a store and removes leftover temporary files.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["taxonomies", "sessions", "templates", "annotations", "reports"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let store = Store {
            root,
            locks: Mutex::new(HashMap::new()),
            crash_hook: None,
            tmp_counter: AtomicU64::new(0),
        };
        store.clean_temp_files()?;
        Ok(store)
    }

    pub fn with_crash_hook(mut self, hook: impl Fn(CrashPoint) + Send + Sync + 'static) -> Self {
        self.crash_hook = Some(Box::new(hook));
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Mutex shared by everyone using `key`; serializes writers per taxonomy or session.
    pub fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    fn crash(&self, point: CrashPoint) {
        if let Some(hook) = &self.crash_hook {
            hook(point);
        }
    }

    fn clean_temp_files(&self) -> Result<(), StoreError> {
        fn walk(dir: &Path) -> Result<(), StoreError> {
            for entry in fs::read_dir(dir).map_err(io_err(dir))? {
                let entry = entry.map_err(io_err(dir))?;
                let path = entry.path();
                if path.is_dir() {
                    walk(&path)?;
                } else if entry.file_name().to_string_lossy().starts_with(TMP_PREFIX) {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
            Ok(())
        }
        walk(&self.root)
    }

    fn temp_path(&self, dir: &Path) -> PathBuf {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        dir.join(format!("{TMP_PREFIX}{}-{n}", std::process::id()))
    }

    fn write_temp(&self, dir: &Path, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = self.temp_path(dir);
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let half = bytes.len() / 2;
        f.write_all(&bytes[..half]).map_err(io_err(&tmp))?;
        f.flush().map_err(io_err(&tmp))?;
        self.crash(CrashPoint::AfterPartialWrite);
        f.write_all(&bytes[half..]).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        Ok(tmp)
    }

    fn replace_file(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().unwrap_or(&self.root);
        let tmp = self.write_temp(dir, bytes)?;
        self.crash(CrashPoint::BeforePublish);
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path, what: impl FnOnce() -> String) -> Result<T, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(what())),
            Err(e) => return Err(io_err(path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        bytes.push(b'\n');
        self.replace_file(path, &bytes)
    }

    // Taxonomies

    fn taxonomy_dir(&self, id: &str) -> PathBuf {
        self.root.join("taxonomies").join(id)
    }

    pub fn taxonomy_path(&self, id: &str, version: u32) -> PathBuf {
        self.taxonomy_dir(id).join(format!("v{version}.json"))
    }

    /// Stored versions of `id`, ascending. Empty for an unknown id.
    pub fn versions(&self, id: &str) -> Result<Vec<u32>, StoreError> {
        check_id(id)?;
        let dir = self.taxonomy_dir(id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut versions = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(v) = version_of(&entry.file_name().to_string_lossy()) {
                versions.push(v);
            }
        }
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn latest_version(&self, id: &str) -> Result<Option<u32>, StoreError> {
        Ok(self.versions(id)?.last().copied())
    }

    /// Stores `tax` as its declared version, which must be exactly one past the
    /// latest stored version.
    pub fn put_taxonomy_version(&self, tax: &Taxonomy) -> Result<u32, StoreError> {
        check_id(&tax.taxonomy_id)?;
        let bytes = serialize(tax)?;
        let lock = self.key_lock(&format!("taxonomy/{}", tax.taxonomy_id));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let expected = self.latest_version(&tax.taxonomy_id)?.unwrap_or(0) + 1;
        let conflict = || StoreError::VersionConflict {
            taxonomy_id: tax.taxonomy_id.clone(),
            expected,
            got: tax.version,
        };
        if tax.version != expected {
            return Err(conflict());
        }
        let dir = self.taxonomy_dir(&tax.taxonomy_id);
        let tmp = self.write_temp(&dir, &bytes)?;
        self.crash(CrashPoint::BeforePublish);
        let target = self.taxonomy_path(&tax.taxonomy_id, tax.version);
        let published = fs::hard_link(&tmp, &target);
        let _ = fs::remove_file(&tmp);
        match published {
            Ok(()) => Ok(tax.version),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(conflict()),
            Err(e) => Err(io_err(&target)(e)),
        }
    }

    /// The canonical bytes of one stored version.
    pub fn get_taxonomy_bytes(&self, id: &str, version: u32) -> Result<Vec<u8>, StoreError> {
        check_id(id)?;
        let path = self.taxonomy_path(id, version);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("taxonomy {id} v{version}"))),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn get_taxonomy(&self, id: &str, version: u32) -> Result<Taxonomy, StoreError> {
        let bytes = self.get_taxonomy_bytes(id, version)?;
        deserialize(&bytes).map_err(|e| StoreError::Corrupt {
            path: self.taxonomy_path(id, version),
            message: e.to_string(),
        })
    }

    /// `version` or, when absent, the latest version.
    pub fn resolve_taxonomy(&self, id: &str, version: Option<u32>) -> Result<Taxonomy, StoreError> {
        let v = match version {
            Some(v) => v,
            None => self.latest_version(id)?.ok_or_else(|| StoreError::NotFound(format!("taxonomy {id}")))?,
        };
        self.get_taxonomy(id, v)
    }

    /// All taxonomies ordered by id.
    pub fn list_taxonomies(&self) -> Result<Vec<TaxonomySummary>, StoreError> {
        let dir = self.root.join("taxonomies");
        let mut ids: Vec<String> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() && check_id(&name).is_ok() {
                ids.push(name);
            }
        }
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let versions = self.versions(&id)?;
            let Some(&latest) = versions.last() else { continue };
            let t = self.get_taxonomy(&id, latest)?;
            out.push(TaxonomySummary {
                taxonomy_id: id,
                domain: t.domain,
                task: t.task,
                versions,
            });
        }
        Ok(out)
    }

    // Sessions

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    pub fn put_session(&self, record: &SessionRecord) -> Result<(), StoreError> {
        check_id(&record.session_id)?;
        self.write_json(&self.session_path(&record.session_id), record)
    }

    /// Stores a new session unless its taxonomy already has an unfinalized one.
    pub fn create_session(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let lock = self.key_lock(&format!("sessions-of/{}", record.taxonomy_id));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(active) = self.active_session(&record.taxonomy_id)? {
            return Err(StoreError::ActiveSession {
                taxonomy_id: record.taxonomy_id.clone(),
                session_id: active.session_id,
            });
        }
        self.put_session(record)
    }

    pub fn get_session(&self, id: &str) -> Result<SessionRecord, StoreError> {
        check_id(id)?;
        self.read_json(&self.session_path(id), || format!("session {id}"))
    }

    /// All sessions ordered by id.
    pub fn list_sessions(&self) -> Result<Vec<SessionRecord>, StoreError> {
        let dir = self.root.join("sessions");
        let mut names: Vec<String> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let name = entry.map_err(io_err(&dir))?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                if !name.starts_with(TMP_PREFIX) {
                    names.push(id.to_string());
                }
            }
        }
        names.sort();
        names.iter().map(|id| self.get_session(id)).collect()
    }

    pub fn active_session(&self, taxonomy_id: &str) -> Result<Option<SessionRecord>, StoreError> {
        Ok(self
            .list_sessions()?
            .into_iter()
            .find(|s| s.taxonomy_id == taxonomy_id && s.state != SessionState::Finalized))
    }

    // Templates and annotations

    fn template_path(&self, id: &str) -> PathBuf {
        self.root.join("templates").join(format!("{id}.json"))
    }

    pub fn put_template(&self, template: &WritingTemplate) -> Result<(), StoreError> {
        check_id(&template.template_id)?;
        self.write_json(&self.template_path(&template.template_id), template)
    }

    pub fn get_template(&self, id: &str) -> Result<WritingTemplate, StoreError> {
        check_id(id)?;
        self.read_json(&self.template_path(id), || format!("template {id}"))
    }

    pub fn put_annotations(&self, template_id: &str, coder_id: &str, records: &[AnnotationRecord]) -> Result<(), StoreError> {
        check_id(template_id)?;
        check_id(coder_id)?;
        let path = self.root.join("annotations").join(template_id).join(format!("{coder_id}.json"));
        self.write_json(&path, &records)
    }

    /// Every coder's records for a template, coders in id order.
    pub fn get_annotations(&self, template_id: &str) -> Result<Vec<AnnotationRecord>, StoreError> {
        check_id(template_id)?;
        let dir = self.root.join("annotations").join(template_id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in entries {
            let path = entry.map_err(io_err(&dir))?.path();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if name.ends_with(".json") && !name.starts_with(TMP_PREFIX) {
                files.push(path);
            }
        }
        files.sort();
        let mut out = Vec::new();
        for f in files {
            let records: Vec<AnnotationRecord> = self.read_json(&f, || f.display().to_string())?;
            out.extend(records);
        }
        Ok(out)
    }

    pub fn put_report(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        check_id(name)?;
        let path = self.root.join("reports").join(name);
        self.replace_file(&path, bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::legal_email;

    #[test]
    fn versions_must_be_consecutive() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let t = legal_email();
        assert_eq!(store.put_taxonomy_version(&t).unwrap(), 1);
        assert!(store.taxonomy_path(&t.taxonomy_id, 1).exists());
        let mut gap = t.clone();
        gap.version = 3;
        assert!(matches!(store.put_taxonomy_version(&gap), Err(StoreError::VersionConflict { expected: 2, got: 3, .. })));
        assert!(matches!(store.put_taxonomy_version(&t), Err(StoreError::VersionConflict { .. })));
        assert_eq!(store.get_taxonomy(&t.taxonomy_id, 1).unwrap(), t);
        assert_eq!(store.get_taxonomy_bytes(&t.taxonomy_id, 1).unwrap(), serialize(&t).unwrap());
        assert!(matches!(store.get_taxonomy("nope", 1), Err(StoreError::NotFound(_))));
        assert!(matches!(store.get_taxonomy("../x", 1), Err(StoreError::BadId(_))));
    }

    #[test]
    fn racing_writers_one_wins() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        let t = legal_email();
        store.put_taxonomy_version(&t).unwrap();
        let mut v2 = t.clone();
        v2.version = 2;
        v2.parent_version = Some(1);
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let (s, v) = (store.clone(), v2.clone());
                std::thread::spawn(move || s.put_taxonomy_version(&v))
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
        assert_eq!(results.iter().filter(|r| matches!(r, Err(StoreError::VersionConflict { .. }))).count(), 1);
    }

    #[test]
    fn temp_files_are_ignored_and_cleaned() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let t = legal_email();
        let tdir = dir.path().join("taxonomies").join(&t.taxonomy_id);
        fs::create_dir_all(&tdir).unwrap();
        fs::write(tdir.join(".tmp-1-0"), b"{ half").unwrap();
        assert_eq!(store.versions(&t.taxonomy_id).unwrap(), Vec::<u32>::new());
        drop(store);
        let store = Store::open(dir.path()).unwrap();
        assert!(!tdir.join(".tmp-1-0").exists());
        store.put_taxonomy_version(&t).unwrap();
        assert_eq!(store.list_taxonomies().unwrap().len(), 1);
    }

    #[test]
    fn templates_and_annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let tpl = WritingTemplate::new("a b.", "a c.");
        store.put_template(&tpl).unwrap();
        assert_eq!(store.get_template(&tpl.template_id).unwrap(), tpl);
        let rec = AnnotationRecord {
            coder_id: "bob".into(),
            coder_kind: crate::annotation::CoderKind::Human,
            template_id: tpl.template_id.clone(),
            unit_index: 0,
            label: "X".into(),
            note: None,
        };
        store.put_annotations(&tpl.template_id, "bob", std::slice::from_ref(&rec)).unwrap();
        let alice = AnnotationRecord { coder_id: "alice".into(), ..rec.clone() };
        store.put_annotations(&tpl.template_id, "alice", std::slice::from_ref(&alice)).unwrap();
        assert_eq!(store.get_annotations(&tpl.template_id).unwrap(), vec![alice, rec]);
        assert!(store.get_annotations("none").unwrap().is_empty());
    }
}
