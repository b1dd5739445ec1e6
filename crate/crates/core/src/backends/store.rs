use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Content-addressed key for a backend request: SHA-256 over the request
/// kind and its canonical JSON form.
pub fn request_key<T: Serialize + ?Sized>(kind: &str, request: &T) -> String {
    let body = serde_json::to_vec(request).expect("request types serialize");
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    h.update(&body);
    hex::encode(h.finalize())
}

/// Directory of JSON responses keyed by [`request_key`], laid out as
/// `<root>/<kind>/<key>.json`. Used both as the response cache and as the
/// fixture store for offline runs.
///
/// Writes go through a temporary file and a rename, so concurrent writers of
/// the same key leave one complete file behind.
#[derive(Debug, Clone)]
pub struct ResponseStore {
    root: PathBuf,
}

impl ResponseStore {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    /// Opens an existing directory without creating it.
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Option<T> {
        let bytes = fs::read(self.path(kind, key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put<T: Serialize + ?Sized>(&self, kind: &str, key: &str, value: &T) -> std::io::Result<()> {
        let dir = self.root.join(kind);
        fs::create_dir_all(&dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        serde_json::to_writer_pretty(&mut tmp, value)?;
        tmp.write_all(b"\n")?;
        tmp.persist(self.path(kind, key)).map_err(|e| e.error)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_kind_and_content() {
        assert_eq!(request_key("page", "a"), request_key("page", "a"));
        assert_ne!(request_key("page", "a"), request_key("page", "b"));
        assert_ne!(request_key("page", "a"), request_key("llm", "a"));
        assert_eq!(request_key("x", "a").len(), 64);
    }

    #[test]
    fn put_get_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResponseStore::new(dir.path()).unwrap();
        let key = request_key("search", &("q", 3));
        assert!(store.get::<Vec<String>>("search", &key).is_none());
        store.put("search", &key, &vec!["a".to_string()]).unwrap();
        assert_eq!(store.get::<Vec<String>>("search", &key).unwrap(), vec!["a".to_string()]);
    }
}
