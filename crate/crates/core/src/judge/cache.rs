//! Content-addressed, append-only store of raw judge replies.
//!
//! Layout: `<dir>/<first two hex chars of key>.jsonl`, one
//! `{"key": .., "kind": .., "raw": ..}` object per line. The first reply
//! stored under a key is kept; later writes for the same key are ignored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JudgeKind, JudgeTask};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn for_task(task: &JudgeTask, judge_model: &str) -> Self {
        let material = serde_json::json!({
            "kind": task.kind,
            "template_id": task.template_id,
            "rendered_prompt": task.rendered_prompt,
            "decode": task.decode,
            "judge_model": judge_model,
        });
        let digest = Sha256::digest(material.to_string().as_bytes());
        CacheKey(hex::encode(digest))
    }

    pub fn prefix(&self) -> &str {
        &self.0[..2]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    kind: JudgeKind,
    raw: String,
}

#[derive(Debug)]
pub struct JudgeCache {
    dir: PathBuf,
    shards: Mutex<HashMap<String, HashMap<CacheKey, String>>>,
}

impl JudgeCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, shards: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn shard_path(&self, prefix: &str) -> PathBuf {
        self.dir.join(format!("{prefix}.jsonl"))
    }

    fn load_shard(&self, prefix: &str) -> std::io::Result<HashMap<CacheKey, String>> {
        let path = self.shard_path(prefix);
        let mut map = HashMap::new();
        if !path.exists() {
            return Ok(map);
        }
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            match serde_json::from_str::<Entry>(&line) {
                Ok(e) => {
                    map.entry(e.key).or_insert(e.raw);
                }
                // A torn final line from an interrupted run is skipped.
                Err(err) => log::warn!("skipping bad cache line in {}: {err}", path.display()),
            }
        }
        Ok(map)
    }

    pub fn get(&self, key: &CacheKey) -> std::io::Result<Option<String>> {
        let mut shards = self.shards.lock().unwrap_or_else(|p| p.into_inner());
        if !shards.contains_key(key.prefix()) {
            let shard = self.load_shard(key.prefix())?;
            shards.insert(key.prefix().to_string(), shard);
        }
        Ok(shards[key.prefix()].get(key).cloned())
    }

    /// Store `raw` unless the key already has a value. Returns the pinned value.
    pub fn put(&self, key: &CacheKey, kind: JudgeKind, raw: &str) -> std::io::Result<String> {
        let mut shards = self.shards.lock().unwrap_or_else(|p| p.into_inner());
        if !shards.contains_key(key.prefix()) {
            let shard = self.load_shard(key.prefix())?;
            shards.insert(key.prefix().to_string(), shard);
        }
        let shard = shards.get_mut(key.prefix()).expect("shard loaded");
        if let Some(existing) = shard.get(key) {
            return Ok(existing.clone());
        }
        let mut file = OpenOptions::new().create(true).append(true).open(self.shard_path(key.prefix()))?;
        let entry = Entry { key: key.clone(), kind, raw: raw.to_string() };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        shard.insert(key.clone(), raw.to_string());
        Ok(raw.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> CacheKey {
        CacheKey(hex::encode(Sha256::digest(s.as_bytes())))
    }

    #[test]
    fn first_write_wins_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let cache = JudgeCache::open(dir.path()).unwrap();
        let k = key("a");
        assert_eq!(cache.get(&k).unwrap(), None);
        assert_eq!(cache.put(&k, JudgeKind::Consistency, "Yes").unwrap(), "Yes");
        assert_eq!(cache.put(&k, JudgeKind::Consistency, "No").unwrap(), "Yes");
        let reopened = JudgeCache::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&k).unwrap().as_deref(), Some("Yes"));
        let shard = dir.path().join(format!("{}.jsonl", k.prefix()));
        assert_eq!(fs::read_to_string(shard).unwrap().lines().count(), 1);
    }
}
