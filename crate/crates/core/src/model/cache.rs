//! Persistent response cache.
//!
//! Entries live in an append-only record file, one record per response:
//!
//! ```text
//! <key digest hex> <content length in bytes>\n
//! <content bytes>\n
//! ```
//!
//! The whole file is replayed into an in-memory index on open, so lookups
//! never touch disk. Writes are flushed per record, which keeps the file
//! valid after an interrupt; a truncated tail record is skipped with a
//! warning and treated as a miss.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::CacheKey;

struct CacheInner {
    index: HashMap<CacheKey, String>,
    file: File,
}

pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<CacheInner>,
}

impl ResponseCache {
    /// Opens (creating if absent) the record file at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let index = match File::open(&path) {
            Ok(file) => replay(&path, file),
            Err(err) if err.kind() == io::ErrorKind::NotFound => HashMap::new(),
            Err(err) => return Err(err),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            inner: Mutex::new(CacheInner { index, file }),
        })
    }

    #[must_use]
    pub fn path(&self) -> &Path {
        &self.path
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").index.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[must_use]
    pub fn get(&self, key: &CacheKey) -> Option<String> {
        self.inner
            .lock()
            .expect("cache lock")
            .index
            .get(key)
            .cloned()
    }

    /// Stores `content` under `key`. Re-putting an existing key is a no-op,
    /// so the record file never accumulates duplicates.
    pub fn put(&self, key: &CacheKey, content: &str) -> io::Result<()> {
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.index.contains_key(key) {
            return Ok(());
        }
        let mut record = format!("{} {}\n", key.hex(), content.len()).into_bytes();
        record.extend_from_slice(content.as_bytes());
        record.push(b'\n');
        inner.file.write_all(&record)?;
        inner.file.flush()?;
        inner.index.insert(*key, content.to_string());
        Ok(())
    }
}

fn replay(path: &Path, file: File) -> HashMap<CacheKey, String> {
    let mut index = HashMap::new();
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    loop {
        header.clear();
        match reader.read_line(&mut header) {
            Ok(0) => break,
            Ok(_) => {}
            Err(_) => {
                warn_corrupt(path, index.len());
                break;
            }
        }
        let Some(record) = parse_header(&header) else {
            warn_corrupt(path, index.len());
            break;
        };
        let (key, len) = record;
        let mut content = vec![0u8; len];
        if reader.read_exact(&mut content).is_err() {
            warn_corrupt(path, index.len());
            break;
        }
        let mut newline = [0u8; 1];
        if reader.read_exact(&mut newline).is_err() || newline[0] != b'\n' {
            warn_corrupt(path, index.len());
            break;
        }
        match String::from_utf8(content) {
            Ok(content) => {
                index.insert(key, content);
            }
            Err(_) => {
                warn_corrupt(path, index.len());
                break;
            }
        }
    }
    index
}

fn parse_header(line: &str) -> Option<(CacheKey, usize)> {
    let line = line.strip_suffix('\n')?;
    let (hex, len) = line.split_once(' ')?;
    Some((CacheKey::parse_hex(hex)?, len.parse().ok()?))
}

fn warn_corrupt(path: &Path, loaded: usize) {
    log::warn!(
        "corrupted record in cache file {} after {loaded} entries; remainder ignored",
        path.display()
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenerationRequest, Message};

    fn key(tag: &str) -> CacheKey {
        CacheKey::for_request(&GenerationRequest {
            model_name: "m".into(),
            messages: vec![Message::user("prompt")],
            temperature: 0.0,
            max_tokens: 16,
            seed_tag: tag.into(),
        })
    }

    #[test]
    fn put_then_get_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("c.log")).unwrap();
        cache.put(&key("a"), "x").unwrap();
        assert_eq!(cache.get(&key("a")), Some("x".to_string()));
    }

    #[test]
    fn get_before_put_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("c.log")).unwrap();
        assert_eq!(cache.get(&key("a")), None);
    }

    #[test]
    fn entries_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.log");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put(&key("a"), "first\nline two").unwrap();
            cache.put(&key("b"), "").unwrap();
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.get(&key("a")), Some("first\nline two".to_string()));
        assert_eq!(cache.get(&key("b")), Some(String::new()));
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn duplicate_put_does_not_grow_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.log");
        let cache = ResponseCache::open(&path).unwrap();
        cache.put(&key("a"), "x").unwrap();
        let size = std::fs::metadata(&path).unwrap().len();
        cache.put(&key("a"), "x").unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), size);
    }

    #[test]
    fn corrupted_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.log");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put(&key("a"), "intact").unwrap();
        }
        // Simulate an interrupted append: header promises more bytes than
        // were written.
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        write!(file, "{} 100\ntruncated", key("b").hex()).unwrap();
        drop(file);

        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.get(&key("a")), Some("intact".to_string()));
        assert_eq!(cache.get(&key("b")), None);
    }
}
