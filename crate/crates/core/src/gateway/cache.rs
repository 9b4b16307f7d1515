//! Append-only JSONL call cache.
//!
//! Every completed backend call is recorded as one line keyed by a digest of
//! everything that determines the response: role, endpoint identity, template
//! name and version, decode parameters, attempt ordinal, and the rendered
//! prompt. Replaying a run against a warm cache therefore issues zero
//! backend calls, and killing a run mid-stage loses at most the call in
//! flight. Lines that fail to parse (e.g. a truncated tail after a crash)
//! are skipped on load; the next write simply appends past them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DecodeParams;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    value: String,
    template_version: String,
    created_at: u64,
}

pub struct CallCache {
    inner: Mutex<Inner>,
}

struct Inner {
    entries: HashMap<String, String>,
    writer: Option<BufWriter<File>>,
}

impl CallCache {
    /// Cache that lives only for this process. Useful for tests and one-shot
    /// library use; the pipeline always uses a file-backed cache.
    pub fn in_memory() -> Self {
        CallCache {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                writer: None,
            }),
        }
    }

    /// Opens (or creates) a file-backed cache, loading all existing entries.
    pub fn at_path(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut entries = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let raw = fs::read(path)?;
            needs_newline = raw.last().is_some_and(|&b| b != b'\n');
            let reader = BufReader::new(raw.as_slice());
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                if let Ok(parsed) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(parsed.key, parsed.value);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if needs_newline {
            // A crash can truncate the final line; seal it off so the next
            // append starts on a fresh line instead of merging into garbage.
            file.write_all(b"\n")?;
        }
        Ok(CallCache {
            inner: Mutex::new(Inner {
                entries,
                writer: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    /// Records a response. Re-putting an existing key is a no-op so replayed
    /// calls never bloat the file.
    pub fn put(&self, key: &str, value: &str, template_version: &str) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(key) {
            return Ok(());
        }
        inner.entries.insert(key.to_string(), value.to_string());
        if let Some(writer) = inner.writer.as_mut() {
            let line = CacheLine {
                key: key.to_string(),
                value: value.to_string(),
                template_version: template_version.to_string(),
                created_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            serde_json::to_writer(&mut *writer, &line)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Digest identifying one logical call. Any field that could change the
/// response participates; in particular the endpoint identity is the calling
/// role's own, so swapping the evaluee endpoint never invalidates judge or
/// generator entries.
#[allow(clippy::too_many_arguments)]
pub fn call_key(
    role: &str,
    endpoint: &str,
    template: &str,
    template_version: &str,
    decode: &DecodeParams,
    attempt: u32,
    prompt: &str,
) -> String {
    let mut hasher = Sha256::new();
    for part in [
        role,
        endpoint,
        template,
        template_version,
        &format!("{:?}", decode.temperature),
        &decode.max_tokens.to_string(),
        &decode.seed.map(|s| s.to_string()).unwrap_or_default(),
        &attempt.to_string(),
        prompt,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DecodeParams {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 256,
            seed: None,
        }
    }

    #[test]
    fn keys_are_sensitive_to_every_field() {
        let base = call_key("judge", "ep", "t", "1", &params(), 0, "p");
        assert_ne!(base, call_key("evaluee", "ep", "t", "1", &params(), 0, "p"));
        assert_ne!(
            base,
            call_key("judge", "other", "t", "1", &params(), 0, "p")
        );
        assert_ne!(base, call_key("judge", "ep", "t2", "1", &params(), 0, "p"));
        assert_ne!(base, call_key("judge", "ep", "t", "2", &params(), 0, "p"));
        assert_ne!(base, call_key("judge", "ep", "t", "1", &params(), 1, "p"));
        assert_ne!(base, call_key("judge", "ep", "t", "1", &params(), 0, "q"));
        let hot = DecodeParams {
            temperature: 1.0,
            ..params()
        };
        assert_ne!(base, call_key("judge", "ep", "t", "1", &hot, 0, "p"));
        assert_eq!(base, call_key("judge", "ep", "t", "1", &params(), 0, "p"));
    }

    #[test]
    fn file_backed_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = CallCache::at_path(&path).unwrap();
            cache.put("k1", "v1", "1").unwrap();
            cache.put("k2", "v2", "1").unwrap();
            cache.put("k1", "ignored", "1").unwrap(); // no-op: first write wins
        }
        let reloaded = CallCache::at_path(&path).unwrap();
        assert_eq!(reloaded.get("k1").as_deref(), Some("v1"));
        assert_eq!(reloaded.get("k2").as_deref(), Some("v2"));
        assert_eq!(reloaded.len(), 2);
    }

    #[test]
    fn corrupt_tail_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = CallCache::at_path(&path).unwrap();
            cache.put("k1", "v1", "1").unwrap();
        }
        use std::io::Write as _;
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"k2\",\"val").unwrap(); // simulated crash mid-line
        let reloaded = CallCache::at_path(&path).unwrap();
        assert_eq!(reloaded.len(), 1);
        reloaded.put("k3", "v3", "1").unwrap();
        let again = CallCache::at_path(&path).unwrap();
        assert_eq!(again.get("k3").as_deref(), Some("v3"));
    }
}
