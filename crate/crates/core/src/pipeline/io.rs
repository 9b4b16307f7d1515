//! JSONL readers and the append-only writer used for stage checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::PipelineError;

/// Append-only JSONL writer that flushes after every record, so a killed run
/// loses at most the line being written.
pub struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    pub fn append_to(path: &Path) -> Result<Self, PipelineError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(value).map_err(|e| PipelineError::Corrupt {
            path: self.path.display().to_string(),
            line: 0,
            detail: format!("serialization failed: {e}"),
        })?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| PipelineError::io(&self.path, e))
    }
}

/// Strict read: the file must exist and every line must parse.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| PipelineError::Corrupt {
            path: path.display().to_string(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Resume-tolerant read: a missing file is an empty checkpoint, and a
/// half-written final line (from a killed run) is dropped and truncated away.
/// Corruption anywhere else is still an error.
pub fn read_jsonl_resume<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let raw = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let lines: Vec<&str> = raw.lines().collect();
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(value) => out.push(value),
            Err(e) if idx + 1 == lines.len() => {
                let keep: String = lines[..idx].iter().map(|l| format!("{l}\n")).collect();
                std::fs::write(path, keep).map_err(|e| PipelineError::io(path, e))?;
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(PipelineError::Corrupt {
                    path: path.display().to_string(),
                    line: idx + 1,
                    detail: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        id: String,
        v: u32,
    }

    #[test]
    fn writer_round_trips_and_resume_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        {
            let mut w = JsonlWriter::append_to(&path).unwrap();
            w.append(&Row {
                id: "a".into(),
                v: 1,
            })
            .unwrap();
            w.append(&Row {
                id: "b".into(),
                v: 2,
            })
            .unwrap();
        }
        let rows: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(rows.len(), 2);

        // Simulate a crash mid-write of a third record.
        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw.push_str("{\"id\":\"c\",\"v\"");
        std::fs::write(&path, raw).unwrap();

        assert!(
            read_jsonl::<Row>(&path).is_err(),
            "strict read rejects the torn line"
        );
        let rows: Vec<Row> = read_jsonl_resume(&path).unwrap();
        assert_eq!(
            rows,
            vec![
                Row {
                    id: "a".into(),
                    v: 1
                },
                Row {
                    id: "b".into(),
                    v: 2
                }
            ]
        );
        // The torn line is gone from disk, so appending resumes cleanly.
        let rows: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(rows.len(), 2);

        let missing: Vec<Row> = read_jsonl_resume(&dir.path().join("absent.jsonl")).unwrap();
        assert!(missing.is_empty());
    }

    #[test]
    fn mid_file_corruption_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"v\":1}\nnot json\n{\"id\":\"b\",\"v\":2}\n",
        )
        .unwrap();
        let err = read_jsonl_resume::<Row>(&path).unwrap_err();
        assert!(
            matches!(err, PipelineError::Corrupt { line: 2, .. }),
            "got {err}"
        );
    }
}
