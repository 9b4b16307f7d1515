//! The run manifest: which stages have completed, under which config digest,
//! and how many questions survived each step of the filtering chain.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::stages::Stage;
use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Question counts along the pipeline. Each step can only drop questions, so
/// the chain is monotone non-increasing; the indirect lengths and the two
/// evaluation groups hang off the direct-evidence count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub initial: usize,
    pub ma: usize,
    pub cma: usize,
    pub filtered: usize,
    pub direct: usize,
    pub indirect_2: usize,
    pub indirect_3: usize,
    pub group1: usize,
    pub group2: usize,
}

impl StageCounts {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let chain = [
            ("ma", self.ma, "initial", self.initial),
            ("cma", self.cma, "ma", self.ma),
            ("filtered", self.filtered, "cma", self.cma),
            ("direct", self.direct, "filtered", self.filtered),
            ("indirect_2", self.indirect_2, "direct", self.direct),
            ("indirect_3", self.indirect_3, "direct", self.direct),
            ("group1", self.group1, "direct", self.direct),
            ("group2", self.group2, "indirect_2", self.indirect_2),
            ("group2", self.group2, "indirect_3", self.indirect_3),
        ];
        for (lo_name, lo, hi_name, hi) in chain {
            if lo > hi {
                return Err(PipelineError::Config(format!(
                    "count invariant violated: {lo_name} = {lo} exceeds {hi_name} = {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Rows for the per-stage counts table export.
    pub fn rows(&self) -> [(&'static str, usize); 9] {
        [
            ("initial", self.initial),
            ("ma", self.ma),
            ("cma", self.cma),
            ("filtered", self.filtered),
            ("direct", self.direct),
            ("indirect_2", self.indirect_2),
            ("indirect_3", self.indirect_3),
            ("group1", self.group1),
            ("group2", self.group2),
        ]
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("stage,questions\n");
        for (name, count) in self.rows() {
            out.push_str(&format!("{name},{count}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub completed: bool,
    /// Records in the stage's output when it completed.
    pub items: usize,
    pub updated_epoch: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub created_epoch: u64,
    pub updated_epoch: u64,
    #[serde(default)]
    pub counts: StageCounts,
    #[serde(default)]
    pub stages: BTreeMap<String, StageStatus>,
}

fn now_epoch() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(digest: &str) -> Self {
        let now = now_epoch();
        RunManifest {
            run_id: digest[..digest.len().min(12)].to_string(),
            config_digest: digest.to_string(),
            created_epoch: now,
            updated_epoch: now,
            counts: StageCounts::default(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest in `dir`, or creates a fresh one. An existing
    /// manifest written under a different config digest is a mismatch: the
    /// directory's outputs would silently mix two experiments.
    pub fn load_or_create(dir: &Path, digest: &str) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::new(digest));
        }
        let raw = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let manifest: RunManifest =
            serde_json::from_str(&raw).map_err(|e| PipelineError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                detail: e.to_string(),
            })?;
        if manifest.config_digest != digest {
            return Err(PipelineError::ConfigMismatch {
                found: manifest.config_digest,
                expected: digest.to_string(),
            });
        }
        Ok(manifest)
    }

    pub fn save(&mut self, dir: &Path) -> Result<(), PipelineError> {
        self.updated_epoch = now_epoch();
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(&tmp, json).map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn stage_done(&self, stage: Stage) -> bool {
        self.stages.get(stage.name()).is_some_and(|s| s.completed)
    }

    pub fn mark_done(&mut self, stage: Stage, items: usize) {
        self.stages.insert(
            stage.name().to_string(),
            StageStatus {
                completed: true,
                items,
                updated_epoch: now_epoch(),
            },
        );
    }

    pub fn clear_stage(&mut self, stage: Stage) {
        self.stages.remove(stage.name());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_enforce_the_filtering_chain() {
        let good = StageCounts {
            initial: 100,
            ma: 90,
            cma: 80,
            filtered: 70,
            direct: 60,
            indirect_2: 55,
            indirect_3: 58,
            group1: 59,
            group2: 54,
        };
        good.validate().unwrap();

        let mut bad = good;
        bad.cma = 95;
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("cma"), "got {err}");

        let mut bad = good;
        bad.group2 = 57; // exceeds indirect_2 = 55
        assert!(bad.validate().is_err());

        let csv = good.csv();
        assert!(csv.starts_with("stage,questions\n"));
        assert!(csv.contains("indirect_3,58"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn manifest_round_trips_and_rejects_foreign_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::load_or_create(dir.path(), "abcdef0123456789").unwrap();
        assert_eq!(m.run_id, "abcdef012345");
        m.counts.initial = 5;
        m.mark_done(Stage::Paraphrase, 5);
        m.save(dir.path()).unwrap();

        let again = RunManifest::load_or_create(dir.path(), "abcdef0123456789").unwrap();
        assert!(again.stage_done(Stage::Paraphrase));
        assert!(!again.stage_done(Stage::Strength));
        assert_eq!(again.counts.initial, 5);

        let err = RunManifest::load_or_create(dir.path(), "feedbead00000000").unwrap_err();
        assert!(
            matches!(err, PipelineError::ConfigMismatch { .. }),
            "got {err}"
        );
    }
}
