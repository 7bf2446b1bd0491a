use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{preprocess, read_segment, PreprocessConfig, SegmentBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub path: String,
    pub label: usize,
}

/// Index of a segment dataset; paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub channels: usize,
    pub samples: usize,
    pub rate: f64,
    pub seed: u64,
    pub splits: BTreeMap<Split, Vec<SplitEntry>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[SplitEntry] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for e in self.entries(split) {
            h[e.label] += 1;
        }
        h
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let m: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        for (split, entries) in &m.splits {
            if let Some(e) = entries.iter().find(|e| e.label >= m.num_classes) {
                return Err(Error::Format(format!("{} entry {} has label {}", split.name(), e.path, e.label)));
            }
        }
        Ok(m)
    }

    /// Reads and preprocesses every file of `split` into one batch.
    pub fn load_split(&self, dir: &Path, split: Split, cfg: &PreprocessConfig) -> Result<SegmentBatch> {
        let entries = self.entries(split);
        if entries.is_empty() {
            return Err(Error::Format(format!("split {} is empty", split.name())));
        }
        let parts: Vec<SegmentBatch> = entries
            .par_iter()
            .map(|e| {
                let seg = read_segment(&dir.join(&e.path))?;
                if seg.header.label != e.label {
                    return Err(Error::Format(format!("{}: label disagrees with manifest", e.path)));
                }
                preprocess(&seg.data, seg.header.channels, seg.header.rate, seg.header.label, cfg)
            })
            .collect::<Result<_>>()?;
        let mut out = parts[0].clone();
        for p in &parts[1..] {
            out.extend(p)?;
        }
        out.check_labels(self.num_classes)?;
        Ok(out)
    }
}
