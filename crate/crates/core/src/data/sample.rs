use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SaliencyMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label of a normal (bona fide) sample.
pub const NORMAL: u8 = 0;
/// Label of an anomalous sample.
pub const ANOMALOUS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1,H,W]` grayscale in `[0,1]`.
    pub image: Tensor,
    pub label: Option<u8>,
    pub saliency: Option<SaliencyMap>,
    pub subject_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

/// Per-split, per-label counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub split: Split,
    pub total: usize,
    pub normal: usize,
    pub anomalous: usize,
    pub unlabeled: usize,
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn summary(&self) -> Vec<SplitSummary> {
        Split::ALL
            .iter()
            .map(|&split| {
                let items = self.split(split);
                let count = |l: Option<u8>| items.iter().filter(|s| s.label == l).count();
                SplitSummary {
                    split,
                    total: items.len(),
                    normal: count(Some(NORMAL)),
                    anomalous: count(Some(ANOMALOUS)),
                    unlabeled: count(None),
                }
            })
            .collect()
    }

    /// Fails if any subject appears in more than one split.
    pub fn check_subject_disjoint(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for s in &self.samples {
            match seen.get(s.subject_id.as_str()) {
                Some(&other) if other != s.split => {
                    return Err(Error::Data(format!(
                        "subject `{}` appears in both {other} and {}",
                        s.subject_id, s.split
                    )));
                }
                _ => {
                    seen.insert(&s.subject_id, s.split);
                }
            }
        }
        Ok(())
    }

    pub fn subjects(&self, split: Split) -> BTreeSet<&str> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.subject_id.as_str())
            .collect()
    }
}
