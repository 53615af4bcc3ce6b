//! JSON-lines corpus manifests with PGM images and saliency maps.
//!
//! Paths inside a manifest are relative to the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{self, GrayImage};
use super::{fuse_annotations_max, fuse_annotations_mean, Resize, SaliencyMap, Sample, SampleSet, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_path: String,
    pub label: Option<u8>,
    pub subject_id: String,
    pub split: Split,
    #[serde(default)]
    pub saliency_paths: Vec<String>,
    /// One flag per saliency path; maps from annotators who misclassified
    /// the sample are dropped. Empty means every annotation counts.
    #[serde(default)]
    pub annotator_correct: Vec<bool>,
    #[serde(default)]
    pub fusion: Fusion,
}

/// Loads a manifest. Images and maps whose extent differs from `extent` are
/// bilinearly resized; others are kept bit-exact.
pub fn load_manifest(path: &Path, extent: Option<usize>) -> Result<SampleSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        samples.push(load_record(root, &rec, extent).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}:{}: {m}", path.display(), n + 1)),
            other => other,
        })?);
    }
    let set = SampleSet::new(samples);
    set.check_subject_disjoint()?;
    Ok(set)
}

fn load_record(root: &Path, rec: &ManifestRecord, extent: Option<usize>) -> Result<Sample> {
    if let Some(l) = rec.label.filter(|&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not 0 or 1")));
    }
    if !rec.annotator_correct.is_empty() && rec.annotator_correct.len() != rec.saliency_paths.len() {
        return Err(Error::Data(format!(
            "{} annotator flags for {} saliency maps",
            rec.annotator_correct.len(),
            rec.saliency_paths.len()
        )));
    }
    let img = pgm::read(&root.join(&rec.image_path))?;
    let mut image = Tensor::new([1, img.height, img.width], img.to_unit())?;
    let maps = rec
        .saliency_paths
        .iter()
        .enumerate()
        .filter(|(i, _)| rec.annotator_correct.get(*i).copied().unwrap_or(true))
        .map(|(_, p)| {
            let g = pgm::read(&root.join(p))?;
            SaliencyMap::new(g.width, g.height, g.to_unit())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut saliency = match (maps.is_empty(), rec.fusion) {
        (true, _) => None,
        (false, Fusion::Mean) => Some(fuse_annotations_mean(&maps)?),
        (false, Fusion::Max) => Some(fuse_annotations_max(&maps)?),
    };
    if let Some(e) = extent {
        if image.shape()[1] != e || image.shape()[2] != e {
            image = image.resize_canonical(e)?;
        }
        if let Some(s) = saliency.as_mut().filter(|s| s.width() != e || s.height() != e) {
            *s = s.resize_canonical(e)?;
        }
    }
    Ok(Sample {
        image,
        label: rec.label,
        saliency,
        subject_id: rec.subject_id.clone(),
        split: rec.split,
    })
}

/// Writes `set` under `dir` as `manifest.jsonl` plus PGM files and returns the
/// manifest path. Output is a pure function of `set`.
pub fn write_dataset(set: &SampleSet, dir: &Path) -> Result<PathBuf> {
    let manifest = dir.join("manifest.jsonl");
    let mut lines = Vec::new();
    for (i, s) in set.samples.iter().enumerate() {
        let [_, h, w] = s.image.shape() else {
            return Err(Error::shape("write_dataset", format!("image shape {:?} is not [1,H,W]", s.image.shape())));
        };
        let image_path = format!("images/{}/{i:05}.pgm", s.split);
        pgm::write(&dir.join(&image_path), &GrayImage::from_unit(*w, *h, s.image.data()))?;
        let mut saliency_paths = Vec::new();
        if let Some(map) = &s.saliency {
            let p = format!("saliency/{}/{i:05}.pgm", s.split);
            pgm::write(&dir.join(&p), &GrayImage::from_unit(map.width(), map.height(), map.values()))?;
            saliency_paths.push(p);
        }
        let rec = ManifestRecord {
            image_path,
            label: s.label,
            subject_id: s.subject_id.clone(),
            split: s.split,
            annotator_correct: vec![true; saliency_paths.len()],
            saliency_paths,
            fusion: Fusion::Mean,
        };
        lines.push(serde_json::to_string(&rec)?);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(manifest)
}
