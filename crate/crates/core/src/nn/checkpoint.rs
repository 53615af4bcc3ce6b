//! Parameter archives.
//!
//! The archive is a flat sequence of records, one per tensor, read until EOF:
//!
//! ```text
//! u32 LE  name length in bytes
//! [u8]    UTF-8 name
//! u32 LE  rank
//! u32 LE  extent, repeated rank times
//! f32 LE  values, row-major, product(extents) of them
//! ```
//!
//! A JSON sidecar at `<archive>.json` carries the [`ModelSpec`] and which
//! model parts are present.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{build_autoencoder, ClassifierHead, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub decoder: bool,
    pub head: bool,
}

pub fn sidecar_path(archive: &Path) -> PathBuf {
    let mut name = archive.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_archive<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> io::Result<()> {
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_archive<R: Read>(mut r: R) -> Result<IndexMap<String, Tensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let mut out = IndexMap::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = cur.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated archive at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(io::BufWriter::new(file), model.named_tensors()).map_err(|e| Error::io(path, e))?;
    let meta = CheckpointMeta {
        spec: model.spec.clone(),
        decoder: model.decoder.is_some(),
        head: model.head.is_some(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))
}

/// Loads a model whose architecture comes from the sidecar. The archive
/// must hold exactly the parameters of the described parts.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let meta = load_meta(path)?;
    meta.spec.validate()?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_archive(io::BufReader::new(file))?;

    let (enc, dec) = build_autoencoder(&meta.spec, 0)?;
    let mut model = Model::autoencoder(enc, dec);
    if !meta.decoder {
        model.decoder = None;
    }
    if meta.head {
        let mut rng = seed::rng(0);
        model.head = Some(ClassifierHead::new(
            meta.spec.feature_channels(),
            meta.spec.num_classes,
            &mut rng,
        )?);
    }
    let expected: usize = model.parts().iter().map(|p| p.len()).sum();
    if expected != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {} tensors but the described model has {expected}",
            tensors.len()
        )));
    }
    for part in model.parts_mut() {
        part.load_from(&tensors)?;
    }
    Ok(model)
}
