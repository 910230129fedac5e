//! Binary model container.
//!
//! ```text
//! magic  b"TRIDFCK1"
//! u64    header length (little endian)
//! bytes  JSON header
//! f64*   parameter values in store order, then reference images (LE)
//! ```
//!
//! Reference features are recomputed from the stored images on load.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::features::extract_reference_features;
use crate::field::mlp::Mlp;
use crate::field::model::{ModelConfig, TriDF};
use crate::field::triplane::Triplane;
use crate::math::{ParamStore, Tensor};
use crate::scene::dataset::{BboxEntry, CameraEntry};
use crate::scene::Image;

const MAGIC: &[u8; 8] = b"TRIDFCK1";

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: String,
    decay: bool,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    bbox: BboxEntry,
    background: [f64; 3],
    ref_cameras: Vec<CameraEntry>,
    params: Vec<ParamMeta>,
    triplane: Triplane,
    density: Mlp,
    base: Mlp,
    color: Mlp,
    /// Free-form run metadata (for example the training config).
    meta: serde_json::Value,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` together with arbitrary `meta` JSON.
pub fn to_bytes(model: &TriDF, meta: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        model: model.config.clone(),
        bbox: BboxEntry::from(&model.bbox),
        background: model.background,
        ref_cameras: model
            .ref_cameras
            .iter()
            .map(|c| CameraEntry::from_camera(c, None))
            .collect(),
        params: model
            .params
            .iter()
            .map(|(_, p)| ParamMeta {
                name: p.name.clone(),
                group: p.group.clone(),
                decay: p.decay,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        triplane: model.triplane.clone(),
        density: model.density.clone(),
        base: model.base.clone(),
        color: model.color.clone(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("serializable");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.params.iter() {
        push_f64s(&mut out, p.value.data());
    }
    for img in &model.ref_images {
        push_f64s(&mut out, img.data());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }
}

/// Inverse of [`to_bytes`]; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(TriDF, serde_json::Value)> {
    let bad = |msg: &str| Error::format(path, format!("corrupt checkpoint: {msg}"));
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let len = cur.take(8).ok_or_else(|| bad("truncated"))?;
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    let json = cur.take(len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    header.model.validate()?;

    let mut params = ParamStore::new();
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let data = cur.f64s(n).ok_or_else(|| bad("truncated parameters"))?;
        params.add(p.name.clone(), p.group.clone(), p.decay, Tensor::new(p.shape.clone(), data)?);
    }
    let ref_cameras = header
        .ref_cameras
        .iter()
        .map(|c| c.to_camera())
        .collect::<Result<Vec<_>>>()?;
    let mut ref_images = Vec::with_capacity(ref_cameras.len());
    for c in &ref_cameras {
        let data = cur
            .f64s(c.width() * c.height() * 3)
            .ok_or_else(|| bad("truncated images"))?;
        ref_images.push(Image::new(c.width(), c.height(), data)?);
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let features = extract_reference_features(
        &ref_images,
        header.model.feature_seed,
        header.model.reference_channels,
    );
    let model = TriDF {
        config: header.model,
        params,
        triplane: header.triplane,
        density: header.density,
        base: header.base,
        color: header.color,
        bbox: header.bbox.to_aabb()?,
        background: header.background,
        ref_cameras,
        ref_images,
        features,
    };
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: &Path, model: &TriDF, meta: &serde_json::Value) -> Result<()> {
    let bytes = to_bytes(model, meta);
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TriDF, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
