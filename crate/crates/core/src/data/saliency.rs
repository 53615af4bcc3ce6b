use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel map with values in `[0,1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data("saliency map must have positive extent".into()));
        }
        if values.len() != width * height {
            return Err(Error::Data(format!(
                "{width}x{height} saliency map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("saliency value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Rescales to span `[0,1]`; a constant map becomes all zeros.
    pub fn minmax_normalized(&self) -> Self {
        let lo = self.values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let values = if hi > lo {
            let span = (hi - lo) as f64;
            self.values
                .iter()
                .map(|&v| (((v - lo) as f64) / span) as f32)
                .collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Self { values, ..*self }
    }

    /// `(x0, y0, x1, y1)` inclusive bounds of the nonzero support.
    pub fn support_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) > 0.0 {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    /// `[1,H,W]` view of the map.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.values.clone()).expect("consistent extent")
    }

    /// Splits a `[N,1,H,W]` batch into maps, clamping rounding spill into `[0,1]`.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::shape(
                "saliency batch",
                format!("expected [N,1,H,W], got {s:?}"),
            ));
        }
        let (h, w) = (s[2], s[3]);
        t.data()
            .chunks_exact(h * w)
            .map(|c| Self::new(w, h, c.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
            .collect()
    }
}

/// Per-pixel arithmetic mean of annotator maps.
pub fn fuse_annotations_mean(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    fuse(maps, |vals| {
        (vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64) as f32
    })
}

/// Per-pixel maximum of annotator maps.
pub fn fuse_annotations_max(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    fuse(maps, |vals| vals.iter().copied().fold(0.0, f32::max))
}

fn fuse(maps: &[SaliencyMap], combine: impl Fn(&[f32]) -> f32) -> Result<SaliencyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Data("no annotation maps to fuse".into()))?;
    if let Some(bad) = maps
        .iter()
        .find(|m| (m.width, m.height) != (first.width, first.height))
    {
        return Err(Error::Data(format!(
            "cannot fuse {}x{} map with {}x{} map",
            bad.width, bad.height, first.width, first.height
        )));
    }
    let mut column = vec![0.0f32; maps.len()];
    let values = (0..first.values.len())
        .map(|i| {
            for (slot, m) in column.iter_mut().zip(maps) {
                *slot = m.values[i];
            }
            combine(&column).clamp(0.0, 1.0)
        })
        .collect();
    SaliencyMap::new(first.width, first.height, values)
}

/// Bilinear resampling of one plane with half-pixel centers and edge clamping.
/// Every output is a convex combination of inputs, so the range never grows.
pub fn resize_plane(src: &[f32], width: usize, height: usize, out_w: usize, out_h: usize) -> Result<Vec<f32>> {
    if width == 0 || height == 0 || out_w == 0 || out_h == 0 {
        return Err(Error::Data("resize extents must be positive".into()));
    }
    let sx = width as f64 / out_w as f64;
    let sy = height as f64 / out_h as f64;
    let coord = |o: usize, scale: f64, n: usize| {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, height);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, width);
            let p = |x: usize, y: usize| src[y * width + x] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(out)
}

/// Things that can be brought to a canonical square extent.
pub trait Resize: Sized {
    fn resize_canonical(&self, extent: usize) -> Result<Self>;
}

impl Resize for SaliencyMap {
    fn resize_canonical(&self, extent: usize) -> Result<Self> {
        let values = resize_plane(&self.values, self.width, self.height, extent, extent)?;
        SaliencyMap::new(
            extent,
            extent,
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }
}

/// `[C,H,W]` images, resized channel by channel.
impl Resize for Tensor {
    fn resize_canonical(&self, extent: usize) -> Result<Self> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::shape("resize", format!("expected [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = Vec::with_capacity(c * extent * extent);
        for plane in self.data().chunks_exact(h * w) {
            data.extend(resize_plane(plane, w, h, extent, extent)?);
        }
        Tensor::new([c, extent, extent], data)
    }
}
