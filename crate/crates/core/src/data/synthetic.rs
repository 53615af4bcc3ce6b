//! Procedural open-set anomaly task with ground-truth saliency.
//!
//! Normal images are a smooth subject-specific background plus a fixed
//! central ring. Anomalous images add one localized defect. Its support mask,
//! box-blurred twice with a 3×3 filter, is the ground-truth saliency. Train and
//! val anomalies use the known kinds and, with probability
//! `spurious_cue_strength`, carry a bright square in the top-left corner that
//! predicts the label without looking at the defect. Test anomalies use the
//! unknown kinds and never carry the cue.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pgm::snap;
use super::{SaliencyMap, Sample, SampleSet, Split, ANOMALOUS, NORMAL};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Blob,
    Stripe,
    Ring,
    Checker,
}

/// Top-left corner square holding the spurious cue: pixels `[CUE_START, CUE_END)` on both axes.
pub const CUE_START: usize = 1;
pub const CUE_END: usize = 4;
/// Defect centers keep out of the `CUE_GUARD × CUE_GUARD` corner region.
const CUE_GUARD: f64 = 10.0;
const DEFECT_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub extent: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub known_anomaly_kinds: Vec<AnomalyKind>,
    pub unknown_anomaly_kinds: Vec<AnomalyKind>,
    pub spurious_cue_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Share of anomalous samples per split.
    pub anomalous_fraction: f64,
    pub samples_per_subject: usize,
    /// Peak intensity change a defect applies.
    pub defect_contrast: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            extent: 32,
            n_train: 600,
            n_val: 150,
            n_test: 800,
            known_anomaly_kinds: vec![AnomalyKind::Blob, AnomalyKind::Stripe],
            unknown_anomaly_kinds: vec![AnomalyKind::Ring, AnomalyKind::Checker],
            spurious_cue_strength: 0.9,
            noise_sigma: 0.02,
            seed: 0,
            anomalous_fraction: 2.0 / 3.0,
            samples_per_subject: 5,
            defect_contrast: 0.15,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if let Some(k) = self
            .known_anomaly_kinds
            .iter()
            .find(|k| self.unknown_anomaly_kinds.contains(k))
        {
            return fail(format!("anomaly kind {k:?} is both known and unknown"));
        }
        if self.known_anomaly_kinds.is_empty() || self.unknown_anomaly_kinds.is_empty() {
            return fail("known and unknown anomaly kind lists must be non-empty".into());
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return fail("sample counts must be positive".into());
        }
        if self.extent < 16 {
            return fail(format!("extent {} is too small (minimum 16)", self.extent));
        }
        if !(0.0..=1.0).contains(&self.spurious_cue_strength) {
            return fail("spurious_cue_strength must lie in [0,1]".into());
        }
        if !(self.anomalous_fraction > 0.0 && self.anomalous_fraction < 1.0) {
            return fail("anomalous_fraction must lie in (0,1)".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be a finite non-negative number".into());
        }
        if self.samples_per_subject == 0 {
            return fail("samples_per_subject must be positive".into());
        }
        Ok(())
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

struct Subject {
    base: f64,
    waves: [(f64, f64, f64, f64); 3],
}

impl Subject {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut wave = || {
            (
                rng.random_range(0.02..0.06),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..2.0 * PI),
            )
        };
        let waves = [wave(), wave(), wave()];
        Self {
            base: rng.random_range(0.4..0.5),
            waves,
        }
    }
}

/// Draws the whole task. The result is a pure function of `spec`.
pub fn generate_synthetic_task(spec: &SyntheticTaskSpec) -> Result<SampleSet> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.n_train + spec.n_val + spec.n_test);
    for (split, tag) in [
        (Split::Train, seed::stream::DATA_TRAIN),
        (Split::Val, seed::stream::DATA_VAL),
        (Split::Test, seed::stream::DATA_TEST),
    ] {
        let mut rng = seed::rng(seed::derive(spec.seed, tag));
        generate_split(spec, split, &mut rng, &mut samples)?;
    }
    Ok(SampleSet::new(samples))
}

fn generate_split(
    spec: &SyntheticTaskSpec,
    split: Split,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Sample>,
) -> Result<()> {
    let n = spec.count(split);
    let n_anom = ((n as f64) * spec.anomalous_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| if i < n_anom { ANOMALOUS } else { NORMAL }).collect();
    labels.shuffle(rng);

    let kinds = match split {
        Split::Test => &spec.unknown_anomaly_kinds,
        _ => &spec.known_anomaly_kinds,
    };
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let e = spec.extent;
    let mut subject = Subject::draw(rng);

    for (i, &label) in labels.iter().enumerate() {
        if i > 0 && i % spec.samples_per_subject == 0 {
            subject = Subject::draw(rng);
        }
        let subject_id = format!("{split}-{:04}", i / spec.samples_per_subject);
        let jitter = rng.random_range(-0.3..0.3);
        let mut img = background(&subject, e, jitter);

        let saliency = if label == ANOMALOUS {
            let kind = kinds[rng.random_range(0..kinds.len())];
            let mask = apply_defect(&mut img, e, kind, spec.defect_contrast, rng);
            let cue = split != Split::Test && rng.random_bool(spec.spurious_cue_strength);
            if cue {
                for y in CUE_START..CUE_END {
                    for x in CUE_START..CUE_END {
                        img[y * e + x] = 1.0;
                    }
                }
            }
            let blurred = box_blur3(&box_blur3(&mask, e), e);
            SaliencyMap::new(e, e, blurred.iter().map(|&v| snap(v as f32)).collect())?
        } else {
            SaliencyMap::zeros(e, e)
        };

        for v in img.iter_mut() {
            *v += noise.sample(rng);
        }
        let pixels = img.iter().map(|&v| snap(v as f32)).collect();
        out.push(Sample {
            image: Tensor::new([1, e, e], pixels)?,
            label: Some(label),
            saliency: Some(saliency),
            subject_id,
            split,
        });
    }
    Ok(())
}

fn background(s: &Subject, e: usize, jitter: f64) -> Vec<f64> {
    let ef = e as f64;
    let (cx, cy) = (ef / 2.0 - 0.5, ef / 2.0 - 0.5);
    let radius = 0.3 * ef;
    let mut img = Vec::with_capacity(e * e);
    for y in 0..e {
        for x in 0..e {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = s.base;
            for &(amp, fx, fy, phase) in &s.waves {
                v += amp * (2.0 * PI * (fx * xf + fy * yf) / ef + phase + jitter).cos();
            }
            let r = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
            v += 0.2 * (-((r - radius) / 1.2).powi(2)).exp();
            img.push(v);
        }
    }
    img
}

/// Paints one defect and returns its binary support mask.
fn apply_defect(img: &mut [f64], e: usize, kind: AnomalyKind, contrast: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ef = e as f64;
    let (cx, cy) = loop {
        let cx = rng.random_range(DEFECT_MARGIN..ef - DEFECT_MARGIN);
        let cy = rng.random_range(DEFECT_MARGIN..ef - DEFECT_MARGIN);
        if cx >= CUE_GUARD || cy >= CUE_GUARD {
            break (cx, cy);
        }
    };
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let amp = sign * contrast;
    let mut mask = vec![0.0; e * e];
    let theta = match kind {
        AnomalyKind::Stripe => [0.0, 0.25, 0.5, 0.75][rng.random_range(0..4)] * PI,
        _ => 0.0,
    };
    let radius = rng.random_range(2.5..3.5);
    for y in 0..e {
        for x in 0..e {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            let delta = match kind {
                AnomalyKind::Blob => (d <= radius).then_some(amp),
                AnomalyKind::Ring => (d >= 1.5 && d <= 3.5).then_some(amp),
                AnomalyKind::Stripe => {
                    let along = dx * theta.cos() + dy * theta.sin();
                    let across = -dx * theta.sin() + dy * theta.cos();
                    (along.abs() <= 4.5 && across.abs() <= 1.5).then_some(amp)
                }
                AnomalyKind::Checker => (dx.abs() < 3.0 && dy.abs() < 3.0).then(|| {
                    let cell = ((dx + 3.0) / 2.0).floor() as i64 + ((dy + 3.0) / 2.0).floor() as i64;
                    if cell % 2 == 0 {
                        amp
                    } else {
                        -amp
                    }
                }),
            };
            if let Some(delta) = delta {
                img[y * e + x] += delta;
                mask[y * e + x] = 1.0;
            }
        }
    }
    mask
}

/// 3×3 mean filter with zero padding.
fn box_blur3(src: &[f64], e: usize) -> Vec<f64> {
    let mut out = vec![0.0; e * e];
    for y in 0..e {
        for x in 0..e {
            let mut acc = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(e - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(e - 1) {
                    acc += src[yy * e + xx];
                }
            }
            out[y * e + x] = acc / 9.0;
        }
    }
    out
}
