//! UNET-lite encoder–decoder, classifier head, and class activation maps.
//!
//! Encoder stage `i` is `conv(k×k, pad k/2) → relu → maxpool2x` with
//! `base_width·2^i` filters. Decoder stage `j` mirrors encoder stage
//! `i = depth-1-j`: `upsample2x → [concat encoder stage i pre-pool features]
//! → conv → relu`, followed by a `1`-channel conv head and a sigmoid.

mod checkpoint;
mod params;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::SaliencyMap;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_archive, save_checkpoint, write_archive, CheckpointMeta};
pub use params::Params;

/// Guard against division by zero in CAM min-max normalization.
pub const CAM_EPS: f64 = 1e-8;

/// Initial bias of the decoder's output conv. Saliency targets are sparse;
/// starting near `sigmoid(-3) ≈ 0.05` instead of 0.5 keeps the first AdamW
/// steps from driving every logit deep into saturation.
pub const DECODER_HEAD_BIAS: f32 = -3.0;

/// Encoders see `2x - 1`: inputs in `[0,1]` are mapped to `[-1,1]`.
/// Uncentered inputs leave Step 1 stuck predicting the mean map for several epochs.
pub const INPUT_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkipStyle {
    /// Plain UNET skips: decoder stage concatenates the matching encoder stage.
    #[default]
    Unet,
}

/// Architecture sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub input_extent: usize,
    pub base_width: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub skip_connections: bool,
    pub skip_style: SkipStyle,
    pub num_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_extent: 32,
            base_width: 8,
            depth: 3,
            kernel_size: 3,
            skip_connections: true,
            skip_style: SkipStyle::Unet,
            num_classes: 2,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.base_width == 0 || self.depth == 0 {
            return fail("in_channels, base_width and depth must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        let factor = 1usize << self.depth;
        if self.input_extent == 0 || self.input_extent % factor != 0 {
            return fail(format!(
                "input_extent {} is not divisible by 2^depth = {factor}",
                self.input_extent
            ));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        Ok(())
    }

    /// Filters of encoder stage `i`.
    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Spatial extent of the encoder output.
    pub fn feature_extent(&self) -> usize {
        self.input_extent >> self.depth
    }

    /// Channels of the encoder output, i.e. the classifier input dimension.
    pub fn feature_channels(&self) -> usize {
        self.width(self.depth - 1)
    }
}

fn he_uniform(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let bound = (6.0 / fan_in).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

fn add_conv(params: &mut Params, name: &str, out: usize, inp: usize, k: usize, rng: &mut ChaCha8Rng) {
    params.insert(format!("{name}.weight"), he_uniform([out, inp, k, k], rng));
    params.insert(format!("{name}.bias"), Tensor::zeros([out]));
}

/// Output of an encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    /// Post-relu, pre-pool features of every stage (finest first).
    pub skips: Vec<Var>,
    /// Pooled features of the last stage: `[N, feature_channels, E/2^d, E/2^d]`.
    pub output: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    spec: ModelSpec,
    params: Params,
}

impl EncoderNet {
    pub fn new(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::new();
        let mut inp = spec.in_channels;
        for i in 0..spec.depth {
            add_conv(&mut params, &format!("encoder.stage{i}"), spec.width(i), inp, spec.kernel_size, rng);
            inp = spec.width(i);
        }
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], images: Var) -> Result<EncoderFeatures> {
        check_images(&self.spec, tape.value(images))?;
        let pad = self.spec.kernel_size / 2;
        let scaled = tape.scale(images, INPUT_SCALE);
        let ones = tape.constant(Tensor::full(tape.value(images).shape().to_vec(), 1.0));
        let mut x = tape.sub(scaled, ones)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        for stage in vars.chunks_exact(2) {
            let h = tape.conv2d_bias(x, stage[0], stage[1], 1, pad)?;
            let h = tape.relu(h);
            skips.push(h);
            x = tape.maxpool2x(h)?;
        }
        Ok(EncoderFeatures { skips, output: x })
    }
}

fn check_images(spec: &ModelSpec, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let e = spec.input_extent;
    if s.len() != 4 || s[1] != spec.in_channels || s[2] != e || s[3] != e {
        return Err(Error::shape(
            "model input",
            format!(
                "expected [N, {}, {e}, {e}], got {s:?}",
                spec.in_channels
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet {
    spec: ModelSpec,
    params: Params,
}

impl DecoderNet {
    pub fn new(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::new();
        let mut inp = spec.feature_channels();
        for j in 0..spec.depth {
            let i = spec.depth - 1 - j;
            let skip = if spec.skip_connections { spec.width(i) } else { 0 };
            add_conv(&mut params, &format!("decoder.stage{j}"), spec.width(i), inp + skip, spec.kernel_size, rng);
            inp = spec.width(i);
        }
        add_conv(&mut params, "decoder.head", 1, inp, spec.kernel_size, rng);
        params.insert("decoder.head.bias", Tensor::full([1], DECODER_HEAD_BIAS));
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn skip_connections(&self) -> bool {
        self.spec.skip_connections
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Predicted saliency `[N,1,E,E]` with values in `[0,1]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: &EncoderFeatures) -> Result<Var> {
        let pad = self.spec.kernel_size / 2;
        let depth = self.spec.depth;
        let mut x = features.output;
        for (j, stage) in vars[..2 * depth].chunks_exact(2).enumerate() {
            let up = tape.upsample_nearest2x(x)?;
            let input = if self.spec.skip_connections {
                tape.concat_channels(up, features.skips[depth - 1 - j])?
            } else {
                up
            };
            let h = tape.conv2d_bias(input, stage[0], stage[1], 1, pad)?;
            x = tape.relu(h);
        }
        let head = &vars[2 * depth..];
        let logits = tape.conv2d_bias(x, head[0], head[1], 1, pad)?;
        Ok(tape.sigmoid(logits))
    }
}

/// Global average pooling followed by one fully-connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    num_classes: usize,
    params: Params,
}

impl ClassifierHead {
    /// Weights and bias uniform in `±1/√D`.
    pub fn new(in_features: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let bound = 1.0 / (in_features as f32).sqrt();
        let mut params = Params::new();
        params.insert(
            "head.fc.weight",
            Tensor::from_fn([in_features, num_classes], |_| rng.random_range(-bound..bound)),
        );
        params.insert(
            "head.fc.bias",
            Tensor::from_fn([num_classes], |_| rng.random_range(-bound..bound)),
        );
        Ok(Self { num_classes, params })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// The `[D,C]` fully-connected weight.
    pub fn weight(&self) -> &Tensor {
        self.params.get("head.fc.weight").expect("head weight")
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(features)?;
        tape.linear(pooled, vars[0], vars[1])
    }
}

/// Builds a seeded UNET-lite autoencoder. The encoder is drawn first from
/// the seed's stream, so [`build_encoder`] with the same seed yields
/// bit-identical encoder weights.
pub fn build_autoencoder(spec: &ModelSpec, seed: u64) -> Result<(EncoderNet, DecoderNet)> {
    let mut rng = seed::rng(seed);
    let enc = EncoderNet::new(spec, &mut rng)?;
    let dec = DecoderNet::new(spec, &mut rng)?;
    Ok((enc, dec))
}

pub fn build_encoder(spec: &ModelSpec, seed: u64) -> Result<EncoderNet> {
    EncoderNet::new(spec, &mut seed::rng(seed))
}

/// Attaches a freshly seeded head to `encoder`. The encoder is moved in
/// unchanged and all parameters stay trainable.
pub fn build_classifier(encoder: EncoderNet, num_classes: usize, seed: u64) -> Result<Model> {
    let head = ClassifierHead::new(encoder.spec.feature_channels(), num_classes, &mut seed::rng(seed))?;
    let mut spec = encoder.spec.clone();
    spec.num_classes = num_classes;
    Ok(Model {
        spec,
        encoder,
        decoder: None,
        head: Some(head),
    })
}

/// A trainable composition: encoder plus optional decoder and classifier head.
///
/// Step 1 uses encoder + decoder, Step 2 and the CAM baselines use encoder +
/// head, and the gaze baseline uses all three.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: EncoderNet,
    pub decoder: Option<DecoderNet>,
    pub head: Option<ClassifierHead>,
}

/// Tape handles for every parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
    pub head: Vec<Var>,
}

impl ModelVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.head)
            .copied()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub features: Var,
    pub saliency: Option<Var>,
    pub logits: Option<Var>,
}

impl Model {
    pub fn autoencoder(encoder: EncoderNet, decoder: DecoderNet) -> Self {
        Self {
            spec: encoder.spec.clone(),
            encoder,
            decoder: Some(decoder),
            head: None,
        }
    }

    /// Encoder, decoder and head trained jointly.
    pub fn with_all_parts(encoder: EncoderNet, decoder: DecoderNet, head: ClassifierHead) -> Self {
        let mut spec = encoder.spec.clone();
        spec.num_classes = head.num_classes;
        Self {
            spec,
            encoder,
            decoder: Some(decoder),
            head: Some(head),
        }
    }

    pub fn parts(&self) -> Vec<&Params> {
        let mut v = vec![self.encoder.params()];
        v.extend(self.decoder.as_ref().map(DecoderNet::params));
        v.extend(self.head.as_ref().map(ClassifierHead::params));
        v
    }

    pub fn parts_mut(&mut self) -> Vec<&mut Params> {
        let mut v = vec![&mut self.encoder.params];
        v.extend(self.decoder.as_mut().map(|d| &mut d.params));
        v.extend(self.head.as_mut().map(|h| &mut h.params));
        v
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|p| p.count()).sum()
    }

    /// Every parameter tensor in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.parts_mut()
            .into_iter()
            .flat_map(|p| p.values_mut())
            .collect()
    }

    pub fn named_tensors(&self) -> Vec<(&str, &Tensor)> {
        self.parts().into_iter().flat_map(|p| p.iter()).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            encoder: self.encoder.params.bind(tape, trainable),
            decoder: self
                .decoder
                .as_ref()
                .map(|d| d.params.bind(tape, trainable))
                .unwrap_or_default(),
            head: self
                .head
                .as_ref()
                .map(|h| h.params.bind(tape, trainable))
                .unwrap_or_default(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, images: Var) -> Result<Outputs> {
        let feats = self.encoder.forward(tape, &vars.encoder, images)?;
        let saliency = match &self.decoder {
            Some(dec) => Some(dec.forward(tape, &vars.decoder, &feats)?),
            None => None,
        };
        let logits = match &self.head {
            Some(head) => Some(head.forward(tape, &vars.head, feats.output)?),
            None => None,
        };
        Ok(Outputs {
            features: feats.output,
            saliency,
            logits,
        })
    }

    /// Differentiable CAM for a batch: class-weighted channel sum of the
    /// encoder output, relu, nearest upsampling to input extent, per-sample
    /// min-max normalization. Returns `[N,1,E,E]`.
    pub fn cam(&self, tape: &mut Tape, vars: &ModelVars, features: Var, classes: &[usize]) -> Result<Var> {
        if self.head.is_none() {
            return Err(Error::Config("CAM requires a classifier head".into()));
        }
        let weighted = tape.class_map(features, vars.head[0], classes)?;
        let mut x = tape.relu(weighted);
        for _ in 0..self.spec.depth {
            x = tape.upsample_nearest2x(x)?;
        }
        tape.minmax_normalize(x, CAM_EPS)
    }

    /// Gradients of every parameter after `tape.backward`, in canonical
    /// order; parameters the loss did not reach get zeros.
    pub fn take_grads(&self, tape: &mut Tape, vars: &ModelVars) -> Vec<Tensor> {
        let shapes: Vec<Vec<usize>> = self
            .named_tensors()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        vars.all()
            .zip(shapes)
            .map(|(v, shape)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(shape)))
            .collect()
    }
}

/// Runs an autoencoder over `images: [N,C,E,E]` without recording gradients.
pub fn forward_saliency(enc: &EncoderNet, dec: &DecoderNet, images: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ev = enc.params.bind(&mut tape, false);
    let dv = dec.params.bind(&mut tape, false);
    let x = tape.constant(images.clone());
    let feats = enc.forward(&mut tape, &ev, x)?;
    let out = dec.forward(&mut tape, &dv, &feats)?;
    Ok(tape.value(out).clone())
}

/// CAM of one image `[C,E,E]` for `class_index`, as a saliency map in `[0,1]`.
pub fn class_activation_map(model: &Model, image: &Tensor, class_index: usize) -> Result<SaliencyMap> {
    let batch = image.clone().reshape(prepend_batch(image.shape()))?;
    let maps = class_activation_maps(model, &batch, &[class_index])?;
    Ok(maps.into_iter().next().expect("one map per image"))
}

/// Batched [`class_activation_map`].
pub fn class_activation_maps(model: &Model, images: &Tensor, classes: &[usize]) -> Result<Vec<SaliencyMap>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let x = tape.constant(images.clone());
    let feats = model.encoder.forward(&mut tape, &vars.encoder, x)?;
    let cam = model.cam(&mut tape, &vars, feats.output, classes)?;
    SaliencyMap::batch_from_tensor(tape.value(cam))
}

fn prepend_batch(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1];
    s.extend_from_slice(shape);
    s
}
