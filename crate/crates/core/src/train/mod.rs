//! Training pipelines: saliency pretraining (Step 1), classification
//! fine-tuning of the pretrained encoder (Step 2), single-phase baselines,
//! saliency synthesis for unannotated images, and the multi-seed driver.

mod experiment;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{SaliencyMap, Sample, SampleSet, Split};
use crate::error::{Error, Result};
use crate::losses::{self, Dissimilarity, LossConfig, LossKind, PixelNormalization};
use crate::metrics::{self, ScoredSample};
use crate::nn::{
    self, build_autoencoder, build_classifier, load_checkpoint, save_checkpoint, ClassifierHead, DecoderNet,
    EncoderNet, Model, ModelSpec,
};
use crate::seed;
use crate::tensor::Tensor;

pub use experiment::{
    run_experiment, AggregateReport, CellFailure, ExperimentSpec, RunRecord, Strategy, StrategySummary,
};
pub use optim::{Optimizer, OptimizerSpec};

/// Batch size used for gradient-free evaluation passes.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Step1,
    Step2,
    BaselineXent,
    BaselineJointCam,
    BaselineJointGaze,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Random,
    FromCheckpoint(PathBuf),
}

/// One training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub phase: Phase,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub loss: LossConfig,
}

impl TrainSpec {
    pub fn step1(seed: u64) -> Self {
        Self {
            phase: Phase::Step1,
            optimizer: OptimizerSpec::adamw(1e-4),
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            seed,
            init: Init::Random,
            loss: LossConfig {
                kind: LossKind::MentorPretrain,
                ..Default::default()
            },
        }
    }

    pub fn step2(seed: u64) -> Self {
        Self {
            phase: Phase::Step2,
            optimizer: OptimizerSpec::sgd(0.005),
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            seed,
            init: Init::Random,
            loss: LossConfig::default(),
        }
    }

    /// Single-phase baseline sharing the Step 2 optimizer family.
    pub fn baseline(phase: Phase, seed: u64) -> Self {
        let kind = match phase {
            Phase::BaselineJointCam => LossKind::JointCam,
            Phase::BaselineJointGaze => LossKind::JointGaze,
            _ => LossKind::Xent,
        };
        Self {
            phase,
            loss: LossConfig {
                kind,
                ..Default::default()
            },
            ..Self::step2(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        let expected = match self.phase {
            Phase::Step1 => LossKind::MentorPretrain,
            Phase::Step2 | Phase::BaselineXent => LossKind::Xent,
            Phase::BaselineJointCam => LossKind::JointCam,
            Phase::BaselineJointGaze => LossKind::JointGaze,
        };
        if self.loss.kind != expected {
            return Err(Error::Config(format!(
                "phase {:?} trains with loss {expected:?}, not {:?}",
                self.phase, self.loss.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// L2 norms of each model part's gradient after the first training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GradReach {
    pub encoder: f64,
    pub decoder: Option<f64>,
    pub head: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FinalMetrics {
    pub val_loss: f64,
    pub test_auroc: Option<f64>,
    /// Mean salience entropy of the model's saliency over evaluated images.
    pub s_entropy: Option<f64>,
    /// Mean share of predicted saliency mass inside the ground-truth
    /// support box, over validation samples that have one.
    pub saliency_mass_in_box: Option<f64>,
}

/// Outcome of one training phase. Everything here is a deterministic
/// function of the inputs; timing lives in [`RunRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub phase: Phase,
    pub seed: u64,
    /// Validation loss of the initial model, before any update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub grad_reach: GradReach,
    pub init_encoder_digest: String,
    pub best_encoder_digest: String,
    pub metrics: FinalMetrics,
    pub checkpoint: Option<String>,
}

/// FNV-1a over parameter names and raw bits.
pub fn params_digest(params: &nn::Params) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (name, t) in params.iter() {
        eat(name.as_bytes());
        for v in t.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Pretrain(PixelNormalization),
    Xent,
    JointCam { alpha: f64, d: Dissimilarity },
    JointGaze { alpha: f64, d: Dissimilarity },
}

impl Objective {
    fn from_spec(spec: &TrainSpec) -> Self {
        let (alpha, d) = (spec.loss.alpha, spec.loss.dissimilarity);
        match spec.loss.kind {
            LossKind::MentorPretrain => Objective::Pretrain(spec.loss.pixel_normalization),
            LossKind::Xent => Objective::Xent,
            LossKind::JointCam => Objective::JointCam { alpha, d },
            LossKind::JointGaze => Objective::JointGaze { alpha, d },
        }
    }

    fn needs_labels(self) -> bool {
        !matches!(self, Objective::Pretrain(_))
    }

    fn needs_saliency(self) -> bool {
        !matches!(self, Objective::Xent)
    }
}

/// Images (and optionally labels and min-max normalized saliency) of one split.
struct Prepared {
    images: Vec<Tensor>,
    labels: Option<Vec<usize>>,
    saliency: Option<Vec<Tensor>>,
}

impl Prepared {
    fn new(samples: &[&Sample], extent: usize, labels: bool, saliency: bool) -> Result<Self> {
        let mut images = Vec::with_capacity(samples.len());
        for s in samples {
            if s.image.shape() != [1, extent, extent] {
                return Err(Error::shape(
                    "training data",
                    format!("image of subject `{}` has shape {:?}, expected [1, {extent}, {extent}]", s.subject_id, s.image.shape()),
                ));
            }
            images.push(s.image.clone());
        }
        let labels = if labels {
            Some(
                samples
                    .iter()
                    .map(|s| {
                        s.label.map(usize::from).ok_or_else(|| {
                            Error::Data(format!("{} sample of subject `{}` has no label", s.split, s.subject_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let saliency = if saliency {
            Some(
                samples
                    .iter()
                    .map(|s| match &s.saliency {
                        Some(m) if m.width() == extent && m.height() == extent => Ok(m.minmax_normalized().to_tensor()),
                        Some(m) => Err(Error::shape(
                            "training data",
                            format!("saliency map {}x{} does not match extent {extent}", m.width(), m.height()),
                        )),
                        None => Err(Error::Data(format!(
                            "{} sample of subject `{}` has no saliency map",
                            s.split, s.subject_id
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { images, labels, saliency })
    }

    fn len(&self) -> usize {
        self.images.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let gather = |items: &[Tensor]| Tensor::stack(&idx.iter().map(|&i| &items[i]).collect::<Vec<_>>());
        Ok(Batch {
            images: gather(&self.images)?,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            saliency: self.saliency.as_ref().map(|s| gather(s)).transpose()?,
        })
    }
}

struct Batch {
    images: Tensor,
    labels: Option<Vec<usize>>,
    saliency: Option<Tensor>,
}

fn batch_loss(model: &Model, tape: &mut Tape, vars: &nn::ModelVars, batch: &Batch, obj: Objective) -> Result<Var> {
    let x = tape.constant(batch.images.clone());
    let out = model.forward(tape, vars, x)?;
    let human = |tape: &mut Tape| tape.constant(batch.saliency.clone().expect("saliency prepared"));
    let labels = || batch.labels.as_deref().expect("labels prepared");
    match obj {
        Objective::Pretrain(norm) => {
            let h = human(tape);
            losses::mentor_pretrain_loss(tape, out.saliency.expect("decoder"), h, norm)
        }
        Objective::Xent => losses::cross_entropy(tape, out.logits.expect("head"), labels()),
        Objective::JointCam { alpha, d } => {
            let cam = model.cam(tape, vars, out.features, labels())?;
            let h = human(tape);
            losses::joint_loss(tape, out.logits.expect("head"), labels(), cam, h, alpha, d)
        }
        Objective::JointGaze { alpha, d } => {
            let h = human(tape);
            losses::joint_loss(tape, out.logits.expect("head"), labels(), out.saliency.expect("decoder"), h, alpha, d)
        }
    }
}

/// Validation loss: the pretraining loss for Step 1, cross-entropy otherwise.
fn validation_loss(model: &Model, val: &Prepared, obj: Objective) -> Result<f64> {
    let obj = match obj {
        Objective::Pretrain(n) => Objective::Pretrain(n),
        _ => Objective::Xent,
    };
    let mut total = 0.0;
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let loss = batch_loss(model, &mut tape, &vars, &val.batch(chunk)?, obj)?;
        total += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / val.len() as f64)
}

fn grad_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
}

struct Fit {
    initial_val_loss: f64,
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    stopped_early: bool,
    grad_reach: GradReach,
    best: Model,
}

fn fit(mut model: Model, train: &Prepared, val: &Prepared, spec: &TrainSpec, obj: Objective) -> Result<Fit> {
    if train.len() == 0 || val.len() == 0 {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let initial_val_loss = validation_loss(&model, val, obj)?;
    let mut opt = Optimizer::new(spec.optimizer);
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut grad_reach = None;
    let mut stopped_early = false;
    let shuffle_root = seed::derive(spec.seed, seed::stream::SHUFFLE);

    for epoch in 0..spec.max_epochs {
        let lr = spec.optimizer.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(shuffle_root, epoch as u64)));
        let mut total = 0.0;
        for idx in order.chunks(spec.batch_size) {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let loss = batch_loss(&model, &mut tape, &vars, &train.batch(idx)?, obj)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Diverged(format!("non-finite training loss in epoch {}", epoch + 1)));
            }
            total += value * idx.len() as f64;
            tape.backward(loss)?;
            let grads = model.take_grads(&mut tape, &vars);
            if grad_reach.is_none() {
                let (ne, nd) = (vars.encoder.len(), vars.decoder.len());
                grad_reach = Some(GradReach {
                    encoder: grad_norm(&grads[..ne]),
                    decoder: model.decoder.as_ref().map(|_| grad_norm(&grads[ne..ne + nd])),
                    head: model.head.as_ref().map(|_| grad_norm(&grads[ne + nd..])),
                });
            }
            opt.step(&mut model.tensors_mut(), &grads, lr)?;
        }
        if !opt.state_is_finite() {
            return Err(Error::Diverged(format!("optimizer state not finite after epoch {}", epoch + 1)));
        }
        let val_loss = validation_loss(&model, val, obj)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss in epoch {}", epoch + 1)));
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: total / train.len() as f64,
            val_loss,
            lr,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, model.clone());
        } else if epoch + 1 - best.1 >= spec.patience {
            stopped_early = epoch + 1 < spec.max_epochs;
            break;
        }
    }
    Ok(Fit {
        initial_val_loss,
        epochs,
        best_epoch: best.1,
        stopped_early,
        grad_reach: grad_reach.unwrap_or_default(),
        best: best.2,
    })
}

fn refs(set: &SampleSet, split: Split) -> Vec<&Sample> {
    set.split(split)
}

fn finish(
    spec: &TrainSpec,
    init_digest: String,
    fit: Fit,
    metrics: FinalMetrics,
    ckpt_out: Option<&Path>,
) -> Result<(RunReport, Model)> {
    if let Some(path) = ckpt_out {
        save_checkpoint(&fit.best, path)?;
    }
    let report = RunReport {
        phase: spec.phase,
        seed: spec.seed,
        initial_val_loss: fit.initial_val_loss,
        best_encoder_digest: params_digest(fit.best.encoder.params()),
        init_encoder_digest: init_digest,
        epochs: fit.epochs,
        best_epoch: fit.best_epoch,
        stopped_early: fit.stopped_early,
        grad_reach: fit.grad_reach,
        metrics,
        checkpoint: ckpt_out.map(|p| p.display().to_string()),
    };
    Ok((report, fit.best))
}

/// Step 1: regress min-max normalized saliency maps from images. Labels are
/// never read. Returns the best-validation autoencoder.
pub fn train_step1(
    enc: EncoderNet,
    dec: DecoderNet,
    data: &SampleSet,
    spec: &TrainSpec,
    ckpt_out: Option<&Path>,
) -> Result<(RunReport, Model)> {
    spec.validate()?;
    if spec.phase != Phase::Step1 {
        return Err(Error::Config(format!("train_step1 needs phase step1, got {:?}", spec.phase)));
    }
    let extent = enc.spec().input_extent;
    let obj = Objective::from_spec(spec);
    let train = Prepared::new(&refs(data, Split::Train), extent, false, true)?;
    let val_samples = refs(data, Split::Val);
    let val = Prepared::new(&val_samples, extent, false, true)?;
    let init_digest = params_digest(enc.params());
    let fit = fit(Model::autoencoder(enc, dec), &train, &val, spec, obj)?;

    let (enc, dec) = (&fit.best.encoder, fit.best.decoder.as_ref().expect("autoencoder"));
    let predicted = predict_saliency(enc, dec, &val.images)?;
    let metrics = FinalMetrics {
        val_loss: fit.epochs[fit.best_epoch - 1].val_loss,
        test_auroc: None,
        s_entropy: mean_entropy(&predicted),
        saliency_mass_in_box: mass_in_box(&predicted, &val_samples),
    };
    finish(spec, init_digest, fit, metrics, ckpt_out)
}

/// Attaches a fresh head (seeded from `seed`) to the encoder stored in a checkpoint.
pub fn init_step2_model(encoder_ckpt: &Path, model_spec: Option<&ModelSpec>, seed: u64) -> Result<Model> {
    let loaded = load_checkpoint(encoder_ckpt)?;
    if let Some(spec) = model_spec {
        let mut want = spec.clone();
        want.num_classes = loaded.spec.num_classes;
        if want != loaded.spec {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} does not match the configured model {:?}",
                loaded.spec, spec
            )));
        }
    }
    let classes = model_spec.map_or(2, |s| s.num_classes);
    build_classifier(loaded.encoder, classes, seed::derive(seed, seed::stream::HEAD_INIT))
}

/// Step 2: fine-tune every parameter of encoder + fresh head with cross-entropy.
pub fn train_step2(
    encoder_ckpt: &Path,
    model_spec: Option<&ModelSpec>,
    data: &SampleSet,
    spec: &TrainSpec,
    ckpt_out: Option<&Path>,
) -> Result<(RunReport, Model)> {
    let model = init_step2_model(encoder_ckpt, model_spec, spec.seed)?;
    train_classifier(model, data, spec, ckpt_out)
}

/// Step 2 from an in-memory encoder.
pub fn train_step2_from(encoder: EncoderNet, data: &SampleSet, spec: &TrainSpec, ckpt_out: Option<&Path>) -> Result<(RunReport, Model)> {
    let classes = encoder.spec().num_classes;
    let model = build_classifier(encoder, classes, seed::derive(spec.seed, seed::stream::HEAD_INIT))?;
    train_classifier(model, data, spec, ckpt_out)
}

/// The model a baseline starts from: a fresh network built from `spec.seed`,
/// or the encoder (and decoder, if present and needed) of `spec.init`.
pub fn init_baseline_model(model_spec: &ModelSpec, spec: &TrainSpec) -> Result<Model> {
    let head_seed = seed::derive(spec.seed, seed::stream::HEAD_INIT);
    let (enc, dec) = match &spec.init {
        Init::Random => {
            let (e, d) = build_autoencoder(model_spec, spec.seed)?;
            (e, Some(d))
        }
        Init::FromCheckpoint(path) => {
            let m = load_checkpoint(path)?;
            (m.encoder, m.decoder)
        }
    };
    if spec.phase == Phase::BaselineJointGaze {
        let dec = match dec {
            Some(d) => d,
            None => build_autoencoder(enc.spec(), spec.seed)?.1,
        };
        let head = ClassifierHead::new(enc.spec().feature_channels(), model_spec.num_classes, &mut seed::rng(head_seed))?;
        Ok(Model::with_all_parts(enc, dec, head))
    } else {
        build_classifier(enc, model_spec.num_classes, head_seed)
    }
}

/// Single-phase baseline: cross-entropy, CAM joint loss or decoder joint loss.
pub fn train_baseline(
    model_spec: &ModelSpec,
    data: &SampleSet,
    spec: &TrainSpec,
    ckpt_out: Option<&Path>,
) -> Result<(RunReport, Model)> {
    if !matches!(spec.phase, Phase::BaselineXent | Phase::BaselineJointCam | Phase::BaselineJointGaze) {
        return Err(Error::Config(format!("{:?} is not a baseline phase", spec.phase)));
    }
    let model = init_baseline_model(model_spec, spec)?;
    train_classifier(model, data, spec, ckpt_out)
}

/// Trains any model with a classifier head using the objective of `spec`.
pub fn train_classifier(model: Model, data: &SampleSet, spec: &TrainSpec, ckpt_out: Option<&Path>) -> Result<(RunReport, Model)> {
    spec.validate()?;
    if model.head.is_none() {
        return Err(Error::Config("classifier training needs a head".into()));
    }
    let obj = Objective::from_spec(spec);
    if matches!(obj, Objective::Pretrain(_)) {
        return Err(Error::Config("use train_step1 for saliency pretraining".into()));
    }
    if matches!(obj, Objective::JointGaze { .. }) && model.decoder.is_none() {
        return Err(Error::Config("joint_gaze needs a decoder".into()));
    }
    let extent = model.spec.input_extent;
    let train = Prepared::new(&refs(data, Split::Train), extent, true, obj.needs_saliency())?;
    let val = Prepared::new(&refs(data, Split::Val), extent, obj.needs_labels(), false)?;
    let init_digest = params_digest(model.encoder.params());
    let fit = fit(model, &train, &val, spec, obj)?;

    let (test_auroc, s_entropy) = test_metrics(&fit.best, &refs(data, Split::Test))?;
    let metrics = FinalMetrics {
        val_loss: fit.epochs[fit.best_epoch - 1].val_loss,
        test_auroc,
        s_entropy,
        saliency_mass_in_box: None,
    };
    finish(spec, init_digest, fit, metrics, ckpt_out)
}

/// Metrics of a trained model on `data`: test AUROC and CAM entropy for
/// classifiers, validation saliency localization and entropy for autoencoders.
pub fn evaluate_model(model: &Model, data: &SampleSet) -> Result<FinalMetrics> {
    let extent = model.spec.input_extent;
    if model.head.is_none() {
        let dec = model
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("model has neither decoder nor head".into()))?;
        let val_samples = refs(data, Split::Val);
        let val = Prepared::new(&val_samples, extent, false, true)?;
        let predicted = predict_saliency(&model.encoder, dec, &val.images)?;
        return Ok(FinalMetrics {
            val_loss: validation_loss(model, &val, Objective::Pretrain(PixelNormalization::PerPixel))?,
            test_auroc: None,
            s_entropy: mean_entropy(&predicted),
            saliency_mass_in_box: mass_in_box(&predicted, &val_samples),
        });
    }
    let val = Prepared::new(&refs(data, Split::Val), extent, true, false)?;
    let val_loss = validation_loss(model, &val, Objective::Xent)?;
    let (test_auroc, s_entropy) = test_metrics(model, &refs(data, Split::Test))?;
    Ok(FinalMetrics {
        val_loss,
        test_auroc,
        s_entropy,
        saliency_mass_in_box: None,
    })
}

fn test_metrics(model: &Model, test: &[&Sample]) -> Result<(Option<f64>, Option<f64>)> {
    if test.is_empty() {
        return Ok((None, None));
    }
    let images: Vec<Tensor> = test.iter().map(|s| s.image.clone()).collect();
    let scores = anomaly_scores(model, &images)?;
    let scored: Vec<ScoredSample> = scores
        .iter()
        .zip(test)
        .filter_map(|(&p, s)| s.label.map(|l| ScoredSample::new(p, l)))
        .collect();
    let auroc = match metrics::auroc(&scored) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let cams = cams_for(model, &images, crate::data::ANOMALOUS as usize)?;
    Ok((auroc, mean_entropy(&cams)))
}

fn chunks(images: &[Tensor]) -> impl Iterator<Item = Result<Tensor>> + '_ {
    images
        .chunks(EVAL_BATCH)
        .map(|c| Tensor::stack(&c.iter().collect::<Vec<_>>()))
}

/// Softmax probability of the anomalous class for each `[C,E,E]` image.
pub fn anomaly_scores(model: &Model, images: &[Tensor]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in chunks(images) {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.constant(batch?);
        let logits = model
            .forward(&mut tape, &vars, x)?
            .logits
            .ok_or_else(|| Error::Config("scoring needs a classifier head".into()))?;
        let probs = tape.softmax(logits, 1)?;
        let c = model.spec.num_classes;
        out.extend(
            tape.value(probs)
                .data()
                .chunks_exact(c)
                .map(|row| row[crate::data::ANOMALOUS as usize] as f64),
        );
    }
    Ok(out)
}

fn cams_for(model: &Model, images: &[Tensor], class: usize) -> Result<Vec<SaliencyMap>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in chunks(images) {
        let batch = batch?;
        let classes = vec![class; batch.shape()[0]];
        out.extend(nn::class_activation_maps(model, &batch, &classes)?);
    }
    Ok(out)
}

fn predict_saliency(enc: &EncoderNet, dec: &DecoderNet, images: &[Tensor]) -> Result<Vec<SaliencyMap>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in chunks(images) {
        out.extend(SaliencyMap::batch_from_tensor(&nn::forward_saliency(enc, dec, &batch?)?)?);
    }
    Ok(out)
}

/// Teacher-student reuse: predicted maps for `images: [N,C,E,E]`, usable in
/// place of human annotations.
pub fn generate_saliency_for_unlabeled(enc: &EncoderNet, dec: &DecoderNet, images: &Tensor) -> Result<Vec<SaliencyMap>> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::shape("generate_saliency", format!("expected [N,C,E,E], got {s:?}")));
    }
    let items = (0..s[0]).map(|i| images.index_outer(i)).collect::<Result<Vec<_>>>()?;
    predict_saliency(enc, dec, &items)
}

/// Mean salience entropy over maps where it is defined.
fn mean_entropy(maps: &[SaliencyMap]) -> Option<f64> {
    let vals: Vec<f64> = maps.iter().filter_map(|m| metrics::salience_entropy(m).ok()).collect();
    metrics::aggregate(&vals).ok().map(|(m, _)| m)
}

/// Share of predicted mass inside the support box of the reference map.
pub fn mass_fraction_in_box(predicted: &SaliencyMap, reference: &SaliencyMap) -> Option<f64> {
    let (x0, y0, x1, y1) = reference.support_bbox()?;
    let total = predicted.sum();
    if total <= 0.0 {
        return Some(0.0);
    }
    let mut inside = 0.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            inside += predicted.get(x, y) as f64;
        }
    }
    Some(inside / total)
}

fn mass_in_box(predicted: &[SaliencyMap], samples: &[&Sample]) -> Option<f64> {
    let fractions: Vec<f64> = predicted
        .iter()
        .zip(samples)
        .filter_map(|(p, s)| s.saliency.as_ref().and_then(|r| mass_fraction_in_box(p, r)))
        .collect();
    metrics::aggregate(&fractions).ok().map(|(m, _)| m)
}
