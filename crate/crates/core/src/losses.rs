//! Training objectives, recorded on a [`Tape`] so they can be differentiated.
//!
//! Saliency arguments are tensors of any matching shape, normally `[K,1,H,W]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Xent,
    JointCam,
    JointGaze,
    MentorPretrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    #[default]
    Mse,
    L1,
}

/// How the pretraining loss normalizes each sample's squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNormalization {
    /// Divide by the pixel count as well as the batch size.
    #[default]
    PerPixel,
    /// Batch mean of the raw squared ℓ2 distance.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the classification term in the joint losses.
    pub alpha: f64,
    pub dissimilarity: Dissimilarity,
    pub pixel_normalization: PixelNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Xent,
            alpha: 0.5,
            dissimilarity: Dissimilarity::Mse,
            pixel_normalization: PixelNormalization::PerPixel,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")))
    }
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn cross_entropy<E: Element>(tape: &mut Tape<E>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

/// Mean per-pixel dissimilarity between predicted and human maps.
pub fn salience_dissimilarity<E: Element>(
    tape: &mut Tape<E>,
    predicted: Var,
    human: Var,
    d: Dissimilarity,
) -> Result<Var> {
    let diff = tape.sub(predicted, human)?;
    let per_pixel = match d {
        Dissimilarity::Mse => tape.square(diff),
        Dissimilarity::L1 => tape.abs(diff),
    };
    Ok(tape.mean(per_pixel))
}

/// `alpha · cross_entropy + (1 - alpha) · salience_dissimilarity`.
pub fn joint_loss<E: Element>(
    tape: &mut Tape<E>,
    logits: Var,
    labels: &[usize],
    model_saliency: Var,
    human_saliency: Var,
    alpha: f64,
    d: Dissimilarity,
) -> Result<Var> {
    check_alpha(alpha)?;
    let ce = cross_entropy(tape, logits, labels)?;
    let sal = salience_dissimilarity(tape, model_saliency, human_saliency, d)?;
    let a = tape.scale(ce, alpha);
    let b = tape.scale(sal, 1.0 - alpha);
    tape.add(a, b)
}

/// Label-free saliency regression loss.
pub fn mentor_pretrain_loss<E: Element>(
    tape: &mut Tape<E>,
    predicted: Var,
    human: Var,
    norm: PixelNormalization,
) -> Result<Var> {
    match norm {
        PixelNormalization::PerPixel => salience_dissimilarity(tape, predicted, human, Dissimilarity::Mse),
        PixelNormalization::Raw => {
            let k = tape.value(predicted).shape().first().copied().unwrap_or(1).max(1);
            let diff = tape.sub(predicted, human)?;
            let sq = tape.square(diff);
            let total = tape.sum(sq);
            Ok(tape.scale(total, 1.0 / k as f64))
        }
    }
}
