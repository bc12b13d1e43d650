//! Mask-aware imbalanced supervised losses (BCE / focal / asymmetric with
//! probability shifting) and the pseudo-label loss on unlabeled predictions.
//!
//! Both losses are implemented as single tape nodes with hand-derived
//! gradients so the hard-discard cases (shifted negatives below the margin,
//! pseudo-labels below the confidence threshold) contribute an exact zero to
//! both the value and the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Bce,
    Focal,
    Asymmetric,
}

/// Focusing parameters of the supervised loss plus the pseudo-label
/// threshold. `mode` labels the preset; the arithmetic runs off the numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    #[serde(default)]
    pub gamma_pos: f64,
    #[serde(default)]
    pub gamma_neg: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "default_pseudo_threshold")]
    pub pseudo_threshold: f64,
    /// Off by default: when set, pseudo-labels also keep confident negatives
    /// (`max(p, 1-p)` above the threshold) instead of confident positives
    /// only.
    #[serde(default)]
    pub symmetric_confidence: bool,
}

fn default_pseudo_threshold() -> f64 {
    0.95
}

impl LossConfig {
    pub fn bce() -> LossConfig {
        LossConfig {
            mode: LossMode::Bce,
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
            pseudo_threshold: default_pseudo_threshold(),
            symmetric_confidence: false,
        }
    }

    pub fn focal() -> LossConfig {
        LossConfig {
            mode: LossMode::Focal,
            gamma_pos: 2.0,
            gamma_neg: 2.0,
            margin: 0.0,
            ..LossConfig::bce()
        }
    }

    pub fn asymmetric() -> LossConfig {
        LossConfig {
            mode: LossMode::Asymmetric,
            gamma_pos: 0.0,
            gamma_neg: 2.0,
            margin: 0.05,
            ..LossConfig::bce()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_pos < 0.0 || self.gamma_neg < 0.0 {
            return Err(Error::Config("focusing parameters must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config("margin must lie in [0, 1)".into()));
        }
        if !(self.pseudo_threshold > 0.5 && self.pseudo_threshold <= 1.0) {
            return Err(Error::Config("pseudo_threshold must lie in (0.5, 1]".into()));
        }
        let is_bce = self.gamma_pos == 0.0 && self.gamma_neg == 0.0 && self.margin == 0.0;
        match self.mode {
            LossMode::Bce if !is_bce => Err(Error::Config(
                "bce mode requires gamma_pos = gamma_neg = 0 and margin = 0".into(),
            )),
            LossMode::Focal if is_bce => Err(Error::Config(
                "focal mode expects a non-zero focusing parameter or margin".into(),
            )),
            LossMode::Asymmetric if self.margin <= 0.0 => Err(Error::Config(
                "asymmetric mode expects a positive margin".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-batch supervision: values in {0, 1} where observed, with a 0/1 mask
/// (1 = observed). Unobserved entries carry no loss and no gradient.
#[derive(Debug, Clone)]
pub struct LabeledBatchTargets {
    pub batch: usize,
    pub labels: usize,
    pub y: Vec<f64>,
    pub mask: Vec<f64>,
}

impl LabeledBatchTargets {
    pub fn new(batch: usize, labels: usize, y: Vec<f64>, mask: Vec<f64>) -> LabeledBatchTargets {
        assert_eq!(y.len(), batch * labels);
        assert_eq!(mask.len(), batch * labels);
        LabeledBatchTargets {
            batch,
            labels,
            y,
            mask,
        }
    }

    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }
}

// Positive part: (1-p)^g * (-ln p) and its derivative in p.
fn positive_term(p: f64, gamma: f64) -> (f64, f64) {
    let one_minus = 1.0 - p;
    let value = one_minus.powf(gamma) * (-p.ln());
    let derivative = gamma * one_minus.powf(gamma - 1.0) * p.ln() - one_minus.powf(gamma) / p;
    (value, derivative)
}

// Negative part with probability shifting: q = max(p - m, 0),
// q^g * (-ln(1-q)); zero value and zero derivative when p <= m.
fn negative_term(p: f64, gamma: f64, margin: f64) -> (f64, f64) {
    let q = p - margin;
    if q <= 0.0 {
        return (0.0, 0.0);
    }
    let value = q.powf(gamma) * (-(1.0 - q).ln());
    let first = if gamma == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * (-(1.0 - q).ln())
    };
    let derivative = first + q.powf(gamma) / (1.0 - q);
    (value, derivative)
}

/// Supervised loss over probabilities `p` (batch-by-labels): per observed
/// entry the positive term `(1-p)^g+ * (-ln p)` when y = 1, otherwise the
/// shifted negative term; the total is the mean over observed entries.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before any logarithm;
/// clamped entries receive zero gradient.
pub fn supervised_loss(
    p: &Tensor,
    targets: &LabeledBatchTargets,
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let expected = [targets.batch, targets.labels];
    if p.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "supervised_loss",
            lhs: p.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let observed = targets.observed();

    let mut total = 0.0;
    let mut grad = vec![0.0; p.len()];
    if observed > 0 {
        let scale = 1.0 / observed as f64;
        for (idx, &pv) in p.values().iter().enumerate() {
            if targets.mask[idx] == 0.0 {
                continue;
            }
            let clamped = pv.clamp(lo, hi);
            let (value, derivative) = if targets.y[idx] != 0.0 {
                positive_term(clamped, cfg.gamma_pos)
            } else {
                negative_term(clamped, cfg.gamma_neg, cfg.margin)
            };
            total += value * scale;
            if pv > lo && pv < hi {
                grad[idx] = derivative * scale;
            }
        }
    }

    Ok(Tensor::from_op(
        vec![1],
        vec![total],
        vec![p.clone()],
        Box::new(move |_, _, g| {
            vec![Some(grad.iter().map(|d| d * g[0]).collect())]
        }),
    ))
}

/// Pseudo-label loss over unlabeled predictions: entries whose probability
/// exceeds the confidence threshold are treated as positive pseudo-labels and
/// contribute `-ln p`; the total is the mean over retained entries (exactly
/// zero, with zero gradient, when nothing is retained).
pub fn unlabeled_loss(p: &Tensor, threshold: f64) -> Tensor {
    unlabeled_loss_with(p, threshold, false)
}

/// [`unlabeled_loss`] with the optional symmetric-confidence variant, which
/// also retains confident negatives (`1 - p` above the threshold) against a
/// zero pseudo-label.
pub fn unlabeled_loss_with(p: &Tensor, threshold: f64, symmetric: bool) -> Tensor {
    assert!(
        threshold > 0.5 && threshold <= 1.0,
        "pseudo-label threshold must lie in (0.5, 1]"
    );
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;

    let mut retained = 0usize;
    let mut terms = vec![0.0f64; p.len()];
    let mut derivs = vec![0.0f64; p.len()];
    for (idx, &pv) in p.values().iter().enumerate() {
        let clamped = pv.clamp(lo, hi);
        if pv > threshold {
            retained += 1;
            terms[idx] = -clamped.ln();
            if pv > lo && pv < hi {
                derivs[idx] = -1.0 / clamped;
            }
        } else if symmetric && 1.0 - pv > threshold {
            retained += 1;
            terms[idx] = -(1.0 - clamped).ln();
            if pv > lo && pv < hi {
                derivs[idx] = 1.0 / (1.0 - clamped);
            }
        }
    }
    let (total, grad) = if retained == 0 {
        (0.0, vec![0.0; p.len()])
    } else {
        let scale = 1.0 / retained as f64;
        (
            terms.iter().sum::<f64>() * scale,
            derivs.iter().map(|d| d * scale).collect(),
        )
    };

    Tensor::from_op(
        vec![1],
        vec![total],
        vec![p.clone()],
        Box::new(move |_, _, g| vec![Some(grad.iter().map(|d| d * g[0]).collect())]),
    )
}

/// Training objective: supervised plus pseudo-label loss.
pub fn total_loss(supervised: &Tensor, unlabeled: &Tensor) -> Tensor {
    supervised.add(unlabeled)
}
