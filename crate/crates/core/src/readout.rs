//! Linear readout: one-hot teachers, ridge training, utterance decisions and
//! word error rate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::FeatureSample;
use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, Matrix};
use crate::masking::MaskSpec;
use crate::quantization::QuantizationModel;
use crate::reservoir::ReservoirParams;

pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// How per-frame outputs are reduced to one label per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Argmax of the frame-averaged output.
    #[default]
    MeanScore,
    /// Most frequent per-frame argmax; ties go to the lower class index.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadoutConfig {
    pub lambda: f64,
    pub decision: DecisionRule,
    /// Leading frames of each utterance left out of training and decisions.
    pub washout_frames: usize,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            decision: DecisionRule::MeanScore,
            washout_frames: 0,
        }
    }
}

impl ReadoutConfig {
    /// Frame range used from an utterance with `n` frames. The last frame is
    /// always kept so short utterances still contribute.
    fn frame_range(&self, n: usize) -> std::ops::Range<usize> {
        self.washout_frames.min(n.saturating_sub(1))..n
    }
}

/// One-hot teacher, Q × K: column k is the indicator of `labels[k]`.
pub fn build_teacher(labels: &[usize], q_classes: usize) -> Result<Matrix> {
    if labels.is_empty() || q_classes == 0 {
        return Err(Error::config("teacher needs at least one frame and one class"));
    }
    let mut t = Matrix::zeros(q_classes, labels.len());
    for (k, &label) in labels.iter().enumerate() {
        if label >= q_classes {
            return Err(Error::config(format!("label {label} out of range for {q_classes} classes")));
        }
        t[(label, k)] = 1.0;
    }
    Ok(t)
}

/// Ridge-regression readout from horizontally stacked states (N × K) and
/// teacher (Q × K), giving W^R (Q × N).
pub fn train_readout(states: &Matrix, teacher: &Matrix, lambda: f64) -> Result<Matrix> {
    ridge_solve(states, teacher, lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub n_errors: usize,
    pub n_samples: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], q_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Dataset("cannot evaluate an empty split".into()));
        }
        assert_eq!(truth.len(), predicted.len());
        let mut confusion = vec![vec![0; q_classes]; q_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let n_errors = truth.iter().zip(predicted).filter(|(t, p)| t != p).count();
        Ok(Self {
            wer: n_errors as f64 / truth.len() as f64,
            n_errors,
            n_samples: truth.len(),
            confusion,
        })
    }
}

/// Everything needed to classify new utterances.
///
/// `mask` and `w_readout` are stored as applied, i.e. with any coefficient
/// quantization noise already baked in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub class_labels: Vec<String>,
    pub lambda: f64,
    pub decision: DecisionRule,
    pub washout_frames: usize,
    pub params: ReservoirParams,
    pub quant: QuantizationModel,
    pub mask: MaskSpec,
    pub w_readout: Matrix,
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Per-frame outputs y(n) = W^R·x(n) for the frames kept after washout.
    pub fn frame_outputs(&self, states: &Matrix) -> Result<Matrix> {
        let range = ReadoutConfig {
            washout_frames: self.washout_frames,
            ..ReadoutConfig::default()
        }
        .frame_range(states.cols());
        let y = self.w_readout.matmul(states)?;
        let cols: Vec<Vec<f64>> = range.map(|c| y.column(c)).collect();
        Matrix::from_columns(&cols)
    }

    /// Utterance decision from a state matrix: returns the label index and
    /// the frame-averaged score vector.
    pub fn decide(&self, states: &Matrix) -> Result<(usize, Vec<f64>)> {
        let y = self.frame_outputs(states)?;
        let frames = y.cols() as f64;
        let scores: Vec<f64> = (0..y.rows()).map(|r| y.row(r).iter().sum::<f64>() / frames).collect();
        let label = match self.decision {
            DecisionRule::MeanScore => argmax(&scores),
            DecisionRule::MajorityVote => {
                let mut votes = vec![0usize; y.rows()];
                for c in 0..y.cols() {
                    votes[argmax(&y.column(c))] += 1;
                }
                let best = *votes.iter().max().unwrap();
                votes.iter().position(|&v| v == best).unwrap()
            }
        };
        Ok((label, scores))
    }

    /// Runs the full pipeline on one utterance.
    pub fn classify(&self, sample: &FeatureSample) -> Result<(usize, Vec<f64>)> {
        let states = crate::pipeline::reservoir_states(sample, &self.mask, &self.params, &self.quant)?;
        self.decide(&states)
    }

    pub fn evaluate(&self, samples: &[&FeatureSample]) -> Result<EvalReport> {
        use rayon::prelude::*;
        let predicted = samples
            .par_iter()
            .map(|s| self.classify(s).map(|(label, _)| label))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
        EvalReport::from_predictions(&truth, &predicted, self.n_classes())
    }

    /// Evaluates precomputed reservoir states (one per sample).
    pub fn evaluate_states(&self, samples: &[&FeatureSample], states: &[Matrix]) -> Result<EvalReport> {
        let predicted = states
            .iter()
            .map(|s| self.decide(s).map(|(label, _)| label))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
        EvalReport::from_predictions(&truth, &predicted, self.n_classes())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits W^R on the given per-utterance states. Every kept frame is labeled
/// with its utterance's class.
pub(crate) fn fit_readout(
    samples: &[&FeatureSample],
    states: &[Matrix],
    q_classes: usize,
    cfg: &ReadoutConfig,
) -> Result<Matrix> {
    if samples.is_empty() || samples.len() != states.len() {
        return Err(Error::config("readout training needs one state matrix per sample"));
    }
    let mut parts = Vec::with_capacity(states.len());
    let mut labels = Vec::new();
    for (s, x) in samples.iter().zip(states) {
        let range = cfg.frame_range(x.cols());
        labels.extend(std::iter::repeat_n(s.label, range.len()));
        if range.start == 0 {
            parts.push(x.clone());
        } else {
            let cols: Vec<Vec<f64>> = range.map(|c| x.column(c)).collect();
            parts.push(Matrix::from_columns(&cols)?);
        }
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    let mx = Matrix::hcat(&refs)?;
    let teacher = build_teacher(&labels, q_classes)?;
    train_readout(&mx, &teacher, cfg.lambda)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}
