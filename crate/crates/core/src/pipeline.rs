//! Mask → reservoir → readout composition shared by training, evaluation and
//! the optimizers.

use rayon::prelude::*;

use crate::datasets::FeatureSample;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::masking::{mask_and_encode, MaskSpec};
use crate::quantization::QuantizationModel;
use crate::readout::{fit_readout, ReadoutConfig, TrainedModel};
use crate::reservoir::{integrate_sample, ReservoirParams, ReservoirState};

/// Noise stream id for an utterance, so its noise draws do not depend on
/// which other samples are processed or in what order.
pub fn sample_stream(id: &str) -> u64 {
    // FNV-1a, 64 bit; the top bit is cleared to stay clear of reserved streams.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h & 0x7fff_ffff_ffff_ffff
}

/// Virtual-node states N × L for one utterance, starting from zero history.
/// `mask` is used as given; coefficient noise must already be applied.
pub fn reservoir_states(
    sample: &FeatureSample,
    mask: &MaskSpec,
    params: &ReservoirParams,
    quant: &QuantizationModel,
) -> Result<Matrix> {
    if mask.n_nodes != params.n_nodes {
        return Err(Error::config(format!(
            "mask drives {} nodes, reservoir has {}",
            mask.n_nodes, params.n_nodes
        )));
    }
    let masked = mask_and_encode(&sample.features, mask)?;
    let plan = params.step_plan()?;
    let mut q = quant.stream(sample_stream(&sample.id));
    let (states, _) = integrate_sample(&masked, params, &mut q, ReservoirState::new(&plan))?;
    Ok(states)
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    mask: MaskSpec,
    params: ReservoirParams,
    quant: QuantizationModel,
    readout: ReadoutConfig,
    class_labels: Vec<String>,
}

impl Pipeline {
    /// Validates the configuration and applies mask-coefficient noise once.
    pub fn new(
        mask: MaskSpec,
        params: ReservoirParams,
        quant: QuantizationModel,
        readout: ReadoutConfig,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        params.step_plan()?;
        quant.validate()?;
        if !(readout.lambda >= 0.0 && readout.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be ≥ 0, got {}", readout.lambda)));
        }
        if class_labels.len() < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if mask.n_nodes != params.n_nodes {
            return Err(Error::config(format!(
                "mask drives {} nodes, reservoir has {}",
                mask.n_nodes, params.n_nodes
            )));
        }
        let mut mask = mask;
        mask.w_composite = quant.perturb_mask(&mask.w_composite);
        Ok(Self {
            mask,
            params,
            quant,
            readout,
            class_labels,
        })
    }

    /// The mask as applied, including any coefficient noise.
    pub fn mask(&self) -> &MaskSpec {
        &self.mask
    }

    pub fn params(&self) -> &ReservoirParams {
        &self.params
    }

    pub fn quant(&self) -> &QuantizationModel {
        &self.quant
    }

    pub fn readout_config(&self) -> &ReadoutConfig {
        &self.readout
    }

    pub fn states(&self, sample: &FeatureSample) -> Result<Matrix> {
        reservoir_states(sample, &self.mask, &self.params, &self.quant)
    }

    pub fn states_many(&self, samples: &[&FeatureSample]) -> Result<Vec<Matrix>> {
        samples.par_iter().map(|s| self.states(s)).collect()
    }

    /// Trains W^R on precomputed states, then applies readout-coefficient
    /// noise.
    pub fn fit(&self, samples: &[&FeatureSample], states: &[Matrix]) -> Result<TrainedModel> {
        let w = fit_readout(samples, states, self.class_labels.len(), &self.readout)?;
        Ok(TrainedModel {
            class_labels: self.class_labels.clone(),
            lambda: self.readout.lambda,
            decision: self.readout.decision,
            washout_frames: self.readout.washout_frames,
            params: self.params.clone(),
            quant: self.quant.clone(),
            mask: self.mask.clone(),
            w_readout: self.quant.perturb_readout(&w),
        })
    }

    pub fn fit_samples(&self, samples: &[&FeatureSample]) -> Result<TrainedModel> {
        let states = self.states_many(samples)?;
        self.fit(samples, &states)
    }
}
