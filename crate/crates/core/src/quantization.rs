//! Emulation of fixed-point datapath noise.
//!
//! Quantization is modeled explicitly on top of full-precision arithmetic,
//! either as additive uniform noise of a given level or as rounding to a
//! step. Noise draws come from seeded ChaCha streams so every run is
//! reproducible and independent of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Noise level matching the 16-bit FPGA datapath, 2⁻¹³.
pub const FPGA_NOISE_LEVEL: f64 = 1.0 / 8192.0;

/// Stream ids reserved for one-off coefficient perturbations.
const MASK_STREAM: u64 = 0x8000_0000_0000_0001;
const READOUT_STREAM: u64 = 0x8000_0000_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    #[default]
    None,
    AdditiveNoise,
    RoundToStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionPoint {
    /// The dynamical variable x(t).
    State,
    /// The delayed term x(t − τ_D).
    Delay,
    /// The output of the nonlinearity f.
    Nonlinearity,
    /// Input mask coefficients, perturbed once before the experiment.
    Mask,
    /// Readout coefficients, perturbed once right after training.
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionPoints {
    pub state: bool,
    pub delay: bool,
    pub nonlinearity: bool,
    pub mask: bool,
    pub readout: bool,
}

impl Default for InjectionPoints {
    fn default() -> Self {
        Self::all()
    }
}

impl InjectionPoints {
    pub fn all() -> Self {
        Self {
            state: true,
            delay: true,
            nonlinearity: true,
            mask: true,
            readout: true,
        }
    }

    pub fn none() -> Self {
        Self {
            state: false,
            delay: false,
            nonlinearity: false,
            mask: false,
            readout: false,
        }
    }

    pub fn contains(&self, point: InjectionPoint) -> bool {
        match point {
            InjectionPoint::State => self.state,
            InjectionPoint::Delay => self.delay,
            InjectionPoint::Nonlinearity => self.nonlinearity,
            InjectionPoint::Mask => self.mask,
            InjectionPoint::Readout => self.readout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizationModel {
    pub mode: QuantMode,
    pub level: f64,
    pub seed: u64,
    pub injection_points: InjectionPoints,
}

/// Additive noise of level 2⁻¹³ at all five injection points.
impl Default for QuantizationModel {
    fn default() -> Self {
        Self::additive(FPGA_NOISE_LEVEL, 0)
    }
}

impl QuantizationModel {
    pub fn none() -> Self {
        Self {
            mode: QuantMode::None,
            level: FPGA_NOISE_LEVEL,
            seed: 0,
            injection_points: InjectionPoints::all(),
        }
    }

    /// Additive noise at every injection point.
    pub fn additive(level: f64, seed: u64) -> Self {
        Self {
            mode: QuantMode::AdditiveNoise,
            level,
            seed,
            injection_points: InjectionPoints::all(),
        }
    }

    pub fn round_to_step(level: f64) -> Self {
        Self {
            mode: QuantMode::RoundToStep,
            level,
            seed: 0,
            injection_points: InjectionPoints::all(),
        }
    }

    /// Noise level for a datapath of `bits` bits: 2^−(bits−3), so 16 bits
    /// maps to 2⁻¹³.
    pub fn level_for_bits(bits: u32) -> Result<f64> {
        if bits < 2 {
            return Err(Error::config(format!("bit depth must be ≥ 2, got {bits}")));
        }
        Ok((-(f64::from(bits) - 3.0)).exp2())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != QuantMode::None && !(self.level > 0.0 && self.level.is_finite()) {
            return Err(Error::config(format!(
                "quantization level must be positive, got {}",
                self.level
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, point: InjectionPoint) -> bool {
        self.mode != QuantMode::None && self.injection_points.contains(point)
    }

    /// Whether any per-step injection (state, delay, nonlinearity) is on.
    pub fn affects_dynamics(&self) -> bool {
        self.is_active(InjectionPoint::State)
            || self.is_active(InjectionPoint::Delay)
            || self.is_active(InjectionPoint::Nonlinearity)
    }

    /// Seeded noise source for one independent stream (e.g. one utterance).
    pub fn stream(&self, stream: u64) -> Quantizer<'_> {
        let rng = (self.mode == QuantMode::AdditiveNoise).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(stream);
            rng
        });
        Quantizer { model: self, rng }
    }

    /// Applies the mask-coefficient perturbation to every entry of `m`.
    pub fn perturb_mask(&self, m: &Matrix) -> Matrix {
        self.perturb_matrix(m, InjectionPoint::Mask, MASK_STREAM)
    }

    /// Applies the readout-coefficient perturbation to every entry of `m`.
    pub fn perturb_readout(&self, m: &Matrix) -> Matrix {
        self.perturb_matrix(m, InjectionPoint::Readout, READOUT_STREAM)
    }

    fn perturb_matrix(&self, m: &Matrix, point: InjectionPoint, stream: u64) -> Matrix {
        if !self.is_active(point) {
            return m.clone();
        }
        let mut q = self.stream(stream);
        let mut out = m.clone();
        for v in out.data_mut() {
            *v = q.apply(*v, point);
        }
        out
    }
}

/// One seeded noise stream bound to a [`QuantizationModel`].
#[derive(Debug, Clone)]
pub struct Quantizer<'a> {
    model: &'a QuantizationModel,
    rng: Option<ChaCha8Rng>,
}

impl Quantizer<'_> {
    pub fn model(&self) -> &QuantizationModel {
        self.model
    }

    pub fn apply(&mut self, value: f64, point: InjectionPoint) -> f64 {
        if !self.model.is_active(point) {
            return value;
        }
        match &mut self.rng {
            Some(rng) => apply_quantization(value, self.model, point, rng),
            None => round_to_step(value, self.model.level),
        }
    }
}

/// Quantizes a single value at `point`, drawing noise from `rng` when the
/// mode is additive. Points not enabled in the model pass through.
pub fn apply_quantization(value: f64, quant: &QuantizationModel, point: InjectionPoint, rng: &mut impl Rng) -> f64 {
    if !quant.is_active(point) {
        return value;
    }
    match quant.mode {
        QuantMode::None => value,
        QuantMode::AdditiveNoise => value + quant.level * (rng.random::<f64>() - 0.5),
        QuantMode::RoundToStep => round_to_step(value, quant.level),
    }
}

/// Nearest multiple of `step`, ties away from zero.
pub fn round_to_step(value: f64, step: f64) -> f64 {
    (value / step).round() * step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_emulates_the_fpga_datapath() {
        let q = QuantizationModel::default();
        assert_eq!(q.mode, QuantMode::AdditiveNoise);
        assert_eq!(q.level, 2f64.powi(-13));
        assert_eq!(q.injection_points, InjectionPoints::all());
        let parsed: QuantizationModel = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(parsed, QuantizationModel::additive(FPGA_NOISE_LEVEL, 4));
    }

    #[test]
    fn none_mode_is_identity() {
        let q = QuantizationModel::none();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_quantization(0.123456, &q, InjectionPoint::State, &mut rng), 0.123456);
        assert_eq!(q.stream(1).apply(0.123456, InjectionPoint::Delay), 0.123456);
    }

    #[test]
    fn rounding_oracle() {
        let step = 0.125;
        assert_eq!(round_to_step(0.30, step), 0.25);
        assert_eq!(round_to_step(0.3125, step), 0.375);
        assert_eq!(round_to_step(-0.3125, step), -0.375);
        let q = QuantizationModel::round_to_step(step);
        assert_eq!(q.stream(0).apply(0.30, InjectionPoint::Nonlinearity), 0.25);
    }

    #[test]
    fn additive_noise_is_bounded_and_centered() {
        let q = QuantizationModel::additive(FPGA_NOISE_LEVEL, 77);
        let mut s = q.stream(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = s.apply(0.5, InjectionPoint::State) - 0.5;
            assert!(d.abs() <= FPGA_NOISE_LEVEL / 2.0);
            sum += d;
        }
        // Uniform on ±level/2 has σ = level/√12; the mean of 10⁶ draws has
        // σ/1000, so 6σ is a safe bound.
        let sigma_mean = FPGA_NOISE_LEVEL / 12f64.sqrt() / 1000.0;
        assert!((sum / n as f64).abs() < 6.0 * sigma_mean);
    }

    #[test]
    fn disabled_points_pass_through() {
        let mut q = QuantizationModel::additive(0.1, 1);
        q.injection_points = InjectionPoints {
            delay: false,
            ..InjectionPoints::all()
        };
        assert_eq!(q.stream(0).apply(1.0, InjectionPoint::Delay), 1.0);
        assert_ne!(q.stream(0).apply(1.0, InjectionPoint::State), 1.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let q = QuantizationModel::additive(0.01, 5);
        let draw = |stream| {
            let mut s = q.stream(stream);
            (0..8).map(|_| s.apply(0.0, InjectionPoint::State)).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn bits_to_level_mapping() {
        assert_eq!(QuantizationModel::level_for_bits(16).unwrap(), FPGA_NOISE_LEVEL);
        assert!((FPGA_NOISE_LEVEL - 1.2e-4).abs() < 0.05e-4);
        for b in 3..24 {
            let ratio = QuantizationModel::level_for_bits(b).unwrap() / QuantizationModel::level_for_bits(b + 1).unwrap();
            assert_eq!(ratio, 2.0);
        }
        assert!(QuantizationModel::level_for_bits(1).is_err());
    }

    #[test]
    fn coefficient_perturbation_respects_flags() {
        let m = Matrix::identity(3);
        let q = QuantizationModel::additive(0.01, 9);
        let noisy = q.perturb_mask(&m);
        assert!(noisy.max_abs_diff(&m) <= 0.005);
        assert_ne!(noisy, m);
        assert_eq!(q.perturb_mask(&m), noisy);
        assert_ne!(q.perturb_readout(&m), noisy);
        assert_eq!(QuantizationModel::none().perturb_readout(&m), m);
    }

    #[test]
    fn validate_rejects_nonpositive_level() {
        let mut q = QuantizationModel::additive(0.0, 0);
        assert!(q.validate().is_err());
        q.mode = QuantMode::None;
        assert!(q.validate().is_ok());
    }
}
