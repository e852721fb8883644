//! Single-node time-delay reservoir computing.
//!
//! A feature sequence is masked onto N virtual nodes, driven through a
//! delayed-feedback nonlinear node integrated with Heun's method, and read out
//! by a ridge-regression layer. Hyperparameters can be tuned with a binary
//! genetic algorithm or an exhaustive grid, and fixed-point datapath noise
//! can be emulated at several points of the loop.

pub mod datasets;
pub mod error;
pub mod ga;
pub mod gridsearch;
pub mod linalg;
pub mod masking;
pub mod pipeline;
pub mod quantization;
pub mod readout;
pub mod reservoir;

pub use datasets::{
    crossval, crossval_wer, generate_synthetic, load_dataset, make_split, save_dataset, CrossvalReport, Dataset,
    FeatureSample, SplitPlan, SplitSizes, SyntheticConfig,
};
pub use error::{Error, Result};
pub use ga::{
    decode, encode, mutate, random_search, run_ga, tournament_select, uniform_crossover, Chromosome, GaConfig,
    GaTrace, Gene, GeneLayout, Hyperparam,
};
pub use gridsearch::{estimate_exhaustive_cost, run_grid, CostEstimate, GridAxis, GridSpec, LandscapeRecord};
pub use linalg::{matmul, ridge_solve, sym_eig, Matrix, Vector};
pub use masking::{build_composite_mask, generate_random_mask, mask_and_encode, pca_fit, MaskSpec, PcaFit, PcaFitReport};
pub use pipeline::Pipeline;
pub use quantization::{apply_quantization, InjectionPoint, InjectionPoints, QuantMode, QuantizationModel};
pub use readout::{build_teacher, train_readout, DecisionRule, EvalReport, ReadoutConfig, TrainedModel};
pub use reservoir::{heun_step, heun_step_delayed, integrate_sample, ReservoirParams, ReservoirState, StepPlan};
