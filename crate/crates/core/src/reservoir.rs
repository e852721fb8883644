//! Delayed-feedback reservoir: `τ·ẋ(t) = −x(t) + f(x(t−τ_D) + ρ·u(t))` with
//! `f(s) = β·sin²(s + Φ₀)`, driven by the sample-and-hold masked input and
//! integrated with Heun's predictor-corrector scheme on a fixed grid whose
//! step divides both the node spacing θ and the delay τ_D.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quantization::{InjectionPoint, Quantizer};

/// Delay time kept constant across experiments.
pub const DEFAULT_TAU_D: f64 = 6.0;

/// Upper bound on how far the substep search may refine the grid.
const MAX_REFINEMENT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    pub tau: f64,
    pub tau_d: f64,
    pub beta: f64,
    pub phi0: f64,
    pub rho: f64,
    pub n_nodes: usize,
    /// Virtual-node separation; `tau_d / n_nodes` unless overridden.
    pub theta: f64,
    /// Integration substeps per node interval. `None` picks
    /// `ceil(max(1, 4θ/τ))`, refined until τ_D is a whole number of steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

/// Integration grid derived from [`ReservoirParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub h: f64,
    pub steps_per_node: usize,
    pub delay_steps: usize,
}

impl ReservoirParams {
    /// Parameters with `τ_D = 6` and `θ = τ_D / N`.
    pub fn new(n_nodes: usize, tau: f64, beta: f64, phi0: f64, rho: f64) -> Self {
        Self {
            tau,
            tau_d: DEFAULT_TAU_D,
            beta,
            phi0,
            rho,
            n_nodes,
            theta: DEFAULT_TAU_D / n_nodes.max(1) as f64,
            substeps: None,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = Some(substeps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("tau", self.tau), ("tau_d", self.tau_d), ("theta", self.theta)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta", self.beta), ("phi0", self.phi0), ("rho", self.rho)] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.n_nodes == 0 {
            return Err(Error::config("n_nodes must be ≥ 1"));
        }
        if self.substeps == Some(0) {
            return Err(Error::config("substeps must be ≥ 1"));
        }
        Ok(())
    }

    /// Chooses the integration step `h = θ/k`, increasing `k` from its
    /// initial value until `τ_D/h` is an integer.
    pub fn step_plan(&self) -> Result<StepPlan> {
        self.validate()?;
        let k0 = self
            .substeps
            .unwrap_or_else(|| (4.0 * self.theta / self.tau).max(1.0).ceil() as usize);
        for k in k0..=k0 * MAX_REFINEMENT {
            let h = self.theta / k as f64;
            let ratio = self.tau_d / h;
            let whole = ratio.round();
            if whole >= 1.0 && (ratio - whole).abs() <= 1e-9 * ratio {
                return Ok(StepPlan {
                    h,
                    steps_per_node: k,
                    delay_steps: whole as usize,
                });
            }
            if self.substeps.is_some() {
                break;
            }
        }
        Err(Error::config(format!(
            "no integration step divides both theta={} and tau_d={}",
            self.theta, self.tau_d
        )))
    }

    #[inline]
    pub fn nonlinearity(&self, s: f64) -> f64 {
        let v = (s + self.phi0).sin();
        self.beta * v * v
    }

    pub fn describe(&self) -> String {
        format!(
            "tau={}, tau_d={}, beta={}, phi0={}, rho={}, N={}, theta={}",
            self.tau, self.tau_d, self.beta, self.phi0, self.rho, self.n_nodes, self.theta
        )
    }
}

/// Delay-line history: the `τ_D/h` most recent values of x, oldest at
/// `head`, plus the current value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub buffer: Vec<f64>,
    pub head: usize,
    pub x: f64,
    /// Elapsed integration steps; time is `steps · h`.
    pub steps: u64,
}

impl ReservoirState {
    /// Zero history.
    pub fn new(plan: &StepPlan) -> Self {
        Self::constant(plan, 0.0)
    }

    pub fn constant(plan: &StepPlan, x0: f64) -> Self {
        Self {
            buffer: vec![x0; plan.delay_steps],
            head: 0,
            x: x0,
            steps: 0,
        }
    }

    pub fn time(&self, plan: &StepPlan) -> f64 {
        self.steps as f64 * plan.h
    }
}

/// One Heun step of the reservoir equation with the delayed argument held
/// fixed across predictor and corrector, so the nonlinearity is evaluated
/// once.
pub fn heun_step(x: f64, x_delayed: f64, u: f64, params: &ReservoirParams, h: f64) -> f64 {
    let forcing = params.nonlinearity(x_delayed + params.rho * u);
    heun_with_forcing(x, forcing, forcing, params.tau, h)
}

/// Heun step reading the delay line at both ends of the step, x(t − τ_D) for
/// the predictor and x(t + h − τ_D) for the corrector. This is the step used
/// by [`integrate_sample`]; it keeps second order in h when the delayed
/// signal varies within a step.
pub fn heun_step_delayed(
    x: f64,
    delayed_now: f64,
    delayed_next: f64,
    u: f64,
    params: &ReservoirParams,
    h: f64,
) -> f64 {
    let drive = params.rho * u;
    heun_with_forcing(
        x,
        params.nonlinearity(delayed_now + drive),
        params.nonlinearity(delayed_next + drive),
        params.tau,
        h,
    )
}

#[inline]
fn heun_with_forcing(x: f64, forcing_now: f64, forcing_next: f64, tau: f64, h: f64) -> f64 {
    let g0 = (forcing_now - x) / tau;
    let predicted = x + h * g0;
    let g1 = (forcing_next - predicted) / tau;
    x + 0.5 * h * (g0 + g1)
}

/// Integrates the reservoir over one masked utterance (N × L).
///
/// Node value `masked[(i, n)]` is held for node interval i of frame n, and
/// `states[(i, n)]` is x sampled at the end of that interval.
pub fn integrate_sample(
    masked: &Matrix,
    params: &ReservoirParams,
    quant: &mut Quantizer<'_>,
    initial: ReservoirState,
) -> Result<(Matrix, ReservoirState)> {
    let plan = params.step_plan()?;
    if masked.rows() != params.n_nodes {
        return Err(Error::DimensionMismatch {
            op: "integrate_sample",
            left: (params.n_nodes, masked.cols()),
            right: masked.shape(),
        });
    }
    if initial.buffer.len() != plan.delay_steps || initial.head >= plan.delay_steps {
        return Err(Error::config(format!(
            "reservoir state holds {} delay samples, parameters need {}",
            initial.buffer.len(),
            plan.delay_steps
        )));
    }

    let ReservoirState {
        mut buffer,
        mut head,
        mut x,
        mut steps,
    } = initial;
    let delay_len = buffer.len();
    let (h, tau) = (plan.h, params.tau);
    let noisy = quant.model().affects_dynamics();
    let (n_nodes, n_frames) = masked.shape();
    let mut states = Matrix::zeros(n_nodes, n_frames);

    for frame in 0..n_frames {
        for node in 0..n_nodes {
            let drive = params.rho * masked[(node, frame)];
            let mut carried: Option<f64> = None;
            for _ in 0..plan.steps_per_node {
                let delayed = buffer[head];
                // With a one-step delay line the far end is the current x.
                let delayed_next = match head + 1 {
                    _ if delay_len == 1 => x,
                    n if n == delay_len => buffer[0],
                    n => buffer[n],
                };
                let next = if noisy {
                    let d0 = quant.apply(delayed, InjectionPoint::Delay);
                    let d1 = quant.apply(delayed_next, InjectionPoint::Delay);
                    let f0 = quant.apply(params.nonlinearity(d0 + drive), InjectionPoint::Nonlinearity);
                    let f1 = quant.apply(params.nonlinearity(d1 + drive), InjectionPoint::Nonlinearity);
                    quant.apply(heun_with_forcing(x, f0, f1, tau, h), InjectionPoint::State)
                } else {
                    // Within a node interval the drive is constant, so this
                    // step's far-end forcing is the next step's near end.
                    let f0 = carried.take().unwrap_or_else(|| params.nonlinearity(delayed + drive));
                    let f1 = params.nonlinearity(delayed_next + drive);
                    if delay_len > 1 {
                        carried = Some(f1);
                    }
                    heun_with_forcing(x, f0, f1, tau, h)
                };
                buffer[head] = x;
                head += 1;
                if head == delay_len {
                    head = 0;
                }
                x = next;
            }
            steps += plan.steps_per_node as u64;
            if !x.is_finite() {
                return Err(Error::Diverged(params.describe()));
            }
            states[(node, frame)] = x;
        }
    }
    Ok((
        states,
        ReservoirState {
            buffer,
            head,
            x,
            steps,
        },
    ))
}

const DUMP_MAGIC: &[u8; 4] = b"TDRC";
const DUMP_VERSION: u32 = 1;

/// Writes a state matrix (N × L) as `"TDRC"`, version, N, L (u32 LE each),
/// then L frames of N little-endian f64 values.
pub fn write_state_dump(path: &Path, states: &Matrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (n, l) = states.shape();
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::config("state matrix too large for dump header"));
    let mut bytes = Vec::with_capacity(16 + 8 * n * l);
    bytes.extend_from_slice(DUMP_MAGIC);
    bytes.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    bytes.extend_from_slice(&to_u32(n)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(l)?.to_le_bytes());
    for frame in 0..l {
        for node in 0..n {
            bytes.extend_from_slice(&states[(node, frame)].to_le_bytes());
        }
    }
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_state_dump(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(bad("not a TDRC state dump"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != DUMP_VERSION {
        return Err(bad("unsupported state dump version"));
    }
    let (n, l) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 8 * n * l {
        return Err(bad("state dump length does not match header"));
    }
    let mut m = Matrix::new(n, l, vec![0.0; n * l]).map_err(|_| bad("empty state dump"))?;
    for (k, chunk) in bytes[16..].chunks_exact(8).enumerate() {
        m[(k % n, k / n)] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(m)
}
