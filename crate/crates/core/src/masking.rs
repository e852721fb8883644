//! Input masking: the random virtual-node mask, the PCA compression pair and
//! their fused composite, plus the per-frame encoding that produces the
//! reservoir drive.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, sym_eig, Matrix, Vector};

/// Default mask amplitude: nonzero weights are ±0.4.
pub const DEFAULT_AMPLITUDE: f64 = 0.4;
/// Default fraction of nonzero mask entries.
pub const DEFAULT_CONNECTIVITY: f64 = 0.30;

/// A fixed input mask, optionally fused with a PCA autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub n_nodes: usize,
    pub n_features: usize,
    pub n_components: Option<usize>,
    pub seed: Option<u64>,
    /// Random mask W^I, N × M.
    pub w_input: Matrix,
    /// PCA compression W_c, M′ × M.
    pub w_compress: Option<Matrix>,
    /// Feature mean removed before compression.
    pub pca_mean: Option<Vector>,
    /// Composite W^I·W_cᵀ·W_c (or W^I itself without PCA), N × M.
    pub w_composite: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFitReport {
    /// All M eigenvalues of the covariance matrix, descending.
    pub eigenvalues: Vector,
    pub retained_variance: f64,
    pub n_fit_samples: usize,
}

impl PcaFitReport {
    /// Fraction of total variance carried by the leading `m` components.
    pub fn retained_for(&self, m: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        if total == 0.0 {
            return 1.0;
        }
        let kept: f64 = self.eigenvalues.iter().take(m).map(|v| v.max(0.0)).sum();
        kept / total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub w_compress: Matrix,
    pub mean: Vector,
    pub report: PcaFitReport,
}

/// Draws an N × M mask with exactly `round(connectivity·N·M)` entries of
/// `±amplitude` at uniformly chosen positions, all others zero.
pub fn generate_random_mask(
    n_nodes: usize,
    n_features: usize,
    connectivity: f64,
    amplitude: f64,
    seed: u64,
) -> Result<Matrix> {
    if !(connectivity > 0.0 && connectivity <= 1.0) {
        return Err(Error::config(format!(
            "mask connectivity must lie in (0, 1], got {connectivity}"
        )));
    }
    if n_features == 0 || n_nodes < n_features {
        return Err(Error::config(format!(
            "mask needs n_nodes ≥ n_features ≥ 1, got N={n_nodes}, M={n_features}"
        )));
    }
    let total = n_nodes * n_features;
    let nonzero = ((connectivity * total as f64).round() as usize).clamp(1, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; total];
    let mut positions = index::sample(&mut rng, total, nonzero).into_vec();
    positions.sort_unstable();
    for pos in positions {
        data[pos] = if rng.random_bool(0.5) { amplitude } else { -amplitude };
    }
    Matrix::new(n_nodes, n_features, data)
}

/// Fits a PCA compression matrix on `samples` (M × P₀, one feature vector per
/// column). Rows of the result are the leading unit eigenvectors of the
/// mean-centered covariance `X_c·X_cᵀ/(P₀−1)`.
pub fn pca_fit(samples: &Matrix, n_components: usize) -> Result<PcaFit> {
    let (m, p0) = samples.shape();
    if p0 <= m {
        return Err(Error::InsufficientSamples {
            samples: p0,
            features: m,
        });
    }
    if n_components == 0 || n_components > m {
        return Err(Error::config(format!(
            "number of principal components must be in 1..={m}, got {n_components}"
        )));
    }
    let mean: Vector = (0..m)
        .map(|r| samples.row(r).iter().sum::<f64>() / p0 as f64)
        .collect();
    let mut centered = samples.clone();
    for (r, &mu) in mean.iter().enumerate() {
        for v in centered.row_mut(r) {
            *v -= mu;
        }
    }
    let cov = centered.gram().scale(1.0 / (p0 as f64 - 1.0));
    let (eigenvalues, vectors) = sym_eig(&cov)?;

    let mut w_compress = Matrix::zeros(n_components, m);
    for k in 0..n_components {
        w_compress.row_mut(k).copy_from_slice(&vectors.column(k));
    }
    let mut report = PcaFitReport {
        eigenvalues,
        retained_variance: 0.0,
        n_fit_samples: p0,
    };
    report.retained_variance = report.retained_for(n_components);
    Ok(PcaFit {
        w_compress,
        mean,
        report,
    })
}

/// Fuses the random mask with the PCA autoencoder: `W^I·W_cᵀ·W_c`.
pub fn build_composite_mask(w_input: &Matrix, w_compress: &Matrix, mean: &[f64]) -> Result<MaskSpec> {
    let (n, m) = w_input.shape();
    if w_compress.cols() != m || mean.len() != m || w_compress.rows() > m {
        return Err(Error::DimensionMismatch {
            op: "build_composite_mask",
            left: w_input.shape(),
            right: w_compress.shape(),
        });
    }
    let expand = matmul(w_input, &w_compress.transpose())?;
    let w_composite = matmul(&expand, w_compress)?;
    Ok(MaskSpec {
        n_nodes: n,
        n_features: m,
        n_components: Some(w_compress.rows()),
        seed: None,
        w_input: w_input.clone(),
        w_compress: Some(w_compress.clone()),
        pca_mean: Some(mean.to_vec()),
        w_composite,
    })
}

impl MaskSpec {
    /// Plain random masking without compression.
    pub fn random_only(w_input: Matrix) -> Self {
        let (n, m) = w_input.shape();
        Self {
            n_nodes: n,
            n_features: m,
            n_components: None,
            seed: None,
            w_composite: w_input.clone(),
            w_input,
            w_compress: None,
            pca_mean: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn pca_enabled(&self) -> bool {
        self.w_compress.is_some()
    }

    /// Ratio of raw to transmitted input dimensions, M / M′.
    pub fn compression_ratio(&self) -> f64 {
        self.n_features as f64 / self.n_components.unwrap_or(self.n_features) as f64
    }

    fn centered(&self, features: &Matrix) -> Result<Matrix> {
        if features.rows() != self.n_features {
            return Err(Error::DimensionMismatch {
                op: "mask_and_encode",
                left: self.w_composite.shape(),
                right: features.shape(),
            });
        }
        let mut out = features.clone();
        if let Some(mean) = &self.pca_mean {
            for (r, &mu) in mean.iter().enumerate() {
                for v in out.row_mut(r) {
                    *v -= mu;
                }
            }
        }
        Ok(out)
    }

    /// First half of the split pipeline: `W_c·(c − mean)`, M′ × L.
    pub fn host_compress(&self, features: &Matrix) -> Result<Matrix> {
        let centered = self.centered(features)?;
        match &self.w_compress {
            Some(wc) => matmul(wc, &centered),
            None => Ok(centered),
        }
    }

    /// Second half of the split pipeline: `W^I·W_cᵀ·z`, N × L.
    pub fn device_expand(&self, compressed: &Matrix) -> Result<Matrix> {
        match &self.w_compress {
            Some(wc) => matmul(&matmul(&self.w_input, &wc.transpose())?, compressed),
            None => matmul(&self.w_input, compressed),
        }
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

/// Masks every frame of a feature matrix (M × L), giving the N × L drive
/// whose column n holds the N sample-and-hold values for frame n.
pub fn mask_and_encode(features: &Matrix, mask: &MaskSpec) -> Result<Matrix> {
    let centered = mask.centered(features)?;
    matmul(&mask.w_composite, &centered)
}
