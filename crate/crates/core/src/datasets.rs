//! Feature datasets: manifest/CSV ingestion, a seeded synthetic benchmark,
//! stratified four-way splits and two-fold cross-validation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pipeline::Pipeline;
use crate::readout::EvalReport;

/// One labeled utterance: M × L features, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub id: String,
    pub label: usize,
    pub features: Matrix,
}

impl FeatureSample {
    pub fn n_frames(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub classes: Vec<String>,
    pub samples: Vec<FeatureSample>,
}

impl Dataset {
    pub fn new(feature_dim: usize, classes: Vec<String>, samples: Vec<FeatureSample>) -> Result<Self> {
        let ds = Self {
            feature_dim,
            classes,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Dataset("feature_dim must be ≥ 1".into()));
        }
        let mut seen = BTreeMap::new();
        for s in &self.samples {
            if s.features.rows() != self.feature_dim {
                return Err(Error::Dataset(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.rows(),
                    self.feature_dim
                )));
            }
            if s.label >= self.classes.len() {
                return Err(Error::Dataset(format!("sample {} has unknown label index {}", s.id, s.label)));
            }
            if s.features.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("sample {} has non-finite features", s.id)));
            }
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::Dataset(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Looks up samples by id, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&FeatureSample>> {
        let index: BTreeMap<&str, &FeatureSample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("unknown sample id {id}")))
            })
            .collect()
    }

    /// All frames of the given samples side by side (M × ΣL).
    pub fn frames(&self, ids: &[String]) -> Result<Matrix> {
        let samples = self.select(ids)?;
        let parts: Vec<&Matrix> = samples.iter().map(|s| &s.features).collect();
        Matrix::hcat(&parts)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    feature_dim: usize,
    classes: Vec<String>,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: String,
    file: PathBuf,
}

/// Loads a manifest (`{feature_dim, classes, samples: [{id, label, file}]}`)
/// whose feature files are CSV, one frame per row. Relative file paths
/// resolve against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let labels: BTreeMap<&str, usize> = manifest
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let label = *labels.get(entry.label.as_str()).ok_or_else(|| {
            Error::Dataset(format!("sample {}: unknown label {:?}", entry.id, entry.label))
        })?;
        let path = base.join(&entry.file);
        let features = read_feature_csv(&path, manifest.feature_dim)
            .map_err(|e| Error::Dataset(format!("sample {}: {e}", entry.id)))?;
        samples.push(FeatureSample {
            id: entry.id.clone(),
            label,
            features,
        });
    }
    Dataset::new(manifest.feature_dim, manifest.classes, samples)
}

/// Reads a feature CSV into an M × L matrix.
pub fn read_feature_csv(path: &Path, feature_dim: usize) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut columns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(format!("bad number {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != feature_dim {
            return Err(parse_err(format!("row has {} values, expected {feature_dim}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        columns.push(row);
    }
    if columns.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no frames".into(),
        });
    }
    Matrix::from_columns(&columns)
}

/// Writes a dataset as `manifest.json` plus one CSV per sample under
/// `features/`. Values use the shortest representation that round-trips.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let rel = PathBuf::from("features").join(format!("{}.csv", s.id));
        let mut text = String::new();
        for frame in 0..s.n_frames() {
            let row: Vec<String> = s.features.column(frame).iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = dir.join(&rel);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: dataset.classes[s.label].clone(),
            file: rel,
        });
    }
    let manifest = Manifest {
        feature_dim: dataset.feature_dim,
        classes: dataset.classes.clone(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Configuration of the synthetic spoken-digit stand-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_features: usize,
    /// Dimension of the channel subspace the class templates live in.
    pub intrinsic_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub samples_per_class: usize,
    /// Standard deviation of additive per-channel Gaussian noise.
    pub noise: f64,
    /// Time-warp strength in [0, 0.9].
    pub warp: f64,
    /// Standard deviation of the per-sample gain around 1.
    pub amplitude_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_features: 16,
            intrinsic_dim: 4,
            min_frames: 8,
            max_frames: 12,
            samples_per_class: 40,
            noise: 0.35,
            warp: 0.4,
            amplitude_jitter: 0.15,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_features < 2 {
            return Err(Error::config("synthetic dataset needs ≥ 2 classes and ≥ 2 features"));
        }
        if self.intrinsic_dim == 0 || self.intrinsic_dim > self.n_features {
            return Err(Error::config("intrinsic_dim must be in 1..=n_features"));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::config("frame range must satisfy 1 ≤ min_frames ≤ max_frames"));
        }
        if !(0.0..=0.9).contains(&self.warp) || self.noise < 0.0 || self.amplitude_jitter < 0.0 {
            return Err(Error::config("warp must be in [0, 0.9]; noise and jitter must be ≥ 0"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Smooth latent trajectory: a sum of three random sinusoids per latent
/// dimension, evaluated at normalized time s ∈ [0, 1].
struct Template {
    // [latent][component] = (amplitude, frequency, phase)
    waves: Vec<[(f64, f64, f64); 3]>,
}

impl Template {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let waves = (0..dim)
            .map(|_| {
                std::array::from_fn(|_| {
                    (normal(rng) / 3f64.sqrt(), rng.random_range(0.5..2.0), rng.random_range(0.0..std::f64::consts::TAU))
                })
            })
            .collect();
        Self { waves }
    }

    fn at(&self, s: f64) -> Vec<f64> {
        self.waves
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * s + p).sin())
                    .sum()
            })
            .collect()
    }
}

/// Random M × d matrix with orthonormal columns.
fn orthonormal_basis(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..m).map(|_| normal(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Generates the synthetic benchmark. Each class owns a smooth latent
/// template embedded into the channels through a shared orthonormal basis;
/// samples add a random time warp, a gain jitter and isotropic noise.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = orthonormal_basis(&mut rng, cfg.n_features, cfg.intrinsic_dim);
    let templates: Vec<Template> = (0..cfg.n_classes)
        .map(|_| Template::random(&mut rng, cfg.intrinsic_dim))
        .collect();

    let mut samples = Vec::with_capacity(cfg.n_classes * cfg.samples_per_class);
    for (class, template) in templates.iter().enumerate() {
        for k in 0..cfg.samples_per_class {
            let len = rng.random_range(cfg.min_frames..=cfg.max_frames);
            let bend = cfg.warp * rng.random_range(-1.0..=1.0);
            let gain = 1.0 + cfg.amplitude_jitter * normal(&mut rng);
            let mut columns = Vec::with_capacity(len);
            for j in 0..len {
                let s = (j as f64 + 0.5) / len as f64;
                let warped = s + bend * (std::f64::consts::PI * s).sin() / std::f64::consts::PI;
                let latent = template.at(warped);
                let frame: Vec<f64> = (0..cfg.n_features)
                    .map(|ch| {
                        let clean: f64 = basis.iter().zip(&latent).map(|(b, z)| b[ch] * z).sum();
                        let eps = if cfg.noise > 0.0 { cfg.noise * normal(&mut rng) } else { 0.0 };
                        gain * clean + eps
                    })
                    .collect();
                columns.push(frame);
            }
            samples.push(FeatureSample {
                id: format!("c{class:02}_{k:04}"),
                label: class,
                features: Matrix::from_columns(&columns)?,
            });
        }
    }
    let classes = (0..cfg.n_classes).map(|c| format!("class{c}")).collect();
    Dataset::new(cfg.n_features, classes, samples)
}

/// Requested sizes of the four disjoint subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub fold_a: usize,
    pub fold_b: usize,
    pub test: usize,
    pub pca: usize,
}

impl SplitSizes {
    /// Scales the 500 / 500 / 1000 / 412 partition to `total` samples
    /// (largest remainder, so the sizes sum to `total`).
    pub fn proportional(total: usize) -> Self {
        let weights = [500.0, 500.0, 1000.0, 412.0];
        let sum: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w * total as f64 / sum).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())));
        let mut left = total - sizes.iter().sum::<usize>();
        for i in order {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        Self {
            fold_a: sizes[0],
            fold_b: sizes[1],
            test: sizes[2],
            pca: sizes[3],
        }
    }

    pub fn total(&self) -> usize {
        self.fold_a + self.fold_b + self.test + self.pca
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_a: Vec<String>,
    pub fold_b: Vec<String>,
    pub test: Vec<String>,
    pub pca: Vec<String>,
}

impl SplitPlan {
    /// Fold A and fold B together (training set for the final model).
    pub fn train_ids(&self) -> Vec<String> {
        self.fold_a.iter().chain(&self.fold_b).cloned().collect()
    }

    pub fn swapped_folds(&self) -> Self {
        Self {
            fold_a: self.fold_b.clone(),
            fold_b: self.fold_a.clone(),
            ..self.clone()
        }
    }
}

/// Stratified, seeded split into fold A, fold B, test and PCA subsets.
///
/// Within each class the samples are shuffled and given evenly spaced ranks
/// in [0, 1); all samples are then ordered by rank and cut into consecutive
/// chunks, so every chunk gets each class in proportion to its size.
pub fn make_split(dataset: &Dataset, sizes: SplitSizes, seed: u64) -> Result<SplitPlan> {
    if sizes.total() > dataset.len() {
        return Err(Error::Dataset(format!(
            "split sizes total {} but dataset has {} samples",
            sizes.total(),
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut class_order: Vec<usize> = (0..by_class.len()).collect();
    class_order.shuffle(&mut rng);
    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(dataset.len());
    for (tiebreak, &c) in class_order.iter().enumerate() {
        let members = &mut by_class[c];
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (j, &idx) in members.iter().enumerate() {
            ranked.push(((j as f64 + 0.5) / m, tiebreak, idx));
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut ids = ranked.into_iter().map(|(_, _, idx)| dataset.samples[idx].id.clone());
    let mut take = |n: usize| ids.by_ref().take(n).collect::<Vec<_>>();
    Ok(SplitPlan {
        fold_a: take(sizes.fold_a),
        fold_b: take(sizes.fold_b),
        test: take(sizes.test),
        pca: take(sizes.pca),
    })
}

/// Both directions of two-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossvalReport {
    /// Mean of the two validation WERs.
    pub wer: f64,
    /// Trained on fold A, validated on fold B.
    pub a_to_b: EvalReport,
    /// Trained on fold B, validated on fold A.
    pub b_to_a: EvalReport,
}

/// Trains on fold A and validates on fold B, then the reverse; reports both
/// evaluations and their mean WER.
pub fn crossval(dataset: &Dataset, plan: &SplitPlan, pipeline: &Pipeline) -> Result<CrossvalReport> {
    if plan.fold_a.is_empty() || plan.fold_b.is_empty() {
        return Err(Error::Dataset("cross-validation folds must be nonempty".into()));
    }
    let fold_a = dataset.select(&plan.fold_a)?;
    let fold_b = dataset.select(&plan.fold_b)?;
    let states_a = pipeline.states_many(&fold_a)?;
    let states_b = pipeline.states_many(&fold_b)?;

    let model_a = pipeline.fit(&fold_a, &states_a)?;
    let a_to_b = model_a.evaluate_states(&fold_b, &states_b)?;
    let model_b = pipeline.fit(&fold_b, &states_b)?;
    let b_to_a = model_b.evaluate_states(&fold_a, &states_a)?;
    Ok(CrossvalReport {
        wer: 0.5 * (a_to_b.wer + b_to_a.wer),
        a_to_b,
        b_to_a,
    })
}

/// Mean validation WER of two-fold cross-validation.
pub fn crossval_wer(dataset: &Dataset, plan: &SplitPlan, pipeline: &Pipeline) -> Result<f64> {
    crossval(dataset, plan, pipeline).map(|r| r.wer)
}
