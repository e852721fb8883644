//! Exhaustive sweeps over axis-aligned hyperparameter lattices, with
//! checkpointing and CSV landscape export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga::{GaConfig, GeneLayout, Hyperparam};
use crate::reservoir::ReservoirParams;

/// Speed-up of the GA over a full-resolution grid as stated for the
/// hardware study; reported next to the computed figure.
pub const CLAIMED_SPEEDUP: f64 = 5106.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub param: Hyperparam,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridAxis {
    /// Inclusive, evenly spaced values.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let span = self.max - self.min;
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.max } else { self.min + span * i as f64 / last })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedParam {
    pub param: Hyperparam,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
    #[serde(default)]
    pub fixed: Vec<FixedParam>,
}

impl Default for GridSpec {
    /// Φ₀ × β × τ at 21 × 20 × 27 = 11,340 points with ρ = 1.5.
    fn default() -> Self {
        Self {
            axes: vec![
                GridAxis {
                    param: Hyperparam::Phi0,
                    min: 0.0,
                    max: std::f64::consts::PI,
                    points: 21,
                },
                GridAxis {
                    param: Hyperparam::Beta,
                    min: -4.0,
                    max: 3.98,
                    points: 20,
                },
                GridAxis {
                    param: Hyperparam::Tau,
                    min: 7.8e-3,
                    max: 0.99,
                    points: 27,
                },
            ],
            fixed: vec![FixedParam {
                param: Hyperparam::Rho,
                value: 1.5,
            }],
        }
    }
}

impl GridSpec {
    pub fn cardinality(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::config("grid needs at least one axis"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.axes {
            if a.points == 0 {
                return Err(Error::config(format!("axis {} has no points", a.param.name())));
            }
            if !(a.min.is_finite() && a.max.is_finite()) {
                return Err(Error::config(format!("axis {} bounds must be finite", a.param.name())));
            }
            if !seen.insert(a.param.name()) {
                return Err(Error::config(format!("axis {} repeated", a.param.name())));
            }
        }
        for f in &self.fixed {
            if !seen.insert(f.param.name()) {
                return Err(Error::config(format!("{} is both swept and fixed", f.param.name())));
            }
        }
        Ok(())
    }

    /// Axis values of lattice point `index`, first axis varying slowest.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut out = vec![0.0; self.axes.len()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            let i = rem % axis.points;
            rem /= axis.points;
            *slot = axis.values()[i];
        }
        out
    }

    pub fn params_at(&self, index: usize, base: &ReservoirParams) -> ReservoirParams {
        let mut p = base.clone();
        for f in &self.fixed {
            f.param.set(&mut p, f.value);
        }
        for (axis, v) in self.axes.iter().zip(self.point(index)) {
            axis.param.set(&mut p, v);
        }
        p
    }

    pub fn header(&self) -> Vec<&'static str> {
        self.axes.iter().map(|a| a.param.name()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRecord {
    pub index: usize,
    pub values: Vec<f64>,
    pub wer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Progress file; an existing compatible one is resumed.
    pub checkpoint: Option<PathBuf>,
    /// Stop once this many points are complete (counting resumed ones).
    pub stop_after: Option<usize>,
    /// Store per-point wall time. Off by default so outputs are reproducible.
    pub record_wall_time: bool,
    /// Points evaluated between checkpoint writes.
    pub chunk_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Completed records in lattice order.
    pub records: Vec<LandscapeRecord>,
    pub complete: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    spec: GridSpec,
    total: usize,
    /// Completed-index bitmap, hex, bit i of byte i/8.
    completed: String,
    records: Vec<LandscapeRecord>,
}

fn bitmap_hex(done: &[bool]) -> String {
    let mut s = String::with_capacity(done.len().div_ceil(8) * 2);
    for chunk in done.chunks(8) {
        let byte = chunk.iter().enumerate().fold(0u8, |acc, (i, &d)| acc | (u8::from(d) << i));
        let _ = write!(s, "{byte:02x}");
    }
    s
}

fn parse_bitmap(hex: &str, total: usize) -> Result<Vec<bool>> {
    if hex.len() != total.div_ceil(8) * 2 {
        return Err(Error::config("checkpoint bitmap has wrong length"));
    }
    let mut out = Vec::with_capacity(total);
    for i in 0..hex.len() / 2 {
        let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::config("checkpoint bitmap is not hex"))?;
        for bit in 0..8 {
            if out.len() < total {
                out.push(byte >> bit & 1 == 1);
            }
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_checkpoint(path: &Path, spec: &GridSpec) -> Result<Option<(Vec<bool>, Vec<LandscapeRecord>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cp: Checkpoint = serde_json::from_str(&text)?;
    if cp.spec != *spec || cp.total != spec.cardinality() {
        return Err(Error::config(format!("checkpoint {} belongs to a different grid", path.display())));
    }
    let done = parse_bitmap(&cp.completed, cp.total)?;
    if done.iter().filter(|&&d| d).count() != cp.records.len() || cp.records.iter().any(|r| !done[r.index]) {
        return Err(Error::config(format!("checkpoint {} is inconsistent", path.display())));
    }
    Ok(Some((done, cp.records)))
}

/// Evaluates every lattice point once. Failed evaluations are recorded with
/// WER 1.0.
pub fn run_grid<F>(spec: &GridSpec, base: &ReservoirParams, options: &GridOptions, objective: F) -> Result<GridOutcome>
where
    F: Fn(&ReservoirParams) -> Result<f64> + Sync,
{
    spec.validate()?;
    let total = spec.cardinality();
    let (mut done, mut records) = match options.checkpoint.as_deref().map(|p| load_checkpoint(p, spec)) {
        Some(loaded) => loaded?.unwrap_or_else(|| (vec![false; total], Vec::new())),
        None => (vec![false; total], Vec::new()),
    };
    let limit = options.stop_after.unwrap_or(total).min(total);
    let chunk = options.chunk_size.max(1);
    let mut pending: Vec<usize> = (0..total).filter(|&i| !done[i]).collect();
    let room = limit.saturating_sub(records.len());
    pending.truncate(room);

    for batch in pending.chunks(chunk) {
        let fresh: Vec<LandscapeRecord> = batch
            .par_iter()
            .map(|&index| {
                let start = Instant::now();
                let wer = objective(&spec.params_at(index, base)).unwrap_or(1.0);
                LandscapeRecord {
                    index,
                    values: spec.point(index),
                    wer: if wer.is_finite() { wer } else { 1.0 },
                    wall_time_s: options.record_wall_time.then(|| start.elapsed().as_secs_f64()),
                }
            })
            .collect();
        for r in &fresh {
            done[r.index] = true;
        }
        records.extend(fresh);
        records.sort_by_key(|r| r.index);
        if let Some(path) = &options.checkpoint {
            let cp = Checkpoint {
                spec: spec.clone(),
                total,
                completed: bitmap_hex(&done),
                records: records.clone(),
            };
            write_atomic(path, &serde_json::to_string(&cp)?)?;
        }
    }
    Ok(GridOutcome {
        complete: records.len() == total,
        records,
    })
}

/// One row per record: axis values then `wer` (and `wall_time_s` when
/// recorded).
pub fn landscape_csv(spec: &GridSpec, records: &[LandscapeRecord]) -> String {
    let timed = records.iter().any(|r| r.wall_time_s.is_some());
    let mut out = spec.header().join(",");
    out.push_str(",wer");
    if timed {
        out.push_str(",wall_time_s");
    }
    out.push('\n');
    for r in records {
        for v in &r.values {
            let _ = write!(out, "{v:?},");
        }
        let _ = write!(out, "{:?}", r.wer);
        if timed {
            let _ = write!(out, ",{:?}", r.wall_time_s.unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

pub fn write_landscape(path: &Path, spec: &GridSpec, records: &[LandscapeRecord]) -> Result<()> {
    write_atomic(path, &landscape_csv(spec, records))
}

/// Reads a landscape CSV back; indices are recovered from row order.
pub fn read_landscape(path: &Path, spec: &GridSpec) -> Result<Vec<LandscapeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let n_axes = spec.axes.len();
    if header.len() < n_axes + 1 || header[..n_axes] != spec.header()[..] || header[n_axes] != "wer" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let timed = header.get(n_axes + 1) == Some(&"wall_time_s");
    lines
        .enumerate()
        .map(|(row, line)| {
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: row + 2,
                msg,
            };
            let cells = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("{c:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if cells.len() != header.len() {
                return Err(bad(format!("expected {} fields, found {}", header.len(), cells.len())));
            }
            Ok(LandscapeRecord {
                index: row,
                values: cells[..n_axes].to_vec(),
                wer: cells[n_axes],
                wall_time_s: timed.then(|| cells[n_axes + 1]),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneCount {
    pub name: String,
    /// Distinct in-range values after clamping.
    pub values: u64,
    /// Bit patterns, 2^bits.
    pub codes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub per_gene: Vec<GeneCount>,
    /// Grid points at the layout's resolution.
    pub evaluations: u128,
    /// Product of bit-pattern counts, 2^(chromosome length).
    pub code_space: u128,
    pub ga_budget: usize,
    pub ratio: f64,
    pub code_ratio: f64,
    pub claimed_ratio: f64,
}

/// Size of a full-resolution grid over `layout` compared with the GA budget.
pub fn estimate_exhaustive_cost(layout: &GeneLayout, ga: &GaConfig) -> CostEstimate {
    let per_gene: Vec<GeneCount> = layout
        .genes
        .iter()
        .map(|g| {
            let (lo, hi) = g.code_range();
            let distinct: BTreeSet<u64> = (lo..=hi)
                .map(|code| g.raw_value(code).clamp(g.min, g.max).to_bits())
                .collect();
            GeneCount {
                name: g.param.name().to_string(),
                values: distinct.len() as u64,
                codes: g.n_codes(),
            }
        })
        .collect();
    let evaluations: u128 = per_gene.iter().map(|g| u128::from(g.values)).product();
    let code_space: u128 = per_gene.iter().map(|g| u128::from(g.codes)).product();
    let budget = ga.evaluation_budget();
    CostEstimate {
        ratio: evaluations as f64 / budget as f64,
        code_ratio: code_space as f64 / budget as f64,
        per_gene,
        evaluations,
        code_space,
        ga_budget: budget,
        claimed_ratio: CLAIMED_SPEEDUP,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ga::Gene;

    fn base() -> ReservoirParams {
        ReservoirParams::new(10, 0.1, 0.5, 0.0, 1.0)
    }

    fn toy(points: &[usize]) -> GridSpec {
        let params = [Hyperparam::Phi0, Hyperparam::Beta, Hyperparam::Tau];
        GridSpec {
            axes: points
                .iter()
                .zip(params)
                .map(|(&n, param)| GridAxis {
                    param,
                    min: 0.1,
                    max: 0.9,
                    points: n,
                })
                .collect(),
            fixed: vec![],
        }
    }

    fn smooth(p: &ReservoirParams) -> Result<f64> {
        Ok(((p.phi0 - 0.4).powi(2) + (p.beta - 0.3).powi(2) + (p.tau - 0.5).powi(2)).min(1.0))
    }

    #[test]
    fn linspace_endpoints() {
        let a = GridAxis {
            param: Hyperparam::Tau,
            min: 0.0,
            max: 1.0,
            points: 5,
        };
        assert_eq!(a.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(GridAxis { points: 1, ..a }.values(), vec![0.0]);
    }

    #[test]
    fn default_spec_has_11340_points() {
        let spec = GridSpec::default();
        assert_eq!(spec.cardinality(), 11_340);
        let p = spec.params_at(0, &base());
        assert_eq!((p.phi0, p.beta, p.tau, p.rho), (0.0, -4.0, 7.8e-3, 1.5));
        let last = spec.params_at(11_339, &base());
        assert_eq!((last.phi0, last.beta, last.tau), (std::f64::consts::PI, 3.98, 0.99));
    }

    #[test]
    fn single_axis_in_order() {
        let out = run_grid(&toy(&[3]), &base(), &GridOptions::default(), smooth).unwrap();
        assert!(out.complete);
        let phis: Vec<f64> = out.records.iter().map(|r| r.values[0]).collect();
        assert_eq!(phis, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn row_major_and_complete() {
        let spec = toy(&[2, 3, 4]);
        let out = run_grid(&spec, &base(), &GridOptions::default(), smooth).unwrap();
        assert_eq!(out.records.len(), 24);
        assert_eq!(out.records[1].values, vec![0.1, 0.1, 0.3666666666666667]);
        assert_eq!(out.records[4].values, vec![0.1, 0.5, 0.1]);
        assert_eq!(out.records[12].values[0], 0.9);
        let tuples: BTreeSet<Vec<u64>> = out
            .records
            .iter()
            .map(|r| r.values.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(tuples.len(), 24);
    }

    #[test]
    fn failures_record_worst_loss() {
        let out = run_grid(&toy(&[2]), &base(), &GridOptions::default(), |p| {
            if p.phi0 > 0.5 {
                Err(Error::Diverged(p.describe()))
            } else {
                Ok(0.2)
            }
        })
        .unwrap();
        assert_eq!(out.records.iter().map(|r| r.wer).collect::<Vec<_>>(), vec![0.2, 1.0]);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let spec = toy(&[3, 4, 5]);
        let full = run_grid(&spec, &base(), &GridOptions::default(), smooth).unwrap();
        let options = GridOptions {
            checkpoint: Some(dir.path().join("grid.ckpt.json")),
            stop_after: Some(30),
            chunk_size: 7,
            ..GridOptions::default()
        };
        let partial = run_grid(&spec, &base(), &options, smooth).unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.records.len(), 30);
        let resumed = run_grid(
            &spec,
            &base(),
            &GridOptions {
                stop_after: None,
                ..options.clone()
            },
            smooth,
        )
        .unwrap();
        assert!(resumed.complete);
        assert_eq!(landscape_csv(&spec, &resumed.records), landscape_csv(&spec, &full.records));
        // A finished checkpoint is a no-op to resume.
        let again = run_grid(&spec, &base(), &options, |_| panic!("no evaluations expected")).unwrap();
        assert_eq!(again.records, resumed.records);
    }

    #[test]
    fn checkpoint_for_other_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let options = GridOptions {
            checkpoint: Some(dir.path().join("c.json")),
            ..GridOptions::default()
        };
        run_grid(&toy(&[2]), &base(), &options, smooth).unwrap();
        assert!(run_grid(&toy(&[3]), &base(), &options, smooth).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = toy(&[2, 2, 2]);
        let out = run_grid(&spec, &base(), &GridOptions::default(), smooth).unwrap();
        let path = dir.path().join("landscape.csv");
        write_landscape(&path, &spec, &out.records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("phi0,beta,tau,wer\n"));
        assert_eq!(read_landscape(&path, &spec).unwrap(), out.records);
    }

    #[test]
    fn bitmap_round_trip() {
        let done: Vec<bool> = (0..19).map(|i| i % 3 == 0).collect();
        assert_eq!(parse_bitmap(&bitmap_hex(&done), 19).unwrap(), done);
    }

    fn unclamped(bits: u32, frac_bits: u32) -> Gene {
        Gene {
            param: Hyperparam::Rho,
            bits,
            frac_bits,
            signed: false,
            min: 0.0,
            max: ((1u64 << bits) - 1) as f64 * (-(frac_bits as f64)).exp2(),
        }
    }

    #[test]
    fn cost_of_single_gene() {
        let layout = GeneLayout {
            genes: vec![unclamped(6, 3)],
        };
        let c = estimate_exhaustive_cost(&layout, &GaConfig::default());
        assert_eq!(c.evaluations, 64);
        assert_eq!(c.ratio, 0.08);
        let finer = GeneLayout {
            genes: vec![unclamped(7, 4)],
        };
        assert_eq!(estimate_exhaustive_cost(&finer, &GaConfig::default()).evaluations, 128);
    }

    #[test]
    fn cost_of_default_layout() {
        let c = estimate_exhaustive_cost(&GeneLayout::standard(), &GaConfig::default());
        // Counted independently: τ keeps all 128 codes distinct, β all 512,
        // Φ₀ collapses codes ≥ 202 onto π (203 values), ρ all 64.
        let counts: Vec<u64> = c.per_gene.iter().map(|g| g.values).collect();
        assert_eq!(counts, vec![128, 512, 203, 64]);
        assert_eq!(c.evaluations, 128 * 512 * 203 * 64);
        assert_eq!(c.code_space, 1 << 30);
        assert_eq!(c.ga_budget, 800);
        assert_eq!(c.claimed_ratio, 5106.0);
    }
}
