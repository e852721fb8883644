//! Binary genetic algorithm over reservoir hyperparameters.
//!
//! Each hyperparameter is a fixed-point gene: a bit string read MSB first,
//! either unsigned or two's complement (the leading bit weighs −2^k), scaled
//! by a power-of-two step and clamped to the gene's range.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::ReservoirParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparam {
    Tau,
    Beta,
    Phi0,
    Rho,
}

impl Hyperparam {
    pub fn name(self) -> &'static str {
        match self {
            Hyperparam::Tau => "tau",
            Hyperparam::Beta => "beta",
            Hyperparam::Phi0 => "phi0",
            Hyperparam::Rho => "rho",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tau" => Ok(Hyperparam::Tau),
            "beta" => Ok(Hyperparam::Beta),
            "phi0" => Ok(Hyperparam::Phi0),
            "rho" => Ok(Hyperparam::Rho),
            other => Err(Error::config(format!("unknown hyperparameter {other:?}"))),
        }
    }

    pub fn get(self, p: &ReservoirParams) -> f64 {
        match self {
            Hyperparam::Tau => p.tau,
            Hyperparam::Beta => p.beta,
            Hyperparam::Phi0 => p.phi0,
            Hyperparam::Rho => p.rho,
        }
    }

    pub fn set(self, p: &mut ReservoirParams, v: f64) {
        match self {
            Hyperparam::Tau => p.tau = v,
            Hyperparam::Beta => p.beta = v,
            Hyperparam::Phi0 => p.phi0 = v,
            Hyperparam::Rho => p.rho = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gene {
    pub param: Hyperparam,
    pub bits: u32,
    /// Resolution is 2^−frac_bits.
    pub frac_bits: u32,
    pub signed: bool,
    pub min: f64,
    pub max: f64,
}

impl Gene {
    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Integer code range `(lo, hi)` before scaling.
    pub fn code_range(&self) -> (i64, i64) {
        if self.signed {
            (-(1i64 << (self.bits - 1)), (1i64 << (self.bits - 1)) - 1)
        } else {
            (0, (1i64 << self.bits) - 1)
        }
    }

    /// Number of distinct bit patterns.
    pub fn n_codes(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn code_of(&self, bits: &[bool]) -> i64 {
        let raw = bits.iter().fold(0i64, |acc, &b| (acc << 1) | i64::from(b));
        if self.signed && bits[0] {
            raw - (1i64 << self.bits)
        } else {
            raw
        }
    }

    pub fn bits_of(&self, code: i64) -> Vec<bool> {
        let raw = code.rem_euclid(1i64 << self.bits);
        (0..self.bits).rev().map(|i| (raw >> i) & 1 == 1).collect()
    }

    /// Value of a code before clamping.
    pub fn raw_value(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    pub fn decode(&self, bits: &[bool]) -> f64 {
        self.raw_value(self.code_of(bits)).clamp(self.min, self.max)
    }

    /// Nearest representable code. The flag is set when the value is not
    /// reproduced exactly.
    pub fn encode(&self, value: f64) -> (Vec<bool>, bool) {
        let (lo, hi) = self.code_range();
        let k = value / self.step();
        let candidates = [k.floor(), k.ceil()].map(|c| (c.clamp(lo as f64, hi as f64)) as i64);
        let code = candidates
            .into_iter()
            .min_by(|&a, &b| {
                let da = (self.raw_value(a).clamp(self.min, self.max) - value).abs();
                let db = (self.raw_value(b).clamp(self.min, self.max) - value).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        let decoded = self.raw_value(code).clamp(self.min, self.max);
        (self.bits_of(code), decoded != value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 32 || (self.signed && self.bits < 2) {
            return Err(Error::config(format!("gene {}: bit width {} unsupported", self.param.name(), self.bits)));
        }
        if !(self.min <= self.max) {
            return Err(Error::config(format!("gene {}: min > max", self.param.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneLayout {
    pub genes: Vec<Gene>,
}

impl GeneLayout {
    /// Default search space: τ ∈ [7.8·10⁻³, 0.99] at 2⁻⁷, β ∈ [−4, 3.98] at
    /// 2⁻⁶, Φ₀ ∈ [0, π] at 2⁻⁶, ρ ∈ [−4, 3.875] at 2⁻³; 30 bits in total.
    pub fn standard() -> Self {
        Self {
            genes: vec![
                Gene {
                    param: Hyperparam::Tau,
                    bits: 7,
                    frac_bits: 7,
                    signed: false,
                    min: 7.8e-3,
                    max: 0.99,
                },
                Gene {
                    param: Hyperparam::Beta,
                    bits: 9,
                    frac_bits: 6,
                    signed: true,
                    min: -4.0,
                    max: 3.98,
                },
                Gene {
                    param: Hyperparam::Phi0,
                    bits: 8,
                    frac_bits: 6,
                    signed: false,
                    min: 0.0,
                    max: std::f64::consts::PI,
                },
                Gene {
                    param: Hyperparam::Rho,
                    bits: 6,
                    frac_bits: 3,
                    signed: true,
                    min: -4.0,
                    max: 3.875,
                },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.genes.iter().map(|g| g.bits as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.genes.is_empty() {
            return Err(Error::config("gene layout is empty"));
        }
        self.genes.iter().try_for_each(Gene::validate)
    }

    /// Decoded gene values, in layout order.
    pub fn decode_values(&self, bits: &[bool]) -> Result<Vec<f64>> {
        if bits.len() != self.len() {
            return Err(Error::config(format!(
                "chromosome has {} bits, layout needs {}",
                bits.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        Ok(self
            .genes
            .iter()
            .map(|g| {
                let width = g.bits as usize;
                let v = g.decode(&bits[offset..offset + width]);
                offset += width;
                v
            })
            .collect())
    }

    /// Concatenated bits for the given values plus an off-grid flag.
    pub fn encode_values(&self, values: &[f64]) -> Result<(Vec<bool>, bool)> {
        if values.len() != self.genes.len() {
            return Err(Error::config("one value per gene required"));
        }
        let mut bits = Vec::with_capacity(self.len());
        let mut snapped = false;
        for (g, &v) in self.genes.iter().zip(values) {
            let (b, s) = g.encode(v);
            bits.extend(b);
            snapped |= s;
        }
        Ok((bits, snapped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub bits: Vec<bool>,
    /// Loss once evaluated; lower is better.
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits, fitness: None }
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        Self::new((0..len).map(|_| rng.random_bool(0.5)).collect())
    }

    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !matches!(c, '.' | '|' | '<' | '>' | ' '))
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::config(format!("invalid chromosome character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    fn loss(&self) -> Result<f64> {
        self.fitness
            .ok_or_else(|| Error::UnevaluatedFitness(self.bit_string()))
    }
}

/// Applies the decoded genes to a copy of `base`.
pub fn decode(chromosome: &Chromosome, layout: &GeneLayout, base: &ReservoirParams) -> Result<ReservoirParams> {
    let values = layout.decode_values(&chromosome.bits)?;
    let mut p = base.clone();
    for (g, v) in layout.genes.iter().zip(values) {
        g.param.set(&mut p, v);
    }
    Ok(p)
}

/// Inverse of [`decode`]; the flag reports that some value was snapped to
/// the nearest representable one.
pub fn encode(params: &ReservoirParams, layout: &GeneLayout) -> (Chromosome, bool) {
    let values: Vec<f64> = layout.genes.iter().map(|g| g.param.get(params)).collect();
    let (bits, snapped) = layout.encode_values(&values).expect("one value per gene");
    (Chromosome::new(bits), snapped)
}

/// Binary tournament: two distinct pool members drawn uniformly, the lower
/// loss wins and the first drawn wins ties.
pub fn tournament_select<'a>(pool: &'a [Chromosome], rng: &mut impl Rng) -> Result<&'a Chromosome> {
    if pool.is_empty() {
        return Err(Error::config("tournament pool is empty"));
    }
    for c in pool {
        c.loss()?;
    }
    if pool.len() == 1 {
        return Ok(&pool[0]);
    }
    let i = rng.random_range(0..pool.len());
    let mut j = rng.random_range(0..pool.len() - 1);
    if j >= i {
        j += 1;
    }
    let (a, b) = (&pool[i], &pool[j]);
    Ok(if b.loss()? < a.loss()? { b } else { a })
}

/// Each bit comes from `a` with probability `p_a`, otherwise from `b`.
pub fn uniform_crossover(a: &Chromosome, b: &Chromosome, p_a: f64, rng: &mut impl Rng) -> Result<Chromosome> {
    if a.bits.len() != b.bits.len() {
        return Err(Error::config(format!(
            "crossover parents differ in length: {} vs {}",
            a.bits.len(),
            b.bits.len()
        )));
    }
    Ok(Chromosome::new(
        a.bits
            .iter()
            .zip(&b.bits)
            .map(|(&x, &y)| if rng.random_bool(p_a) { x } else { y })
            .collect(),
    ))
}

pub fn mutate(parent: &Chromosome, p_u: f64, rng: &mut impl Rng) -> Chromosome {
    Chromosome::new(parent.bits.iter().map(|&b| b ^ rng.random_bool(p_u)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveMode {
    /// Fittest of the previous archive and population, so the best loss
    /// never gets worse.
    #[default]
    Cumulative,
    /// Fittest of the previous population only.
    PreviousPopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub crossover_bit_prob: f64,
    pub bit_flip_prob: f64,
    pub n_pop: usize,
    pub n_archive: usize,
    pub n_generations: usize,
    pub archive: ArchiveMode,
    /// Loss assigned when the objective fails; `None` aborts the run.
    pub failure_loss: Option<f64>,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            crossover_rate: 0.88,
            mutation_rate: 0.12,
            crossover_bit_prob: 0.5,
            bit_flip_prob: 0.2,
            n_pop: 20,
            n_archive: 12,
            n_generations: 40,
            archive: ArchiveMode::Cumulative,
            failure_loss: Some(1.0),
            seed: 0,
        }
    }
}

impl GaConfig {
    /// Children per generation from crossover and from mutation.
    pub fn brood(&self) -> (usize, usize) {
        let n = self.n_pop as f64;
        ((self.crossover_rate * n).round() as usize, (self.mutation_rate * n).round() as usize)
    }

    pub fn evaluation_budget(&self) -> usize {
        self.n_generations * self.n_pop
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("crossover_bit_prob", self.crossover_bit_prob),
            ("bit_flip_prob", self.bit_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.n_pop < 2 || self.n_generations == 0 {
            return Err(Error::config("GA needs n_pop ≥ 2 and n_generations ≥ 1"));
        }
        let (c, m) = self.brood();
        if c + m != self.n_pop {
            return Err(Error::config(format!(
                "round(r_c·n_pop) + round(r_m·n_pop) = {c} + {m} must equal n_pop = {}",
                self.n_pop
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best loss among everything retained so far (archive after update).
    pub best_loss: f64,
    pub population_best: f64,
    pub mean_loss: f64,
    pub evaluations: usize,
    pub best: Chromosome,
    pub best_values: Vec<f64>,
    pub crossover_children: usize,
    pub mutation_children: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaTrace {
    pub config: GaConfig,
    pub layout: GeneLayout,
    pub generations: Vec<GenerationRecord>,
    pub archive_history: Vec<Vec<Chromosome>>,
    pub best: Chromosome,
    pub evaluations: usize,
}

impl GaTrace {
    pub fn best_loss(&self) -> f64 {
        self.best.fitness.unwrap_or(f64::INFINITY)
    }

    pub fn best_loss_curve(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.best_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("generation,best_loss,population_best,mean_loss,evaluations,best_chromosome_bits");
        for g in &self.layout.genes {
            out.push(',');
            out.push_str(g.param.name());
        }
        out.push('\n');
        for r in &self.generations {
            let _ = write!(
                out,
                "{},{:?},{:?},{:?},{},{}",
                r.generation,
                r.best_loss,
                r.population_best,
                r.mean_loss,
                r.evaluations,
                r.best.bit_string()
            );
            for v in &r.best_values {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn evaluate_all<F>(batch: &mut [Chromosome], objective: &F, failure_loss: Option<f64>) -> Result<()>
where
    F: Fn(&Chromosome) -> Result<f64> + Sync,
{
    let losses = batch
        .par_iter()
        .map(|c| match objective(c) {
            Ok(loss) if loss.is_finite() => Ok(loss),
            Ok(loss) => failure_loss.ok_or_else(|| Error::Objective(format!("non-finite loss {loss}"))),
            Err(e) => failure_loss.ok_or(e),
        })
        .collect::<Result<Vec<f64>>>()?;
    for (c, loss) in batch.iter_mut().zip(losses) {
        c.fitness = Some(loss);
    }
    Ok(())
}

/// Stable fittest-first selection of `n` members.
fn fittest(candidates: impl IntoIterator<Item = Chromosome>, n: usize) -> Vec<Chromosome> {
    let mut v: Vec<Chromosome> = candidates.into_iter().collect();
    v.sort_by(|a, b| a.fitness.unwrap().total_cmp(&b.fitness.unwrap()));
    v.truncate(n);
    v
}

/// Like [`fittest`] but keeps one copy per bit string.
fn fittest_distinct(candidates: impl IntoIterator<Item = Chromosome>, n: usize) -> Vec<Chromosome> {
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<Chromosome> = fittest(candidates, usize::MAX)
        .into_iter()
        .filter(|c| seen.insert(c.bits.clone()))
        .collect();
    fittest(unique, n)
}

/// Runs the GA, calling `objective` exactly `n_generations · n_pop` times.
///
/// Breeding draws from one seeded stream; evaluation within a generation
/// runs in parallel and is merged in population order, so results do not
/// depend on the number of threads.
pub fn run_ga<F>(config: &GaConfig, layout: &GeneLayout, objective: F) -> Result<GaTrace>
where
    F: Fn(&Chromosome) -> Result<f64> + Sync,
{
    config.validate()?;
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n_cross, n_mut) = config.brood();
    let mut population: Vec<Chromosome> = (0..config.n_pop).map(|_| Chromosome::random(layout.len(), &mut rng)).collect();
    let mut archive: Vec<Chromosome> = Vec::new();
    let mut generations = Vec::with_capacity(config.n_generations);
    let mut archive_history = Vec::with_capacity(config.n_generations);
    let mut evaluations = 0;

    for generation in 0..config.n_generations {
        let (mut made_cross, mut made_mut) = (0, 0);
        if generation > 0 {
            let pool: Vec<Chromosome> = population.iter().chain(&archive).cloned().collect();
            let mut children = Vec::with_capacity(config.n_pop);
            for _ in 0..n_cross {
                let a = tournament_select(&pool, &mut rng)?;
                let b = tournament_select(&pool, &mut rng)?;
                children.push(uniform_crossover(a, b, config.crossover_bit_prob, &mut rng)?);
            }
            for _ in 0..n_mut {
                let parent = tournament_select(&pool, &mut rng)?;
                children.push(mutate(parent, config.bit_flip_prob, &mut rng));
            }
            (made_cross, made_mut) = (n_cross, n_mut);
            population = children;
        }

        evaluate_all(&mut population, &objective, config.failure_loss)?;
        evaluations += population.len();

        archive = match config.archive {
            ArchiveMode::Cumulative => fittest_distinct(archive.into_iter().chain(population.iter().cloned()), config.n_archive),
            ArchiveMode::PreviousPopulation => fittest_distinct(population.iter().cloned(), config.n_archive),
        };
        let losses: Vec<f64> = population.iter().map(|c| c.fitness.unwrap()).collect();
        let pop_best = fittest(population.iter().cloned(), 1).remove(0);
        let best = archive.first().cloned().unwrap_or_else(|| pop_best.clone());
        generations.push(GenerationRecord {
            generation,
            best_loss: best.fitness.unwrap(),
            population_best: pop_best.fitness.unwrap(),
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            evaluations,
            best_values: layout.decode_values(&best.bits)?,
            best,
            crossover_children: made_cross,
            mutation_children: made_mut,
        });
        archive_history.push(archive.clone());
    }

    // With a strict archive the overall best may have dropped out of it.
    let best = generations
        .iter()
        .map(|g| &g.best)
        .min_by(|a, b| a.fitness.unwrap().total_cmp(&b.fitness.unwrap()))
        .cloned()
        .unwrap();
    Ok(GaTrace {
        config: config.clone(),
        layout: layout.clone(),
        generations,
        archive_history,
        best,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub best: Chromosome,
    pub losses: Vec<f64>,
}

/// Baseline: `n_evals` uniformly random chromosomes.
pub fn random_search<F>(
    layout: &GeneLayout,
    n_evals: usize,
    seed: u64,
    failure_loss: Option<f64>,
    objective: F,
) -> Result<RandomSearchResult>
where
    F: Fn(&Chromosome) -> Result<f64> + Sync,
{
    layout.validate()?;
    if n_evals == 0 {
        return Err(Error::config("random search needs at least one evaluation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch: Vec<Chromosome> = (0..n_evals).map(|_| Chromosome::random(layout.len(), &mut rng)).collect();
    evaluate_all(&mut batch, &objective, failure_loss)?;
    let losses = batch.iter().map(|c| c.fitness.unwrap()).collect();
    Ok(RandomSearchResult {
        best: fittest(batch, 1).remove(0),
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn example_gene() -> Gene {
        Gene {
            param: Hyperparam::Rho,
            bits: 5,
            frac_bits: 3,
            signed: true,
            min: -2.0,
            max: 1.875,
        }
    }

    fn bits(s: &str) -> Vec<bool> {
        Chromosome::parse(s).unwrap().bits
    }

    /// Sum of bit weights: −2^(w−1−f) for the sign bit, then 2^(w−2−f) … 2^−f.
    fn weighted_sum(bits: &[bool], frac: i32, signed: bool) -> f64 {
        let w = bits.len() as i32;
        bits.iter()
            .enumerate()
            .map(|(i, &b)| {
                let power = 2f64.powi(w - 1 - i as i32 - frac);
                let sign = if signed && i == 0 { -1.0 } else { 1.0 };
                if b {
                    sign * power
                } else {
                    0.0
                }
            })
            .sum()
    }

    #[test]
    fn worked_example() {
        let g = example_gene();
        assert_eq!(g.decode(&bits("11.000")), -1.0);
        assert_eq!(g.decode(&bits("00.110")), 0.75);
        assert_eq!(g.code_range(), (-16, 15));
        assert_eq!(g.raw_value(-16), -2.0);
        assert_eq!(g.raw_value(15), 1.875);
        let layout = GeneLayout {
            genes: vec![example_gene(), example_gene()],
        };
        assert_eq!(layout.decode_values(&bits("<11.000|00.110>")).unwrap(), vec![-1.0, 0.75]);
    }

    #[test]
    fn weight_sum_oracle_matches_all_codes() {
        for g in GeneLayout::standard().genes.iter().chain([&example_gene()]) {
            for raw in 0..g.n_codes() as i64 {
                let b = g.bits_of(raw);
                let expected = weighted_sum(&b, g.frac_bits as i32, g.signed).clamp(g.min, g.max);
                assert_eq!(g.decode(&b), expected, "{:?} {raw}", g.param);
            }
        }
    }

    #[test]
    fn table_layout_shape() {
        let layout = GeneLayout::standard();
        assert_eq!(layout.len(), 30);
        let steps: Vec<f64> = layout.genes.iter().map(Gene::step).collect();
        assert_eq!(steps, vec![2f64.powi(-7), 2f64.powi(-6), 2f64.powi(-6), 2f64.powi(-3)]);
        // Zero bits: 0 for signed genes, clamped to the minimum for τ.
        let zero = layout.decode_values(&[false; 30]).unwrap();
        assert_eq!(zero, vec![7.8e-3, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exhaustive_rho_gene() {
        let rho = GeneLayout::standard().genes[3].clone();
        let mut values: Vec<f64> = (0..64i64).map(|raw| rho.raw_value(rho.code_of(&rho.bits_of(raw)))).collect();
        values.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..64).map(|k| -4.0 + 0.125 * k as f64).collect();
        assert_eq!(values, expected);
    }

    #[test]
    fn encode_worked_example() {
        let g = example_gene();
        assert_eq!(g.encode(0.75), (bits("00110"), false));
        assert_eq!(g.encode(-1.0), (bits("11000"), false));
        let (b, snapped) = g.encode(0.8);
        assert!(snapped);
        assert_eq!(g.decode(&b), 0.75);
    }

    #[test]
    fn minimum_values_round_trip() {
        let layout = GeneLayout::standard();
        for g in &layout.genes {
            let (b, snapped) = g.encode(g.min);
            assert!(!snapped, "{:?}", g.param);
            assert_eq!(g.decode(&b), g.min);
        }
    }

    #[test]
    fn random_on_grid_parameters_round_trip() {
        let layout = GeneLayout::standard();
        let base = ReservoirParams::new(200, 0.1, 0.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = Chromosome::random(layout.len(), &mut rng);
            let p = decode(&c, &layout, &base).unwrap();
            let (again, snapped) = encode(&p, &layout);
            assert!(!snapped);
            assert_eq!(decode(&again, &layout, &base).unwrap(), p);
        }
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let base = ReservoirParams::new(10, 0.1, 0.0, 0.0, 0.0);
        assert!(decode(&Chromosome::new(vec![true; 29]), &GeneLayout::standard(), &base).is_err());
    }

    fn evaluated(bits: &str, loss: f64) -> Chromosome {
        Chromosome {
            bits: Chromosome::parse(bits).unwrap().bits,
            fitness: Some(loss),
        }
    }

    #[test]
    fn tournament_of_two_picks_lower_loss() {
        let pool = [evaluated("00", 0.9), evaluated("11", 0.1)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(tournament_select(&pool, &mut rng).unwrap().fitness, Some(0.1));
        }
    }

    #[test]
    fn tournament_ties_go_to_first_drawn() {
        let pool = [evaluated("00", 0.5), evaluated("01", 0.5), evaluated("10", 0.5)];
        let mut picks = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30_000 {
            let w = tournament_select(&pool, &mut rng).unwrap();
            picks[pool.iter().position(|c| c == w).unwrap()] += 1;
        }
        // First-drawn is uniform, so each member wins about a third.
        for p in picks {
            assert!((p as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02, "{picks:?}");
        }
    }

    #[test]
    fn tournament_selection_pressure() {
        let pool: Vec<Chromosome> = (0..10).map(|i| evaluated("0", i as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let best = (0..n)
            .filter(|_| tournament_select(&pool, &mut rng).unwrap().fitness == Some(0.0))
            .count();
        // Distinct pair draws: the best wins in 2/|pool| of tournaments.
        let freq = best as f64 / n as f64;
        assert!(freq > 0.1);
        assert!((freq - 0.2).abs() < 0.01, "{freq}");
    }

    #[test]
    fn tournament_rejects_unevaluated() {
        let pool = [evaluated("0", 0.1), Chromosome::new(vec![true])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(tournament_select(&pool, &mut rng), Err(Error::UnevaluatedFitness(_))));
    }

    #[test]
    fn crossover_statistics() {
        let a = Chromosome::new(vec![false; 4]);
        let b = Chromosome::new(vec![true; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let total: usize = (0..n)
            .map(|_| uniform_crossover(&a, &b, 0.5, &mut rng).unwrap().bits.iter().filter(|&&x| x).count())
            .sum();
        // Binomial(4, 0.5): mean 2, σ 1, so σ of the mean is 1/√n.
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 3.0 / (n as f64).sqrt(), "{mean}");
        assert_eq!(uniform_crossover(&a, &a, 0.5, &mut rng).unwrap().bits, a.bits);
        assert!(uniform_crossover(&a, &Chromosome::new(vec![true; 3]), 0.5, &mut rng).is_err());
    }

    #[test]
    fn mutation_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let parent = Chromosome::random(20, &mut rng);
        assert_eq!(mutate(&parent, 0.0, &mut rng).bits, parent.bits);
        let flipped: Vec<bool> = parent.bits.iter().map(|b| !b).collect();
        assert_eq!(mutate(&parent, 1.0, &mut rng).bits, flipped);
        let n = 100_000;
        let flips: usize = (0..n)
            .map(|_| {
                let child = mutate(&parent, 0.2, &mut rng);
                child.bits.iter().zip(&parent.bits).filter(|(a, b)| a != b).count()
            })
            .sum();
        // Binomial(20, 0.2): mean 4, σ² 3.2.
        let mean = flips as f64 / n as f64;
        assert!((mean - 4.0).abs() < 3.0 * (3.2 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn default_budget_and_brood() {
        let cfg = GaConfig::default();
        assert_eq!(cfg.brood(), (18, 2));
        let calls = AtomicUsize::new(0);
        let layout = GeneLayout::standard();
        let trace = run_ga(&cfg, &layout, |c| {
            calls.fetch_add(1, Ordering::Relaxed);
            Ok(c.bits.iter().filter(|&&b| b).count() as f64)
        })
        .unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 800);
        assert_eq!(trace.evaluations, 800);
        assert_eq!(trace.generations.len(), 40);
        for g in &trace.generations[1..] {
            assert_eq!((g.crossover_children, g.mutation_children), (18, 2));
        }
    }

    fn onemax(seed: u64) -> GaTrace {
        let layout = GeneLayout {
            genes: (0..3)
                .map(|_| Gene {
                    param: Hyperparam::Beta,
                    bits: 8,
                    frac_bits: 0,
                    signed: false,
                    min: 0.0,
                    max: 255.0,
                })
                .collect(),
        };
        let cfg = GaConfig { seed, ..GaConfig::default() };
        run_ga(&cfg, &layout, |c| Ok(c.bits.iter().filter(|&&b| b).count() as f64)).unwrap()
    }

    #[test]
    fn onemax_converges() {
        let solved = (0..10).filter(|&s| onemax(s).best_loss() == 0.0).count();
        assert!(solved >= 9, "{solved}/10");
    }

    #[test]
    fn best_loss_is_monotone_and_reproducible() {
        let a = onemax(5);
        assert!(a.best_loss_curve().windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a, onemax(5));
        assert_eq!(a.to_csv(), onemax(5).to_csv());
        assert_ne!(a.to_csv(), onemax(6).to_csv());
    }

    #[test]
    fn failures_use_declared_loss_or_abort() {
        let layout = GeneLayout::standard();
        let fail = |_: &Chromosome| -> Result<f64> { Err(Error::Objective("boom".into())) };
        let cfg = GaConfig {
            n_generations: 2,
            ..GaConfig::default()
        };
        assert_eq!(run_ga(&cfg, &layout, fail).unwrap().best_loss(), 1.0);
        let strict = GaConfig {
            failure_loss: None,
            ..cfg
        };
        assert!(run_ga(&strict, &layout, fail).is_err());
    }

    #[test]
    fn strict_archive_runs() {
        let layout = GeneLayout::standard();
        let cfg = GaConfig {
            archive: ArchiveMode::PreviousPopulation,
            n_generations: 5,
            seed: 9,
            ..GaConfig::default()
        };
        let trace = run_ga(&cfg, &layout, |c| Ok(c.bits.iter().filter(|&&b| b).count() as f64)).unwrap();
        assert_eq!(trace.archive_history.len(), 5);
        assert!(trace.archive_history.iter().all(|a| a.len() == 12));
        let overall = trace.generations.iter().map(|g| g.best_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(trace.best_loss(), overall);
    }

    #[test]
    fn config_validation() {
        let bad = GaConfig {
            crossover_rate: 0.5,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(GaConfig::default().validate().is_ok());
    }

    #[test]
    fn random_search_counts_and_best() {
        let layout = GeneLayout::standard();
        let r = random_search(&layout, 50, 1, Some(1.0), |c| Ok(c.bits.iter().filter(|&&b| b).count() as f64)).unwrap();
        assert_eq!(r.losses.len(), 50);
        assert_eq!(r.best.fitness.unwrap(), r.losses.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    proptest! {
        #[test]
        fn decoded_values_stay_in_range(raw in proptest::collection::vec(any::<bool>(), 30)) {
            let layout = GeneLayout::standard();
            for (g, v) in layout.genes.iter().zip(layout.decode_values(&raw).unwrap()) {
                prop_assert!(v >= g.min && v <= g.max);
            }
        }

        #[test]
        fn archive_best_never_worsens(seed in 0u64..1000) {
            let layout = GeneLayout::standard();
            let cfg = GaConfig { n_generations: 6, seed, ..GaConfig::default() };
            let trace = run_ga(&cfg, &layout, |c| {
                Ok(c.bits.iter().enumerate().filter(|(i, &b)| b == (i % 3 == 0)).count() as f64)
            }).unwrap();
            prop_assert!(trace.best_loss_curve().windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
