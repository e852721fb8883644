//! The CLI verbs. Each one resolves its inputs from an [`ExperimentConfig`],
//! writes its artifacts under `output_dir` next to a `config.json` echo, and
//! tags any failure with the stage it happened in.

use std::fmt::{self, Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tdrc_core::ga::{GaTrace, GenerationRecord};
use tdrc_core::gridsearch::{write_landscape, GridOptions};
use tdrc_core::quantization::QuantMode;
use tdrc_core::*;

use crate::config::{ExperimentConfig, StudyMode};

#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: Display> Stage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError {
            stage,
            message: e.to_string(),
        })
    }
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError {
        stage: "write",
        message: format!("{}: {e}", path.display()),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).stage("write")?;
    text.push('\n');
    write_text(path, &text)
}

/// Creates the output directory and writes the config echo.
fn prepare_output(cfg: &ExperimentConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError {
        stage: "write",
        message: format!("{}: {e}", cfg.output_dir.display()),
    })?;
    write_json(&out_path(cfg, "config.json"), cfg)
}

/// Dataset plus split, shared by every training command.
struct Experiment<'a> {
    cfg: &'a ExperimentConfig,
    dataset: Dataset,
}

impl<'a> Experiment<'a> {
    fn load(cfg: &'a ExperimentConfig) -> CliResult<Self> {
        let dataset = match &cfg.dataset.manifest {
            Some(path) => load_dataset(path),
            None => generate_synthetic(&cfg.dataset.synthetic),
        }
        .stage("dataset")?;
        Ok(Self { cfg, dataset })
    }

    fn split(&self, seed: u64) -> CliResult<SplitPlan> {
        let sizes = self
            .cfg
            .split
            .sizes
            .unwrap_or_else(|| SplitSizes::proportional(self.dataset.len()));
        make_split(&self.dataset, sizes, seed).stage("split")
    }

    /// Random mask, fused with a PCA autoencoder of `m_prime` components
    /// fitted on the PCA subset when given.
    fn mask(&self, plan: &SplitPlan, m_prime: Option<usize>, seed: u64) -> CliResult<(MaskSpec, Option<PcaFitReport>)> {
        let m = &self.cfg.mask;
        let w = generate_random_mask(m.n_nodes, self.dataset.feature_dim, m.connectivity, m.amplitude, seed)
            .stage("mask")?;
        match m_prime {
            None => Ok((MaskSpec::random_only(w).with_seed(seed), None)),
            Some(k) => {
                let frames = self.dataset.frames(&plan.pca).stage("pca")?;
                let fit = pca_fit(&frames, k).stage("pca")?;
                let mask = build_composite_mask(&w, &fit.w_compress, &fit.mean).stage("mask")?;
                Ok((mask.with_seed(seed), Some(fit.report)))
            }
        }
    }

    fn default_m_prime(&self) -> Option<usize> {
        self.cfg.mask.pca.then_some(self.cfg.mask.m_prime)
    }

    fn pipeline(&self, mask: MaskSpec, params: ReservoirParams, quant: QuantizationModel) -> CliResult<Pipeline> {
        Pipeline::new(mask, params, quant, self.cfg.readout.clone(), self.dataset.classes.clone()).stage("pipeline")
    }

    /// Trains on both folds and evaluates on the test split.
    fn train_and_test(&self, plan: &SplitPlan, pipe: &Pipeline) -> CliResult<(TrainedModel, EvalReport)> {
        let train = self.dataset.select(&plan.train_ids()).stage("train")?;
        let model = pipe.fit_samples(&train).stage("train")?;
        let test = self.dataset.select(&plan.test).stage("evaluate")?;
        let report = model.evaluate(&test).stage("evaluate")?;
        Ok((model, report))
    }
}

fn pca_summary(mask: &MaskSpec, report: &Option<PcaFitReport>) -> serde_json::Value {
    json!({
        "enabled": mask.pca_enabled(),
        "m_prime": mask.n_components,
        "retained_variance": report.as_ref().map(|r| r.retained_variance),
        "compression_ratio": mask.compression_ratio(),
    })
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let exp = Experiment::load(cfg)?;
    let plan = exp.split(cfg.split.seed)?;
    let (mask, pca) = exp.mask(&plan, exp.default_m_prime(), cfg.mask.seed)?;
    let params = cfg.reservoir_params();
    let pipe = exp.pipeline(mask, params.clone(), cfg.quantization.model.clone())?;
    let cv = crossval(&exp.dataset, &plan, &pipe).stage("crossval")?;
    let (model, test) = exp.train_and_test(&plan, &pipe)?;
    model.save_json(&out_path(cfg, "model.json")).stage("write")?;
    let plan_info = params.step_plan().stage("reservoir")?;
    let report = json!({
        "command": "train",
        "config": cfg,
        "params": params,
        "step": {"h": plan_info.h, "steps_per_node": plan_info.steps_per_node, "delay_steps": plan_info.delay_steps},
        "pca": pca_summary(pipe.mask(), &pca),
        "crossval_wer": cv.wer,
        "wer": test.wer,
        "test": test,
    });
    write_json(&out_path(cfg, "report.json"), &report)?;
    println!("train: crossval WER {:.4}, test WER {:.4} ({} of {})", cv.wer, test.wer, test.n_errors, test.n_samples);
    Ok(())
}

const CONVERGENCE_HEADER: &str = "generation,best_loss,population_best,mean_loss,evaluations\n";

fn convergence_csv(rows: &[(usize, f64, f64, f64, usize)]) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    for (g, best, pop, mean, evals) in rows {
        let _ = writeln!(out, "{g},{best:?},{pop:?},{mean:?},{evals}");
    }
    out
}

fn trace_rows(trace: &GaTrace) -> Vec<(usize, f64, f64, f64, usize)> {
    trace
        .generations
        .iter()
        .map(|r: &GenerationRecord| (r.generation, r.best_loss, r.population_best, r.mean_loss, r.evaluations))
        .collect()
}

/// Generation-wise arithmetic mean of several runs of equal length.
pub fn mean_convergence(traces: &[GaTrace]) -> Vec<(usize, f64, f64, f64, usize)> {
    let per_run: Vec<_> = traces.iter().map(trace_rows).collect();
    let n = per_run.len() as f64;
    (0..per_run[0].len())
        .map(|g| {
            let (mut best, mut pop, mut mean) = (0.0, 0.0, 0.0);
            for run in &per_run {
                best += run[g].1;
                pop += run[g].2;
                mean += run[g].3;
            }
            (per_run[0][g].0, best / n, pop / n, mean / n, per_run[0][g].4)
        })
        .collect()
}

/// Two-fold validation WER of the chromosome's dynamics.
fn ga_objective<'a>(
    exp: &'a Experiment<'a>,
    plan: &'a SplitPlan,
    mask: &'a MaskSpec,
    quant: &'a QuantizationModel,
) -> impl Fn(&Chromosome) -> Result<f64> + Sync + 'a {
    let base = exp.cfg.reservoir_params();
    move |c: &Chromosome| {
        let params = decode(c, &exp.cfg.ga.layout, &base)?;
        let pipe = Pipeline::new(
            mask.clone(),
            params,
            quant.clone(),
            exp.cfg.readout.clone(),
            exp.dataset.classes.clone(),
        )?;
        crossval_wer(&exp.dataset, plan, &pipe)
    }
}

pub fn cmd_optimize_ga(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let exp = Experiment::load(cfg)?;
    let plan = exp.split(cfg.split.seed)?;
    let (mask, _) = exp.mask(&plan, exp.default_m_prime(), cfg.mask.seed)?;
    let quant = cfg.quantization.model.clone();
    let objective = ga_objective(&exp, &plan, &mask, &quant);

    let mut traces = Vec::with_capacity(cfg.ga.n_runs);
    for run in 0..cfg.ga.n_runs {
        let ga = GaConfig {
            seed: cfg.ga.config.seed + run as u64,
            ..cfg.ga.config.clone()
        };
        let trace = run_ga(&ga, &cfg.ga.layout, &objective).stage("ga")?;
        write_text(&out_path(cfg, &format!("ga_run_{run}.csv")), &convergence_csv(&trace_rows(&trace)))?;
        trace.write_csv(&out_path(cfg, &format!("ga_run_{run}_trace.csv"))).stage("write")?;
        println!(
            "optimize-ga: run {run} best loss {:.4} after {} evaluations",
            trace.best_loss(),
            trace.evaluations
        );
        traces.push(trace);
    }
    write_text(&out_path(cfg, "ga_mean.csv"), &convergence_csv(&mean_convergence(&traces)))?;

    // Lowest loss wins, earliest run on ties.
    let best_run = (0..traces.len())
        .min_by(|&a, &b| traces[a].best_loss().total_cmp(&traces[b].best_loss()))
        .expect("at least one run");
    let best = &traces[best_run];
    let params = decode(&best.best, &cfg.ga.layout, &cfg.reservoir_params()).stage("ga")?;
    let pipe = exp.pipeline(mask.clone(), params.clone(), quant.clone())?;
    let (model, test) = exp.train_and_test(&plan, &pipe)?;
    model.save_json(&out_path(cfg, "best_model.json")).stage("write")?;
    let runs: Vec<_> = traces
        .iter()
        .map(|t| {
            json!({
                "seed": t.config.seed,
                "best_loss": t.best_loss(),
                "best_chromosome": t.best.bit_string(),
                "best_values": cfg.ga.layout.decode_values(&t.best.bits).ok(),
                "evaluations": t.evaluations,
            })
        })
        .collect();
    let report = json!({
        "command": "optimize-ga",
        "config": cfg,
        "runs": runs,
        "best_run": best_run,
        "best_params": params,
        "wer": test.wer,
        "test": test,
    });
    write_json(&out_path(cfg, "ga_report.json"), &report)?;
    println!("optimize-ga: best run {best_run}, test WER {:.4}", test.wer);
    Ok(())
}

pub const CHECKPOINT_FILE: &str = "grid.checkpoint.json";
pub const LANDSCAPE_FILE: &str = "landscape.csv";

pub fn cmd_grid(cfg: &ExperimentConfig, resume: bool, stop_after: Option<usize>) -> CliResult<()> {
    prepare_output(cfg)?;
    let exp = Experiment::load(cfg)?;
    let plan = exp.split(cfg.split.seed)?;
    let (mask, _) = exp.mask(&plan, exp.default_m_prime(), cfg.mask.seed)?;
    let checkpoint = out_path(cfg, CHECKPOINT_FILE);
    if !resume && checkpoint.exists() {
        fs::remove_file(&checkpoint).stage("grid")?;
    }
    let options = GridOptions {
        checkpoint: Some(checkpoint.clone()),
        stop_after,
        record_wall_time: cfg.grid.record_wall_time,
        chunk_size: cfg.grid.chunk_size,
    };
    let quant = cfg.quantization.model.clone();
    let outcome = run_grid(&cfg.grid.spec, &cfg.reservoir_params(), &options, |params| {
        let pipe = Pipeline::new(
            mask.clone(),
            params.clone(),
            quant.clone(),
            cfg.readout.clone(),
            exp.dataset.classes.clone(),
        )?;
        crossval_wer(&exp.dataset, &plan, &pipe)
    })
    .stage("grid")?;
    let total = cfg.grid.spec.cardinality();
    if outcome.complete {
        write_landscape(&out_path(cfg, LANDSCAPE_FILE), &cfg.grid.spec, &outcome.records).stage("write")?;
        if checkpoint.exists() {
            fs::remove_file(&checkpoint).stage("grid")?;
        }
        println!("grid: {total} points written to {}", out_path(cfg, LANDSCAPE_FILE).display());
    } else {
        println!(
            "grid: stopped after {} of {total} points; rerun with --resume to continue",
            outcome.records.len()
        );
    }
    Ok(())
}

pub fn cmd_pca_sweep(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let exp = Experiment::load(cfg)?;
    let plan = exp.split(cfg.split.seed)?;
    let m = exp.dataset.feature_dim;
    let m_primes: Vec<usize> = if cfg.pca_sweep.m_primes.is_empty() {
        (1..=m).collect()
    } else {
        cfg.pca_sweep.m_primes.clone()
    };
    if let Some(&bad) = m_primes.iter().find(|&&k| k == 0 || k > m) {
        return Err(CliError {
            stage: "pca",
            message: format!("M′ = {bad} outside 1..={m}"),
        });
    }
    let params = cfg.reservoir_params();
    let quant = cfg.quantization.model.clone();

    let (mask, _) = exp.mask(&plan, None, cfg.mask.seed)?;
    let (_, baseline) = exp.train_and_test(&plan, &exp.pipeline(mask, params.clone(), quant.clone())?)?;

    let mut csv = String::from("m_prime,retained_variance,compression_ratio,test_wer\n");
    let mut rows = Vec::new();
    for &k in &m_primes {
        let (mask, pca) = exp.mask(&plan, Some(k), cfg.mask.seed)?;
        let ratio = mask.compression_ratio();
        let retained = pca.map(|r| r.retained_variance).unwrap_or(1.0);
        let (_, test) = exp.train_and_test(&plan, &exp.pipeline(mask, params.clone(), quant.clone())?)?;
        let _ = writeln!(csv, "{k},{retained:?},{ratio:?},{:?}", test.wer);
        println!("pca-sweep: M′={k} retained {retained:.4} test WER {:.4}", test.wer);
        rows.push(json!({"m_prime": k, "retained_variance": retained, "compression_ratio": ratio, "wer": test.wer}));
    }
    write_text(&out_path(cfg, "pca_sweep.csv"), &csv)?;
    let report = json!({
        "command": "pca-sweep",
        "config": cfg,
        "params": params,
        "baseline_wer": baseline.wer,
        "rows": rows,
    });
    write_json(&out_path(cfg, "pca_sweep.json"), &report)?;
    println!("pca-sweep: no-PCA test WER {:.4}", baseline.wer);
    Ok(())
}

pub fn cmd_quant_study(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let exp = Experiment::load(cfg)?;
    let study = &cfg.quant_study;
    let mode = match cfg.quantization.model.mode {
        QuantMode::None => QuantMode::AdditiveNoise,
        m => m,
    };
    let mut csv = String::from("bits,level,seed,wer\n");
    let mut summary = String::from("bits,level,mean_wer\n");
    let mut rows = Vec::new();
    for &bits in &study.bits {
        let level = QuantizationModel::level_for_bits(bits).stage("quantization")?;
        let mut total = 0.0;
        for s in 0..study.n_seeds as u64 {
            let plan = exp.split(cfg.split.seed + s)?;
            let (mask, _) = exp.mask(&plan, exp.default_m_prime(), cfg.mask.seed + s)?;
            let quant = QuantizationModel {
                mode,
                level,
                seed: cfg.quantization.model.seed + s,
                ..cfg.quantization.model.clone()
            };
            let wer = match study.mode {
                StudyMode::FinalWer => {
                    let pipe = exp.pipeline(mask, cfg.reservoir_params(), quant)?;
                    exp.train_and_test(&plan, &pipe)?.1.wer
                }
                StudyMode::Ga => {
                    let ga = GaConfig {
                        seed: cfg.ga.config.seed + s,
                        ..cfg.ga.config.clone()
                    };
                    let trace = run_ga(&ga, &cfg.ga.layout, ga_objective(&exp, &plan, &mask, &quant)).stage("ga")?;
                    trace
                        .write_csv(&out_path(cfg, &format!("quant_{bits}bit_seed{s}_trace.csv")))
                        .stage("write")?;
                    trace.best_loss()
                }
            };
            let _ = writeln!(csv, "{bits},{level:?},{s},{wer:?}");
            rows.push(json!({"bits": bits, "level": level, "seed": s, "wer": wer}));
            total += wer;
        }
        let mean = total / study.n_seeds as f64;
        let _ = writeln!(summary, "{bits},{level:?},{mean:?}");
        println!("quant-study: {bits} bit (level {level:e}) mean WER {mean:.4}");
    }
    write_text(&out_path(cfg, "quant_study.csv"), &csv)?;
    write_text(&out_path(cfg, "quant_summary.csv"), &summary)?;
    write_json(
        &out_path(cfg, "quant_study.json"),
        &json!({"command": "quant-study", "config": cfg, "mode": mode, "rows": rows}),
    )?;
    Ok(())
}

pub fn cmd_gen_synthetic(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let ds = generate_synthetic(&cfg.dataset.synthetic).stage("dataset")?;
    let manifest = save_dataset(&ds, &out_path(cfg, "dataset")).stage("write")?;
    write_json(&out_path(cfg, "dataset/generator.json"), &cfg.dataset.synthetic)?;
    println!("gen-synthetic: {} samples written to {}", ds.len(), manifest.display());
    Ok(())
}

pub fn cmd_estimate_gs_cost(cfg: &ExperimentConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let est = estimate_exhaustive_cost(&cfg.ga.layout, &cfg.ga.config);
    write_json(&out_path(cfg, "gs_cost.json"), &json!({"command": "estimate-gs-cost", "config": cfg, "estimate": est}))?;
    for g in &est.per_gene {
        println!("estimate-gs-cost: {} has {} distinct values ({} codes)", g.name, g.values, g.codes);
    }
    println!(
        "estimate-gs-cost: full grid {} evaluations vs GA budget {} (ratio {:.4e}); code space ratio {:.4e}; published figure {}",
        est.evaluations, est.ga_budget, est.ratio, est.code_ratio, est.claimed_ratio
    );
    Ok(())
}
