use tdrc_core::gridsearch::{landscape_csv, GridOptions};
use tdrc_core::*;

fn small() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_classes: 4,
        samples_per_class: 10,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn pipeline(ds: &Dataset, params: ReservoirParams, quant: QuantizationModel) -> Pipeline {
    let w = generate_random_mask(params.n_nodes, ds.feature_dim, 0.3, 0.4, 2).unwrap();
    Pipeline::new(MaskSpec::random_only(w), params, quant, ReadoutConfig::default(), ds.classes.clone()).unwrap()
}

#[test]
fn dataset_on_disk_gives_identical_results() {
    let ds = small();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back, ds);

    let plan = make_split(&ds, SplitSizes::proportional(ds.len()), 1).unwrap();
    let params = ReservoirParams::new(40, 0.1, 0.9, 0.4, 1.2);
    let a = crossval(&ds, &plan, &pipeline(&ds, params.clone(), QuantizationModel::none())).unwrap();
    let b = crossval(&back, &plan, &pipeline(&back, params, QuantizationModel::none())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saved_model_reproduces_noisy_evaluation() {
    let ds = small();
    let plan = make_split(&ds, SplitSizes::proportional(ds.len()), 4).unwrap();
    let p = pipeline(&ds, ReservoirParams::new(40, 0.2, -1.0, 1.0, 1.5), QuantizationModel::additive(2f64.powi(-8), 3));
    let model = p.fit_samples(&ds.select(&plan.train_ids()).unwrap()).unwrap();
    let test = ds.select(&plan.test).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    model.save_json(file.path()).unwrap();
    let loaded = TrainedModel::load_json(file.path()).unwrap();
    assert_eq!(loaded.evaluate(&test).unwrap(), model.evaluate(&test).unwrap());
}

#[test]
fn ga_and_grid_drive_the_real_objective() {
    let ds = small();
    let plan = make_split(&ds, SplitSizes::proportional(ds.len()), 2).unwrap();
    let base = ReservoirParams::new(20, 0.1, 0.5, 0.5, 1.5);
    let layout = GeneLayout::standard();
    let objective = |c: &Chromosome| {
        let params = decode(c, &layout, &base)?;
        crossval_wer(&ds, &plan, &pipeline(&ds, params, QuantizationModel::none()))
    };
    let cfg = GaConfig {
        n_generations: 3,
        ..GaConfig::default()
    };
    let trace = run_ga(&cfg, &layout, objective).unwrap();
    assert_eq!(trace.evaluations, 60);
    assert!(trace.best_loss() <= trace.generations[0].population_best);
    assert_eq!(trace, run_ga(&cfg, &layout, objective).unwrap());

    let spec = GridSpec {
        axes: vec![
            GridAxis {
                param: Hyperparam::Beta,
                min: -1.0,
                max: 1.0,
                points: 3,
            },
            GridAxis {
                param: Hyperparam::Tau,
                min: 0.05,
                max: 0.5,
                points: 2,
            },
        ],
        fixed: Vec::new(),
    };
    let grid_objective = |p: &ReservoirParams| crossval_wer(&ds, &plan, &pipeline(&ds, p.clone(), QuantizationModel::none()));
    let out = run_grid(&spec, &base, &GridOptions::default(), grid_objective).unwrap();
    assert!(out.complete);
    assert_eq!(out.records.len(), 6);
    // β = 0 silences the node, so all states are zero and nothing separates
    // the classes.
    let flat = &out.records[2];
    assert_eq!(flat.values, vec![0.0, 0.05]);
    assert!(flat.wer >= 0.5, "{}", flat.wer);
    let text = landscape_csv(&spec, &out.records);
    assert_eq!(text.lines().next(), Some("beta,tau,wer"));
    assert_eq!(text.lines().count(), 7);
}
