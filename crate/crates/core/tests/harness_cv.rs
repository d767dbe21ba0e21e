mod common;

use samrl::harness::*;
use samrl::ppo::Variant;

#[test]
fn cross_validation_structure_and_determinism() {
    let (mut cfg, prep) = common::micro();
    cfg.variant = Variant::ArtsBaseline;
    let (agg, runs) = run_cross_validation(&prep, &cfg).unwrap();
    assert_eq!(runs.len(), 5);
    assert!(runs.iter().all(|r| r.log.is_none() && r.leak_free));
    assert!(agg.traits.iter().all(|c| c.values.len() == 5 && c.sd >= 0.0));
    assert_eq!(agg.traits.len(), 11);
    assert_eq!(agg.prompts.len(), 8);
    let (again, _) = run_cross_validation(&prep, &cfg).unwrap();
    assert_eq!(agg, again);
}

#[test]
fn grid_shares_splits_and_pins_fixed_weights() {
    let (mut cfg, prep) = common::micro();
    cfg.folds = 3;
    let prep3 = PreparedExperiment::new(prep.schema.clone(), prep.vocab.clone(), prep.corpus.iter().cloned().map(|mut r| { r.fold = None; r }).collect(), &cfg).unwrap();
    let grid = run_ablation_grid(&prep3, &cfg, &Variant::grid(), 1).unwrap();
    assert_eq!(grid.reports.len(), 9);
    assert!(grid.reports.iter().all(|r| r.split_hash == grid.split_hash));
    assert_eq!(grid.reports.iter().filter(|r| r.primary).count(), 1);
    let half = grid.variants.iter().position(|v| *v == Variant::Fixed { w_q: 0.5, w_m: 0.5 }).unwrap();
    assert!(grid.reports[half].weight_trajectories.iter().flatten().all(|w| *w == [0.5, 0.5]));
    assert!(grid.runs.iter().flatten().all(|r| r.leak_free));
    let threaded = run_ablation_grid(&prep3, &cfg, &Variant::grid(), 3).unwrap();
    assert_eq!(
        serde_json::to_string(&grid.reports).unwrap(),
        serde_json::to_string(&threaded.reports).unwrap()
    );
}
