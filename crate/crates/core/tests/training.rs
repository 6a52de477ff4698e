//! Short training runs on a one-day synthetic profile.

use thermal_pinn::pde::{solve_pde, PdeParams, SolverOptions};
use thermal_pinn::pinn::{predict_matching, train, CollocationSize, SchemeConfig, TrainConfig};
use thermal_pinn::timeseries::{synthesize_profile, OperatingSeries, SyntheticProfileConfig};

fn day() -> OperatingSeries {
    synthesize_profile(1, 300.0, &SyntheticProfileConfig::default(), 2).unwrap()
}

fn small(iterations: usize) -> TrainConfig {
    TrainConfig {
        widths: vec![2, 16, 16, 3],
        collocation: CollocationSize::Count(500),
        n_initial: 16,
        iterations,
        data_batch: 128,
        collocation_batch: 128,
        log_every: 50,
        seed: 4,
        ..TrainConfig::desk()
    }
}

#[test]
fn vanilla_reduces_the_loss() {
    let out = train(&day(), &PdeParams::default(), &SchemeConfig::vanilla(), &small(200)).unwrap();
    let first = out.history.first().unwrap().total;
    assert!(out.final_loss.total < first, "{first} -> {}", out.final_loss.total);
}

#[test]
fn every_scheme_trains_deterministically() {
    for scheme in [SchemeConfig::vanilla(), SchemeConfig::self_adaptive(), SchemeConfig::rba(), SchemeConfig::DataOnly] {
        let a = train(&day(), &PdeParams::default(), &scheme, &small(60)).unwrap();
        let b = train(&day(), &PdeParams::default(), &scheme, &small(60)).unwrap();
        assert_eq!(a.history, b.history, "{}", scheme.name());
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.scheme, b.scheme);
    }
}

#[test]
fn data_only_ignores_the_residual_term() {
    let out = train(&day(), &PdeParams::default(), &SchemeConfig::DataOnly, &small(30)).unwrap();
    assert!(out.history.iter().all(|h| h.terms[3] == 0.0));
    assert!(out.final_loss.mse[3] > 0.0, "residual MSE is still reported");
}

#[test]
fn prediction_covers_the_oracle_grid() {
    let s = day();
    let oracle = solve_pde(&s, &PdeParams::default(), &SolverOptions { nx: 21, substeps: 1, initial: None }).unwrap();
    let out = train(&s, &PdeParams::default(), &SchemeConfig::rba(), &small(20)).unwrap();
    let pred = predict_matching(&out.model, &oracle, &out.scaling).unwrap();
    assert!(pred.same_grid(&oracle));
    assert!(pred.values.iter().all(|v| v.is_finite()));
}
