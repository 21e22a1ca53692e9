mod common;

use clustdiag::data::{build_design, ModelSpec};
use clustdiag::diagnostics::{leverage, partial_leverage};
use clustdiag::jackknife::jackknife;
use clustdiag::ols::{fit_ols, DEFAULT_LEVEL};
use clustdiag::oracles::{
    cluster_estimates, oracle_influence_identity, oracle_leverage, oracle_partial_leverage, ExampleDesign,
    ExampleKind,
};
use common::dataset;
use proptest::prelude::*;

/// Cluster sizes and per-observation values of a single regressor and `y`.
fn clustered(kind: ExampleKind) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    prop::collection::vec(2usize..9, 3..9).prop_flat_map(move |sizes| {
        let x = sizes
            .iter()
            .enumerate()
            .map(|(c, &s)| match kind {
                ExampleKind::TreatmentConst | ExampleKind::TreatmentFe => {
                    // both arms present in every cluster
                    prop::collection::vec(prop::bool::ANY, s - 2)
                        .prop_map(|b| {
                            let mut v = vec![0.0, 1.0];
                            v.extend(b.into_iter().map(|t| f64::from(u8::from(t))));
                            v
                        })
                        .boxed()
                }
                ExampleKind::ClusterLevelTreatment => Just(vec![f64::from(u8::from(c % 2 == 0)); s]).boxed(),
                _ => prop::collection::vec(-5.0f64..5.0, s).boxed(),
            })
            .collect::<Vec<_>>();
        let y = sizes.iter().map(|&s| prop::collection::vec(-3.0f64..3.0, s)).collect::<Vec<_>>();
        (x, y)
    })
}

fn flat(v: &[Vec<f64>]) -> Vec<f64> {
    v.concat()
}

fn labels(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().enumerate().flat_map(|(c, vals)| vec![c as f64; vals.len()]).collect()
}

fn spec_for(kind: ExampleKind) -> ModelSpec {
    match kind {
        ExampleKind::MeanOnly => ModelSpec::new("x", "y", "c").constant(false),
        ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe => ModelSpec::new("x", "y", "c").absorb("c"),
        _ => ModelSpec::new("x", "y", "c"),
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + y.abs()))
}

fn run(kind: ExampleKind, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<(), TestCaseError> {
    let x = if kind == ExampleKind::MeanOnly { x.iter().map(|c| vec![1.0; c.len()]).collect() } else { x };
    let ex = match ExampleDesign::from_clusters(kind, &x) {
        Ok(e) => e,
        Err(_) => return Ok(()),
    };
    let (lo, lp) = match (oracle_leverage(&ex), oracle_partial_leverage(&ex)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Ok(()),
    };
    let data = dataset(&[("c", labels(&x)), ("x", flat(&x)), ("y", flat(&y))]);
    let d = match build_design(&data, &spec_for(kind)) {
        Ok(d) => d,
        Err(_) => return Ok(()),
    };
    let m = fit_ols(&d).unwrap();
    prop_assert!(close(&leverage(&d, &m), &lo));
    prop_assert!(close(&partial_leverage(&d, d.j).unwrap(), &lp));
    if matches!(kind, ExampleKind::MeanOnly | ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe) {
        if let Ok(bg) = cluster_estimates(kind, &x, &y) {
            let jk = jackknife(&d, &m, false, DEFAULT_LEVEL).unwrap();
            if !jk.any_zeroed() {
                let r = oracle_influence_identity(&ex, &bg, &jk.beta_del_j(d.j)).unwrap();
                prop_assert!(r.iter().all(|v| v.abs() < 1e-10), "{r:?}");
                // leverage-weighted average of the cluster estimates
                let avg: f64 = lo.iter().zip(&bg).map(|(l, b)| l * b).sum();
                prop_assert!((avg - m.beta_j()).abs() < 1e-10);
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mean_only((x, y) in clustered(ExampleKind::MeanOnly)) { run(ExampleKind::MeanOnly, x, y)?; }

    #[test]
    fn single_regressor_const((x, y) in clustered(ExampleKind::SingleRegressorConst)) {
        run(ExampleKind::SingleRegressorConst, x, y)?;
    }

    #[test]
    fn single_regressor_fe((x, y) in clustered(ExampleKind::SingleRegressorFe)) {
        run(ExampleKind::SingleRegressorFe, x, y)?;
    }

    #[test]
    fn treatment_const((x, y) in clustered(ExampleKind::TreatmentConst)) {
        run(ExampleKind::TreatmentConst, x, y)?;
    }

    #[test]
    fn treatment_fe((x, y) in clustered(ExampleKind::TreatmentFe)) { run(ExampleKind::TreatmentFe, x, y)?; }

    #[test]
    fn cluster_level_treatment((x, y) in clustered(ExampleKind::ClusterLevelTreatment)) {
        run(ExampleKind::ClusterLevelTreatment, x, y)?;
    }
}

#[test]
fn balanced_single_regressor_reduces_to_size_share() {
    // same within-cluster pattern everywhere, so x_g = x and var_g = var
    let pattern = [-1.0, 0.0, 4.0];
    let x: Vec<Vec<f64>> = [1, 2, 3].iter().map(|&r| pattern.repeat(r)).collect();
    let ex = ExampleDesign::from_clusters(ExampleKind::SingleRegressorConst, &x).unwrap();
    let p = oracle_partial_leverage(&ex).unwrap();
    let l = oracle_leverage(&ex).unwrap();
    for (g, c) in x.iter().enumerate() {
        let share = c.len() as f64 / 18.0;
        assert!((p[g] - share).abs() < 1e-15);
        assert!((l[g] - 2.0 * share).abs() < 1e-15);
    }
}

#[test]
fn control_cluster_partial_leverage() {
    let x = vec![vec![1.0; 4], vec![0.0; 6], vec![0.0; 2]];
    let ex = ExampleDesign::from_clusters(ExampleKind::ClusterLevelTreatment, &x).unwrap();
    let p = oracle_partial_leverage(&ex).unwrap();
    let dbar: f64 = 4.0 / 12.0;
    assert!((p[1] - 0.5 * dbar / (1.0 - dbar)).abs() < 1e-15);
    // treated cluster: (N_g/N)(1 - d)/d
    assert!((p[0] - (4.0 / 12.0) * (1.0 - dbar) / dbar).abs() < 1e-15);
}
