mod common;

use clustdiag::diagnostics::partial_leverage;
use clustdiag::ols::fit_ols;
use clustdiag::sim::{cluster_sizes, draw_design, simulate_case, write_csv, BatchConfig, ErrorModel, SimConfig};

#[test]
fn active_cluster_fraction_matches_p_c() {
    let cfg = SimConfig { g: 20, n: 400, p_c: 0.3, ..Default::default() };
    let (mut active, mut total) = (0usize, 0usize);
    for case in 0..60 {
        let (d, _) = draw_design(&cfg, case).unwrap();
        for col in 1..6 {
            for g in 0..d.g() {
                total += 1;
                active += usize::from(d.x_block(g).column(col).iter().any(|&v| v != 0.0));
            }
        }
    }
    // an active cluster is all zero with prob 0.5^N_g (= 0.5^20 here)
    let frac = active as f64 / total as f64;
    let se = (0.3 * 0.7 / total as f64).sqrt();
    // rank-deficient redraws bias slightly towards active clusters
    assert!((frac - 0.3).abs() < 3.0 * se + 0.01, "{frac}");
}

#[test]
fn simulated_designs_satisfy_leverage_accounting() {
    let cfg = SimConfig { p_c: 0.25, gamma: 3.5, ..Default::default() };
    for case in 0..10 {
        let (d, _) = draw_design(&cfg, case).unwrap();
        let m = fit_ols(&d).unwrap();
        let lev: f64 = clustdiag::diagnostics::leverage(&d, &m).iter().sum();
        assert!((lev - 6.0).abs() < 1e-10);
        let pl = partial_leverage(&d, 1).unwrap();
        assert!((pl.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn balanced_iid_cv1_close_to_nominal() {
    let cfg = SimConfig {
        gamma: 0.0,
        p_c: 1.0,
        reps: 2000,
        boot_reps: 0,
        error_model: ErrorModel::IidNormal,
        seed: 3,
        ..Default::default()
    };
    let r = simulate_case(&cfg, 0).unwrap();
    assert!((0.04..=0.08).contains(&r.rej_cv1), "{}", r.rej_cv1);
    assert!(r.rej_wcr.is_nan());
}

#[test]
fn unbalanced_cv1_over_rejects_relative_to_cv3() {
    let base = SimConfig { gamma: 4.0, p_c: 0.25, reps: 1000, boot_reps: 0, seed: 4, ..Default::default() };
    let mut done = 0;
    for case in 0..6 {
        let r = simulate_case(&base, case).unwrap();
        if r.dropped {
            continue;
        }
        assert!(r.rej_cv1 > r.rej_cv3, "case {case}: {} vs {}", r.rej_cv1, r.rej_cv3);
        done += 1;
    }
    assert!(done >= 3);
}

#[test]
fn gamma_range_cases_and_determinism() {
    let batch = BatchConfig {
        base: SimConfig { g: 10, n: 300, reps: 5, boot_reps: 0, ..Default::default() },
        cases: 50,
        gamma_range: Some((2.0, 4.0)),
        pc_values: vec![0.5],
    };
    let gammas: Vec<f64> = (0..50).map(|i| batch.case_config(i).gamma).collect();
    assert!(gammas.iter().all(|g| (2.0..=4.0).contains(g)));
    let mean = gammas.iter().sum::<f64>() / 50.0;
    assert!((mean - 3.0).abs() < 3.0 * (1.0f64 / 3.0 / 50.0).sqrt());
    let results = clustdiag::sim::run_batch(&batch).unwrap();
    let mut a = Vec::new();
    write_csv(&results, &mut a).unwrap();
    assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 51);
    let mut b = Vec::new();
    write_csv(&clustdiag::sim::run_batch(&batch).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = SimConfig { g: 8, n: 120, reps: 40, boot_reps: 19, ..Default::default() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = one.install(|| simulate_case(&cfg, 2).unwrap());
    let b = simulate_case(&cfg, 2).unwrap();
    assert_eq!((a.rej_cv1, a.rej_cv3, a.rej_wcr), (b.rej_cv1, b.rej_cv3, b.rej_wcr));
}

#[test]
fn cluster_sizes_shape() {
    assert_eq!(cluster_sizes(3000, 30, 0.0).unwrap(), vec![100; 30]);
    for gamma in [0.5, 2.0, 4.0] {
        let s = cluster_sizes(3000, 30, gamma).unwrap();
        assert_eq!(s.iter().sum::<usize>(), 3000);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        let w: Vec<f64> = (1..=30).map(|g| (gamma * g as f64 / 30.0).exp()).collect();
        let total: f64 = w.iter().sum();
        for g in 0..29 {
            let exact = 3000.0 * w[g] / total;
            assert!(exact - 1.0 < s[g] as f64 && s[g] as f64 <= exact);
        }
        // the last cluster picks up at most one unit per floored cluster
        assert!(s[29] as f64 - 3000.0 * w[29] / total < 29.0);
    }
    assert!(cluster_sizes(10, 20, 1.0).is_err());
}
