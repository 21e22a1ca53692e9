mod common;

use std::io::Write;

use clustdiag::data::{build_design, load_csv, Column, Dataset, ModelSpec};
use clustdiag::diagnostics::leverage;
use clustdiag::ols::{fit_ols, VarianceKind};
use clustdiag::report::{analyze, render_csv, render_text, to_json, AnalysisOptions};
use common::{dataset, panel};

#[test]
fn equal_clusters_have_zero_size_variation() {
    let n = 40;
    let cl: Vec<f64> = (0..n).map(|i| (i % 8) as f64).collect();
    let x: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| ((i * 5) % 9) as f64 * 0.3).collect();
    let data = dataset(&[("c", cl), ("x", x), ("y", y)]);
    let d = build_design(&data, &ModelSpec::new("x", "y", "c")).unwrap();
    let b = analyze(&d, &AnalysisOptions::default()).unwrap();
    assert_eq!(b.variability.ng.coefvar, Some(0.0));
}

#[test]
fn fevar_and_absorb_agree_except_leverage() {
    let data = panel(3, 8);
    let fe = build_design(&data, &ModelSpec::new("d", "y", "firm").xvars(["x1"]).fevars(["firm"])).unwrap();
    let ab = build_design(&data, &ModelSpec::new("d", "y", "firm").xvars(["x1"]).absorb("firm")).unwrap();
    let opts = AnalysisOptions { jackknife: true, ..Default::default() };
    let (bf, ba) = (analyze(&fe, &opts).unwrap(), analyze(&ab, &opts).unwrap());
    for (rf, ra) in bf.regression.iter().zip(&ba.regression) {
        assert_eq!(rf.method, ra.method);
        assert!((rf.coef - ra.coef).abs() < 1e-10);
        assert!((rf.se - ra.se).abs() < 1e-10 * ra.se);
    }
    for (lf, la) in bf.leverage.iter().zip(&ba.leverage) {
        assert!((lf - la - 1.0).abs() < 1e-9);
    }
    // both count the cluster fixed effects as nested
    assert!(fe.fe_nested && ab.fe_nested);
}

#[test]
fn non_nested_absorb_withholds_jackknife() {
    let data = panel(4, 6);
    // a grouping that cuts across clusters
    let n = data.n_rows();
    let grp: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
    let mut cols: Vec<Column> = data.columns().to_vec();
    cols.push(Column::from_f64("grp", &grp));
    let data = Dataset::new(cols).unwrap();
    let d = build_design(&data, &ModelSpec::new("d", "y", "firm").xvars(["x1"]).absorb("grp")).unwrap();
    assert!(!d.absorb_nested);
    let b = analyze(&d, &AnalysisOptions { jackknife: true, gstar: true, ..Default::default() }).unwrap();
    assert_eq!(b.regression.len(), 1);
    assert_eq!(b.regression[0].method, VarianceKind::Cv1);
    assert!(b.partlev.is_none() && b.betanog.is_none());
    assert!(b.warnings.iter().any(|w| w.contains("not constant within the absorbed groups")));
    // nested fixed effects: only G*(0)
    assert!(b.gstar.as_ref().unwrap().gstar1.is_none());
    let j = to_json(&b).unwrap();
    assert!(j.get("cv3se").is_none() && j.get("partlev").is_none());
}

#[test]
fn nested_fe_refuses_positive_rho() {
    let data = panel(5, 6);
    let d = build_design(&data, &ModelSpec::new("d", "y", "firm").absorb("firm")).unwrap();
    let b = analyze(&d, &AnalysisOptions { rho: Some(0.5), ..Default::default() }).unwrap();
    let gs = b.gstar.unwrap();
    assert!(gs.gstar_rho.is_none() && gs.gstar1.is_none());
    assert!(gs.note.unwrap().contains("cannot be computed"));
    let b = analyze(&d, &AnalysisOptions { rho: Some(0.0), ..Default::default() }).unwrap();
    assert_eq!(b.gstar.as_ref().unwrap().gstar_rho, Some(b.gstar.as_ref().unwrap().gstar0));
}

#[test]
fn json_keys_and_lengths() {
    let data = panel(6, 7);
    let d = build_design(&data, &ModelSpec::new("d", "y", "firm").xvars(["x1", "x2"])).unwrap();
    let b = analyze(&d, &AnalysisOptions { jackknife: true, gstar: true, rho: Some(0.3), ..Default::default() })
        .unwrap();
    let j = to_json(&b).unwrap();
    for key in [
        "beta", "cv1se", "cv1t", "cv1p", "cv1lci", "cv1uci", "cv3se", "cv3p", "cv3Jse", "cv3Jp", "cv3Juci",
        "gstarzero", "gstarone", "gstarrho",
    ] {
        assert!(j[key].is_number(), "{key}");
    }
    for key in ["ng", "leverage", "partlev", "betanog"] {
        assert_eq!(j[key].as_array().unwrap().len(), 7, "{key}");
    }
    let text = render_text(&b, "firm");
    for r in &b.regression {
        for v in [r.coef, r.se, r.t, r.p, r.ci_lower, r.ci_upper] {
            assert!(text.contains(&format!("{v:.6}")), "{v}");
        }
    }
    assert!(text.contains(&format!("G*(.3) = {:.6}", j["gstarrho"].as_f64().unwrap())));
}

#[test]
fn csv_round_trip() {
    let data = panel(8, 9);
    let d = build_design(&data, &ModelSpec::new("d", "y", "firm").xvars(["x1"])).unwrap();
    let b = analyze(&d, &AnalysisOptions::default()).unwrap();
    let text = render_csv(&b, "firm").unwrap();
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    let cols: Vec<String> = ["firm", "ng", "leverage", "partlev", "betanog"].map(String::from).to_vec();
    let back = load_csv(f.path(), &cols).unwrap();
    let lev = back.column("leverage").unwrap().require_numeric().unwrap();
    let part = back.column("partlev").unwrap().require_numeric().unwrap();
    let beta = back.column("betanog").unwrap().require_numeric().unwrap();
    for g in 0..b.g {
        assert!((lev[g] - b.leverage[g]).abs() <= 1e-12);
        assert!((part[g] - b.partlev.as_ref().unwrap()[g]).abs() <= 1e-12);
        assert!((beta[g] - b.betanog.as_ref().unwrap()[g]).abs() <= 1e-12);
    }
}

#[test]
fn many_clusters_print_raw_matrix() {
    let n = 60 * 3;
    let cl: Vec<f64> = (0..n).map(|i| (i / 3) as f64).collect();
    let x: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| ((i * 3) % 5) as f64).collect();
    let d = build_design(&dataset(&[("c", cl), ("x", x), ("y", y)]), &ModelSpec::new("x", "y", "c")).unwrap();
    let b = analyze(&d, &AnalysisOptions { table: true, ..Default::default() }).unwrap();
    let text = render_text(&b, "c");
    assert!(text.contains("Cluster by Cluster Statistics (Ng, Leverage, Partial L., beta no g)"));
    assert!(!text.contains("        c |"));
}

#[test]
fn sample_filter_and_missing_rows() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "c,x,y,age").unwrap();
    for i in 0..30 {
        let y = if i == 4 { "NA".to_string() } else { format!("{}", (i * 7 % 5) as f64) };
        writeln!(f, "{},{},{},{}", i % 5, (i * 3) % 7, y, 20 + i).unwrap();
    }
    let spec = ModelSpec::new("x", "y", "c").sample("age >= 25");
    let data = load_csv(f.path(), &spec.used_columns().unwrap()).unwrap();
    assert_eq!(data.dropped(), 1);
    let d = build_design(&data, &spec).unwrap();
    assert_eq!(d.n(), 25);
    let m = fit_ols(&d).unwrap();
    assert!((leverage(&d, &m).iter().sum::<f64>() - 2.0).abs() < 1e-12);
}
