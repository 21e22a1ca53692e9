//! Full analysis of one coefficient and its text, JSON and CSV renderings.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bootstrap::{wcr_pvalue, BootstrapConfig};
use crate::data::PreparedDesign;
use crate::diagnostics::{alternative_means, effective_clusters, AltMeans, ClusterDiagnostics, Summary};
use crate::error::{Error, Result};
use crate::jackknife::jackknife;
use crate::ols::{cv1_at, fit_ols, VarianceEstimate, VarianceKind, DEFAULT_LEVEL};

/// Per-cluster tables longer than this are printed as a bare matrix.
pub const MAX_FORMATTED_CLUSTERS: usize = 52;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub jackknife: bool,
    pub table: bool,
    pub svars: bool,
    pub gstar: bool,
    pub rho: Option<f64>,
    pub level: f64,
    pub wcr: Option<BootstrapConfig>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            jackknife: false,
            table: false,
            svars: false,
            gstar: false,
            rho: None,
            level: DEFAULT_LEVEL,
            wcr: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionRow {
    pub method: VarianceKind,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl From<&VarianceEstimate> for RegressionRow {
    fn from(v: &VarianceEstimate) -> Self {
        Self {
            method: v.kind,
            coef: v.beta_j,
            se: v.se_j,
            t: v.t_j,
            p: v.p_j,
            ci_lower: v.ci_j.0,
            ci_upper: v.ci_j.1,
        }
    }
}

/// Summaries of the four per-cluster columns; the last two are absent when
/// the jackknife quantities are withheld.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariabilityTable {
    pub ng: Summary,
    pub leverage: Summary,
    pub partial: Option<Summary>,
    pub beta_no_g: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AltMeansTable {
    pub ng: AltMeans,
    pub leverage: AltMeans,
    pub partial: Option<AltMeans>,
    pub beta_no_g: Option<AltMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GstarBlock {
    pub gstar0: f64,
    pub gstar1: Option<f64>,
    pub rho: Option<f64>,
    pub gstar_rho: Option<f64>,
    /// Set when `G*(rho)` was requested but cannot be computed.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WcrBlock {
    pub reps: usize,
    pub seed: u64,
    pub beta0: f64,
    pub p_value: f64,
    pub ci: Option<(Option<f64>, Option<f64>)>,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputBundle {
    pub coef_name: String,
    pub n: usize,
    pub g: usize,
    pub k: usize,
    pub level: f64,
    pub regression: Vec<RegressionRow>,
    pub variability: VariabilityTable,
    pub cluster_labels: Vec<String>,
    pub ng: Vec<usize>,
    pub leverage: Vec<f64>,
    pub partlev: Option<Vec<f64>>,
    pub betanog: Option<Vec<f64>>,
    pub show_table: bool,
    pub alt_means: Option<AltMeansTable>,
    pub gstar: Option<GstarBlock>,
    pub wcr: Option<WcrBlock>,
    pub warnings: Vec<String>,
}

impl OutputBundle {
    pub fn row(&self, kind: VarianceKind) -> Option<&RegressionRow> {
        self.regression.iter().find(|r| r.method == kind)
    }
}

/// Run every requested computation on a prepared design.
pub fn analyze(design: &PreparedDesign, opts: &AnalysisOptions) -> Result<OutputBundle> {
    if let Some(r) = opts.rho {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidRho(r));
        }
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must be in (0,1), got {}", opts.level)));
    }
    let model = fit_ols(design)?;
    let mut warnings = Vec::new();
    if !design.dropped_columns.is_empty() {
        warnings.push(format!(
            "omitted because of collinearity: {}",
            design.dropped_columns.join(", ")
        ));
    }
    let cv1 = cv1_at(&model, opts.level)?;
    let mut regression = vec![RegressionRow::from(&cv1)];

    let jk = if design.absorbed && !design.absorb_nested {
        warnings.push(
            "the cluster variable is not constant within the absorbed groups; \
             partial leverage, delete-one estimates, CV3 and CV3J are not available"
                .into(),
        );
        None
    } else {
        let jk = jackknife(design, &model, opts.jackknife, opts.level)?;
        regression.push(RegressionRow::from(&jk.cv3));
        if let Some(v) = &jk.cv3j {
            regression.push(RegressionRow::from(v));
        }
        if let Some(w) = jk.warning(&design.cluster_labels, design.coef_name()) {
            warnings.push(w);
        }
        Some(jk)
    };

    let diag = ClusterDiagnostics::compute(design, &model, jk.as_ref())?;
    let ngf: Vec<f64> = design.ng.iter().map(|&n| n as f64).collect();
    let alt_means = opts.svars.then(|| AltMeansTable {
        ng: alternative_means(&ngf),
        leverage: alternative_means(&diag.leverage),
        partial: diag.partial_leverage.as_deref().map(alternative_means),
        beta_no_g: diag.beta_del_j.as_deref().map(alternative_means),
    });

    let gstar = if opts.gstar || opts.rho.is_some() {
        let e = effective_clusters(design, &model, opts.rho)?;
        let note = e.rho_refused.map(|r| {
            format!("G*({}) cannot be computed with cluster or nested fixed effects", fmt_rho(r))
        });
        Some(GstarBlock {
            gstar0: e.gstar0,
            gstar1: e.gstar1,
            rho: opts.rho,
            gstar_rho: e.gstar_rho.map(|(_, v)| v),
            note,
        })
    } else {
        None
    };

    let wcr = match &opts.wcr {
        Some(cfg) => {
            let r = wcr_pvalue(design, &model, cfg)?;
            Some(WcrBlock {
                reps: cfg.reps,
                seed: cfg.seed,
                beta0: cfg.beta0,
                p_value: r.p_value,
                ci: r.ci,
                level: cfg.level,
            })
        }
        None => None,
    };

    Ok(OutputBundle {
        coef_name: design.coef_name().to_string(),
        n: design.n(),
        g: design.g(),
        k: design.k(),
        level: opts.level,
        regression,
        variability: VariabilityTable {
            ng: diag.ng_summary,
            leverage: diag.leverage_summary,
            partial: diag.partial_summary,
            beta_no_g: diag.beta_del_summary,
        },
        cluster_labels: design.cluster_labels.clone(),
        ng: diag.ng,
        leverage: diag.leverage,
        partlev: diag.partial_leverage,
        betanog: diag.beta_del_j,
        show_table: opts.table,
        alt_means,
        gstar,
        wcr,
        warnings,
    })
}

fn fmt_rho(r: f64) -> String {
    let s = format!("{r}");
    s.strip_prefix("0.").map(|t| format!(".{t}")).unwrap_or(s)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        ".".into()
    } else {
        format!("{v:.6}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| ".".into())
}

const RULE: &str = "-----------+----------------------------------------------------------";

/// Human-readable report. Statistics are shown to six decimals.
pub fn render_text(b: &OutputBundle, cluster_var: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Cluster summary statistics for {} when clustered by {cluster_var}.", b.coef_name);
    let _ = writeln!(s, "There are {} observations within {} {cluster_var} clusters.\n", b.n, b.g);
    for w in &b.warnings {
        let _ = writeln!(s, "Warning: {w}");
    }
    if !b.warnings.is_empty() {
        s.push('\n');
    }

    let _ = writeln!(s, "Regression Output");
    let _ = writeln!(
        s,
        "{:>6} | {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "s.e.", "Coeff", "Sd. Err.", "t-stat", "P value", "CI-lower", "CI-upper"
    );
    let _ = writeln!(s, "{}", "-".repeat(88));
    for r in &b.regression {
        let _ = writeln!(
            s,
            "{:>6} | {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            r.method.to_string(),
            num(r.coef),
            num(r.se),
            num(r.t),
            num(r.p),
            num(r.ci_lower),
            num(r.ci_upper)
        );
    }
    let _ = writeln!(s, "{}\n", "-".repeat(88));

    let v = &b.variability;
    let _ = writeln!(s, "Cluster Variability");
    let _ = writeln!(
        s,
        "{:>10} | {:>12} {:>14} {:>14} {:>14}",
        "Statistic", "Ng", "Leverage", "Partial L.", "beta no g"
    );
    let _ = writeln!(s, "{RULE}");
    let rows: [(&str, fn(&Summary) -> Option<f64>); 6] = [
        ("min", |x| Some(x.min)),
        ("q1", |x| Some(x.q1)),
        ("median", |x| Some(x.median)),
        ("mean", |x| Some(x.mean)),
        ("q3", |x| Some(x.q3)),
        ("max", |x| Some(x.max)),
    ];
    for (label, f) in rows {
        stat_row(&mut s, v, label, &f);
    }
    let _ = writeln!(s, "{RULE}");
    stat_row(&mut s, v, "coefvar", &|x: &Summary| x.coefvar);
    s.push('\n');

    if b.show_table {
        render_cluster_table(&mut s, b, cluster_var);
    }
    if let Some(a) = &b.alt_means {
        render_alt_means(&mut s, a);
    }
    if let Some(gs) = &b.gstar {
        let _ = writeln!(s, "Effective Number of Clusters");
        let _ = writeln!(s, "-----------------------------");
        let _ = writeln!(s, "G*(0)  = {}", num(gs.gstar0));
        if let (Some(r), Some(v)) = (gs.rho, gs.gstar_rho) {
            if r != 0.0 && r != 1.0 {
                let _ = writeln!(s, "G*({}) = {}", fmt_rho(r), num(v));
            }
        }
        if let Some(g1) = gs.gstar1 {
            let _ = writeln!(s, "G*(1)  = {}", num(g1));
        }
        if let Some(n) = &gs.note {
            let _ = writeln!(s, "{n}");
        }
        let _ = writeln!(s, "-----------------------------\n");
    }
    if let Some(w) = &b.wcr {
        let _ = writeln!(s, "WCR Bootstrap (Rademacher, B = {}, seed = {})", w.reps, w.seed);
        let _ = writeln!(s, "H0: {} = {}", b.coef_name, w.beta0);
        let _ = writeln!(s, "P value  = {}", num(w.p_value));
        if let Some((lo, hi)) = w.ci {
            let _ = writeln!(s, "{:.0}% CI  = [{}, {}]", w.level * 100.0, opt(lo), opt(hi));
        }
        s.push('\n');
    }
    s
}

fn stat_row(s: &mut String, v: &VariabilityTable, label: &str, f: &dyn Fn(&Summary) -> Option<f64>) {
    let ng = f(&v.ng).map(|x| format!("{x:.2}")).unwrap_or_else(|| ".".into());
    let _ = writeln!(
        s,
        "{:>10} | {:>12} {:>14} {:>14} {:>14}",
        label,
        ng,
        opt(f(&v.leverage)),
        opt(v.partial.as_ref().and_then(f)),
        opt(v.beta_no_g.as_ref().and_then(f))
    );
}

fn render_cluster_table(s: &mut String, b: &OutputBundle, cluster_var: &str) {
    let part = |g: usize| b.partlev.as_ref().map(|p| p[g]);
    let beta = |g: usize| b.betanog.as_ref().map(|p| p[g]);
    if b.g > MAX_FORMATTED_CLUSTERS {
        let _ = writeln!(s, "Cluster by Cluster Statistics (Ng, Leverage, Partial L., beta no g)");
        for g in 0..b.g {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                b.ng[g],
                b.leverage[g],
                part(g).map_or(".".into(), |v| v.to_string()),
                beta(g).map_or(".".into(), |v| v.to_string())
            );
        }
        s.push('\n');
        return;
    }
    let _ = writeln!(s, "Cluster by Cluster Statistics");
    let _ = writeln!(
        s,
        "{:>10} | {:>8} {:>14} {:>14} {:>14}",
        cluster_var, "Ng", "Leverage", "Partial L.", "beta no g"
    );
    let _ = writeln!(s, "{RULE}");
    for g in 0..b.g {
        let _ = writeln!(
            s,
            "{:>10} | {:>8} {:>14} {:>14} {:>14}",
            b.cluster_labels[g],
            b.ng[g],
            num(b.leverage[g]),
            opt(part(g)),
            opt(beta(g))
        );
    }
    let _ = writeln!(s, "{RULE}\n");
}

fn render_alt_means(s: &mut String, a: &AltMeansTable) {
    let _ = writeln!(s, "Alternative Sample Means and Ratios to Arithmetic Mean");
    let _ = writeln!(
        s,
        "{:>15} | {:>12} {:>14} {:>14} {:>14}",
        "", "Ng", "Leverage", "Partial L.", "beta no g"
    );
    let _ = writeln!(s, "{}", "-".repeat(76));
    let rows: [(&str, fn(&AltMeans) -> Option<f64>); 6] = [
        ("Harmonic Mean", |m| m.harmonic),
        ("Harmonic Ratio", |m| m.harmonic_ratio),
        ("Geometric Mean", |m| m.geometric),
        ("Geometric Ratio", |m| m.geometric_ratio),
        ("Quadratic Mean", |m| Some(m.quadratic)),
        ("Quadratic Ratio", |m| m.quadratic_ratio),
    ];
    for (label, f) in rows {
        let _ = writeln!(
            s,
            "{:>15} | {:>12} {:>14} {:>14} {:>14}",
            label,
            opt(f(&a.ng)),
            opt(f(&a.leverage)),
            opt(a.partial.as_ref().and_then(f)),
            opt(a.beta_no_g.as_ref().and_then(f))
        );
    }
    let _ = writeln!(s, "{}\n", "-".repeat(76));
}

/// JSON with flat stored-result keys (`beta`, `cv1se`, `cv3Jp`, `gstarzero`,
/// `ng`, `leverage`, ...) followed by the structured tables.
pub fn to_json(b: &OutputBundle) -> Result<Value> {
    let mut m = Map::new();
    m.insert("beta".into(), json!(b.regression[0].coef));
    for r in &b.regression {
        let p = match r.method {
            VarianceKind::Cv1 => "cv1",
            VarianceKind::Cv3 => "cv3",
            VarianceKind::Cv3J => "cv3J",
        };
        m.insert(format!("{p}se"), json!(r.se));
        m.insert(format!("{p}t"), json!(r.t));
        m.insert(format!("{p}p"), json!(r.p));
        m.insert(format!("{p}lci"), json!(r.ci_lower));
        m.insert(format!("{p}uci"), json!(r.ci_upper));
    }
    if let Some(g) = &b.gstar {
        m.insert("gstarzero".into(), json!(g.gstar0));
        if let Some(v) = g.gstar1 {
            m.insert("gstarone".into(), json!(v));
        }
        if let Some(v) = g.gstar_rho {
            m.insert("gstarrho".into(), json!(v));
        }
    }
    m.insert("ng".into(), json!(b.ng));
    m.insert("leverage".into(), json!(b.leverage));
    if let Some(p) = &b.partlev {
        m.insert("partlev".into(), json!(p));
    }
    if let Some(p) = &b.betanog {
        m.insert("betanog".into(), json!(p));
    }
    if let Some(w) = &b.wcr {
        m.insert("wcrp".into(), json!(w.p_value));
    }
    m.insert("details".into(), serde_json::to_value(b)?);
    Ok(Value::Object(m))
}

/// Per-cluster table as CSV, with full round-trip precision. Missing
/// entries are left empty.
pub fn render_csv(b: &OutputBundle, cluster_var: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([cluster_var, "ng", "leverage", "partlev", "betanog"])?;
    let cell = |v: Option<&Vec<f64>>, g: usize| v.map(|x| x[g].to_string()).unwrap_or_default();
    for g in 0..b.g {
        w.write_record([
            b.cluster_labels[g].clone(),
            b.ng[g].to_string(),
            b.leverage[g].to_string(),
            cell(b.partlev.as_ref(), g),
            cell(b.betanog.as_ref(), g),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
