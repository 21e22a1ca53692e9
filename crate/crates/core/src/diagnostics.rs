//! Cluster leverage, partial leverage, summary statistics, alternative
//! means, and the effective number of clusters.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::PreparedDesign;
use crate::error::{Error, Result};
use crate::jackknife::JackknifeResult;
use crate::linalg::{spd_solve, trace_of_product};
use crate::ols::FittedModel;

/// `L_g = tr(X_g'X_g (X'X)^{-1})` for every cluster.
pub fn leverage(design: &PreparedDesign, model: &FittedModel) -> Vec<f64> {
    design
        .gram_blocks
        .iter()
        .map(|b| trace_of_product(b, &model.inv_gram))
        .collect()
}

/// Column `j` residualized on all other columns of `X`.
pub fn partialed_column(design: &PreparedDesign, j: usize) -> Result<DVector<f64>> {
    let k = design.k();
    let xj = design.x.column(j).into_owned();
    if k == 1 {
        return Ok(xj);
    }
    let others: Vec<usize> = (0..k).filter(|&c| c != j).collect();
    let sub_gram = design.gram.select_rows(others.iter()).select_columns(others.iter());
    let cross = DVector::from_iterator(others.len(), others.iter().map(|&c| design.gram[(c, j)]));
    let coef = spd_solve(&sub_gram, &cross)?;
    let fitted = design.x.select_columns(others.iter()) * coef;
    Ok(xj - fitted)
}

/// Partial leverage `L_gj = x_gj'x_gj / x_j'x_j` with `x_j` partialed.
pub fn partial_leverage(design: &PreparedDesign, j: usize) -> Result<Vec<f64>> {
    let xr = partialed_column(design, j)?;
    let total = xr.norm_squared();
    let scale = design.gram[(j, j)];
    if !(total > 1e-12 * scale) {
        return Err(Error::NotIdentified(design.column_names[j].clone()));
    }
    Ok((0..design.g())
        .map(|g| xr.rows(design.starts[g], design.ng[g]).norm_squared() / total)
        .collect())
}

/// Scaled variance `sum (a_g - a)^2 / ((G-1) a^2)`; `None` when undefined.
pub fn scaled_variance(values: &[f64]) -> Option<f64> {
    let g = values.len();
    if g < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / g as f64;
    if mean == 0.0 {
        return None;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some(ss / ((g as f64 - 1.0) * mean * mean))
}

/// Percentile by the averaging empirical-distribution rule: with `np`
/// integral, average the `np`-th and next order statistics, otherwise take
/// the `ceil(np)`-th.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let np = n as f64 * p;
    let i = np.floor() as usize;
    if (np - np.floor()).abs() < 1e-12 {
        if i == 0 {
            sorted[0]
        } else if i >= n {
            sorted[n - 1]
        } else {
            0.5 * (sorted[i - 1] + sorted[i])
        }
    } else {
        sorted[i.min(n - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    /// Square root of the scaled variance; `None` when the mean is 0 or G < 2.
    pub coefvar: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "summary of an empty column");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Summary {
        min: sorted[0],
        q1: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.5),
        mean: values.iter().sum::<f64>() / n as f64,
        q3: percentile(&sorted, 0.75),
        max: sorted[n - 1],
        coefvar: scaled_variance(values).map(f64::sqrt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AltMeans {
    pub harmonic: Option<f64>,
    pub harmonic_ratio: Option<f64>,
    pub geometric: Option<f64>,
    pub geometric_ratio: Option<f64>,
    pub quadratic: f64,
    pub quadratic_ratio: Option<f64>,
}

/// Harmonic, geometric and quadratic means and their ratios to the
/// arithmetic mean. The first two are undefined unless every value is positive.
pub fn alternative_means(values: &[f64]) -> AltMeans {
    let g = values.len() as f64;
    let mean = values.iter().sum::<f64>() / g;
    let ratio = |m: f64| (mean != 0.0).then(|| m / mean);
    let positive = values.iter().all(|&v| v > 0.0);
    let harmonic = positive.then(|| g / values.iter().map(|v| 1.0 / v).sum::<f64>());
    let geometric = positive.then(|| (values.iter().map(|v| v.ln()).sum::<f64>() / g).exp());
    let quadratic = (values.iter().map(|v| v * v).sum::<f64>() / g).sqrt();
    AltMeans {
        harmonic,
        harmonic_ratio: harmonic.and_then(ratio),
        geometric,
        geometric_ratio: geometric.and_then(ratio),
        quadratic,
        quadratic_ratio: ratio(quadratic),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveClusters {
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gstar0: f64,
    /// Absent when fixed effects nested within clusters are present.
    pub gstar1: Option<f64>,
    /// `(rho, G*(rho))` when requested and computable.
    pub gstar_rho: Option<(f64, f64)>,
    pub fe_nested: bool,
    /// A requested `rho > 0` that was refused because of nested fixed effects.
    pub rho_refused: Option<f64>,
}

/// `G / (1 + Gamma)` where `Gamma` is the scaled variance of the gammas.
fn gstar_from(gamma: &[f64]) -> Result<f64> {
    let g = gamma.len() as f64;
    let vs = scaled_variance(gamma)
        .ok_or_else(|| Error::Singular("all gamma_g are zero".into()))?;
    Ok(g / (1.0 + vs))
}

/// Per-cluster `gamma_gj(0) = w'X_g'X_g w` and `gamma_gj(1) = (iota'X_g w)^2`,
/// with `w` the `j`-th column of `(X'X)^{-1}`.
pub fn gammas(design: &PreparedDesign, model: &FittedModel) -> (Vec<f64>, Vec<f64>) {
    let w = model.inv_gram.column(model.j).into_owned();
    let mut g0 = Vec::with_capacity(design.g());
    let mut g1 = Vec::with_capacity(design.g());
    for g in 0..design.g() {
        let xw = design.x_block(g) * &w;
        let block = &design.gram_blocks[g];
        g0.push((block * &w).dot(&w));
        let s = xw.sum();
        g1.push(s * s);
    }
    (g0, g1)
}

/// Effective number of clusters at 0, 1, and an optional `rho`.
pub fn effective_clusters(
    design: &PreparedDesign,
    model: &FittedModel,
    rho: Option<f64>,
) -> Result<EffectiveClusters> {
    if let Some(r) = rho {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidRho(r));
        }
    }
    let (gamma0, gamma1) = gammas(design, model);
    let gstar0 = gstar_from(&gamma0)?;
    let fe_nested = design.fe_nested;
    let gstar1 = if fe_nested { None } else { gstar_from(&gamma1).ok() };
    let mut gstar_rho = None;
    let mut rho_refused = None;
    if let Some(r) = rho {
        if fe_nested && r > 0.0 {
            rho_refused = Some(r);
        } else {
            let mixed: Vec<f64> = gamma0
                .iter()
                .zip(&gamma1)
                .map(|(a, b)| r * b + (1.0 - r) * a)
                .collect();
            gstar_rho = Some((r, gstar_from(&mixed)?));
        }
    }
    Ok(EffectiveClusters {
        gamma0,
        gamma1,
        gstar0,
        gstar1,
        gstar_rho,
        fe_nested,
        rho_refused,
    })
}

/// Per-cluster columns with their summaries.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterDiagnostics {
    pub ng: Vec<usize>,
    pub leverage: Vec<f64>,
    /// Missing when the jackknife quantities are unavailable.
    pub partial_leverage: Option<Vec<f64>>,
    pub beta_del_j: Option<Vec<f64>>,
    pub ng_summary: Summary,
    pub leverage_summary: Summary,
    pub partial_summary: Option<Summary>,
    pub beta_del_summary: Option<Summary>,
}

impl ClusterDiagnostics {
    /// `jackknife` is `None` when the delete-one quantities must be withheld.
    pub fn compute(
        design: &PreparedDesign,
        model: &FittedModel,
        jackknife: Option<&JackknifeResult>,
    ) -> Result<Self> {
        let lev = leverage(design, model);
        let ngf: Vec<f64> = design.ng.iter().map(|&n| n as f64).collect();
        let (partial, beta_del) = match jackknife {
            Some(jk) => (
                Some(partial_leverage(design, design.j)?),
                Some(jk.beta_del_j(design.j)),
            ),
            None => (None, None),
        };
        Ok(Self {
            ng_summary: summarize(&ngf),
            leverage_summary: summarize(&lev),
            partial_summary: partial.as_deref().map(summarize),
            beta_del_summary: beta_del.as_deref().map(summarize),
            ng: design.ng.clone(),
            leverage: lev,
            partial_leverage: partial,
            beta_del_j: beta_del,
        })
    }
}

/// Dense hat-matrix block `X_g (X'X)^{-1} X_g'`; only for small checks.
pub fn hat_block(design: &PreparedDesign, model: &FittedModel, g: usize) -> DMatrix<f64> {
    let xg = design.x_block(g);
    &xg * &model.inv_gram * xg.transpose()
}
