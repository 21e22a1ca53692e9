//! OLS from accumulated cluster blocks, empirical scores, CV1, and
//! t(G-1) inference.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::PreparedDesign;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::tdist::{t_quantile, two_sided_p};

/// Default confidence level for reported intervals.
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub beta: DVector<f64>,
    pub inv_gram: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Empirical score vectors `X_g' u_g`, one per cluster.
    pub scores: Vec<DVector<f64>>,
    pub n: usize,
    pub g: usize,
    pub k: usize,
    /// `k` plus any absorbed fixed effects.
    pub df_k: usize,
    pub j: usize,
}

impl FittedModel {
    pub fn beta_j(&self) -> f64 {
        self.beta[self.j]
    }

    /// Small-sample factor `G(N-1) / ((G-1)(N-k))`.
    pub fn cv1_correction(&self) -> f64 {
        cv1_correction(self.n, self.g, self.df_k)
    }
}

pub fn cv1_correction(n: usize, g: usize, k: usize) -> f64 {
    (g as f64 * (n as f64 - 1.0)) / ((g as f64 - 1.0) * (n as f64 - k as f64))
}

/// Fit by Cholesky on the accumulated Gram system.
pub fn fit_ols(design: &PreparedDesign) -> Result<FittedModel> {
    let inv_gram = spd_inverse(&design.gram)?;
    let beta = &inv_gram * &design.moment;
    let residuals = &design.y - &design.x * &beta;
    let scores = (0..design.g())
        .map(|g| {
            let u = residuals.rows(design.starts[g], design.ng[g]);
            design.x_block(g).tr_mul(&u)
        })
        .collect();
    Ok(FittedModel {
        beta,
        inv_gram,
        residuals,
        scores,
        n: design.n(),
        g: design.g(),
        k: design.k(),
        df_k: design.df_k(),
        j: design.j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarianceKind {
    #[serde(rename = "CV1")]
    Cv1,
    #[serde(rename = "CV3")]
    Cv3,
    #[serde(rename = "CV3J")]
    Cv3J,
}

impl std::fmt::Display for VarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceKind::Cv1 => "CV1",
            VarianceKind::Cv3 => "CV3",
            VarianceKind::Cv3J => "CV3J",
        })
    }
}

/// t statistic, two-sided p value and confidence interval for one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inference {
    pub t: f64,
    pub p: f64,
    pub ci: (f64, f64),
    /// Standard error was zero.
    pub degenerate: bool,
}

/// `(beta_j - beta_0j) / se_j` with the conventions used throughout:
/// `0/0` is 0 and `x/0` is `±inf`.
pub fn safe_t(num: f64, se: f64) -> f64 {
    if se > 0.0 {
        num / se
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * f64::INFINITY
    }
}

/// Inference at the default 95% level.
pub fn t_inference(beta_j: f64, se_j: f64, beta_0j: f64, dof: usize) -> Inference {
    t_inference_at(beta_j, se_j, beta_0j, dof, DEFAULT_LEVEL)
}

pub fn t_inference_at(beta_j: f64, se_j: f64, beta_0j: f64, dof: usize, level: f64) -> Inference {
    let dof_f = dof as f64;
    let t = safe_t(beta_j - beta_0j, se_j);
    let crit = t_quantile(0.5 + 0.5 * level, dof_f);
    Inference {
        t,
        p: two_sided_p(t, dof_f),
        ci: (beta_j - crit * se_j, beta_j + crit * se_j),
        degenerate: se_j <= 0.0,
    }
}

/// A k×k variance matrix with inference for the coefficient of interest.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub kind: VarianceKind,
    pub matrix: DMatrix<f64>,
    pub beta_j: f64,
    pub se_j: f64,
    pub t_j: f64,
    pub p_j: f64,
    pub ci_j: (f64, f64),
    pub dof: usize,
    pub level: f64,
}

impl VarianceEstimate {
    pub fn new(kind: VarianceKind, matrix: DMatrix<f64>, model: &FittedModel, level: f64) -> Self {
        let dof = model.g - 1;
        let beta_j = model.beta_j();
        let se_j = matrix[(model.j, model.j)].max(0.0).sqrt();
        let inf = t_inference_at(beta_j, se_j, 0.0, dof, level);
        Self {
            kind,
            matrix,
            beta_j,
            se_j,
            t_j: inf.t,
            p_j: inf.p,
            ci_j: inf.ci,
            dof,
            level,
        }
    }
}

/// `A (sum_g s_g s_g') A` for the given scores.
pub fn sandwich(inv_gram: &DMatrix<f64>, scores: &[DVector<f64>]) -> DMatrix<f64> {
    let k = inv_gram.nrows();
    let mut meat = DMatrix::zeros(k, k);
    for s in scores {
        meat.ger(1.0, s, s, 1.0);
    }
    let v = inv_gram * meat * inv_gram;
    (&v + v.transpose()) * 0.5
}

/// CV1 at the default level.
pub fn cv1(model: &FittedModel) -> Result<VarianceEstimate> {
    cv1_at(model, DEFAULT_LEVEL)
}

pub fn cv1_at(model: &FittedModel, level: f64) -> Result<VarianceEstimate> {
    if model.g < 2 {
        return Err(Error::TooFewClusters(model.g));
    }
    let v = sandwich(&model.inv_gram, &model.scores) * model.cv1_correction();
    Ok(VarianceEstimate::new(VarianceKind::Cv1, v, model, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(y: &[f64], x: DMatrix<f64>, clusters: &[usize], j: usize) -> PreparedDesign {
        PreparedDesign::from_parts(DVector::from_row_slice(y), x, clusters, j).unwrap()
    }

    #[test]
    fn intercept_only_is_sample_mean() {
        let d = design(&[1.0, 2.0, 3.0, 6.0], DMatrix::from_element(4, 1, 1.0), &[0, 0, 1, 1], 0);
        let m = fit_ols(&d).unwrap();
        assert!((m.beta[0] - 3.0).abs() < 1e-14);
        let sum: DVector<f64> = m.scores.iter().fold(DVector::zeros(1), |a, s| a + s);
        assert!(sum.norm() < 1e-12);
    }

    #[test]
    fn exact_fit_has_zero_residuals_and_zero_cv1() {
        let x = DMatrix::from_fn(5, 2, |r, c| if c == 0 { 1.0 } else { r as f64 * r as f64 });
        let y: Vec<f64> = (0..5).map(|r| 2.0 - 0.5 * (r * r) as f64).collect();
        let d = design(&y, x, &[0, 0, 1, 1, 2], 1);
        let m = fit_ols(&d).unwrap();
        assert!(m.residuals.amax() < 1e-12);
        let v = cv1(&m).unwrap();
        assert!(v.matrix.amax() < 1e-20);
    }

    #[test]
    fn cv1_two_singletons_by_hand() {
        // correction 2, (X'X)^-1 = 1/2, sum s^2 = 2
        let d = design(&[0.0, 2.0], DMatrix::from_element(2, 1, 1.0), &[0, 1], 0);
        let m = fit_ols(&d).unwrap();
        let v = cv1(&m).unwrap();
        assert!((v.matrix[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((v.se_j - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cv1_needs_two_clusters() {
        let d = design(&[0.0, 2.0, 1.0], DMatrix::from_element(3, 1, 1.0), &[0, 0, 0], 0);
        let m = fit_ols(&d).unwrap();
        assert!(matches!(cv1(&m), Err(Error::TooFewClusters(1))));
    }

    #[test]
    fn null_at_estimate_gives_unit_p() {
        let inf = t_inference(0.3, 0.1, 0.3, 9);
        assert_eq!(inf.t, 0.0);
        assert_eq!(inf.p, 1.0);
    }

    #[test]
    fn cauchy_p_value() {
        let inf = t_inference(1.0, 1.0, 0.0, 1);
        assert!((inf.p - 0.5).abs() < 1e-13);
    }

    #[test]
    fn zero_se_is_degenerate_not_a_panic() {
        let inf = t_inference(1.0, 0.0, 0.0, 5);
        assert!(inf.degenerate);
        assert!(inf.t.is_infinite());
        assert_eq!(inf.p, 0.0);
    }

    #[test]
    fn reproduces_published_regression_row() {
        // coefficient, s.e. and G = 12 from a published CV1 row
        let inf = t_inference(-0.027515, 0.009293, 0.0, 11);
        assert!((inf.t - -2.9608).abs() < 5e-5);
        assert!((inf.p - 0.0130).abs() < 5e-5);
        assert!((inf.ci.0 - -0.047969).abs() < 1e-6);
        assert!((inf.ci.1 - -0.007061).abs() < 1e-6);
    }
}
