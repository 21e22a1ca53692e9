//! Delete-one-cluster estimates by Gram downdating, and the jackknife
//! variance estimators CV3 and CV3J.
//!
//! For each cluster the downdated system `(X'X - X_g'X_g) b = X'y - X_g'y_g`
//! is solved with a symmetric generalized inverse. When the coefficient of
//! interest is not identified without cluster `g` its delete-one value is
//! set to zero and the cluster is flagged.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::PreparedDesign;
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_ginv, GInverse, GINV_REL_TOL};
use crate::ols::{FittedModel, VarianceEstimate, VarianceKind, DEFAULT_LEVEL};

/// Generalized inverses of every downdated Gram matrix. Depends on `X` only,
/// so it can be reused across many outcome vectors.
#[derive(Debug, Clone)]
pub struct DeleteOneSolver {
    ginv: Vec<GInverse>,
    j: usize,
}

impl DeleteOneSolver {
    pub fn new(design: &PreparedDesign) -> Self {
        let ginv = design
            .gram_blocks
            .par_iter()
            .map(|block| sym_ginv(&(&design.gram - block), GINV_REL_TOL))
            .collect();
        Self { ginv, j: design.j }
    }

    /// Clusters whose deletion leaves a singular Gram matrix.
    pub fn singular(&self) -> Vec<bool> {
        self.ginv.iter().map(GInverse::is_singular).collect()
    }

    /// Clusters whose deletion leaves the coefficient of interest unidentified.
    pub fn zeroed(&self) -> Vec<bool> {
        self.ginv.iter().map(|gi| !gi.identified[self.j]).collect()
    }

    pub fn any_singular(&self) -> bool {
        self.ginv.iter().any(GInverse::is_singular)
    }

    /// `beta^(g)` for every cluster given the full and per-cluster moments.
    pub fn solve(&self, moment: &DVector<f64>, moment_blocks: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.ginv
            .iter()
            .zip(moment_blocks)
            .map(|(gi, mb)| {
                let mut b = &gi.inverse * (moment - mb);
                if !gi.identified[self.j] {
                    b[self.j] = 0.0;
                }
                b
            })
            .collect()
    }

    /// Only the `j`-th element of each `beta^(g)`.
    pub fn solve_j(&self, moment: &DVector<f64>, moment_blocks: &[DVector<f64>]) -> Vec<f64> {
        self.ginv
            .iter()
            .zip(moment_blocks)
            .map(|(gi, mb)| {
                if !gi.identified[self.j] {
                    return 0.0;
                }
                gi.inverse
                    .row(self.j)
                    .iter()
                    .zip(moment.iter().zip(mb.iter()))
                    .map(|(w, (m, b))| w * (m - b))
                    .sum()
            })
            .collect()
    }
}

/// Delete-one-cluster estimates with their flags.
#[derive(Debug, Clone)]
pub struct DeleteOne {
    pub betas: Vec<DVector<f64>>,
    /// The coefficient of interest was not identified and set to zero.
    pub zeroed: Vec<bool>,
    /// The downdated Gram matrix was singular (for any coefficient).
    pub singular: Vec<bool>,
}

pub fn delete_one_betas(design: &PreparedDesign) -> DeleteOne {
    let solver = DeleteOneSolver::new(design);
    DeleteOne {
        betas: solver.solve(&design.moment, &design.moment_blocks),
        zeroed: solver.zeroed(),
        singular: solver.singular(),
    }
}

/// `((G-1)/G) sum_g (b_g - c)(b_g - c)'`.
pub fn jackknife_matrix(betas: &[DVector<f64>], center: &DVector<f64>) -> DMatrix<f64> {
    let k = center.len();
    let g = betas.len() as f64;
    let mut v = DMatrix::zeros(k, k);
    for b in betas {
        let d = b - center;
        v.ger(1.0, &d, &d, 1.0);
    }
    v * ((g - 1.0) / g)
}

pub fn mean_beta(betas: &[DVector<f64>]) -> DVector<f64> {
    let k = betas[0].len();
    betas.iter().fold(DVector::zeros(k), |a, b| a + b) / betas.len() as f64
}

#[derive(Debug, Clone)]
pub struct JackknifeResult {
    pub beta_del: Vec<DVector<f64>>,
    pub beta_bar: DVector<f64>,
    pub zeroed_flags: Vec<bool>,
    pub singular_flags: Vec<bool>,
    pub cv3: VarianceEstimate,
    pub cv3j: Option<VarianceEstimate>,
}

impl JackknifeResult {
    pub fn any_zeroed(&self) -> bool {
        self.zeroed_flags.iter().any(|&z| z)
    }

    /// `beta_j^(g)` for every cluster.
    pub fn beta_del_j(&self, j: usize) -> Vec<f64> {
        self.beta_del.iter().map(|b| b[j]).collect()
    }

    /// Human-readable warning when any delete-one coefficient was zeroed.
    pub fn warning(&self, labels: &[String], coef: &str) -> Option<String> {
        let hit: Vec<&str> = self
            .zeroed_flags
            .iter()
            .zip(labels)
            .filter(|(z, _)| **z)
            .map(|(_, l)| l.as_str())
            .collect();
        if hit.is_empty() {
            None
        } else {
            Some(format!(
                "coefficient on `{coef}` is not identified when cluster(s) {} are deleted; \
                 their delete-one estimates were set to 0 and CV3/CV3J are unreliable",
                hit.join(", ")
            ))
        }
    }
}

/// Delete-one estimates, CV3, and optionally CV3J, sharing intermediates.
pub fn jackknife(
    design: &PreparedDesign,
    model: &FittedModel,
    with_cv3j: bool,
    level: f64,
) -> Result<JackknifeResult> {
    if design.g() < 2 {
        return Err(Error::TooFewClusters(design.g()));
    }
    let del = delete_one_betas(design);
    let beta_bar = mean_beta(&del.betas);
    let cv3 = VarianceEstimate::new(
        VarianceKind::Cv3,
        jackknife_matrix(&del.betas, &model.beta),
        model,
        level,
    );
    let cv3j = with_cv3j.then(|| {
        VarianceEstimate::new(
            VarianceKind::Cv3J,
            jackknife_matrix(&del.betas, &beta_bar),
            model,
            level,
        )
    });
    Ok(JackknifeResult {
        beta_del: del.betas,
        beta_bar,
        zeroed_flags: del.zeroed,
        singular_flags: del.singular,
        cv3,
        cv3j,
    })
}

/// CV3 centred at the full-sample estimate.
pub fn cv3_jackknife(design: &PreparedDesign, model: &FittedModel) -> Result<VarianceEstimate> {
    Ok(jackknife(design, model, false, DEFAULT_LEVEL)?.cv3)
}

/// CV3J centred at the mean of the delete-one estimates.
pub fn cv3j_jackknife(design: &PreparedDesign, model: &FittedModel) -> Result<VarianceEstimate> {
    Ok(jackknife(design, model, true, DEFAULT_LEVEL)?
        .cv3j
        .expect("requested"))
}

/// CV3 from modified scores `X_g' M_gg^{-1} u_g`, forming each `N_g × N_g`
/// block explicitly. Meant as an independent check on small clusters.
pub fn cv3_direct(design: &PreparedDesign, model: &FittedModel) -> Result<DMatrix<f64>> {
    let g_count = design.g();
    let mut scores = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let xg = design.x_block(g);
        let ng = design.ng[g];
        let m_gg = DMatrix::identity(ng, ng) - &xg * &model.inv_gram * xg.transpose();
        let min_ev = crate::linalg::min_eigenvalue(&m_gg);
        if min_ev <= 1e-12 {
            return Err(Error::Singular(format!(
                "I - H_g is singular for cluster {}",
                design.cluster_labels[g]
            )));
        }
        let u = model.residuals.rows(design.starts[g], ng).into_owned();
        let z = spd_inverse(&m_gg)? * u;
        scores.push(xg.tr_mul(&z));
    }
    let v = crate::ols::sandwich(&model.inv_gram, &scores);
    Ok(v * ((g_count as f64 - 1.0) / g_count as f64))
}
