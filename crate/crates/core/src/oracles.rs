//! Closed-form leverage and partial leverage for a handful of simple
//! designs. These are independent of the matrix code in `diagnostics` and
//! serve as test oracles for it.
//!
//! All within-cluster variances use the `1/N_g` (population) normalisation.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    /// Intercept only.
    MeanOnly,
    /// Constant plus one regressor `x`.
    SingleRegressorConst,
    /// One regressor with cluster fixed effects partialed out.
    SingleRegressorFe,
    /// Constant plus an individual-level treatment dummy.
    TreatmentConst,
    /// Treatment dummy with cluster fixed effects.
    TreatmentFe,
    /// Constant plus a dummy that is constant within each cluster.
    ClusterLevelTreatment,
}

impl ExampleKind {
    pub fn has_regressor(self) -> bool {
        self != ExampleKind::MeanOnly
    }

    fn is_treatment(self) -> bool {
        matches!(
            self,
            ExampleKind::TreatmentConst | ExampleKind::TreatmentFe | ExampleKind::ClusterLevelTreatment
        )
    }
}

/// Per-cluster sufficient statistics of the regressor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleDesign {
    pub kind: ExampleKind,
    pub ng: Vec<f64>,
    /// Within-cluster means of the regressor (`d_g` for treatment kinds).
    pub xbar: Vec<f64>,
    /// Within-cluster variances of the regressor.
    pub xvar: Vec<f64>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn degenerate(msg: &str) -> Error {
    Error::DegenerateDesign(msg.to_string())
}

impl ExampleDesign {
    /// Build from cluster sizes alone.
    pub fn mean_only(ng: &[usize]) -> Result<Self> {
        if ng.is_empty() || ng.contains(&0) {
            return Err(degenerate("empty cluster"));
        }
        let g = ng.len();
        Ok(Self {
            kind: ExampleKind::MeanOnly,
            ng: ng.iter().map(|&n| n as f64).collect(),
            xbar: vec![0.0; g],
            xvar: vec![0.0; g],
        })
    }

    /// Build from the regressor values of each cluster.
    pub fn from_clusters(kind: ExampleKind, x: &[Vec<f64>]) -> Result<Self> {
        if x.is_empty() || x.iter().any(|c| c.is_empty()) {
            return Err(degenerate("empty cluster"));
        }
        if kind == ExampleKind::MeanOnly {
            let ng: Vec<usize> = x.iter().map(Vec::len).collect();
            return Self::mean_only(&ng);
        }
        if kind.is_treatment() && x.iter().flatten().any(|&d| d != 0.0 && d != 1.0) {
            return Err(degenerate("treatment must be a 0/1 dummy"));
        }
        let (xbar, xvar) = x.iter().map(|c| mean_var(c)).unzip();
        let out = Self {
            kind,
            ng: x.iter().map(|c| c.len() as f64).collect(),
            xbar,
            xvar,
        };
        if kind == ExampleKind::ClusterLevelTreatment && out.xvar.iter().any(|&v| v != 0.0) {
            return Err(degenerate("treatment varies within a cluster"));
        }
        Ok(out)
    }

    pub fn g(&self) -> usize {
        self.ng.len()
    }

    pub fn n(&self) -> f64 {
        self.ng.iter().sum()
    }

    /// Overall mean of the regressor (`d` for treatment kinds).
    pub fn overall_mean(&self) -> f64 {
        self.ng.iter().zip(&self.xbar).map(|(n, m)| n * m).sum::<f64>() / self.n()
    }

    /// Overall variance, recombined from the per-cluster moments.
    pub fn overall_var(&self) -> f64 {
        let m = self.overall_mean();
        self.ng
            .iter()
            .zip(self.xbar.iter().zip(&self.xvar))
            .map(|(n, (xb, v))| n * (v + (xb - m) * (xb - m)))
            .sum::<f64>()
            / self.n()
    }

    fn treated_share(&self) -> Result<f64> {
        let d = self.overall_mean();
        if d <= 0.0 || d >= 1.0 {
            return Err(degenerate("treated share must lie strictly between 0 and 1"));
        }
        Ok(d)
    }

    fn within_total(&self) -> Result<f64> {
        let s: f64 = self.ng.iter().zip(&self.xvar).map(|(n, v)| n * v).sum();
        if s <= 0.0 {
            return Err(degenerate("no within-cluster variation"));
        }
        Ok(s)
    }

    fn overall_var_checked(&self) -> Result<f64> {
        let v = self.overall_var();
        if v <= 0.0 {
            return Err(degenerate("regressor has no variation"));
        }
        Ok(v)
    }
}

/// Closed-form cluster leverage `L_g`.
pub fn oracle_leverage(d: &ExampleDesign) -> Result<Vec<f64>> {
    let n = d.n();
    let rows = d.ng.iter().zip(d.xbar.iter().zip(&d.xvar));
    Ok(match d.kind {
        ExampleKind::MeanOnly => d.ng.iter().map(|ng| ng / n).collect(),
        ExampleKind::SingleRegressorConst => {
            let (m, v) = (d.overall_mean(), d.overall_var_checked()?);
            rows.map(|(ng, (xb, vg))| ng / (n * v) * (v + vg + (xb - m) * (xb - m))).collect()
        }
        ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe => {
            let total = d.within_total()?;
            rows.map(|(ng, (_, vg))| ng * vg / total).collect()
        }
        ExampleKind::TreatmentConst => {
            let s = d.treated_share()?;
            rows.map(|(ng, (dg, _))| ng / n * (dg / s + (1.0 - dg) / (1.0 - s))).collect()
        }
        ExampleKind::ClusterLevelTreatment => {
            let s = d.treated_share()?;
            rows.map(|(ng, (dg, _))| if *dg == 1.0 { ng / (n * s) } else { ng / (n * (1.0 - s)) })
                .collect()
        }
    })
}

/// Closed-form partial leverage of the (only) non-constant regressor.
pub fn oracle_partial_leverage(d: &ExampleDesign) -> Result<Vec<f64>> {
    let n = d.n();
    let rows = d.ng.iter().zip(d.xbar.iter().zip(&d.xvar));
    Ok(match d.kind {
        ExampleKind::MeanOnly | ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe => {
            oracle_leverage(d)?
        }
        ExampleKind::SingleRegressorConst => {
            let (m, v) = (d.overall_mean(), d.overall_var_checked()?);
            rows.map(|(ng, (xb, vg))| ng * (vg + (xb - m) * (xb - m)) / (n * v)).collect()
        }
        ExampleKind::TreatmentConst => {
            let s = d.treated_share()?;
            rows.map(|(ng, (dg, _))| ng / n * (dg / s + (s - dg) / (1.0 - s))).collect()
        }
        ExampleKind::ClusterLevelTreatment => {
            let s = d.treated_share()?;
            rows.map(|(ng, (dg, _))| {
                if *dg == 1.0 {
                    ng / n * (1.0 - s) / s
                } else {
                    ng / n * s / (1.0 - s)
                }
            })
            .collect()
        }
    })
}

/// Per-cluster estimates: `ybar_g` for the mean, `s_xy,g / s_x,g^2` with fixed effects.
pub fn cluster_estimates(kind: ExampleKind, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .zip(y)
        .map(|(xc, yc)| {
            let (ym, _) = mean_var(yc);
            match kind {
                ExampleKind::MeanOnly => Ok(ym),
                ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe => {
                    let (xm, xv) = mean_var(xc);
                    if xv <= 0.0 {
                        return Err(degenerate("no within-cluster variation"));
                    }
                    let cov = xc.iter().zip(yc).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>()
                        / xc.len() as f64;
                    Ok(cov / xv)
                }
                _ => Err(Error::InvalidSpec(format!("no per-cluster estimate for {kind:?}"))),
            }
        })
        .collect()
}

/// Residuals of `beta^(g) - beta = L_g (beta^(g) - beta_g)`, with `beta`
/// recovered as the leverage-weighted average of the `beta_g`.
pub fn oracle_influence_identity(
    d: &ExampleDesign,
    beta_g: &[f64],
    beta_del: &[f64],
) -> Result<Vec<f64>> {
    if !matches!(
        d.kind,
        ExampleKind::MeanOnly | ExampleKind::SingleRegressorFe | ExampleKind::TreatmentFe
    ) {
        return Err(Error::InvalidSpec(format!("identity does not hold for {:?}", d.kind)));
    }
    let lev = oracle_leverage(d)?;
    let beta: f64 = lev.iter().zip(beta_g).map(|(l, b)| l * b).sum();
    Ok(lev
        .iter()
        .zip(beta_g.iter().zip(beta_del))
        .map(|(l, (bg, bd))| bd - beta - l * (bd - bg))
        .collect())
}
