//! Wild cluster restricted (WCR) bootstrap for one coefficient, with
//! Rademacher weights and CV1 bootstrap t statistics.
//!
//! `X` is fixed under wild resampling, so everything that depends only on
//! `X` is computed once in a [`WcrPlan`]. A replication then costs `O(Gk)`:
//! with restricted scores `s_g = X_g'u_g`, `d_g = A s_g`, `a_g = w's_g` and
//! `c_g = X_g'X_g w` (`A = (X'X)^{-1}`, `w` its `j`-th column), the bootstrap
//! estimate shifts by `delta = sum v_g d_g` and the `j`-th element of each
//! bootstrap score is `v_g a_g - c_g'delta`.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::PreparedDesign;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::ols::{cv1_correction, safe_t, FittedModel, DEFAULT_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Rademacher,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub weights: WeightKind,
    pub seed: u64,
    pub beta0: f64,
    /// Also invert the test for a confidence interval.
    pub ci: bool,
    /// Bisection tolerance for interval endpoints, in units of the CV1 standard error.
    pub ci_tol: f64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            reps: 999,
            weights: WeightKind::Rademacher,
            seed: 42,
            beta0: 0.0,
            ci: false,
            ci_tol: 1e-6,
            level: DEFAULT_LEVEL,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one replication".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must be in (0,1), got {}", self.level)));
        }
        if !(self.ci_tol > 0.0) {
            return Err(Error::InvalidConfig("ci_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub p_value: f64,
    pub t_hat: f64,
    pub t_stats: Vec<f64>,
    /// Replications whose bootstrap standard error was exactly zero.
    pub degenerate: usize,
    /// Test-inversion interval; a `None` end did not cross within +-20 se.
    pub ci: Option<(Option<f64>, Option<f64>)>,
}

/// Rademacher signs for `reps` replications over `g` clusters, as a
/// `reps x g` matrix. Replication `b` draws from stream `b` of a ChaCha8
/// generator keyed by `seed`, so the draws do not depend on thread count.
pub fn rademacher_signs(seed: u64, reps: usize, g: usize) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(reps, g);
    for b in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        fill_signs(&mut rng, v.row_mut(b).iter_mut());
    }
    v
}

/// Fill a run of entries with independent +-1 from `rng`.
pub fn fill_signs<'a, R: RngCore, I: Iterator<Item = &'a mut f64>>(rng: &mut R, out: I) {
    let mut bits = 0u64;
    for (i, slot) in out.enumerate() {
        if i % 64 == 0 {
            bits = rng.next_u64();
        }
        *slot = if bits & 1 == 1 { 1.0 } else { -1.0 };
        bits >>= 1;
    }
}

/// Every sign pattern over `g` clusters, `2^g x g`.
pub fn all_sign_patterns(g: usize) -> DMatrix<f64> {
    assert!(g < 25, "too many clusters to enumerate");
    DMatrix::from_fn(1 << g, g, |b, h| if (b >> h) & 1 == 1 { 1.0 } else { -1.0 })
}

/// X-only precomputation for repeated WCR tests of coefficient `j`.
#[derive(Debug, Clone)]
pub struct WcrPlan {
    j: usize,
    factor: f64,
    inv_gram: DMatrix<f64>,
    /// Rows `c_g'`, `G x k`.
    c: DMatrix<f64>,
    others: Vec<usize>,
    /// Inverse Gram of the columns other than `j`.
    restricted_inv: Option<DMatrix<f64>>,
    /// Rows `(X_g' xr_j)'`, where `xr_j` is column `j` residualized on the others.
    xj_scores: DMatrix<f64>,
}

/// Restricted scores `X_g' M y` for one sample; the null value enters later.
#[derive(Debug, Clone)]
pub struct NullScores {
    sy: DMatrix<f64>,
}

impl WcrPlan {
    pub fn new(design: &PreparedDesign, inv_gram: &DMatrix<f64>) -> Result<Self> {
        let (g, k, j) = (design.g(), design.k(), design.j);
        if g < 2 {
            return Err(Error::TooFewClusters(g));
        }
        let w = inv_gram.column(j).into_owned();
        let mut c = DMatrix::zeros(g, k);
        for h in 0..g {
            c.row_mut(h).copy_from(&(&design.gram_blocks[h] * &w).transpose());
        }
        let others: Vec<usize> = (0..k).filter(|&i| i != j).collect();
        let restricted_inv = if others.is_empty() {
            None
        } else {
            let sub = design.gram.select_rows(others.iter()).select_columns(others.iter());
            Some(spd_inverse(&sub)?)
        };
        let mut plan = Self {
            j,
            factor: cv1_correction(design.n(), g, design.df_k()),
            inv_gram: inv_gram.clone(),
            c,
            others,
            restricted_inv,
            xj_scores: DMatrix::zeros(g, k),
        };
        let xj = design.x.column(j).into_owned();
        plan.xj_scores = plan.residual_scores(design, &xj);
        Ok(plan)
    }

    /// Per-cluster scores `X_g' (v - X_o (X_o'X_o)^{-1} X_o'v)` where `X_o`
    /// are the columns other than `j`.
    fn residual_scores(&self, design: &PreparedDesign, v: &DVector<f64>) -> DMatrix<f64> {
        let resid = match &self.restricted_inv {
            None => v.clone(),
            Some(inv) => {
                let xo = design.x.select_columns(self.others.iter());
                let coef = inv * xo.tr_mul(v);
                v - xo * coef
            }
        };
        let mut s = DMatrix::zeros(design.g(), design.k());
        for h in 0..design.g() {
            let u = resid.rows(design.starts[h], design.ng[h]);
            s.row_mut(h).copy_from(&design.x_block(h).tr_mul(&u).transpose());
        }
        s
    }

    /// Restricted scores for the outcome `y`.
    pub fn null_scores(&self, design: &PreparedDesign, y: &DVector<f64>) -> NullScores {
        NullScores {
            sy: self.residual_scores(design, y),
        }
    }

    /// Bootstrap t statistics for `H0: beta_j = beta0`; row `b` of `signs`
    /// is one replication. Returns the statistics and the original-sample t,
    /// which is the same computation with all signs `+1`.
    pub fn t_stats(&self, scores: &NullScores, beta0: f64, signs: &DMatrix<f64>) -> (Vec<f64>, f64) {
        let s = &scores.sy - &self.xj_scores * beta0;
        let d = &s * &self.inv_gram;
        let a = d.column(self.j).into_owned();
        let stat = |v: &DMatrix<f64>| -> Vec<f64> {
            let delta = v * &d;
            let q = &delta * self.c.transpose();
            (0..v.nrows())
                .map(|b| {
                    let mut ss = 0.0;
                    for h in 0..v.ncols() {
                        let r = v[(b, h)] * a[h] - q[(b, h)];
                        ss += r * r;
                    }
                    safe_t(delta[(b, self.j)], (self.factor * ss).sqrt())
                })
                .collect()
        };
        let t_hat = stat(&DMatrix::from_element(1, signs.ncols(), 1.0))[0];
        (stat(signs), t_hat)
    }

    pub fn p_value(&self, scores: &NullScores, beta0: f64, signs: &DMatrix<f64>) -> f64 {
        let (t, t_hat) = self.t_stats(scores, beta0, signs);
        symmetric_p(&t, t_hat)
    }
}

/// `#{|t*| >= |t_hat|} / B`.
pub fn symmetric_p(t_stats: &[f64], t_hat: f64) -> f64 {
    let hits = t_stats.iter().filter(|t| t.abs() >= t_hat.abs()).count();
    hits as f64 / t_stats.len() as f64
}

/// WCR p value using a caller-supplied sign matrix.
pub fn wcr_pvalue_with_signs(
    design: &PreparedDesign,
    model: &FittedModel,
    beta0: f64,
    signs: &DMatrix<f64>,
) -> Result<BootstrapResult> {
    let plan = WcrPlan::new(design, &model.inv_gram)?;
    let scores = plan.null_scores(design, &design.y);
    let (t_stats, t_hat) = plan.t_stats(&scores, beta0, signs);
    Ok(BootstrapResult {
        p_value: symmetric_p(&t_stats, t_hat),
        t_hat,
        degenerate: t_stats.iter().filter(|t| t.is_infinite()).count(),
        t_stats,
        ci: None,
    })
}

pub fn wcr_pvalue(design: &PreparedDesign, model: &FittedModel, config: &BootstrapConfig) -> Result<BootstrapResult> {
    config.validate()?;
    let signs = rademacher_signs(config.seed, config.reps, design.g());
    let mut out = wcr_pvalue_with_signs(design, model, config.beta0, &signs)?;
    if config.ci {
        out.ci = Some(wcr_ci_with_signs(design, model, config, &signs)?);
    }
    Ok(out)
}

pub fn wcr_ci(
    design: &PreparedDesign,
    model: &FittedModel,
    config: &BootstrapConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    config.validate()?;
    let signs = rademacher_signs(config.seed, config.reps, design.g());
    wcr_ci_with_signs(design, model, config, &signs)
}

const CI_SEARCH_SE: usize = 20;

/// Invert the WCR test: walk outward from `beta_j` in steps of one CV1
/// standard error until the p value falls below `1 - level`, then bisect.
/// The same signs are used at every trial value.
fn wcr_ci_with_signs(
    design: &PreparedDesign,
    model: &FittedModel,
    config: &BootstrapConfig,
    signs: &DMatrix<f64>,
) -> Result<(Option<f64>, Option<f64>)> {
    let plan = WcrPlan::new(design, &model.inv_gram)?;
    let scores = plan.null_scores(design, &design.y);
    let alpha = 1.0 - config.level;
    let beta = model.beta_j();
    let cv1 = crate::ols::sandwich(&model.inv_gram, &model.scores) * model.cv1_correction();
    let se = cv1[(model.j, model.j)].sqrt();
    if !(se > 0.0) {
        return Ok((None, None));
    }
    let inside = |b0: f64| plan.p_value(&scores, b0, signs) >= alpha;
    let bound = |dir: f64| -> Option<f64> {
        let mut lo = 0.0;
        let mut hi = None;
        for step in 1..=CI_SEARCH_SE {
            let m = step as f64;
            if inside(beta + dir * m * se) {
                lo = m;
            } else {
                hi = Some(m);
                break;
            }
        }
        let mut hi = hi?;
        while hi - lo > config.ci_tol {
            let mid = 0.5 * (lo + hi);
            if inside(beta + dir * mid * se) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(beta + dir * 0.5 * (lo + hi) * se)
    };
    Ok((bound(-1.0), bound(1.0)))
}
