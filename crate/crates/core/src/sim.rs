//! Monte Carlo rejection frequencies for CV1, CV3 and WCR bootstrap tests on
//! designs with unbalanced cluster sizes and sparse binary regressors.
//!
//! Random numbers come from ChaCha8 streams keyed by `(case, replication)`,
//! so results are identical for any number of threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{fill_signs, WcrPlan};
use crate::data::PreparedDesign;
use crate::diagnostics::{effective_clusters, leverage, partial_leverage, scaled_variance, summarize, Summary};
use crate::error::{Error, Result};
use crate::jackknife::DeleteOneSolver;
use crate::ols::{cv1_correction, fit_ols};
use crate::tdist::two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    IidNormal,
    /// `u = sqrt(rho) z_g + sqrt(1 - rho) e`, unit variance.
    Equicorrelated { rho: f64 },
}

impl Default for ErrorModel {
    fn default() -> Self {
        ErrorModel::Equicorrelated { rho: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub g: usize,
    pub n: usize,
    pub gamma: f64,
    pub p_c: f64,
    /// Binary regressors besides the constant; the first is tested.
    pub n_regressors: usize,
    pub reps: usize,
    /// Bootstrap replications per test; 0 skips the bootstrap.
    pub boot_reps: usize,
    /// Nominal size of the tests.
    pub level: f64,
    pub seed: u64,
    pub error_model: ErrorModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            g: 20,
            n: 2000,
            gamma: 2.0,
            p_c: 0.5,
            n_regressors: 5,
            reps: 1000,
            boot_reps: 399,
            level: 0.05,
            seed: 1,
            error_model: ErrorModel::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.p_c > 0.0 && self.p_c <= 1.0) {
            return bad(format!("p_c must be in (0,1], got {}", self.p_c));
        }
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if self.n_regressors == 0 {
            return bad("need at least one regressor".into());
        }
        if self.g < 2 {
            return Err(Error::TooFewClusters(self.g));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return bad(format!("level must be in (0,1], got {}", self.level));
        }
        if let ErrorModel::Equicorrelated { rho } = self.error_model {
            if !(0.0..=1.0).contains(&rho) {
                return bad(format!("error correlation must be in [0,1], got {rho}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case_id: usize,
    pub g: usize,
    pub n: usize,
    pub gamma: f64,
    pub p_c: f64,
    pub vs_partial: f64,
    pub gstar0: f64,
    pub leverage: Summary,
    pub partial_leverage: Summary,
    pub rej_cv1: f64,
    /// NaN for dropped cases.
    pub rej_cv3: f64,
    /// NaN when the bootstrap was skipped.
    pub rej_wcr: f64,
    /// Deleting some cluster leaves a singular Gram matrix.
    pub dropped: bool,
    /// Design draws needed to get a full-rank `X`.
    pub attempts: usize,
}

/// `N_g = floor(N exp(gamma g/G) / sum_j exp(gamma j/G))` for `g < G`; the
/// last cluster takes the remainder.
pub fn cluster_sizes(n: usize, g: usize, gamma: f64) -> Result<Vec<usize>> {
    if g == 0 || n < g {
        return Err(Error::InfeasibleSizes(format!("need N >= G >= 1, got N={n}, G={g}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InfeasibleSizes(format!("gamma must be >= 0, got {gamma}")));
    }
    let weights: Vec<f64> = (1..=g).map(|i| (gamma * i as f64 / g as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights[..g - 1]
        .iter()
        .map(|w| (n as f64 * w / total).floor() as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    sizes.push(n - used);
    if let Some(pos) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InfeasibleSizes(format!("cluster {} would be empty", pos + 1)));
    }
    Ok(sizes)
}

fn stream_rng(seed: u64, case: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((case as u64) << 32) | rep as u64);
    rng
}

/// One draw of `X`: a constant and `n_regressors` binary columns. Each
/// column is switched on in a cluster with probability `p_c`; switched-on
/// entries are Bernoulli(1/2), the rest are 0. The test column is index 1.
pub fn generate_design<R: Rng>(config: &SimConfig, sizes: &[usize], rng: &mut R) -> Result<PreparedDesign> {
    let n: usize = sizes.iter().sum();
    let k = config.n_regressors + 1;
    let mut x = DMatrix::zeros(n, k);
    x.column_mut(0).fill(1.0);
    let mut clusters = Vec::with_capacity(n);
    for (g, &ng) in sizes.iter().enumerate() {
        clusters.extend(std::iter::repeat_n(g, ng));
    }
    for col in 1..k {
        let mut start = 0;
        for &ng in sizes {
            if rng.random_bool(config.p_c) {
                for i in start..start + ng {
                    x[(i, col)] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                }
            }
            start += ng;
        }
    }
    PreparedDesign::from_parts(DVector::zeros(n), x, &clusters, 1)
}

const MAX_DESIGN_ATTEMPTS: usize = 1000;

/// Draw designs for `case` until one has full rank.
pub fn draw_design(config: &SimConfig, case: usize) -> Result<(PreparedDesign, usize)> {
    config.validate()?;
    let sizes = cluster_sizes(config.n, config.g, config.gamma)?;
    let mut rng = stream_rng(config.seed, case, 0);
    for attempt in 1..=MAX_DESIGN_ATTEMPTS {
        match generate_design(config, &sizes, &mut rng) {
            Ok(d) => return Ok((d, attempt)),
            Err(Error::RankDeficient(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidConfig(format!(
        "no full-rank design in {MAX_DESIGN_ATTEMPTS} draws; p_c too small?"
    )))
}

fn draw_errors<R: Rng>(model: ErrorModel, design: &PreparedDesign, rng: &mut R) -> DVector<f64> {
    let mut u = DVector::zeros(design.n());
    match model {
        ErrorModel::IidNormal => u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
        ErrorModel::Equicorrelated { rho } => {
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            for g in 0..design.g() {
                let z: f64 = rng.sample(StandardNormal);
                for i in design.starts[g]..design.starts[g + 1] {
                    let e: f64 = rng.sample(StandardNormal);
                    u[i] = a * z + b * e;
                }
            }
        }
    }
    u
}

/// Rejection frequencies for `H0: beta_j = 0` over `config.reps` draws of
/// `y` with the design held fixed. The true coefficients are all zero.
pub fn run_case(config: &SimConfig, design: &PreparedDesign, case_id: usize, attempts: usize) -> Result<CaseResult> {
    config.validate()?;
    let model = fit_ols(design)?;
    let (g, j) = (design.g(), design.j);
    let lev = leverage(design, &model);
    let plev = partial_leverage(design, j)?;
    let vs_partial = scaled_variance(&plev).unwrap_or(f64::NAN);
    let gstar0 = effective_clusters(design, &model, None)?.gstar0;

    let solver = DeleteOneSolver::new(design);
    let dropped = solver.any_singular();
    let plan = if config.boot_reps > 0 { Some(WcrPlan::new(design, &model.inv_gram)?) } else { None };
    let a = &model.inv_gram;
    let w = a.column(j).into_owned();
    let factor = cv1_correction(design.n(), g, design.df_k());
    let dof = (g - 1) as f64;
    let alpha = config.level;

    let outcomes: Vec<[bool; 3]> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(config.seed, case_id, rep + 1);
            let y = draw_errors(config.error_model, design, &mut rng);
            let blocks: Vec<DVector<f64>> = (0..g)
                .map(|h| design.x_block(h).tr_mul(&y.rows(design.starts[h], design.ng[h])))
                .collect();
            let moment = blocks.iter().fold(DVector::zeros(design.k()), |acc, b| acc + b);
            let beta = a * &moment;
            let bj = beta[j];
            let ss: f64 = blocks
                .iter()
                .zip(&design.gram_blocks)
                .map(|(m, gb)| {
                    let s = w.dot(&(m - gb * &beta));
                    s * s
                })
                .sum();
            let t1 = bj / (factor * ss).sqrt();
            let rej1 = two_sided_p(t1, dof) <= alpha;
            let rej3 = !dropped && {
                let del = solver.solve_j(&moment, &blocks);
                let v3: f64 = del.iter().map(|b| (b - bj) * (b - bj)).sum::<f64>() * (g as f64 - 1.0) / g as f64;
                two_sided_p(bj / v3.sqrt(), dof) <= alpha
            };
            let rejw = plan.as_ref().is_some_and(|plan| {
                let mut signs = DMatrix::zeros(config.boot_reps, g);
                for b in 0..config.boot_reps {
                    fill_signs(&mut rng, signs.row_mut(b).iter_mut());
                }
                let scores = plan.null_scores(design, &y);
                plan.p_value(&scores, 0.0, &signs) <= alpha
            });
            [rej1, rej3, rejw]
        })
        .collect();

    let freq = |i: usize| outcomes.iter().filter(|o| o[i]).count() as f64 / config.reps as f64;
    Ok(CaseResult {
        case_id,
        g,
        n: design.n(),
        gamma: config.gamma,
        p_c: config.p_c,
        vs_partial,
        gstar0,
        leverage: summarize(&lev),
        partial_leverage: summarize(&plev),
        rej_cv1: freq(0),
        rej_cv3: if dropped { f64::NAN } else { freq(1) },
        rej_wcr: if plan.is_some() { freq(2) } else { f64::NAN },
        dropped,
        attempts,
    })
}

/// Draw the design for `case` and run it.
pub fn simulate_case(config: &SimConfig, case: usize) -> Result<CaseResult> {
    let (design, attempts) = draw_design(config, case)?;
    run_case(config, &design, case, attempts)
}

/// A batch of cases sharing `base`, with `gamma` drawn uniformly from
/// `gamma_range` when given and `p_c` cycling through `pc_values`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchConfig {
    pub base: SimConfig,
    pub cases: usize,
    pub gamma_range: Option<(f64, f64)>,
    pub pc_values: Vec<f64>,
}

impl BatchConfig {
    /// Settings for case `i`.
    pub fn case_config(&self, i: usize) -> SimConfig {
        let mut cfg = self.base.clone();
        if let Some((lo, hi)) = self.gamma_range {
            // stream rep index u32::MAX is reserved for case-level draws
            let mut rng = stream_rng(self.base.seed, i, u32::MAX as usize);
            cfg.gamma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        if !self.pc_values.is_empty() {
            cfg.p_c = self.pc_values[i % self.pc_values.len()];
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 {
            return Err(Error::InvalidConfig("cases must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.gamma_range {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(Error::InvalidConfig(format!("bad gamma range [{lo}, {hi}]")));
            }
        }
        for i in 0..self.cases.min(self.pc_values.len().max(1)) {
            self.case_config(i).validate()?;
        }
        Ok(())
    }
}

pub fn run_batch(batch: &BatchConfig) -> Result<Vec<CaseResult>> {
    batch.validate()?;
    (0..batch.cases).map(|i| simulate_case(&batch.case_config(i), i)).collect()
}

/// Mean rejection frequency per method over cases that were not dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchSummary {
    pub cases: usize,
    pub dropped: usize,
    pub cv1: f64,
    pub cv3: f64,
    pub wcr: f64,
}

pub fn summarize_batch(results: &[CaseResult]) -> BatchSummary {
    let kept: Vec<&CaseResult> = results.iter().filter(|r| !r.dropped).collect();
    let mean = |f: fn(&CaseResult) -> f64| kept.iter().map(|r| f(r)).sum::<f64>() / kept.len() as f64;
    BatchSummary {
        cases: results.len(),
        dropped: results.len() - kept.len(),
        cv1: mean(|r| r.rej_cv1),
        cv3: mean(|r| r.rej_cv3),
        wcr: mean(|r| r.rej_wcr),
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "case_id", "G", "N", "gamma", "p_c", "Vs_partial", "gstar0", "rej_cv1", "rej_cv3", "rej_wcr", "dropped",
];

/// One row per case. Floats use the shortest representation that round-trips.
pub fn write_csv<W: Write>(results: &[CaseResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.case_id.to_string(),
            r.g.to_string(),
            r.n.to_string(),
            r.gamma.to_string(),
            r.p_c.to_string(),
            r.vs_partial.to_string(),
            r.gstar0.to_string(),
            r.rej_cv1.to_string(),
            r.rej_cv3.to_string(),
            r.rej_wcr.to_string(),
            u8::from(r.dropped).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<output>".into(), source: e })?;
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut e = i;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[i]] {
            e += 1;
        }
        let avg = (i + e) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=e] {
            r[k] = avg;
        }
        i = e + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_sum_and_spread() {
        for (g, n, gamma) in [(20, 2000, 2.0), (20, 2000, 4.0), (30, 3000, 3.3), (7, 50, 0.0)] {
            let s = cluster_sizes(n, g, gamma).unwrap();
            assert_eq!(s.len(), g);
            assert_eq!(s.iter().sum::<usize>(), n);
        }
        let s = cluster_sizes(2000, 20, 2.0).unwrap();
        assert_eq!((*s.iter().min().unwrap(), *s.iter().max().unwrap()), (32, 229));
        let s = cluster_sizes(2000, 20, 4.0).unwrap();
        assert_eq!((*s.iter().min().unwrap(), *s.iter().max().unwrap()), (8, 378));
        assert_eq!(cluster_sizes(100, 10, 0.0).unwrap(), vec![10; 10]);
    }

    #[test]
    fn infeasible_sizes() {
        assert!(matches!(cluster_sizes(5, 10, 0.0), Err(Error::InfeasibleSizes(_))));
        assert!(matches!(cluster_sizes(12, 10, 8.0), Err(Error::InfeasibleSizes(_))));
    }

    #[test]
    fn full_activation_design() {
        let cfg = SimConfig { g: 5, n: 100, p_c: 1.0, ..Default::default() };
        let (d, _) = draw_design(&cfg, 0).unwrap();
        for col in 1..6 {
            for g in 0..5 {
                let xb = d.x_block(g);
                assert!(xb.column(col).iter().any(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn level_one_rejects_everything() {
        let cfg = SimConfig { g: 6, n: 60, reps: 20, boot_reps: 19, level: 1.0, p_c: 1.0, ..Default::default() };
        let r = simulate_case(&cfg, 0).unwrap();
        assert_eq!((r.rej_cv1, r.rej_cv3, r.rej_wcr), (1.0, 1.0, 1.0));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn csv_is_deterministic() {
        let batch = BatchConfig {
            base: SimConfig { g: 6, n: 60, reps: 10, boot_reps: 9, ..Default::default() },
            cases: 3,
            gamma_range: Some((2.0, 4.0)),
            pc_values: vec![0.5, 1.0],
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&run_batch(&batch).unwrap(), &mut a).unwrap();
        write_csv(&run_batch(&batch).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("case_id,G,N,gamma,p_c,Vs_partial,gstar0,rej_cv1,rej_cv3,rej_wcr,dropped\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
