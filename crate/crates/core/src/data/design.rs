//! Expansion of a [`ModelSpec`] into a numeric, cluster-sorted design with
//! per-cluster Gram and moment blocks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_sample_filter, Dataset, Filter};
use crate::error::{Error, Result};
use crate::linalg::independent_columns;

/// Relative tolerance for the rank check on the Gram matrix.
pub const RANK_TOL: f64 = 1e-10;

/// Declarative description of the regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Regressor whose coefficient is of interest.
    pub coef_var: String,
    pub yvar: String,
    pub xvars: Vec<String>,
    /// Categorical variables expanded to full dummy sets.
    pub fevars: Vec<String>,
    /// Categorical variable partialed out by the within transform.
    pub absorb: Option<String>,
    pub cluster: String,
    pub sample: Option<String>,
    /// Ignored when `fevars` is nonempty or `absorb` is set.
    pub add_constant: bool,
}

impl ModelSpec {
    pub fn new(coef_var: impl Into<String>, yvar: impl Into<String>, cluster: impl Into<String>) -> Self {
        Self {
            coef_var: coef_var.into(),
            yvar: yvar.into(),
            xvars: Vec::new(),
            fevars: Vec::new(),
            absorb: None,
            cluster: cluster.into(),
            sample: None,
            add_constant: true,
        }
    }

    pub fn xvars<I: IntoIterator<Item = S>, S: Into<String>>(mut self, vars: I) -> Self {
        self.xvars = vars.into_iter().map(Into::into).collect();
        self
    }

    pub fn fevars<I: IntoIterator<Item = S>, S: Into<String>>(mut self, vars: I) -> Self {
        self.fevars = vars.into_iter().map(Into::into).collect();
        self
    }

    pub fn absorb(mut self, var: impl Into<String>) -> Self {
        self.absorb = Some(var.into());
        self
    }

    pub fn sample(mut self, expr: impl Into<String>) -> Self {
        self.sample = Some(expr.into());
        self
    }

    pub fn constant(mut self, on: bool) -> Self {
        self.add_constant = on;
        self
    }

    /// Whether a column of ones is actually added.
    pub fn effective_constant(&self) -> bool {
        self.add_constant && self.fevars.is_empty() && self.absorb.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fevars.contains(&self.coef_var) {
            return Err(Error::InvalidSpec(format!(
                "`{}` cannot be both the coefficient of interest and a factor variable",
                self.coef_var
            )));
        }
        if self.absorb.as_deref() == Some(self.coef_var.as_str()) {
            return Err(Error::InvalidSpec(format!(
                "`{}` cannot be both the coefficient of interest and the absorbed variable",
                self.coef_var
            )));
        }
        if self.xvars.contains(&self.coef_var) {
            return Err(Error::InvalidSpec(format!(
                "`{}` is listed twice among the regressors",
                self.coef_var
            )));
        }
        Ok(())
    }

    /// Every column the model reads, including those named by the filter.
    pub fn used_columns(&self) -> Result<Vec<String>> {
        let mut cols = vec![self.yvar.clone(), self.coef_var.clone()];
        cols.extend(self.xvars.iter().cloned());
        cols.extend(self.fevars.iter().cloned());
        cols.extend(self.absorb.iter().cloned());
        cols.push(self.cluster.clone());
        if let Some(expr) = &self.sample {
            cols.extend(Filter::parse(expr)?.columns());
        }
        let mut seen = Vec::new();
        cols.retain(|c| {
            if seen.contains(c) {
                false
            } else {
                seen.push(c.clone());
                true
            }
        });
        Ok(cols)
    }
}

/// Outcome of the absorb/cluster nesting check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NestingReport {
    pub ok: bool,
    /// Absorb levels observed in more than one cluster.
    pub offending_levels: Vec<String>,
}

/// Numeric design sorted so that each cluster occupies a contiguous block of rows.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Cluster index of each row (non-decreasing).
    pub cluster_ids: Vec<usize>,
    pub cluster_labels: Vec<String>,
    pub ng: Vec<usize>,
    /// `starts[g]..starts[g + 1]` are the rows of cluster `g`.
    pub starts: Vec<usize>,
    pub gram_blocks: Vec<DMatrix<f64>>,
    pub moment_blocks: Vec<DVector<f64>>,
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    pub column_names: Vec<String>,
    pub dropped_columns: Vec<String>,
    /// Column of the coefficient of interest.
    pub j: usize,
    pub absorbed: bool,
    /// False when an absorbed variable is not nested within clusters; the
    /// jackknife-based quantities are then invalid.
    pub absorb_nested: bool,
    /// Levels of the absorbed variable. They count as parameters in the CV1
    /// small-sample factor, as the equivalent dummy regression would.
    pub absorbed_levels: usize,
    /// Cluster or nested-within-cluster fixed effects are present.
    pub fe_nested: bool,
    /// Rows in original input order, per design row.
    pub source_rows: Vec<usize>,
}

fn first_appearance_index(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut map: HashMap<&str, usize> = HashMap::new();
    let mut levels = Vec::new();
    let ids = labels
        .iter()
        .map(|l| {
            *map.entry(l.as_str()).or_insert_with(|| {
                levels.push(l.clone());
                levels.len() - 1
            })
        })
        .collect();
    (ids, levels)
}

fn group_demean(values: &mut [f64], groups: &[usize], n_groups: usize) {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1;
    }
    for (v, &g) in values.iter_mut().zip(groups) {
        *v -= sums[g] / counts[g] as f64;
    }
}

/// Replace each column of `columns` by deviations from its group means.
pub fn within_transform(columns: &mut [Vec<f64>], groups: &[String]) {
    let (ids, levels) = first_appearance_index(groups);
    for col in columns.iter_mut() {
        group_demean(col, &ids, levels.len());
    }
}

fn nested_in(inner: &[String], clusters: &[String]) -> Vec<String> {
    let mut home: HashMap<&str, &str> = HashMap::new();
    let mut offending: Vec<String> = Vec::new();
    for (a, c) in inner.iter().zip(clusters) {
        match home.get(a.as_str()) {
            None => {
                home.insert(a, c);
            }
            Some(prev) if *prev != c.as_str() => {
                if !offending.contains(a) {
                    offending.push(a.clone());
                }
            }
            _ => {}
        }
    }
    offending
}

/// Check that every level of the absorbed variable lies inside a single cluster.
pub fn validate_absorb_nesting(data: &Dataset, spec: &ModelSpec) -> Result<NestingReport> {
    let absorb = spec
        .absorb
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("no absorb variable given".into()))?;
    let offending = nested_in(
        data.column(absorb)?.raw(),
        data.column(&spec.cluster)?.raw(),
    );
    Ok(NestingReport {
        ok: offending.is_empty(),
        offending_levels: offending,
    })
}

/// Expand `spec` against `data`: filter, dummy expansion, optional
/// absorption, cluster sort, Gram blocks and rank check.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<PreparedDesign> {
    spec.validate()?;
    let filtered;
    let data = match &spec.sample {
        Some(expr) => {
            filtered = apply_sample_filter(data, &Filter::parse(expr)?)?;
            &filtered
        }
        None => data,
    };
    if data.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let n = data.n_rows();

    let mut y = data.column(&spec.yvar)?.require_numeric()?.to_vec();
    let cluster_raw = data.column(&spec.cluster)?.raw();

    // candidate columns, in the order used for the rank check
    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if spec.effective_constant() {
        names.push("_cons".into());
        cols.push(vec![1.0; n]);
    }
    for v in &spec.xvars {
        names.push(v.clone());
        cols.push(data.column(v)?.require_numeric()?.to_vec());
    }
    let mut fe_nested = false;
    for f in &spec.fevars {
        let raw = data.column(f)?.raw();
        if nested_in(raw, cluster_raw).is_empty() {
            fe_nested = true;
        }
        let (ids, levels) = first_appearance_index(raw);
        for (lvl_idx, lvl) in levels.iter().enumerate() {
            names.push(format!("{f}={lvl}"));
            cols.push(ids.iter().map(|&i| if i == lvl_idx { 1.0 } else { 0.0 }).collect());
        }
    }
    names.push(spec.coef_var.clone());
    cols.push(data.column(&spec.coef_var)?.require_numeric()?.to_vec());

    let mut absorb_nested = true;
    let mut absorbed_levels = 0;
    if let Some(a) = &spec.absorb {
        fe_nested = true;
        absorb_nested = validate_absorb_nesting(data, spec)?.ok;
        let groups = data.column(a)?.raw();
        absorbed_levels = first_appearance_index(groups).1.len();
        within_transform(std::slice::from_mut(&mut y), groups);
        within_transform(&mut cols, groups);
    }

    let (ids, labels) = first_appearance_index(cluster_raw);
    let x = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
    let candidate = assemble(DVector::from_vec(y), x, &ids, labels, names)?;

    let kept = independent_columns(&candidate.gram, RANK_TOL);
    let k_cand = candidate.column_names.len();
    let coef_idx = k_cand - 1;
    if !kept.contains(&coef_idx) {
        return Err(Error::NotIdentified(spec.coef_var.clone()));
    }
    let mut design = if kept.len() == k_cand {
        candidate
    } else {
        let dropped = (0..k_cand)
            .filter(|c| !kept.contains(c))
            .map(|c| candidate.column_names[c].clone())
            .collect();
        let mut d = candidate.select_columns(&kept);
        d.dropped_columns = dropped;
        d
    };
    design.j = design.column_names.len() - 1;
    design.absorbed = spec.absorb.is_some();
    design.absorb_nested = absorb_nested;
    design.absorbed_levels = absorbed_levels;
    design.fe_nested = fe_nested;
    if design.column_names.len() >= design.n() {
        return Err(Error::InvalidSpec(format!(
            "{} regressors for {} observations",
            design.k(),
            design.n()
        )));
    }
    Ok(design)
}

/// Sort rows by cluster and accumulate the per-cluster blocks.
fn assemble(
    y: DVector<f64>,
    x: DMatrix<f64>,
    ids: &[usize],
    labels: Vec<String>,
    names: Vec<String>,
) -> Result<PreparedDesign> {
    let n = y.len();
    let g_count = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&r| ids[r]);
    let x = x.select_rows(order.iter());
    let y = DVector::from_iterator(n, order.iter().map(|&r| y[r]));
    let cluster_ids: Vec<usize> = order.iter().map(|&r| ids[r]).collect();

    let mut ng = vec![0usize; g_count];
    for &g in &cluster_ids {
        ng[g] += 1;
    }
    if let Some(g) = ng.iter().position(|&c| c == 0) {
        return Err(Error::InvalidSpec(format!("cluster `{}` is empty", labels[g])));
    }
    let mut starts = Vec::with_capacity(g_count + 1);
    starts.push(0);
    for &c in &ng {
        starts.push(starts.last().unwrap() + c);
    }
    let k = x.ncols();
    let mut design = PreparedDesign {
        y,
        x,
        cluster_ids,
        cluster_labels: labels,
        ng,
        starts,
        gram_blocks: Vec::new(),
        moment_blocks: Vec::new(),
        gram: DMatrix::zeros(k, k),
        moment: DVector::zeros(k),
        column_names: names,
        dropped_columns: Vec::new(),
        j: 0,
        absorbed: false,
        absorb_nested: true,
        absorbed_levels: 0,
        fe_nested: false,
        source_rows: order,
    };
    design.refresh_blocks();
    Ok(design)
}

impl PreparedDesign {
    /// Build a design directly from arrays. `clusters[i]` is any cluster key
    /// for row `i`; levels are numbered by first appearance. Fails if the
    /// design is rank deficient.
    pub fn from_parts(
        y: DVector<f64>,
        x: DMatrix<f64>,
        clusters: &[usize],
        j: usize,
    ) -> Result<Self> {
        if y.len() != x.nrows() || clusters.len() != y.len() {
            return Err(Error::InvalidSpec("y, X and cluster ids differ in length".into()));
        }
        if j >= x.ncols() {
            return Err(Error::InvalidSpec(format!("column {j} out of range")));
        }
        let raw: Vec<String> = clusters.iter().map(|c| c.to_string()).collect();
        let (ids, labels) = first_appearance_index(&raw);
        let names = (0..x.ncols()).map(|c| format!("x{c}")).collect();
        let mut d = assemble(y, x, &ids, labels, names)?;
        d.j = j;
        let kept = independent_columns(&d.gram, RANK_TOL);
        if kept.len() < d.k() {
            let bad = (0..d.k())
                .filter(|c| !kept.contains(c))
                .map(|c| d.column_names[c].clone())
                .collect();
            return Err(Error::RankDeficient(bad));
        }
        if d.k() >= d.n() {
            return Err(Error::InvalidSpec("more regressors than observations".into()));
        }
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Parameter count used in the CV1 factor: `k` plus absorbed levels.
    pub fn df_k(&self) -> usize {
        self.k() + self.absorbed_levels
    }

    pub fn g(&self) -> usize {
        self.ng.len()
    }

    pub fn x_block(&self, g: usize) -> DMatrixView<'_, f64> {
        self.x.rows(self.starts[g], self.ng[g])
    }

    pub fn y_block(&self, g: usize) -> DVectorView<'_, f64> {
        self.y.rows(self.starts[g], self.ng[g])
    }

    /// Name of the coefficient of interest.
    pub fn coef_name(&self) -> &str {
        &self.column_names[self.j]
    }

    fn refresh_blocks(&mut self) {
        let g_count = self.g();
        let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = (0..g_count)
            .into_par_iter()
            .map(|g| {
                let xg = self.x_block(g);
                (xg.tr_mul(&xg), xg.tr_mul(&self.y_block(g)))
            })
            .collect();
        let k = self.k();
        let mut gram = DMatrix::zeros(k, k);
        let mut moment = DVector::zeros(k);
        for (xx, xy) in &blocks {
            gram += xx;
            moment += xy;
        }
        self.gram = gram;
        self.moment = moment;
        let (gb, mb) = blocks.into_iter().unzip();
        self.gram_blocks = gb;
        self.moment_blocks = mb;
    }

    /// Replace the outcome (in design row order) and recompute the moment blocks.
    pub fn set_y(&mut self, y: DVector<f64>) {
        assert_eq!(y.len(), self.n());
        self.y = y;
        let mut moment = DVector::zeros(self.k());
        let blocks: Vec<DVector<f64>> = (0..self.g())
            .map(|g| self.x_block(g).tr_mul(&self.y_block(g)))
            .collect();
        for b in &blocks {
            moment += b;
        }
        self.moment = moment;
        self.moment_blocks = blocks;
    }

    fn select_columns(&self, cols: &[usize]) -> PreparedDesign {
        let x = self.x.select_columns(cols.iter());
        let names = cols.iter().map(|&c| self.column_names[c].clone()).collect();
        let mut d = PreparedDesign {
            x,
            column_names: names,
            gram_blocks: Vec::new(),
            moment_blocks: Vec::new(),
            gram: DMatrix::zeros(cols.len(), cols.len()),
            moment: DVector::zeros(cols.len()),
            ..self.clone()
        };
        d.refresh_blocks();
        d
    }

    /// Rows of every cluster except `g`, as dense `(y, X)`.
    pub fn without_cluster(&self, g: usize) -> (DVector<f64>, DMatrix<f64>) {
        let rows: Vec<usize> = (0..self.n())
            .filter(|&r| self.cluster_ids[r] != g)
            .collect();
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        (y, x)
    }
}
