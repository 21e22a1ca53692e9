#![allow(dead_code)]

use clustdiag::data::{Column, Dataset, PreparedDesign};
use clustdiag::jackknife::DeleteOneSolver;
use clustdiag::nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random clustered regression: `G` in [3,15], `N_g` in [1,20], `k` in
/// [1,5] with a constant, continuous columns and 0/1 dummies alternating.
/// The last column is the coefficient of interest.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Option<PreparedDesign> {
    let g = rng.random_range(3..=15);
    let k = rng.random_range(1..=5);
    let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(1..=20)).collect();
    let n: usize = sizes.iter().sum();
    if n <= k {
        return None;
    }
    let clusters: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let shift: Vec<f64> = (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let x = DMatrix::from_fn(n, k, |_, c| match c {
        0 => 1.0,
        c if c % 2 == 1 => rng.sample::<f64, _>(StandardNormal),
        _ => f64::from(u8::from(rng.random_bool(0.5))),
    });
    let y = DVector::from_fn(n, |r, _| shift[clusters[r]] + rng.sample::<f64, _>(StandardNormal) * (1.0 + x[(r, k - 1)].abs()));
    PreparedDesign::from_parts(y, x, &clusters, k - 1).ok()
}

/// Like [`random_instance`] but retried until every delete-one Gram matrix is invertible.
pub fn regular_instance(rng: &mut ChaCha8Rng) -> PreparedDesign {
    loop {
        if let Some(d) = random_instance(rng) {
            if !DeleteOneSolver::new(&d).any_singular() {
                return d;
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// Dataset from named numeric columns.
pub fn dataset(cols: &[(&str, Vec<f64>)]) -> Dataset {
    Dataset::new(cols.iter().map(|(n, v)| Column::from_f64(*n, v)).collect()).unwrap()
}

/// Observation-level hat diagonal from a thin QR of `X`, independent of the
/// Gram-matrix route.
pub fn hat_diagonal(x: &DMatrix<f64>) -> Vec<f64> {
    let q = x.clone().qr().q();
    q.row_iter().map(|r| r.norm_squared()).collect()
}

/// Panel-style data with a cluster fixed effect, two regressors and a
/// treatment dummy `d`; clusters have unequal sizes.
pub fn panel(seed: u64, g: usize) -> Dataset {
    let mut r = rng(seed);
    let (mut cl, mut x1, mut x2, mut d, mut y) = (vec![], vec![], vec![], vec![], vec![]);
    for c in 0..g {
        let ng = 2 + r.random_range(0..(3 * c + 5));
        let fe: f64 = r.sample(StandardNormal);
        let share = r.random_range(0.1..0.9);
        for _ in 0..ng {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.random_range(-1.0..1.0) + 0.3 * c as f64;
            let t = f64::from(u8::from(r.random_bool(share)));
            let e: f64 = r.sample(StandardNormal);
            cl.push((c + 1) as f64);
            x1.push(a);
            x2.push(b);
            d.push(t);
            y.push(fe + 0.5 * a - 0.2 * b + 0.3 * t + e);
        }
    }
    dataset(&[("firm", cl), ("x1", x1), ("x2", x2), ("d", d), ("y", y)])
}
