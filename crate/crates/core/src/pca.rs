//! One-dimensional PCA of the positional table by power iteration.

use std::fmt::Write as _;

use log::warn;
use pathe_tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TopComponent {
    /// Unit vector; its largest-magnitude entry is positive.
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub iterations: usize,
}

fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (rows.len(), rows[0].len());
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let ci = r[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += ci * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.iter_mut().for_each(|c| *c /= denom);
    (mean, cov)
}

/// Leading eigenvector of the covariance of `rows`. `None` when the rows
/// have no spread.
pub fn top_component(rows: &[Vec<f64>]) -> Option<TopComponent> {
    if rows.len() < 2 {
        return None;
    }
    let d = rows[0].len();
    let (_, cov) = covariance(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v)?;
    let mut eigenvalue = 0.0;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut w: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum())
            .collect();
        eigenvalue = normalize(&mut w)?;
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = w;
        if delta < TOLERANCE {
            break;
        }
    }
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some(TopComponent {
        vector: v,
        eigenvalue,
        iterations,
    })
}

fn normalize(v: &mut [f64]) -> Option<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-300 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(norm)
}

/// `(position, projection)` for every positional row except the pad row 0.
/// Rows with no spread project to zero (with a warning).
pub fn positional_pca<T: Scalar>(table: &Tensor<T>) -> Vec<(usize, f64)> {
    let d = table.last_dim();
    let rows: Vec<Vec<f64>> = table
        .to_f64_vec()
        .chunks(d)
        .skip(1)
        .map(<[f64]>::to_vec)
        .collect();
    project_rows(&rows)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i + 1, p))
        .collect()
}

/// Projection of each centred row onto the top component.
pub fn project_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let distinct = rows.iter().any(|r| r != &rows[0]);
    let component = if distinct { top_component(rows) } else { None };
    let Some(c) = component else {
        warn!("positional rows have no spread; projections are all zero");
        return vec![0.0; rows.len()];
    };
    let (mean, _) = covariance(rows);
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&c.vector)
                .map(|((x, m), v)| (x - m) * v)
                .sum()
        })
        .collect()
}

pub fn to_csv(projections: &[(usize, f64)]) -> String {
    let mut s = String::from("position,component_value\n");
    for (p, v) in projections {
        let _ = writeln!(s, "{p},{v:.9}");
    }
    s
}
