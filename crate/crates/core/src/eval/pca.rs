use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{dot, Tensor};
use rand::Rng;

pub const POWER_TOLERANCE: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// `m x components` coordinates.
    pub coords: Tensor,
    /// Unit principal directions, one per row.
    pub directions: Tensor,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    /// Set when the input has (numerically) zero variance.
    pub degenerate: bool,
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration, kept
/// orthogonal to the unit vectors in `against`.
pub(crate) fn power_iteration(a: &Tensor, seed: u64, against: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = a.rows();
    let mut rng = stream(seed, &[n as u64]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, against);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w: Vec<f64> = (0..n).map(|r| dot(a.row(r), &v)).collect();
        orthogonalize(&mut w, against);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let delta = v.iter().zip(&w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    (lambda, v)
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let p = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Mean-centers the rows and projects them on the top principal directions
/// (power iteration with deflation).
pub fn pca_project(vectors: &Tensor, components: usize) -> Result<PcaResult> {
    let (m, d) = vectors.shape();
    if m < 2 || components == 0 || components > d {
        return Err(Error::Config(format!(
            "pca needs at least 2 rows and 1..={d} components, got {m} rows and {components}"
        )));
    }
    let mut centered = vectors.clone();
    for c in 0..d {
        let mean = (0..m).map(|r| vectors.get(r, c)).sum::<f64>() / m as f64;
        for r in 0..m {
            centered.set(r, c, vectors.get(r, c) - mean);
        }
    }
    let mut cov = centered.t_matmul(&centered).scale(1.0 / (m - 1) as f64);
    let total_var: f64 = (0..d).map(|c| cov.get(c, c)).sum();
    let mut directions = Tensor::zeros(components, d);
    let mut variances = Vec::with_capacity(components);
    let degenerate = total_var <= f64::EPSILON;
    if !degenerate {
        let mut found: Vec<Vec<f64>> = Vec::with_capacity(components);
        for k in 0..components {
            let (lambda, v) = power_iteration(&cov, k as u64, &found);
            for i in 0..d {
                for j in 0..d {
                    let x = cov.get(i, j) - lambda * v[i] * v[j];
                    cov.set(i, j, x);
                }
            }
            directions.row_mut(k).copy_from_slice(&v);
            variances.push(lambda);
            found.push(v);
        }
    } else {
        variances.resize(components, 0.0);
    }
    let coords = if degenerate {
        Tensor::zeros(m, components)
    } else {
        centered.matmul_t(&directions)
    };
    Ok(PcaResult {
        coords,
        directions,
        variances,
        degenerate,
    })
}
