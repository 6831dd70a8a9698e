//! PCA over weight updates.
//!
//! Updates are few (about a hundred) but long (1568 entries), so the
//! eigenproblem is solved on the `n × n` Gram matrix of the centered data
//! instead of the `p × p` covariance. Both share the non-zero spectrum, and
//! each covariance eigenvector is recovered as `Xᵀu / ‖Xᵀu‖`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightUpdate;

/// Upper bound on components considered by the elbow rule.
pub const MAX_AUTO_COMPONENTS: usize = 10;
pub const MIN_AUTO_COMPONENTS: usize = 2;
/// A component whose marginal gain is below this fraction of the first
/// component's gain marks the elbow.
pub const ELBOW_GAIN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCount {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for ComponentCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ComponentCount::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(ComponentCount::Fixed(k)),
            _ => Err(Error::Config(format!("components must be `auto` or a positive integer, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcaProjector {
    pub mean: Vec<f64>,
    /// Row `j` is the `j`-th principal axis (unit length).
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaProjector {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Keeps the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<PcaProjector> {
        if k == 0 || k > self.n_components() {
            return Err(Error::Rank(format!(
                "cannot keep {k} of {} components",
                self.n_components()
            )));
        }
        Ok(PcaProjector {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
        })
    }

    /// `components · (x − mean)`.
    pub fn project_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect())
    }

    /// Fraction of the original dimensions removed by the projection.
    pub fn reduction_ratio(&self) -> f64 {
        1.0 - self.n_components() as f64 / self.dim() as f64
    }
}

/// Smallest `k` whose explained-variance ratio falls below
/// [`ELBOW_GAIN_FRACTION`] of the first ratio, clamped to `[2, 10]`.
pub fn elbow_components(ratios: &[f64]) -> usize {
    let Some(&first) = ratios.first() else {
        return MIN_AUTO_COMPONENTS;
    };
    let k = ratios
        .iter()
        .take(MAX_AUTO_COMPONENTS)
        .position(|&r| r < ELBOW_GAIN_FRACTION * first)
        .map_or(MAX_AUTO_COMPONENTS, |idx| idx + 1);
    k.clamp(MIN_AUTO_COMPONENTS, MAX_AUTO_COMPONENTS)
}

/// Fits a projector with exactly `k` components on row vectors `rows`.
pub fn fit_rows(rows: &[&[f64]], k: usize) -> Result<PcaProjector> {
    let n = rows.len();
    if k == 0 {
        return Err(Error::Rank("at least one component is required".into()));
    }
    if n < k.max(2) {
        return Err(Error::Rank(format!(
            "{n} updates cannot support {k} components (need at least {})",
            k.max(2)
        )));
    }
    let p = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::Shape {
            expected: p,
            actual: bad.len(),
        });
    }
    if k > p {
        return Err(Error::Rank(format!("{k} components exceed dimension {p}")));
    }

    let mut mean = vec![0.0; p];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - mean[j]);

    let gram = &centered * centered.transpose();
    let total: f64 = gram.trace();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let floor = 1e-12 * eig.eigenvalues[order[0]].max(0.0);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        let resolved = lambda > floor && lambda > 0.0;
        let candidate = if resolved {
            let u = eig.eigenvectors.column(idx);
            Some(centered.tr_mul(&u).iter().copied().collect::<Vec<f64>>())
        } else {
            None
        };
        let axis = candidate
            .and_then(|v| orthonormalize(v, &components))
            .or_else(|| fill_axis(p, &components))
            .ok_or_else(|| Error::Rank("could not complete an orthonormal basis".into()))?;
        components.push(axis);
        ratios.push(if resolved && total > 0.0 { lambda / total } else { 0.0 });
    }
    // enforce the non-increasing ordering against rounding noise
    for j in 1..ratios.len() {
        if ratios[j] > ratios[j - 1] {
            ratios[j] = ratios[j - 1];
        }
    }
    Ok(PcaProjector {
        mean,
        components,
        explained_variance_ratio: ratios,
    })
}

/// Gram–Schmidt `v` against `basis` (twice, for stability) and normalize.
fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = norm(&v);
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
    }
    let n = norm(&v);
    if n <= 1e-10 * start {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// First canonical axis that is linearly independent of `basis`.
fn fill_axis(p: usize, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    (0..p).find_map(|j| {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        orthonormalize(e, basis)
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits PCA on the weight deltas of `updates`.
pub fn fit_pca(updates: &[WeightUpdate], n_components: ComponentCount) -> Result<PcaProjector> {
    let rows: Vec<&[f64]> = updates.iter().map(|u| u.delta.as_slice()).collect();
    match n_components {
        ComponentCount::Fixed(k) => fit_rows(&rows, k),
        ComponentCount::Auto => {
            let available = rows.len().min(MAX_AUTO_COMPONENTS);
            let full = fit_rows(&rows, available)?;
            let k = elbow_components(&full.explained_variance_ratio).min(full.n_components());
            full.truncated(k)
        }
    }
}
