// SPDX-License-Identifier: MIT OR Apache-2.0

//! Geometry of pseudoclass point clouds.
//!
//! For a cloud with population covariance eigenvalues `ν`:
//!
//! - radius `R = sqrt(mean ‖x − μ‖²) = sqrt(Σν)`
//! - participation-ratio dimension `D = (Σν)² / Σν²`
//! - capacity proxy `κ = 1 / (1 + R²·D)`
//!
//! Eigenvalues below [`EIGEN_FLOOR`] are clamped to zero before `D` is
//! formed. A cloud of identical points has `R = D = 0` and `κ = 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::matrix::squared_distance;
use crate::netcore::ActivationTrace;
use crate::pseudoclass::Clustering;

pub const EIGEN_FLOOR: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldStats {
    pub pseudoclass_id: usize,
    pub n_points: usize,
    pub radius: f64,
    pub dimension: f64,
    pub capacity: f64,
    /// Covariance eigenvalues, descending, clamped at zero.
    pub spectrum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsDelta {
    pub pseudoclass_id: usize,
    /// `R_before − R_after`; positive when the radius shrank.
    pub delta_radius: f64,
    /// `D_before − D_after`.
    pub delta_dimension: f64,
}

/// Participation ratio of a nonnegative spectrum; 0 for an all-zero spectrum.
pub fn participation_ratio(spectrum: &[f64]) -> f64 {
    let sum: f64 = spectrum.iter().sum();
    let sum_sq: f64 = spectrum.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        0.0
    } else {
        sum * sum / sum_sq
    }
}

pub fn capacity_proxy(radius: f64, dimension: f64) -> f64 {
    1.0 / (1.0 + radius * radius * dimension)
}

/// Population (1/n) covariance of the rows.
pub fn covariance(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
/// Returns `None` when the off-diagonal mass fails to vanish.
pub fn symmetric_eigenvalues(matrix: &[Vec<f64>]) -> Option<Vec<f64>> {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let scale: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Some(vec![0.0; d]);
    }
    let off = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged && off(&a) > 1e-12 * scale {
        return None;
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Some(eig)
}

pub fn manifold_stats(points: &[Vec<f64>]) -> Result<ManifoldStats> {
    stats_with_id(points, 0)
}

fn stats_with_id(points: &[Vec<f64>], id: usize) -> Result<ManifoldStats> {
    if points.is_empty() {
        return Err(Error::invalid("manifold stats need at least one point"));
    }
    let d = points[0].len();
    for p in points {
        check_dim("manifold point", d, p.len())?;
    }
    let n = points.len() as f64;
    let mut centroid = vec![0.0; d];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let radius = (points.iter().map(|p| squared_distance(p, &centroid)).sum::<f64>() / n).sqrt();

    let spectrum: Vec<f64> = symmetric_eigenvalues(&covariance(points))
        .ok_or(Error::EigenFailure { pseudoclass: id })?
        .into_iter()
        .map(|v| if v < EIGEN_FLOOR { 0.0 } else { v })
        .collect();
    let dimension = participation_ratio(&spectrum);
    Ok(ManifoldStats {
        pseudoclass_id: id,
        n_points: points.len(),
        radius,
        dimension,
        capacity: capacity_proxy(radius, dimension),
        spectrum,
    })
}

/// Stats of each pseudoclass, computed on its members' activations at the
/// clustering's layer, mapped through the clustering's standardization.
pub fn stats_for_clustering(traces: &[ActivationTrace], clustering: &Clustering) -> Result<Vec<ManifoldStats>> {
    let index: BTreeMap<usize, &ActivationTrace> = traces.iter().map(|t| (t.sample_id, t)).collect();
    let lookup = |id: usize| -> Result<&ActivationTrace> { index.get(&id).copied().ok_or(Error::MissingSample(id)) };
    clustering
        .clusters
        .iter()
        .map(|pc| {
            let points = pc
                .member_ids
                .iter()
                .map(|&id| {
                    let t = lookup(id)?;
                    let v = t
                        .layer(clustering.layer_index)
                        .ok_or_else(|| Error::invalid("trace lacks the clustered layer"))?;
                    Ok(clustering.transform(v))
                })
                .collect::<Result<Vec<_>>>()?;
            stats_with_id(&points, pc.id)
        })
        .collect()
}

pub fn delta_stats(before: &ManifoldStats, after: &ManifoldStats) -> Result<StatsDelta> {
    if before.pseudoclass_id != after.pseudoclass_id {
        return Err(Error::invalid(format!(
            "pseudoclass mismatch: {} vs {}",
            before.pseudoclass_id, after.pseudoclass_id
        )));
    }
    Ok(StatsDelta {
        pseudoclass_id: before.pseudoclass_id,
        delta_radius: before.radius - after.radius,
        delta_dimension: before.dimension - after.dimension,
    })
}
