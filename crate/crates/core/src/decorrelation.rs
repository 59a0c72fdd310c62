//! Generalised puffer transformation for correlated designs with n ≤ p.
//!
//! With the thin SVD `X = U D Vᵀ`, the data are premultiplied by
//! `F = √(p/n)·U D̂ Uᵀ`, where `D̂ᵢᵢ = √n` if `Dᵢᵢ ≤ 1/√n` and `1/Dᵢᵢ`
//! otherwise. The coefficient vector is untouched, so sparsity survives,
//! and when no singular value is below the cut-off the transformed design
//! is `√(p/n)·U Vᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PufferTransform {
    /// n×n matrix F.
    pub f: DMatrix<f64>,
    /// Diagonal of D̂.
    pub d_hat: DVector<f64>,
    /// Singular values D of the original design, in the order used for U.
    pub singular_values: DVector<f64>,
    /// Left singular vectors, first nonzero entry of each column positive.
    pub u: DMatrix<f64>,
}

/// D̂ entry for one singular value.
#[inline]
pub fn d_hat_entry(d: f64, n: usize) -> f64 {
    let root_n = (n as f64).sqrt();
    if d <= 1.0 / root_n {
        root_n
    } else {
        1.0 / d
    }
}

/// Returns `(F y, F X)` together with the transform.
pub fn puffer_transform(data: &Dataset) -> Result<(Dataset, PufferTransform)> {
    let (n, p) = (data.n(), data.p());
    if n > p {
        return Err(Error::InvalidDataset(format!(
            "puffer transformation requires n ≤ p, got n = {n}, p = {p}"
        )));
    }
    let svd = data.x.clone().svd(true, false);
    let mut u = svd
        .u
        .ok_or_else(|| Error::Svd("left singular vectors were not computed".into()))?;
    let d = svd.singular_values;
    if u.ncols() != n || d.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd(format!("unexpected decomposition of a {n}×{p} design")));
    }
    for mut col in u.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| **v != 0.0).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    let d_hat = d.map(|v| d_hat_entry(v, n));
    let scale = (p as f64 / n as f64).sqrt();
    let mut scaled_u = u.clone();
    for (mut col, w) in scaled_u.column_iter_mut().zip(d_hat.iter()) {
        col *= *w;
    }
    let mut f = (scaled_u * u.transpose()) * scale;
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (f[(i, j)] + f[(j, i)]);
            f[(i, j)] = m;
            f[(j, i)] = m;
        }
    }
    let y = &f * &data.y;
    let x = &f * &data.x;
    let transformed = Dataset::new(y, x)?;
    Ok((
        transformed,
        PufferTransform {
            f,
            d_hat,
            singular_values: d,
            u,
        },
    ))
}
