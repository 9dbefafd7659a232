//! EigenTongue basis: PCA over vectorized ultrasound frames, with
//! projection to coefficient space and reconstruction back to pixels.
//!
//! Fitting mean-centers the training frames and eigendecomposes either the
//! Gram matrix (frame count <= pixel count, the usual case) or the pixel
//! covariance; both routes yield the same top principal subspace. Components
//! are orthonormalized, ordered by descending eigenvalue and sign-fixed so
//! the entry of largest magnitude is positive, which makes fits reproducible
//! down to the byte. Eigenvalues indistinguishable from zero at working
//! precision are reported as exactly zero and their components are filled in
//! by a deterministic orthonormal completion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::image::{devectorize_clamped, Frame, Scale};

const ETB_MAGIC: &[u8; 4] = b"ETBS";

/// Relative eigenvalue threshold below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenTongueBasis {
    mean: Array1<f64>,
    /// One orthonormal component per row, descending eigenvalue order.
    components: Array2<f64>,
    eigenvalues: Vec<f64>,
}

/// Coefficients of one frame in the EigenTongue space.
#[derive(Debug, Clone, PartialEq)]
pub struct EtCoefficients {
    pub values: Vec<f64>,
    pub frame_index: usize,
}

impl EigenTongueBasis {
    pub fn new(mean: Array1<f64>, components: Array2<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        let (k, dim) = components.dim();
        if mean.len() != dim {
            return Err(Error::Size("mean length does not match component dimension".into()));
        }
        if eigenvalues.len() != k {
            return Err(Error::Size("eigenvalue count does not match component count".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Validation("eigenvalues must be sorted descending".into()));
        }
        if eigenvalues.iter().any(|&v| v < -1e-10 || !v.is_finite()) {
            return Err(Error::Validation("eigenvalues must be non-negative".into()));
        }
        // Pairwise orthonormality: |<e_i, e_j> - delta_ij| <= 1e-8.
        let gram = components.dot(&components.t());
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - want).abs() > 1e-8 {
                    return Err(Error::Validation(format!(
                        "components {i} and {j} are not orthonormal: <e_i,e_j> = {}",
                        gram[[i, j]]
                    )));
                }
            }
        }
        Ok(EigenTongueBasis { mean, components, eigenvalues })
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn component(&self, i: usize) -> ArrayView1<'_, f64> {
        self.components.row(i)
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The mean frame as an image (square geometry).
    pub fn mean_frame(&self) -> Result<Frame> {
        let side = self.side()?;
        devectorize_clamped(self.mean.as_slice().expect("contiguous"), side, side)
    }

    fn side(&self) -> Result<usize> {
        let side = (self.dim() as f64).sqrt().round() as usize;
        if side * side != self.dim() {
            return Err(Error::Contract(format!(
                "basis dimension {} is not a square image",
                self.dim()
            )));
        }
        Ok(side)
    }

    /// Coefficients of a raw pixel vector: `c_i = <x - mean, e_i>`.
    pub fn project_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Size(format!(
                "vector length {} does not match basis dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let centered = Array1::from_iter(x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.components.dot(&centered).to_vec())
    }

    /// `mean + sum_i c_i e_i`, without any range clamping.
    pub fn reconstruct_vector(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_components() {
            return Err(Error::Size(format!(
                "coefficient count {} does not match component count {}",
                coeffs.len(),
                self.n_components()
            )));
        }
        let c = Array1::from_iter(coeffs.iter().copied());
        Ok((&self.mean + &c.dot(&self.components)).to_vec())
    }

    /// Projects many frames at once; one coefficient row per input row.
    pub fn project_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::Size("row dimension does not match basis".into()));
        }
        let centered = rows - &self.mean.view().insert_axis(ndarray::Axis(0));
        Ok(centered.dot(&self.components.t()))
    }
}

/// Projects a raw255 frame onto the basis.
pub fn project(f: &Frame, basis: &EigenTongueBasis) -> Result<EtCoefficients> {
    if f.scale() != Scale::Raw255 {
        return Err(Error::Contract("project expects a raw255 frame".into()));
    }
    Ok(EtCoefficients { values: basis.project_vector(f.data())?, frame_index: 0 })
}

/// Reconstructs a frame from coefficients, clamped to `[0, 255]`.
pub fn reconstruct(c: &EtCoefficients, basis: &EigenTongueBasis) -> Result<Frame> {
    let v = basis.reconstruct_vector(&c.values)?;
    let side = basis.side()?;
    devectorize_clamped(&v, side, side)
}

/// Fits the top `n_components` principal directions of the training frames.
pub fn fit_basis(frames: &[Vec<f64>], n_components: usize) -> Result<EigenTongueBasis> {
    let n = frames.len();
    if n_components == 0 {
        return Err(Error::Size("need at least one component".into()));
    }
    if n <= n_components {
        return Err(Error::Size(format!(
            "need more than {n_components} frames to fit {n_components} components, got {n}"
        )));
    }
    let dim = frames[0].len();
    if n_components > dim {
        return Err(Error::Size(format!(
            "cannot extract {n_components} components from dimension {dim}"
        )));
    }
    if frames.iter().any(|f| f.len() != dim) {
        return Err(Error::Size("frames have inconsistent dimensions".into()));
    }
    if frames.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("frames contain non-finite values".into()));
    }

    let mut data = Array2::<f64>::zeros((n, dim));
    for (i, f) in frames.iter().enumerate() {
        data.row_mut(i).assign(&ArrayView1::from(&f[..]));
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let centered = &data - &mean.view().insert_axis(ndarray::Axis(0));

    // Eigendecompose whichever symmetric matrix is smaller; the population
    // covariance convention (divide by N) is used throughout.
    let (eigenvalues, mut components) = if n <= dim {
        let gram = centered.dot(&centered.t()) / n as f64;
        let (vals, vecs) = sorted_symmetric_eigen(&gram);
        let rank_floor = vals.first().copied().unwrap_or(0.0).max(0.0) * RANK_TOL;
        let mut comps = Array2::<f64>::zeros((n_components, dim));
        let mut lams = Vec::with_capacity(n_components);
        for i in 0..n_components {
            let lam = vals[i];
            if lam > rank_floor && lam > 0.0 {
                // Map the Gram eigenvector u back to pixel space:
                // e = X_c^T u / sqrt(N * lambda).
                let u = Array1::from_iter(vecs.column(i).iter().copied());
                let e = centered.t().dot(&u) / (n as f64 * lam).sqrt();
                comps.row_mut(i).assign(&e);
                lams.push(lam);
            } else {
                lams.push(0.0);
            }
        }
        (lams, comps)
    } else {
        let cov = centered.t().dot(&centered) / n as f64;
        let (vals, vecs) = sorted_symmetric_eigen(&cov);
        let rank_floor = vals.first().copied().unwrap_or(0.0).max(0.0) * RANK_TOL;
        let mut comps = Array2::<f64>::zeros((n_components, dim));
        let mut lams = Vec::with_capacity(n_components);
        for i in 0..n_components {
            let lam = vals[i];
            if lam > rank_floor && lam > 0.0 {
                let e = Array1::from_iter(vecs.column(i).iter().copied());
                comps.row_mut(i).assign(&e);
                lams.push(lam);
            } else {
                lams.push(0.0);
            }
        }
        (lams, comps)
    };

    orthonormalize_and_complete(&mut components, &eigenvalues)?;
    fix_signs(&mut components);
    EigenTongueBasis::new(mean, components, eigenvalues)
}

/// Symmetric eigendecomposition sorted by descending eigenvalue (stable in
/// the original ordering on ties).
fn sorted_symmetric_eigen(m: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Polishes the data-derived rows with modified Gram-Schmidt and fills the
/// null rows (eigenvalue reported as zero) with a deterministic completion
/// from canonical basis vectors.
fn orthonormalize_and_complete(components: &mut Array2<f64>, eigenvalues: &[f64]) -> Result<()> {
    let (k, dim) = components.dim();
    let mut kept: Vec<Array1<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        if eigenvalues[i] > 0.0 {
            let mut v = components.row(i).to_owned();
            for u in &kept {
                let proj = v.dot(u);
                v.scaled_add(-proj, u);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-6 {
                return Err(Error::Numeric(format!(
                    "component {i} collapsed during orthonormalization"
                )));
            }
            v /= norm;
            components.row_mut(i).assign(&v);
            kept.push(v);
        }
    }
    let mut next_canonical = 0usize;
    for i in 0..k {
        if eigenvalues[i] > 0.0 {
            continue;
        }
        loop {
            if next_canonical >= dim {
                return Err(Error::Numeric("ran out of completion directions".into()));
            }
            let mut v = Array1::<f64>::zeros(dim);
            v[next_canonical] = 1.0;
            next_canonical += 1;
            for u in &kept {
                let proj = v.dot(u);
                v.scaled_add(-proj, u);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 0.5 {
                v /= norm;
                components.row_mut(i).assign(&v);
                kept.push(v);
                break;
            }
        }
    }
    Ok(())
}

/// Flips every component whose largest-magnitude entry is negative (first
/// occurrence wins on ties).
fn fix_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, &v) in row.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

// ---------------------------------------------------------------------------
// `.etb` basis files
// ---------------------------------------------------------------------------

pub fn save_basis(basis: &EigenTongueBasis, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e: std::io::Error| Error::io(path, e);
    w.write_all(ETB_MAGIC).map_err(err)?;
    write_u32(&mut w, basis.dim() as u32).map_err(err)?;
    write_u32(&mut w, basis.n_components() as u32).map_err(err)?;
    write_f64_slice(&mut w, basis.mean.as_slice().expect("contiguous")).map_err(err)?;
    write_f64_slice(&mut w, basis.components.as_slice().expect("contiguous")).map_err(err)?;
    write_f64_slice(&mut w, &basis.eigenvalues).map_err(err)?;
    w.flush().map_err(err)
}

pub fn load_basis(path: &Path) -> Result<EigenTongueBasis> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_magic(&mut r, ETB_MAGIC, "eigentongue basis")?;
    let dim = read_u32(&mut r, "dimension")? as usize;
    let k = read_u32(&mut r, "component count")? as usize;
    let mean = Array1::from_vec(read_f64_vec(&mut r, dim, "mean")?);
    let flat = read_f64_vec(&mut r, k * dim, "components")?;
    let components = Array2::from_shape_vec((k, dim), flat)
        .map_err(|e| Error::Corruption(format!("component block malformed: {e}")))?;
    let eigenvalues = read_f64_vec(&mut r, k, "eigenvalues")?;
    expect_eof(&mut r, "eigentongue basis")?;
    EigenTongueBasis::new(mean, components, eigenvalues)
}
