//! Complex steerable pyramid via frequency-domain filtering.
//!
//! Each subband is produced by multiplying the image spectrum with an
//! oriented bandpass filter: a Gaussian radial profile centered at
//! `pi / 2^level` times an angular Gaussian restricted to a single
//! half-plane, which makes the spatial response analytic (complex) so that
//! translations show up as phase rotations. Subbands are not decimated: all
//! of them keep the input resolution, and because the filtering is diagonal
//! in the DFT basis a circular shift of the input shifts every subband by
//! exactly the same amount.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Precomputed filters and FFT plans for one image geometry.
pub struct SteerablePyramid {
    width: usize,
    height: usize,
    /// Frequency-domain filters, level-major then orientation.
    filters: Vec<Array2<f64>>,
    fft_row: Arc<dyn Fft<f64>>,
    fft_col: Arc<dyn Fft<f64>>,
    ifft_row: Arc<dyn Fft<f64>>,
    ifft_col: Arc<dyn Fft<f64>>,
}

impl SteerablePyramid {
    pub fn new(width: usize, height: usize, levels: usize, orientations: usize) -> Result<Self> {
        if levels == 0 || orientations == 0 {
            return Err(Error::Validation("need at least one level and orientation".into()));
        }
        if width < 4 || height < 4 {
            return Err(Error::Size(format!(
                "frame {width}x{height} too small for a pyramid decomposition"
            )));
        }
        let mut filters = Vec::with_capacity(levels * orientations);
        for level in 1..=levels {
            let r_center = PI / 2f64.powi(level as i32);
            let r_sigma = r_center / 2.0;
            for o in 0..orientations {
                let theta_center = PI * o as f64 / orientations as f64;
                let theta_sigma = PI / (2.0 * orientations as f64);
                filters.push(build_filter(
                    width,
                    height,
                    r_center,
                    r_sigma,
                    theta_center,
                    theta_sigma,
                ));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(SteerablePyramid {
            width,
            height,
            filters,
            fft_row: planner.plan_fft_forward(width),
            fft_col: planner.plan_fft_forward(height),
            ifft_row: planner.plan_fft_inverse(width),
            ifft_col: planner.plan_fft_inverse(height),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_subbands(&self) -> usize {
        self.filters.len()
    }

    /// Complex subband coefficients of a row-major intensity buffer.
    pub fn decompose(&self, data: &[f64]) -> Result<Vec<Array2<Complex<f64>>>> {
        if data.len() != self.width * self.height {
            return Err(Error::Size(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                self.width,
                self.height
            )));
        }
        let mut spectrum: Vec<Complex<f64>> =
            data.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft2(&mut spectrum);

        let norm = 1.0 / (self.width * self.height) as f64;
        self.filters
            .iter()
            .map(|filt| {
                let mut band: Vec<Complex<f64>> = spectrum
                    .iter()
                    .zip(filt.iter())
                    .map(|(s, &f)| s * f)
                    .collect();
                self.ifft2(&mut band);
                for c in &mut band {
                    *c *= norm;
                }
                Array2::from_shape_vec((self.height, self.width), band)
                    .map_err(|e| Error::Numeric(format!("subband reshape failed: {e}")))
            })
            .collect()
    }

    fn fft2(&self, buf: &mut [Complex<f64>]) {
        for row in buf.chunks_exact_mut(self.width) {
            self.fft_row.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                column[y] = buf[y * self.width + x];
            }
            self.fft_col.process(&mut column);
            for y in 0..self.height {
                buf[y * self.width + x] = column[y];
            }
        }
    }

    fn ifft2(&self, buf: &mut [Complex<f64>]) {
        for row in buf.chunks_exact_mut(self.width) {
            self.ifft_row.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                column[y] = buf[y * self.width + x];
            }
            self.ifft_col.process(&mut column);
            for y in 0..self.height {
                buf[y * self.width + x] = column[y];
            }
        }
    }
}

/// Signed frequency of DFT bin `k` out of `n`, in cycles per pixel.
fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

fn build_filter(
    width: usize,
    height: usize,
    r_center: f64,
    r_sigma: f64,
    theta_center: f64,
    theta_sigma: f64,
) -> Array2<f64> {
    Array2::from_shape_fn((height, width), |(ky, kx)| {
        let wx = 2.0 * PI * signed_frequency(kx, width);
        let wy = 2.0 * PI * signed_frequency(ky, height);
        let r = (wx * wx + wy * wy).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let radial = (-(r - r_center) * (r - r_center) / (2.0 * r_sigma * r_sigma)).exp();
        let theta = wy.atan2(wx);
        let mut dt = theta - theta_center;
        while dt > PI {
            dt -= 2.0 * PI;
        }
        while dt < -PI {
            dt += 2.0 * PI;
        }
        // Single half-plane response keeps the spatial filter analytic.
        if dt.abs() > PI / 2.0 {
            return 0.0;
        }
        radial * (-dt * dt / (2.0 * theta_sigma * theta_sigma)).exp()
    })
}
