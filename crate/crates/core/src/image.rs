//! Image-domain primitives: scale-tagged frames, Catmull-Rom bicubic
//! resampling, vectorization and PGM export.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Which numeric range the pixel values of a [`Frame`] live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Intensities in `[0, 255]`.
    Raw255,
    /// Intensities in `[0, 1]`.
    Unit,
}

/// A grayscale frame of real-valued intensities, row-major.
///
/// The canonical working size for the inversion pipeline is 64x64, but the
/// type carries arbitrary dimensions so that resampling sources (64x842
/// scanline frames) and small test images use the same machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    scale: Scale,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, scale: Scale, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Size(format!(
                "frame data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Frame { width, height, scale, data })
    }

    /// All-zero frame.
    pub fn zeros(width: usize, height: usize, scale: Scale) -> Self {
        Frame { width, height, scale, data: vec![0.0; width * height] }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::Size(format!(
                "byte length {} does not match {width}x{height}",
                bytes.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            scale: Scale::Raw255,
            data: bytes.iter().map(|&b| b as f64).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Catmull-Rom cubic kernel (the a = -0.5 member of the Keys family).
fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Maps a destination index to its source-space sample coordinate
/// (pixel-center convention).
fn src_coord(dst: usize, ratio: f64) -> f64 {
    (dst as f64 + 0.5) * ratio - 0.5
}

fn resample_axis(src: &[f64], src_len: usize, dst_len: usize, stride: usize, out: &mut [f64]) {
    let ratio = src_len as f64 / dst_len as f64;
    for (j, slot) in out.iter_mut().enumerate() {
        let s = src_coord(j, ratio);
        let i0 = s.floor();
        let frac = s - i0;
        let mut acc = 0.0;
        for m in -1..=2 {
            let w = cubic_kernel(m as f64 - frac);
            let idx = (i0 as isize + m).clamp(0, src_len as isize - 1) as usize;
            acc += w * src[idx * stride];
        }
        *slot = acc;
    }
}

/// Separable bicubic resampling of a row-major buffer, without any range
/// clamping of the output values. This is a linear operator in the pixel
/// intensities; edge handling clamps source coordinates.
pub fn resample_bicubic(
    src: &[f64],
    src_width: usize,
    src_height: usize,
    dst_width: usize,
    dst_height: usize,
) -> Result<Vec<f64>> {
    if src_width < 4 || src_height < 4 {
        return Err(Error::Size(format!(
            "bicubic source must be at least 4x4, got {src_width}x{src_height}"
        )));
    }
    if dst_width == 0 || dst_height == 0 {
        return Err(Error::Size("bicubic destination dimensions must be >= 1".into()));
    }
    if src.len() != src_width * src_height {
        return Err(Error::Size("source buffer does not match its dimensions".into()));
    }

    // Horizontal pass.
    let mut horiz = vec![0.0; dst_width * src_height];
    for row in 0..src_height {
        resample_axis(
            &src[row * src_width..(row + 1) * src_width],
            src_width,
            dst_width,
            1,
            &mut horiz[row * dst_width..(row + 1) * dst_width],
        );
    }

    // Vertical pass over the intermediate.
    let mut out = vec![0.0; dst_width * dst_height];
    let mut column = vec![0.0; dst_height];
    for col in 0..dst_width {
        resample_axis(&horiz[col..], src_height, dst_height, dst_width, &mut column);
        for (row, &v) in column.iter().enumerate() {
            out[row * dst_width + col] = v;
        }
    }
    Ok(out)
}

/// Bicubic resize of a raw-scale frame, clamping the result to `[0, 255]`.
pub fn bicubic_resize(src: &Frame, dst_width: usize, dst_height: usize) -> Result<Frame> {
    if src.scale != Scale::Raw255 {
        return Err(Error::Contract("bicubic_resize expects a raw255 frame".into()));
    }
    let mut data = resample_bicubic(&src.data, src.width, src.height, dst_width, dst_height)?;
    for v in &mut data {
        *v = v.clamp(0.0, 255.0);
    }
    Frame::new(dst_width, dst_height, Scale::Raw255, data)
}

/// Divides every pixel by 255, retagging the frame to unit scale.
pub fn normalize(f: &Frame) -> Result<Frame> {
    if f.scale != Scale::Raw255 {
        return Err(Error::Contract("normalize expects a raw255 frame".into()));
    }
    Ok(Frame {
        width: f.width,
        height: f.height,
        scale: Scale::Unit,
        data: f.data.iter().map(|v| v / 255.0).collect(),
    })
}

/// Multiplies every pixel by 255 and clamps to `[0, 255]`.
pub fn denormalize(f: &Frame) -> Result<Frame> {
    if f.scale != Scale::Unit {
        return Err(Error::Contract("denormalize expects a unit-scale frame".into()));
    }
    Ok(Frame {
        width: f.width,
        height: f.height,
        scale: Scale::Raw255,
        data: f.data.iter().map(|v| (v * 255.0).clamp(0.0, 255.0)).collect(),
    })
}

/// Row-major flattening of a frame.
pub fn vectorize(f: &Frame) -> Vec<f64> {
    f.data.clone()
}

/// Inverse of [`vectorize`] for a known geometry.
pub fn devectorize(v: &[f64], width: usize, height: usize, scale: Scale) -> Result<Frame> {
    if v.len() != width * height {
        return Err(Error::Size(format!(
            "vector length {} does not match {width}x{height}",
            v.len()
        )));
    }
    Frame::new(width, height, scale, v.to_vec())
}

/// Devectorizes a raw255 prediction, clamping each pixel into `[0, 255]`.
pub fn devectorize_clamped(v: &[f64], width: usize, height: usize) -> Result<Frame> {
    let data: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 255.0)).collect();
    devectorize(&data, width, height, Scale::Raw255)
}

/// Serializes a raw255 frame as binary PGM (P5), rounding to the nearest
/// integer only at export time.
pub fn pgm_bytes(f: &Frame) -> Result<Vec<u8>> {
    if f.scale != Scale::Raw255 {
        return Err(Error::Contract("PGM export expects a raw255 frame".into()));
    }
    let mut out = Vec::with_capacity(f.data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", f.width, f.height).expect("vec write");
    out.extend(f.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_pgm(f: &Frame, path: &Path) -> Result<()> {
    let bytes = pgm_bytes(f)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
