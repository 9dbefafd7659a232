//! Acoustic feature extraction: 25 MFCCs and 25 regression deltas per
//! ultrasound frame.
//!
//! The MFCC variant is fixed end to end so that feature files are bit
//! reproducible: pre-emphasis 0.97, symmetric Hann window, zero-padding to
//! the FFT size, magnitude-squared spectrum, 26 triangular filters on the
//! HTK mel scale normalized to unit sum, natural-log compression with a
//! positive floor, and an orthonormal DCT-II keeping coefficients 0..=24.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::binio::*;
use crate::dataset::{frame_audio_window, ParallelUtterance};
use crate::error::{Error, Result};

const FEAT_MAGIC: &[u8; 4] = b"FEAT";

/// Parameters of the MFCC pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    /// Cepstral coefficients kept, including the 0th.
    pub n_mfcc: usize,
    /// Triangular mel filters.
    pub n_mels: usize,
    pub fft_size: usize,
    /// Analysis window in seconds.
    pub window_length: f64,
    pub preemphasis: f64,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    /// Minimum filterbank energy before the log.
    pub floor: f64,
    /// Waveform sample rate the window and filterbank are laid out for.
    pub sample_rate: f64,
}

impl MfccConfig {
    /// The fixed pipeline configuration for a given sample rate.
    pub fn for_sample_rate(sample_rate: f64) -> Self {
        MfccConfig {
            n_mfcc: 25,
            n_mels: 26,
            fft_size: 512,
            window_length: 0.012,
            preemphasis: 0.97,
            mel_fmin: 0.0,
            mel_fmax: sample_rate / 2.0,
            floor: 1e-10,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_bins = self.fft_size / 2 + 1;
        if !(self.n_mfcc <= self.n_mels && self.n_mels <= n_bins) {
            return Err(Error::Validation(format!(
                "need n_mfcc <= n_mels <= fft_size/2+1, got {} / {} / {}",
                self.n_mfcc, self.n_mels, n_bins
            )));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Validation("filterbank floor must be positive".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.window_length > 0.0) {
            return Err(Error::Validation("sample rate and window length must be positive".into()));
        }
        if !(self.mel_fmin >= 0.0 && self.mel_fmax > self.mel_fmin) {
            return Err(Error::Validation("need 0 <= mel_fmin < mel_fmax".into()));
        }
        Ok(())
    }

    /// Window length in samples: `round(window_length * sample_rate)`.
    pub fn window_samples(&self) -> usize {
        (self.window_length * self.sample_rate).round() as usize
    }
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig::for_sample_rate(22_050.0)
    }
}

/// One 50-dimensional acoustic observation aligned to an ultrasound frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatureVector {
    pub mfcc: Vec<f64>,
    pub delta: Vec<f64>,
    pub frame_index: usize,
}

impl AcousticFeatureVector {
    /// MFCCs followed by deltas, as fed to the regression network.
    pub fn concatenated(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mfcc.len() + self.delta.len());
        v.extend_from_slice(&self.mfcc);
        v.extend_from_slice(&self.delta);
        v
    }

    pub fn dim(&self) -> usize {
        self.mfcc.len() + self.delta.len()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, one row per filter over `fft_size/2 + 1` bins.
///
/// Triangles are laid out on equally spaced mel points and evaluated at the
/// bin frequencies; each filter is then normalized to unit weight sum.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.mel_fmin);
    let mel_hi = hz_to_mel(cfg.mel_fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect();
    let bin_mels: Vec<f64> = (0..n_bins)
        .map(|k| hz_to_mel(k as f64 * cfg.sample_rate / cfg.fft_size as f64))
        .collect();

    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut filt: Vec<f64> = bin_mels
            .iter()
            .map(|&bm| {
                let rising = (bm - left) / (center - left);
                let falling = (right - bm) / (right - center);
                rising.min(falling).max(0.0)
            })
            .collect();
        let sum: f64 = filt.iter().sum();
        if sum > 0.0 {
            for w in &mut filt {
                *w /= sum;
            }
        }
        bank.push(filt);
    }
    bank
}

/// Center frequency of each mel filter, in Hz.
pub fn mel_filter_centers(cfg: &MfccConfig) -> Vec<f64> {
    let mel_lo = hz_to_mel(cfg.mel_fmin);
    let mel_hi = hz_to_mel(cfg.mel_fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable state (FFT plan, window, filterbank, DCT matrix) for one config.
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct_rows: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let window = hann_window(cfg.window_samples());
        let filterbank = mel_filterbank(&cfg);
        // Orthonormal DCT-II rows: row k maps n_mels log energies to
        // cepstral coefficient k.
        let n = cfg.n_mels;
        let dct_rows: Vec<Vec<f64>> = (0..cfg.n_mfcc)
            .map(|k| {
                let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                (0..n)
                    .map(|j| scale * (PI * k as f64 * (2.0 * j as f64 + 1.0) / (2.0 * n as f64)).cos())
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(MfccExtractor { cfg, window, filterbank, dct_rows, fft })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Mel filterbank energies of one window (floored, before the log).
    pub fn filterbank_energies(&self, window: &[f64]) -> Result<Vec<f64>> {
        let n = self.cfg.window_samples();
        if window.len() != n {
            return Err(Error::Size(format!(
                "window must have {n} samples, got {}",
                window.len()
            )));
        }
        if window.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("window contains non-finite samples".into()));
        }

        // Pre-emphasis (x[-1] taken as 0), then Hann, then zero-pad.
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        for i in 0..n {
            let prev = if i == 0 { 0.0 } else { window[i - 1] };
            let emphasized = window[i] - self.cfg.preemphasis * prev;
            buf[i] = Complex::new(emphasized * self.window[i], 0.0);
        }
        self.fft.process(&mut buf);

        let n_bins = self.cfg.fft_size / 2 + 1;
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        Ok(self
            .filterbank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.cfg.floor)
            })
            .collect())
    }

    /// The first `n_mfcc` cepstral coefficients of one analysis window.
    pub fn compute_mfcc(&self, window: &[f64]) -> Result<Vec<f64>> {
        let log_energies: Vec<f64> =
            self.filterbank_energies(window)?.iter().map(|e| e.ln()).collect();
        Ok(self
            .dct_rows
            .iter()
            .map(|row| row.iter().zip(&log_energies).map(|(c, e)| c * e).sum())
            .collect())
    }
}

/// First-derivative regression over a coefficient sequence, half-width 2:
/// `delta[t] = sum_n n * (c[t+n] - c[t-n]) / (2 * sum_n n^2)` with edge
/// frames replicated.
pub fn compute_delta(seq: &[Vec<f64>], frame_index: usize) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::Size("delta needs a non-empty sequence".into()));
    }
    if frame_index >= seq.len() {
        return Err(Error::Index { index: frame_index, len: seq.len() });
    }
    const HALF_WIDTH: usize = 2;
    let dim = seq[0].len();
    let last = seq.len() - 1;
    let denom = 2.0 * (1..=HALF_WIDTH).map(|n| (n * n) as f64).sum::<f64>();
    let mut delta = vec![0.0; dim];
    for n in 1..=HALF_WIDTH {
        let ahead = &seq[(frame_index + n).min(last)];
        let behind = &seq[frame_index.saturating_sub(n)];
        for d in 0..dim {
            delta[d] += n as f64 * (ahead[d] - behind[d]);
        }
    }
    for v in &mut delta {
        *v /= denom;
    }
    Ok(delta)
}

/// Extracts one 50-dimensional feature vector per ultrasound frame.
pub fn extract_utterance_features(
    u: &ParallelUtterance,
    cfg: &MfccConfig,
) -> Result<Vec<AcousticFeatureVector>> {
    let extractor = MfccExtractor::new(cfg.clone())?;
    let n = u.ultrasound.frame_count();
    let mut mfccs = Vec::with_capacity(n);
    for i in 0..n {
        let window = frame_audio_window(u, i, cfg.window_length)?;
        mfccs.push(extractor.compute_mfcc(&window)?);
    }
    (0..n)
        .map(|i| {
            Ok(AcousticFeatureVector {
                mfcc: mfccs[i].clone(),
                delta: compute_delta(&mfccs, i)?,
                frame_index: i,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Feature matrix files
// ---------------------------------------------------------------------------

/// Writes a row-major feature matrix (`FEAT` magic, u32 rows, u32 cols,
/// f64 little-endian payload).
pub fn save_feature_matrix(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let n_cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::Size("feature rows have inconsistent lengths".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e: std::io::Error| Error::io(path, e);
    w.write_all(FEAT_MAGIC).map_err(err)?;
    write_u32(&mut w, rows.len() as u32).map_err(err)?;
    write_u32(&mut w, n_cols as u32).map_err(err)?;
    for row in rows {
        write_f64_slice(&mut w, row).map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn load_feature_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_magic(&mut r, FEAT_MAGIC, "feature matrix")?;
    let n_rows = read_u32(&mut r, "rows")? as usize;
    let n_cols = read_u32(&mut r, "cols")? as usize;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        rows.push(read_f64_vec(&mut r, n_cols, "feature row")?);
    }
    expect_eof(&mut r, "feature matrix")?;
    Ok(rows)
}

/// CSV rendering of a feature matrix for inspection.
pub fn feature_matrix_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let n_cols = rows.first().map_or(0, |r| r.len());
    out.push_str("frame");
    for c in 0..n_cols {
        out.push_str(&format!(",f{c}"));
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v:.12e}"));
        }
        out.push('\n');
    }
    out
}
