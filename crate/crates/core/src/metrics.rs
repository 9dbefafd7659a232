//! Image quality measurement: MSE, SSIM and complex-wavelet SSIM, plus the
//! per-utterance comparison curves and corpus-level aggregation used in the
//! evaluation reports.
//!
//! All three metrics operate on raw255-scale frames. SSIM uses an 11x11
//! circular-symmetric Gaussian window (sigma 1.5) over valid positions only;
//! CW-SSIM evaluates the similarity of complex steerable-pyramid
//! coefficients in sliding 7x7 windows, which makes it tolerant to small
//! translations (shifts become phase rotations that the coefficient
//! magnitudes ignore).

use ndarray::Array2;
use rustfft::num_complex::Complex;

use crate::eigentongue::{project, reconstruct, EigenTongueBasis};
use crate::error::{Error, Result};
use crate::image::{Frame, Scale};
use crate::pyramid::SteerablePyramid;

/// SSIM configuration: window geometry, exponents and stabilizers.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// One-dimensional Gaussian profile normalized to unit sum; the 2-D
    /// window is its outer product and therefore also sums to one.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_size;
        let half = (n as f64 - 1.0) / 2.0;
        let mut w: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Validation("window size must be >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::Validation("sigma and dynamic range must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return Err(Error::Validation("SSIM exponents must be positive".into()));
        }
        Ok(())
    }
}

/// CW-SSIM configuration: pyramid shape, window size and stabilizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CwSsimParams {
    pub pyramid_levels: usize,
    pub orientations: usize,
    pub window_size: usize,
    pub k: f64,
}

impl Default for CwSsimParams {
    fn default() -> Self {
        CwSsimParams { pyramid_levels: 2, orientations: 4, window_size: 7, k: 0.01 }
    }
}

impl CwSsimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Validation("stabilizer K must be positive".into()));
        }
        if self.pyramid_levels == 0 || self.orientations == 0 || self.window_size == 0 {
            return Err(Error::Validation("pyramid shape values must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Contract(format!(
            "frame shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.scale() != b.scale() || a.scale() != Scale::Raw255 {
        return Err(Error::Contract("metrics expect two raw255 frames".into()));
    }
    Ok(())
}

/// Mean squared pixel difference.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Valid-mode separable convolution with a symmetric 1-D kernel applied
/// along both axes.
fn convolve_valid(data: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = data.dim();
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * data[[y, x + i]];
            }
            horiz[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

fn to_array(f: &Frame) -> Array2<f64> {
    Array2::from_shape_vec((f.height(), f.width()), f.data().to_vec()).expect("frame is dense")
}

/// Structural similarity index, averaged over all valid window positions.
pub fn ssim(a: &Frame, b: &Frame, params: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    params.validate()?;
    let k = params.window_size;
    if a.width() < k || a.height() < k {
        return Err(Error::Size(format!(
            "frame {}x{} smaller than the {k}x{k} SSIM window",
            a.width(),
            a.height()
        )));
    }
    let window = params.window();
    let xa = to_array(a);
    let xb = to_array(b);

    let mu_a = convolve_valid(&xa, &window);
    let mu_b = convolve_valid(&xb, &window);
    let e_aa = convolve_valid(&(&xa * &xa), &window);
    let e_bb = convolve_valid(&(&xb * &xb), &window);
    let e_ab = convolve_valid(&(&xa * &xb), &window);

    let (c1, c2, c3) = (params.c1(), params.c2(), params.c3());
    let mut total = 0.0;
    for ((&ma, &mb), ((&aa, &bb), &ab)) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(e_aa.iter().zip(e_bb.iter()).zip(e_ab.iter()))
    {
        let var_a = (aa - ma * ma).max(0.0);
        let var_b = (bb - mb * mb).max(0.0);
        let cov = ab - ma * mb;
        let (sa, sb) = (var_a.sqrt(), var_b.sqrt());
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * sa * sb + c2) / (var_a + var_b + c2);
        let s = (cov + c3) / (sa * sb + c3);
        total += l.powf(params.alpha) * c.powf(params.beta) * s.powf(params.gamma);
    }
    Ok(total / mu_a.len() as f64)
}

/// Per-window Eq.-style similarity of two complex coefficient fields:
/// `(2|sum w_a conj(w_b)| + K) / (sum |w_a|^2 + sum |w_b|^2 + K)` over every
/// `window x window` patch (step 1). Exposed so the windowed arithmetic can
/// be checked directly against scalar evaluation.
pub fn cw_ssim_subband(
    wa: &Array2<Complex<f64>>,
    wb: &Array2<Complex<f64>>,
    window: usize,
    k: f64,
) -> Result<Array2<f64>> {
    if wa.dim() != wb.dim() {
        return Err(Error::Contract("subband shapes differ".into()));
    }
    let (h, w) = wa.dim();
    if h < window || w < window {
        return Err(Error::Size(format!(
            "subband {w}x{h} smaller than the {window}x{window} window"
        )));
    }

    // Summed-area tables over the three per-pixel fields.
    let mut sat_cross = Array2::<Complex<f64>>::zeros((h + 1, w + 1));
    let mut sat_pa = Array2::<f64>::zeros((h + 1, w + 1));
    let mut sat_pb = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        for x in 0..w {
            let ca = wa[[y, x]];
            let cb = wb[[y, x]];
            let cross = ca * cb.conj();
            sat_cross[[y + 1, x + 1]] =
                cross + sat_cross[[y, x + 1]] + sat_cross[[y + 1, x]] - sat_cross[[y, x]];
            sat_pa[[y + 1, x + 1]] =
                ca.norm_sqr() + sat_pa[[y, x + 1]] + sat_pa[[y + 1, x]] - sat_pa[[y, x]];
            sat_pb[[y + 1, x + 1]] =
                cb.norm_sqr() + sat_pb[[y, x + 1]] + sat_pb[[y + 1, x]] - sat_pb[[y, x]];
        }
    }
    let rect_c = |y0: usize, x0: usize, y1: usize, x1: usize| {
        sat_cross[[y1, x1]] - sat_cross[[y0, x1]] - sat_cross[[y1, x0]] + sat_cross[[y0, x0]]
    };
    let rect_a = |y0: usize, x0: usize, y1: usize, x1: usize| {
        sat_pa[[y1, x1]] - sat_pa[[y0, x1]] - sat_pa[[y1, x0]] + sat_pa[[y0, x0]]
    };
    let rect_b = |y0: usize, x0: usize, y1: usize, x1: usize| {
        sat_pb[[y1, x1]] - sat_pb[[y0, x1]] - sat_pb[[y1, x0]] + sat_pb[[y0, x0]]
    };

    let (oh, ow) = (h - window + 1, w - window + 1);
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let (y1, x1) = (y + window, x + window);
            let cross = rect_c(y, x, y1, x1);
            let num = 2.0 * cross.norm() + k;
            let den = rect_a(y, x, y1, x1) + rect_b(y, x, y1, x1) + k;
            out[[y, x]] = num / den;
        }
    }
    Ok(out)
}

/// Complex-wavelet SSIM: mean of the windowed subband similarity over every
/// subband of the steerable pyramid decomposition of both frames.
pub fn cw_ssim(a: &Frame, b: &Frame, params: &CwSsimParams) -> Result<f64> {
    params.validate()?;
    let pyramid = SteerablePyramid::new(
        a.width(),
        a.height(),
        params.pyramid_levels,
        params.orientations,
    )?;
    cw_ssim_with(a, b, params, &pyramid)
}

/// [`cw_ssim`] with a caller-provided pyramid, so per-frame evaluation over
/// an utterance can reuse the filter bank.
pub fn cw_ssim_with(
    a: &Frame,
    b: &Frame,
    params: &CwSsimParams,
    pyramid: &SteerablePyramid,
) -> Result<f64> {
    check_pair(a, b)?;
    params.validate()?;
    if a.width() != pyramid.width() || a.height() != pyramid.height() {
        return Err(Error::Contract("pyramid geometry does not match the frames".into()));
    }
    if a.width() < params.window_size || a.height() < params.window_size {
        return Err(Error::Size(format!(
            "frame {}x{} too small for the {}x{} CW-SSIM window",
            a.width(),
            a.height(),
            params.window_size,
            params.window_size
        )));
    }
    let bands_a = pyramid.decompose(a.data())?;
    let bands_b = pyramid.decompose(b.data())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (wa, wb) in bands_a.iter().zip(&bands_b) {
        let values = cw_ssim_subband(wa, wb, params.window_size, params.k)?;
        total += values.iter().sum::<f64>();
        count += values.len();
    }
    Ok(total / count as f64)
}

/// The three per-frame quality measures for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub mse: f64,
    pub ssim: f64,
    pub cw_ssim: f64,
}

/// Which pair of images a measurement compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Original frame vs network output.
    ORec,
    /// PCA-recovered original vs network output.
    PcaRec,
    /// Original frame vs its PCA-recovered version.
    OPca,
}

impl Pairing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pairing::ORec => "O_rec",
            Pairing::PcaRec => "PCA_rec",
            Pairing::OPca => "O_PCA",
        }
    }

    pub const ALL: [Pairing; 3] = [Pairing::ORec, Pairing::PcaRec, Pairing::OPca];
}

/// Per-frame metric curves for one utterance, one entry per pairing.
#[derive(Debug, Clone)]
pub struct UtteranceCurves {
    pub o_rec: Vec<FrameMetrics>,
    pub pca_rec: Vec<FrameMetrics>,
    pub o_pca: Vec<FrameMetrics>,
}

impl UtteranceCurves {
    pub fn pairing(&self, p: Pairing) -> &[FrameMetrics] {
        match p {
            Pairing::ORec => &self.o_rec,
            Pairing::PcaRec => &self.pca_rec,
            Pairing::OPca => &self.o_pca,
        }
    }
}

/// Evaluates all three pairings of every frame of one utterance.
///
/// The PCA-recovered ground truth is `reconstruct(project(original))`; the
/// `O_PCA` curve therefore depends only on the originals and the basis, not
/// on the network output.
pub fn utterance_curves(
    original: &[Frame],
    predicted: &[Frame],
    basis: &EigenTongueBasis,
    ssim_params: &SsimParams,
    cw_params: &CwSsimParams,
) -> Result<UtteranceCurves> {
    if original.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "utterance has {} original frames but {} predictions",
            original.len(),
            predicted.len()
        )));
    }
    if original.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty utterance".into()));
    }
    let pyramid = SteerablePyramid::new(
        original[0].width(),
        original[0].height(),
        cw_params.pyramid_levels,
        cw_params.orientations,
    )?;
    let mut o_rec = Vec::with_capacity(original.len());
    let mut pca_rec = Vec::with_capacity(original.len());
    let mut o_pca = Vec::with_capacity(original.len());
    for (orig, pred) in original.iter().zip(predicted) {
        let recovered = reconstruct(&project(orig, basis)?, basis)?;
        let eval = |x: &Frame, y: &Frame| -> Result<FrameMetrics> {
            Ok(FrameMetrics {
                mse: mse(x, y)?,
                ssim: ssim(x, y, ssim_params)?,
                cw_ssim: cw_ssim_with(x, y, cw_params, &pyramid)?,
            })
        };
        o_rec.push(eval(orig, pred)?);
        pca_rec.push(eval(&recovered, pred)?);
        o_pca.push(eval(orig, &recovered)?);
    }
    Ok(UtteranceCurves { o_rec, pca_rec, o_pca })
}

/// Population mean and standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Stat { mean, std: var.sqrt() }
}

/// Frame metrics of one utterance with its per-utterance means.
#[derive(Debug, Clone)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub frames: Vec<FrameMetrics>,
}

impl UtteranceMetrics {
    pub fn mean(&self) -> FrameMetrics {
        let n = self.frames.len() as f64;
        FrameMetrics {
            mse: self.frames.iter().map(|f| f.mse).sum::<f64>() / n,
            ssim: self.frames.iter().map(|f| f.ssim).sum::<f64>() / n,
            cw_ssim: self.frames.iter().map(|f| f.cw_ssim).sum::<f64>() / n,
        }
    }
}

/// Corpus-level aggregation of per-frame metrics for one system and pairing.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub system: String,
    pub pairing: Pairing,
    pub utterances: Vec<UtteranceMetrics>,
    pub mse: Stat,
    pub ssim: Stat,
    pub cw_ssim: Stat,
}

/// Pools every frame of every utterance and reports population statistics.
pub fn aggregate(
    system: &str,
    pairing: Pairing,
    utterances: Vec<UtteranceMetrics>,
) -> Result<QualityReport> {
    let total: usize = utterances.iter().map(|u| u.frames.len()).sum();
    if total == 0 {
        return Err(Error::Contract("cannot aggregate zero frames".into()));
    }
    let all = || utterances.iter().flat_map(|u| u.frames.iter());
    let mse = stat(all().map(|f| f.mse));
    let ssim = stat(all().map(|f| f.ssim));
    let cw_ssim = stat(all().map(|f| f.cw_ssim));
    Ok(QualityReport { system: system.to_string(), pairing, utterances, mse, ssim, cw_ssim })
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

/// CSV of per-frame values: `utterance_id,frame,metric,pairing,value`.
pub fn per_frame_csv(rows: &[(String, UtteranceCurves)]) -> String {
    let mut out = String::from("utterance_id,frame,metric,pairing,value\n");
    for (id, curves) in rows {
        for pairing in Pairing::ALL {
            for (i, m) in curves.pairing(pairing).iter().enumerate() {
                for (metric, value) in
                    [("mse", m.mse), ("ssim", m.ssim), ("cwssim", m.cw_ssim)]
                {
                    out.push_str(&format!(
                        "{id},{i},{metric},{},{value:.9}\n",
                        pairing.as_str()
                    ));
                }
            }
        }
    }
    out
}

/// CSV of aggregated statistics: `system,pairing,metric,mean,std`.
pub fn summary_csv(reports: &[QualityReport]) -> String {
    let mut out = String::from("system,pairing,metric,mean,std\n");
    for r in reports {
        for (metric, stat) in [("mse", r.mse), ("ssim", r.ssim), ("cwssim", r.cw_ssim)] {
            out.push_str(&format!(
                "{},{},{metric},{:.6},{:.6}\n",
                r.system,
                r.pairing.as_str(),
                stat.mean,
                stat.std
            ));
        }
    }
    out
}

/// Plain-text comparison table: one row per system, mean and standard
/// deviation for each of the three metrics.
pub fn summary_table(reports: &[QualityReport]) -> String {
    let name_width = reports
        .iter()
        .map(|r| r.system.len())
        .chain(std::iter::once("System".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$} | {:>9} {:>9} | {:>7} {:>7} | {:>7} {:>7}\n",
        "System", "MSE", "Std.dev.", "SSIM", "Std.dev.", "CW-SSIM", "Std.dev."
    ));
    out.push_str(&format!(
        "{:-<name_width$}-+-{:-<19}-+-{:-<15}-+-{:-<15}\n",
        "", "", "", ""
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<name_width$} | {:>9.2} {:>9.2} | {:>7.2} {:>7.2} | {:>7.2} {:>7.2}\n",
            r.system, r.mse.mean, r.mse.std, r.ssim.mean, r.ssim.std, r.cw_ssim.mean, r.cw_ssim.std
        ));
    }
    out
}
