//! On-disk corpus formats and audio/ultrasound alignment.
//!
//! An utterance is a pair of sibling files: an `.utr` ultrasound container
//! (raw scanline bytes plus geometry/frame-rate header) and a 16-bit mono
//! PCM `.wav` waveform. A corpus is a directory of such pairs plus a
//! tab-separated manifest assigning utterances to partitions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::*;
use crate::error::{Error, Result};
use crate::image::Frame;

const UTR_MAGIC: &[u8; 4] = b"UTIR";
const UTR_VERSION: u16 = 1;

/// A sequence of raw grayscale ultrasound frames with geometry metadata.
///
/// Native capture frames are 64 scanlines (height) of 842 depth samples
/// (width); resized working frames are 64x64. Pixels are stored flat,
/// frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundRecording {
    width: usize,
    height: usize,
    fps: f64,
    utterance_id: String,
    pixels: Vec<u8>,
}

impl UltrasoundRecording {
    pub fn new(
        width: usize,
        height: usize,
        fps: f64,
        utterance_id: impl Into<String>,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("frame dimensions must be positive".into()));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::Validation(format!("fps must be positive, got {fps}")));
        }
        if pixels.is_empty() || pixels.len() % (width * height) != 0 {
            return Err(Error::Validation(format!(
                "pixel buffer length {} is not a positive multiple of {width}x{height}",
                pixels.len()
            )));
        }
        Ok(UltrasoundRecording { width, height, fps, utterance_id: utterance_id.into(), pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn frame_count(&self) -> usize {
        self.pixels.len() / (self.width * self.height)
    }

    /// Raw bytes of one frame, row-major.
    pub fn frame_bytes(&self, index: usize) -> Result<&[u8]> {
        let n = self.frame_count();
        if index >= n {
            return Err(Error::Index { index, len: n });
        }
        let stride = self.width * self.height;
        Ok(&self.pixels[index * stride..(index + 1) * stride])
    }

    /// One frame as real-valued raw255 intensities.
    pub fn frame(&self, index: usize) -> Result<Frame> {
        Frame::from_bytes(self.width, self.height, self.frame_bytes(index)?)
    }

    /// Time of a frame relative to the recording start, in seconds.
    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }
}

/// Mono PCM waveform normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    samples: Vec<f64>,
    sample_rate: u32,
    utterance_id: String,
}

impl AudioTrack {
    pub fn new(samples: Vec<f64>, sample_rate: u32, utterance_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("audio samples must be finite".into()));
        }
        Ok(AudioTrack { samples, sample_rate, utterance_id: utterance_id.into() })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A time-synchronized audio/ultrasound pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelUtterance {
    pub ultrasound: UltrasoundRecording,
    pub audio: AudioTrack,
    /// Audio time of ultrasound frame 0, in seconds.
    pub sync_offset: f64,
}

impl ParallelUtterance {
    pub fn new(ultrasound: UltrasoundRecording, audio: AudioTrack, sync_offset: f64) -> Result<Self> {
        if ultrasound.utterance_id != audio.utterance_id {
            return Err(Error::Pairing(format!(
                "ultrasound id {:?} does not match audio id {:?}",
                ultrasound.utterance_id, audio.utterance_id
            )));
        }
        if !(sync_offset >= 0.0) || !sync_offset.is_finite() {
            return Err(Error::Validation(format!("sync offset must be >= 0, got {sync_offset}")));
        }
        let last_frame_time = sync_offset + ultrasound.frame_time(ultrasound.frame_count() - 1);
        if audio.duration() + 1e-9 < last_frame_time {
            return Err(Error::Validation(format!(
                "audio duration {:.4}s does not cover the last frame instant {:.4}s",
                audio.duration(),
                last_frame_time
            )));
        }
        Ok(ParallelUtterance { ultrasound, audio, sync_offset })
    }

    pub fn utterance_id(&self) -> &str {
        self.ultrasound.utterance_id()
    }
}

/// The audio samples centered on one ultrasound frame's instant.
///
/// The slice has `round(window_length * sample_rate)` samples; its start is
/// `round(center - length/2)` where `center` is the frame instant expressed
/// in samples. Positions outside the waveform read as zero.
pub fn frame_audio_window(
    u: &ParallelUtterance,
    frame_index: usize,
    window_length: f64,
) -> Result<Vec<f64>> {
    let n = u.ultrasound.frame_count();
    if frame_index >= n {
        return Err(Error::Index { index: frame_index, len: n });
    }
    let sr = u.audio.sample_rate as f64;
    let len = (window_length * sr).round() as usize;
    let center = (u.sync_offset + u.ultrasound.frame_time(frame_index)) * sr;
    let start = (center - len as f64 / 2.0).round() as isize;
    let samples = u.audio.samples();
    Ok((start..start + len as isize)
        .map(|i| {
            if i < 0 || i as usize >= samples.len() {
                0.0
            } else {
                samples[i as usize]
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// `.utr` container
// ---------------------------------------------------------------------------

pub fn read_utr<R: Read>(r: &mut R) -> Result<UltrasoundRecording> {
    read_magic(r, UTR_MAGIC, "ultrasound container")?;
    let version = read_u16(r, "version")?;
    if version != UTR_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let width = read_u16(r, "width")? as usize;
    let height = read_u16(r, "height")? as usize;
    let fps = read_f64(r, "fps")?;
    let frame_count = read_u32(r, "frame count")? as usize;
    let id_len = read_u16(r, "utterance id length")? as usize;
    let id_bytes = read_exact_buf(r, id_len, "utterance id")?;
    let utterance_id = String::from_utf8(id_bytes)
        .map_err(|_| Error::Format("utterance id is not valid UTF-8".into()))?;
    if width == 0 || height == 0 || frame_count == 0 {
        return Err(Error::Format("header declares empty geometry".into()));
    }
    let pixels = read_exact_buf(r, frame_count * width * height, "frame payload")?;
    expect_eof(r, "ultrasound container")?;
    UltrasoundRecording::new(width, height, fps, utterance_id, pixels)
}

pub fn write_utr<W: Write>(w: &mut W, rec: &UltrasoundRecording) -> Result<()> {
    let err = |e: std::io::Error| Error::Io { path: PathBuf::from("<stream>"), source: e };
    w.write_all(UTR_MAGIC).map_err(err)?;
    write_u16(w, UTR_VERSION).map_err(err)?;
    write_u16(w, rec.width as u16).map_err(err)?;
    write_u16(w, rec.height as u16).map_err(err)?;
    write_f64(w, rec.fps).map_err(err)?;
    write_u32(w, rec.frame_count() as u32).map_err(err)?;
    let id = rec.utterance_id.as_bytes();
    write_u16(w, id.len() as u16).map_err(err)?;
    w.write_all(id).map_err(err)?;
    w.write_all(&rec.pixels).map_err(err)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// RIFF/WAVE, 16-bit mono PCM
// ---------------------------------------------------------------------------

pub fn read_wav<R: Read>(r: &mut R, utterance_id: &str) -> Result<AudioTrack> {
    let riff = read_exact_buf(r, 12, "RIFF header")?;
    if &riff[0..4] != b"RIFF" || &riff[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut sample_rate = 0u32;
    let mut channels = 0u16;
    let mut bits = 0u16;
    let mut fmt_seen = false;
    loop {
        let mut header = [0u8; 8];
        if r.read_exact(&mut header).is_err() {
            return Err(Error::Corruption("WAVE file has no data chunk".into()));
        }
        let size = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        match &header[0..4] {
            b"fmt " => {
                let body = read_exact_buf(r, size, "fmt chunk")?;
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                let format = u16::from_le_bytes([body[0], body[1]]);
                channels = u16::from_le_bytes([body[2], body[3]]);
                sample_rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                bits = u16::from_le_bytes([body[14], body[15]]);
                if format != 1 {
                    return Err(Error::Format(format!("unsupported WAVE format tag {format}")));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(Error::Format("data chunk precedes fmt chunk".into()));
                }
                if channels != 1 || bits != 16 {
                    return Err(Error::Format(format!(
                        "expected 16-bit mono PCM, got {bits}-bit {channels}-channel"
                    )));
                }
                if size % 2 != 0 {
                    return Err(Error::Corruption("odd data chunk size for 16-bit PCM".into()));
                }
                let body = read_exact_buf(r, size, "PCM data")?;
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioTrack::new(samples, sample_rate, utterance_id);
            }
            _ => {
                // Skip unknown chunks (word-aligned).
                let skip = size + (size & 1);
                read_exact_buf(r, skip, "chunk body")?;
            }
        }
    }
}

pub fn write_wav<W: Write>(w: &mut W, track: &AudioTrack) -> Result<()> {
    let err = |e: std::io::Error| Error::Io { path: PathBuf::from("<stream>"), source: e };
    let data_size = track.samples.len() * 2;
    let byte_rate = track.sample_rate * 2;
    w.write_all(b"RIFF").map_err(err)?;
    write_u32(w, (36 + data_size) as u32).map_err(err)?;
    w.write_all(b"WAVE").map_err(err)?;
    w.write_all(b"fmt ").map_err(err)?;
    write_u32(w, 16).map_err(err)?;
    write_u16(w, 1).map_err(err)?; // PCM
    write_u16(w, 1).map_err(err)?; // mono
    write_u32(w, track.sample_rate).map_err(err)?;
    write_u32(w, byte_rate).map_err(err)?;
    write_u16(w, 2).map_err(err)?; // block align
    write_u16(w, 16).map_err(err)?;
    w.write_all(b"data").map_err(err)?;
    write_u32(w, data_size as u32).map_err(err)?;
    let mut buf = Vec::with_capacity(data_size);
    for &s in &track.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        buf.extend_from_slice(&q.to_le_bytes());
    }
    w.write_all(&buf).map_err(err)?;
    Ok(())
}

/// Quantizes a sample onto the 16-bit PCM grid the writer emits, so that a
/// save/load round trip is value-identical.
pub fn quantize_pcm(s: f64) -> f64 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0
}

// ---------------------------------------------------------------------------
// Utterance load/save
// ---------------------------------------------------------------------------

fn sibling_wav(utr_path: &Path) -> PathBuf {
    utr_path.with_extension("wav")
}

/// Loads the `.utr` container at `path` and its sibling `.wav` waveform.
pub fn load_utterance(path: &Path) -> Result<ParallelUtterance> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ultrasound = read_utr(&mut BufReader::new(file))?;
    let wav_path = sibling_wav(path);
    let file = File::open(&wav_path).map_err(|e| Error::io(&wav_path, e))?;
    let audio = read_wav(&mut BufReader::new(file), ultrasound.utterance_id())?;
    ParallelUtterance::new(ultrasound, audio, 0.0)
}

/// Writes `u` as an `.utr` container plus sibling `.wav`, byte-deterministic
/// for identical input.
pub fn save_utterance(u: &ParallelUtterance, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_utr(&mut w, &u.ultrasound)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    let wav_path = sibling_wav(path);
    let file = File::create(&wav_path).map_err(|e| Error::io(&wav_path, e))?;
    let mut w = BufWriter::new(file);
    write_wav(&mut w, &u.audio)?;
    w.flush().map_err(|e| Error::io(&wav_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Corpus manifest and partitioning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

/// Assignment of utterance ids to train/validation/test partitions.
///
/// The test partition is isolated at the utterance level; the validation
/// partition is usually empty here because validation is carved out of the
/// pooled training frames downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub root_path: PathBuf,
}

impl CorpusManifest {
    pub fn new(
        train_ids: Vec<String>,
        validation_ids: Vec<String>,
        test_ids: Vec<String>,
        root_path: PathBuf,
    ) -> Result<Self> {
        let m = CorpusManifest { train_ids, validation_ids, test_ids, root_path };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.all_ids() {
            if !seen.insert(id) {
                return Err(Error::Validation(format!(
                    "utterance id {id:?} appears in more than one partition"
                )));
            }
        }
        Ok(())
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train_ids
            .iter()
            .chain(self.validation_ids.iter())
            .chain(self.test_ids.iter())
    }

    /// Path of the `.utr` container for an utterance id.
    pub fn utterance_path(&self, id: &str) -> PathBuf {
        self.root_path.join(format!("{id}.utr"))
    }
}

/// Partitions utterance ids into train and test sets with a seeded shuffle.
///
/// Only the test split happens at the utterance level; `validation_fraction`
/// is validated here and applied downstream at the frame level (contiguous
/// per-utterance tail blocks of the pooled training frames), so the returned
/// validation list is empty.
pub fn split_corpus(
    ids: &[String],
    validation_fraction: f64,
    test_count: usize,
    seed: u64,
    root_path: &Path,
) -> Result<CorpusManifest> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    if test_count >= ids.len() {
        return Err(Error::Size(format!(
            "need more than {test_count} utterances to hold out {test_count} for testing, got {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test_ids = shuffled.split_off(shuffled.len() - test_count);
    CorpusManifest::new(shuffled, Vec::new(), test_ids, root_path.to_path_buf())
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (partition, id) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("manifest line {} is not <partition>\\t<id>", lineno + 1))
        })?;
        match partition {
            "train" => train.push(id.to_string()),
            "validation" => validation.push(id.to_string()),
            "test" => test.push(id.to_string()),
            other => {
                return Err(Error::Format(format!(
                    "unknown partition {other:?} on manifest line {}",
                    lineno + 1
                )))
            }
        }
    }
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    CorpusManifest::new(train, validation, test, root)
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (partition, ids) in [
        (Partition::Train, &manifest.train_ids),
        (Partition::Validation, &manifest.validation_ids),
        (Partition::Test, &manifest.test_ids),
    ] {
        for id in ids {
            out.push_str(partition.as_str());
            out.push('\t');
            out.push_str(id);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_utterance(id: &str, frames: usize, seed: u64) -> ParallelUtterance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..frames * 8 * 6).map(|_| rng.random()).collect();
        let rec = UltrasoundRecording::new(6, 8, 82.0, id, pixels).unwrap();
        let n_samples = ((frames as f64 / 82.0) * 22_050.0).ceil() as usize;
        let samples: Vec<f64> = (0..n_samples)
            .map(|_| quantize_pcm(rng.random_range(-0.5..0.5)))
            .collect();
        let audio = AudioTrack::new(samples, 22_050, id).unwrap();
        ParallelUtterance::new(rec, audio, 0.0).unwrap()
    }

    #[test]
    fn header_forces_payload_size() {
        let mut bytes = Vec::new();
        let pixels = vec![7u8; 3 * 842 * 64];
        let rec = UltrasoundRecording::new(842, 64, 82.0, "u1", pixels).unwrap();
        write_utr(&mut bytes, &rec).unwrap();
        let back = read_utr(&mut &bytes[..]).unwrap();
        assert_eq!(back.frame_count(), 3);
        assert_eq!(back.width(), 842);
        assert_eq!(back.height(), 64);
        assert_eq!(back.fps(), 82.0);
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let mut bytes = Vec::new();
        let rec =
            UltrasoundRecording::new(6, 8, 82.0, "u1", vec![1u8; 2 * 48]).unwrap();
        write_utr(&mut bytes, &rec).unwrap();
        bytes.pop();
        assert!(matches!(read_utr(&mut &bytes[..]), Err(Error::Corruption(_))));
    }

    #[test]
    fn trailing_garbage_is_corruption() {
        let mut bytes = Vec::new();
        let rec = UltrasoundRecording::new(6, 8, 82.0, "u1", vec![1u8; 48]).unwrap();
        write_utr(&mut bytes, &rec).unwrap();
        bytes.push(0);
        assert!(matches!(read_utr(&mut &bytes[..]), Err(Error::Corruption(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let bytes = b"NOPE\x01\x00".to_vec();
        assert!(matches!(read_utr(&mut &bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let u = toy_utterance("rt", 5, 11);
        let path = dir.path().join("rt.utr");
        save_utterance(&u, &path).unwrap();
        let back = load_utterance(&path).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let u = toy_utterance("det", 4, 3);
        let p1 = dir.path().join("a.utr");
        let p2 = dir.path().join("b.utr");
        save_utterance(&u, &p1).unwrap();
        save_utterance(&u, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(p1.with_extension("wav")).unwrap(),
            std::fs::read(p2.with_extension("wav")).unwrap()
        );
    }

    #[test]
    fn invalid_fps_rejected_before_write() {
        assert!(matches!(
            UltrasoundRecording::new(6, 8, 0.0, "x", vec![0u8; 48]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn mismatched_ids_are_a_pairing_error() {
        let rec = UltrasoundRecording::new(6, 8, 82.0, "a", vec![0u8; 48]).unwrap();
        let audio = AudioTrack::new(vec![0.0; 22_050], 22_050, "b").unwrap();
        assert!(matches!(
            ParallelUtterance::new(rec, audio, 0.0),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn window_length_and_left_padding() {
        let u = toy_utterance("w", 16, 5);
        let w = frame_audio_window(&u, 0, 0.012).unwrap();
        assert_eq!(w.len(), 265); // round(0.012 * 22050)
        // Frame 0 is centered at sample 0: everything left of center is padding.
        assert!(w[..133].iter().all(|&s| s == 0.0));
        assert_eq!(w[133], u.audio.samples()[0]);
    }

    #[test]
    fn frame_centers_are_one_frame_period_apart() {
        let u = toy_utterance("c", 16, 6);
        for i in 1..16 {
            let dt = u.ultrasound.frame_time(i) - u.ultrasound.frame_time(i - 1);
            assert!((dt - 1.0 / 82.0).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_match_bruteforce_slicing_oracle() {
        let u = toy_utterance("o", 24, 9);
        let sr = 22_050.0;
        let len = 265usize;
        for i in 0..24 {
            let got = frame_audio_window(&u, i, 0.012).unwrap();
            // Independent slicing: center in samples, rounded start, zero pad.
            let center = (i as f64 / 82.0) * sr;
            let start = (center - len as f64 / 2.0).round() as i64;
            let want: Vec<f64> = (start..start + len as i64)
                .map(|j| {
                    u.audio
                        .samples()
                        .get(usize::try_from(j).ok().unwrap_or(usize::MAX))
                        .copied()
                        .unwrap_or(0.0)
                })
                .collect();
            assert_eq!(got, want, "frame {i}");
        }
    }

    #[test]
    fn constant_waveform_gives_identical_interior_windows() {
        let rec = UltrasoundRecording::new(6, 8, 82.0, "k", vec![0u8; 48 * 40]).unwrap();
        let samples = vec![0.25; 22_050];
        let audio = AudioTrack::new(samples, 22_050, "k").unwrap();
        let u = ParallelUtterance::new(rec, audio, 0.0).unwrap();
        let reference = frame_audio_window(&u, 10, 0.012).unwrap();
        for i in 11..30 {
            assert_eq!(frame_audio_window(&u, i, 0.012).unwrap(), reference);
        }
    }

    #[test]
    fn window_index_out_of_range() {
        let u = toy_utterance("i", 4, 2);
        assert!(matches!(
            frame_audio_window(&u, 4, 0.012),
            Err(Error::Index { index: 4, len: 4 })
        ));
    }

    #[test]
    fn split_matches_corpus_proportions() {
        let ids: Vec<String> = (0..209).map(|i| format!("s{i:03}")).collect();
        let m = split_corpus(&ids, 0.10, 9, 7, Path::new("/tmp")).unwrap();
        assert_eq!(m.train_ids.len(), 200);
        assert!(m.validation_ids.is_empty());
        assert_eq!(m.test_ids.len(), 9);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let ids: Vec<String> = (0..30).map(|i| format!("u{i}")).collect();
        let a = split_corpus(&ids, 0.1, 9, 42, Path::new(".")).unwrap();
        let b = split_corpus(&ids, 0.1, 9, 42, Path::new(".")).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(&ids, 0.1, 9, 43, Path::new(".")).unwrap();
        assert_ne!(a.train_ids, c.train_ids);
    }

    #[test]
    fn split_rejects_too_few_utterances() {
        let ids: Vec<String> = (0..9).map(|i| format!("u{i}")).collect();
        assert!(matches!(
            split_corpus(&ids, 0.1, 9, 1, Path::new(".")),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = (0..20).map(|i| format!("u{i:02}")).collect();
        let m = split_corpus(&ids, 0.1, 4, 1, dir.path()).unwrap();
        let path = dir.path().join("corpus.manifest");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        assert!(CorpusManifest::new(
            vec!["a".into()],
            vec![],
            vec!["a".into()],
            PathBuf::from("."),
        )
        .is_err());
    }
}
