//! Frame-level F0 tracking by normalized autocorrelation with parabolic
//! lag refinement and a fixed voicing-confidence threshold.

use super::{stft::HOP_SIZE, AudioBuffer};
use crate::error::{Error, Result};
use crate::tensor::reflect_index;

/// F0 extraction settings. Defaults: 50-800 Hz search band, 1024-sample
/// analysis window, voicing threshold 0.3.
#[derive(Clone, Copy, Debug)]
pub struct F0Config {
    pub fmin: f64,
    pub fmax: f64,
    pub window: usize,
    pub voicing_threshold: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            fmin: 50.0,
            fmax: 800.0,
            window: 1024,
            voicing_threshold: 0.3,
        }
    }
}

/// Frame-level F0 in Hz (0 where unvoiced) plus V/UV flags.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    f0: Vec<f32>,
    vuv: Vec<bool>,
}

impl F0Track {
    pub fn new(f0: Vec<f32>, vuv: Vec<bool>) -> Result<Self> {
        if f0.is_empty() || f0.len() != vuv.len() {
            return Err(Error::Shape(format!(
                "f0 track: {} values vs {} flags",
                f0.len(),
                vuv.len()
            )));
        }
        for (i, (&f, &v)) in f0.iter().zip(&vuv).enumerate() {
            if v != (f > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "frame {i}: vuv flag {v} inconsistent with f0 {f}"
                )));
            }
            if v && !(50.0..=800.0).contains(&f) {
                return Err(Error::InvalidArg(format!(
                    "frame {i}: voiced f0 {f} outside [50, 800] Hz"
                )));
            }
        }
        Ok(Self { f0, vuv })
    }

    /// Track built from F0 values alone; flags derived as `f0 > 0`.
    pub fn from_f0(f0: Vec<f32>) -> Result<Self> {
        let vuv = vuv_flags(&f0);
        Self::new(f0, vuv)
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn f0(&self) -> &[f32] {
        &self.f0
    }

    pub fn vuv(&self) -> &[bool] {
        &self.vuv
    }

    pub fn voiced_count(&self) -> usize {
        self.vuv.iter().filter(|&&v| v).count()
    }

    pub fn slice(&self, start: usize, len: usize) -> F0Track {
        F0Track {
            f0: self.f0[start..start + len].to_vec(),
            vuv: self.vuv[start..start + len].to_vec(),
        }
    }
}

/// V/UV flag sequence: voiced wherever `f0 > 0`.
pub fn vuv_flags(f0: &[f32]) -> Vec<bool> {
    f0.iter().map(|&f| f > 0.0).collect()
}

/// F0 track with the default configuration. One frame per 256-sample hop
/// of the padded signal, aligned with [`super::mel_spectrogram`].
pub fn extract_f0(audio: &AudioBuffer) -> F0Track {
    extract_f0_with(audio, &F0Config::default())
}

pub fn extract_f0_with(audio: &AudioBuffer, cfg: &F0Config) -> F0Track {
    let padded = audio.padded_to_hop();
    let x = padded.samples();
    let sr = audio.sample_rate() as f64;
    let n_frames = x.len() / HOP_SIZE;
    let w = cfg.window;
    let half = w / 2;

    let lag_min = (sr / cfg.fmax).ceil() as usize;
    let lag_max = ((sr / cfg.fmin).floor() as usize).min(w - 2);

    let mut f0 = vec![0.0f32; n_frames];
    let mut vuv = vec![false; n_frames];
    let mut frame = vec![0.0f64; w];

    for l in 0..n_frames {
        let center = l * HOP_SIZE;
        for (j, slot) in frame.iter_mut().enumerate() {
            let pos = center as isize + j as isize - half as isize;
            *slot = x[reflect_index(pos, x.len())] as f64;
        }
        if let Some(hz) = frame_f0(&frame, sr, lag_min, lag_max, cfg.voicing_threshold) {
            f0[l] = hz.clamp(cfg.fmin, cfg.fmax) as f32;
            vuv[l] = true;
        }
    }
    F0Track { f0, vuv }
}

/// Best F0 candidate for one analysis frame, or `None` when unvoiced.
fn frame_f0(frame: &[f64], sr: f64, lag_min: usize, lag_max: usize, threshold: f64) -> Option<f64> {
    let w = frame.len();
    let energy: f64 = frame.iter().map(|v| v * v).sum();
    if energy < 1e-10 {
        return None;
    }

    // prefix sums of x^2 for the normalization terms
    let mut sq_prefix = vec![0.0f64; w + 1];
    for i in 0..w {
        sq_prefix[i + 1] = sq_prefix[i] + frame[i] * frame[i];
    }

    let n_lags = lag_max - lag_min + 1;
    let mut corr = vec![0.0f64; n_lags];
    for (j, c) in corr.iter_mut().enumerate() {
        let lag = lag_min + j;
        let mut acc = 0.0f64;
        for i in 0..w - lag {
            acc += frame[i] * frame[i + lag];
        }
        let e0 = sq_prefix[w - lag]; // sum of x[0..w-lag]^2
        let e1 = sq_prefix[w] - sq_prefix[lag]; // sum of x[lag..w]^2
        *c = acc / (e0 * e1).sqrt().max(1e-12);
    }

    let best = corr.iter().cloned().fold(f64::MIN, f64::max);
    if best < threshold {
        return None;
    }

    // earliest local maximum close to the global one; avoids octave-down
    // picks when several period multiples correlate equally well
    let accept = (0.85 * best).max(threshold);
    let mut pick = None;
    for j in 0..n_lags {
        let left = if j > 0 { corr[j - 1] } else { f64::MIN };
        let right = if j + 1 < n_lags { corr[j + 1] } else { f64::MIN };
        if corr[j] >= accept && corr[j] >= left && corr[j] >= right {
            pick = Some(j);
            break;
        }
    }
    let j = pick.unwrap_or_else(|| {
        corr.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    });

    // parabolic refinement around the picked lag
    let lag = (lag_min + j) as f64;
    let refined = if j > 0 && j + 1 < n_lags {
        let (a, b, c) = (corr[j - 1], corr[j], corr[j + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            lag + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            lag
        }
    } else {
        lag
    };
    Some(sr / refined)
}
