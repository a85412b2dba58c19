//! STFT-based features. The DFT is expressed as two matrix products with
//! precomputed cosine/sine bases so the same code path serves both plain
//! feature extraction and the differentiable mel loss used in training.

use std::sync::{Arc, OnceLock};

use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const HOP_SIZE: usize = 256;
pub const WINDOW_SIZE: usize = 1024;
pub const FFT_SIZE: usize = 1024;
pub const SPEC_BINS: usize = FFT_SIZE / 2 + 1;
pub const MEL_BANDS: usize = 80;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 8000.0;
pub const LOG_FLOOR: f32 = 1e-5;

const DB_PER_LN: f32 = 8.685_889_6; // 20 / ln(10)

/// Precomputed window, DFT matrices and mel filterbank for one sample rate.
pub struct StftBasis {
    pub sample_rate: u32,
    window: Vec<f32>,
    dft_cos: Tensor, // (WINDOW_SIZE, SPEC_BINS)
    dft_sin: Tensor,
    mel_weights: Vec<f32>, // (MEL_BANDS, SPEC_BINS) row-major
    mel_fb_t: Tensor,      // (SPEC_BINS, MEL_BANDS)
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over `[MEL_FMIN, MEL_FMAX]`, peak weight 1,
/// in f64 (the metric computations keep full precision).
pub fn mel_filterbank_f64(sample_rate: u32) -> Vec<f64> {
    let mel_lo = hz_to_mel(MEL_FMIN);
    let mel_hi = hz_to_mel(MEL_FMAX);
    let edges: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    let mut fb = vec![0.0f64; MEL_BANDS * SPEC_BINS];
    for m in 0..MEL_BANDS {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..SPEC_BINS {
            let f = k as f64 * sample_rate as f64 / FFT_SIZE as f64;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            fb[m * SPEC_BINS + k] = w;
        }
    }
    fb
}

/// f32 filterbank used by the differentiable mel path.
pub fn mel_filterbank(sample_rate: u32) -> Vec<f32> {
    mel_filterbank_f64(sample_rate)
        .into_iter()
        .map(|w| w as f32)
        .collect()
}

impl StftBasis {
    pub fn new(sample_rate: u32) -> Self {
        // periodic Hann window
        let window: Vec<f32> = (0..WINDOW_SIZE)
            .map(|n| {
                (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SIZE as f64).cos())
                    as f32
            })
            .collect();

        let mut cos_m = vec![0.0f32; WINDOW_SIZE * SPEC_BINS];
        let mut sin_m = vec![0.0f32; WINDOW_SIZE * SPEC_BINS];
        for n in 0..WINDOW_SIZE {
            for k in 0..SPEC_BINS {
                let angle = 2.0 * std::f64::consts::PI * (k * n) as f64 / FFT_SIZE as f64;
                cos_m[n * SPEC_BINS + k] = angle.cos() as f32;
                sin_m[n * SPEC_BINS + k] = -angle.sin() as f32;
            }
        }

        let mel_weights = mel_filterbank(sample_rate);
        let mut fb_t = vec![0.0f32; SPEC_BINS * MEL_BANDS];
        for m in 0..MEL_BANDS {
            for k in 0..SPEC_BINS {
                fb_t[k * MEL_BANDS + m] = mel_weights[m * SPEC_BINS + k];
            }
        }

        Self {
            sample_rate,
            window,
            dft_cos: Tensor::new(vec![WINDOW_SIZE, SPEC_BINS], cos_m).unwrap(),
            dft_sin: Tensor::new(vec![WINDOW_SIZE, SPEC_BINS], sin_m).unwrap(),
            mel_weights,
            mel_fb_t: Tensor::new(vec![SPEC_BINS, MEL_BANDS], fb_t).unwrap(),
        }
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    pub fn mel_weights(&self) -> &[f32] {
        &self.mel_weights
    }

    fn window_tile(&self, n_frames: usize) -> Tensor {
        let mut data = Vec::with_capacity(n_frames * WINDOW_SIZE);
        for _ in 0..n_frames {
            data.extend_from_slice(&self.window);
        }
        Tensor::new(vec![n_frames, WINDOW_SIZE], data).unwrap()
    }
}

static DEFAULT_BASIS: OnceLock<Arc<StftBasis>> = OnceLock::new();

/// Basis for `sample_rate`; the default 22050 Hz basis is cached.
pub fn stft_basis(sample_rate: u32) -> Arc<StftBasis> {
    if sample_rate == super::SAMPLE_RATE {
        Arc::clone(DEFAULT_BASIS.get_or_init(|| Arc::new(StftBasis::new(sample_rate))))
    } else {
        Arc::new(StftBasis::new(sample_rate))
    }
}

/// Windowed magnitude spectrogram `(T/hop, SPEC_BINS)` on the graph.
/// `audio` must be a mono signal with length a multiple of the hop.
pub fn magnitude_graph(g: &mut Graph, basis: &StftBasis, audio: Var) -> Result<Var> {
    let t_len = *g.value(audio).dims().last().unwrap();
    let frames = g.frames(audio, WINDOW_SIZE, HOP_SIZE)?;
    let tile = g.leaf(basis.window_tile(t_len / HOP_SIZE));
    let windowed = g.mul(frames, tile)?;
    let cos_m = g.leaf(basis.dft_cos.clone());
    let sin_m = g.leaf(basis.dft_sin.clone());
    let re = g.matmul(windowed, cos_m)?;
    let im = g.matmul(windowed, sin_m)?;
    g.magnitude(re, im)
}

/// Natural-log mel spectrogram `(T/hop, MEL_BANDS)` on the graph.
pub fn mel_graph(g: &mut Graph, basis: &StftBasis, audio: Var) -> Result<Var> {
    let mag = magnitude_graph(g, basis, audio)?;
    let fb = g.leaf(basis.mel_fb_t.clone());
    let mel = g.matmul(mag, fb)?;
    Ok(g.log_floor(mel, LOG_FLOOR))
}

/// Frame-major `L x 80` log-mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    frames: usize,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, frames: usize) -> Result<Self> {
        if frames == 0 || data.len() != frames * MEL_BANDS {
            return Err(Error::Shape(format!(
                "mel data of {} values does not match {frames} x {MEL_BANDS}",
                data.len()
            )));
        }
        Ok(Self { data, frames })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, l: usize) -> &[f32] {
        &self.data[l * MEL_BANDS..(l + 1) * MEL_BANDS]
    }

    /// Sub-range of frames `[start, start+len)`.
    pub fn slice(&self, start: usize, len: usize) -> MelSpectrogram {
        assert!(start + len <= self.frames);
        MelSpectrogram {
            data: self.data[start * MEL_BANDS..(start + len) * MEL_BANDS].to_vec(),
            frames: len,
        }
    }

    /// Channels-first `(1, 80, L)` tensor for the generator input.
    pub fn to_tensor(&self) -> Tensor {
        let l = self.frames;
        let mut data = vec![0.0f32; l * MEL_BANDS];
        for t in 0..l {
            for m in 0..MEL_BANDS {
                data[m * l + t] = self.data[t * MEL_BANDS + m];
            }
        }
        Tensor::new(vec![1, MEL_BANDS, l], data).unwrap()
    }
}

/// Log-amplitude spectrogram in dB, frame-major `L x 513`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
}

/// 80-band natural-log mel spectrogram with the shared framing convention.
pub fn mel_spectrogram(audio: &AudioBuffer) -> Result<MelSpectrogram> {
    let basis = stft_basis(audio.sample_rate());
    let padded = audio.padded_to_hop();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(padded.samples().to_vec()));
    let mel = mel_graph(&mut g, &basis, x)?;
    let t = g.tensor(mel);
    MelSpectrogram::new(t.data().to_vec(), t.dims()[0])
}

/// Log-amplitude spectrogram: `20*log10(max(|STFT|, 1e-5))`, in dB.
pub fn log_amplitude_spectrogram(audio: &AudioBuffer) -> Result<Spectrogram> {
    let basis = stft_basis(audio.sample_rate());
    let padded = audio.padded_to_hop();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(padded.samples().to_vec()));
    let mag = magnitude_graph(&mut g, &basis, x)?;
    let ln = g.log_floor(mag, LOG_FLOOR);
    let db = g.scale(ln, DB_PER_LN);
    let t = g.tensor(db);
    Ok(Spectrogram {
        data: t.data().to_vec(),
        frames: t.dims()[0],
        bins: t.dims()[1],
    })
}
