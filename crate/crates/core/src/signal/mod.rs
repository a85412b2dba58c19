//! Audio I/O and acoustic feature extraction.
//!
//! All features share one framing convention: the signal is zero-padded at
//! the end to a multiple of the 256-sample hop, then reflect-padded around
//! the edges so frame `l` is centred on sample `l*256`. A padded signal of
//! `T` samples therefore yields exactly `T/256` frames, and the 256x
//! upsampling generator reproduces the padded length sample for sample.

mod f0;
mod stft;
mod wav;

pub use f0::{extract_f0, extract_f0_with, vuv_flags, F0Config, F0Track};
pub use stft::{
    log_amplitude_spectrogram, magnitude_graph, mel_filterbank, mel_filterbank_f64, mel_graph,
    mel_spectrogram, stft_basis, MelSpectrogram, Spectrogram, StftBasis, FFT_SIZE, HOP_SIZE,
    LOG_FLOOR, MEL_BANDS, MEL_FMAX, MEL_FMIN, SPEC_BINS, WINDOW_SIZE,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Default sampling rate of the whole pipeline.
pub const SAMPLE_RATE: u32 = 22050;

/// Mono waveform with its sampling rate. Samples are expected in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty audio buffer".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("zero sample rate".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Audio("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy zero-padded at the end to a multiple of the hop size.
    pub fn padded_to_hop(&self) -> AudioBuffer {
        let hop = HOP_SIZE;
        let t = self.samples.len();
        let padded = t.div_ceil(hop) * hop;
        let mut samples = self.samples.clone();
        samples.resize(padded, 0.0);
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}
