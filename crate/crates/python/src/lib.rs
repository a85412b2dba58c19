//! Python bindings for the source-filter vocoder: feature extraction, F0
//! tracking, excitation generation, checkpoint-based synthesis, training,
//! and the objective metrics. Mel matrices cross the boundary as flat
//! row-major `list[float]` plus a `(frames, bands)` shape.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sfvoc::config::RunConfig;
use sfvoc::container::FeatureFile;
use sfvoc::metrics;
use sfvoc::signal::{self, AudioBuffer, F0Track, MelSpectrogram, MEL_BANDS};
use sfvoc::train::{
    self, load_models, prepare_utterance, utterance_seed, LoadedCheckpoint, TrainState,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn audio(samples: Vec<f32>, sample_rate: u32) -> PyResult<AudioBuffer> {
    AudioBuffer::new(samples, sample_rate).map_err(err)
}

fn mel_from_py(data: Vec<f32>, frames: usize) -> PyResult<MelSpectrogram> {
    MelSpectrogram::new(data, frames).map_err(err)
}

fn track_from_py(f0: Vec<f32>, vuv: Vec<bool>) -> PyResult<F0Track> {
    F0Track::new(f0, vuv).map_err(err)
}

/// Read a mono 16-bit PCM WAV file -> (samples, sample_rate).
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f32>, u32)> {
    let a = signal::read_wav(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let rate = a.sample_rate();
    Ok((a.samples().to_vec(), rate))
}

/// Write samples (clamped to [-1, 1]) as a mono 16-bit PCM WAV file.
#[pyfunction]
fn write_wav(path: &str, samples: Vec<f32>, sample_rate: u32) -> PyResult<()> {
    signal::write_wav(path, &audio(samples, sample_rate)?)
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

/// 80-band log-mel spectrogram -> (flat data, (frames, 80)).
#[pyfunction]
fn mel_spectrogram(samples: Vec<f32>, sample_rate: u32) -> PyResult<(Vec<f32>, (usize, usize))> {
    let mel = signal::mel_spectrogram(&audio(samples, sample_rate)?).map_err(err)?;
    let frames = mel.frames();
    Ok((mel.data().to_vec(), (frames, MEL_BANDS)))
}

/// Log-amplitude spectrogram in dB -> (flat data, (frames, 513)).
#[pyfunction]
fn log_amplitude_spectrogram(
    samples: Vec<f32>,
    sample_rate: u32,
) -> PyResult<(Vec<f32>, (usize, usize))> {
    let spec = signal::log_amplitude_spectrogram(&audio(samples, sample_rate)?).map_err(err)?;
    Ok((spec.data, (spec.frames, spec.bins)))
}

/// Frame-level F0 track -> (f0_hz, vuv flags); 0 Hz marks unvoiced frames.
#[pyfunction]
fn extract_f0(samples: Vec<f32>, sample_rate: u32) -> PyResult<(Vec<f32>, Vec<bool>)> {
    let track = signal::extract_f0(&audio(samples, sample_rate)?);
    Ok((track.f0().to_vec(), track.vuv().to_vec()))
}

/// All five objective metrics for one (reference, generated) pair.
#[pyfunction]
fn evaluate_pair(
    py: Python<'_>,
    reference: Vec<f32>,
    generated: Vec<f32>,
    sample_rate: u32,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let eval = metrics::evaluate_pair(
        "pair",
        &audio(reference, sample_rate)?,
        &audio(generated, sample_rate)?,
    )
    .map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("snr_db", eval.snr_db)?;
    dict.set_item("snr_saturated", eval.snr_saturated)?;
    dict.set_item("las_rmse_db", eval.las_rmse_db)?;
    dict.set_item("mcd_db", eval.mcd_db)?;
    dict.set_item("f0_rmse_cents", eval.f0_rmse_cents)?;
    dict.set_item("vuv_error_pct", eval.vuv_error_pct)?;
    dict.set_item("frames", eval.frames)?;
    Ok(dict.unbind())
}

/// A checkpoint opened for synthesis.
#[pyclass]
struct Vocoder {
    inner: LoadedCheckpoint,
}

#[pymethods]
impl Vocoder {
    /// Load a training checkpoint.
    #[new]
    fn new(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_models(path).map_err(err)?,
        })
    }

    /// Preset name the checkpoint was built from.
    #[getter]
    fn preset(&self) -> String {
        self.inner.cfg.preset.clone()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.cfg.sample_rate
    }

    /// True once `train-f0` has populated the predictor section.
    #[getter]
    fn f0_predictor_trained(&self) -> bool {
        self.inner.f0_trained
    }

    /// Waveform from a mel matrix plus an explicit F0 track.
    #[pyo3(signature = (mel, frames, f0, vuv, seed=None))]
    fn synthesize(
        &self,
        mel: Vec<f32>,
        frames: usize,
        f0: Vec<f32>,
        vuv: Vec<bool>,
        seed: Option<u64>,
    ) -> PyResult<Vec<f32>> {
        let mel = mel_from_py(mel, frames)?;
        let track = track_from_py(f0, vuv)?;
        let out = self
            .inner
            .models
            .synthesize(
                &mel,
                &track,
                seed.unwrap_or(self.inner.cfg.seed),
                self.inner.cfg.sample_rate,
            )
            .map_err(err)?;
        Ok(out.samples().to_vec())
    }

    /// Predict (f0_hz, vuv) from the first ten mel bands.
    fn predict_f0(&self, mel: Vec<f32>, frames: usize) -> PyResult<(Vec<f32>, Vec<bool>)> {
        let mel = mel_from_py(mel, frames)?;
        let track = self
            .inner
            .models
            .predictor
            .predict(&self.inner.models.store, &mel)
            .map_err(err)?;
        Ok((track.f0().to_vec(), track.vuv().to_vec()))
    }

    /// Excitation signal for an F0 track (for inspection).
    #[pyo3(signature = (f0, vuv, seed=None))]
    fn excitation(&self, f0: Vec<f32>, vuv: Vec<bool>, seed: Option<u64>) -> PyResult<Vec<f32>> {
        let track = track_from_py(f0, vuv)?;
        let exc = self
            .inner
            .models
            .source
            .generate_from_track(
                &self.inner.models.store,
                &track,
                seed.unwrap_or(self.inner.cfg.seed),
            )
            .map_err(err)?;
        Ok(exc.e)
    }
}

/// Run a short toy-preset training on one WAV file and write a checkpoint.
/// Returns the per-step mel-loss history.
#[pyfunction]
#[pyo3(signature = (wav_path, ckpt_path, steps, seed=0))]
fn train_toy(wav_path: &str, ckpt_path: &str, steps: usize, seed: u64) -> PyResult<Vec<f32>> {
    let mut cfg = RunConfig::toy();
    cfg.seed = seed;
    let mut state = TrainState::new(cfg).map_err(err)?;
    let wav = signal::read_wav(wav_path).map_err(err)?;
    let utt = prepare_utterance(
        "utt0",
        &wav,
        &state.models.source,
        state.cfg.train.segment_len,
        utterance_seed(state.cfg.seed, 0),
    )
    .map_err(err)?;
    let mut mel_history = Vec::with_capacity(steps);
    state
        .run(&[utt], steps, |rec| mel_history.push(rec.mel))
        .map_err(err)?;
    state.save(ckpt_path).map_err(err)?;
    Ok(mel_history)
}

/// Write a feature container from raw samples (mel + F0, as `extract`).
#[pyfunction]
fn write_features(path: &str, samples: Vec<f32>, sample_rate: u32) -> PyResult<()> {
    let a = audio(samples, sample_rate)?;
    let mel = signal::mel_spectrogram(&a).map_err(err)?;
    let f0 = signal::extract_f0(&a);
    FeatureFile {
        sample_rate,
        mel,
        f0: Some(f0),
    }
    .write(path)
    .map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Sanity hook: checkpoint round-trip identity for a fresh toy state.
#[pyfunction]
fn checkpoint_roundtrip_ok(dir: &str) -> PyResult<bool> {
    let path = std::path::Path::new(dir).join("rt.ckpt");
    let state = TrainState::new(RunConfig::toy()).map_err(err)?;
    state.save(&path).map_err(err)?;
    let loaded = train::TrainState::load(&path).map_err(err)?;
    let same = state
        .models
        .store
        .iter()
        .zip(loaded.models.store.iter())
        .all(|((_, a), (_, b))| a.name == b.name && a.value.data() == b.value.data());
    std::fs::remove_file(&path).ok();
    Ok(same)
}

#[pymodule]
fn sfvoc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MEL_BANDS", MEL_BANDS)?;
    m.add("SAMPLE_RATE", signal::SAMPLE_RATE)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(log_amplitude_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(extract_f0, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    m.add_function(wrap_pyfunction!(write_features, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_roundtrip_ok, m)?)?;
    m.add_class::<Vocoder>()?;
    Ok(())
}
