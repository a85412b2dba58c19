//! Objective evaluation: SNR, log-amplitude-spectrum RMSE, mel-cepstral
//! distortion, F0 RMSE in cents, V/UV error rate, and a pixel-wise mel
//! difference map.
//!
//! Metric math runs in f64 end to end (framing, DFT, filterbank, cepstra)
//! so results are reproducible to ~1e-12 against an independent
//! re-computation of the same formulas. Absolute values depend on these
//! pinned definitions — window 1024 / hop 256 / FFT 1024, 80 mel bands to
//! 8 kHz, cepstral coefficients 1..=13 — so cross-toolkit comparisons are
//! indicative, not exact.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::{
    mel_filterbank_f64, AudioBuffer, F0Track, MelSpectrogram, FFT_SIZE, HOP_SIZE, MEL_BANDS,
    SPEC_BINS, WINDOW_SIZE,
};
use crate::tensor::reflect_index;

/// SNR values at or above this cap are reported as saturated.
pub const SNR_CAP_DB: f64 = 99.0;
/// Magnitude floor shared by the spectral metrics.
pub const MAG_FLOOR: f64 = 1e-5;
/// Cepstral coefficients used by MCD (c1..=c13; c0 carries pure gain).
pub const MCD_COEFFS: usize = 13;

/// Signal-to-noise ratio in dB, capped at [`SNR_CAP_DB`].
pub fn snr_db(reference: &AudioBuffer, generated: &AudioBuffer) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Metric(format!(
            "snr: length mismatch {} vs {}",
            reference.len(),
            generated.len()
        )));
    }
    let mut sig = 0.0f64;
    let mut err = 0.0f64;
    for (&x, &y) in reference.samples().iter().zip(generated.samples()) {
        let (x, y) = (x as f64, y as f64);
        sig += x * x;
        err += (x - y) * (x - y);
    }
    if sig == 0.0 {
        return Err(Error::Metric("snr: silent reference".into()));
    }
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (sig / err).log10()).min(SNR_CAP_DB))
}

/// RMSE between log-amplitude spectra, in dB.
pub fn las_rmse_db(reference: &AudioBuffer, generated: &AudioBuffer) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Metric("las_rmse: length mismatch".into()));
    }
    let a = log_spectrogram_f64(reference);
    let b = log_spectrogram_f64(generated);
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(&b) {
        acc += (x - y) * (x - y);
    }
    Ok((acc / a.len() as f64).sqrt())
}

/// Mel-cepstral distortion in dB over cepstral coefficients 1..=13.
pub fn mcd_db(reference: &AudioBuffer, generated: &AudioBuffer) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Metric("mcd: length mismatch".into()));
    }
    let ca = mel_cepstra_f64(reference);
    let cb = mel_cepstra_f64(generated);
    let frames = ca.len() / MCD_COEFFS;
    let mut acc = 0.0f64;
    for l in 0..frames {
        let mut d2 = 0.0f64;
        for k in 0..MCD_COEFFS {
            let d = ca[l * MCD_COEFFS + k] - cb[l * MCD_COEFFS + k];
            d2 += d * d;
        }
        acc += d2.sqrt();
    }
    let scale = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10;
    Ok(scale * acc / frames as f64)
}

/// F0 RMSE in cents over frames voiced in both tracks; `None` when the
/// tracks share no voiced frame.
pub fn f0_rmse_cents(reference: &F0Track, generated: &F0Track) -> Result<Option<f64>> {
    if reference.len() != generated.len() {
        return Err(Error::Metric("f0_rmse: track length mismatch".into()));
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for i in 0..reference.len() {
        if reference.vuv()[i] && generated.vuv()[i] {
            let cents = 1200.0 * (generated.f0()[i] as f64 / reference.f0()[i] as f64).log2();
            acc += cents * cents;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some((acc / n as f64).sqrt()))
}

/// Percentage of frames whose V/UV flags disagree.
pub fn vuv_error_pct(reference: &F0Track, generated: &F0Track) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Metric("vuv_error: track length mismatch".into()));
    }
    let mismatched = reference
        .vuv()
        .iter()
        .zip(generated.vuv())
        .filter(|(a, b)| a != b)
        .count();
    Ok(100.0 * mismatched as f64 / reference.len() as f64)
}

/// Pixel-wise `|a - b|` over the common frame range.
#[derive(Clone, Debug, PartialEq)]
pub struct MelDiffMap {
    pub data: Vec<f32>,
    pub frames: usize,
}

impl MelDiffMap {
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f32 {
        self.data.iter().fold(0.0f32, |a, &b| a.max(b))
    }

    /// One frame per line, 80 values each.
    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for l in 0..self.frames {
            for (i, v) in self.data[l * MEL_BANDS..(l + 1) * MEL_BANDS].iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{v:.6}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Binary PGM (P5) image, frames on the x axis, band 0 at the bottom,
    /// values normalized to the map's max.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let max = self.max().max(1e-12);
        let mut out = format!("P5\n{} {}\n255\n", self.frames, MEL_BANDS).into_bytes();
        for band in (0..MEL_BANDS).rev() {
            for l in 0..self.frames {
                let v = self.data[l * MEL_BANDS + band] / max;
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

pub fn mel_diff_map(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<MelDiffMap> {
    let frames = a.frames().min(b.frames());
    let mut data = vec![0.0f32; frames * MEL_BANDS];
    for l in 0..frames {
        let (ra, rb) = (a.frame(l), b.frame(l));
        for m in 0..MEL_BANDS {
            data[l * MEL_BANDS + m] = (ra[m] - rb[m]).abs();
        }
    }
    Ok(MelDiffMap { data, frames })
}

// ---------------------------------------------------------------------------
// f64 spectral helpers
// ---------------------------------------------------------------------------

/// Hann-windowed f64 magnitude spectrogram, frame-major `(L, SPEC_BINS)`,
/// same framing convention as the f32 feature path.
fn magnitude_spectrogram_f64(audio: &AudioBuffer) -> Vec<f64> {
    let padded = audio.padded_to_hop();
    let x = padded.samples();
    let t_len = x.len();
    let n_frames = t_len / HOP_SIZE;
    let half = WINDOW_SIZE / 2;

    let window: Vec<f64> = (0..WINDOW_SIZE)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SIZE as f64).cos())
        .collect();
    // DFT bases, (WINDOW_SIZE x SPEC_BINS)
    let mut cos_m = vec![0.0f64; WINDOW_SIZE * SPEC_BINS];
    let mut sin_m = vec![0.0f64; WINDOW_SIZE * SPEC_BINS];
    for n in 0..WINDOW_SIZE {
        for k in 0..SPEC_BINS {
            let angle = 2.0 * std::f64::consts::PI * (k * n) as f64 / FFT_SIZE as f64;
            cos_m[n * SPEC_BINS + k] = angle.cos();
            sin_m[n * SPEC_BINS + k] = -angle.sin();
        }
    }

    let mut out = vec![0.0f64; n_frames * SPEC_BINS];
    let mut frame = vec![0.0f64; WINDOW_SIZE];
    let mut re = vec![0.0f64; SPEC_BINS];
    let mut im = vec![0.0f64; SPEC_BINS];
    for l in 0..n_frames {
        for (j, slot) in frame.iter_mut().enumerate() {
            let pos = (l * HOP_SIZE + j) as isize - half as isize;
            *slot = x[reflect_index(pos, t_len)] as f64 * window[j];
        }
        re.fill(0.0);
        im.fill(0.0);
        for (n, &w) in frame.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let cr = &cos_m[n * SPEC_BINS..(n + 1) * SPEC_BINS];
            let ci = &sin_m[n * SPEC_BINS..(n + 1) * SPEC_BINS];
            for k in 0..SPEC_BINS {
                re[k] += w * cr[k];
                im[k] += w * ci[k];
            }
        }
        for k in 0..SPEC_BINS {
            out[l * SPEC_BINS + k] = (re[k] * re[k] + im[k] * im[k]).sqrt();
        }
    }
    out
}

/// `20*log10(max(mag, MAG_FLOOR))` over the magnitude spectrogram.
fn log_spectrogram_f64(audio: &AudioBuffer) -> Vec<f64> {
    magnitude_spectrogram_f64(audio)
        .into_iter()
        .map(|m| 20.0 * m.max(MAG_FLOOR).log10())
        .collect()
}

/// Mel cepstra (orthonormal DCT-II of the natural-log 80-band mel
/// spectrum), coefficients 1..=MCD_COEFFS, frame-major.
fn mel_cepstra_f64(audio: &AudioBuffer) -> Vec<f64> {
    let mag = magnitude_spectrogram_f64(audio);
    let frames = mag.len() / SPEC_BINS;
    let fb = mel_filterbank_f64(audio.sample_rate());

    let mut cepstra = vec![0.0f64; frames * MCD_COEFFS];
    let mut log_mel = vec![0.0f64; MEL_BANDS];
    let n = MEL_BANDS as f64;
    for l in 0..frames {
        let spec = &mag[l * SPEC_BINS..(l + 1) * SPEC_BINS];
        for (m, slot) in log_mel.iter_mut().enumerate() {
            let row = &fb[m * SPEC_BINS..(m + 1) * SPEC_BINS];
            let e: f64 = row.iter().zip(spec).map(|(w, s)| w * s).sum();
            *slot = e.max(MAG_FLOOR).ln();
        }
        for k in 1..=MCD_COEFFS {
            let mut acc = 0.0f64;
            for (m, &v) in log_mel.iter().enumerate() {
                acc += v * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * n)).cos();
            }
            cepstra[l * MCD_COEFFS + k - 1] = acc * (2.0 / n).sqrt();
        }
    }
    cepstra
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct UtteranceEval {
    pub name: String,
    pub snr_db: f64,
    pub snr_saturated: bool,
    pub las_rmse_db: f64,
    pub mcd_db: f64,
    /// `None` when the tracks share no voiced frame.
    pub f0_rmse_cents: Option<f64>,
    pub vuv_error_pct: f64,
    pub frames: usize,
    pub both_voiced_frames: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalAggregate {
    pub utterances: usize,
    pub snr_db: f64,
    pub las_rmse_db: f64,
    pub mcd_db: f64,
    /// Mean over utterances where the metric is defined.
    pub f0_rmse_cents: Option<f64>,
    pub f0_rmse_defined: usize,
    pub vuv_error_pct: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceEval>,
    pub aggregate: EvalAggregate,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>9} {:>12} {:>9} {:>13} {:>9}",
            "utterance", "SNR(dB)", "LAS-RMSE(dB)", "MCD(dB)", "F0-RMSE(cent)", "V/UV(%)"
        )?;
        for u in &self.utterances {
            writeln!(
                f,
                "{:<24} {:>9.4}{} {:>11.4} {:>9.4} {:>13} {:>9.4}",
                u.name,
                u.snr_db,
                if u.snr_saturated { "*" } else { " " },
                u.las_rmse_db,
                u.mcd_db,
                u.f0_rmse_cents
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                u.vuv_error_pct
            )?;
        }
        let a = &self.aggregate;
        writeln!(f, "---")?;
        writeln!(
            f,
            "mean over {} utterance(s): SNR {:.4} dB | LAS-RMSE {:.4} dB | MCD {:.4} dB | \
             F0-RMSE {} ({} defined) | V/UV {:.4}%",
            a.utterances,
            a.snr_db,
            a.las_rmse_db,
            a.mcd_db,
            a.f0_rmse_cents
                .map(|v| format!("{v:.4} cents"))
                .unwrap_or_else(|| "n/a".into()),
            a.f0_rmse_defined,
            a.vuv_error_pct
        )?;
        if self.utterances.iter().any(|u| u.snr_saturated) {
            writeln!(f, "(* SNR saturated at {SNR_CAP_DB} dB)")?;
        }
        Ok(())
    }
}

/// All five metrics for one (reference, generated) pair. The signals are
/// cropped to their common length; F0 tracks are extracted here with the
/// default settings so both sides share them.
pub fn evaluate_pair(
    name: impl Into<String>,
    reference: &AudioBuffer,
    generated: &AudioBuffer,
) -> Result<UtteranceEval> {
    let common = reference.len().min(generated.len());
    let reference = AudioBuffer::new(
        reference.samples()[..common].to_vec(),
        reference.sample_rate(),
    )?;
    let generated = AudioBuffer::new(
        generated.samples()[..common].to_vec(),
        generated.sample_rate(),
    )?;
    let snr = snr_db(&reference, &generated)?;
    let las = las_rmse_db(&reference, &generated)?;
    let mcd = mcd_db(&reference, &generated)?;
    let track_ref = crate::signal::extract_f0(&reference);
    let track_gen = crate::signal::extract_f0(&generated);
    let f0_rmse = f0_rmse_cents(&track_ref, &track_gen)?;
    let vuv = vuv_error_pct(&track_ref, &track_gen)?;
    let both = track_ref
        .vuv()
        .iter()
        .zip(track_gen.vuv())
        .filter(|(a, b)| **a && **b)
        .count();
    Ok(UtteranceEval {
        name: name.into(),
        snr_db: snr,
        snr_saturated: snr >= SNR_CAP_DB,
        las_rmse_db: las,
        mcd_db: mcd,
        f0_rmse_cents: f0_rmse,
        vuv_error_pct: vuv,
        frames: track_ref.len(),
        both_voiced_frames: both,
    })
}

/// Evaluate a batch of named pairs. Utterances are sorted by name before
/// aggregation so the report does not depend on input order.
pub fn evaluate_set(pairs: Vec<(String, AudioBuffer, AudioBuffer)>) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Metric("evaluate: no pairs".into()));
    }
    let mut pairs = pairs;
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut utterances = Vec::with_capacity(pairs.len());
    for (name, reference, generated) in &pairs {
        utterances.push(evaluate_pair(name.clone(), reference, generated)?);
    }
    aggregate_report(utterances)
}

/// Build a report from per-utterance results (sorted by name first, so
/// aggregation never depends on evaluation order).
pub fn aggregate_report(mut utterances: Vec<UtteranceEval>) -> Result<EvalReport> {
    if utterances.is_empty() {
        return Err(Error::Metric("evaluate: no results".into()));
    }
    utterances.sort_by(|a, b| a.name.cmp(&b.name));
    let n = utterances.len() as f64;
    let mut f0_sum = 0.0f64;
    let mut f0_n = 0usize;
    for u in &utterances {
        if let Some(v) = u.f0_rmse_cents {
            f0_sum += v;
            f0_n += 1;
        }
    }
    let aggregate = EvalAggregate {
        utterances: utterances.len(),
        snr_db: utterances.iter().map(|u| u.snr_db).sum::<f64>() / n,
        las_rmse_db: utterances.iter().map(|u| u.las_rmse_db).sum::<f64>() / n,
        mcd_db: utterances.iter().map(|u| u.mcd_db).sum::<f64>() / n,
        f0_rmse_cents: (f0_n > 0).then(|| f0_sum / f0_n as f64),
        f0_rmse_defined: f0_n,
        vuv_error_pct: utterances.iter().map(|u| u.vuv_error_pct).sum::<f64>() / n,
    };
    Ok(EvalReport {
        utterances,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize, amp: f32) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f32> = (0..len).map(|_| rng.random_range(-amp..amp)).collect();
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn snr_identities() {
        let a = noise(1, 4096, 0.5);
        assert_eq!(snr_db(&a, &a).unwrap(), SNR_CAP_DB);
        let half = AudioBuffer::new(
            a.samples().iter().map(|x| x * 0.5).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let v = snr_db(&a, &half).unwrap();
        assert!((v - 6.0206).abs() < 1e-3, "{v}");
        let neg = AudioBuffer::new(a.samples().iter().map(|x| -x).collect(), SAMPLE_RATE).unwrap();
        let v = snr_db(&a, &neg).unwrap();
        assert!((v + 6.0206).abs() < 1e-3, "{v}");
    }

    #[test]
    fn snr_errors() {
        let a = noise(2, 1024, 0.5);
        let b = noise(2, 512, 0.5);
        assert!(snr_db(&a, &b).is_err());
        let silent = AudioBuffer::new(vec![0.0; 1024], SAMPLE_RATE).unwrap();
        assert!(snr_db(&silent, &a).is_err());
    }

    #[test]
    fn las_identity_and_uniform_gain() {
        let a = noise(3, 4096, 0.4);
        assert_eq!(las_rmse_db(&a, &a).unwrap(), 0.0);
        let double = AudioBuffer::new(
            a.samples().iter().map(|x| x * 2.0).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        // every unfloored cell moves by 20*log10(2); noise this loud never
        // hits the floor, so the RMSE equals the shift
        let v = las_rmse_db(&a, &double).unwrap();
        assert!((v - 6.020599913).abs() < 1e-6, "{v}");
    }

    #[test]
    fn mcd_identity_and_gain_invariance() {
        let a = noise(4, 4096, 0.4);
        assert_eq!(mcd_db(&a, &a).unwrap(), 0.0);
        let scaled = AudioBuffer::new(
            a.samples().iter().map(|x| x * 1.7).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let v = mcd_db(&a, &scaled).unwrap();
        assert!(v.abs() < 1e-6, "gain-only change must live in c0: {v}");
    }

    #[test]
    fn f0_metrics_identities() {
        let track = F0Track::new(
            vec![0.0, 220.0, 220.0, 0.0],
            vec![false, true, true, false],
        )
        .unwrap();
        assert_eq!(f0_rmse_cents(&track, &track).unwrap(), Some(0.0));
        assert_eq!(vuv_error_pct(&track, &track).unwrap(), 0.0);

        let octave = F0Track::new(
            vec![0.0, 440.0, 440.0, 0.0],
            vec![false, true, true, false],
        )
        .unwrap();
        let cents = f0_rmse_cents(&track, &octave).unwrap().unwrap();
        assert!((cents - 1200.0).abs() < 1e-6, "{cents}");
    }

    #[test]
    fn one_flag_in_100_frames_is_one_pct() {
        let mut f0 = vec![0.0f32; 100];
        f0[40] = 200.0;
        let a = F0Track::from_f0(f0.clone()).unwrap();
        f0[40] = 0.0;
        let b = F0Track::from_f0(f0).unwrap();
        assert_eq!(vuv_error_pct(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn no_common_voiced_is_undefined() {
        let a = F0Track::new(vec![100.0, 0.0], vec![true, false]).unwrap();
        let b = F0Track::new(vec![0.0, 100.0], vec![false, true]).unwrap();
        assert_eq!(f0_rmse_cents(&a, &b).unwrap(), None);
    }

    #[test]
    fn diff_map_identities() {
        let a = MelSpectrogram::new(vec![0.5; 4 * MEL_BANDS], 4).unwrap();
        let map = mel_diff_map(&a, &a).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));

        let mut data = vec![0.5f32; 4 * MEL_BANDS];
        data[2 * MEL_BANDS + 7] += 0.25;
        let b = MelSpectrogram::new(data, 4).unwrap();
        let map = mel_diff_map(&a, &b).unwrap();
        assert_eq!(map.data[2 * MEL_BANDS + 7], 0.25);
        assert_eq!(map.data.iter().filter(|&&v| v != 0.0).count(), 1);
        // mean equals L1 / (L * 80)
        assert!((map.mean() - 0.25 / (4.0 * MEL_BANDS as f64)).abs() < 1e-9);
    }

    #[test]
    fn report_aggregation_is_order_stable() {
        let a = noise(5, 4096, 0.4);
        let b = noise(6, 4096, 0.4);
        let a2 = noise(7, 4096, 0.35);
        let b2 = noise(8, 4096, 0.35);
        let fwd = evaluate_set(vec![
            ("x".into(), a.clone(), a2.clone()),
            ("y".into(), b.clone(), b2.clone()),
        ])
        .unwrap();
        let rev = evaluate_set(vec![
            ("y".into(), b, b2),
            ("x".into(), a, a2),
        ])
        .unwrap();
        assert_eq!(fwd.aggregate.snr_db, rev.aggregate.snr_db);
        assert_eq!(fwd.aggregate.mcd_db, rev.aggregate.mcd_db);
        assert_eq!(fwd.utterances[0].name, "x");
        assert_eq!(rev.utterances[0].name, "x");
    }
}
