//! Shared test support: independent f64 reference implementations (oracles)
//! for the tensor ops and the objective metrics, a central-difference
//! gradient checker, and synthetic audio builders.
//!
//! Everything here is written against the *definitions*, not against the
//! crate's kernels: loops are structured differently, trig is evaluated on
//! the fly, and all arithmetic is f64.

#![allow(dead_code)]

pub mod gradcheck;
pub mod refmodel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfvoc::signal::AudioBuffer;

pub const SAMPLE_RATE: u32 = 22050;

// ---------------------------------------------------------------------------
// error measures and finite differences
// ---------------------------------------------------------------------------

/// Vector-relative max error: `||a - b||_inf / max(||b||_inf, tiny)`.
pub fn vec_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let denom = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / denom
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central finite differences of a scalar function.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0f64; x.len()];
    let mut work = x.to_vec();
    for i in 0..x.len() {
        let h = eps * x[i].abs().max(1.0);
        work[i] = x[i] + h;
        let fp = f(&work);
        work[i] = x[i] - h;
        let fm = f(&work);
        work[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

// ---------------------------------------------------------------------------
// f64 reference ops (direct-summation / definitional implementations)
// ---------------------------------------------------------------------------

pub fn conv1d_ref(
    x: &[f64],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f64],
    (c_out, _, kernel): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Vec<f64> {
    let span = dilation * (kernel - 1) + 1;
    let t_out = (t_in + 2 * padding - span) / stride + 1;
    let mut out = vec![0.0f64; batch * c_out * t_out];
    for b in 0..batch {
        for co in 0..c_out {
            for t in 0..t_out {
                let mut acc = bias.map(|bv| bv[co]).unwrap_or(0.0);
                for ci in 0..c_in {
                    for k in 0..kernel {
                        let i = t as isize * stride as isize + (k * dilation) as isize
                            - padding as isize;
                        if i >= 0 && (i as usize) < t_in {
                            acc += x[(b * c_in + ci) * t_in + i as usize]
                                * w[(co * c_in + ci) * kernel + k];
                        }
                    }
                }
                out[(b * c_out + co) * t_out + t] = acc;
            }
        }
    }
    out
}

pub fn conv_transpose1d_ref(
    x: &[f64],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f64],
    (_, c_out, kernel): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let t_out = (t_in - 1) * stride + kernel - 2 * padding;
    let mut out = vec![0.0f64; batch * c_out * t_out];
    for b in 0..batch {
        for co in 0..c_out {
            for o in 0..t_out {
                let mut acc = bias.map(|bv| bv[co]).unwrap_or(0.0);
                for ci in 0..c_in {
                    for k in 0..kernel {
                        // o = t*stride + k - padding  =>  t = (o + padding - k)/stride
                        let num = o as isize + padding as isize - k as isize;
                        if num >= 0
                            && num % stride as isize == 0
                            && (num / stride as isize) < t_in as isize
                        {
                            let t = (num / stride as isize) as usize;
                            acc += x[(b * c_in + ci) * t_in + t]
                                * w[(ci * c_out + co) * kernel + k];
                        }
                    }
                }
                out[(b * c_out + co) * t_out + o] = acc;
            }
        }
    }
    out
}

pub fn max_pool1d_ref(
    x: &[f64],
    rows: usize,
    t_in: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let t_out = (t_in - kernel) / stride + 1;
    let mut out = vec![0.0f64; rows * t_out];
    for r in 0..rows {
        for t in 0..t_out {
            let window = &x[r * t_in + t * stride..r * t_in + t * stride + kernel];
            out[r * t_out + t] = window.iter().cloned().fold(f64::MIN, f64::max);
        }
    }
    out
}

pub fn avg_pool1d_ref(
    x: &[f64],
    rows: usize,
    t_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let t_out = (t_in + 2 * padding - kernel) / stride + 1;
    let mut out = vec![0.0f64; rows * t_out];
    for r in 0..rows {
        for t in 0..t_out {
            let mut acc = 0.0;
            for k in 0..kernel {
                let i = t as isize * stride as isize + k as isize - padding as isize;
                if i >= 0 && (i as usize) < t_in {
                    acc += x[r * t_in + i as usize];
                }
            }
            out[r * t_out + t] = acc / kernel as f64;
        }
    }
    out
}

pub fn matmul_ref(a: &[f64], b: &[f64], (m, k, n): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Mirror-without-edge-repeat reflection, written as explicit bouncing.
pub fn reflect_ref(mut pos: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let last = len as isize - 1;
    loop {
        if pos < 0 {
            pos = -pos;
        } else if pos > last {
            pos = 2 * last - pos;
        } else {
            return pos as usize;
        }
    }
}

pub fn frames_ref(x: &[f64], window: usize, hop: usize) -> Vec<f64> {
    let n_frames = x.len() / hop;
    let pad = window / 2;
    let mut out = vec![0.0f64; n_frames * window];
    for l in 0..n_frames {
        for j in 0..window {
            let pos = (l * hop + j) as isize - pad as isize;
            out[l * window + j] = x[reflect_ref(pos, x.len())];
        }
    }
    out
}

pub fn fold_periods_ref(x: &[f64], period: usize) -> Vec<f64> {
    let rows = x.len().div_ceil(period);
    let mut out = vec![0.0f64; period * rows];
    for r in 0..rows {
        for c in 0..period {
            let i = r * period + c;
            if i < x.len() {
                out[c * rows + r] = x[i];
            }
        }
    }
    out
}

pub fn cumsum_ref(x: &[f64], rows: usize, t_len: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; x.len()];
    for r in 0..rows {
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += x[r * t_len + t];
            out[r * t_len + t] = acc;
        }
    }
    out
}

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn bce_with_logits_ref(z: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&z, &y) in z.iter().zip(y) {
        acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    acc / z.len() as f64
}

// ---------------------------------------------------------------------------
// metric oracles (naive, definitional)
// ---------------------------------------------------------------------------

const WIN: usize = 1024;
const HOP: usize = 256;
const NFFT: usize = 1024;
const BINS: usize = NFFT / 2 + 1;
const BANDS: usize = 80;
const FLOOR: f64 = 1e-5;

fn hann_ref(n: usize) -> f64 {
    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WIN as f64).cos()
}

/// Per-frame naive DFT magnitude spectrogram with the shared framing
/// convention (pad to hop multiple, reflect, frame centred on l*hop).
/// All DFT angles are multiples of 2*pi/NFFT, so an exact table of those
/// NFFT values stands in for per-term trig calls.
pub fn magnitude_oracle(audio: &AudioBuffer) -> (Vec<f64>, usize) {
    let mut x: Vec<f64> = audio.samples().iter().map(|&v| v as f64).collect();
    let padded = x.len().div_ceil(HOP) * HOP;
    x.resize(padded, 0.0);
    let n_frames = x.len() / HOP;
    let cos_tab: Vec<f64> = (0..NFFT)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / NFFT as f64).cos())
        .collect();
    let sin_tab: Vec<f64> = (0..NFFT)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / NFFT as f64).sin())
        .collect();
    let mut out = vec![0.0f64; n_frames * BINS];
    let mut frame = vec![0.0f64; WIN];
    for l in 0..n_frames {
        for (j, slot) in frame.iter_mut().enumerate() {
            let pos = (l * HOP + j) as isize - (WIN / 2) as isize;
            *slot = x[reflect_ref(pos, x.len())] * hann_ref(j);
        }
        for k in 0..BINS {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for (j, &v) in frame.iter().enumerate() {
                let idx = (k * j) % NFFT;
                re += v * cos_tab[idx];
                im -= v * sin_tab[idx];
            }
            out[l * BINS + k] = (re * re + im * im).sqrt();
        }
    }
    (out, n_frames)
}

pub fn snr_oracle(reference: &AudioBuffer, generated: &AudioBuffer) -> f64 {
    let mut sig = 0.0f64;
    let mut err = 0.0f64;
    for (&x, &y) in reference.samples().iter().zip(generated.samples()) {
        sig += (x as f64) * (x as f64);
        err += (x as f64 - y as f64) * (x as f64 - y as f64);
    }
    if err == 0.0 {
        return 99.0;
    }
    (10.0 * (sig / err).log10()).min(99.0)
}

pub fn las_rmse_oracle(reference: &AudioBuffer, generated: &AudioBuffer) -> f64 {
    let (ma, _) = magnitude_oracle(reference);
    let (mb, _) = magnitude_oracle(generated);
    let mut acc = 0.0f64;
    for (a, b) in ma.iter().zip(&mb) {
        let la = 20.0 * a.max(FLOOR).log10();
        let lb = 20.0 * b.max(FLOOR).log10();
        acc += (la - lb) * (la - lb);
    }
    (acc / ma.len() as f64).sqrt()
}

/// Independently derived triangular mel filterbank (HTK scale, 0-8 kHz).
fn mel_fb_oracle(sample_rate: u32) -> Vec<f64> {
    let to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = to_mel(8000.0);
    let centers: Vec<f64> = (0..BANDS + 2)
        .map(|i| to_hz(top * i as f64 / (BANDS + 1) as f64))
        .collect();
    let mut fb = vec![0.0f64; BANDS * BINS];
    for m in 0..BANDS {
        for k in 0..BINS {
            let f = k as f64 * sample_rate as f64 / NFFT as f64;
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            if f > lo && f < hi {
                fb[m * BINS + k] = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
            }
        }
    }
    fb
}

fn log_mel_oracle(audio: &AudioBuffer) -> (Vec<f64>, usize) {
    let (mag, frames) = magnitude_oracle(audio);
    let fb = mel_fb_oracle(audio.sample_rate());
    let mut out = vec![0.0f64; frames * BANDS];
    for l in 0..frames {
        for m in 0..BANDS {
            let mut acc = 0.0;
            for k in 0..BINS {
                acc += fb[m * BINS + k] * mag[l * BINS + k];
            }
            out[l * BANDS + m] = acc.max(FLOOR).ln();
        }
    }
    (out, frames)
}

pub fn mcd_oracle(reference: &AudioBuffer, generated: &AudioBuffer) -> f64 {
    let (la, frames) = log_mel_oracle(reference);
    let (lb, _) = log_mel_oracle(generated);
    let n_coef = 13usize;
    let mut total = 0.0f64;
    for l in 0..frames {
        let mut d2 = 0.0f64;
        for k in 1..=n_coef {
            let mut ca = 0.0f64;
            let mut cb = 0.0f64;
            for m in 0..BANDS {
                let basis = (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64
                    / (2.0 * BANDS as f64))
                    .cos();
                ca += la[l * BANDS + m] * basis;
                cb += lb[l * BANDS + m] * basis;
            }
            let scale = (2.0 / BANDS as f64).sqrt();
            let d = (ca - cb) * scale;
            d2 += d * d;
        }
        total += d2.sqrt();
    }
    10.0 * 2.0f64.sqrt() / std::f64::consts::LN_10 * (total / frames as f64)
}

pub fn f0_cents_oracle(ref_f0: &[f32], ref_vuv: &[bool], gen_f0: &[f32], gen_vuv: &[bool]) -> Option<f64> {
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for i in 0..ref_f0.len() {
        if ref_vuv[i] && gen_vuv[i] {
            let c = 1200.0 * (gen_f0[i] as f64 / ref_f0[i] as f64).log2();
            acc += c * c;
            n += 1;
        }
    }
    (n > 0).then(|| (acc / n as f64).sqrt())
}

pub fn vuv_error_oracle(ref_vuv: &[bool], gen_vuv: &[bool]) -> f64 {
    let bad = ref_vuv.iter().zip(gen_vuv).filter(|(a, b)| a != b).count();
    100.0 * bad as f64 / ref_vuv.len() as f64
}

// ---------------------------------------------------------------------------
// synthetic audio
// ---------------------------------------------------------------------------

pub fn sine_audio(freq: f64, len: usize, amp: f64) -> AudioBuffer {
    let samples: Vec<f32> = (0..len)
        .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

/// Harmonic tone with vibrato, an amplitude envelope and a noise floor;
/// rough stand-in for a voiced utterance.
pub fn speechish_audio(seed: u64, len: usize) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.random_range(120.0..260.0);
    let mut phase = 0.0f64;
    let samples: Vec<f32> = (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let f0 = base * (1.0 + 0.03 * (2.0 * std::f64::consts::PI * 5.0 * t).sin());
            phase += 2.0 * std::f64::consts::PI * f0 / SAMPLE_RATE as f64;
            let env = 0.55 + 0.35 * (2.0 * std::f64::consts::PI * 1.3 * t).sin();
            let v = env
                * (0.6 * phase.sin() + 0.25 * (2.0 * phase).sin() + 0.1 * (3.0 * phase).sin());
            (v + rng.random_range(-0.01..0.01)) as f32
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

pub fn noise_audio(seed: u64, len: usize, amp: f32) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f32> = (0..len).map(|_| rng.random_range(-amp..amp)).collect();
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

/// Naive f64 DFT magnitude at every bin below Nyquist; returns argmax bin.
pub fn dft_argmax(x: &[f32]) -> usize {
    let n = x.len();
    let cos_tab: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let sin_tab: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
        .collect();
    let mut best = (0usize, -1.0f64);
    for k in 1..n / 2 {
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        let mut idx = 0usize;
        for &v in x {
            re += v as f64 * cos_tab[idx];
            im -= v as f64 * sin_tab[idx];
            idx += k;
            if idx >= n {
                idx -= n;
            }
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (k, mag);
        }
    }
    best.0
}
