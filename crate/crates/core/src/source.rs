//! Source excitation: a sinusoid at the (upsampled) F0 in voiced regions
//! and shaped Gaussian noise in unvoiced regions.
//!
//! Voiced sample `t` (1-based): `alpha * sin(sum_{k=1..t} 2*pi*f_k/N_s + phi) + n_t`
//! with `n_t ~ N(0, sigma^2)` and `phi` drawn once per utterance from
//! `(-pi, pi]`. Unvoiced sample: `g(n_t / (3*sigma))` where `g` is a small
//! trainable convolutional shaper (identity when disabled). The phase sum
//! runs over every sample, voiced or not, so `f_k = 0` in unvoiced spans
//! holds the phase instead of resetting it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Conv1d;
use crate::signal::F0Track;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Samples per frame; fixed by the 256-sample feature hop.
pub const UPSAMPLE_FACTOR: usize = 256;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Sine amplitude.
    pub alpha: f32,
    /// Noise standard deviation.
    pub sigma: f32,
    pub sample_rate: u32,
    /// Train a convolutional noise shaper for unvoiced spans; when false
    /// the unvoiced branch is `n_t / (3*sigma)` directly.
    pub dnn_enabled: bool,
    /// Use one noise stream for both branches (the voiced additive noise
    /// and the unvoiced shaper input see the same draws). When false the
    /// branches draw independently.
    pub shared_branch_noise: bool,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            sigma: 0.003,
            sample_rate: crate::signal::SAMPLE_RATE,
            dnn_enabled: true,
            shared_branch_noise: true,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.sigma <= 0.0 {
            return Err(Error::Config(
                "source: alpha and sigma must be positive".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("source: zero sample rate".into()));
        }
        Ok(())
    }
}

/// Sample-level excitation plus the upsampled V/UV mask it was built with.
#[derive(Clone, Debug)]
pub struct ExcitationSignal {
    pub e: Vec<f32>,
    pub vuv: Vec<bool>,
}

impl ExcitationSignal {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}

/// Linear interpolation of frame-level F0 to sample level. Values follow
/// straight lines between voiced frame centres (held flat outside the
/// first/last voiced centre) and are zeroed wherever the upsampled V/UV
/// flag is false.
pub fn upsample_f0(track: &F0Track, n: usize) -> Result<Vec<f32>> {
    if track.is_empty() {
        return Err(Error::InvalidArg("upsample_f0: empty track".into()));
    }
    let l = track.len();
    let t_len = l * n;
    let vuv_up = upsample_vuv(track.vuv(), n);

    // voiced frame centres in sample coordinates
    let centers: Vec<(f64, f64)> = track
        .f0()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(i, &f)| ((i * n + n / 2) as f64, f as f64))
        .collect();

    let mut out = vec![0.0f32; t_len];
    if centers.is_empty() {
        return Ok(out);
    }
    let mut seg = 0usize;
    for (t, slot) in out.iter_mut().enumerate() {
        if !vuv_up[t] {
            continue;
        }
        let x = t as f64;
        while seg + 1 < centers.len() && centers[seg + 1].0 < x {
            seg += 1;
        }
        let value = if x <= centers[0].0 {
            centers[0].1
        } else if x >= centers[centers.len() - 1].0 {
            centers[centers.len() - 1].1
        } else {
            let (x0, y0) = centers[seg];
            let (x1, y1) = centers[seg + 1];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        };
        *slot = value as f32;
    }
    Ok(out)
}

/// Repeat each frame flag `n` times.
pub fn upsample_vuv(vuv: &[bool], n: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(vuv.len() * n);
    for &v in vuv {
        out.extend(std::iter::repeat_n(v, n));
    }
    out
}

/// Trainable noise shaper `g`: conv(1->16, k9) -> tanh -> conv(16->1, k9).
#[derive(Clone, Debug)]
pub struct NoiseDnn {
    pub conv_in: Conv1d,
    pub conv_out: Conv1d,
}

pub const NOISE_DNN_HIDDEN: usize = 16;
pub const NOISE_DNN_KERNEL: usize = 9;

impl NoiseDnn {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str) -> Self {
        let conv_in = Conv1d::same(
            store,
            rng,
            &format!("{name}.conv_in"),
            1,
            NOISE_DNN_HIDDEN,
            NOISE_DNN_KERNEL,
            1,
        );
        let conv_out = Conv1d::same(
            store,
            rng,
            &format!("{name}.conv_out"),
            NOISE_DNN_HIDDEN,
            1,
            NOISE_DNN_KERNEL,
            1,
        );
        Self { conv_in, conv_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.conv_in.forward(g, store, x)?;
        let h = g.tanh(h);
        self.conv_out.forward(g, store, h)
    }
}

/// Per-utterance precomputed pieces of Eq-style excitation: the voiced
/// sine-plus-noise part (pure data) and the scaled noise fed to the
/// trainable shaper, plus masks. Splitting these lets the training loop
/// crop segments while keeping phase continuity over the full utterance.
#[derive(Clone, Debug)]
pub struct ExcitationParts {
    /// `(alpha*sin(phase_t) + n_t) * v_t` — zero in unvoiced spans.
    pub voiced: Vec<f32>,
    /// `n_t / (3*sigma)` — shaper input over the whole utterance.
    pub noise_scaled: Vec<f32>,
    /// 1.0 where unvoiced, 0.0 where voiced.
    pub unvoiced_mask: Vec<f32>,
    pub vuv: Vec<bool>,
}

impl ExcitationParts {
    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> ExcitationParts {
        ExcitationParts {
            voiced: self.voiced[start..start + len].to_vec(),
            noise_scaled: self.noise_scaled[start..start + len].to_vec(),
            unvoiced_mask: self.unvoiced_mask[start..start + len].to_vec(),
            vuv: self.vuv[start..start + len].to_vec(),
        }
    }
}

/// Excitation generator; owns the (optional) noise shaper parameters.
#[derive(Clone, Debug)]
pub struct SourceModule {
    pub cfg: SourceConfig,
    dnn: Option<NoiseDnn>,
}

impl SourceModule {
    pub fn new(cfg: SourceConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let dnn = cfg
            .dnn_enabled
            .then(|| NoiseDnn::new(store, rng, "source.dnn"));
        Ok(Self { cfg, dnn })
    }

    pub fn dnn(&self) -> Option<&NoiseDnn> {
        self.dnn.as_ref()
    }

    /// Deterministic excitation parts for one utterance.
    pub fn parts(&self, f: &[f32], v: &[bool], seed: u64) -> Result<ExcitationParts> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: f64 = rng.random::<f64>();
        let phi = std::f64::consts::PI - 2.0 * std::f64::consts::PI * u; // (-pi, pi]
        let noise: Vec<f32> = (0..f.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * self.cfg.sigma as f64) as f32
            })
            .collect();
        let noise_b = if self.cfg.shared_branch_noise {
            noise.clone()
        } else {
            (0..f.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * self.cfg.sigma as f64) as f32
                })
                .collect()
        };
        self.parts_with_draws(f, v, phi, &noise, &noise_b)
    }

    /// Excitation parts from explicit phase and noise draws (the seeded
    /// path above and tests that pin exact draws both land here).
    pub fn parts_with_draws(
        &self,
        f: &[f32],
        v: &[bool],
        phi: f64,
        noise_voiced: &[f32],
        noise_unvoiced: &[f32],
    ) -> Result<ExcitationParts> {
        if f.len() != v.len() {
            return Err(Error::Shape(format!(
                "excitation: {} f0 samples vs {} flags",
                f.len(),
                v.len()
            )));
        }
        if noise_voiced.len() != f.len() || noise_unvoiced.len() != f.len() {
            return Err(Error::Shape("excitation: noise length mismatch".into()));
        }
        if let Some(bad) = f.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "excitation: negative or non-finite f0 value {bad}"
            )));
        }

        let two_pi = 2.0 * std::f64::consts::PI;
        let ns = self.cfg.sample_rate as f64;
        let alpha = self.cfg.alpha as f64;
        let inv_3sigma = 1.0 / (3.0 * self.cfg.sigma);

        let mut voiced = vec![0.0f32; f.len()];
        let mut noise_scaled = vec![0.0f32; f.len()];
        let mut unvoiced_mask = vec![0.0f32; f.len()];
        // phase accumulates in f64 over the whole utterance; wrapping each
        // step keeps sin() accurate for arbitrarily long signals
        let mut phase = phi;
        for t in 0..f.len() {
            phase += two_pi * f[t] as f64 / ns;
            if phase > std::f64::consts::PI {
                phase -= two_pi * (phase / two_pi).round();
            }
            if v[t] {
                voiced[t] = (alpha * phase.sin()) as f32 + noise_voiced[t];
            } else {
                unvoiced_mask[t] = 1.0;
            }
            noise_scaled[t] = noise_unvoiced[t] * inv_3sigma;
        }
        Ok(ExcitationParts {
            voiced,
            noise_scaled,
            unvoiced_mask,
            vuv: v.to_vec(),
        })
    }

    /// Assemble the excitation on a graph: the trainable shaper (when
    /// present) runs on the noise branch, masked to unvoiced samples.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, parts: &ExcitationParts) -> Result<Var> {
        let t_len = parts.len();
        let voiced = g.leaf(Tensor::new(vec![1, 1, t_len], parts.voiced.clone())?);
        let noise = g.leaf(Tensor::new(vec![1, 1, t_len], parts.noise_scaled.clone())?);
        let mask = g.leaf(Tensor::new(
            vec![1, 1, t_len],
            parts.unvoiced_mask.clone(),
        )?);
        let shaped = match &self.dnn {
            Some(dnn) => dnn.forward(g, store, noise)?,
            None => noise,
        };
        let masked = g.mul(shaped, mask)?;
        g.add(voiced, masked)
    }

    /// Convenience inference path: upsampled F0/V-UV in, excitation out.
    pub fn generate(
        &self,
        store: &ParamStore,
        f: &[f32],
        v: &[bool],
        seed: u64,
    ) -> Result<ExcitationSignal> {
        let parts = self.parts(f, v, seed)?;
        let mut g = Graph::new();
        let e = self.forward(&mut g, store, &parts)?;
        Ok(ExcitationSignal {
            e: g.value(e).data().to_vec(),
            vuv: parts.vuv,
        })
    }

    /// Excitation for a frame-level track: upsample, then generate.
    pub fn generate_from_track(
        &self,
        store: &ParamStore,
        track: &F0Track,
        seed: u64,
    ) -> Result<ExcitationSignal> {
        let f = upsample_f0(track, UPSAMPLE_FACTOR)?;
        let v = upsample_vuv(track.vuv(), UPSAMPLE_FACTOR);
        self.generate(store, &f, &v, seed)
    }
}
