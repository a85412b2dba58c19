//! Waveform generator: a resolution-wise conditional filter.
//!
//! The mel spectrogram is upsampled 256x through four transposed-conv
//! UpBlocks (strides 8-8-2-2). In parallel, a SubBlock chain subsamples the
//! excitation signal through max-pooling stages (strides 1-2-2-8), so stage
//! `i` matches the temporal resolution of UpBlock `5-i`. Inside each
//! UpBlock a bank of parallel-conv residual blocks fuses the transformed
//! excitation with the intermediate feature:
//!
//! ```text
//! f(e, c) = lrelu(conv_kd(e) + conv'_kd(c))
//! c'      = f_k1(e, f_kd(e, c)) + c        (per dilation d)
//! ```
//!
//! and the bank's outputs (one per kernel size) are averaged. Two ablation
//! switches mirror the reduced variants: `subblock_enabled = false` feeds
//! the raw max-pooled excitation (1 channel) to the fusion blocks, and
//! `pc_resblock_enabled = false` adds the excitation to the feature and
//! runs plain residual blocks instead.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvTranspose1d};
use crate::signal::MEL_BANDS;
use crate::tensor::{Graph, ParamStore, Var};

/// Upsampling stages; fixed by the 256-sample hop (8*8*2*2).
pub const NUM_STAGES: usize = 4;
/// Cumulative SubBlock pooling factor; `T` must divide by it.
pub const TOTAL_POOL: usize = 32;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Base hidden width `h_u`; UpBlock `l` outputs `h_u / 2^l` channels.
    pub hidden_width: usize,
    /// Transposed-conv kernel sizes, one per UpBlock.
    pub upsample_kernels: Vec<usize>,
    /// Transposed-conv strides; product must equal the hop (256).
    pub upsample_strides: Vec<usize>,
    /// Kernel sizes of the parallel residual blocks in each UpBlock.
    pub resblock_kernels: Vec<usize>,
    /// Dilation ladder per residual-block kernel.
    pub resblock_dilations: Vec<Vec<usize>>,
    /// Max-pool strides of the SubBlock chain (cumulative product 32).
    pub sub_pool_strides: Vec<usize>,
    /// SubBlock conv kernel sizes.
    pub sub_kernels: Vec<usize>,
    /// SubBlock conv dilations.
    pub sub_dilations: Vec<usize>,
    pub lrelu_slope: f32,
    pub subblock_enabled: bool,
    pub pc_resblock_enabled: bool,
}

impl GeneratorConfig {
    /// Full-width preset (`h_u` 512).
    pub fn v1() -> Self {
        Self {
            hidden_width: 512,
            upsample_kernels: vec![16, 16, 4, 4],
            upsample_strides: vec![8, 8, 2, 2],
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![vec![1, 3, 5], vec![1, 3, 5], vec![1, 3, 5]],
            sub_pool_strides: vec![1, 2, 2, 8],
            sub_kernels: vec![15, 11, 7, 3],
            sub_dilations: vec![7, 5, 3, 1],
            lrelu_slope: 0.1,
            subblock_enabled: true,
            pc_resblock_enabled: true,
        }
    }

    /// Slim preset: same topology and receptive fields, `h_u` 128.
    pub fn v2() -> Self {
        Self {
            hidden_width: 128,
            ..Self::v1()
        }
    }

    /// Desk-scale preset: `h_u` 32 and two residual kernels, small enough
    /// to overfit a single utterance on one CPU core in minutes.
    pub fn toy() -> Self {
        Self {
            hidden_width: 32,
            resblock_kernels: vec![3, 7],
            resblock_dilations: vec![vec![1, 3, 5], vec![1, 3, 5]],
            ..Self::v1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = NUM_STAGES;
        if self.upsample_kernels.len() != n
            || self.upsample_strides.len() != n
            || self.sub_pool_strides.len() != n
            || self.sub_kernels.len() != n
            || self.sub_dilations.len() != n
        {
            return Err(Error::Config(format!(
                "generator: per-stage lists must have length {n}"
            )));
        }
        if self.resblock_kernels.is_empty()
            || self.resblock_kernels.len() != self.resblock_dilations.len()
        {
            return Err(Error::Config(
                "generator: resblock kernel/dilation lists must be non-empty and equal length"
                    .into(),
            ));
        }
        let hop: usize = self.upsample_strides.iter().product();
        if hop != 256 {
            return Err(Error::Config(format!(
                "generator: upsample strides multiply to {hop}, expected the 256-sample hop"
            )));
        }
        let pool: usize = self.sub_pool_strides.iter().product();
        if pool != TOTAL_POOL {
            return Err(Error::Config(format!(
                "generator: subsample strides multiply to {pool}, expected {TOTAL_POOL}"
            )));
        }
        for (k, s) in self.upsample_kernels.iter().zip(&self.upsample_strides) {
            if k < s || (k - s) % 2 != 0 {
                return Err(Error::Config(format!(
                    "generator: upsample kernel {k} incompatible with stride {s}"
                )));
            }
        }
        for k in self.resblock_kernels.iter().chain(&self.sub_kernels) {
            if k % 2 == 0 {
                return Err(Error::Config(format!(
                    "generator: even kernel {k} breaks same-padding"
                )));
            }
        }
        if self.hidden_width % 16 != 0 {
            return Err(Error::Config(
                "generator: hidden width must divide by 16 for the channel halving ladder".into(),
            ));
        }
        if !self.pc_resblock_enabled && !self.subblock_enabled {
            return Err(Error::Config(
                "generator: additive excitation fusion needs SubBlock channels; \
                 enable at least one of subblock/pc_resblock"
                    .into(),
            ));
        }
        if !(0.0..1.0).contains(&self.lrelu_slope) || self.lrelu_slope == 0.0 {
            return Err(Error::Config("generator: lrelu slope must be in (0,1)".into()));
        }
        Ok(())
    }

    /// Output channels of UpBlock `l` (0-based).
    pub fn stage_channels(&self, l: usize) -> usize {
        self.hidden_width >> (l + 1)
    }

    /// Channels the excitation carries into UpBlock `l` (0-based).
    fn excitation_channels(&self, l: usize) -> usize {
        if self.subblock_enabled {
            self.stage_channels(l)
        } else {
            1
        }
    }
}

/// One SubBlock stage: max-pool then (unless ablated) a dilated conv with
/// leaky-ReLU, widening the excitation to the paired UpBlock's channels.
#[derive(Clone, Debug)]
struct SubStage {
    pool: usize,
    conv: Option<Conv1d>,
}

/// Parallel-conv residual block: excitation and feature enter through
/// separate convolutions at every step.
#[derive(Clone, Debug)]
pub struct PcResBlock {
    steps: Vec<PcStep>,
}

#[derive(Clone, Debug)]
struct PcStep {
    conv_e_dil: Conv1d,
    conv_c_dil: Conv1d,
    conv_e_one: Conv1d,
    conv_h_one: Conv1d,
}

impl PcResBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        e_channels: usize,
        kernel: usize,
        dilations: &[usize],
    ) -> Self {
        let steps = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| PcStep {
                conv_e_dil: Conv1d::same(
                    store,
                    rng,
                    &format!("{name}.{i}.e_dil"),
                    e_channels,
                    channels,
                    kernel,
                    d,
                ),
                conv_c_dil: Conv1d::same(
                    store,
                    rng,
                    &format!("{name}.{i}.c_dil"),
                    channels,
                    channels,
                    kernel,
                    d,
                ),
                conv_e_one: Conv1d::same(
                    store,
                    rng,
                    &format!("{name}.{i}.e_one"),
                    e_channels,
                    channels,
                    kernel,
                    1,
                ),
                conv_h_one: Conv1d::same(
                    store,
                    rng,
                    &format!("{name}.{i}.h_one"),
                    channels,
                    channels,
                    kernel,
                    1,
                ),
            })
            .collect();
        Self { steps }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slope: f32,
        mut c: Var,
        e: Var,
    ) -> Result<Var> {
        for step in &self.steps {
            let ed = step.conv_e_dil.forward(g, store, e)?;
            let cd = step.conv_c_dil.forward(g, store, c)?;
            let sum = g.add(ed, cd)?;
            let h = g.leaky_relu(sum, slope)?;
            let e1 = step.conv_e_one.forward(g, store, e)?;
            let h1 = step.conv_h_one.forward(g, store, h)?;
            let sum = g.add(e1, h1)?;
            let o = g.leaky_relu(sum, slope)?;
            c = g.add(o, c)?;
        }
        Ok(c)
    }
}

/// Plain residual block (dilated conv, then unit-dilation conv) used by the
/// additive-fusion ablation.
#[derive(Clone, Debug)]
struct ResBlock {
    steps: Vec<(Conv1d, Conv1d)>,
}

impl ResBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        kernel: usize,
        dilations: &[usize],
    ) -> Self {
        let steps = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                (
                    Conv1d::same(
                        store,
                        rng,
                        &format!("{name}.{i}.dil"),
                        channels,
                        channels,
                        kernel,
                        d,
                    ),
                    Conv1d::same(
                        store,
                        rng,
                        &format!("{name}.{i}.one"),
                        channels,
                        channels,
                        kernel,
                        1,
                    ),
                )
            })
            .collect();
        Self { steps }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, slope: f32, mut x: Var) -> Result<Var> {
        for (dil, one) in &self.steps {
            let h = g.leaky_relu(x, slope)?;
            let h = dil.forward(g, store, h)?;
            let h = g.leaky_relu(h, slope)?;
            let h = one.forward(g, store, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
enum FusionBank {
    Pc(Vec<PcResBlock>),
    Plain(Vec<ResBlock>),
}

#[derive(Clone, Debug)]
struct UpBlock {
    tconv: ConvTranspose1d,
    bank: FusionBank,
}

/// The full generator: pre-conv, four UpBlocks conditioned by the SubBlock
/// chain, post-conv, tanh.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pre: Conv1d,
    subs: Vec<SubStage>,
    ups: Vec<UpBlock>,
    post: Conv1d,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_width;

        let pre = Conv1d::same(store, rng, "gen.pre", MEL_BANDS, h, 7, 1);

        // SubBlock stage i (0-based) feeds UpBlock NUM_STAGES-1-i
        let mut subs = Vec::with_capacity(NUM_STAGES);
        let mut sub_in = 1;
        for i in 0..NUM_STAGES {
            let paired_up = NUM_STAGES - 1 - i;
            let out_ch = cfg.stage_channels(paired_up);
            let conv = cfg.subblock_enabled.then(|| {
                Conv1d::same(
                    store,
                    rng,
                    &format!("gen.sub.{i}.conv"),
                    sub_in,
                    out_ch,
                    cfg.sub_kernels[i],
                    cfg.sub_dilations[i],
                )
            });
            if cfg.subblock_enabled {
                sub_in = out_ch;
            }
            subs.push(SubStage {
                pool: cfg.sub_pool_strides[i],
                conv,
            });
        }

        let mut ups = Vec::with_capacity(NUM_STAGES);
        for l in 0..NUM_STAGES {
            let in_ch = if l == 0 { h } else { cfg.stage_channels(l - 1) };
            let out_ch = cfg.stage_channels(l);
            let kernel = cfg.upsample_kernels[l];
            let stride = cfg.upsample_strides[l];
            let tconv = ConvTranspose1d::new(
                store,
                rng,
                &format!("gen.up.{l}.tconv"),
                in_ch,
                out_ch,
                kernel,
                stride,
                (kernel - stride) / 2,
            );
            let e_ch = cfg.excitation_channels(l);
            let bank = if cfg.pc_resblock_enabled {
                FusionBank::Pc(
                    cfg.resblock_kernels
                        .iter()
                        .zip(&cfg.resblock_dilations)
                        .enumerate()
                        .map(|(n, (&k, dil))| {
                            PcResBlock::new(
                                store,
                                rng,
                                &format!("gen.up.{l}.pc.{n}"),
                                out_ch,
                                e_ch,
                                k,
                                dil,
                            )
                        })
                        .collect(),
                )
            } else {
                FusionBank::Plain(
                    cfg.resblock_kernels
                        .iter()
                        .zip(&cfg.resblock_dilations)
                        .enumerate()
                        .map(|(n, (&k, dil))| {
                            ResBlock::new(
                                store,
                                rng,
                                &format!("gen.up.{l}.res.{n}"),
                                out_ch,
                                k,
                                dil,
                            )
                        })
                        .collect(),
                )
            };
            ups.push(UpBlock { tconv, bank });
        }

        let post = Conv1d::same(store, rng, "gen.post", cfg.stage_channels(3), 1, 7, 1);

        Ok(Self {
            cfg,
            pre,
            subs,
            ups,
            post,
        })
    }

    /// Run the SubBlock chain; returns the four stage outputs with lengths
    /// `[T, T/2, T/4, T/32]`.
    pub fn sub_chain(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Vec<Var>> {
        let (_, _, t_len) = g.value(e).as_bct();
        if t_len % TOTAL_POOL != 0 {
            return Err(Error::Shape(format!(
                "excitation length {t_len} is not divisible by {TOTAL_POOL}"
            )));
        }
        let mut outs = Vec::with_capacity(NUM_STAGES);
        let mut x = e;
        for stage in &self.subs {
            if stage.pool > 1 {
                x = g.max_pool1d(x, stage.pool, stage.pool)?;
            }
            if let Some(conv) = &stage.conv {
                let c = conv.forward(g, store, x)?;
                x = g.leaky_relu(c, self.cfg.lrelu_slope)?;
            }
            outs.push(x);
        }
        Ok(outs)
    }

    /// Mel `(1, 80, L)` + excitation `(1, 1, 256L)` -> waveform `(1, 1, 256L)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mel: Var, e: Var) -> Result<Var> {
        let (_, mel_ch, l_frames) = g.value(mel).as_bct();
        if mel_ch != MEL_BANDS {
            return Err(Error::Shape(format!(
                "generator: expected {MEL_BANDS} mel channels, got {mel_ch}"
            )));
        }
        let (_, e_ch, t_len) = g.value(e).as_bct();
        let hop: usize = self.cfg.upsample_strides.iter().product();
        if e_ch != 1 || t_len != hop * l_frames {
            return Err(Error::Shape(format!(
                "generator: excitation ({e_ch} ch, {t_len} samples) does not match {l_frames} \
                 frames x {hop}"
            )));
        }

        let sub_outs = self.sub_chain(g, store, e)?;
        let slope = self.cfg.lrelu_slope;

        let mut x = self.pre.forward(g, store, mel)?;
        for (l, up) in self.ups.iter().enumerate() {
            x = g.leaky_relu(x, slope)?;
            x = up.tconv.forward(g, store, x)?;
            let e_l = sub_outs[NUM_STAGES - 1 - l];
            let (_, _, t_x) = g.value(x).as_bct();
            let (_, _, t_e) = g.value(e_l).as_bct();
            if t_x != t_e {
                return Err(Error::Shape(format!(
                    "generator stage {l}: feature length {t_x} vs excitation {t_e}"
                )));
            }
            x = match &up.bank {
                FusionBank::Pc(blocks) => {
                    let mut acc: Option<Var> = None;
                    for block in blocks {
                        let y = block.forward(g, store, slope, x, e_l)?;
                        acc = Some(match acc {
                            Some(a) => g.add(a, y)?,
                            None => y,
                        });
                    }
                    g.scale(acc.unwrap(), 1.0 / blocks.len() as f32)
                }
                FusionBank::Plain(blocks) => {
                    let fused = g.add(x, e_l)?;
                    let mut acc: Option<Var> = None;
                    for block in blocks {
                        let y = block.forward(g, store, slope, fused)?;
                        acc = Some(match acc {
                            Some(a) => g.add(a, y)?,
                            None => y,
                        });
                    }
                    g.scale(acc.unwrap(), 1.0 / blocks.len() as f32)
                }
            };
        }
        let x = g.leaky_relu(x, slope)?;
        let x = self.post.forward(g, store, x)?;
        let out = g.tanh(x);
        if !g.value(out).is_finite() {
            return Err(Error::NonFinite("generator activations".into()));
        }
        Ok(out)
    }
}
