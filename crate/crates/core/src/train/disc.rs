//! Multi-period and multi-scale discriminators. Each sub-discriminator
//! returns one score map plus every intermediate activation (for the
//! feature-matching loss).
//!
//! Period sub-discriminators view the signal as a `(T/p, p)` fold; since
//! the conv kernels act only along the fold axis, the columns are carried
//! as batch entries and the stack reduces to strided 1-D convolutions.
//! Scale sub-discriminators see the raw signal and one/two rounds of
//! average pooling (kernel 4, stride 2, pad 1).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Conv1d;
use crate::tensor::{Graph, ParamStore, Var};

/// MSD conv stack geometry: (kernel, stride, padding), fixed; channels vary.
const MSD_LAYERS: [(usize, usize, usize); 7] = [
    (15, 1, 7),
    (41, 2, 20),
    (41, 2, 20),
    (41, 4, 20),
    (41, 4, 20),
    (41, 1, 20),
    (5, 1, 2),
];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    /// Out-channels of the four strided period-disc layers; a fifth
    /// stride-1 layer keeps the last width.
    pub mpd_channels: Vec<usize>,
    /// Out-channels of the seven scale-disc layers.
    pub msd_channels: Vec<usize>,
    pub msd_scales: usize,
    pub lrelu_slope: f32,
}

impl DiscriminatorConfig {
    pub fn full() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![32, 128, 512, 1024],
            msd_channels: vec![128, 128, 256, 512, 1024, 1024, 1024],
            msd_scales: 3,
            lrelu_slope: 0.1,
        }
    }

    /// Channel widths small enough for CPU desk runs.
    pub fn toy() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![4, 8, 16, 16],
            msd_channels: vec![8, 8, 16, 16, 32, 32, 32],
            msd_scales: 3,
            lrelu_slope: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::Config("discriminator: no periods".into()));
        }
        if self.mpd_channels.len() != 4 {
            return Err(Error::Config(
                "discriminator: mpd_channels must list 4 widths".into(),
            ));
        }
        if self.msd_channels.len() != MSD_LAYERS.len() {
            return Err(Error::Config(format!(
                "discriminator: msd_channels must list {} widths",
                MSD_LAYERS.len()
            )));
        }
        if self.msd_scales == 0 {
            return Err(Error::Config("discriminator: msd_scales must be >= 1".into()));
        }
        Ok(())
    }
}

/// Score map plus intermediate feature maps of one sub-discriminator.
pub struct DiscOutput {
    pub score: Var,
    pub features: Vec<Var>,
}

#[derive(Clone, Debug)]
struct PeriodDisc {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDisc {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        period: usize,
        channels: &[usize],
    ) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, &out_ch) in channels.iter().enumerate() {
            convs.push(Conv1d::new(
                store,
                rng,
                &format!("{name}.conv.{i}"),
                in_ch,
                out_ch,
                5,
                3,
                1,
                2,
            ));
            in_ch = out_ch;
        }
        // stride-1 tail conv at the last width
        convs.push(Conv1d::new(
            store,
            rng,
            &format!("{name}.conv.{}", channels.len()),
            in_ch,
            in_ch,
            5,
            1,
            1,
            2,
        ));
        let post = Conv1d::new(store, rng, &format!("{name}.post"), in_ch, 1, 3, 1, 1, 1);
        Self {
            period,
            convs,
            post,
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slope: f32,
        audio: Var,
    ) -> Result<DiscOutput> {
        let mut x = g.fold_periods(audio, self.period)?;
        let mut features = Vec::new();
        for conv in &self.convs {
            x = conv.forward(g, store, x)?;
            x = g.leaky_relu(x, slope)?;
            features.push(x);
        }
        x = self.post.forward(g, store, x)?;
        features.push(x);
        Ok(DiscOutput { score: x, features })
    }
}

#[derive(Clone, Debug)]
struct ScaleDisc {
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ScaleDisc {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: &[usize]) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, (&out_ch, &(k, s, p))) in channels.iter().zip(MSD_LAYERS.iter()).enumerate() {
            convs.push(Conv1d::new(
                store,
                rng,
                &format!("{name}.conv.{i}"),
                in_ch,
                out_ch,
                k,
                s,
                1,
                p,
            ));
            in_ch = out_ch;
        }
        let post = Conv1d::new(store, rng, &format!("{name}.post"), in_ch, 1, 3, 1, 1, 1);
        Self { convs, post }
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slope: f32,
        audio: Var,
    ) -> Result<DiscOutput> {
        let mut x = audio;
        let mut features = Vec::new();
        for conv in &self.convs {
            x = conv.forward(g, store, x)?;
            x = g.leaky_relu(x, slope)?;
            features.push(x);
        }
        x = self.post.forward(g, store, x)?;
        features.push(x);
        Ok(DiscOutput { score: x, features })
    }
}

/// The full critic: one period discriminator per period, one scale
/// discriminator per pooling level.
#[derive(Clone, Debug)]
pub struct DiscriminatorSet {
    pub cfg: DiscriminatorConfig,
    mpd: Vec<PeriodDisc>,
    msd: Vec<ScaleDisc>,
}

impl DiscriminatorSet {
    pub fn new(
        cfg: DiscriminatorConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mpd = cfg
            .periods
            .iter()
            .map(|&p| {
                PeriodDisc::new(
                    store,
                    rng,
                    &format!("disc.mpd.p{p}"),
                    p,
                    &cfg.mpd_channels,
                )
            })
            .collect();
        let msd = (0..cfg.msd_scales)
            .map(|s| ScaleDisc::new(store, rng, &format!("disc.msd.s{s}"), &cfg.msd_channels))
            .collect();
        Ok(Self { cfg, mpd, msd })
    }

    /// Run every sub-discriminator on `audio` (`(1, 1, T)`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, audio: Var) -> Result<Vec<DiscOutput>> {
        let (_, _, t_len) = g.value(audio).as_bct();
        if t_len == 0 {
            return Err(Error::Shape("discriminator: empty audio".into()));
        }
        let slope = self.cfg.lrelu_slope;
        let mut outs = Vec::with_capacity(self.mpd.len() + self.msd.len());
        for d in &self.mpd {
            outs.push(d.forward(g, store, slope, audio)?);
        }
        let mut scaled = audio;
        for (i, d) in self.msd.iter().enumerate() {
            if i > 0 {
                scaled = g.avg_pool1d(scaled, 4, 2, 1)?;
            }
            outs.push(d.forward(g, store, slope, scaled)?);
        }
        Ok(outs)
    }
}
