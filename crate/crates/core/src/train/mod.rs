//! Adversarial training harness: dataset preparation, the alternating
//! discriminator/generator loop, and versioned checkpointing.
//!
//! Each step crops one 8192-sample segment (and its 32 mel frames and
//! excitation span) from a random utterance, updates the discriminators on
//! (real, detached fake), then updates the generator through the refreshed
//! critics with `adv + lambda_fm * fm + lambda_mel * mel`. Everything is
//! seeded; a checkpoint restores bit-identical continuation.

mod disc;
mod loss;

pub use disc::{DiscOutput, DiscriminatorConfig, DiscriminatorSet};
pub use loss::{
    discriminator_loss, feature_matching_loss, generator_adversarial_loss, mel_l1_loss,
};

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::container::{Blob, Container, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::predictor::F0Predictor;
use crate::signal::{
    extract_f0, mel_spectrogram, stft_basis, AudioBuffer, F0Track, MelSpectrogram, StftBasis,
    HOP_SIZE,
};
use crate::source::{upsample_f0, upsample_vuv, ExcitationParts, SourceModule, UPSAMPLE_FACTOR};
use crate::tensor::{AdamW, AdamWConfig, Graph, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamWConfig,
    /// Learning-rate decay applied once per dataset epoch.
    pub lr_decay: f32,
    pub lambda_fm: f32,
    pub lambda_mel: f32,
    pub segment_len: usize,
    pub batch_size: usize,
    /// Save a checkpoint every N steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub disc: DiscriminatorConfig,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            adam: AdamWConfig::default(),
            lr_decay: 0.999,
            lambda_fm: 2.0,
            lambda_mel: 45.0,
            segment_len: 8192,
            batch_size: 1,
            checkpoint_every: 0,
            disc: DiscriminatorConfig::full(),
        }
    }

    pub fn toy() -> Self {
        Self {
            disc: DiscriminatorConfig::toy(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 || self.segment_len % HOP_SIZE != 0 {
            return Err(Error::Config(format!(
                "segment_len must be a positive multiple of {HOP_SIZE}"
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(
                "this harness trains with batch_size 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_decay) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        self.disc.validate()
    }
}

/// Every network of one run, plus which parameters belong to the generator
/// side (generator + excitation shaper) and which to the discriminators.
pub struct Models {
    pub store: ParamStore,
    pub source: SourceModule,
    pub generator: Generator,
    pub discriminators: DiscriminatorSet,
    pub predictor: F0Predictor,
    pub gen_ids: Vec<ParamId>,
    pub disc_ids: Vec<ParamId>,
}

impl Models {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let mut source = None;
        let mut generator = None;
        let (res, gen_ids) = store.scope(|s| -> Result<()> {
            source = Some(SourceModule::new(cfg.source, s, &mut rng)?);
            generator = Some(Generator::new(cfg.generator.clone(), s, &mut rng)?);
            Ok(())
        });
        res?;
        let mut discriminators = None;
        let (res, disc_ids) = store.scope(|s| -> Result<()> {
            discriminators = Some(DiscriminatorSet::new(cfg.train.disc.clone(), s, &mut rng)?);
            Ok(())
        });
        res?;
        let predictor = F0Predictor::new(&mut store, &mut rng);

        Ok(Self {
            store,
            source: source.unwrap(),
            generator: generator.unwrap(),
            discriminators: discriminators.unwrap(),
            predictor,
            gen_ids,
            disc_ids,
        })
    }

    /// Render a waveform for (mel, f0) with a fresh inference graph.
    pub fn synthesize(
        &self,
        mel: &MelSpectrogram,
        f0: &F0Track,
        seed: u64,
        sample_rate: u32,
    ) -> Result<AudioBuffer> {
        if f0.len() != mel.frames() {
            return Err(Error::Shape(format!(
                "synthesize: {} mel frames vs {} f0 frames",
                mel.frames(),
                f0.len()
            )));
        }
        let f_up = upsample_f0(f0, UPSAMPLE_FACTOR)?;
        let v_up = upsample_vuv(f0.vuv(), UPSAMPLE_FACTOR);
        let parts = self.source.parts(&f_up, &v_up, seed)?;
        let mut g = Graph::new();
        let e = self.source.forward(&mut g, &self.store, &parts)?;
        let mel_var = g.leaf(mel.to_tensor());
        let out = self.generator.forward(&mut g, &self.store, mel_var, e)?;
        AudioBuffer::new(g.value(out).data().to_vec(), sample_rate)
    }
}

/// One training utterance with all derived features precomputed.
pub struct Utterance {
    pub name: String,
    /// Zero-padded to a hop multiple and at least one segment.
    pub audio: Vec<f32>,
    pub mel: MelSpectrogram,
    pub f0: F0Track,
    pub parts: ExcitationParts,
}

/// Derive features for one utterance; `seed` fixes its excitation draws.
pub fn prepare_utterance(
    name: impl Into<String>,
    audio: &AudioBuffer,
    source: &SourceModule,
    segment_len: usize,
    seed: u64,
) -> Result<Utterance> {
    let mut samples = audio.samples().to_vec();
    let padded = samples.len().div_ceil(HOP_SIZE) * HOP_SIZE;
    samples.resize(padded.max(segment_len), 0.0);
    let padded_audio = AudioBuffer::new(samples.clone(), audio.sample_rate())?;

    let mel = mel_spectrogram(&padded_audio)?;
    let f0 = extract_f0(&padded_audio);
    debug_assert_eq!(mel.frames() * HOP_SIZE, samples.len());

    let f_up = upsample_f0(&f0, UPSAMPLE_FACTOR)?;
    let v_up = upsample_vuv(f0.vuv(), UPSAMPLE_FACTOR);
    let parts = source.parts(&f_up, &v_up, seed)?;

    Ok(Utterance {
        name: name.into(),
        audio: samples,
        mel,
        f0,
        parts,
    })
}

/// Stable per-utterance excitation seed derived from the master seed.
pub fn utterance_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-step loss summary, also the line format of the training log.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f32,
    pub loss_d: f32,
    pub loss_g: f32,
    pub adv_g: f32,
    pub fm: f32,
    pub mel: f32,
}

impl std::fmt::Display for LossRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={} lr={:.6e} loss_d={:.4} loss_g={:.4} adv_g={:.4} fm={:.4} mel={:.4}",
            self.step, self.lr, self.loss_d, self.loss_g, self.adv_g, self.fm, self.mel
        )
    }
}

/// Full mutable training state: models, both optimizers, step counter, RNG
/// and loss history.
pub struct TrainState {
    pub cfg: RunConfig,
    pub models: Models,
    opt_g: AdamW,
    opt_d: AdamW,
    pub step: u64,
    rng: ChaCha8Rng,
    basis: Arc<StftBasis>,
    pub history: Vec<LossRecord>,
    /// Set once the F0 predictor section has been trained; mel-only
    /// synthesis refuses checkpoints where this is still false.
    pub f0_trained: bool,
}

const TRAIN_RNG_SALT: u64 = 0x5F3_C0DE;

impl TrainState {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(&cfg)?;
        let opt_g = AdamW::new(cfg.train.adam, models.gen_ids.clone(), &models.store);
        let opt_d = AdamW::new(cfg.train.adam, models.disc_ids.clone(), &models.store);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_RNG_SALT);
        let basis = stft_basis(cfg.sample_rate);
        Ok(Self {
            cfg,
            models,
            opt_g,
            opt_d,
            step: 0,
            rng,
            basis,
            history: Vec::new(),
            f0_trained: false,
        })
    }

    /// Learning rate for the current step: `lr * decay^epoch`.
    pub fn current_lr(&self, dataset_len: usize) -> f32 {
        let epoch = self.step / dataset_len.max(1) as u64;
        self.cfg.train.adam.lr * self.cfg.train.lr_decay.powi(epoch.min(i32::MAX as u64) as i32)
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, dataset: &[Utterance]) -> Result<LossRecord> {
        if dataset.is_empty() {
            return Err(Error::InvalidArg("train: empty dataset".into()));
        }
        let seg = self.cfg.train.segment_len;
        let seg_frames = seg / HOP_SIZE;
        let utt_idx = if dataset.len() == 1 {
            0
        } else {
            self.rng.random_range(0..dataset.len())
        };
        let utt = &dataset[utt_idx];
        if utt.mel.frames() < seg_frames {
            return Err(Error::Shape(format!(
                "utterance '{}' shorter than one segment",
                utt.name
            )));
        }
        let max_start = utt.mel.frames() - seg_frames;
        let fs = if max_start == 0 {
            0
        } else {
            self.rng.random_range(0..=max_start)
        };
        let s0 = fs * HOP_SIZE;

        let mel_seg = utt.mel.slice(fs, seg_frames);
        let real = &utt.audio[s0..s0 + seg];
        let parts_seg = utt.parts.slice(s0, seg);
        let real_t = Tensor::new(vec![1, 1, seg], real.to_vec())?;
        let lr = self.current_lr(dataset.len());
        let store = &mut self.models.store;

        // generator forward (kept for the G step)
        let mut g1 = Graph::new();
        let e = self.models.source.forward(&mut g1, store, &parts_seg)?;
        let mel_var = g1.leaf(mel_seg.to_tensor());
        let fake = self
            .models
            .generator
            .forward(&mut g1, store, mel_var, e)?;
        let fake_t = g1.tensor(fake);

        // discriminator step on (real, detached fake)
        let mut g2 = Graph::new();
        let real_v = g2.leaf(real_t.clone());
        let fake_v = g2.leaf(fake_t);
        let outs_real = self.models.discriminators.forward(&mut g2, store, real_v)?;
        let outs_fake = self.models.discriminators.forward(&mut g2, store, fake_v)?;
        let d_loss = discriminator_loss(&mut g2, &outs_real, &outs_fake)?;
        let d_val = g2.value(d_loss).item()?;
        if !d_val.is_finite() {
            return Err(Error::NonFinite(format!(
                "discriminator loss at step {}",
                self.step
            )));
        }
        store.zero_grad();
        g2.backward(d_loss, store)?;
        self.opt_d.step_with_lr(store, lr)?;

        // generator step through the refreshed discriminators
        let outs_fake_g = self.models.discriminators.forward(&mut g1, store, fake)?;
        let real_v1 = g1.leaf(real_t);
        let outs_real_g = self.models.discriminators.forward(&mut g1, store, real_v1)?;
        let adv = generator_adversarial_loss(&mut g1, &outs_fake_g)?;
        let fm = feature_matching_loss(&mut g1, &outs_real_g, &outs_fake_g)?;
        let mel_loss = mel_l1_loss(&mut g1, &self.basis, real_v1, fake)?;
        let fm_w = g1.scale(fm, self.cfg.train.lambda_fm);
        let mel_w = g1.scale(mel_loss, self.cfg.train.lambda_mel);
        let partial = g1.add(adv, fm_w)?;
        let total = g1.add(partial, mel_w)?;

        let record = LossRecord {
            step: self.step,
            lr,
            loss_d: d_val,
            loss_g: g1.value(total).item()?,
            adv_g: g1.value(adv).item()?,
            fm: g1.value(fm).item()?,
            mel: g1.value(mel_loss).item()?,
        };
        if !record.loss_g.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {}",
                self.step
            )));
        }
        store.zero_grad();
        g1.backward(total, store)?;
        self.opt_g.step_with_lr(store, lr)?;
        store.zero_grad();

        self.step += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Run `steps` updates, invoking `on_step` after each.
    pub fn run(
        &mut self,
        dataset: &[Utterance],
        steps: usize,
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<()> {
        for _ in 0..steps {
            let record = self.train_step(dataset)?;
            on_step(&record);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new(self.cfg.to_toml());
        for (_, p) in self.models.store.iter() {
            c.insert(
                format!("param.{}", p.name),
                Blob::f32(p.value.dims().to_vec(), p.value.data().to_vec()),
            );
        }
        save_optimizer(&mut c, "optg", &self.opt_g, &self.models.store);
        save_optimizer(&mut c, "optd", &self.opt_d, &self.models.store);
        c.insert("state.step", Blob::scalar_u64(self.step));
        c.insert(
            "state.f0_trained",
            Blob::scalar_u64(self.f0_trained as u64),
        );
        c.insert("state.optg_t", Blob::scalar_u64(self.opt_g.step_count()));
        c.insert("state.optd_t", Blob::scalar_u64(self.opt_d.step_count()));
        let pos = self.rng.get_word_pos();
        c.insert(
            "state.rng_pos",
            Blob {
                dims: vec![2],
                data: crate::container::BlobData::U64(vec![pos as u64, (pos >> 64) as u64]),
            },
        );
        c.write(path, CHECKPOINT_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read(path.as_ref(), CHECKPOINT_MAGIC)?;
        let cfg = RunConfig::from_toml(&c.meta)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut state = Self::new(cfg)?;
        restore_params(&c, &mut state.models.store)?;
        restore_optimizer(&c, "optg", &mut state.opt_g, &state.models.store)?;
        restore_optimizer(&c, "optd", &mut state.opt_d, &state.models.store)?;
        state.step = c.get("state.step")?.as_u64_scalar()?;
        state.f0_trained = c.get("state.f0_trained")?.as_u64_scalar()? != 0;
        let pos_blob = c.get("state.rng_pos")?;
        let pos = match &pos_blob.data {
            crate::container::BlobData::U64(v) if v.len() == 2 => {
                (v[0] as u128) | ((v[1] as u128) << 64)
            }
            _ => return Err(Error::Checkpoint("bad rng_pos blob".into())),
        };
        state.rng.set_word_pos(pos);
        Ok(state)
    }
}

fn save_optimizer(c: &mut Container, tag: &str, opt: &AdamW, store: &ParamStore) {
    for (slot, &id) in opt.ids().iter().enumerate() {
        let name = &store.get(id).name;
        let dims = store.value(id).dims().to_vec();
        let (m, v) = opt.moments(slot);
        c.insert(format!("{tag}.m.{name}"), Blob::f32(dims.clone(), m.to_vec()));
        c.insert(format!("{tag}.v.{name}"), Blob::f32(dims, v.to_vec()));
    }
}

fn restore_optimizer(
    c: &Container,
    tag: &str,
    opt: &mut AdamW,
    store: &ParamStore,
) -> Result<()> {
    let t = c.get(&format!("state.{tag}_t"))?.as_u64_scalar()?;
    let ids: Vec<ParamId> = opt.ids().to_vec();
    for (slot, id) in ids.into_iter().enumerate() {
        let name = store.get(id).name.clone();
        let m = c.get(&format!("{tag}.m.{name}"))?.as_f32()?.to_vec();
        let v = c.get(&format!("{tag}.v.{name}"))?.as_f32()?.to_vec();
        if m.len() != store.value(id).numel() {
            return Err(Error::Checkpoint(format!(
                "moment size mismatch for '{name}'"
            )));
        }
        opt.restore(slot, m, v, t);
    }
    Ok(())
}

fn restore_params(c: &Container, store: &mut ParamStore) -> Result<()> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let blob = c.get(&format!("param.{name}"))?;
        let dims = store.value(id).dims();
        if blob.dims != dims {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}': checkpoint has {:?}, model expects {:?}",
                blob.dims, dims
            )));
        }
        let t = Tensor::new(blob.dims.clone(), blob.as_f32()?.to_vec())?;
        store.set_value(id, t)?;
    }
    Ok(())
}

/// Everything inference needs from a checkpoint.
pub struct LoadedCheckpoint {
    pub cfg: RunConfig,
    pub models: Models,
    pub f0_trained: bool,
}

/// Load the config echo and the models with restored parameters.
pub fn load_models(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let c = Container::read(path.as_ref(), CHECKPOINT_MAGIC)?;
    let cfg = RunConfig::from_toml(&c.meta)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let f0_trained = c.get("state.f0_trained")?.as_u64_scalar()? != 0;
    let mut models = Models::new(&cfg)?;
    restore_params(&c, &mut models.store)?;
    Ok(LoadedCheckpoint {
        cfg,
        models,
        f0_trained,
    })
}
