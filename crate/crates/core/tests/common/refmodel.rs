//! f64 reference of the full synthesis path (excitation shaper, SubBlock
//! chain, UpBlocks with parallel-conv fusion, mel-L1 loss), built from the
//! definitional ops in the parent module. Used as the finite-difference
//! target for the end-to-end gradient check: it reads the same parameter
//! values as the f32 implementation but shares none of its code.

use std::collections::BTreeMap;

use sfvoc::generator::GeneratorConfig;

use super::{conv1d_ref, conv_transpose1d_ref, frames_ref, matmul_ref, max_pool1d_ref};

pub type RefParams = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

pub struct RefInputs {
    /// Channels-first mel `(80, L)` flattened.
    pub mel_cf: Vec<f64>,
    pub l_frames: usize,
    /// Voiced sine-plus-noise component (zero in unvoiced spans).
    pub voiced: Vec<f64>,
    /// Shaper input `n / (3 sigma)`.
    pub noise_scaled: Vec<f64>,
    /// 1.0 where unvoiced.
    pub mask: Vec<f64>,
    /// Reference waveform, `256 * L` samples.
    pub real: Vec<f64>,
}

fn get<'a>(params: &'a RefParams, name: &str) -> (&'a [usize], &'a [f64]) {
    let (dims, data) = params
        .get(name)
        .unwrap_or_else(|| panic!("reference: missing parameter {name}"));
    (dims, data)
}

fn lrelu(x: &mut [f64], slope: f64) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// Stride-1 same-padding convolution by name lookup.
fn conv_same(
    params: &RefParams,
    name: &str,
    x: &[f64],
    (c_in, t): (usize, usize),
    dilation: usize,
) -> (Vec<f64>, usize) {
    let (wd, w) = get(params, &format!("{name}.weight"));
    let (_, b) = get(params, &format!("{name}.bias"));
    let (c_out, kernel) = (wd[0], wd[2]);
    assert_eq!(wd[1], c_in, "{name}: channel mismatch");
    let pad = dilation * (kernel - 1) / 2;
    let y = conv1d_ref(
        x,
        (1, c_in, t),
        w,
        (c_out, c_in, kernel),
        Some(b),
        1,
        dilation,
        pad,
    );
    (y, c_out)
}

/// End-to-end mel-L1 loss of the reference forward pass.
pub fn reference_loss(
    gcfg: &GeneratorConfig,
    dnn_enabled: bool,
    params: &RefParams,
    inp: &RefInputs,
) -> f64 {
    let slope = gcfg.lrelu_slope as f64;
    let t_len = inp.real.len();
    assert_eq!(t_len, 256 * inp.l_frames);

    // excitation: voiced part + masked shaped noise
    let shaped = if dnn_enabled {
        let (h, c_h) = conv_same(params, "source.dnn.conv_in", &inp.noise_scaled, (1, t_len), 1);
        let mut h = h;
        for v in h.iter_mut() {
            *v = v.tanh();
        }
        let (o, _) = conv_same(params, "source.dnn.conv_out", &h, (c_h, t_len), 1);
        o
    } else {
        inp.noise_scaled.clone()
    };
    let e: Vec<f64> = inp
        .voiced
        .iter()
        .zip(&shaped)
        .zip(&inp.mask)
        .map(|((v, s), m)| v + s * m)
        .collect();

    // SubBlock chain
    let mut sub_outs: Vec<(Vec<f64>, usize, usize)> = Vec::new(); // (data, ch, t)
    let mut x = e;
    let mut ch = 1usize;
    let mut t = t_len;
    for i in 0..4 {
        let pool = gcfg.sub_pool_strides[i];
        if pool > 1 {
            x = max_pool1d_ref(&x, ch, t, pool, pool);
            t /= pool;
        }
        if gcfg.subblock_enabled {
            let (y, c_out) = conv_same(
                params,
                &format!("gen.sub.{i}.conv"),
                &x,
                (ch, t),
                gcfg.sub_dilations[i],
            );
            x = y;
            lrelu(&mut x, slope);
            ch = c_out;
        }
        sub_outs.push((x.clone(), ch, t));
    }

    // pre conv on channels-first mel
    let (mut feat, mut f_ch) = conv_same(params, "gen.pre", &inp.mel_cf, (80, inp.l_frames), 1);
    let mut f_t = inp.l_frames;

    for l in 0..4 {
        lrelu(&mut feat, slope);
        let (wd, w) = get(params, &format!("gen.up.{l}.tconv.weight"));
        let (_, b) = get(params, &format!("gen.up.{l}.tconv.bias"));
        let (c_out, kernel) = (wd[1], wd[2]);
        let stride = gcfg.upsample_strides[l];
        let pad = (gcfg.upsample_kernels[l] - stride) / 2;
        feat = conv_transpose1d_ref(
            &feat,
            (1, f_ch, f_t),
            w,
            (f_ch, c_out, kernel),
            Some(b),
            stride,
            pad,
        );
        f_ch = c_out;
        f_t = (f_t - 1) * stride + kernel - 2 * pad;

        let (e_l, e_ch, e_t) = &sub_outs[3 - l];
        assert_eq!(*e_t, f_t, "stage {l} length");

        let n_kernels = gcfg.resblock_kernels.len();
        let mut acc = vec![0.0f64; f_ch * f_t];
        for n in 0..n_kernels {
            let mut c = feat.clone();
            for (i, &d) in gcfg.resblock_dilations[n].iter().enumerate() {
                let base = format!("gen.up.{l}.pc.{n}.{i}");
                let (ed, _) = conv_same(params, &format!("{base}.e_dil"), e_l, (*e_ch, f_t), d);
                let (cd, _) = conv_same(params, &format!("{base}.c_dil"), &c, (f_ch, f_t), d);
                let mut h: Vec<f64> = ed.iter().zip(&cd).map(|(a, b)| a + b).collect();
                lrelu(&mut h, slope);
                let (e1, _) = conv_same(params, &format!("{base}.e_one"), e_l, (*e_ch, f_t), 1);
                let (h1, _) = conv_same(params, &format!("{base}.h_one"), &h, (f_ch, f_t), 1);
                let mut o: Vec<f64> = e1.iter().zip(&h1).map(|(a, b)| a + b).collect();
                lrelu(&mut o, slope);
                for (ci, oi) in c.iter_mut().zip(&o) {
                    *ci += oi;
                }
            }
            for (a, ci) in acc.iter_mut().zip(&c) {
                *a += ci;
            }
        }
        for a in acc.iter_mut() {
            *a /= n_kernels as f64;
        }
        feat = acc;
    }

    lrelu(&mut feat, slope);
    let (mut wave, _) = conv_same(params, "gen.post", &feat, (f_ch, f_t), 1);
    for v in wave.iter_mut() {
        *v = v.tanh();
    }

    // mel-L1 between real and fake
    let mel_fake = log_mel_f64(&wave);
    let mel_real = log_mel_f64(&inp.real);
    let n = mel_fake.len() as f64;
    mel_fake
        .iter()
        .zip(&mel_real)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n
}

/// Natural-log 80-band mel via framing + DFT matmul, all f64.
fn log_mel_f64(x: &[f64]) -> Vec<f64> {
    const WIN: usize = 1024;
    const HOP: usize = 256;
    const BINS: usize = 513;
    const BANDS: usize = 80;
    let frames = frames_ref(x, WIN, HOP);
    let n_frames = x.len() / HOP;

    let mut windowed = frames;
    for l in 0..n_frames {
        for j in 0..WIN {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * j as f64 / WIN as f64).cos();
            windowed[l * WIN + j] *= w;
        }
    }
    let mut cos_m = vec![0.0f64; WIN * BINS];
    let mut sin_m = vec![0.0f64; WIN * BINS];
    for nn in 0..WIN {
        for k in 0..BINS {
            let ang = 2.0 * std::f64::consts::PI * (k * nn) as f64 / WIN as f64;
            cos_m[nn * BINS + k] = ang.cos();
            sin_m[nn * BINS + k] = -ang.sin();
        }
    }
    let re = matmul_ref(&windowed, &cos_m, (n_frames, WIN, BINS));
    let im = matmul_ref(&windowed, &sin_m, (n_frames, WIN, BINS));
    let mag: Vec<f64> = re
        .iter()
        .zip(&im)
        .map(|(r, i)| (r * r + i * i).sqrt())
        .collect();
    let fb = sfvoc::signal::mel_filterbank_f64(super::SAMPLE_RATE);
    let mut out = vec![0.0f64; n_frames * BANDS];
    for l in 0..n_frames {
        for m in 0..BANDS {
            let mut acc = 0.0;
            for k in 0..BINS {
                acc += fb[m * BINS + k] * mag[l * BINS + k];
            }
            out[l * BANDS + m] = acc.max(1e-5).ln();
        }
    }
    out
}
