//! Define-by-run reverse-mode autodiff. Each forward op appends a node to
//! the tape; `backward` walks the tape in reverse and accumulates parameter
//! gradients into the owning [`ParamStore`]. A graph is single-owner and
//! single-threaded; one backward pass consumes it.

use super::kernels as kn;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool1d {
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Sin {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddConst {
        x: Var,
    },
    Scale {
        x: Var,
        c: f32,
    },
    Cumsum {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Magnitude {
        re: Var,
        im: Var,
    },
    LogFloor {
        x: Var,
        floor: f32,
    },
    Frames {
        x: Var,
        window: usize,
        hop: usize,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    BceWithLogits {
        logits: Var,
        targets: Var,
    },
    FoldPeriods {
        x: Var,
        period: usize,
    },
}

struct Node {
    op: Op,
    out: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].out
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        self.nodes[v.0].out.clone()
    }

    fn push(&mut self, op: Op, out: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            out,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Parameter input; `backward` accumulates into the store's grad slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let trainable = p.trainable;
        self.push(Op::Param(id), p.value.clone(), trainable)
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride < 1 || dilation < 1 {
            return Err(Error::InvalidArg(
                "conv1d: stride and dilation must be >= 1".into(),
            ));
        }
        let (batch, c_in, t_in) = self.value(x).as_bct();
        let wt = self.value(w);
        if wt.rank() != 3 {
            return Err(Error::Shape("conv1d: weight must be (out, in, k)".into()));
        }
        let (c_out, w_in, kernel) = (wt.dims()[0], wt.dims()[1], wt.dims()[2]);
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d: input has {c_in} channels, weight expects {w_in}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).numel() != c_out {
                return Err(Error::Shape("conv1d: bias length != out channels".into()));
            }
        }
        let t_out = kn::conv1d_out_len(t_in, kernel, stride, dilation, padding)
            .ok_or_else(|| Error::Shape("conv1d: output length < 1".into()))?;
        let mut out = vec![0.0f32; batch * c_out * t_out];
        kn::conv1d_fwd(
            self.value(x).data(),
            (batch, c_in, t_in),
            self.value(w).data(),
            (c_out, c_in, kernel),
            b.map(|b| self.value(b).data()),
            stride,
            dilation,
            padding,
            &mut out,
            t_out,
        );
        let dims = if self.value(x).rank() == 3 {
            vec![batch, c_out, t_out]
        } else {
            vec![c_out, t_out]
        };
        let needs = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                dilation,
                padding,
            },
            Tensor::new(dims, out)?,
            needs,
        ))
    }

    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride < 1 {
            return Err(Error::InvalidArg("conv_transpose1d: stride must be >= 1".into()));
        }
        let (batch, c_in, t_in) = self.value(x).as_bct();
        let wt = self.value(w);
        if wt.rank() != 3 {
            return Err(Error::Shape(
                "conv_transpose1d: weight must be (in, out, k)".into(),
            ));
        }
        let (w_in, c_out, kernel) = (wt.dims()[0], wt.dims()[1], wt.dims()[2]);
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "conv_transpose1d: input has {c_in} channels, weight expects {w_in}"
            )));
        }
        if kernel < stride {
            return Err(Error::InvalidArg(
                "conv_transpose1d: kernel must be >= stride".into(),
            ));
        }
        if let Some(b) = b {
            if self.value(b).numel() != c_out {
                return Err(Error::Shape(
                    "conv_transpose1d: bias length != out channels".into(),
                ));
            }
        }
        let t_out = kn::conv_transpose1d_out_len(t_in, kernel, stride, padding)
            .ok_or_else(|| Error::Shape("conv_transpose1d: output length < 1".into()))?;
        let mut out = vec![0.0f32; batch * c_out * t_out];
        kn::conv_transpose1d_fwd(
            self.value(x).data(),
            (batch, c_in, t_in),
            self.value(w).data(),
            (c_in, c_out, kernel),
            b.map(|b| self.value(b).data()),
            stride,
            padding,
            &mut out,
            t_out,
        );
        let dims = if self.value(x).rank() == 3 {
            vec![batch, c_out, t_out]
        } else {
            vec![c_out, t_out]
        };
        let needs = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            Tensor::new(dims, out)?,
            needs,
        ))
    }

    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        if kernel < 1 || stride < 1 {
            return Err(Error::InvalidArg(
                "max_pool1d: kernel and stride must be >= 1".into(),
            ));
        }
        let (batch, ch, t_in) = self.value(x).as_bct();
        if t_in < kernel {
            return Err(Error::Shape(format!(
                "max_pool1d: window {kernel} larger than input {t_in}"
            )));
        }
        let t_out = (t_in - kernel) / stride + 1;
        let mut out = vec![0.0f32; batch * ch * t_out];
        let mut argmax = vec![0u32; batch * ch * t_out];
        kn::max_pool1d_fwd(
            self.value(x).data(),
            (batch, ch, t_in),
            kernel,
            stride,
            &mut out,
            &mut argmax,
            t_out,
        );
        let mut dims = self.value(x).dims().to_vec();
        *dims.last_mut().unwrap() = t_out;
        let needs = self.needs(x);
        Ok(self.push(Op::MaxPool1d { x, argmax }, Tensor::new(dims, out)?, needs))
    }

    pub fn avg_pool1d(
        &mut self,
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        if kernel < 1 || stride < 1 {
            return Err(Error::InvalidArg(
                "avg_pool1d: kernel and stride must be >= 1".into(),
            ));
        }
        let (batch, ch, t_in) = self.value(x).as_bct();
        if t_in + 2 * padding < kernel {
            return Err(Error::Shape("avg_pool1d: window larger than input".into()));
        }
        let t_out = (t_in + 2 * padding - kernel) / stride + 1;
        let mut out = vec![0.0f32; batch * ch * t_out];
        kn::avg_pool1d_fwd(
            self.value(x).data(),
            (batch, ch, t_in),
            kernel,
            stride,
            padding,
            &mut out,
            t_out,
        );
        let mut dims = self.value(x).dims().to_vec();
        *dims.last_mut().unwrap() = t_out;
        let needs = self.needs(x);
        Ok(self.push(
            Op::AvgPool1d {
                x,
                kernel,
                stride,
                padding,
            },
            Tensor::new(dims, out)?,
            needs,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out: Vec<f32> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.value(x).dims().to_vec(), out).expect("unary shape");
        let needs = self.needs(x);
        self.push(op, t, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) || slope == 0.0 {
            return Err(Error::InvalidArg(format!(
                "leaky_relu: slope must be in (0,1), got {slope}"
            )));
        }
        Ok(self.unary(
            x,
            |v| if v >= 0.0 { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, stable_sigmoid, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh { x })
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f32::sin, Op::Sin { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f32::abs, Op::Abs { x })
    }

    pub fn add_const(&mut self, x: Var, c: f32) -> Var {
        self.unary(x, |v| v + c, Op::AddConst { x })
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn log_floor(&mut self, x: Var, floor: f32) -> Var {
        self.unary(x, |v| v.max(floor).ln(), Op::LogFloor { x, floor })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::Shape(format!(
                "elementwise op: shape mismatch {:?} vs {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            )));
        }
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.value(a).dims().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, t, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Prefix sum along the last (time) dimension.
    pub fn cumsum(&mut self, x: Var) -> Var {
        let (batch, ch, t_len) = self.value(x).as_bct();
        let data = self.value(x).data();
        let mut out = vec![0.0f32; data.len()];
        for r in 0..batch * ch {
            let mut acc = 0.0f32;
            for t in 0..t_len {
                acc += data[r * t_len + t];
                out[r * t_len + t] = acc;
            }
        }
        let t = Tensor::new(self.value(x).dims().to_vec(), out).expect("cumsum shape");
        let needs = self.needs(x);
        self.push(Op::Cumsum { x }, t, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let needs = self.needs(x);
        self.push(Op::Sum { x }, Tensor::scalar(s as f32), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let needs = self.needs(x);
        self.push(Op::Mean { x }, Tensor::scalar((s / n as f64) as f32), needs)
    }

    /// Row-major matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rank() != 2 || bt.rank() != 2 || at.dims()[1] != bt.dims()[0] {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {:?} x {:?}",
                at.dims(),
                bt.dims()
            )));
        }
        let (m, k, n) = (at.dims()[0], at.dims()[1], bt.dims()[1]);
        let mut out = vec![0.0f32; m * n];
        kn::matmul(at.data(), bt.data(), (m, k, n), &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, t, needs))
    }

    /// Elementwise `sqrt(re^2 + im^2)`.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        self.binary(re, im, |r, i| (r * r + i * i).sqrt(), Op::Magnitude { re, im })
    }

    /// Slice a padded-to-hop signal into overlapping frames of `window`
    /// samples every `hop` samples, reflect-padded and centred so frame `l`
    /// is centred on sample `l*hop`. Output is `(T/hop, window)`.
    pub fn frames(&mut self, x: Var, window: usize, hop: usize) -> Result<Var> {
        let (batch, ch, t_len) = self.value(x).as_bct();
        if batch != 1 || ch != 1 {
            return Err(Error::Shape("frames: expected a mono signal".into()));
        }
        if t_len % hop != 0 {
            return Err(Error::Shape(format!(
                "frames: length {t_len} is not a multiple of hop {hop}"
            )));
        }
        let n_frames = t_len / hop;
        let pad = window / 2;
        let data = self.value(x).data();
        let mut out = vec![0.0f32; n_frames * window];
        for l in 0..n_frames {
            for j in 0..window {
                let pos = (l * hop + j) as isize - pad as isize;
                out[l * window + j] = data[kn::reflect_index(pos, t_len)];
            }
        }
        let t = Tensor::new(vec![n_frames, window], out)?;
        let needs = self.needs(x);
        Ok(self.push(Op::Frames { x, window, hop }, t, needs))
    }

    /// Concatenate along the channel dimension; batch and time must match.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArg("concat_channels: no inputs".into()));
        }
        let (b0, _, t0) = self.value(parts[0]).as_bct();
        let mut total_c = 0;
        for &p in parts {
            let (b, c, t) = self.value(p).as_bct();
            if b != b0 || t != t0 {
                return Err(Error::Shape("concat_channels: batch/time mismatch".into()));
            }
            total_c += c;
        }
        let mut out = vec![0.0f32; b0 * total_c * t0];
        for bi in 0..b0 {
            let mut c_off = 0;
            for &p in parts {
                let (_, c, _) = self.value(p).as_bct();
                let src = self.value(p).data();
                let dst = &mut out[(bi * total_c + c_off) * t0..][..c * t0];
                dst.copy_from_slice(&src[bi * c * t0..][..c * t0]);
                c_off += c;
            }
        }
        let dims = if self.value(parts[0]).rank() == 3 {
            vec![b0, total_c, t0]
        } else {
            vec![total_c, t0]
        };
        let t = Tensor::new(dims, out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
            t,
            needs,
        ))
    }

    /// Reshape a mono `(1, 1, T)` signal into a `(period, 1, rows)` batch:
    /// column `c` of the `(rows, period)` view becomes batch entry `c`.
    /// `T` is zero-padded up to a multiple of `period`.
    pub fn fold_periods(&mut self, x: Var, period: usize) -> Result<Var> {
        if period < 1 {
            return Err(Error::InvalidArg("fold_periods: period must be >= 1".into()));
        }
        let (batch, ch, t_len) = self.value(x).as_bct();
        if batch != 1 || ch != 1 {
            return Err(Error::Shape("fold_periods: expected a mono signal".into()));
        }
        let rows = t_len.div_ceil(period);
        let data = self.value(x).data();
        let mut out = vec![0.0f32; period * rows];
        for r in 0..rows {
            for c in 0..period {
                let i = r * period + c;
                if i < t_len {
                    out[c * rows + r] = data[i];
                }
            }
        }
        let t = Tensor::new(vec![period, 1, rows], out)?;
        let needs = self.needs(x);
        Ok(self.push(Op::FoldPeriods { x, period }, t, needs))
    }

    /// Numerically stable mean binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        if self.value(logits).dims() != self.value(targets).dims() {
            return Err(Error::Shape("bce_with_logits: shape mismatch".into()));
        }
        let n = self.value(logits).numel();
        let mut acc = 0.0f64;
        for (&z, &y) in self
            .value(logits)
            .data()
            .iter()
            .zip(self.value(targets).data())
        {
            let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            acc += loss as f64;
        }
        let needs = self.needs(logits) || self.needs(targets);
        Ok(self.push(
            Op::BceWithLogits { logits, targets },
            Tensor::scalar((acc / n as f64) as f32),
            needs,
        ))
    }

    /// Reverse pass. Accumulates `d loss / d param` into each trainable
    /// parameter's grad slot; parameters not reachable from `loss` are
    /// untouched. Consumes the graph.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::LossNotScalar(n));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let out = &self.nodes[id].out;
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    if store.get(*pid).trainable {
                        store.accumulate_grad(*pid, &g);
                    }
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    dilation,
                    padding,
                } => {
                    let (xd, wd) = (&self.nodes[x.0].out, &self.nodes[w.0].out);
                    let (batch, c_in, t_in) = xd.as_bct();
                    let (c_out, _, kernel) = (wd.dims()[0], wd.dims()[1], wd.dims()[2]);
                    let t_out = *out.dims().last().unwrap();
                    let shapes = ((batch, c_in, t_in), (c_out, c_in, kernel));
                    if self.nodes[x.0].needs_grad {
                        let dx = grad_buf(&mut grads, *x, xd.numel());
                        kn::conv1d_bwd(
                            xd.data(),
                            shapes.0,
                            wd.data(),
                            shapes.1,
                            &g,
                            t_out,
                            *stride,
                            *dilation,
                            *padding,
                            Some(dx),
                            None,
                            None,
                        );
                    }
                    if self.nodes[w.0].needs_grad {
                        let dw = grad_buf(&mut grads, *w, wd.numel());
                        kn::conv1d_bwd(
                            xd.data(),
                            shapes.0,
                            wd.data(),
                            shapes.1,
                            &g,
                            t_out,
                            *stride,
                            *dilation,
                            *padding,
                            None,
                            Some(dw),
                            None,
                        );
                    }
                    if let Some(bv) = b {
                        if self.nodes[bv.0].needs_grad {
                            let db = grad_buf(&mut grads, *bv, c_out);
                            kn::conv1d_bwd(
                                xd.data(),
                                shapes.0,
                                wd.data(),
                                shapes.1,
                                &g,
                                t_out,
                                *stride,
                                *dilation,
                                *padding,
                                None,
                                None,
                                Some(db),
                            );
                        }
                    }
                }
                Op::ConvTranspose1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (xd, wd) = (&self.nodes[x.0].out, &self.nodes[w.0].out);
                    let (batch, c_in, t_in) = xd.as_bct();
                    let (_, c_out, kernel) = (wd.dims()[0], wd.dims()[1], wd.dims()[2]);
                    let t_out = *out.dims().last().unwrap();
                    if self.nodes[x.0].needs_grad {
                        let dx = grad_buf(&mut grads, *x, xd.numel());
                        kn::conv_transpose1d_bwd(
                            xd.data(),
                            (batch, c_in, t_in),
                            wd.data(),
                            (c_in, c_out, kernel),
                            &g,
                            t_out,
                            *stride,
                            *padding,
                            Some(dx),
                            None,
                            None,
                        );
                    }
                    if self.nodes[w.0].needs_grad {
                        let dw = grad_buf(&mut grads, *w, wd.numel());
                        kn::conv_transpose1d_bwd(
                            xd.data(),
                            (batch, c_in, t_in),
                            wd.data(),
                            (c_in, c_out, kernel),
                            &g,
                            t_out,
                            *stride,
                            *padding,
                            None,
                            Some(dw),
                            None,
                        );
                    }
                    if let Some(bv) = b {
                        if self.nodes[bv.0].needs_grad {
                            let db = grad_buf(&mut grads, *bv, c_out);
                            kn::conv_transpose1d_bwd(
                                xd.data(),
                                (batch, c_in, t_in),
                                wd.data(),
                                (c_in, c_out, kernel),
                                &g,
                                t_out,
                                *stride,
                                *padding,
                                None,
                                None,
                                Some(db),
                            );
                        }
                    }
                }
                Op::MaxPool1d { x, argmax } => {
                    if self.nodes[x.0].needs_grad {
                        let (_, _, t_in) = self.nodes[x.0].out.as_bct();
                        let t_out = *out.dims().last().unwrap();
                        let rows = out.numel() / t_out;
                        let dx = grad_buf(&mut grads, *x, self.nodes[x.0].out.numel());
                        for r in 0..rows {
                            for t in 0..t_out {
                                let src = argmax[r * t_out + t] as usize;
                                dx[r * t_in + src] += g[r * t_out + t];
                            }
                        }
                    }
                }
                Op::AvgPool1d {
                    x,
                    kernel,
                    stride,
                    padding,
                } => {
                    if self.nodes[x.0].needs_grad {
                        let (_, _, t_in) = self.nodes[x.0].out.as_bct();
                        let t_out = *out.dims().last().unwrap();
                        let rows = out.numel() / t_out;
                        let inv = 1.0 / *kernel as f32;
                        let dx = grad_buf(&mut grads, *x, self.nodes[x.0].out.numel());
                        for r in 0..rows {
                            for t in 0..t_out {
                                let gv = g[r * t_out + t] * inv;
                                let start = (t * stride) as isize - *padding as isize;
                                for j in 0..*kernel {
                                    let i = start + j as isize;
                                    if i >= 0 && (i as usize) < t_in {
                                        dx[r * t_in + i as usize] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xd = self.nodes[x.0].out.data();
                    let slope = *slope;
                    let x = *x;
                    let dx = grad_buf(&mut grads, x, xd.len());
                    for i in 0..xd.len() {
                        dx[i] += g[i] * if xd[i] >= 0.0 { 1.0 } else { slope };
                    }
                }
                Op::Relu { x } => {
                    let xd = self.nodes[x.0].out.data();
                    let dx = grad_buf(&mut grads, *x, xd.len());
                    for i in 0..xd.len() {
                        if xd[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let yd = out.data();
                    let dx = grad_buf(&mut grads, *x, yd.len());
                    for i in 0..yd.len() {
                        dx[i] += g[i] * yd[i] * (1.0 - yd[i]);
                    }
                }
                Op::Tanh { x } => {
                    let yd = out.data();
                    let dx = grad_buf(&mut grads, *x, yd.len());
                    for i in 0..yd.len() {
                        dx[i] += g[i] * (1.0 - yd[i] * yd[i]);
                    }
                }
                Op::Sin { x } => {
                    let xd = self.nodes[x.0].out.data();
                    let dx = grad_buf(&mut grads, *x, xd.len());
                    for i in 0..xd.len() {
                        dx[i] += g[i] * xd[i].cos();
                    }
                }
                Op::Abs { x } => {
                    let xd = self.nodes[x.0].out.data();
                    let dx = grad_buf(&mut grads, *x, xd.len());
                    for i in 0..xd.len() {
                        dx[i] += g[i] * if xd[i] > 0.0 { 1.0 } else if xd[i] < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.nodes[v.0].needs_grad {
                            let d = grad_buf(&mut grads, v, g.len());
                            for i in 0..g.len() {
                                d[i] += g[i];
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        let d = grad_buf(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            d[i] += g[i];
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let d = grad_buf(&mut grads, *b, g.len());
                        for i in 0..g.len() {
                            d[i] -= g[i];
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        let bd = self.nodes[b.0].out.data();
                        let da = grad_buf(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            da[i] += g[i] * bd[i];
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.nodes[a.0].out.data();
                        let db = grad_buf(&mut grads, *b, g.len());
                        for i in 0..g.len() {
                            db[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::AddConst { x } => {
                    let dx = grad_buf(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i];
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    let dx = grad_buf(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * c;
                    }
                }
                Op::Cumsum { x } => {
                    let (batch, ch, t_len) = self.nodes[x.0].out.as_bct();
                    let dx = grad_buf(&mut grads, *x, g.len());
                    for r in 0..batch * ch {
                        let mut acc = 0.0f32;
                        for t in (0..t_len).rev() {
                            acc += g[r * t_len + t];
                            dx[r * t_len + t] += acc;
                        }
                    }
                }
                Op::Sum { x } => {
                    let numel = self.nodes[x.0].out.numel();
                    let dx = grad_buf(&mut grads, *x, numel);
                    let gv = g[0];
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                }
                Op::Mean { x } => {
                    let numel = self.nodes[x.0].out.numel();
                    let dx = grad_buf(&mut grads, *x, numel);
                    let gv = g[0] / numel as f32;
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a.0].out.dims()[0], self.nodes[a.0].out.dims()[1]);
                    let n = self.nodes[b.0].out.dims()[1];
                    if self.nodes[a.0].needs_grad {
                        let bd = self.nodes[b.0].out.data();
                        let numel = self.nodes[a.0].out.numel();
                        let da = grad_buf(&mut grads, *a, numel);
                        kn::matmul_bwd_a(&g, bd, (m, k, n), da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.nodes[a.0].out.data();
                        let numel = self.nodes[b.0].out.numel();
                        let db = grad_buf(&mut grads, *b, numel);
                        kn::matmul_bwd_b(ad, &g, (m, k, n), db);
                    }
                }
                Op::Magnitude { re, im } => {
                    let yd = out.data();
                    for v in [*re, *im] {
                        if self.nodes[v.0].needs_grad {
                            let vd = self.nodes[v.0].out.data();
                            let dv = grad_buf(&mut grads, v, g.len());
                            for i in 0..g.len() {
                                dv[i] += g[i] * vd[i] / yd[i].max(1e-12);
                            }
                        }
                    }
                }
                Op::LogFloor { x, floor } => {
                    let xd = self.nodes[x.0].out.data();
                    let floor = *floor;
                    let dx = grad_buf(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if xd[i] > floor {
                            dx[i] += g[i] / xd[i];
                        }
                    }
                }
                Op::Frames { x, window, hop } => {
                    let t_len = *self.nodes[x.0].out.dims().last().unwrap();
                    let (window, hop) = (*window, *hop);
                    let n_frames = t_len / hop;
                    let pad = window / 2;
                    let dx = grad_buf(&mut grads, *x, self.nodes[x.0].out.numel());
                    for l in 0..n_frames {
                        for j in 0..window {
                            let pos = (l * hop + j) as isize - pad as isize;
                            dx[kn::reflect_index(pos, t_len)] += g[l * window + j];
                        }
                    }
                }
                Op::ConcatChannels { parts } => {
                    let (b0, total_c, t0) = out.as_bct();
                    let parts = parts.clone();
                    let mut c_off = 0;
                    for p in parts {
                        let (_, c, _) = self.nodes[p.0].out.as_bct();
                        if self.nodes[p.0].needs_grad {
                            let dp = grad_buf(&mut grads, p, self.nodes[p.0].out.numel());
                            for bi in 0..b0 {
                                let src = &g[(bi * total_c + c_off) * t0..][..c * t0];
                                let dst = &mut dp[bi * c * t0..][..c * t0];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        c_off += c;
                    }
                }
                Op::FoldPeriods { x, period } => {
                    let t_len = *self.nodes[x.0].out.dims().last().unwrap();
                    let period = *period;
                    let rows = t_len.div_ceil(period);
                    let dx = grad_buf(&mut grads, *x, t_len);
                    for r in 0..rows {
                        for c in 0..period {
                            let i = r * period + c;
                            if i < t_len {
                                dx[i] += g[c * rows + r];
                            }
                        }
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let gv = g[0] / self.nodes[logits.0].out.numel() as f32;
                    if self.nodes[logits.0].needs_grad {
                        let zd = self.nodes[logits.0].out.data();
                        let yd = self.nodes[targets.0].out.data();
                        let dz = grad_buf(&mut grads, *logits, zd.len());
                        for i in 0..zd.len() {
                            dz[i] += gv * (stable_sigmoid(zd[i]) - yd[i]);
                        }
                    }
                    if self.nodes[targets.0].needs_grad {
                        let zd = self.nodes[logits.0].out.data();
                        let dy = grad_buf(&mut grads, *targets, zd.len());
                        for i in 0..zd.len() {
                            dy[i] -= gv * zd[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn grad_buf(grads: &mut [Option<Vec<f32>>], v: Var, numel: usize) -> &mut Vec<f32> {
    grads[v.0].get_or_insert_with(|| vec![0.0; numel])
}

fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
