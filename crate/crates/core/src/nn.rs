//! Thin layer wrappers: a layer owns parameter handles plus hyperparameters
//! and knows how to run itself on a graph. Weights use fan-in uniform init
//! `U(-sqrt(1/(in_ch*k)), sqrt(1/(in_ch*k)))`; biases start at zero.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Self {
        let weight = store.register_conv_weight(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel],
            in_ch * kernel,
            rng,
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
        Self {
            weight,
            bias,
            stride,
            dilation,
            padding,
        }
    }

    /// Stride-1 convolution with "same" padding (odd kernels only).
    pub fn same(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        debug_assert!(kernel % 2 == 1, "same-padding needs an odd kernel");
        let padding = dilation * (kernel - 1) / 2;
        Self::new(store, rng, name, in_ch, out_ch, kernel, 1, dilation, padding)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, Some(b), self.stride, self.dilation, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let weight = store.register_conv_weight(
            format!("{name}.weight"),
            &[in_ch, out_ch, kernel],
            in_ch * kernel,
            rng,
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.padding)
    }
}
