//! Parameterized layers assembled by the decoder blocks, plus initialization.
//!
//! Init follows the usual transformer recipe: truncated normal (std 0.02)
//! for weights, zeros for biases, ones/zeros for layer norms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, ParamSet, Tape, ValueId};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Standard normal sample via Box-Muller, resampling beyond two sigma.
pub fn trunc_normal_sample(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn trunc_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(trunc_normal_sample(rng, std)))
        .expect("init tensor shape")
}

// ── Linear projection over the last axis ──────────────────────────────

/// y = x W (+ b), with x [..., d_in] and W [d_in, d_out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = ps.add(
            format!("{name}.weight"),
            trunc_normal(rng, vec![d_in, d_out], 0.02),
        )?;
        let bias = if with_bias {
            Some(ps.add(format!("{name}.bias"), Tensor::zeros(vec![d_out])?)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(ps, self.weight);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.bias {
            let bid = tape.param(ps, b);
            y = tape.add_bias(y, bid)?;
        }
        Ok(y)
    }

    pub fn param_count(d_in: usize, d_out: usize, with_bias: bool) -> u64 {
        (d_in * d_out + if with_bias { d_out } else { 0 }) as u64
    }
}

// ── Layer norm over the last axis ─────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(vec![dim], T::ONE)?)?;
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(vec![dim])?)?;
        Ok(LayerNorm {
            gamma,
            beta,
            eps: DEFAULT_LN_EPS,
            dim,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
    ) -> Result<ValueId> {
        let gamma = tape.param(ps, self.gamma);
        let beta = tape.param(ps, self.beta);
        tape.layer_norm(x, gamma, beta, self.eps)
    }

    pub fn param_count(dim: usize) -> u64 {
        2 * dim as u64
    }
}

// ── Convolutions ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1x1 {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = ps.add(
            format!("{name}.weight"),
            trunc_normal(rng, vec![c_out, c_in], 0.02),
        )?;
        let bias = if with_bias {
            Some(ps.add(format!("{name}.bias"), Tensor::zeros(vec![c_out])?)?)
        } else {
            None
        };
        Ok(Conv1x1 {
            weight,
            bias,
            c_in,
            c_out,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(ps, self.weight);
        let b = self.bias.map(|id| tape.param(ps, id));
        tape.conv1x1(x, w, b)
    }

    pub fn param_count(c_in: usize, c_out: usize, with_bias: bool) -> u64 {
        (c_in * c_out + if with_bias { c_out } else { 0 }) as u64
    }
}

#[derive(Debug, Clone)]
pub struct DwConv3x3 {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub channels: usize,
}

impl DwConv3x3 {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = ps.add(
            format!("{name}.weight"),
            trunc_normal(rng, vec![channels, 3, 3], 0.02),
        )?;
        let bias = if with_bias {
            Some(ps.add(format!("{name}.bias"), Tensor::zeros(vec![channels])?)?)
        } else {
            None
        };
        Ok(DwConv3x3 {
            weight,
            bias,
            channels,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(ps, self.weight);
        let b = self.bias.map(|id| tape.param(ps, id));
        tape.dwconv3x3(x, w, b)
    }

    pub fn param_count(channels: usize, with_bias: bool) -> u64 {
        (channels * 9 + if with_bias { channels } else { 0 }) as u64
    }
}

// ── Token/spatial layout changes ──────────────────────────────────────

/// [B, N, D] tokens -> [B, D, H, W] feature map, N = H*W.
pub fn tokens_to_spatial<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    h: usize,
    w: usize,
) -> Result<ValueId> {
    let shape = tape.value(x).shape().to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(n, h * w);
    let t = tape.transpose(x, 1, 2)?; // [B, D, N]
    tape.reshape(t, vec![b, d, h, w])
}

/// [B, D, H, W] feature map -> [B, N, D] tokens.
pub fn spatial_to_tokens<T: Scalar>(tape: &mut Tape<T>, x: ValueId) -> Result<ValueId> {
    let shape = tape.value(x).shape().to_vec();
    let (b, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let flat = tape.reshape(x, vec![b, d, h * w])?;
    tape.transpose(flat, 1, 2)
}

// ── Feed-forward network with a depthwise 3x3 in the middle ──────────

/// linear D -> eD, depthwise 3x3 on the spatial layout, GELU, linear eD -> D.
#[derive(Debug, Clone)]
pub struct MixFfn {
    pub lin1: Linear,
    pub dw: DwConv3x3,
    pub lin2: Linear,
    pub dim: usize,
    pub hidden: usize,
}

impl MixFfn {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        expansion: usize,
    ) -> Result<Self> {
        let hidden = dim * expansion;
        let lin1 = Linear::new(ps, rng, &format!("{name}.lin1"), dim, hidden, true)?;
        let dw = DwConv3x3::new(ps, rng, &format!("{name}.dw"), hidden, true)?;
        let lin2 = Linear::new(ps, rng, &format!("{name}.lin2"), hidden, dim, true)?;
        Ok(MixFfn {
            lin1,
            dw,
            lin2,
            dim,
            hidden,
        })
    }

    /// x: [B, N, D] tokens with spatial extents h x w.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
        h: usize,
        w: usize,
    ) -> Result<ValueId> {
        let up = self.lin1.forward(tape, ps, x)?;
        let spatial = tokens_to_spatial(tape, up, h, w)?;
        let conv = self.dw.forward(tape, ps, spatial)?;
        let act = tape.gelu(conv)?;
        let tokens = spatial_to_tokens(tape, act)?;
        self.lin2.forward(tape, ps, tokens)
    }

    pub fn param_count(dim: usize, expansion: usize) -> u64 {
        let hidden = dim * expansion;
        Linear::param_count(dim, hidden, true)
            + DwConv3x3::param_count(hidden, true)
            + Linear::param_count(hidden, dim, true)
    }
}
