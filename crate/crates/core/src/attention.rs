//! Pooled cross-attention with explicit attention maps.
//!
//! Queries come from the full-resolution tokens; keys and values come from
//! context tokens produced by spatial average pooling, a 1x1 convolution,
//! layer norm and GELU. The block wraps attention and a depthwise FFN in
//! pre-norm residuals:
//!
//! ```text
//! x'  = x  + Attn(LN(x))
//! x'' = x' + FFN(LN(x'))
//! ```
//!
//! The multi-head attention weights are returned alongside the output rather
//! than discarded; propagation consumes them.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamSet, Tape, ValueId};
use crate::error::{Error, Result};
use crate::nn::{spatial_to_tokens, tokens_to_spatial, Conv1x1, LayerNorm, Linear, MixFfn};
use crate::tensor::{Scalar, Tensor};

/// Hyperparameters of one pooled cross-attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledAttentionConfig {
    /// Channel count of the residual stream (stage channels).
    pub d_model: usize,
    /// Projected attention dimension.
    pub d: usize,
    pub n_heads: usize,
    /// Spatial pool ratio for the context tokens.
    pub r: usize,
    pub ffn_expansion: usize,
}

impl PooledAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide the projected dimension d ({})",
                self.n_heads, self.d
            )));
        }
        if self.r == 0 {
            return Err(Error::Config("pool ratio r must be >= 1".into()));
        }
        if self.d_model == 0 || self.ffn_expansion == 0 {
            return Err(Error::Config(
                "d_model and ffn_expansion must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

/// Multi-head query-over-pooled-key attention weights, [B, heads, N', M].
///
/// Every row (fixed batch, head, query) is non-negative and sums to 1.
#[derive(Debug, Clone)]
pub struct AttentionMaps<T: Scalar> {
    weights: Tensor<T>,
}

impl<T: Scalar> AttentionMaps<T> {
    pub const ROW_SUM_TOL: f64 = 1e-6;

    pub fn new(weights: Tensor<T>) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::shape(format!(
                "attention maps must be [B, heads, queries, keys], got {:?}",
                weights.shape()
            )));
        }
        let m = weights.shape()[3];
        for (row_idx, row) in weights.data().chunks_exact(m).enumerate() {
            let mut sum = 0.0f64;
            for &v in row {
                if v.to_f64() < 0.0 {
                    return Err(Error::Numeric(format!(
                        "attention map row {row_idx} contains a negative weight"
                    )));
                }
                sum += v.to_f64();
            }
            if (sum - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::Numeric(format!(
                    "attention map row {row_idx} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(AttentionMaps { weights })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn batch(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_heads(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Query token count N'.
    pub fn queries(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Pooled context token count M.
    pub fn keys(&self) -> usize {
        self.weights.shape()[3]
    }
}

/// Split [B, N, d] into heads: [B, n_heads, N, d/n_heads].
pub fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: ValueId, n_heads: usize) -> Result<ValueId> {
    let shape = tape.value(x).shape().to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let split = tape.reshape(x, vec![b, n, n_heads, d / n_heads])?;
    tape.transpose(split, 1, 2)
}

/// Inverse of [`split_heads`]: [B, n_heads, N, d_h] -> [B, N, d].
pub fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: ValueId) -> Result<ValueId> {
    let shape = tape.value(x).shape().to_vec();
    let (b, h, n, dh) = (shape[0], shape[1], shape[2], shape[3]);
    let t = tape.transpose(x, 1, 2)?;
    tape.reshape(t, vec![b, n, h * dh])
}

/// Scaled dot-product attention per head.
///
/// q: [B, N', d], k/v: [B, M, d]. Returns the concatenated head outputs
/// [B, N', d] and the attention maps [B, n_heads, N', M].
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    n_heads: usize,
) -> Result<(ValueId, ValueId)> {
    let qs = tape.value(q).shape().to_vec();
    let ks = tape.value(k).shape().to_vec();
    let vs = tape.value(v).shape().to_vec();
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
        return Err(Error::shape(format!(
            "attention operands must be rank 3, got q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let d = qs[2];
    if ks[2] != d || vs[2] != d || ks[1] != vs[1] || ks[0] != qs[0] || vs[0] != qs[0] {
        return Err(Error::shape(format!(
            "inconsistent attention shapes: q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!(
            "n_heads ({n_heads}) must divide d ({d})"
        )));
    }
    let d_h = d / n_heads;

    let qh = split_heads(tape, q, n_heads)?;
    let kh = split_heads(tape, k, n_heads)?;
    let vh = split_heads(tape, v, n_heads)?;
    let kt = tape.transpose(kh, 2, 3)?;
    let scores = tape.matmul(qh, kt)?;
    let scaled = tape.scale(scores, T::from_f64(1.0 / (d_h as f64).sqrt()))?;
    let maps = tape.softmax(scaled, 3)?;
    let per_head = tape.matmul(maps, vh)?;
    let out = merge_heads(tape, per_head)?;
    Ok((out, maps))
}

/// One pooled cross-attention block with its FFN.
#[derive(Debug, Clone)]
pub struct PooledAttentionBlock {
    pub cfg: PooledAttentionConfig,
    ln_attn: LayerNorm,
    ctx_conv: Conv1x1,
    ctx_ln: LayerNorm,
    w_q: Linear,
    w_k: Linear,
    w_v: Linear,
    out_proj: Linear,
    ln_ffn: LayerNorm,
    ffn: MixFfn,
}

impl PooledAttentionBlock {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: PooledAttentionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d_model = cfg.d_model;
        Ok(PooledAttentionBlock {
            cfg,
            ln_attn: LayerNorm::new(ps, &format!("{name}.ln_attn"), d_model)?,
            ctx_conv: Conv1x1::new(ps, rng, &format!("{name}.ctx_conv"), d_model, d_model, true)?,
            ctx_ln: LayerNorm::new(ps, &format!("{name}.ctx_ln"), d_model)?,
            w_q: Linear::new(ps, rng, &format!("{name}.w_q"), d_model, cfg.d, false)?,
            w_k: Linear::new(ps, rng, &format!("{name}.w_k"), d_model, cfg.d, false)?,
            w_v: Linear::new(ps, rng, &format!("{name}.w_v"), d_model, cfg.d, false)?,
            out_proj: Linear::new(ps, rng, &format!("{name}.out_proj"), cfg.d, d_model, true)?,
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d_model)?,
            ffn: MixFfn::new(ps, rng, &format!("{name}.ffn"), d_model, cfg.ffn_expansion)?,
        })
    }

    /// Compact context tokens: average pool by `r`, 1x1 conv, LN, GELU.
    ///
    /// x: [B, N', D] tokens over an h x w grid; returns [B, M, D] with
    /// M = (h/r) * (w/r).
    pub fn pool_context<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
        h: usize,
        w: usize,
    ) -> Result<ValueId> {
        let n = tape.value(x).shape()[1];
        if n != h * w {
            return Err(Error::shape(format!(
                "token count {n} does not match grid {h}x{w}"
            )));
        }
        let spatial = tokens_to_spatial(tape, x, h, w)?;
        let pooled = tape.avg_pool2d(spatial, self.cfg.r)?;
        let conv = self.ctx_conv.forward(tape, ps, pooled)?;
        let tokens = spatial_to_tokens(tape, conv)?;
        let normed = self.ctx_ln.forward(tape, ps, tokens)?;
        tape.gelu(normed)
    }

    /// Pre-norm residual attention plus pre-norm residual FFN.
    ///
    /// Returns the refined tokens [B, N', D] and the attention maps
    /// [B, n_heads, N', M].
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: ValueId,
        h: usize,
        w: usize,
    ) -> Result<(ValueId, ValueId)> {
        let normed = self.ln_attn.forward(tape, ps, x)?;
        let q = self.w_q.forward(tape, ps, normed)?;
        let ctx = self.pool_context(tape, ps, normed, h, w)?;
        let k = self.w_k.forward(tape, ps, ctx)?;
        let v = self.w_v.forward(tape, ps, ctx)?;
        let (attn, maps) = multi_head_attention(tape, q, k, v, self.cfg.n_heads)?;
        let proj = self.out_proj.forward(tape, ps, attn)?;
        let x1 = tape.add(x, proj)?;

        let normed2 = self.ln_ffn.forward(tape, ps, x1)?;
        let f = self.ffn.forward(tape, ps, normed2, h, w)?;
        let x2 = tape.add(x1, f)?;
        Ok((x2, maps))
    }

    /// Zero the two residual-branch output projections (attention out-proj
    /// and final FFN linear), making the block an exact identity.
    pub fn zero_residual_outputs<T: Scalar>(&self, ps: &mut ParamSet<T>) -> Result<()> {
        let w = ps.value(self.out_proj.weight).shape().to_vec();
        ps.set_value(self.out_proj.weight, Tensor::zeros(w)?)?;
        let w = ps.value(self.ffn.lin2.weight).shape().to_vec();
        ps.set_value(self.ffn.lin2.weight, Tensor::zeros(w)?)?;
        Ok(())
    }

    pub fn ctx_conv(&self) -> &Conv1x1 {
        &self.ctx_conv
    }

    /// Analytic parameter count; must equal the enumerated total exactly.
    pub fn param_count(cfg: &PooledAttentionConfig) -> u64 {
        let d_model = cfg.d_model;
        LayerNorm::param_count(d_model)                        // ln_attn
            + Conv1x1::param_count(d_model, d_model, true)     // ctx_conv
            + LayerNorm::param_count(d_model)                  // ctx_ln
            + 3 * Linear::param_count(d_model, cfg.d, false)   // w_q, w_k, w_v
            + Linear::param_count(cfg.d, d_model, true)        // out_proj
            + LayerNorm::param_count(d_model)                  // ln_ffn
            + MixFfn::param_count(d_model, cfg.ffn_expansion)
    }
}
