//! Attention propagation: the decoder's core mechanism.
//!
//! The source stage's attention maps are reorganized to expose the query
//! axis' spatial structure and adaptively pooled to a fixed s x s grid
//! ([`pool_attention`]). One learned square matrix per target stage then
//! transforms the key axis and a row softmax restores valid attention
//! distributions ([`PropagationHead`]). Target stages apply these weights to
//! value tokens only ([`ValueRefineBlock`]) — no query or key projection
//! exists anywhere in that path.

use rand_chacha::ChaCha8Rng;

use crate::attention::{merge_heads, split_heads};
use crate::autograd::{ParamId, ParamSet, Tape, ValueId};
use crate::error::{Error, Result};
use crate::nn::{
    spatial_to_tokens, tokens_to_spatial, trunc_normal_sample, LayerNorm, Linear, MixFfn,
};
use crate::tensor::{Scalar, Tensor};

/// Propagation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationConfig {
    /// Fixed spatial size the source query axis is pooled to.
    pub s: usize,
    /// Stage whose attention is computed in full and propagated.
    pub source_stage: usize,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::Config("propagation size s must be >= 1".into()));
        }
        if !(2..=4).contains(&self.source_stage) {
            return Err(Error::Config(format!(
                "source_stage must be 2, 3 or 4, got {}",
                self.source_stage
            )));
        }
        Ok(())
    }

    /// The two stages that receive propagated attention.
    pub fn target_stages(&self) -> [usize; 2] {
        match self.source_stage {
            2 => [3, 4],
            3 => [2, 4],
            _ => [2, 3],
        }
    }
}

/// Stage-specific propagated attention weights, [B, heads, s^2, M].
///
/// Rows are renormalized by the projection softmax, so the same
/// row-stochastic invariant as source maps applies.
#[derive(Debug, Clone)]
pub struct PropagatedAttention<T: Scalar> {
    weights: Tensor<T>,
    pub target_stage: usize,
}

impl<T: Scalar> PropagatedAttention<T> {
    pub fn new(weights: Tensor<T>, target_stage: usize) -> Result<Self> {
        // same validation as source attention maps
        let maps = crate::attention::AttentionMaps::new(weights)?;
        Ok(PropagatedAttention {
            weights: maps.weights().clone(),
            target_stage,
        })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }
}

/// Pool the query axis of [B, h, N', M] maps to a fixed s x s grid.
///
/// The query axis is reshaped to its H x W spatial layout and adaptively
/// average-pooled; the key axis is untouched, so pooled rows remain means of
/// row-stochastic rows (and therefore row-stochastic themselves).
pub fn pool_attention<T: Scalar>(
    tape: &mut Tape<T>,
    maps: ValueId,
    h_src: usize,
    w_src: usize,
    s: usize,
) -> Result<ValueId> {
    let shape = tape.value(maps).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(format!(
            "pool_attention expects [B, heads, N', M], got {shape:?}"
        )));
    }
    let (b, heads, n, m) = (shape[0], shape[1], shape[2], shape[3]);
    if n != h_src * w_src {
        return Err(Error::shape(format!(
            "query token count {n} does not match source grid {h_src}x{w_src}"
        )));
    }
    let keyed = tape.transpose(maps, 2, 3)?; // [B, h, M, N']
    let spatial = tape.reshape(keyed, vec![b, heads * m, h_src, w_src])?;
    let pooled = tape.adaptive_avg_pool2d(spatial, s, s)?;
    let grouped = tape.reshape(pooled, vec![b, heads, m, s * s])?;
    tape.transpose(grouped, 2, 3) // [B, h, s^2, M]
}

/// The two learned square key-axis transformations.
#[derive(Debug, Clone)]
pub struct PropagationHead {
    pub s: usize,
    /// Key-token count M the projections act on.
    pub m: usize,
    projs: Vec<(usize, ParamId)>,
}

impl PropagationHead {
    /// Projections start near "reuse the source attention": identity plus
    /// truncated-normal noise (std 0.01), no bias.
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        s: usize,
        m: usize,
        target_stages: &[usize],
    ) -> Result<Self> {
        let mut projs = Vec::with_capacity(target_stages.len());
        for &stage in target_stages {
            let init = Tensor::from_fn(vec![m, m], |i| {
                let eye = if i / m == i % m { 1.0 } else { 0.0 };
                T::from_f64(eye + trunc_normal_sample(rng, 0.01))
            })?;
            let id = ps.add(format!("{name}.to_stage{stage}"), init)?;
            projs.push((stage, id));
        }
        Ok(PropagationHead { s, m, projs })
    }

    pub fn target_stages(&self) -> Vec<usize> {
        self.projs.iter().map(|&(stage, _)| stage).collect()
    }

    pub fn proj_param(&self, target_stage: usize) -> Option<ParamId> {
        self.projs
            .iter()
            .find(|&&(stage, _)| stage == target_stage)
            .map(|&(_, id)| id)
    }

    /// weights' = row-softmax(pooled . W_k^T) for the given target stage.
    pub fn project<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        pooled: ValueId,
        target_stage: usize,
    ) -> Result<ValueId> {
        let id = self.proj_param(target_stage).ok_or_else(|| {
            Error::Config(format!("no projection stored for stage {target_stage}"))
        })?;
        let shape = tape.value(pooled).shape().to_vec();
        if shape.len() != 4 || shape[3] != self.m {
            return Err(Error::Config(format!(
                "pooled maps {shape:?} do not match stored projection size {}",
                self.m
            )));
        }
        let w = tape.param(ps, id);
        let wt = tape.transpose(w, 0, 1)?;
        let z = tape.matmul(pooled, wt)?;
        tape.softmax(z, 3)
    }

    /// 2 * M^2 at defaults: the projections carry no bias.
    pub fn param_count(m: usize, n_targets: usize) -> u64 {
        (n_targets * m * m) as u64
    }
}

/// Value-only refinement at a target stage.
///
/// Steps: adaptively pool the stage features to the source pooling grid
/// (M value tokens), project values, apply the propagated attention per
/// head, project back to stage channels, resize the s x s output to the
/// stage resolution, add residually, then a pre-norm residual FFN.
#[derive(Debug, Clone)]
pub struct ValueRefineBlock {
    pub d_model: usize,
    pub d: usize,
    pub n_heads: usize,
    value_proj: Linear,
    out_proj: Linear,
    ln_ffn: LayerNorm,
    ffn: MixFfn,
}

impl ValueRefineBlock {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        d: usize,
        n_heads: usize,
        ffn_expansion: usize,
    ) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads ({n_heads}) must divide d ({d})"
            )));
        }
        Ok(ValueRefineBlock {
            d_model,
            d,
            n_heads,
            value_proj: Linear::new(ps, rng, &format!("{name}.value_proj"), d_model, d, false)?,
            out_proj: Linear::new(ps, rng, &format!("{name}.out_proj"), d, d_model, true)?,
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d_model)?,
            ffn: MixFfn::new(ps, rng, &format!("{name}.ffn"), d_model, ffn_expansion)?,
        })
    }

    /// The attention-weighted branch before the residual add: returns
    /// [B, N_k, D_k] tokens at the stage resolution.
    ///
    /// `value_grid` is the source pooling grid (mh, mw) with mh*mw = M.
    pub fn refine_branch<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        c: ValueId,
        h_k: usize,
        w_k: usize,
        a_prop: ValueId,
        value_grid: (usize, usize),
    ) -> Result<ValueId> {
        let cs = tape.value(c).shape().to_vec();
        let asx = tape.value(a_prop).shape().to_vec();
        if cs.len() != 3 || cs[1] != h_k * w_k {
            return Err(Error::shape(format!(
                "stage features {cs:?} do not match grid {h_k}x{w_k}"
            )));
        }
        if asx.len() != 4 || asx[1] != self.n_heads {
            return Err(Error::shape(format!(
                "propagated attention {asx:?} does not match {} heads",
                self.n_heads
            )));
        }
        let (mh, mw) = value_grid;
        if asx[3] != mh * mw {
            return Err(Error::shape(format!(
                "propagated key count {} does not match value grid {mh}x{mw}",
                asx[3]
            )));
        }
        let s2 = asx[2];
        let s = (s2 as f64).sqrt().round() as usize;
        if s * s != s2 {
            return Err(Error::shape(format!(
                "propagated query count {s2} is not a square grid"
            )));
        }

        let spatial = tokens_to_spatial(tape, c, h_k, w_k)?;
        let pooled = tape.adaptive_avg_pool2d(spatial, mh, mw)?;
        let value_tokens = spatial_to_tokens(tape, pooled)?; // [B, M, D_k]
        let v = self.value_proj.forward(tape, ps, value_tokens)?;
        let vh = split_heads(tape, v, self.n_heads)?; // [B, h, M, d_h]
        let weighted = tape.matmul(a_prop, vh)?; // [B, h, s^2, d_h]
        let merged = merge_heads(tape, weighted)?; // [B, s^2, d]
        let out = self.out_proj.forward(tape, ps, merged)?; // [B, s^2, D_k]
        let out_spatial = tokens_to_spatial(tape, out, s, s)?;
        let resized = tape.bilinear_resize(out_spatial, h_k, w_k)?;
        spatial_to_tokens(tape, resized)
    }

    /// Residual refinement plus pre-norm residual FFN.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        c: ValueId,
        h_k: usize,
        w_k: usize,
        a_prop: ValueId,
        value_grid: (usize, usize),
    ) -> Result<ValueId> {
        let branch = self.refine_branch(tape, ps, c, h_k, w_k, a_prop, value_grid)?;
        let x1 = tape.add(c, branch)?;
        let normed = self.ln_ffn.forward(tape, ps, x1)?;
        let f = self.ffn.forward(tape, ps, normed, h_k, w_k)?;
        tape.add(x1, f)
    }

    /// Zero the residual-branch outputs (out-proj and final FFN linear), so
    /// forward becomes an exact identity.
    pub fn zero_residual_outputs<T: Scalar>(&self, ps: &mut ParamSet<T>) -> Result<()> {
        let w = ps.value(self.out_proj.weight).shape().to_vec();
        ps.set_value(self.out_proj.weight, Tensor::zeros(w)?)?;
        let w = ps.value(self.ffn.lin2.weight).shape().to_vec();
        ps.set_value(self.ffn.lin2.weight, Tensor::zeros(w)?)?;
        Ok(())
    }

    pub fn value_proj(&self) -> &Linear {
        &self.value_proj
    }

    pub fn out_proj(&self) -> &Linear {
        &self.out_proj
    }

    pub fn param_count(d_model: usize, d: usize, ffn_expansion: usize) -> u64 {
        Linear::param_count(d_model, d, false)        // value_proj
            + Linear::param_count(d, d_model, true)   // out_proj
            + LayerNorm::param_count(d_model)         // ln_ffn
            + MixFfn::param_count(d_model, ffn_expansion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_maps(rng: &mut ChaCha8Rng, b: usize, h: usize, n: usize, m: usize) -> Tensor<f64> {
        // softmax of random logits: strictly positive row-stochastic rows
        let logits = Tensor::from_fn(vec![b, h, n, m], |_| 2.0 * rng.random::<f64>() - 1.0).unwrap();
        crate::kernels::softmax(&logits, 3).unwrap()
    }

    #[test]
    fn pool_attention_is_identity_when_grid_matches_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let maps = random_maps(&mut rng, 2, 2, 9, 5);
        let mut tape = Tape::new();
        let id = tape.input(maps.clone());
        let pooled = pool_attention(&mut tape, id, 3, 3, 3).unwrap();
        for (a, b) in tape.value(pooled).data().iter().zip(maps.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_attention_preserves_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps = random_maps(&mut rng, 1, 2, 16, 6);
        let mut tape = Tape::new();
        let id = tape.input(maps);
        let pooled = pool_attention(&mut tape, id, 4, 4, 2).unwrap();
        for row in tape.value(pooled).data().chunks_exact(6) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_attention_16x16_to_8x8_matches_window_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, h, m) = (1usize, 2usize, 4usize);
        let maps = random_maps(&mut rng, b, h, 256, m);
        let mut tape = Tape::new();
        let id = tape.input(maps.clone());
        let pooled = pool_attention(&mut tape, id, 16, 16, 8).unwrap();
        assert_eq!(tape.value(pooled).shape(), &[b, h, 64, m]);

        // oracle: each pooled row is the mean of a 2x2 query window
        let src = maps.data();
        let got = tape.value(pooled).data();
        for hh in 0..h {
            for qi in 0..8 {
                for qj in 0..8 {
                    for key in 0..m {
                        let mut acc = 0.0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let q = (qi * 2 + di) * 16 + (qj * 2 + dj);
                                acc += src[hh * 256 * m + q * m + key];
                            }
                        }
                        let want = acc / 4.0;
                        let idx = hh * 64 * m + (qi * 8 + qj) * m + key;
                        assert!((got[idx] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_projection_gives_uniform_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 5usize;
        let mut ps: ParamSet<f64> = ParamSet::new();
        let head = PropagationHead::new(&mut ps, &mut rng, "prop", 2, m, &[2, 3]).unwrap();
        ps.set_value(
            head.proj_param(2).unwrap(),
            Tensor::zeros(vec![m, m]).unwrap(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let pooled = tape.input(random_maps(&mut rng, 1, 1, 4, m));
        let out = head.project(&mut tape, &ps, pooled, 2).unwrap();
        for &v in tape.value(out).data() {
            assert!((v - 1.0 / m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn default_projection_parameters_total_8192() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps: ParamSet<f64> = ParamSet::new();
        let _ = PropagationHead::new(&mut ps, &mut rng, "prop", 8, 64, &[2, 3]).unwrap();
        assert_eq!(ps.total_elements(), 8192);
        assert_eq!(PropagationHead::param_count(64, 2), 8192);
    }

    #[test]
    fn project_matches_row_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 4usize;
        let mut ps: ParamSet<f64> = ParamSet::new();
        let head = PropagationHead::new(&mut ps, &mut rng, "prop", 2, m, &[3]).unwrap();
        let pooled = random_maps(&mut rng, 2, 2, 4, m);
        let mut tape = Tape::new();
        let pid = tape.input(pooled.clone());
        let out = head.project(&mut tape, &ps, pid, 3).unwrap();

        let w = ps.value(head.proj_param(3).unwrap()).data().to_vec();
        let got = tape.value(out).data();
        for (row_idx, row) in pooled.data().chunks_exact(m).enumerate() {
            // z_j = sum_k row_k * W[j][k], then softmax over j
            let mut z = vec![0.0f64; m];
            for (j, zj) in z.iter_mut().enumerate() {
                for k in 0..m {
                    *zj += row[k] * w[j * m + k];
                }
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = z.iter().map(|&v| (v - max).exp()).sum();
            for j in 0..m {
                let want = (z[j] - max).exp() / denom;
                assert!((got[row_idx * m + j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn project_output_is_row_stochastic_for_arbitrary_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 6usize;
        let mut ps: ParamSet<f64> = ParamSet::new();
        let head = PropagationHead::new(&mut ps, &mut rng, "prop", 2, m, &[2]).unwrap();
        // arbitrary (not row-stochastic) input
        let raw = Tensor::from_fn(vec![1, 2, 4, m], |i| (i as f64 * 0.7).sin() * 3.0).unwrap();
        let mut tape = Tape::new();
        let pid = tape.input(raw);
        let out = head.project(&mut tape, &ps, pid, 2).unwrap();
        PropagatedAttention::new(tape.value(out).clone(), 2).unwrap();
    }

    #[test]
    fn uniform_attention_on_constant_features_gives_constant_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps: ParamSet<f64> = ParamSet::new();
        let block = ValueRefineBlock::new(&mut ps, &mut rng, "refine", 6, 4, 2, 2).unwrap();
        let (hk, wk, m) = (4usize, 4usize, 4usize);
        let c = Tensor::from_fn(vec![1, hk * wk, 6], |i| (i % 6) as f64 * 0.3).unwrap(); // constant per channel over space
        let uniform = Tensor::full(vec![1, 2, 4, m], 1.0 / m as f64).unwrap();
        let mut tape = Tape::new();
        let cid = tape.input(c);
        let aid = tape.input(uniform);
        let branch = block
            .refine_branch(&mut tape, &ps, cid, hk, wk, aid, (2, 2))
            .unwrap();
        let rows: Vec<&[f64]> = tape.value(branch).data().chunks_exact(6).collect();
        for row in &rows[1..] {
            for (a, b) in row.iter().zip(rows[0]) {
                assert!((a - b).abs() < 1e-12, "branch not spatially constant");
            }
        }
    }

    #[test]
    fn zeroed_outputs_make_refinement_an_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps: ParamSet<f64> = ParamSet::new();
        let block = ValueRefineBlock::new(&mut ps, &mut rng, "refine", 6, 4, 2, 2).unwrap();
        block.zero_residual_outputs(&mut ps).unwrap();
        let c = Tensor::from_fn(vec![2, 8, 6], |i| (i as f64 * 0.11).cos()).unwrap();
        let a = Tensor::full(vec![2, 2, 4, 4], 0.25).unwrap();
        let mut tape = Tape::new();
        let cid = tape.input(c.clone());
        let aid = tape.input(a);
        let out = block
            .forward(&mut tape, &ps, cid, 2, 4, aid, (2, 2))
            .unwrap();
        assert_eq!(tape.value(out).data(), c.data());
    }

    #[test]
    fn refine_branch_matches_explicit_loop_oracle() {
        // B=1, heads=2, s=2, M=4, D_k=6 against a direct per-head loop.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (heads, s, m, dk, d) = (2usize, 2usize, 4usize, 6usize, 4usize);
        let dh = d / heads;
        let mut ps: ParamSet<f64> = ParamSet::new();
        let block = ValueRefineBlock::new(&mut ps, &mut rng, "refine", dk, d, heads, 2).unwrap();
        // stage resolution equal to the value grid so pooling is the identity
        let (hk, wk) = (2usize, 2usize);
        let c = Tensor::from_fn(vec![1, hk * wk, dk], |_| rng.random::<f64>() - 0.5).unwrap();
        let a = random_maps(&mut rng, 1, heads, s * s, m);

        let mut tape = Tape::new();
        let cid = tape.input(c.clone());
        let aid = tape.input(a.clone());
        let got = block
            .refine_branch(&mut tape, &ps, cid, hk, wk, aid, (2, 2))
            .unwrap();

        // oracle: value tokens are exactly the stage tokens (identity pool)
        let wv = ps.value(block.value_proj.weight).data().to_vec();
        let wo = ps.value(block.out_proj.weight).data().to_vec();
        let bo = ps.value(block.out_proj.bias.unwrap()).data().to_vec();
        // v[t][j] = sum_c c[t][c] * wv[c][j]
        let mut v = vec![0.0f64; m * d];
        for t in 0..m {
            for j in 0..d {
                for cc in 0..dk {
                    v[t * d + j] += c.data()[t * dk + cc] * wv[cc * d + j];
                }
            }
        }
        // weighted[q][h*dh+c] = sum_t a[h][q][t] * v[t][h*dh+c]
        let mut weighted = vec![0.0f64; s * s * d];
        for hh in 0..heads {
            for q in 0..s * s {
                for t in 0..m {
                    let av = a.data()[hh * s * s * m + q * m + t];
                    for cdh in 0..dh {
                        weighted[q * d + hh * dh + cdh] += av * v[t * d + hh * dh + cdh];
                    }
                }
            }
        }
        // out[q][k] = sum_j weighted[q][j] * wo[j][k] + bo[k]; s == hk so the
        // bilinear resize is the identity.
        for q in 0..s * s {
            for k in 0..dk {
                let mut acc = bo[k];
                for j in 0..d {
                    acc += weighted[q * d + j] * wo[j * dk + k];
                }
                let gotv = tape.value(got).data()[q * dk + k];
                assert!((gotv - acc).abs() < 1e-9, "mismatch at q={q} k={k}");
            }
        }
    }

    #[test]
    fn refinement_path_has_no_query_or_key_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps: ParamSet<f64> = ParamSet::new();
        let _ = ValueRefineBlock::new(&mut ps, &mut rng, "refine2", 6, 4, 2, 2).unwrap();
        let _ = ValueRefineBlock::new(&mut ps, &mut rng, "refine3", 8, 4, 2, 2).unwrap();
        for (_, p) in ps.iter() {
            assert!(
                !p.name.contains("w_q") && !p.name.contains("w_k"),
                "unexpected query/key parameter {}",
                p.name
            );
        }
    }

    #[test]
    fn refine_param_count_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ps: ParamSet<f64> = ParamSet::new();
        let _ = ValueRefineBlock::new(&mut ps, &mut rng, "refine", 6, 4, 2, 3).unwrap();
        assert_eq!(
            ps.total_elements() as u64,
            ValueRefineBlock::param_count(6, 4, 3)
        );
    }

    // Solve W from A * W^T = ln(A) so that row-softmax(A * W^T) reproduces A,
    // then check value refinement at the source grid equals applying A
    // directly to the pooled values.
    #[test]
    fn source_stage_refinement_equals_direct_attention_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (s, m, d) = (2usize, 4usize, 4usize);
        let a = random_maps(&mut rng, 1, 1, s * s, m); // 4x4, strictly positive
        let a_mat: Vec<f64> = a.data().to_vec();
        let log_a: Vec<f64> = a_mat.iter().map(|&v| v.ln()).collect();
        let wt = solve_linear(&a_mat, &log_a, m); // W^T, column block per rhs

        let mut ps: ParamSet<f64> = ParamSet::new();
        let head = PropagationHead::new(&mut ps, &mut rng, "prop", s, m, &[2]).unwrap();
        // stored parameter is W; we solved for W^T
        let w: Vec<f64> = (0..m * m).map(|i| wt[(i % m) * m + i / m]).collect();
        ps.set_value(
            head.proj_param(2).unwrap(),
            Tensor::new(vec![m, m], w).unwrap(),
        )
        .unwrap();

        let block = ValueRefineBlock::new(&mut ps, &mut rng, "refine", d, d, 1, 2).unwrap();
        let mut eye = vec![0.0f64; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        ps.set_value(block.out_proj.weight, Tensor::new(vec![d, d], eye).unwrap())
            .unwrap();

        let c = Tensor::from_fn(vec![1, s * s, d], |_| rng.random::<f64>() - 0.5).unwrap();
        let mut tape = Tape::new();
        let aid = tape.input(a.clone());
        let projected = head.project(&mut tape, &ps, aid, 2).unwrap();
        // projection reproduces A
        for (p, q) in tape.value(projected).data().iter().zip(a.data()) {
            assert!((p - q).abs() < 1e-9);
        }
        let cid = tape.input(c.clone());
        let refined = block
            .refine_branch(&mut tape, &ps, cid, s, s, projected, (s, s))
            .unwrap();

        // direct application: A . (C W_v) with identity out-proj
        let wv = ps.value(block.value_proj.weight).data().to_vec();
        let mut v = vec![0.0f64; m * d];
        for t in 0..m {
            for j in 0..d {
                for cc in 0..d {
                    v[t * d + j] += c.data()[t * d + cc] * wv[cc * d + j];
                }
            }
        }
        for q in 0..s * s {
            for j in 0..d {
                let mut want = 0.0;
                for t in 0..m {
                    want += a_mat[q * m + t] * v[t * d + j];
                }
                let gotv = tape.value(refined).data()[q * d + j];
                assert!((gotv - want).abs() < 1e-5, "q={q} j={j}");
            }
        }
    }

    /// Gaussian elimination for A X = B with n x n A and n x n B.
    fn solve_linear(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut aug: Vec<f64> = vec![0.0; n * 2 * n];
        for i in 0..n {
            aug[i * 2 * n..i * 2 * n + n].copy_from_slice(&a[i * n..(i + 1) * n]);
            aug[i * 2 * n + n..(i + 1) * 2 * n].copy_from_slice(&b[i * n..(i + 1) * n]);
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| {
                    aug[x * 2 * n + col]
                        .abs()
                        .partial_cmp(&aug[y * 2 * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, pivot * 2 * n + j);
            }
            let diag = aug[col * 2 * n + col];
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= diag;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = aug[row * 2 * n + col];
                for j in 0..2 * n {
                    aug[row * 2 * n + j] -= factor * aug[col * 2 * n + j];
                }
            }
        }
        let mut x = vec![0.0; n * n];
        for i in 0..n {
            x[i * n..(i + 1) * n].copy_from_slice(&aug[i * 2 * n + n..(i + 1) * 2 * n]);
        }
        x
    }
}
