//! Decoder assembly: the propagation decoder, the standard per-stage
//! self-attention baseline, a stub hierarchical encoder, prediction, and
//! checkpointing.
//!
//! Stage k of the encoder runs at 1/2^(k+1) of the input resolution; the
//! decoder consumes stages 2..4. In the propagation variant one pooled
//! cross-attention block runs at the source stage; its maps are pooled,
//! transformed per target stage and applied to value tokens only. Refined
//! features from all three stages are resized to stage-2 resolution,
//! concatenated along channels, fused by a 1x1 convolution and classified.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionMaps, PooledAttentionBlock, PooledAttentionConfig};
use crate::autograd::{ParamSet, Tape, ValueId};
use crate::cstf;
use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::{tokens_to_spatial, trunc_normal, Conv1x1};
use crate::propagation::{
    pool_attention, PropagatedAttention, PropagationConfig, PropagationHead, ValueRefineBlock,
};
use crate::tensor::{Scalar, Tensor};

pub const STAGE_CHANNELS_DEFAULT: [usize; 4] = [32, 64, 160, 256];

/// Spatial downsampling factor of stage k relative to the input.
pub fn stage_divisor(stage: usize) -> usize {
    1 << (stage + 1)
}

/// (height, width) of stage k features for an input of the given size.
pub fn stage_dims(stage: usize, input_h: usize, input_w: usize) -> (usize, usize) {
    (
        input_h / stage_divisor(stage),
        input_w / stage_divisor(stage),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Csap,
    Standard,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Csap => write!(f, "csap"),
            Variant::Standard => write!(f, "standard"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csap" => Ok(Variant::Csap),
            "standard" => Ok(Variant::Standard),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected csap or standard)"
            ))),
        }
    }
}

/// All decoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub stage_channels: [usize; 4],
    /// Projected attention dimension.
    pub d: usize,
    pub n_heads: usize,
    /// Context pool ratio at the source stage.
    pub r: usize,
    pub ffn_expansion: usize,
    /// Propagation grid size (query axis pooled to s x s).
    pub s: usize,
    pub num_classes: usize,
    pub source_stage: usize,
    pub variant: Variant,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            stage_channels: STAGE_CHANNELS_DEFAULT,
            d: 128,
            n_heads: 4,
            r: 2,
            ffn_expansion: 4,
            s: 8,
            num_classes: 4,
            source_stage: 4,
            variant: Variant::Csap,
        }
    }
}

impl DecoderConfig {
    /// Narrow configuration for 64-bit finite-difference verification at
    /// 64x64 inputs: structurally complete, small enough to probe every
    /// parameter element in seconds. r = 1 keeps the source context at
    /// 2x2 = 4 tokens so the attention maps stay non-trivial.
    pub fn tiny() -> Self {
        DecoderConfig {
            stage_channels: [4, 6, 8, 10],
            d: 32,
            n_heads: 2,
            r: 1,
            ffn_expansion: 2,
            s: 4,
            num_classes: 3,
            source_stage: 4,
            variant: Variant::Csap,
        }
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.stage_channels[stage - 1]
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            s: self.s,
            source_stage: self.source_stage,
        }
    }

    fn attention_cfg(&self, stage: usize, pool_ratio: usize) -> PooledAttentionConfig {
        PooledAttentionConfig {
            d_model: self.channels(stage),
            d: self.d,
            n_heads: self.n_heads,
            r: pool_ratio,
            ffn_expansion: self.ffn_expansion,
        }
    }

    /// Per-stage context pool ratio of the standard baseline. Ratios halve
    /// with depth so every stage pools K/V to the same token count as the
    /// stage-4 grid: 8/4/2 at defaults.
    pub fn standard_pool_ratio(&self, stage: usize) -> usize {
        self.r << (4 - stage)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide d ({})",
                self.n_heads, self.d
            )));
        }
        if self.r == 0 || self.s == 0 || self.ffn_expansion == 0 {
            return Err(Error::Config(
                "r, s and ffn_expansion must all be >= 1".into(),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage channels must be >= 1".into()));
        }
        self.propagation().validate()
    }

    /// Check the divisibility constraints for a concrete input size.
    pub fn validate_for_input(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be divisible by 32"
            )));
        }
        let (sh, sw) = stage_dims(self.source_stage, h, w);
        if sh % self.r != 0 || sw % self.r != 0 {
            return Err(Error::Config(format!(
                "pool ratio {} does not divide source stage extents {sh}x{sw}",
                self.r
            )));
        }
        if self.variant == Variant::Standard {
            for stage in 2..=4 {
                let ratio = self.standard_pool_ratio(stage);
                let (kh, kw) = stage_dims(stage, h, w);
                if kh % ratio != 0 || kw % ratio != 0 {
                    return Err(Error::Config(format!(
                        "standard pool ratio {ratio} does not divide stage-{stage} extents {kh}x{kw}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Source pooling grid (M = grid.0 * grid.1) for a concrete input size.
    pub fn source_grid(&self, h: usize, w: usize) -> (usize, usize) {
        let (sh, sw) = stage_dims(self.source_stage, h, w);
        (sh / self.r, sw / self.r)
    }
}

/// Multi-scale encoder outputs with resolution/channel bookkeeping.
#[derive(Debug, Clone)]
pub struct StageFeatures<T: Scalar> {
    /// Per stage (2, 3, 4): tokens [B, H_k*W_k, C_k] plus spatial extents.
    stages: Vec<(usize, Tensor<T>, usize, usize)>,
}

impl<T: Scalar> StageFeatures<T> {
    pub fn new(stages: Vec<(usize, Tensor<T>, usize, usize)>) -> Result<Self> {
        if stages.len() != 3 || stages[0].0 != 2 || stages[1].0 != 3 || stages[2].0 != 4 {
            return Err(Error::shape("stage features must cover stages 2, 3, 4"));
        }
        for (stage, tokens, h, w) in &stages {
            if tokens.rank() != 3 || tokens.shape()[1] != h * w {
                return Err(Error::shape(format!(
                    "stage {stage} tokens {:?} do not match grid {h}x{w}",
                    tokens.shape()
                )));
            }
        }
        for win in stages.windows(2) {
            let (_, _, h0, w0) = &win[0];
            let (_, _, h1, w1) = &win[1];
            if *h1 * 2 != *h0 || *w1 * 2 != *w0 {
                return Err(Error::shape(
                    "each stage must halve the previous stage's extents",
                ));
            }
        }
        Ok(StageFeatures { stages })
    }

    pub fn batch(&self) -> usize {
        self.stages[0].1.shape()[0]
    }

    pub fn stage(&self, stage: usize) -> (&Tensor<T>, usize, usize) {
        let (_, t, h, w) = &self.stages[stage - 2];
        (t, *h, *w)
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.stage(stage).0.shape()[2]
    }
}

/// Concatenate per-sample (batch 1) features into one batched set.
pub fn stack_features<T: Scalar>(parts: &[&StageFeatures<T>]) -> Result<StageFeatures<T>> {
    if parts.is_empty() {
        return Err(Error::Argument("cannot stack an empty feature batch".into()));
    }
    let mut stages = Vec::with_capacity(3);
    for stage in 2..=4 {
        let (first, h, w) = parts[0].stage(stage);
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            let (t, ph, pw) = p.stage(stage);
            if (ph, pw) != (h, w) || t.shape()[2] != first.shape()[2] {
                return Err(Error::shape("feature batch parts must share shapes"));
            }
            data.extend_from_slice(t.data());
        }
        let batch: usize = parts.iter().map(|p| p.stage(stage).0.shape()[0]).sum();
        stages.push((
            stage,
            Tensor::new(vec![batch, h * w, first.shape()[2]], data)?,
            h,
            w,
        ));
    }
    StageFeatures::new(stages)
}

// ── Stub encoder ──────────────────────────────────────────────────────

/// Four strided 3x3 conv + GELU blocks producing the standard stage shapes
/// (1/4, 1/8, 1/16, 1/32 of the input).
/// Deterministic from its seed, never trained.
#[derive(Debug, Clone)]
pub struct StubEncoder<T: Scalar> {
    convs: Vec<(Tensor<T>, Tensor<T>, usize)>, // weight, bias, stride
    pub stage_channels: [usize; 4],
}

impl<T: Scalar> StubEncoder<T> {
    pub fn new(stage_channels: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(4);
        let mut c_in = 3usize;
        for (i, &c_out) in stage_channels.iter().enumerate() {
            let stride = if i == 0 { 4 } else { 2 };
            // He-style scale keeps random features in a sane range
            let std = (2.0 / (9.0 * c_in as f64)).sqrt();
            let w = trunc_normal(&mut rng, vec![c_out, c_in, 3, 3], std);
            let b = Tensor::zeros(vec![c_out]).expect("bias shape");
            convs.push((w, b, stride));
            c_in = c_out;
        }
        StubEncoder {
            convs,
            stage_channels,
        }
    }

    /// image: [B, 3, H, W] with H, W divisible by 32.
    pub fn encode(&self, image: &Tensor<T>) -> Result<StageFeatures<T>> {
        if image.rank() != 4 || image.shape()[1] != 3 {
            return Err(Error::shape(format!(
                "encoder expects [B, 3, H, W], got {:?}",
                image.shape()
            )));
        }
        let (h, w) = (image.shape()[2], image.shape()[3]);
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} must be divisible by 32"
            )));
        }
        let mut x = image.clone();
        let mut stages = Vec::new();
        for (stage_idx, (wt, b, stride)) in self.convs.iter().enumerate() {
            x = kernels::gelu(&kernels::conv3x3_strided(&x, wt, b, *stride)?);
            let stage = stage_idx + 1;
            if stage >= 2 {
                let (sh, sw) = (x.shape()[2], x.shape()[3]);
                let tokens = kernels::transpose(
                    &x.reshape(vec![x.shape()[0], x.shape()[1], sh * sw])?,
                    1,
                    2,
                )?;
                stages.push((stage, tokens, sh, sw));
            }
        }
        StageFeatures::new(stages)
    }
}

// ── Propagation decoder ───────────────────────────────────────────────

/// Tape handles produced by one propagation-decoder forward pass.
pub struct CsapForward {
    /// [B, K, H/8, W/8]
    pub logits: ValueId,
    pub source_maps: ValueId,
    /// Per target stage, the propagated (renormalized) attention weights.
    pub propagated: Vec<(usize, ValueId)>,
}

pub struct CsapDecoder<T: Scalar> {
    pub cfg: DecoderConfig,
    pub input_h: usize,
    pub input_w: usize,
    params: ParamSet<T>,
    source_block: PooledAttentionBlock,
    prop: PropagationHead,
    refines: Vec<(usize, ValueRefineBlock)>,
    fusion: Conv1x1,
    classifier: Conv1x1,
}

impl<T: Scalar> CsapDecoder<T> {
    pub fn new(cfg: DecoderConfig, input_h: usize, input_w: usize, seed: u64) -> Result<Self> {
        let cfg = DecoderConfig {
            variant: Variant::Csap,
            ..cfg
        };
        cfg.validate_for_input(input_h, input_w)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        let source_block = PooledAttentionBlock::new(
            &mut params,
            &mut rng,
            "source_attn",
            cfg.attention_cfg(cfg.source_stage, cfg.r),
        )?;
        let (gh, gw) = cfg.source_grid(input_h, input_w);
        let m = gh * gw;
        let targets = cfg.propagation().target_stages();
        let prop = PropagationHead::new(&mut params, &mut rng, "propagation", cfg.s, m, &targets)?;
        let mut refines = Vec::with_capacity(targets.len());
        for &stage in &targets {
            let block = ValueRefineBlock::new(
                &mut params,
                &mut rng,
                &format!("refine{stage}"),
                cfg.channels(stage),
                cfg.d,
                cfg.n_heads,
                cfg.ffn_expansion,
            )?;
            refines.push((stage, block));
        }
        let concat_channels: usize = (2..=4).map(|k| cfg.channels(k)).sum();
        let fusion = Conv1x1::new(&mut params, &mut rng, "fusion", concat_channels, cfg.d, true)?;
        let classifier = Conv1x1::new(
            &mut params,
            &mut rng,
            "classifier",
            cfg.d,
            cfg.num_classes,
            true,
        )?;
        Ok(CsapDecoder {
            cfg,
            input_h,
            input_w,
            params,
            source_block,
            prop,
            refines,
            fusion,
            classifier,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Key-token count M the propagation projections act on.
    pub fn propagation_m(&self) -> usize {
        self.prop.m
    }

    pub fn forward(&self, tape: &mut Tape<T>, features: &StageFeatures<T>) -> Result<CsapForward> {
        self.forward_with(tape, &self.params, features)
    }

    /// Forward pass against an explicit parameter set (the finite-difference
    /// checker owns and perturbs the parameters while borrowing the model
    /// structure immutably).
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        features: &StageFeatures<T>,
    ) -> Result<CsapForward> {
        let cfg = &self.cfg;
        let (src_tokens, src_h, src_w) = features.stage(cfg.source_stage);
        let expected = cfg.source_grid(self.input_h, self.input_w);
        if (src_h / cfg.r, src_w / cfg.r) != expected {
            return Err(Error::shape(format!(
                "features were produced at a different resolution than the \
                 decoder was built for (source grid {:?}, expected {:?})",
                (src_h / cfg.r, src_w / cfg.r),
                expected
            )));
        }

        let src_in = tape.input(src_tokens.clone());
        let (src_refined, source_maps) =
            self.source_block
                .forward(tape, params, src_in, src_h, src_w)?;
        let pooled = pool_attention(tape, source_maps, src_h, src_w, cfg.s)?;

        let mut refined: Vec<(usize, ValueId, usize, usize)> = Vec::with_capacity(3);
        refined.push((cfg.source_stage, src_refined, src_h, src_w));
        let mut propagated = Vec::with_capacity(self.refines.len());
        for (stage, block) in &self.refines {
            let a = self.prop.project(tape, params, pooled, *stage)?;
            propagated.push((*stage, a));
            let (c_k, h_k, w_k) = features.stage(*stage);
            let c_in = tape.input(c_k.clone());
            let out = block.forward(tape, params, c_in, h_k, w_k, a, expected)?;
            refined.push((*stage, out, h_k, w_k));
        }
        refined.sort_by_key(|&(stage, ..)| stage);

        let logits = fuse_and_classify(
            tape,
            params,
            &refined,
            &self.fusion,
            &self.classifier,
        )?;
        Ok(CsapForward {
            logits,
            source_maps,
            propagated,
        })
    }

    /// Extract validated attention diagnostics from a completed forward.
    pub fn diagnostics(
        &self,
        tape: &Tape<T>,
        fwd: &CsapForward,
    ) -> Result<(AttentionMaps<T>, Vec<PropagatedAttention<T>>)> {
        let source = AttentionMaps::new(tape.value(fwd.source_maps).clone())?;
        let mut props = Vec::with_capacity(fwd.propagated.len());
        for &(stage, id) in &fwd.propagated {
            props.push(PropagatedAttention::new(tape.value(id).clone(), stage)?);
        }
        Ok((source, props))
    }
}

// ── Standard per-stage baseline ───────────────────────────────────────

pub struct StandardForward {
    pub logits: ValueId,
    /// Attention maps computed independently at each stage (2, 3, 4).
    pub stage_maps: Vec<(usize, ValueId)>,
}

pub struct StandardDecoder<T: Scalar> {
    pub cfg: DecoderConfig,
    params: ParamSet<T>,
    blocks: Vec<(usize, PooledAttentionBlock)>,
    fusion: Conv1x1,
    classifier: Conv1x1,
}

impl<T: Scalar> StandardDecoder<T> {
    pub fn new(cfg: DecoderConfig, seed: u64) -> Result<Self> {
        let cfg = DecoderConfig {
            variant: Variant::Standard,
            ..cfg
        };
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(3);
        for stage in 2..=4 {
            let block = PooledAttentionBlock::new(
                &mut params,
                &mut rng,
                &format!("attn{stage}"),
                cfg.attention_cfg(stage, cfg.standard_pool_ratio(stage)),
            )?;
            blocks.push((stage, block));
        }
        let concat_channels: usize = (2..=4).map(|k| cfg.channels(k)).sum();
        let fusion = Conv1x1::new(&mut params, &mut rng, "fusion", concat_channels, cfg.d, true)?;
        let classifier = Conv1x1::new(
            &mut params,
            &mut rng,
            "classifier",
            cfg.d,
            cfg.num_classes,
            true,
        )?;
        Ok(StandardDecoder {
            cfg,
            params,
            blocks,
            fusion,
            classifier,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        features: &StageFeatures<T>,
    ) -> Result<StandardForward> {
        self.forward_with(tape, &self.params, features)
    }

    /// Forward pass against an explicit parameter set.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        features: &StageFeatures<T>,
    ) -> Result<StandardForward> {
        let mut refined = Vec::with_capacity(3);
        let mut stage_maps = Vec::with_capacity(3);
        for (stage, block) in &self.blocks {
            let (c_k, h_k, w_k) = features.stage(*stage);
            let c_in = tape.input(c_k.clone());
            let (out, maps) = block.forward(tape, params, c_in, h_k, w_k)?;
            refined.push((*stage, out, h_k, w_k));
            stage_maps.push((*stage, maps));
        }
        let logits = fuse_and_classify(
            tape,
            params,
            &refined,
            &self.fusion,
            &self.classifier,
        )?;
        Ok(StandardForward { logits, stage_maps })
    }
}

/// Resize refined stages to stage-2 resolution, concatenate along channels,
/// fuse with a 1x1 conv + GELU, and classify.
fn fuse_and_classify<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamSet<T>,
    refined: &[(usize, ValueId, usize, usize)],
    fusion: &Conv1x1,
    classifier: &Conv1x1,
) -> Result<ValueId> {
    let (h2, w2) = {
        let &(_, _, h, w) = refined
            .iter()
            .find(|&&(stage, ..)| stage == 2)
            .ok_or_else(|| Error::shape("fusion requires stage-2 features"))?;
        (h, w)
    };
    let mut spatial_ids = Vec::with_capacity(refined.len());
    for &(_, tokens, h, w) in refined {
        let mut spatial = tokens_to_spatial(tape, tokens, h, w)?;
        if (h, w) != (h2, w2) {
            spatial = tape.bilinear_resize(spatial, h2, w2)?;
        }
        spatial_ids.push(spatial);
    }
    let stacked = tape.concat(&spatial_ids, 1)?;
    let fused = fusion.forward(tape, params, stacked)?;
    let act = tape.gelu(fused)?;
    classifier.forward(tape, params, act)
}

/// Either decoder variant behind one forward interface.
pub enum DecoderModel<T: Scalar> {
    Csap(CsapDecoder<T>),
    Standard(StandardDecoder<T>),
}

impl<T: Scalar> DecoderModel<T> {
    pub fn build(cfg: DecoderConfig, input_h: usize, input_w: usize, seed: u64) -> Result<Self> {
        match cfg.variant {
            Variant::Csap => Ok(DecoderModel::Csap(CsapDecoder::new(
                cfg, input_h, input_w, seed,
            )?)),
            Variant::Standard => {
                cfg.validate_for_input(input_h, input_w)?;
                Ok(DecoderModel::Standard(StandardDecoder::new(cfg, seed)?))
            }
        }
    }

    pub fn forward_logits(
        &self,
        tape: &mut Tape<T>,
        features: &StageFeatures<T>,
    ) -> Result<ValueId> {
        match self {
            DecoderModel::Csap(m) => Ok(m.forward(tape, features)?.logits),
            DecoderModel::Standard(m) => Ok(m.forward(tape, features)?.logits),
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        match self {
            DecoderModel::Csap(m) => m.params(),
            DecoderModel::Standard(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        match self {
            DecoderModel::Csap(m) => m.params_mut(),
            DecoderModel::Standard(m) => m.params_mut(),
        }
    }

    pub fn cfg(&self) -> &DecoderConfig {
        match self {
            DecoderModel::Csap(m) => &m.cfg,
            DecoderModel::Standard(m) => &m.cfg,
        }
    }
}

// ── Prediction ────────────────────────────────────────────────────────

/// Per-pixel class labels, row-major [B, H, W].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u32>,
}

/// Bilinearly upsample logits [B, K, h, w] to the target resolution and take
/// the per-pixel argmax. Ties break toward the lowest class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>, h: usize, w: usize) -> Result<LabelMap> {
    if logits.rank() != 4 {
        return Err(Error::shape(format!(
            "logits must be [B, K, h, w], got {:?}",
            logits.shape()
        )));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    let up = if (logits.shape()[2], logits.shape()[3]) == (h, w) {
        logits.clone()
    } else {
        kernels::bilinear_resize(logits, h, w)?
    };
    let hw = h * w;
    let src = up.data();
    let mut data = vec![0u32; b * hw];
    for bi in 0..b {
        for p in 0..hw {
            let mut best = 0usize;
            let mut best_v = src[bi * k * hw + p];
            for c in 1..k {
                let v = src[(bi * k + c) * hw + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            data[bi * hw + p] = best as u32;
        }
    }
    Ok(LabelMap {
        batch: b,
        height: h,
        width: w,
        data,
    })
}

// ── Checkpointing ─────────────────────────────────────────────────────

const MANIFEST_NAME: &str = "manifest.txt";

/// Write every parameter as one CSTF file plus a `manifest.txt` mapping
/// `name = file=<f> dtype=<d> shape=<e0>x<e1>...`.
pub fn save_checkpoint<T: Scalar>(dir: &Path, params: &ParamSet<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# csap checkpoint manifest v1\n");
    for (idx, (_, p)) in params.iter().enumerate() {
        let file = format!("p{idx:05}.cstf");
        cstf::write_file(&dir.join(&file), &p.value)?;
        let shape = p
            .value
            .shape()
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!(
            "{} = file={file} dtype={} shape={shape}\n",
            p.name,
            T::DTYPE
        ));
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Load a checkpoint into an existing parameter set; every parameter must be
/// present with a matching shape and dtype.
pub fn load_checkpoint<T: Scalar>(dir: &Path, params: &mut ParamSet<T>) -> Result<()> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut files = std::collections::BTreeMap::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, rest) = line.split_once(" = ").ok_or_else(|| {
            Error::Format(format!("manifest line {}: missing ' = '", lineno + 1))
        })?;
        let file = rest
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("file="))
            .ok_or_else(|| {
                Error::Format(format!("manifest line {}: missing file=", lineno + 1))
            })?;
        files.insert(name.to_string(), file.to_string());
    }
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        let file = files
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter '{name}'")))?;
        let value: Tensor<T> = cstf::read_file(&dir.join(file))?;
        params.set_value(id, value)?;
    }
    Ok(())
}
