//! Closed-form parameter and FLOP accounting for both decoder variants.
//!
//! Convention: one multiply-accumulate counts as 2 FLOPs, stated in every
//! report header. Attention-matmul cost is the sum of the `qk_matmul`,
//! `av_matmul` and `attn_projection_matmul` categories; the propagation
//! projections are charged to the propagation variant's attention total,
//! which makes its reduction claim harder to pass, not easier.
//!
//! Matmul-equivalent categories (qk, av, projections, conv, ffn) are exact
//! integer counts of their 2-FLOP MACs. The `other` category aggregates
//! rough per-element estimates for norms, softmax, GELU, pooling, resizing
//! and residual adds; it exists for completeness and is excluded from the
//! attention-matmul comparison.

use std::collections::BTreeMap;
use std::fmt;

use crate::decoder::{stage_dims, DecoderConfig, Variant};
use crate::error::Result;

pub const FLOPS_PER_MAC: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FlopCategory {
    QkMatmul,
    AvMatmul,
    AttnProjectionMatmul,
    ValueProjection,
    Conv,
    Ffn,
    Other,
}

impl FlopCategory {
    pub fn name(self) -> &'static str {
        match self {
            FlopCategory::QkMatmul => "qk_matmul",
            FlopCategory::AvMatmul => "av_matmul",
            FlopCategory::AttnProjectionMatmul => "attn_projection_matmul",
            FlopCategory::ValueProjection => "value_projection",
            FlopCategory::Conv => "conv",
            FlopCategory::Ffn => "ffn",
            FlopCategory::Other => "other",
        }
    }
}

impl fmt::Display for FlopCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Categorized FLOP counts for one decoder variant at one input size.
#[derive(Debug, Clone)]
pub struct FlopReport {
    pub variant: Variant,
    pub input_h: usize,
    pub input_w: usize,
    pub batch: usize,
    /// Absent categories are structurally absent, not zero.
    pub categories: BTreeMap<FlopCategory, u64>,
    /// Per-stage QK^T cost; stages that bypass Q-K contribute 0.
    pub qk_by_stage: BTreeMap<usize, u64>,
}

impl FlopReport {
    pub fn category(&self, cat: FlopCategory) -> u64 {
        self.categories.get(&cat).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.categories.values().sum()
    }

    /// The decoder's attention matrix-multiplication cost.
    pub fn attention_matmul_total(&self) -> u64 {
        self.category(FlopCategory::QkMatmul)
            + self.category(FlopCategory::AvMatmul)
            + self.category(FlopCategory::AttnProjectionMatmul)
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b).max(1)
}

/// Token geometry of one stage as the cost model sees it.
#[derive(Debug, Clone, Copy)]
struct StageGeometry {
    /// Query token count N_k.
    n: usize,
    /// Pooled context token count M_k.
    m: usize,
    /// Stage channels D_k.
    channels: usize,
}

fn stage_geometry(
    cfg: &DecoderConfig,
    stage: usize,
    h: usize,
    w: usize,
    ratio: usize,
) -> StageGeometry {
    let (sh, sw) = stage_dims(stage, h, w);
    StageGeometry {
        n: sh * sw,
        m: ceil_div(sh, ratio) * ceil_div(sw, ratio),
        channels: cfg.channels(stage),
    }
}

/// Exact per-stage QK^T (equivalently AV) cost: 2 * N * M * d.
fn qk_or_av_flops(n: usize, m: usize, d: usize) -> u64 {
    FLOPS_PER_MAC * (n as u64) * (m as u64) * (d as u64)
}

fn ffn_flops(tokens: usize, channels: usize, expansion: usize) -> u64 {
    let hidden = (channels * expansion) as u64;
    let t = tokens as u64;
    let ch = channels as u64;
    FLOPS_PER_MAC * (t * ch * hidden + t * hidden * 9 + t * hidden * ch)
}

/// Rough elementwise estimate for one attention block outside its matmuls.
fn block_other_flops(geo: &StageGeometry, cfg: &DecoderConfig) -> u64 {
    let tokens = geo.n as u64;
    let ch = geo.channels as u64;
    let m = geo.m as u64;
    let heads = cfg.n_heads as u64;
    let hidden = (geo.channels * cfg.ffn_expansion) as u64;
    // two LNs over N*D, context LN over M*D, softmax over h*N*M,
    // GELUs over context and FFN hidden, pooling and residual adds
    8 * tokens * ch * 2
        + 8 * m * ch
        + 5 * heads * tokens * m
        + 15 * (m * ch + tokens * hidden)
        + tokens * ch * 3
}

/// Closed-form decoder FLOP accounting.
///
/// `h` and `w` must be divisible by 32 (the encoder contract); every count
/// scales linearly in `batch`.
pub fn count_attention_matmul_flops(
    cfg: &DecoderConfig,
    h: usize,
    w: usize,
    batch: usize,
) -> Result<FlopReport> {
    cfg.validate()?;
    let d = cfg.d as u64;
    let num_classes = cfg.num_classes as u64;
    let mut categories: BTreeMap<FlopCategory, u64> = BTreeMap::new();
    let mut qk_by_stage = BTreeMap::new();

    let (h2, w2) = stage_dims(2, h, w);
    let n2 = (h2 * w2) as u64;
    let concat_channels: u64 = (2..=4).map(|k| cfg.channels(k) as u64).sum();

    {
        let mut bump = |cat: FlopCategory, v: u64| {
            *categories.entry(cat).or_insert(0) += v;
        };

        match cfg.variant {
            Variant::Standard => {
                for stage in 2..=4 {
                    let geo = stage_geometry(cfg, stage, h, w, cfg.standard_pool_ratio(stage));
                    let qk = qk_or_av_flops(geo.n, geo.m, cfg.d);
                    qk_by_stage.insert(stage, qk);
                    bump(FlopCategory::QkMatmul, qk);
                    bump(FlopCategory::AvMatmul, qk_or_av_flops(geo.n, geo.m, cfg.d));
                    let (n, m, ch) = (geo.n as u64, geo.m as u64, geo.channels as u64);
                    // Q and O over N tokens, K and V over M tokens
                    bump(
                        FlopCategory::ValueProjection,
                        FLOPS_PER_MAC * (2 * n * ch * d + 2 * m * ch * d),
                    );
                    bump(FlopCategory::Conv, FLOPS_PER_MAC * m * ch * ch);
                    bump(
                        FlopCategory::Ffn,
                        ffn_flops(geo.n, geo.channels, cfg.ffn_expansion),
                    );
                    bump(FlopCategory::Other, block_other_flops(&geo, cfg));
                }
            }
            Variant::Csap => {
                let src = stage_geometry(cfg, cfg.source_stage, h, w, cfg.r);
                let qk = qk_or_av_flops(src.n, src.m, cfg.d);
                qk_by_stage.insert(cfg.source_stage, qk);
                bump(FlopCategory::QkMatmul, qk);
                bump(FlopCategory::AvMatmul, qk_or_av_flops(src.n, src.m, cfg.d));
                let (n, m, ch) = (src.n as u64, src.m as u64, src.channels as u64);
                bump(
                    FlopCategory::ValueProjection,
                    FLOPS_PER_MAC * (2 * n * ch * d + 2 * m * ch * d),
                );
                bump(FlopCategory::Conv, FLOPS_PER_MAC * m * ch * ch);
                bump(
                    FlopCategory::Ffn,
                    ffn_flops(src.n, src.channels, cfg.ffn_expansion),
                );
                bump(FlopCategory::Other, block_other_flops(&src, cfg));

                let s2 = (cfg.s * cfg.s) as u64;
                let heads = cfg.n_heads as u64;
                for &stage in &cfg.propagation().target_stages() {
                    qk_by_stage.insert(stage, 0);
                    // stage-specific transformation on the key axis, per head
                    bump(
                        FlopCategory::AttnProjectionMatmul,
                        FLOPS_PER_MAC * heads * s2 * m * m,
                    );
                    // propagated attention applied to pooled value tokens
                    bump(FlopCategory::AvMatmul, FLOPS_PER_MAC * s2 * m * d);
                    let geo = stage_geometry(cfg, stage, h, w, cfg.r);
                    let ch_k = geo.channels as u64;
                    let n_k = geo.n as u64;
                    // value embedding over M pooled tokens, out-proj over s^2
                    bump(
                        FlopCategory::ValueProjection,
                        FLOPS_PER_MAC * (m * ch_k * d + s2 * d * ch_k),
                    );
                    bump(
                        FlopCategory::Ffn,
                        ffn_flops(geo.n, geo.channels, cfg.ffn_expansion),
                    );
                    bump(
                        FlopCategory::Other,
                        8 * n_k * ch_k
                            + 15 * n_k * ch_k * cfg.ffn_expansion as u64
                            + n_k * ch_k * 3,
                    );
                }
            }
        }

        // shared head: fusion conv + classifier at stage-2 resolution
        bump(
            FlopCategory::Conv,
            FLOPS_PER_MAC * (n2 * concat_channels * d + n2 * d * num_classes),
        );
        // resizes to stage-2 resolution and the fusion GELU
        bump(FlopCategory::Other, 4 * n2 * concat_channels + 15 * n2 * d);
    }

    let b = batch as u64;
    for v in categories.values_mut() {
        *v *= b;
    }
    for v in qk_by_stage.values_mut() {
        *v *= b;
    }

    Ok(FlopReport {
        variant: cfg.variant,
        input_h: h,
        input_w: w,
        batch,
        categories,
        qk_by_stage,
    })
}

// ── Parameter counting ────────────────────────────────────────────────

/// Analytic per-module parameter counts. Keys are the parameter-name
/// prefixes used at model construction, so this table must equal the
/// enumerated table of a constructed model exactly.
pub fn count_params(cfg: &DecoderConfig, h: usize, w: usize) -> Result<Vec<(String, u64)>> {
    use crate::attention::PooledAttentionBlock;
    use crate::nn::Conv1x1;
    use crate::propagation::{PropagationHead, ValueRefineBlock};

    cfg.validate()?;
    let concat_channels: usize = (2..=4).map(|k| cfg.channels(k)).sum();
    let mut out = Vec::new();
    match cfg.variant {
        Variant::Csap => {
            let attn_cfg = attention_cfg_for(cfg, cfg.source_stage, cfg.r);
            out.push((
                "source_attn".to_string(),
                PooledAttentionBlock::param_count(&attn_cfg),
            ));
            let (gh, gw) = cfg.source_grid(h, w);
            out.push((
                "propagation".to_string(),
                PropagationHead::param_count(gh * gw, 2),
            ));
            for &stage in &cfg.propagation().target_stages() {
                out.push((
                    format!("refine{stage}"),
                    ValueRefineBlock::param_count(cfg.channels(stage), cfg.d, cfg.ffn_expansion),
                ));
            }
        }
        Variant::Standard => {
            for stage in 2..=4 {
                let attn_cfg = attention_cfg_for(cfg, stage, cfg.standard_pool_ratio(stage));
                out.push((
                    format!("attn{stage}"),
                    PooledAttentionBlock::param_count(&attn_cfg),
                ));
            }
        }
    }
    out.push((
        "fusion".to_string(),
        Conv1x1::param_count(concat_channels, cfg.d, true),
    ));
    out.push((
        "classifier".to_string(),
        Conv1x1::param_count(cfg.d, cfg.num_classes, true),
    ));
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn attention_cfg_for(
    cfg: &DecoderConfig,
    stage: usize,
    ratio: usize,
) -> crate::attention::PooledAttentionConfig {
    crate::attention::PooledAttentionConfig {
        d_model: cfg.channels(stage),
        d: cfg.d,
        n_heads: cfg.n_heads,
        r: ratio,
        ffn_expansion: cfg.ffn_expansion,
    }
}

/// Group a constructed model's parameters by name prefix (the module key).
pub fn enumerate_params<T: crate::tensor::Scalar>(
    params: &crate::autograd::ParamSet<T>,
) -> Vec<(String, u64)> {
    let mut by_module: BTreeMap<String, u64> = BTreeMap::new();
    for (_, p) in params.iter() {
        let module = p.name.split('.').next().unwrap_or(&p.name).to_string();
        *by_module.entry(module).or_insert(0) += p.value.len() as u64;
    }
    by_module.into_iter().collect()
}

pub fn total_params(table: &[(String, u64)]) -> u64 {
    table.iter().map(|(_, v)| v).sum()
}

// ── Variant comparison ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct VariantRow {
    pub variant: Variant,
    pub params_total: u64,
    pub flops: FlopReport,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub standard: VariantRow,
    pub csap: VariantRow,
    /// standard attention-matmul total / csap attention-matmul total
    pub ratio: f64,
}

pub fn compare_variants(cfg: &DecoderConfig, h: usize, w: usize) -> Result<ComparisonReport> {
    let std_cfg = DecoderConfig {
        variant: Variant::Standard,
        ..*cfg
    };
    let csap_cfg = DecoderConfig {
        variant: Variant::Csap,
        ..*cfg
    };
    let standard = VariantRow {
        variant: Variant::Standard,
        params_total: total_params(&count_params(&std_cfg, h, w)?),
        flops: count_attention_matmul_flops(&std_cfg, h, w, 1)?,
    };
    let csap = VariantRow {
        variant: Variant::Csap,
        params_total: total_params(&count_params(&csap_cfg, h, w)?),
        flops: count_attention_matmul_flops(&csap_cfg, h, w, 1)?,
    };
    let ratio = standard.flops.attention_matmul_total() as f64
        / csap.flops.attention_matmul_total() as f64;
    Ok(ComparisonReport {
        standard,
        csap,
        ratio,
    })
}

// ── Rendering ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Kv,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "kv" => Ok(ReportFormat::Kv),
            other => Err(crate::error::Error::Config(format!(
                "unknown format '{other}' (expected text or kv)"
            ))),
        }
    }
}

/// 176160768 -> "176,160,768"
pub fn with_separators(v: u64) -> String {
    let raw = v.to_string();
    let mut out = String::with_capacity(raw.len() + raw.len() / 3);
    for (i, ch) in raw.chars().enumerate() {
        if i > 0 && (raw.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn render_flop_report(report: &FlopReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            out.push_str(&format!(
                "FLOP report: {} decoder, input {}x{}, batch {} (1 MAC = {} FLOPs)\n",
                report.variant, report.input_h, report.input_w, report.batch, FLOPS_PER_MAC
            ));
            for (cat, v) in &report.categories {
                out.push_str(&format!(
                    "  {:<24} {:>16}\n",
                    cat.name(),
                    with_separators(*v)
                ));
            }
            for (stage, v) in &report.qk_by_stage {
                out.push_str(&format!(
                    "  {:<24} {:>16}\n",
                    format!("qk_matmul[stage{stage}]"),
                    with_separators(*v)
                ));
            }
            out.push_str(&format!(
                "  {:<24} {:>16}\n",
                "attention matmul total",
                with_separators(report.attention_matmul_total())
            ));
            out.push_str(&format!(
                "  {:<24} {:>16}\n",
                "total",
                with_separators(report.total())
            ));
        }
        ReportFormat::Kv => {
            out.push_str(&format!("variant = {}\n", report.variant));
            out.push_str(&format!("input_h = {}\n", report.input_h));
            out.push_str(&format!("input_w = {}\n", report.input_w));
            out.push_str(&format!("batch = {}\n", report.batch));
            out.push_str(&format!("flops_per_mac = {FLOPS_PER_MAC}\n"));
            for (cat, v) in &report.categories {
                out.push_str(&format!("{} = {v}\n", cat.name()));
            }
            for (stage, v) in &report.qk_by_stage {
                out.push_str(&format!("qk_matmul_stage{stage} = {v}\n"));
            }
            out.push_str(&format!(
                "attention_matmul_total = {}\n",
                report.attention_matmul_total()
            ));
            out.push_str(&format!("total = {}\n", report.total()));
        }
    }
    out
}

pub fn render_params(table: &[(String, u64)], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            out.push_str("Parameter count by module\n");
            for (module, v) in table {
                out.push_str(&format!("  {:<16} {:>12}\n", module, with_separators(*v)));
            }
            out.push_str(&format!(
                "  {:<16} {:>12}\n",
                "total",
                with_separators(total_params(table))
            ));
        }
        ReportFormat::Kv => {
            for (module, v) in table {
                out.push_str(&format!("params_{module} = {v}\n"));
            }
            out.push_str(&format!("params_total = {}\n", total_params(table)));
        }
    }
    out
}

pub fn render_comparison(report: &ComparisonReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            out.push_str(&format!(
                "Variant comparison at {}x{} (1 MAC = {} FLOPs)\n",
                report.standard.flops.input_h, report.standard.flops.input_w, FLOPS_PER_MAC
            ));
            for row in [&report.standard, &report.csap] {
                out.push_str(&format!(
                    "  {:<10} params {:>12}  attention matmul {:>16}  total {:>16}\n",
                    row.variant.to_string(),
                    with_separators(row.params_total),
                    with_separators(row.flops.attention_matmul_total()),
                    with_separators(row.flops.total()),
                ));
            }
            out.push_str(&format!(
                "  attention matmul reduction: {:.2}x\n",
                report.ratio
            ));
        }
        ReportFormat::Kv => {
            for row in [&report.standard, &report.csap] {
                out.push_str(&format!(
                    "{}_params_total = {}\n",
                    row.variant, row.params_total
                ));
                out.push_str(&format!(
                    "{}_attention_matmul_total = {}\n",
                    row.variant,
                    row.flops.attention_matmul_total()
                ));
                out.push_str(&format!("{}_total = {}\n", row.variant, row.flops.total()));
            }
            out.push_str(&format!("reduction_ratio = {:.6}\n", report.ratio));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_512_attention_matmul_is_0_18g() {
        let cfg = DecoderConfig {
            variant: Variant::Standard,
            ..DecoderConfig::default()
        };
        let report = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        // 2*(2*4096*64*128 + 2*1024*64*128 + 2*256*64*128)
        assert_eq!(report.category(FlopCategory::QkMatmul), 88_080_384);
        assert_eq!(report.category(FlopCategory::AvMatmul), 88_080_384);
        assert_eq!(report.attention_matmul_total(), 176_160_768);
        assert!(!report
            .categories
            .contains_key(&FlopCategory::AttnProjectionMatmul));
    }

    #[test]
    fn csap_512_attention_matmul_is_0_01g() {
        let cfg = DecoderConfig::default();
        let report = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        assert_eq!(report.category(FlopCategory::QkMatmul), 4_194_304);
        assert_eq!(report.category(FlopCategory::AvMatmul), 6_291_456);
        assert_eq!(
            report.category(FlopCategory::AttnProjectionMatmul),
            4_194_304
        );
        assert_eq!(report.attention_matmul_total(), 14_680_064);
        assert!(report.attention_matmul_total() <= 15_000_000);
        assert_eq!(report.qk_by_stage[&2], 0);
        assert_eq!(report.qk_by_stage[&3], 0);
    }

    #[test]
    fn reduction_ratio_is_at_least_10x() {
        let report = compare_variants(&DecoderConfig::default(), 512, 512).unwrap();
        assert!(report.ratio >= 10.0, "ratio {}", report.ratio);
        assert_eq!(report.ratio, 12.0);
        assert!(report.csap.params_total < report.standard.params_total);
    }

    #[test]
    fn ratio_of_variant_with_itself_is_one() {
        let cfg = DecoderConfig::default();
        let a = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        let b = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        let ratio = a.attention_matmul_total() as f64 / b.attention_matmul_total() as f64;
        assert_eq!(ratio, 1.0);
    }

    #[test]
    fn minimal_input_keeps_every_present_category_positive() {
        for variant in [Variant::Csap, Variant::Standard] {
            let cfg = DecoderConfig {
                variant,
                ..DecoderConfig::default()
            };
            let report = count_attention_matmul_flops(&cfg, 32, 32, 1).unwrap();
            for (cat, v) in &report.categories {
                assert!(*v > 0, "{variant} {cat} is zero at 32x32");
            }
            if variant == Variant::Csap {
                assert_eq!(report.qk_by_stage[&2], 0);
                assert_eq!(report.qk_by_stage[&3], 0);
                assert!(report.qk_by_stage[&4] > 0);
            }
        }
    }

    #[test]
    fn propagation_parameters_at_defaults() {
        let table = count_params(&DecoderConfig::default(), 512, 512).unwrap();
        let prop = table.iter().find(|(m, _)| m == "propagation").unwrap();
        assert_eq!(prop.1, 8192);
    }

    #[test]
    fn bias_free_linear_count() {
        assert_eq!(crate::nn::Linear::param_count(7, 13, false), 91);
        assert_eq!(crate::nn::Linear::param_count(7, 13, true), 104);
    }

    #[test]
    fn analytic_params_equal_enumerated_for_both_variants() {
        let cfg = DecoderConfig::default();
        let model: crate::decoder::CsapDecoder<f32> =
            crate::decoder::CsapDecoder::new(cfg, 512, 512, 0).unwrap();
        let analytic = count_params(&cfg, 512, 512).unwrap();
        let enumerated = enumerate_params(model.params());
        assert_eq!(analytic, enumerated);

        let std_cfg = DecoderConfig {
            variant: Variant::Standard,
            ..cfg
        };
        let model: crate::decoder::StandardDecoder<f32> =
            crate::decoder::StandardDecoder::new(std_cfg, 0).unwrap();
        let analytic = count_params(&std_cfg, 512, 512).unwrap();
        let enumerated = enumerate_params(model.params());
        assert_eq!(analytic, enumerated);
    }

    #[test]
    fn flops_scale_linearly_in_batch_and_tokens() {
        let cfg = DecoderConfig::default();
        let one = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        let three = count_attention_matmul_flops(&cfg, 512, 512, 3).unwrap();
        for (cat, v) in &one.categories {
            assert_eq!(three.category(*cat), v * 3);
        }

        // doubling both extents quadruples the token count and the pooled
        // count; qk scales by exactly that token-product ratio
        let std_cfg = DecoderConfig {
            variant: Variant::Standard,
            ..cfg
        };
        let small = count_attention_matmul_flops(&std_cfg, 512, 512, 1).unwrap();
        let big = count_attention_matmul_flops(&std_cfg, 1024, 1024, 1).unwrap();
        for stage in 2..=4 {
            let (sh, sw) = stage_dims(stage, 512, 512);
            let (bh, bw) = stage_dims(stage, 1024, 1024);
            let token_ratio = ((bh * bw * 256) / (sh * sw * 64)) as u64;
            assert_eq!(
                big.qk_by_stage[&stage],
                small.qk_by_stage[&stage] * token_ratio
            );
        }
    }

    #[test]
    fn separators_format_examples() {
        assert_eq!(with_separators(0), "0");
        assert_eq!(with_separators(999), "999");
        assert_eq!(with_separators(1000), "1,000");
        assert_eq!(with_separators(176160768), "176,160,768");
    }

    #[test]
    fn report_contains_mac_convention_header() {
        let cfg = DecoderConfig::default();
        let report = count_attention_matmul_flops(&cfg, 512, 512, 1).unwrap();
        let text = render_flop_report(&report, ReportFormat::Text);
        assert!(text.contains("1 MAC = 2 FLOPs"));
        assert!(text.contains("14,680,064"));
        let kv = render_flop_report(&report, ReportFormat::Kv);
        assert!(kv.contains("attention_matmul_total = 14680064"));
    }
}
