//! Cross-variant attention similarity.
//!
//! Quantifies how closely the propagation decoder's transferred attention
//! matches attention computed independently per stage by the standard
//! baseline: pool the standard model's per-stage maps to the propagated
//! maps' shape, then compare rows per (batch, head, query) pair. A
//! key-shuffled baseline repeats the measurement with seeded random
//! permutations of the key axis; transferred structure should beat it.
//!
//! Two row measures are reported. `mean_cosine` is the plain cosine of the
//! row vectors; because attention rows are non-negative and often close to
//! uniform, both it and its baseline sit near 1 and their difference says
//! little. `mean_centered_cosine` subtracts each row's mean first
//! (a per-row Pearson correlation), which isolates the spatial structure a
//! row carries beyond uniformity; the acceptance comparison uses it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::decoder::{CsapDecoder, StageFeatures, StandardDecoder};
use crate::error::{Error, Result};
use crate::propagation::pool_attention;
use crate::tensor::{Scalar, Tensor};

/// Number of seeded key permutations averaged into the shuffled baseline.
const BASELINE_DRAWS: usize = 8;

#[derive(Debug, Clone)]
pub struct SimilarityStats {
    /// Mean raw cosine over all compared rows, both target stages.
    pub mean_cosine: f64,
    /// Raw cosine per target stage.
    pub per_stage: Vec<(usize, f64)>,
    /// Raw cosine against key-permuted standard maps.
    pub shuffled_baseline: f64,
    /// Mean cosine of mean-centered rows (structure beyond uniformity).
    pub mean_centered_cosine: f64,
    pub per_stage_centered: Vec<(usize, f64)>,
    pub centered_baseline: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn center(row: &mut [f64]) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    for v in row.iter_mut() {
        *v -= mean;
    }
}

/// Mean raw cosine between matching rows of two [B, h, Q, M] maps.
pub fn mean_row_cosine<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    row_stat(a, b, false)
}

/// Mean cosine of mean-centered rows; constant rows contribute 0.
pub fn mean_row_cosine_centered<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    row_stat(a, b, true)
}

fn row_stat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, centered: bool) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "map shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rank() != 4 {
        return Err(Error::Argument(format!(
            "expected [B, heads, Q, M] maps, got {:?}",
            a.shape()
        )));
    }
    let m = a.shape()[3];
    let mut total = 0.0f64;
    let mut rows = 0usize;
    let mut ra = vec![0.0f64; m];
    let mut rb = vec![0.0f64; m];
    for (ca, cb) in a.data().chunks_exact(m).zip(b.data().chunks_exact(m)) {
        for i in 0..m {
            ra[i] = ca[i].to_f64();
            rb[i] = cb[i].to_f64();
        }
        if centered {
            center(&mut ra);
            center(&mut rb);
        }
        total += cosine(&ra, &rb);
        rows += 1;
    }
    Ok(total / rows as f64)
}

/// Permute the key (last) axis with a fixed seeded permutation. The
/// permutation is resampled until it is not the identity, so the baseline
/// actually shuffles; M must be at least 2.
pub fn permute_keys<T: Scalar>(maps: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let m = *maps.shape().last().unwrap();
    if m < 2 {
        return Err(Error::Argument(
            "key shuffling needs at least 2 key tokens".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..m).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    let src = maps.data();
    let mut data = Vec::with_capacity(src.len());
    for row in src.chunks_exact(m) {
        data.extend(perm.iter().map(|&p| row[p]));
    }
    Tensor::new(maps.shape().to_vec(), data)
}

/// Pool the query axis of raw [B, h, N', M] maps to an s x s grid.
pub fn pool_maps_raw<T: Scalar>(
    maps: &Tensor<T>,
    h_src: usize,
    w_src: usize,
    s: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let id = tape.input(maps.clone());
    let pooled = pool_attention(&mut tape, id, h_src, w_src, s)?;
    Ok(tape.value(pooled).clone())
}

/// Compare the propagation decoder's transferred maps against the standard
/// model's independently computed per-stage maps on one batch.
///
/// Both models must see the same features; the standard model's per-stage
/// pooled token count must match the propagated key count, which also must
/// be at least 2 for the shuffled baseline to exist.
pub fn attention_similarity(
    csap: &CsapDecoder<f32>,
    standard: &StandardDecoder<f32>,
    features: &StageFeatures<f32>,
    shuffle_seed: u64,
) -> Result<SimilarityStats> {
    let mut csap_tape = Tape::new();
    let csap_fwd = csap.forward(&mut csap_tape, features)?;
    let mut std_tape = Tape::new();
    let std_fwd = standard.forward(&mut std_tape, features)?;

    let s = csap.cfg.s;
    let mut per_stage = Vec::new();
    let mut per_stage_centered = Vec::new();
    let mut raw_sum = 0.0f64;
    let mut raw_base_sum = 0.0f64;
    let mut centered_sum = 0.0f64;
    let mut centered_base_sum = 0.0f64;
    for &(stage, prop_id) in &csap_fwd.propagated {
        let propagated = csap_tape.value(prop_id);
        let (_, maps_id) = std_fwd
            .stage_maps
            .iter()
            .find(|&&(st, _)| st == stage)
            .ok_or_else(|| Error::Argument(format!("standard model lacks stage {stage} maps")))?;
        let (_, h_k, w_k) = features.stage(stage);
        let pooled = pool_maps_raw(std_tape.value(*maps_id), h_k, w_k, s)?;
        if pooled.shape() != propagated.shape() {
            return Err(Error::Argument(format!(
                "stage {stage}: pooled standard maps {:?} do not match propagated {:?}",
                pooled.shape(),
                propagated.shape()
            )));
        }
        let raw = mean_row_cosine(propagated, &pooled)?;
        let centered = mean_row_cosine_centered(propagated, &pooled)?;
        let mut raw_base = 0.0f64;
        let mut centered_base = 0.0f64;
        for draw in 0..BASELINE_DRAWS {
            let seed = shuffle_seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(draw as u64);
            let shuffled = permute_keys(&pooled, seed)?;
            raw_base += mean_row_cosine(propagated, &shuffled)?;
            centered_base += mean_row_cosine_centered(propagated, &shuffled)?;
        }
        raw_base /= BASELINE_DRAWS as f64;
        centered_base /= BASELINE_DRAWS as f64;

        per_stage.push((stage, raw));
        per_stage_centered.push((stage, centered));
        raw_sum += raw;
        raw_base_sum += raw_base;
        centered_sum += centered;
        centered_base_sum += centered_base;
    }
    let n = per_stage.len() as f64;
    Ok(SimilarityStats {
        mean_cosine: raw_sum / n,
        per_stage,
        shuffled_baseline: raw_base_sum / n,
        mean_centered_cosine: centered_sum / n,
        per_stage_centered,
        centered_baseline: centered_base_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_maps_have_cosine_one() {
        let maps = Tensor::from_fn(vec![1, 2, 3, 4], |i| 0.1 + (i % 4) as f64).unwrap();
        let got = mean_row_cosine(&maps, &maps).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
        let centered = mean_row_cosine_centered(&maps, &maps).unwrap();
        assert!((centered - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_one_hot_rows_have_cosine_zero() {
        let a = Tensor::new(vec![1, 1, 1, 4], vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1, 1, 1, 4], vec![0.0f64, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mean_row_cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn uniform_rows_carry_no_centered_structure() {
        let a = Tensor::full(vec![1, 1, 2, 4], 0.25f64).unwrap();
        let b = Tensor::from_fn(vec![1, 1, 2, 4], |i| (i % 4) as f64 / 6.0).unwrap();
        assert_eq!(mean_row_cosine_centered(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosines_stay_within_unit_interval_for_stochastic_rows() {
        let logits_a = Tensor::from_fn(vec![2, 2, 4, 5], |i| ((i * 31 % 17) as f64).sin()).unwrap();
        let logits_b = Tensor::from_fn(vec![2, 2, 4, 5], |i| ((i * 13 % 23) as f64).cos()).unwrap();
        let a = crate::kernels::softmax(&logits_a, 3).unwrap();
        let b = crate::kernels::softmax(&logits_b, 3).unwrap();
        let raw = mean_row_cosine(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&raw));
        let centered = mean_row_cosine_centered(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&centered));
    }

    #[test]
    fn key_permutation_is_deterministic_and_not_identity() {
        let maps = Tensor::from_fn(vec![1, 1, 2, 5], |i| i as f64).unwrap();
        let a = permute_keys(&maps, 11).unwrap();
        let b = permute_keys(&maps, 11).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), maps.data());
        assert!(permute_keys(&Tensor::scalar(1.0).reshape(vec![1, 1, 1, 1]).unwrap(), 0).is_err());
    }

    #[test]
    fn mismatched_shapes_are_an_error() {
        let a = Tensor::<f64>::zeros(vec![1, 1, 2, 4]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1, 1, 2, 5]).unwrap();
        assert!(mean_row_cosine(&a, &b).is_err());
    }
}
