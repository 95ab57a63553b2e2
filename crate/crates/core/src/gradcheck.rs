//! Central finite-difference verification of tape gradients.
//!
//! Probing runs in f64 using Richardson extrapolation over two-point
//! central differences at steps e, 2e and 4e, cancelling the e^2 and e^4
//! truncation terms. A single two-point stencil is not enough here: layer
//! norm makes some loss surfaces curved enough that at eps 1e-3 its O(e^2)
//! truncation alone already exceeds the 1e-4 relative tolerance the
//! decoder checks run at. The levels extend upward from `eps` rather than
//! downward so the difference quotients stay clear of the f64 roundoff
//! floor, which matters for elements whose true gradient is near zero.

use crate::autograd::{ParamSet, Tape, ValueId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of `loss_fn` against central finite differences
/// for every element of every parameter in `params`.
///
/// `loss_fn` must be a pure function of the parameter values; it is invoked
/// once for the analytic pass and six times per probed element (two
/// evaluations at each of the three step sizes).
pub fn grad_check<F>(params: &mut ParamSet<f64>, eps: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet<f64>, &mut Tape<f64>) -> Result<ValueId>,
{
    let eval = |params: &ParamSet<f64>, loss_fn: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(params, &mut tape)?;
        let v = tape.value(loss).item()?.to_f64();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss is non-finite ({v})")));
        }
        Ok(v)
    };

    // Analytic pass.
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(params, &mut tape)?;
    let loss_value = tape.value(loss).item()?.to_f64();
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("loss is non-finite ({loss_value})")));
    }
    tape.backward(loss)?;
    tape.accumulate_param_grads(params);
    let analytic: Vec<Tensor<f64>> = params.iter().map(|(_, p)| p.grad.clone()).collect();

    // Numeric probing, one element at a time.
    let ids: Vec<_> = params.ids().collect();
    let mut entries = Vec::with_capacity(ids.len());
    for (pi, &pid) in ids.iter().enumerate() {
        let count = params.value(pid).len();
        let mut worst = 0.0f64;
        for j in 0..count {
            let orig = params.value(pid).data()[j];
            // two-point central differences at 4e, 2e, e
            let mut d = [0.0f64; 3];
            for (level, slot) in d.iter_mut().enumerate() {
                let step = eps * (4 >> level) as f64;
                params.value_data_mut(pid)[j] = orig + step;
                let plus = eval(params, &mut loss_fn)?;
                params.value_data_mut(pid)[j] = orig - step;
                let minus = eval(params, &mut loss_fn)?;
                *slot = (plus - minus) / (2.0 * step);
            }
            params.value_data_mut(pid)[j] = orig;
            // Richardson: cancel the e^2 term, then the e^4 term.
            let r1 = (4.0 * d[1] - d[0]) / 3.0;
            let r2 = (4.0 * d[2] - d[1]) / 3.0;
            let numeric = (16.0 * r2 - r1) / 15.0;
            let rel = relative_error(analytic[pi].data()[j], numeric);
            if rel > worst {
                worst = rel;
            }
        }
        entries.push(GradCheckEntry {
            name: params.name(pid).to_string(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { entries })
}

/// Finite-difference check of a full decoder at some input size.
///
/// The fixture is deterministic from `seed`: a random image through a stub
/// encoder, random stage-2-resolution labels, and the training loss
/// (cross-entropy). Every parameter element of the decoder is probed.
pub fn check_decoder(
    cfg: &crate::decoder::DecoderConfig,
    input: usize,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    use crate::decoder::{stage_dims, CsapDecoder, StandardDecoder, StubEncoder, Variant};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::from_fn(vec![1, 3, input, input], |_| rng.random::<f64>())?;
    let encoder: StubEncoder<f64> = StubEncoder::new(cfg.stage_channels, seed);
    let features = encoder.encode(&image)?;
    let (h2, w2) = stage_dims(2, input, input);
    let labels: Vec<u32> = (0..h2 * w2)
        .map(|_| rng.random_range(0..cfg.num_classes as u32))
        .collect();

    match cfg.variant {
        Variant::Csap => {
            let mut model: CsapDecoder<f64> = CsapDecoder::new(*cfg, input, input, seed)?;
            let mut params = std::mem::take(model.params_mut());
            grad_check(&mut params, eps, |ps, tape| {
                let fwd = model.forward_with(tape, ps, &features)?;
                tape.cross_entropy(fwd.logits, labels.clone())
            })
        }
        Variant::Standard => {
            cfg.validate_for_input(input, input)?;
            let mut model: StandardDecoder<f64> = StandardDecoder::new(*cfg, seed)?;
            let mut params = std::mem::take(model.params_mut());
            grad_check(&mut params, eps, |ps, tape| {
                let fwd = model.forward_with(tape, ps, &features)?;
                tape.cross_entropy(fwd.logits, labels.clone())
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels;

    #[test]
    fn linear_layer_squared_loss_is_exact() {
        // loss = sum((x W)^2) has a closed-form gradient; the checker should
        // agree to much better than 1e-6.
        let mut ps = ParamSet::new();
        let w = ps
            .add(
                "w",
                Tensor::new(vec![3, 2], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]).unwrap(),
            )
            .unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, -1.0, 0.5, -0.5, 1.5]).unwrap();
        let report = grad_check(&mut ps, 1e-4, |ps, tape| {
            let xid = tape.input(x.clone());
            let wid = tape.param(ps, w);
            let y = tape.matmul(xid, wid)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(report.all_below(1e-6), "{:?}", report);
    }

    #[test]
    fn detached_parameter_reports_exact_zero() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(2.0)).unwrap();
        let frozen = ps.add("frozen", Tensor::scalar(5.0)).unwrap();
        let report = grad_check(&mut ps, 1e-3, |ps, tape| {
            let wid = tape.param(ps, w);
            let sq = tape.mul(wid, wid)?;
            tape.sum_all(sq)
        })
        .unwrap();
        let frozen_entry = report
            .entries
            .iter()
            .find(|e| e.name == "frozen")
            .unwrap();
        assert_eq!(frozen_entry.max_rel_error, 0.0);
        assert_eq!(kernels::sum_all(ps.grad(frozen)), 0.0);
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(1.0)).unwrap();
        let err = grad_check(&mut ps, 1e-3, |ps, tape| {
            let wid = tape.param(ps, w);
            let inf = tape.input(Tensor::scalar(f64::INFINITY));
            let y = tape.mul(wid, inf)?;
            tape.sum_all(y)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
