//! Mean intersection-over-union for label maps.

use crate::error::{Error, Result};

/// Mean IoU over the classes present in either prediction or ground truth.
///
/// Per class c: IoU_c = |pred=c AND gt=c| / |pred=c OR gt=c|. Classes absent
/// from both maps are excluded from the mean.
pub fn miou(pred: &[u32], gt: &[u32], num_classes: usize) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Argument("miou requires non-empty label maps".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::Argument(format!(
            "label maps differ in length: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut intersection = vec![0u64; num_classes];
    let mut pred_count = vec![0u64; num_classes];
    let mut gt_count = vec![0u64; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(Error::Argument(format!(
                "label out of range for {num_classes} classes"
            )));
        }
        pred_count[p] += 1;
        gt_count[g] += 1;
        if p == g {
            intersection[p] += 1;
        }
    }
    let mut total = 0.0f64;
    let mut classes = 0usize;
    for c in 0..num_classes {
        let union = pred_count[c] + gt_count[c] - intersection[c];
        if union > 0 {
            total += intersection[c] as f64 / union as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        return Err(Error::Argument("no classes present in either map".into()));
    }
    Ok(total / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = vec![0u32, 1, 2, 1, 0, 2];
        assert_eq!(miou(&gt, &gt, 3).unwrap(), 1.0);
    }

    #[test]
    fn inverted_binary_prediction_scores_zero() {
        let gt = vec![0u32, 0, 1, 1];
        let pred: Vec<u32> = gt.iter().map(|&c| 1 - c).collect();
        assert_eq!(miou(&pred, &gt, 2).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_counting_oracle() {
        // gt [[0,0],[1,1]], pred [[0,1],[1,1]]:
        // IoU_0 = 1/2, IoU_1 = 2/3, mean = 7/12
        let gt = vec![0u32, 0, 1, 1];
        let pred = vec![0u32, 1, 1, 1];
        let got = miou(&pred, &gt, 2).unwrap();
        assert!((got - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded() {
        // class 2 never appears; mean over classes 0 and 1 only
        let gt = vec![0u32, 1];
        let pred = vec![0u32, 1];
        assert_eq!(miou(&pred, &gt, 3).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_in_its_arguments() {
        let a = vec![0u32, 1, 2, 2, 1, 0, 1, 2];
        let b = vec![0u32, 2, 2, 1, 1, 0, 0, 2];
        assert_eq!(miou(&a, &b, 3).unwrap(), miou(&b, &a, 3).unwrap());
    }

    #[test]
    fn invariant_under_consistent_relabeling() {
        let a = vec![0u32, 1, 2, 2, 1, 0];
        let b = vec![0u32, 2, 2, 1, 1, 0];
        // swap classes 1 and 2 in both maps
        let swap = |v: &[u32]| -> Vec<u32> {
            v.iter()
                .map(|&c| match c {
                    1 => 2,
                    2 => 1,
                    other => other,
                })
                .collect()
        };
        assert_eq!(
            miou(&a, &b, 3).unwrap(),
            miou(&swap(&a), &swap(&b), 3).unwrap()
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(miou(&[], &[], 2).is_err());
        assert!(miou(&[0], &[0, 1], 2).is_err());
        assert!(miou(&[5], &[0], 2).is_err());
    }
}
