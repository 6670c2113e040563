//! Concordance correlation coefficient over masked frame sequences.

use crate::error::{Result, SageError};

/// Population moments of a masked pair of sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccComponents {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub covar: f64,
    pub n: usize,
}

/// Computes population statistics over the mask-selected entries.
pub fn ccc_components(x: &[f64], y: &[f64], mask: &[bool]) -> Result<CccComponents> {
    if x.len() != y.len() || x.len() != mask.len() {
        return Err(SageError::Shape(format!(
            "ccc: lengths differ ({} x, {} y, {} mask)",
            x.len(),
            y.len(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(SageError::Domain("ccc: mask selects no frames".into()));
    }
    let nf = n as f64;
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    for t in 0..x.len() {
        if mask[t] {
            mean_x += x[t];
            mean_y += y[t];
        }
    }
    mean_x /= nf;
    mean_y /= nf;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut covar = 0.0;
    for t in 0..x.len() {
        if mask[t] {
            let dx = x[t] - mean_x;
            let dy = y[t] - mean_y;
            var_x += dx * dx;
            var_y += dy * dy;
            covar += dx * dy;
        }
    }
    Ok(CccComponents { mean_x, mean_y, var_x: var_x / nf, var_y: var_y / nf, covar: covar / nf, n })
}

/// Concordance correlation over the masked entries:
/// `2 cov / (var_x + var_y + (mean_x - mean_y)^2)`, population statistics.
/// The `2 cov` form keeps zero-variance inputs well-defined; a zero
/// denominator means both sequences are constant and equal, which is
/// perfect concordance. The result is clamped to [-1, 1] against rounding.
pub fn ccc(x: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    let c = ccc_components(x, y, mask)?;
    let md = c.mean_x - c.mean_y;
    let denom = c.var_x + c.var_y + md * md;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * c.covar / denom).clamp(-1.0, 1.0))
}

/// `ccc` with every entry selected.
pub fn ccc_unmasked(x: &[f64], y: &[f64]) -> Result<f64> {
    ccc(x, y, &vec![true; x.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sequences_give_one() {
        let x = vec![0.1, -0.4, 0.9, 0.2];
        assert_eq!(ccc_unmasked(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn reversed_ramp_gives_minus_one() {
        // cov = -2/3, denominator = 2/3 + 2/3 + 0 = 4/3.
        let ccc = ccc_unmasked(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(ccc, -1.0);
    }

    #[test]
    fn constant_prediction_gives_zero() {
        let ccc = ccc_unmasked(&[0.5, 0.5, 0.5], &[0.1, 0.9, 0.4]).unwrap();
        assert_eq!(ccc, 0.0);
    }

    #[test]
    fn equal_constants_give_one() {
        assert_eq!(ccc_unmasked(&[0.7, 0.7], &[0.7, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_a_domain_error() {
        let err = ccc(&[1.0, 2.0], &[1.0, 2.0], &[false, false]).unwrap_err();
        assert!(matches!(err, SageError::Domain(_)));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(ccc(&[1.0], &[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn masked_ccc_equals_ccc_on_compacted_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(3..60);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            let cx: Vec<f64> =
                x.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
            let cy: Vec<f64> =
                y.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
            let masked = ccc(&x, &y, &mask).unwrap();
            let compacted = ccc_unmasked(&cx, &cy).unwrap();
            assert!(
                (masked - compacted).abs() < 1e-12,
                "masked {masked} vs compacted {compacted}"
            );
        }
    }

    #[test]
    fn shift_formula_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = rng.gen_range(-2.0..2.0);
            let y: Vec<f64> = x.iter().map(|&v| v + c).collect();
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let got = ccc_unmasked(&x, &y).unwrap();
            let want = 2.0 * var / (2.0 * var + c * c);
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let xy = ccc_unmasked(&x, &y).unwrap();
            let yx = ccc_unmasked(&y, &x).unwrap();
            prop_assert!((xy - yx).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&xy));
        }

        #[test]
        fn self_concordance_is_one(
            x in proptest::collection::vec(-10.0f64..10.0, 2..50)
        ) {
            prop_assert_eq!(ccc_unmasked(&x, &x).unwrap(), 1.0);
        }

        #[test]
        fn permutation_invariant(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 2..40),
            seed in any::<u64>(),
        ) {
            let mut pairs = pairs;
            if !pairs.iter().any(|p| p.2) {
                pairs[0].2 = true;
            }
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            let before = ccc(&x, &y, &m).unwrap();

            // Fisher-Yates with a seeded generator, applied to all three.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            let px: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let pm: Vec<bool> = idx.iter().map(|&i| m[i]).collect();
            let after = ccc(&px, &py, &pm).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }
    }
}
