//! Differentiable CCC training loss.

use crate::error::{Result, SageError};
use crate::numerics::{Graph, Var};

/// `((1 - ccc_valence) + (1 - ccc_arousal)) / 2` over the mask-selected
/// frames, built entirely on the graph so it can be differentiated.
///
/// `pred` and `target` are `[T x 2]` (valence column 0, arousal column 1).
/// Fewer than 2 valid frames leaves the variances degenerate, so such a
/// clip is rejected; callers skip it.
pub fn ccc_loss(g: &mut Graph, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
    let shape_of = |v: Var, g: &Graph| g.value(v).shape().to_vec();
    let t = mask.len();
    if shape_of(pred, g) != [t, 2] || shape_of(target, g) != [t, 2] {
        return Err(SageError::Shape(format!(
            "ccc_loss: expected [{t} x 2] pred/target, got {:?} and {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let valid: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
    if valid.len() < 2 {
        return Err(SageError::Training(format!(
            "ccc_loss: {} valid frames, need at least 2",
            valid.len()
        )));
    }

    let pred = g.select_rows(pred, valid.clone())?;
    let target = g.select_rows(target, valid)?;

    let mut column_losses = Vec::with_capacity(2);
    for col in 0..2 {
        let x = column(g, pred, col)?;
        let y = column(g, target, col)?;
        let one_minus_ccc = column_loss(g, x, y)?;
        column_losses.push(one_minus_ccc);
    }
    let total = g.add(column_losses[0], column_losses[1])?;
    g.scale_const(total, 0.5)
}

fn column(g: &mut Graph, m: Var, col: usize) -> Result<Var> {
    let n = g.value(m).rows();
    let c = g.slice_cols(m, col, 1)?;
    g.reshape(c, vec![n])
}

/// `1 - 2 cov / (var_x + var_y + (mean_x - mean_y)^2)` for one target.
fn column_loss(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let mean_x = g.mean(x)?;
    let mean_y = g.mean(y)?;
    let cx = g.sub_scalar(x, mean_x)?;
    let cy = g.sub_scalar(y, mean_y)?;
    let xx = g.mul(cx, cx)?;
    let var_x = g.mean(xx)?;
    let yy = g.mul(cy, cy)?;
    let var_y = g.mean(yy)?;
    let xy = g.mul(cx, cy)?;
    let cov = g.mean(xy)?;

    let md = g.sub(mean_x, mean_y)?;
    let md2 = g.mul(md, md)?;
    let vars = g.add(var_x, var_y)?;
    let denom = g.add(vars, md2)?;
    let num = g.scale_const(cov, 2.0)?;
    let ccc = g.div(num, denom)?;
    let neg = g.scale_const(ccc, -1.0)?;
    g.add_const(neg, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ccc::ccc;
    use crate::numerics::{grad_check, Tensor, DEFAULT_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss_value(pred: &Tensor, target: &Tensor, mask: &[bool]) -> f64 {
        let mut g = Graph::new();
        let p = g.leaf(pred.clone());
        let t = g.leaf(target.clone());
        let l = ccc_loss(&mut g, p, t, mask).unwrap();
        g.value(l).item()
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let target =
            Tensor::new(vec![4, 2], vec![0.1, -0.2, 0.4, 0.3, -0.5, 0.8, 0.9, -0.7]).unwrap();
        let loss = loss_value(&target, &target, &[true; 4]);
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn opposite_arousal_ramp_gives_loss_one() {
        // Valence matches exactly (CCC 1); arousal is the reversed ramp
        // (CCC -1); the average of 0 and 2 is 1.
        let pred = Tensor::new(vec![3, 2], vec![0.1, 0.3, 0.2, 0.2, 0.3, 0.1]).unwrap();
        let target = Tensor::new(vec![3, 2], vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3]).unwrap();
        let loss = loss_value(&pred, &target, &[true; 3]);
        assert!((loss - 1.0).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn loss_agrees_with_plain_ccc_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let t = rng.gen_range(2..50);
            let pred: Vec<f64> = (0..t * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..t * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.8)).collect();
            mask[0] = true;
            if mask.iter().filter(|&&m| m).count() < 2 {
                mask[1] = true;
            }
            let pv: Vec<f64> = (0..t).map(|i| pred[i * 2]).collect();
            let pa: Vec<f64> = (0..t).map(|i| pred[i * 2 + 1]).collect();
            let tv: Vec<f64> = (0..t).map(|i| target[i * 2]).collect();
            let ta: Vec<f64> = (0..t).map(|i| target[i * 2 + 1]).collect();
            let want = ((1.0 - ccc(&pv, &tv, &mask).unwrap())
                + (1.0 - ccc(&pa, &ta, &mask).unwrap()))
                / 2.0;
            let got = loss_value(
                &Tensor::new(vec![t, 2], pred).unwrap(),
                &Tensor::new(vec![t, 2], target).unwrap(),
                &mask,
            );
            assert!((got - want).abs() < 1e-12, "graph {got} vs direct {want}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = 40;
        let pred: Vec<f64> = (0..t * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target_data: Vec<f64> = (0..t * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut mask = vec![true; t];
        for i in [3usize, 11, 25] {
            mask[i] = false;
        }
        let pred = Tensor::new(vec![t, 2], pred).unwrap();
        let err = grad_check(
            move |g, v| {
                let tgt = g.constant(Tensor::new(vec![t, 2], target_data.clone()).unwrap());
                ccc_loss(g, v, tgt, &mask)
            },
            &pred,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "finite-difference mismatch {err}");
    }

    #[test]
    fn single_valid_frame_is_rejected() {
        let pred = Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap();
        let target = Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap();
        let mut g = Graph::new();
        let p = g.leaf(pred);
        let t = g.leaf(target);
        let err = ccc_loss(&mut g, p, t, &[false, true, false]).unwrap_err();
        assert!(matches!(err, SageError::Training(_)));
    }

    proptest! {
        #[test]
        fn loss_stays_in_range(
            rows in proptest::collection::vec(
                (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..40)
        ) {
            let t = rows.len();
            let pred: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
            let target: Vec<f64> = rows.iter().flat_map(|r| [r.2, r.3]).collect();
            let loss = loss_value(
                &Tensor::new(vec![t, 2], pred).unwrap(),
                &Tensor::new(vec![t, 2], target).unwrap(),
                &vec![true; t],
            );
            // CCC is bounded by [-1, 1], so the averaged loss sits in [0, 2].
            prop_assert!(loss.is_nan() || (-1e-9..=2.0 + 1e-9).contains(&loss));
        }
    }
}
