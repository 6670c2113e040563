//! The stage-adaptive fusion model: configuration, parameters, forward
//! passes, checkpointing, and a finite-difference gradient audit.

mod checkpoint;
mod config;
mod forward;
mod gradsuite;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{
    attention_forward, bind_params, infer, positional_encoding, regression_head, rgf_forward,
    sage_forward, tcn_forward, transformer_forward, BoundParams, ForwardVars, ReliabilityWeights,
    SageOutput, TcnLayerVars, TransformerLayerVars,
};
pub use gradsuite::{
    gradient_suite, gradient_suite_scaled, GradSuiteReport, WorstCoordinate, GRAD_SUITE_CLIP_LENS,
    GRAD_SUITE_MIN_COORDS, GRAD_SUITE_STEP, GRAD_SUITE_TOL,
};
pub use params::SageParams;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Order-sensitive digest of the prediction matrix.
    fn digest(t: &Tensor) -> f64 {
        t.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ((i % 97) as f64 + 1.0))
            .sum()
    }

    #[test]
    fn fixed_seed_forward_matches_golden_digest() {
        let cfg = ModelConfig::new(12, 4);
        let params = SageParams::init(&cfg, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let xv_data: Vec<f64> = (0..20 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xa_data: Vec<f64> = (0..20 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xv = Tensor::new(vec![20, 12], xv_data).unwrap();
        let xa = Tensor::new(vec![20, 4], xa_data).unwrap();
        let out = infer(&cfg, &params, &xv, &xa).unwrap();
        let got = digest(&out.predictions);
        // Frozen reference value; any numerics or wiring change that moves
        // the forward pass shows up here.
        let golden = -1.15414652022158535e2;
        assert!(
            (got - golden).abs() < 1e-9,
            "digest drifted: got {got:.17e}, frozen {golden:.17e}"
        );
    }

    #[test]
    fn inference_is_reproducible() {
        let cfg = ModelConfig::new(12, 4);
        let params = SageParams::init(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xv_data: Vec<f64> = (0..15 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xa_data: Vec<f64> = (0..15 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xv = Tensor::new(vec![15, 12], xv_data).unwrap();
        let xa = Tensor::new(vec![15, 4], xa_data).unwrap();
        let a = infer(&cfg, &params, &xv, &xa).unwrap();
        let b = infer(&cfg, &params, &xv, &xa).unwrap();
        for (x, y) in a.predictions.data().iter().zip(b.predictions.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
