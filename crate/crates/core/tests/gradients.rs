mod common;

use common::{full_batch, gradient_check, model_fixture};
use kgdist::model::InputMode;

const H: f64 = 1e-6;
const REL: f64 = 1e-5;
// central differences of an O(1) loss carry ~1e-10 rounding noise
const ABS: f64 = 1e-8;

fn check(mode: InputMode) {
    for seed in 0..5 {
        let fx = model_fixture(seed, mode);
        assert!(fx.graph.num_entities() <= 30);
        let batch = full_batch(&fx.graph, seed);
        let (checked, failures, worst) = gradient_check(&fx, &batch, H, REL, ABS);
        assert!(checked > 0);
        assert_eq!(failures, 0, "seed {seed}: {failures}/{checked} coordinates off, worst {worst:.3e}");
    }
}

#[test]
fn analytic_gradients_match_central_differences_with_features() {
    check(InputMode::Features);
}

#[test]
fn analytic_gradients_match_central_differences_with_embeddings() {
    check(InputMode::Embedding);
}
