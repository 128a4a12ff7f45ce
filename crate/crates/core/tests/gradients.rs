mod common;

use common::{check_discriminator_loss, check_generator_loss, check_inversion_objective};

#[test]
fn discriminator_loss_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let e = check_discriminator_loss(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn generator_loss_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let e = check_generator_loss(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn inversion_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        for eta in [0.0, 0.1, 0.5, 1.0] {
            let e = check_inversion_objective(seed, eta);
            assert!(e < 1e-4, "seed {seed} eta {eta}: relative error {e}");
        }
    }
}
