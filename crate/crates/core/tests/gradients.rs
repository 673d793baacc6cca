//! Analytic gradients of every training loss against central differences.

mod common;

use common::gradcheck::{assert_check, check_auto_encoder, check_classifier, check_uncertainty, normal, NETS};
use common::relu_pattern;
use lsvos::models::UncertaintyLossKind;
use lsvos::numerics::{DenseNet, SeededRng};
use ndarray::s;

#[test]
fn auto_encoder_gradients() {
    for seed in 0..NETS {
        assert_check(&format!("auto-encoder seed {seed}"), check_auto_encoder(seed));
    }
}

#[test]
fn uncertainty_sigmoid_gradients() {
    for seed in 0..NETS {
        assert_check(
            &format!("sigmoid seed {seed}"),
            check_uncertainty(seed, UncertaintyLossKind::Sigmoid),
        );
    }
}

#[test]
fn uncertainty_bce_gradients() {
    for seed in 0..NETS {
        assert_check(
            &format!("bce seed {seed}"),
            check_uncertainty(seed, UncertaintyLossKind::Log),
        );
    }
}

#[test]
fn classifier_gradients() {
    for seed in 0..NETS {
        assert_check(&format!("classifier seed {seed}"), check_classifier(seed));
    }
}

#[test]
fn relu_pattern_oracle_matches_forward() {
    let mut rng = SeededRng::new(1);
    let net = DenseNet::mlp(&[3, 5, 2], &mut rng).unwrap();
    let x = normal(&mut rng, 4, 3);
    let (_, out) = relu_pattern(&net, x.view());
    let fwd = net.forward(x.view()).unwrap();
    assert!((&out - &fwd).iter().all(|v| v.abs() < 1e-12));
    assert_eq!(fwd.slice(s![.., ..]).dim(), (4, 2));
}
