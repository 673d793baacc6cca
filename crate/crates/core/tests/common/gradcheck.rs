//! Small randomized nets and their finite-difference checks.

use super::{finite_difference_check, relu_pattern, GradCheck};
use lsvos::features::augment_matrix;
use lsvos::models::{
    ae_loss, uncertainty_loss, AutoEncoder, ModelDims, SurrogateClassifier, UncertaintyHead, UncertaintyLossKind,
};
use lsvos::numerics::{DenseNet, SeededRng};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const NETS: u64 = 20;

fn small_dims() -> ModelDims {
    ModelDims {
        encoder: vec![7, 4],
        decoder_hidden: vec![6],
        head_hidden: vec![8, 5],
        classifier_hidden: vec![6],
    }
}

/// Glorot init leaves biases at zero, which parks dead rows exactly on a ReLU kink.
fn jitter_biases(net: &mut DenseNet, rng: &mut SeededRng) {
    for layer in net.layers_mut() {
        layer
            .bias_mut()
            .mapv_inplace(|_| 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
}

pub fn normal(rng: &mut SeededRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn check_auto_encoder(seed: u64) -> GradCheck {
    let mut rng = SeededRng::new(seed);
    let (d, k) = (5, 3);
    let fresh = AutoEncoder::new(d, k, &small_dims(), &mut rng).unwrap();
    let (mut enc, mut dec) = (fresh.encoder().clone(), fresh.decoder().clone());
    jitter_biases(&mut enc, &mut rng);
    jitter_biases(&mut dec, &mut rng);
    let ae = AutoEncoder::from_parts(enc, dec, d, k, 0).unwrap();
    let u = normal(&mut rng, 6, d);
    let classes: Vec<usize> = (0..6).map(|i| i % k).collect();
    let x = augment_matrix(&u, &classes, k).unwrap();
    let (_, g) = ae.loss_and_grads(x.view()).unwrap();
    let rebuild = |nets: &[DenseNet]| AutoEncoder::from_parts(nets[0].clone(), nets[1].clone(), d, k, 0).unwrap();
    finite_difference_check(
        &[ae.encoder().clone(), ae.decoder().clone()],
        &[g.encoder, g.decoder],
        STEP,
        |nets| ae_loss(&rebuild(nets), x.view()).unwrap(),
        |nets| {
            let (mut p, z) = relu_pattern(&nets[0], x.view());
            p.extend(relu_pattern(&nets[1], z.view()).0);
            p
        },
    )
}

pub fn check_uncertainty(seed: u64, kind: UncertaintyLossKind) -> GradCheck {
    let mut rng = SeededRng::new(seed);
    let d = 4;
    let mut net = UncertaintyHead::new(d, &small_dims(), &mut rng).unwrap().net().clone();
    jitter_biases(&mut net, &mut rng);
    let head = UncertaintyHead::from_net(net, 0).unwrap();
    let u_id = normal(&mut rng, 5, d);
    let u_ood = normal(&mut rng, 3, d) + 1.0;
    let (_, g) = head.loss_and_grads(u_id.view(), u_ood.view(), kind).unwrap();
    let both = ndarray::concatenate![ndarray::Axis(0), u_id, u_ood];
    finite_difference_check(
        &[head.net().clone()],
        &[g],
        STEP,
        |nets| {
            let h = UncertaintyHead::from_net(nets[0].clone(), 0).unwrap();
            uncertainty_loss(&h, u_id.view(), u_ood.view(), kind).unwrap()
        },
        |nets| relu_pattern(&nets[0], both.view()).0,
    )
}

pub fn check_classifier(seed: u64) -> GradCheck {
    let mut rng = SeededRng::new(seed);
    let (d, k) = (4, 3);
    let mut net = SurrogateClassifier::new(d, k, &small_dims(), &mut rng)
        .unwrap()
        .net()
        .clone();
    jitter_biases(&mut net, &mut rng);
    let clf = SurrogateClassifier::from_net(net, 0).unwrap();
    let u = normal(&mut rng, 7, d);
    let classes: Vec<usize> = (0..7).map(|i| (i * 2) % k).collect();
    let (_, g) = clf.loss_and_grads(u.view(), &classes).unwrap();
    finite_difference_check(
        &[clf.net().clone()],
        &[g],
        STEP,
        |nets| {
            let c = SurrogateClassifier::from_net(nets[0].clone(), 0).unwrap();
            c.loss_and_grads(u.view(), &classes).unwrap().0
        },
        |nets| relu_pattern(&nets[0], u.view()).0,
    )
}

/// Asserts the tolerance and that at most 10% of coordinates sat on a kink.
pub fn assert_check(name: &str, check: GradCheck) {
    assert!(check.checked > 0);
    assert!(
        check.skipped * 10 <= check.checked + check.skipped,
        "{name}: too many kinks skipped ({check:?})"
    );
    assert!(check.max_rel_error < TOLERANCE, "{name}: {check:?}");
}
