mod common;

use common::{check_layer, FD_STEP, check_model, layer_cases};
use roadscope::nn::{LayerSpec, Model, ModelSpec};

const TOL: f64 = 1e-3;

#[test]
fn every_layer_type_matches_finite_differences() {
    for (i, (spec, shape)) in layer_cases().into_iter().enumerate() {
        for n in [1, 2] {
            let (worst, report) = check_layer(spec, shape, n, 100 + i as u64);
            assert!(worst < TOL, "{spec:?} on {shape:?} (n = {n}): {report:?}");
        }
    }
}

#[test]
fn two_layer_head_matches_finite_differences() {
    let model = Model::new(ModelSpec::embedding_head(6, 5), 3).unwrap();
    let err = check_model(&model, 4, FD_STEP, 9);
    assert!(err < TOL, "relative error {err}");
}

/// Deep composition check. Without ReLUs there are no kinks; the larger
/// step keeps f32 rounding in the 13-layer forward pass below the signal.
#[test]
fn deep_linear_stack_matches_finite_differences() {
    let mut spec = ModelSpec::tiny_road_net(16);
    spec.layers.retain(|l| !matches!(l, LayerSpec::Relu));
    let model = Model::new(spec, 5).unwrap();
    let err = check_model(&model, 2, 1e-2, 11);
    assert!(err < TOL, "relative error {err}");
}
