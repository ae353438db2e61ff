//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadscope::nn::{cross_entropy, Layer, LayerSpec, Model, Shape, Tensor};

pub const FD_STEP: f32 = 1e-3;

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        diff += (x as f64 - y).powi(2);
        na += (x as f64).powi(2);
        nb += y.powi(2);
    }
    let denom = na.sqrt() + nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Central difference of `f` with respect to every element of `v`.
pub fn numeric_grad(v: &mut [f32], h: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(v);
            v[i] = orig - h;
            let down = f(v);
            v[i] = orig;
            let span = ((orig + h) as f64) - ((orig - h) as f64);
            (up - down) / span
        })
        .collect()
}

/// Values in `±[0.1, 1]`, so ReLU kinks and max-pool ties sit far from
/// every finite-difference probe.
pub fn away_from_kinks(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut mags: Vec<f32> = (0..n).map(|i| 0.1 + 0.9 * (i as f32 + 0.5) / n as f32).collect();
    for i in (1..n).rev() {
        mags.swap(i, rng.random_range(0..=i));
    }
    mags.into_iter().map(|m| if rng.random_bool(0.5) { m } else { -m }).collect()
}

/// Worst relative error over the input and every parameter of one layer,
/// using the scalar loss `Σ r·y` for a fixed random `r`.
pub fn check_layer(spec: LayerSpec, input: Shape, n: usize, seed: u64) -> (f64, Vec<(String, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::bind(spec, input).expect("layer binds");
    for p in &mut layer.params {
        for v in p.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let mut x = away_from_kinks(&mut rng, n * input.len());
    if matches!(spec, LayerSpec::Softmax) {
        for v in &mut x {
            *v *= 2.0;
        }
    }
    let r: Vec<f64> = (0..n * layer.output.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r32: Vec<f32> = r.iter().map(|&v| v as f32).collect();
    let dot = |y: &[f32]| y.iter().zip(&r).map(|(&a, &b)| a as f64 * b).sum::<f64>();

    let y = layer.forward(&x, n);
    let (dx, grads) = layer.backward(&x, &y, &r32, n, true);
    let mut report = Vec::new();
    let num_dx = numeric_grad(&mut x.clone(), FD_STEP, |xv| dot(&layer.forward(xv, n)));
    report.push(("input".to_string(), rel_err(&dx, &num_dx)));
    for (k, g) in grads.iter().enumerate() {
        let mut probe = layer.clone();
        let mut p = probe.params[k].data().to_vec();
        let num = numeric_grad(&mut p, FD_STEP, |pv| {
            probe.params[k] = Tensor::from_vec(g.shape(), pv.to_vec());
            dot(&probe.forward(&x, n))
        });
        report.push((format!("param{k}"), rel_err(g.data(), &num)));
    }
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    (worst, report)
}

/// One representative configuration per layer type.
pub fn layer_cases() -> Vec<(LayerSpec, Shape)> {
    let img = Shape::Image { c: 4, h: 7, w: 6 };
    vec![
        (LayerSpec::Conv2d { kernel: 3, stride: 2, pad: 1, out_ch: 5 }, img),
        (LayerSpec::Conv2d { kernel: 1, stride: 1, pad: 0, out_ch: 3 }, img),
        (LayerSpec::DepthwiseSeparableConv { kernel: 3, stride: 2, pad: 1, out_ch: 8 }, img),
        (LayerSpec::DepthwiseSeparableConv { kernel: 3, stride: 1, pad: 0, out_ch: 6 }, img),
        (LayerSpec::Relu, img),
        (LayerSpec::MaxPool { kernel: 2, stride: 2 }, img),
        (LayerSpec::MaxPool { kernel: 3, stride: 2 }, img),
        (LayerSpec::GlobalAvgPool, img),
        (LayerSpec::Dense { out: 5 }, Shape::Vector(7)),
        (LayerSpec::Softmax, Shape::Vector(3)),
    ]
}

/// Relative error of the whole-model cross-entropy gradient.
pub fn check_model(model: &Model, n: usize, h: f32, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_kinks(&mut rng, n * model.input_len());
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let fwd = model.forward_cached(&x, n).unwrap();
    let (_, dlogits) = cross_entropy(fwd.probs(), &labels, 3).unwrap();
    let grads = model.backward(&x, &fwd, &dlogits).unwrap();
    let loss = |m: &Model, xv: &[f32]| -> f64 {
        let p = m.forward(xv, n).unwrap();
        labels.iter().enumerate().map(|(i, &l)| -(p[i * 3 + l] as f64).ln()).sum::<f64>() / n as f64
    };
    let analytic: Vec<f32> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let mut probe = model.clone();
    let mut flat = model.flat_params();
    let numeric = numeric_grad(&mut flat, h, |pv| {
        probe = Model::from_params(model.spec.clone(), model.seed, pv).unwrap();
        loss(&probe, &x)
    });
    rel_err(&analytic, &numeric)
}
