//! Model specs, construction with shape checks, initialization, and the
//! batched forward/backward passes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{param_names, Layer, LayerSpec, Shape};
use super::tensor::Tensor;
use super::NnError;
use crate::rng;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Square RGB-like images, `channels × size × size`.
    Image { channels: usize, size: usize },
    /// Precomputed feature vectors.
    Vector { dim: usize },
}

impl InputSpec {
    pub fn shape(&self) -> Shape {
        match *self {
            InputSpec::Image { channels, size } => Shape::Image { c: channels, h: size, w: size },
            InputSpec::Vector { dim } => Shape::Vector(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Conv(3×3, s2, 16) then three stride-2 separable convs (32, 64, 128),
    /// each followed by ReLU, then GAP, Dense(3) and Softmax.
    pub fn tiny_road_net(input_size: usize) -> Self {
        let conv = |out_ch| LayerSpec::DepthwiseSeparableConv { kernel: 3, stride: 2, pad: 1, out_ch };
        ModelSpec {
            input: InputSpec::Image { channels: 3, size: input_size },
            layers: vec![
                LayerSpec::Conv2d { kernel: 3, stride: 2, pad: 1, out_ch: 16 },
                LayerSpec::Relu,
                conv(32),
                LayerSpec::Relu,
                conv(64),
                LayerSpec::Relu,
                conv(128),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: NUM_CLASSES },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Feed-forward head over external embeddings: Dense(hidden), ReLU, Dense(3), Softmax.
    pub fn embedding_head(dim: usize, hidden: usize) -> Self {
        ModelSpec {
            input: InputSpec::Vector { dim },
            layers: vec![
                LayerSpec::Dense { out: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { out: NUM_CLASSES },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Binds every layer to its input shape and checks the classifier tail.
    pub fn build(&self) -> Result<Vec<Layer>, NnError> {
        let n = self.layers.len();
        let tail_ok = n >= 2
            && self.layers[n - 2] == (LayerSpec::Dense { out: NUM_CLASSES })
            && self.layers[n - 1] == LayerSpec::Softmax;
        if !tail_ok {
            return Err(NnError::ShapeMismatch(
                "model must end with Dense(3) followed by Softmax".into(),
            ));
        }
        if matches!(self.input, InputSpec::Image { .. })
            && (n < 3 || self.layers[n - 3] != LayerSpec::GlobalAvgPool)
        {
            return Err(NnError::ShapeMismatch(
                "image models must end with GlobalAvgPool, Dense(3), Softmax".into(),
            ));
        }
        let mut shape = self.input.shape();
        if shape.is_empty() {
            return Err(NnError::ShapeMismatch("empty input".into()));
        }
        let mut out = Vec::with_capacity(n);
        for (i, spec) in self.layers.iter().enumerate() {
            let layer = Layer::bind(*spec, shape).map_err(|e| match e {
                NnError::ShapeMismatch(m) => NnError::ShapeMismatch(format!("layer {i}: {m}")),
                other => other,
            })?;
            shape = layer.output;
            out.push(layer);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Cached activations of one forward pass; `acts[i]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub n: usize,
    pub acts: Vec<Vec<f32>>,
}

impl Forward {
    pub fn probs(&self) -> &[f32] {
        self.acts.last().expect("model has layers")
    }
}

impl Model {
    /// Builds `spec` and draws weights uniformly from `±sqrt(6 / fan_in)`;
    /// biases start at zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Model, NnError> {
        let mut layers = spec.build()?;
        for (li, layer) in layers.iter_mut().enumerate() {
            let fans = layer.fan_in();
            let names = param_names(&layer.spec);
            for ((p, fan), name) in layer.params.iter_mut().zip(fans).zip(names) {
                if fan == 0 {
                    continue;
                }
                let bound = (6.0 / fan as f64).sqrt() as f32;
                let mut r = rng::stream(seed, &format!("init/{li}/{name}"));
                for v in p.data_mut() {
                    *v = r.random_range(-bound..bound);
                }
            }
        }
        Ok(Model { spec, layers, seed })
    }

    /// Rebuilds a model from its spec and a flat parameter list in storage order.
    pub fn from_params(spec: ModelSpec, seed: u64, flat: &[f32]) -> Result<Model, NnError> {
        let mut layers = spec.build()?;
        let need: usize = layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum();
        if need != flat.len() {
            return Err(NnError::Format(format!("spec needs {need} parameters, blob has {}", flat.len())));
        }
        let mut off = 0;
        for p in layers.iter_mut().flat_map(|l| &mut l.params) {
            let k = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + k]);
            off += k;
        }
        Ok(Model { spec, layers, seed })
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input.shape()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().len()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| &l.params)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| &mut l.params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f32> {
        self.params().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Little-endian parameter bytes in storage order.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params().flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes())).collect()
    }

    /// Hex SHA-256 of [`Model::param_bytes`].
    pub fn param_digest(&self) -> String {
        hex::encode(Sha256::digest(self.param_bytes()))
    }

    fn check_input(&self, x: &[f32], n: usize) -> Result<(), NnError> {
        if x.len() != n * self.input_len() {
            return Err(NnError::ShapeMismatch(format!(
                "batch of {n} needs {} values, got {}",
                n * self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &[f32], n: usize) -> Result<Forward, NnError> {
        self.check_input(x, n)?;
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let y = layer.forward(input, n);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFiniteActivation { layer: i, kind: layer.spec.kind() });
            }
            acts.push(y);
        }
        Ok(Forward { n, acts })
    }

    /// Class probabilities, `n × 3`.
    pub fn forward(&self, x: &[f32], n: usize) -> Result<Vec<f32>, NnError> {
        let mut f = self.forward_cached(x, n)?;
        Ok(f.acts.pop().expect("model has layers"))
    }

    /// Argmax per sample; ties go to the lower class index.
    pub fn predict(&self, x: &[f32], n: usize) -> Result<Vec<usize>, NnError> {
        let probs = self.forward(x, n)?;
        Ok(probs.chunks(NUM_CLASSES).map(argmax).collect())
    }

    /// Gradients given `dlogits`, the loss gradient at the Softmax input.
    pub fn backward(&self, x: &[f32], fwd: &Forward, dlogits: &[f32]) -> Result<Vec<Tensor>, NnError> {
        let last = self.layers.len() - 1;
        self.backward_from(x, fwd, last, dlogits)
    }

    /// Backpropagates `dy`, the gradient at the output of layer `top - 1`
    /// (equivalently the input of layer `top`), down to the first layer.
    pub fn backward_from(&self, x: &[f32], fwd: &Forward, top: usize, dy: &[f32]) -> Result<Vec<Tensor>, NnError> {
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = dy.to_vec();
        for i in (0..top).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { x } else { &fwd.acts[i - 1] };
            let (dx, grads) = layer.backward(input, &fwd.acts[i], &grad, fwd.n, i > 0);
            if grads.iter().any(|g| !g.is_finite()) || !dx.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFiniteGradient { layer: i, kind: layer.spec.kind() });
            }
            per_layer[i] = grads;
            grad = dx;
        }
        for (i, layer) in self.layers.iter().enumerate().skip(top) {
            per_layer[i] = layer.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        Ok(per_layer.into_iter().flatten().collect())
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_road_net_shapes() {
        let m = Model::new(ModelSpec::tiny_road_net(128), 1).unwrap();
        assert_eq!(m.layers[6].output, Shape::Image { c: 128, h: 8, w: 8 });
        assert_eq!(m.layers.last().unwrap().output, Shape::Vector(3));
        let x = vec![0.5f32; 2 * 3 * 128 * 128];
        let p = m.forward(&x, 2).unwrap();
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_tails() {
        let mut spec = ModelSpec::tiny_road_net(32);
        spec.layers.remove(8);
        assert!(Model::new(spec, 0).is_err());
        let mut spec = ModelSpec::tiny_road_net(32);
        spec.layers[9] = LayerSpec::Dense { out: 4 };
        assert!(Model::new(spec, 0).is_err());
        assert!(Model::new(ModelSpec::tiny_road_net(4), 0).is_ok());
    }

    #[test]
    fn zero_final_dense_gives_uniform() {
        let mut m = Model::new(ModelSpec::tiny_road_net(16), 3).unwrap();
        for p in &mut m.layers[9].params {
            p.data_mut().fill(0.0);
        }
        let p = m.forward(&vec![0.3; 3 * 16 * 16], 1).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        assert_eq!(m.predict(&vec![0.3; 3 * 16 * 16], 1).unwrap(), [0]);
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::new(ModelSpec::tiny_road_net(16), 9).unwrap();
        let b = Model::new(ModelSpec::tiny_road_net(16), 9).unwrap();
        let c = Model::new(ModelSpec::tiny_road_net(16), 10).unwrap();
        assert_eq!(a.param_digest(), b.param_digest());
        assert_ne!(a.param_digest(), c.param_digest());
        assert!(a.layers[9].params[1].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let m = Model::new(ModelSpec::tiny_road_net(16), 4).unwrap();
        let mut r = rng::stream(4, "x");
        let x: Vec<f32> = (0..3 * 16 * 16).map(|_| r.random_range(0.0..1.0)).collect();
        let one = m.forward_cached(&x, 1).unwrap();
        let mut d1 = one.probs().to_vec();
        d1[1] -= 1.0;
        let g1 = m.backward(&x, &one, &d1).unwrap();
        let xx = [x.clone(), x].concat();
        let two = m.forward_cached(&xx, 2).unwrap();
        let g2 = m.backward(&xx, &two, &[d1.clone(), d1].concat()).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert_eq!(2.0 * u, *v);
            }
        }
    }

    #[test]
    fn dead_inputs_give_zero_conv_gradients() {
        let mut m = Model::new(ModelSpec::tiny_road_net(16), 5).unwrap();
        for l in &mut m.layers {
            if let Some(b) = l.params.last_mut() {
                b.data_mut().fill(0.0);
            }
        }
        let x = vec![0.0f32; 3 * 16 * 16];
        let f = m.forward_cached(&x, 1).unwrap();
        let mut d = f.probs().to_vec();
        d[0] -= 1.0;
        let g = m.backward(&x, &f, &d).unwrap();
        // conv weight, dw, pw for each separable block
        for idx in [0, 2, 3, 5, 6, 8, 9] {
            assert!(g[idx].data().iter().all(|v| *v == 0.0), "tensor {idx}");
        }
    }
}
