//! Leaky-rectifier MLP with sigmoid RGBA head and hand-written reverse mode.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoding::EncodingConfig;

pub const LEAKY_SLOPE: f64 = 0.01;
/// RGB + alpha.
pub const OUTPUTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, so a batch row `x` maps to `x · W + b`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Network parameters. The same shape doubles as a gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Layer widths from input to output, e.g. `[63, 256, 256, 256, 256, 4]`.
    pub fn layer_sizes(input_dim: usize, hidden_layers: usize, width: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat(width).take(hidden_layers));
        sizes.push(OUTPUTS);
        sizes
    }

    pub fn zeros(input_dim: usize, hidden_layers: usize, width: usize) -> Self {
        let sizes = Self::layer_sizes(input_dim, hidden_layers, width);
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform fan-in scaled weights (`±√(6/fan_in)`), zero biases.
    pub fn init(input_dim: usize, hidden_layers: usize, width: usize, seed: u64) -> Self {
        assert!(hidden_layers >= 1 && width >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(input_dim, hidden_layers, width);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.weights.nrows() as f64).sqrt();
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = rng.gen_range(-bound..bound));
        }
        params
    }

    pub fn for_encoding(enc: &EncodingConfig, hidden_layers: usize, width: usize, seed: u64) -> Self {
        Self::init(enc.input_dim(), hidden_layers, width, seed)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable slices over every tensor, weights before bias, layer order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations of one batched forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    pub inputs: Array2<f64>,
    /// Pre-activations of every layer (hidden layers then head).
    pub pre: Vec<Array2<f64>>,
    /// Post-activations of the hidden layers.
    pub hidden: Vec<Array2<f64>>,
    /// Sigmoid outputs, `batch × 4`.
    pub outputs: Array2<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.inputs.nrows()
    }
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward pass over a batch of encoded inputs (`batch × input_dim`).
pub fn forward_batch(params: &MlpParams, inputs: Array2<f64>) -> Tape {
    let (last, hidden_layers) = params.layers.split_last().expect("at least one layer");
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(hidden_layers.len());
    for layer in hidden_layers {
        let x = hidden.last().map_or(inputs.view(), |h| h.view());
        let z = x.dot(&layer.weights) + &layer.bias;
        hidden.push(z.mapv(leaky));
        pre.push(z);
    }
    let x = hidden.last().map_or(inputs.view(), |h| h.view());
    let z = x.dot(&last.weights) + &last.bias;
    let outputs = z.mapv(sigmoid);
    pre.push(z);
    Tape {
        inputs,
        pre,
        hidden,
        outputs,
    }
}

/// Parameter gradient of `Σ_rows ⟨grad_out[row], outputs[row]⟩`.
pub fn backward_batch(params: &MlpParams, tape: &Tape, grad_out: ArrayView2<f64>) -> MlpParams {
    assert_eq!(grad_out.dim(), tape.outputs.dim());
    let mut grads = params.zeros_like();
    let mut delta = &grad_out * &tape.outputs.mapv(|s| s * (1.0 - s));
    for l in (0..params.layers.len()).rev() {
        let x = if l == 0 {
            tape.inputs.view()
        } else {
            tape.hidden[l - 1].view()
        };
        grads.layers[l].weights = x.t().dot(&delta);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut up = delta.dot(&params.layers[l].weights.t());
            up.zip_mut_with(&tape.pre[l - 1], |g, &z| {
                if z <= 0.0 {
                    *g *= LEAKY_SLOPE
                }
            });
            delta = up;
        }
    }
    grads
}

/// Single-sample forward: color, alpha and the tape for backward.
pub fn field_forward(
    params: &MlpParams,
    x: &[f64; 3],
    d: &[f64; 3],
    enc: &EncodingConfig,
) -> ([f64; 3], f64, Tape) {
    let mut row = Array2::zeros((1, enc.input_dim()));
    enc.encode_into(x, d, row.as_slice_mut().unwrap());
    let tape = forward_batch(params, row);
    let o = tape.outputs.row(0);
    ([o[0], o[1], o[2]], o[3], tape)
}

/// Gradient of `⟨grad_c, c⟩ + grad_alpha · α` with respect to every parameter.
pub fn field_backward(params: &MlpParams, tape: &Tape, grad_c: [f64; 3], grad_alpha: f64) -> MlpParams {
    let g = Array2::from_shape_vec((1, OUTPUTS), vec![grad_c[0], grad_c[1], grad_c[2], grad_alpha])
        .expect("shape");
    backward_batch(params, tape, g.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_enc() -> EncodingConfig {
        EncodingConfig {
            position_freqs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn init_deterministic_and_seeded() {
        let a = MlpParams::init(15, 2, 8, 7);
        let b = MlpParams::init(15, 2, 8, 7);
        let c = MlpParams::init(15, 2, 8, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn full_scale_shapes() {
        let enc = EncodingConfig::default();
        let p = MlpParams::for_encoding(&enc, 4, 256, 0);
        assert_eq!(p.input_dim(), 63);
        let expected = (63 * 256 + 256) + 3 * (256 * 256 + 256) + (256 * 4 + 4);
        assert_eq!(p.param_count(), expected);
        assert_eq!(MlpParams::layer_sizes(63, 4, 256), vec![63, 256, 256, 256, 256, 4]);
    }

    #[test]
    fn zero_params_give_half() {
        let enc = small_enc();
        let p = MlpParams::zeros(enc.input_dim(), 3, 5);
        let (c, a, _) = field_forward(&p, &[0.3, -0.2, 0.9], &[0.0, 0.0, 1.0], &enc);
        assert_eq!(c, [0.5; 3]);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let enc = small_enc();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = MlpParams::for_encoding(&enc, 2, 16, 1);
        let n = 100_000;
        let mut inputs = Array2::zeros((n, enc.input_dim()));
        for mut row in inputs.rows_mut() {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            enc.encode_into(&x, &d, row.as_slice_mut().unwrap());
        }
        let tape = forward_batch(&p, inputs);
        assert!(tape.outputs.iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0));
    }

    #[test]
    fn tape_replays_bit_for_bit() {
        let enc = small_enc();
        let p = MlpParams::for_encoding(&enc, 3, 12, 4);
        let (_, _, tape) = field_forward(&p, &[0.1, 0.2, -0.7], &[0.0, 0.6, 0.8], &enc);
        let replay = forward_batch(&p, tape.inputs.clone());
        assert_eq!(replay.outputs, tape.outputs);
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let enc = small_enc();
        let p = MlpParams::for_encoding(&enc, 2, 8, 4);
        let (_, _, tape) = field_forward(&p, &[0.1, 0.2, -0.7], &[0.0, 0.6, 0.8], &enc);
        let g = field_backward(&p, &tape, [0.0; 3], 0.0);
        assert!(g.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_is_linear() {
        let enc = small_enc();
        let p = MlpParams::for_encoding(&enc, 2, 8, 9);
        let (_, _, tape) = field_forward(&p, &[0.4, -0.1, 0.3], &[0.6, 0.0, 0.8], &enc);
        let g1 = field_backward(&p, &tape, [0.3, -1.0, 0.5], 2.0);
        let g2 = field_backward(&p, &tape, [-0.7, 0.2, 1.5], -0.4);
        let g12 = field_backward(&p, &tape, [-0.4, -0.8, 2.0], 1.6);
        let mut sum = g1.clone();
        sum.add_assign(&g2);
        for (a, b) in sum.to_flat().iter().zip(g12.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let enc = small_enc();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let p = MlpParams::for_encoding(&enc, 2, 8, trial);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let d = [0.0, 0.6, 0.8];
            let gc = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let ga = rng.gen_range(-1.0..1.0);
            let objective = |q: &MlpParams| {
                let (c, a, _) = field_forward(q, &x, &d, &enc);
                gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2] + ga * a
            };
            let (_, _, tape) = field_forward(&p, &x, &d, &enc);
            let analytic = field_backward(&p, &tape, gc, ga).to_flat();
            let base = p.to_flat();
            let h = 1e-5;
            let mut q = p.clone();
            for i in 0..base.len() {
                let mut v = base.clone();
                v[i] += h;
                q.set_flat(&v);
                let plus = objective(&q);
                v[i] -= 2.0 * h;
                q.set_flat(&v);
                let minus = objective(&q);
                let fd = (plus - minus) / (2.0 * h);
                let scale = fd.abs().max(analytic[i].abs()).max(1e-7);
                assert!(
                    (fd - analytic[i]).abs() / scale < 1e-4,
                    "param {i}: fd {fd} vs analytic {}",
                    analytic[i]
                );
            }
        }
    }
}
