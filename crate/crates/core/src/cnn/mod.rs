//! Six-layer fully convolutional model mapping `A` to a raw factor map, and
//! assembly of the SPD operator `M⁻¹ = (T + D)(T + D)ᵀ` from it.

mod checkpoint;
mod conv;
mod feature_map;
mod spd;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ARCHITECTURE,
};
pub use conv::{
    conv_backward, conv_forward, conv_forward_planned, prelu, prelu_backward, ConvKernel, ConvPlan,
};
pub use feature_map::{dilate_down_right, support_within_dilation, FeatureMap};
pub use spd::{learned_operator_dense, spd_assemble, SpdFactors, EPSILON};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KERNEL_SIZES: [usize; 6] = [1, 2, 2, 2, 2, 1];
pub const CHANNELS: [usize; 7] = [2, 8, 16, 32, 16, 8, 1];
pub const N_LAYERS: usize = 6;
pub const N_ACTIVATIONS: usize = 5;
pub const INITIAL_SLOPE: f64 = 0.25;

/// Extra factor on the output layer's initial weights. Keeps the initial raw
/// map well below [`EPSILON`] so `F ≈ ε I` starts well conditioned; at the
/// unscaled fan-in bound the map is of order `ε` and clamped diagonals next to
/// comparable off-diagonals make `F` numerically singular.
pub const OUTPUT_INIT_SCALE: f64 = 1e-2;

/// Down-right dilation of the input mask produced by the whole network.
pub const RECEPTIVE_DILATION: usize = 4;

/// Named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; len],
        }
    }
}

fn architecture_shapes() -> Vec<(String, Vec<usize>)> {
    let convs = (0..N_LAYERS).map(|l| {
        let k = KERNEL_SIZES[l];
        (
            format!("conv_{l}"),
            vec![CHANNELS[l + 1], CHANNELS[l], k, k],
        )
    });
    let slopes = (0..N_ACTIVATIONS).map(|l| (format!("prelu_{l}"), vec![1]));
    convs.chain(slopes).collect()
}

/// Tensors in a fixed order: `conv_0..conv_5` then `prelu_0..prelu_4`.
fn check_architecture(tensors: &[Tensor]) -> Result<()> {
    let shapes = architecture_shapes();
    if tensors.len() != shapes.len() {
        return Err(Error::ShapeMismatch {
            tensor: format!("expected {} tensors, found {}", shapes.len(), tensors.len()),
        });
    }
    for (t, (name, shape)) in tensors.iter().zip(&shapes) {
        if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                tensor: t.name.clone(),
            });
        }
    }
    Ok(())
}

/// Weights of the six convolutions (no biases) and the five PReLU slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    tensors: Vec<Tensor>,
}

impl CnnParams {
    pub fn zeros() -> Self {
        Self {
            tensors: architecture_shapes()
                .into_iter()
                .map(|(name, shape)| Tensor::zeros(name, shape))
                .collect(),
        }
    }

    /// Kernels uniform in `[-1/√fan_in, 1/√fan_in]` (the output layer further
    /// scaled by [`OUTPUT_INIT_SCALE`]), slopes 0.25.
    pub fn init(seed: u64) -> Self {
        Self::init_scaled(seed, OUTPUT_INIT_SCALE)
    }

    /// As [`CnnParams::init`] with an explicit output-layer factor.
    pub fn init_scaled(seed: u64, output_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for t in p.tensors.iter_mut() {
            if t.name.starts_with("prelu") {
                t.data[0] = INITIAL_SLOPE;
            } else {
                let fan_in = (t.shape[1] * t.shape[2] * t.shape[3]) as f64;
                let s = 1.0 / fan_in.sqrt();
                let gain = if t.name == format!("conv_{}", N_LAYERS - 1) {
                    output_scale
                } else {
                    1.0
                };
                for w in t.data.iter_mut() {
                    *w = gain * rng.random_range(-s..=s);
                }
            }
        }
        p
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        check_architecture(&tensors)?;
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn kernel(&self, layer: usize) -> ConvKernel<'_> {
        let k = KERNEL_SIZES[layer];
        ConvKernel {
            out_ch: CHANNELS[layer + 1],
            in_ch: CHANNELS[layer],
            size: k,
            weights: &self.tensors[layer].data,
        }
    }

    pub fn slope(&self, layer: usize) -> f64 {
        self.tensors[N_LAYERS + layer].data[0]
    }

    /// Flat view of parameter `idx` across all tensors in order.
    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for t in &self.tensors {
            if idx < t.data.len() {
                return t.data[idx];
            }
            idx -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn flat_set(&mut self, mut idx: usize, v: f64) {
        for t in self.tensors.iter_mut() {
            if idx < t.data.len() {
                t.data[idx] = v;
                return;
            }
            idx -= t.data.len();
        }
        panic!("parameter index out of range")
    }
}

/// Two-channel input: strictly lower entries in channel 0, the diagonal in
/// channel 1.
pub fn encode_input(a: &CsrMatrix) -> Result<FeatureMap> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    let n = a.n_rows();
    let mut sites = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j < i {
                sites.push((i, j));
                values.extend([v, 0.0]);
            } else if j == i {
                sites.push((i, j));
                values.extend([0.0, v]);
            }
        }
    }
    Ok(FeatureMap::from_sorted_sites(2, n, n, &sites, values))
}

/// Intermediate maps of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each convolution: the encoding, then each activation output.
    pub conv_inputs: Vec<FeatureMap>,
    /// Output of each convolution before its activation.
    pub conv_outputs: Vec<FeatureMap>,
    pub plans: Vec<ConvPlan>,
}

impl ForwardTrace {
    /// Single-channel raw factor map.
    pub fn output(&self) -> &FeatureMap {
        self.conv_outputs.last().expect("six layers")
    }
}

pub fn forward_trace(params: &CnnParams, a: &CsrMatrix, exec: Execution) -> Result<ForwardTrace> {
    let mut x = encode_input(a)?;
    let mut conv_inputs = Vec::with_capacity(N_LAYERS);
    let mut conv_outputs = Vec::with_capacity(N_LAYERS);
    let mut plans = Vec::with_capacity(N_LAYERS);
    for layer in 0..N_LAYERS {
        let (z, plan) = conv_forward_planned(&params.kernel(layer), &x, exec)?;
        let next = (layer < N_ACTIVATIONS).then(|| prelu(params.slope(layer), &z));
        conv_inputs.push(x);
        conv_outputs.push(z);
        plans.push(plan);
        if let Some(n) = next {
            x = n;
        } else {
            break;
        }
    }
    Ok(ForwardTrace {
        conv_inputs,
        conv_outputs,
        plans,
    })
}

/// Raw single-channel `n x n` factor map `f(A)`.
pub fn model_forward(params: &CnnParams, a: &CsrMatrix) -> Result<FeatureMap> {
    let mut trace = forward_trace(params, a, Execution::default())?;
    Ok(trace.conv_outputs.pop().expect("six layers"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::{assemble_poisson, generate_grid, laplacian_1d};

    #[test]
    fn architecture_counts() {
        let p = CnnParams::init(1);
        let ks: Vec<usize> = p.tensors()[..N_LAYERS].iter().map(|t| t.shape[2]).collect();
        assert_eq!(ks, KERNEL_SIZES);
        assert_eq!(ks.iter().filter(|&&k| k == 2).count(), 4);
        assert_eq!(
            p.tensors()[N_LAYERS..]
                .iter()
                .map(|t| t.data[0])
                .collect::<Vec<_>>(),
            vec![0.25; 5]
        );
        let total: usize = (0..6)
            .map(|l| CHANNELS[l] * CHANNELS[l + 1] * KERNEL_SIZES[l].pow(2))
            .sum();
        assert_eq!(p.num_parameters(), total + 5);
        for (l, t) in p.tensors()[..N_LAYERS].iter().enumerate() {
            let mut s = 1.0 / ((t.shape[1] * t.shape[2] * t.shape[3]) as f64).sqrt();
            if l == N_LAYERS - 1 {
                s *= OUTPUT_INIT_SCALE;
            }
            assert!(t.data.iter().all(|w| w.abs() <= s));
            assert!(t.data.iter().any(|w| w.abs() > 0.5 * s));
        }
        assert_ne!(CnnParams::init(1), CnnParams::init(2));
        assert_eq!(CnnParams::init(1), CnnParams::init(1));
    }

    #[test]
    fn encode_examples() {
        let e = encode_input(&CsrMatrix::identity(3)).unwrap();
        assert_eq!(e.channels(), 2);
        for i in 0..3 {
            assert_eq!(e.get(1, i, i), 1.0);
            assert_eq!(e.get(0, i, i), 0.0);
        }
        let t = encode_input(&laplacian_1d(3)).unwrap();
        assert_eq!(
            t.sites().collect::<Vec<_>>(),
            vec![(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]
        );
        assert_eq!(t.get(0, 1, 0), -1.0);
        assert_eq!(t.get(0, 2, 1), -1.0);
        assert_eq!(t.get(1, 2, 2), 2.0);
        assert!(encode_input(&CsrMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn encoding_round_trips_symmetric_matrix() {
        let a = assemble_poisson(&generate_grid(7, 6, 2, 11).unwrap());
        let e = encode_input(&a).unwrap();
        let mut entries = Vec::new();
        for (s, (i, j)) in e.sites().enumerate() {
            let v = e.site_values(s);
            if i == j {
                entries.push((i, j, v[1]));
            } else {
                entries.push((i, j, v[0]));
                entries.push((j, i, v[0]));
            }
        }
        let rebuilt = CsrMatrix::from_coo(a.n_rows(), a.n_cols(), &entries).unwrap();
        assert_eq!(rebuilt, a);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let a = assemble_poisson(&generate_grid(6, 6, 1, 2).unwrap());
        let y = model_forward(&CnnParams::zeros(), &a).unwrap();
        assert_eq!(y.n_sites(), 0);
        assert_eq!(
            (y.height(), y.width(), y.channels()),
            (a.n_rows(), a.n_rows(), 1)
        );
    }

    #[test]
    fn one_parameter_set_handles_any_size() {
        let p = CnnParams::init(5);
        for (h, w) in [(8, 8), (16, 16)] {
            let a = assemble_poisson(&crate::poisson::OccupancyGrid::all_fluid(h, w).unwrap());
            let y = model_forward(&p, &a).unwrap();
            assert_eq!((y.height(), y.width()), (h * w, h * w));
            let x = encode_input(&a).unwrap();
            assert!(support_within_dilation(&y, &x, RECEPTIVE_DILATION));
            assert!(!support_within_dilation(&y, &x, RECEPTIVE_DILATION - 1));
        }
    }

    #[test]
    fn forward_is_deterministic_across_execution_modes() {
        let a = assemble_poisson(&generate_grid(10, 10, 3, 9).unwrap());
        let p = CnnParams::init(3);
        let s = forward_trace(&p, &a, Execution::Sequential).unwrap();
        let q = forward_trace(&p, &a, Execution::default()).unwrap();
        assert_eq!(s.output(), q.output());
        assert_eq!(s.output(), &model_forward(&p, &a).unwrap());
    }
}
