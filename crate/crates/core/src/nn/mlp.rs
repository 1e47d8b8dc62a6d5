use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul_dztx, matmul_dzw, matmul_xwt, Scalar};
use super::NnError;

/// Hidden widths shared by actor and critic.
pub const HIDDEN_WIDTHS: [usize; 3] = [256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Tanh,
    Identity,
}

/// Topology of a fully connected ReLU network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub output_activation: OutputActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }
}

impl MlpSpec {
    pub fn new(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: OutputActivation,
    ) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            output_activation,
        }
    }

    /// Policy network: `input -> 256 -> 128 -> 64 -> 1`, tanh output.
    pub fn actor(input: usize) -> Self {
        Self::new(input, &HIDDEN_WIDTHS, 1, OutputActivation::Tanh)
    }

    /// Value network over `observation ++ action`, linear output.
    pub fn critic(input: usize) -> Self {
        Self::new(input, &HIDDEN_WIDTHS, 1, OutputActivation::Identity)
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// 64-bit FNV-1a over the widths, each as a little-endian u32.
    pub fn spec_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for w in self.widths() {
            for b in (w as u32).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        }
        h
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.widths()
            .windows(2)
            .map(|p| {
                let l = LayerShape {
                    inputs: p[0],
                    outputs: p[1],
                    offset,
                };
                offset += p[0] * p[1] + p[1];
                l
            })
            .collect()
    }
}

/// Parameters of one network plus a version counter that only moves forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    spec: MlpSpec,
    layers: Vec<LayerShape>,
    params: Vec<T>,
    version: u64,
}

/// Post-activation outputs of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    spec_hash: u64,
    activations: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x output` row-major.
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds the input")
    }

    /// All layer outputs, starting with the input batch.
    pub fn activations(&self) -> &[Vec<T>] {
        &self.activations
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec.layers();
        let params = vec![T::zero(); spec.param_count()];
        Self {
            spec,
            layers,
            params,
            version: 0,
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and biases, with
    /// the output layer additionally scaled by `output_scale`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, output_scale: f64) -> Self {
        let mut net = Self::zeros(spec);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.clone().into_iter().enumerate() {
            let mut bound = 1.0 / (layer.inputs as f64).sqrt();
            if i == last {
                bound *= output_scale;
            }
            for p in &mut net.params[layer.offset..layer.bias().end] {
                *p = T::from_f64(rng.random_range(-bound..=bound));
            }
        }
        net
    }

    pub fn from_params(spec: MlpSpec, params: Vec<T>, version: u64) -> Result<Self, NnError> {
        if params.len() != spec.param_count() {
            return Err(NnError::ShapeMismatch);
        }
        let layers = spec.layers();
        Ok(Self {
            spec,
            layers,
            params,
            version,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access. Callers that change values should also
    /// [`bump_version`](Self::bump_version).
    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Moves the version forward to `version`; never backwards.
    pub fn advance_version_to(&mut self, version: u64) {
        self.version = self.version.max(version);
    }

    pub fn same_shape(&self, other: &Mlp<T>) -> bool {
        self.spec == other.spec
    }

    /// Evaluates a batch of row-major inputs and keeps every activation.
    pub fn forward(&self, input: &[T]) -> Result<ForwardCache<T>, NnError> {
        let width = self.spec.input;
        if input.is_empty() || input.len() % width != 0 {
            return Err(NnError::InputShape {
                expected: width,
                got: input.len(),
            });
        }
        let batch = input.len() / width;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let mut z = vec![T::zero(); batch * layer.outputs];
            matmul_xwt(
                x,
                &self.params[layer.weights()],
                &mut z,
                batch,
                layer.inputs,
                layer.outputs,
            );
            let bias = &self.params[layer.bias()];
            for row in z.chunks_exact_mut(layer.outputs) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = *v + *b;
                }
            }
            if i < last {
                for v in &mut z {
                    *v = v.max(T::zero());
                }
            } else if self.spec.output_activation == OutputActivation::Tanh {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        Ok(ForwardCache {
            batch,
            spec_hash: self.spec.spec_hash(),
            activations,
        })
    }

    /// Forward pass returning only the outputs.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>, NnError> {
        let mut cache = self.forward(input)?;
        Ok(cache.activations.pop().unwrap())
    }

    /// Reverse-mode pass for the loss whose gradient w.r.t. the outputs is
    /// `output_grad`. Returns parameter gradients in the flat layout and,
    /// when requested, the gradient w.r.t. the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        want_input_grad: bool,
    ) -> Result<(Vec<T>, Option<Vec<T>>), NnError> {
        self.reverse(cache, output_grad, true, want_input_grad)
    }

    /// Gradient of the outputs (weighted by `output_grad`) w.r.t. the input
    /// batch only, skipping parameter gradients.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
    ) -> Result<Vec<T>, NnError> {
        let (_, dx) = self.reverse(cache, output_grad, false, true)?;
        Ok(dx.expect("input gradient requested"))
    }

    fn reverse(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        want_param_grads: bool,
        want_input_grad: bool,
    ) -> Result<(Vec<T>, Option<Vec<T>>), NnError> {
        if cache.spec_hash != self.spec.spec_hash()
            || cache.activations.len() != self.layers.len() + 1
        {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        if output_grad.len() != batch * self.spec.output {
            return Err(NnError::GradientShape {
                expected: batch * self.spec.output,
                got: output_grad.len(),
            });
        }
        let mut grads = if want_param_grads {
            vec![T::zero(); self.params.len()]
        } else {
            Vec::new()
        };
        let last = self.layers.len() - 1;
        let mut delta = output_grad.to_vec();
        if self.spec.output_activation == OutputActivation::Tanh {
            for (d, y) in delta.iter_mut().zip(cache.output()) {
                *d = *d * (T::one() - *y * *y);
            }
        }
        let mut input_grad = None;
        for i in (0..=last).rev() {
            let layer = self.layers[i];
            let x = &cache.activations[i];
            if want_param_grads {
                matmul_dztx(
                    &delta,
                    x,
                    &mut grads[layer.weights()],
                    batch,
                    layer.inputs,
                    layer.outputs,
                );
                let gb = &mut grads[layer.bias()];
                for row in delta.chunks_exact(layer.outputs) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g = *g + *d;
                    }
                }
            }
            if i == 0 && !want_input_grad {
                break;
            }
            let mut dx = vec![T::zero(); batch * layer.inputs];
            matmul_dzw(
                &delta,
                &self.params[layer.weights()],
                &mut dx,
                batch,
                layer.inputs,
                layer.outputs,
            );
            if i == 0 {
                input_grad = Some(dx);
                break;
            }
            // ReLU derivative from the stored post-activation.
            for (d, a) in dx.iter_mut().zip(x) {
                if *a <= T::zero() {
                    *d = T::zero();
                }
            }
            delta = dx;
        }
        Ok((grads, input_grad))
    }

    /// `self <- tau * learned + (1 - tau) * self`, elementwise.
    pub fn soft_update_from(&mut self, learned: &Mlp<T>, tau: T) -> Result<(), NnError> {
        if !self.same_shape(learned) {
            return Err(NnError::ShapeMismatch);
        }
        let keep = T::one() - tau;
        for (t, l) in self.params.iter_mut().zip(&learned.params) {
            *t = tau * *l + keep * *t;
        }
        self.bump_version();
        Ok(())
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()))
                .collect(),
            version: self.version,
        }
    }
}
