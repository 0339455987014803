//! Dense layer stacks with exact reverse-mode gradients and an Adam optimizer.
//!
//! Parameters are plain row-major matrices. A [`NetParams`] owns a copy of
//! its [`NetSpec`] so shape checks never need a second argument.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_at_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Layer widths (input first) and one activation per affine layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} layer sizes need {} activations, got {}",
                layer_sizes.len(),
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidSpec(format!(
                "layer sizes must be positive: {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// `input → hidden… (hidden_act) → output (output_act)`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        hidden_act: Activation,
        output: usize,
        output_act: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        Self::new(sizes, acts)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }
}

/// One affine map; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    inputs: usize,
    outputs: usize,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            inputs,
            outputs,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> T {
        self.weights[out * self.inputs + inp]
    }
}

/// All weights and biases of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    spec: NetSpec,
    layers: Vec<Layer<T>>,
}

/// Gradients share the parameter layout.
pub type Grads<T> = NetParams<T>;

/// Post-activation values of every layer for one input; `outputs[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub outputs: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("trace holds at least the input")
    }
}

impl<T: Scalar> NetParams<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Glorot-uniform weights, zero biases; a pure function of `(spec, seed)`.
    pub fn glorot(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::lit(rng.gen_range(-limit..=limit));
            }
        }
        params
    }

    /// Rebuilds parameters from raw layer arrays, validating every shape.
    pub fn from_layers(spec: &NetSpec, raw: Vec<(Vec<T>, Vec<T>)>) -> Result<Self> {
        if raw.len() != spec.num_layers() {
            return Err(Error::Dimension {
                context: "layer count",
                expected: spec.num_layers(),
                got: raw.len(),
            });
        }
        let mut params = Self::zeros(spec);
        for (layer, (weights, bias)) in params.layers.iter_mut().zip(raw) {
            if weights.len() != layer.weights.len() {
                return Err(Error::Dimension {
                    context: "layer weights",
                    expected: layer.weights.len(),
                    got: weights.len(),
                });
            }
            if bias.len() != layer.bias.len() {
                return Err(Error::Dimension {
                    context: "layer bias",
                    expected: layer.bias.len(),
                    got: bias.len(),
                });
            }
            layer.weights = weights;
            layer.bias = bias;
        }
        Ok(params)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Every parameter in declaration order: per layer, weights then bias.
    pub fn values(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.spec == other.spec
    }

    pub fn max_abs(&self) -> T {
        self.values().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    fn check_congruent(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected: self.num_params(),
                got: other.num_params(),
            })
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.spec.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            x = affine(layer, &x, *act);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[T]) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let next = affine(layer, outputs.last().unwrap(), *act);
            outputs.push(next);
        }
        Ok(Trace { outputs })
    }

    /// Gradients of `⟨upstream, output⟩` with respect to every parameter and the input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(Grads<T>, Vec<T>)> {
        let trace = self.forward_trace(input)?;
        let mut grads = Grads::zeros(&self.spec);
        let input_grad = self.accumulate_grads(&trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Adds the gradient of `⟨upstream, output⟩` into `grads` using a stored trace.
    /// Returns the gradient with respect to the input.
    pub fn accumulate_grads(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        grads: &mut Grads<T>,
    ) -> Result<Vec<T>> {
        if upstream.len() != self.spec.output_dim() {
            return Err(Error::Dimension {
                context: "upstream gradient",
                expected: self.spec.output_dim(),
                got: upstream.len(),
            });
        }
        self.check_congruent(grads, "gradient accumulator")?;

        let n = self.layers.len();
        let mut delta: Vec<T> = upstream
            .iter()
            .zip(&trace.outputs[n])
            .map(|(&u, &y)| u * self.spec.activations[n - 1].derivative_at_output(y))
            .collect();

        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let x = &trace.outputs[l];
            let g = &mut grads.layers[l];
            let mut dx = vec![T::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = g.bias[o] + d;
                if d == T::zero() {
                    continue;
                }
                let row = o * layer.inputs;
                let w_row = &layer.weights[row..row + layer.inputs];
                let g_row = &mut g.weights[row..row + layer.inputs];
                for i in 0..layer.inputs {
                    g_row[i] = g_row[i] + d * x[i];
                    dx[i] = dx[i] + d * w_row[i];
                }
            }
            if l == 0 {
                return Ok(dx);
            }
            let act = self.spec.activations[l - 1];
            delta = dx
                .iter()
                .zip(x)
                .map(|(&g, &y)| g * act.derivative_at_output(y))
                .collect();
        }
        unreachable!("network has at least one layer")
    }

    /// `self + step · grads`, elementwise.
    pub fn add_scaled(&self, grads: &Grads<T>, step: T) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled_in_place(grads, step)?;
        Ok(out)
    }

    pub fn add_scaled_in_place(&mut self, grads: &Grads<T>, step: T) -> Result<()> {
        self.check_congruent(grads, "add_scaled")?;
        for (p, &g) in self.values_mut().zip(grads.values()) {
            *p = *p + step * g;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for p in self.values_mut() {
            *p = *p * factor;
        }
    }

    pub fn fill(&mut self, value: T) {
        for p in self.values_mut() {
            *p = value;
        }
    }
}

fn affine<T: Scalar>(layer: &Layer<T>, x: &[T], act: Activation) -> Vec<T> {
    (0..layer.outputs)
        .map(|o| {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let z = row
                .iter()
                .zip(x)
                .fold(layer.bias[o], |acc, (&w, &xi)| acc + w * xi);
            act.apply(z)
        })
        .collect()
}

pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment accumulators for one network. Minimizes: the step moves
/// parameters against `grads`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: NetParams<T>,
    pub second_moment: NetParams<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(spec: &NetSpec, beta1: T, beta2: T) -> Self {
        Self {
            first_moment: NetParams::zeros(spec),
            second_moment: NetParams::zeros(spec),
            t: 0,
            beta1,
            beta2,
            epsilon: T::lit(ADAM_EPSILON),
        }
    }

    /// Pure form: returns the updated parameters and optimizer state.
    pub fn step(
        &self,
        params: &NetParams<T>,
        grads: &Grads<T>,
        lr: T,
    ) -> Result<(NetParams<T>, AdamState<T>)> {
        let mut state = self.clone();
        let mut params = params.clone();
        state.step_in_place(&mut params, grads, lr)?;
        Ok((params, state))
    }

    pub fn step_in_place(&mut self, params: &mut NetParams<T>, grads: &Grads<T>, lr: T) -> Result<()> {
        params.check_congruent(grads, "adam gradients")?;
        params.check_congruent(&self.first_moment, "adam moments")?;
        if !(lr > T::zero()) {
            return Err(Error::InvalidArgument(format!("adam lr must be positive, got {lr}")));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradients"));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((p, &g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.first_moment.values_mut())
            .zip(self.second_moment.values_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
