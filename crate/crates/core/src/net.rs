//! Small fully-connected networks with reverse-mode gradients w.r.t. both
//! parameters and inputs, and an RMSProp optimizer.
//!
//! Parameters live in one flat vector. Layer `l` (mapping `in_l -> out_l`)
//! occupies `out_l * in_l` row-major weights followed by `out_l` biases, so
//! the total count is `Σ (in_l + 1) * out_l`.
//!
//! Checkpoint format: one line of JSON header terminated by `\n`, followed by
//! `param_count` little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and its image `a`; ReLU'(0) = 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!(
                "unknown activation `{other}` (expected relu, tanh or identity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Fixed, non-trainable input standardization `x -> (x - shift) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// Per-coordinate mean and inverse standard deviation of `rows`.
    /// Coordinates with zero spread keep unit scale.
    pub fn fit(rows: &ArrayView2<'_, f64>) -> Result<Self> {
        if rows.nrows() < 2 {
            return Err(Error::TooFewPoints {
                context: "input normalization",
                required: 2,
                found: rows.nrows(),
            });
        }
        let shift = rows.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let scale = rows
            .std_axis(Axis(0), 1.0)
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s } else { 1.0 })
            .collect();
        Ok(Self { shift, scale })
    }

    fn apply(&self, batch: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = batch.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, s), c) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) * c;
            }
        }
        out
    }
}

/// Parameter gradient and input gradient, each present when requested.
pub type Gradients = (Option<Vec<f64>>, Option<Array2<f64>>);

/// Recorded forward pass: layer inputs (last entry is the output) and pre-activations.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("tape holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    rms: Vec<f64>,
    input_norm: Option<InputNorm>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_norm: Option<InputNorm>,
}

const CHECKPOINT_FORMAT: &str = "vgrow-mlp";

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// Random initialisation: He-uniform for ReLU layers, Xavier-uniform for
    /// tanh and identity layers, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden, output)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = match net.activations[l] {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::Tanh | Activation::Identity => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let off = net.layer_offset(l);
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "network needs at least an input and an output size",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let layers = layer_sizes.len() - 1;
        let mut activations = vec![hidden; layers];
        activations[layers - 1] = output;
        let n = param_count(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations,
            params: vec![0.0; n],
            rms: vec![0.0; n],
            input_norm: None,
        })
    }

    pub fn from_parts(
        layer_sizes: &[usize],
        activations: Vec<Activation>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if activations.len() + 1 != layer_sizes.len() {
            return Err(Error::invalid("need exactly one activation per layer"));
        }
        let mut net = Self::zeros(
            layer_sizes,
            activations[0],
            activations[activations.len() - 1],
        )?;
        net.activations = activations;
        net.set_params(params)?;
        Ok(net)
    }

    /// A single affine layer `x -> x W^T + b` with identity output.
    pub fn linear(weights: &Array2<f64>, bias: &[f64]) -> Result<Self> {
        let (out, inp) = weights.dim();
        if bias.len() != out {
            return Err(Error::DimensionMismatch {
                context: "linear bias",
                expected: out,
                found: bias.len(),
            });
        }
        let mut params: Vec<f64> = weights.iter().copied().collect();
        params.extend_from_slice(bias);
        Self::from_parts(&[inp, out], vec![Activation::Identity], params)
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
        *self.layer_sizes.last().expect("at least two sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn input_norm(&self) -> Option<&InputNorm> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) -> Result<()> {
        if let Some(n) = &norm {
            if n.shift.len() != self.input_dim() || n.scale.len() != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "input normalization width",
                    expected: self.input_dim(),
                    found: n.shift.len(),
                });
            }
            if n.shift.iter().chain(&n.scale).any(|v| !v.is_finite())
                || n.scale.iter().any(|&c| c <= 0.0)
            {
                return Err(Error::invalid(
                    "input normalization needs finite shifts and positive scales",
                ));
            }
        }
        self.input_norm = norm;
        Ok(())
    }

    fn normalized(&self, batch: &ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.input_norm {
            Some(n) => n.apply(batch),
            None => batch.to_owned(),
        }
    }

    pub fn rmsprop_state(&self) -> &[f64] {
        &self.rms
    }

    pub fn reset_optimizer(&mut self) {
        self.rms.iter_mut().for_each(|v| *v = 0.0);
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.layer_sizes[..=l])
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (inp, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((out, inp), &self.params[off..off + out * inp])
            .expect("layer slice has the right length");
        let b = ArrayView1::from(&self.params[off + out * inp..off + out * inp + out]);
        (w, b)
    }

    fn check_batch(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input width",
                expected: self.input_dim(),
                found: batch.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let mut a = self.normalized(batch);
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w.t());
            z += &b;
            let act = self.activations[l];
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass keeping every layer's input and pre-activation.
    pub fn tape(&self, batch: &ArrayView2<'_, f64>) -> Result<Tape> {
        self.check_batch(batch)?;
        let mut values = Vec::with_capacity(self.num_layers() + 1);
        let mut pre = Vec::with_capacity(self.num_layers());
        values.push(self.normalized(batch));
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = values[l].dot(&w.t());
            z += &b;
            let act = self.activations[l];
            values.push(z.mapv(|v| act.apply(v)));
            pre.push(z);
        }
        Ok(Tape { values, pre })
    }

    /// Reverse pass for the scalar `Σ_i upstream_i · output_i`.
    ///
    /// Returns the parameter gradient and/or the input gradient on request.
    pub fn backward(
        &self,
        batch: &ArrayView2<'_, f64>,
        upstream: &ArrayView2<'_, f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Gradients> {
        let tape = self.tape(batch)?;
        self.backward_tape(&tape, upstream, want_params, want_input)
    }

    /// [`Mlp::backward`] reusing a recorded forward pass.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        upstream: &ArrayView2<'_, f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Gradients> {
        let rows = tape.values[0].nrows();
        if upstream.dim() != (rows, self.output_dim()) {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient shape",
                expected: rows * self.output_dim(),
                found: upstream.len(),
            });
        }
        let (inputs, pre) = (&tape.values, &tape.pre);
        let mut grad = want_params.then(|| vec![0.0; self.params.len()]);
        let mut delta = upstream.to_owned();
        for l in (0..self.num_layers()).rev() {
            let act = self.activations[l];
            ndarray::Zip::from(&mut delta)
                .and(&pre[l])
                .and(&inputs[l + 1])
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            if let Some(g) = grad.as_mut() {
                let (inp, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                let off = self.layer_offset(l);
                let gw = delta.t().dot(&inputs[l]);
                let gb: Array1<f64> = delta.sum_axis(Axis(0));
                g[off..off + out * inp]
                    .iter_mut()
                    .zip(gw.iter())
                    .for_each(|(d, s)| *d = *s);
                g[off + out * inp..off + out * inp + out]
                    .iter_mut()
                    .zip(gb.iter())
                    .for_each(|(d, s)| *d = *s);
            }
            if l > 0 || want_input {
                let (w, _) = self.layer(l);
                delta = delta.dot(&w);
            }
        }
        if want_input {
            if let Some(n) = &self.input_norm {
                for mut row in delta.outer_iter_mut() {
                    row.iter_mut().zip(&n.scale).for_each(|(d, c)| *d *= c);
                }
            }
        }
        Ok((grad, want_input.then_some(delta)))
    }

    pub fn grad_params_tape(
        &self,
        tape: &Tape,
        upstream: &ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        Ok(self
            .backward_tape(tape, upstream, true, false)?
            .0
            .expect("requested"))
    }

    pub fn grad_params(
        &self,
        batch: &ArrayView2<'_, f64>,
        upstream: &ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        Ok(self
            .backward(batch, upstream, true, false)?
            .0
            .expect("requested"))
    }

    pub fn grad_input(
        &self,
        batch: &ArrayView2<'_, f64>,
        upstream: &ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        Ok(self
            .backward(batch, upstream, false, true)?
            .1
            .expect("requested"))
    }

    /// One RMSProp update:
    /// `acc <- decay acc + (1 - decay) g²`, `θ <- θ - lr g / (sqrt(acc) + eps)`.
    pub fn rmsprop_step(&mut self, grad: &[f64], config: &RmsPropConfig) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "rmsprop gradient",
                expected: self.params.len(),
                found: grad.len(),
            });
        }
        let RmsPropConfig {
            learning_rate,
            decay,
            epsilon,
        } = *config;
        for ((p, acc), g) in self.params.iter_mut().zip(self.rms.iter_mut()).zip(grad) {
            *acc = decay * *acc + (1.0 - decay) * g * g;
            *p -= learning_rate * g / (acc.sqrt() + epsilon);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            param_count: self.params.len(),
            input_norm: self.input_norm.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serialises");
        out.push(b'\n');
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::invalid("checkpoint has no header line"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!(
                "unexpected checkpoint format `{}`",
                header.format
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.param_count * 8
            || param_count(&header.layer_sizes) != header.param_count
        {
            return Err(Error::invalid(
                "checkpoint body length does not match its header",
            ));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut net = Self::from_parts(&header.layer_sizes, header.activations, params)?;
        net.set_input_norm(header.input_norm)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    /// 2-3-1 ReLU net with hand-picked weights.
    fn tiny() -> Mlp {
        let params = vec![
            // layer 0 weights (3x2)
            1.0, -1.0, //
            0.5, 2.0, //
            -1.0, 0.0, //
            // layer 0 bias
            0.0, 0.5, 1.0, //
            // layer 1 weights (1x3)
            1.0, -2.0, 3.0, //
            // layer 1 bias
            0.25,
        ];
        Mlp::from_parts(
            &[2, 3, 1],
            vec![Activation::Relu, Activation::Identity],
            params,
        )
        .unwrap()
    }

    #[test]
    fn param_count_formula() {
        let mut r = rng::seeded(0);
        let net = Mlp::new(
            &[3, 16, 8, 2],
            Activation::Relu,
            Activation::Identity,
            &mut r,
        )
        .unwrap();
        assert_eq!(net.num_params(), 4 * 16 + 17 * 8 + 9 * 2);
    }

    #[test]
    fn identity_layer_is_identity() {
        let net = Mlp::linear(&Array2::eye(3), &[0.0; 3]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.forward(&x.view()).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let net = Mlp::linear(&Array2::zeros((2, 3)), &[0.7, -0.2]).unwrap();
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let y = net.forward(&x.view()).unwrap();
        for row in y.outer_iter() {
            assert_eq!(row.to_vec(), vec![0.7, -0.2]);
        }
    }

    #[test]
    fn tiny_net_hand_value() {
        // x = (1, 2): z0 = (1-2, 0.5+4+0.5, -1+1) = (-1, 5, 0) -> relu (0, 5, 0)
        // y = 0 - 10 + 0 + 0.25 = -9.75
        let y = tiny().forward(&array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(y[[0, 0]], -9.75);
    }

    #[test]
    fn width_mismatch_rejected() {
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(
            tiny().forward(&x.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_layer_input_gradient_is_adjoint() {
        let w = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let net = Mlp::linear(&w, &[0.0, 1.0, 2.0]).unwrap();
        let x = array![[0.3, -0.7], [1.0, 2.0]];
        let up = array![[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]];
        let g = net.grad_input(&x.view(), &up.view()).unwrap();
        assert_eq!(g, up.dot(&w));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = tiny();
        let x = array![[1.0, 2.0], [-0.5, 0.1]];
        let up = Array2::zeros((2, 1));
        assert!(net
            .grad_params(&x.view(), &up.view())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(net
            .grad_input(&x.view(), &up.view())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let net = tiny();
        let x = array![[1.0, 2.0], [-0.5, 0.1]];
        let up = array![[0.3], [-1.1]];
        let g1 = net.grad_params(&x.view(), &up.view()).unwrap();
        let g2 = net.grad_params(&x.view(), &(&up * 2.0).view()).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let mut net = tiny();
        let before = net.params().to_vec();
        net.rmsprop_step(&vec![0.0; net.num_params()], &RmsPropConfig::default())
            .unwrap();
        assert_eq!(net.params(), before.as_slice());
    }

    #[test]
    fn rmsprop_first_step_and_steady_state() {
        let cfg = RmsPropConfig::default();
        let mut net = Mlp::from_parts(&[1, 1], vec![Activation::Identity], vec![0.0, 0.0]).unwrap();
        net.rmsprop_step(&[1.0, 0.0], &cfg).unwrap();
        let expected = -cfg.learning_rate / (0.1f64.sqrt() + cfg.epsilon);
        assert!((net.params()[0] - expected).abs() < 1e-18);
        let mut last = net.params()[0];
        let mut step = 0.0;
        for _ in 0..10_000 {
            net.rmsprop_step(&[3.7, 0.0], &cfg).unwrap();
            step = last - net.params()[0];
            last = net.params()[0];
        }
        assert!((step - cfg.learning_rate).abs() < 0.01 * cfg.learning_rate);
    }

    #[test]
    fn rmsprop_length_mismatch() {
        let mut net = tiny();
        assert!(net.rmsprop_step(&[1.0], &RmsPropConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = rng::seeded(9);
        let net = Mlp::new(&[2, 5, 3], Activation::Relu, Activation::Tanh, &mut r).unwrap();
        let back = Mlp::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.activations(), net.activations());
        let bytes = net.to_bytes();
        assert!(Mlp::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..header_end]).unwrap();
        assert_eq!(header["layer_sizes"], serde_json::json!([2, 5, 3]));
        assert_eq!(header["activations"], serde_json::json!(["relu", "tanh"]));
    }

    #[test]
    fn regression_smoke_test() {
        // y = x² on [-1, 1] with a 1-16-1 ReLU net.
        let mut r = rng::seeded(21);
        let mut net =
            Mlp::new(&[1, 16, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        let xs: Array2<f64> = Array2::from_shape_fn((64, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 63.0);
        let ys = xs.mapv(|x| x * x);
        let cfg = RmsPropConfig::with_learning_rate(3e-3);
        for _ in 0..5000 {
            let out = net.forward(&xs.view()).unwrap();
            let up = (&out - &ys) * (2.0 / 64.0);
            let g = net.grad_params(&xs.view(), &up.view()).unwrap();
            net.rmsprop_step(&g, &cfg).unwrap();
        }
        let out = net.forward(&xs.view()).unwrap();
        let mse = (&out - &ys).mapv(|v| v * v).mean().unwrap();
        assert!(mse < 1e-3, "mse {mse}");
    }
}
