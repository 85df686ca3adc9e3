//! Small dense networks with a shared trunk and named output heads,
//! trained by backpropagation and Adam.
//!
//! Layers are stored flat: trunk layers first, then each head's hidden
//! layers followed by its output layer. Hidden layers use ReLU, output
//! layers are linear. Everything is `f64`.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ARCNET\x00\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl HeadSpec {
    pub fn new(name: impl Into<String>, hidden: Vec<usize>, outputs: usize) -> Self {
        Self {
            name: name.into(),
            hidden,
            outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input: usize,
    pub trunk: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::Shape("input width must be positive".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::Shape("network needs at least one head".into()));
        }
        if self.trunk.contains(&0) {
            return Err(Error::Shape("zero-width trunk layer".into()));
        }
        for h in &self.heads {
            if h.outputs == 0 || h.hidden.contains(&0) {
                return Err(Error::Shape(format!("head `{}` has a zero-width layer", h.name)));
            }
        }
        let mut names: Vec<&str> = self.heads.iter().map(|h| h.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.heads.len() {
            return Err(Error::Shape("duplicate head names".into()));
        }
        Ok(())
    }

    fn trunk_output(&self) -> usize {
        self.trunk.last().copied().unwrap_or(self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs x inputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    topology: Topology,
    layers: Vec<Layer>,
    trunk_len: usize,
    head_layers: Vec<Range<usize>>,
}

/// Inputs and per-head targets for one supervised update.
///
/// `weights`, when present, scales each squared error; a zero weight
/// removes that output from the loss (used to train only the taken action
/// of a Q-network).
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub inputs: Array2<f64>,
    pub targets: Vec<Array2<f64>>,
    pub weights: Option<Vec<Array2<f64>>>,
}

impl TrainBatch {
    pub fn new(inputs: Array2<f64>, targets: Vec<Array2<f64>>) -> Self {
        Self {
            inputs,
            targets,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Gradients with the same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// Entry `i` in the same order as [`DenseNet::param`].
    pub fn get(&self, mut i: usize) -> f64 {
        for (w, b) in &self.layers {
            if i < w.len() {
                return w.as_slice().expect("standard layout")[i];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl DenseNet {
    /// Seeded initialisation: weights uniform in `±sqrt(6 / fan_in)` for
    /// hidden layers and `±sqrt(1 / fan_in)` for output layers; biases zero.
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let fan_in = layer.weights.ncols() as f64;
            let limit = match layer.activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Identity => (1.0 / fan_in).sqrt(),
            };
            layer
                .weights
                .mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeros(topology: Topology) -> Result<Self> {
        topology.validate()?;
        let mut layers = Vec::new();
        let mut width = topology.input;
        for &w in &topology.trunk {
            layers.push(Layer::zeros(width, w, Activation::Relu));
            width = w;
        }
        let trunk_len = layers.len();
        let trunk_out = topology.trunk_output();
        let mut head_layers = Vec::new();
        for head in &topology.heads {
            let start = layers.len();
            let mut w_in = trunk_out;
            for &h in &head.hidden {
                layers.push(Layer::zeros(w_in, h, Activation::Relu));
                w_in = h;
            }
            layers.push(Layer::zeros(w_in, head.outputs, Activation::Identity));
            head_layers.push(start..layers.len());
        }
        Ok(Self {
            topology,
            layers,
            trunk_len,
            head_layers,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Output layer of the named head.
    pub fn head_output_layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        let idx = self.topology.heads.iter().position(|h| h.name == name)?;
        let last = self.head_layers[idx].end - 1;
        Some(&mut self.layers[last])
    }

    pub fn input_width(&self) -> usize {
        self.topology.input
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, Option<usize>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, Some(i), 0);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, None, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i`: each layer contributes its weights (row-major) then its biases.
    pub fn param(&self, i: usize) -> f64 {
        match self.locate(i) {
            (l, Some(w), _) => self.layers[l].weights.as_slice().expect("standard layout")[w],
            (l, None, b) => self.layers[l].bias[b],
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        match self.locate(i) {
            (l, Some(w), _) => {
                self.layers[l].weights.as_slice_mut().expect("standard layout")[w] = v
            }
            (l, None, b) => self.layers[l].bias[b] = v,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Hash of all parameter bit patterns; equal nets hash equal.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.topology.input.hash(&mut h);
        for p in self.params() {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.topology.input {
            return Err(Error::Shape(format!(
                "input has width {width}, network expects {}",
                self.topology.input
            )));
        }
        Ok(())
    }

    /// Outputs of every head, in topology order.
    pub fn forward_heads(&self, input: &[f64]) -> Result<Vec<Array1<f64>>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let outs = self.forward_batch(x)?;
        Ok(outs.into_iter().map(|o| o.row(0).to_owned()).collect())
    }

    /// Outputs keyed by head name.
    pub fn forward(&self, input: &[f64]) -> Result<BTreeMap<String, Vec<f64>>> {
        let outs = self.forward_heads(input)?;
        Ok(self
            .topology
            .heads
            .iter()
            .zip(outs)
            .map(|(h, o)| (h.name.clone(), o.to_vec()))
            .collect())
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(inputs.ncols())?;
        let mut a = inputs.to_owned();
        for (idx, layer) in self.layers[..self.trunk_len].iter().enumerate() {
            a = layer_forward(layer, a.view(), idx)?;
        }
        let mut outs = Vec::with_capacity(self.head_layers.len());
        for range in &self.head_layers {
            let mut h = a.clone();
            for idx in range.clone() {
                h = layer_forward(&self.layers[idx], h.view(), idx)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    fn check_batch(&self, batch: &TrainBatch) -> Result<()> {
        let n = batch.inputs.nrows();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        self.check_input(batch.inputs.ncols())?;
        if batch.targets.len() != self.topology.heads.len() {
            return Err(Error::Shape(format!(
                "{} target matrices for {} heads",
                batch.targets.len(),
                self.topology.heads.len()
            )));
        }
        for (t, h) in batch.targets.iter().zip(&self.topology.heads) {
            if t.dim() != (n, h.outputs) {
                return Err(Error::Shape(format!(
                    "head `{}` targets are {:?}, expected {:?}",
                    h.name,
                    t.dim(),
                    (n, h.outputs)
                )));
            }
        }
        if let Some(ws) = &batch.weights {
            if ws.len() != batch.targets.len()
                || ws.iter().zip(&batch.targets).any(|(w, t)| w.dim() != t.dim())
            {
                return Err(Error::Shape("loss weights do not match targets".into()));
            }
        }
        let finite = batch.inputs.iter().all(|v| v.is_finite())
            && batch.targets.iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric { layer: 0 });
        }
        Ok(())
    }

    /// Summed per-head squared error, averaged over the batch.
    pub fn loss(&self, batch: &TrainBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let outs = self.forward_batch(batch.inputs.view())?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (h, (y, t)) in outs.iter().zip(&batch.targets).enumerate() {
            let mut diff = y - t;
            diff.mapv_inplace(|d| d * d);
            if let Some(ws) = &batch.weights {
                diff *= &ws[h];
            }
            loss += diff.sum() / n;
        }
        Ok(loss)
    }

    /// Loss and gradients for a batch.
    pub fn backward(&self, batch: &TrainBatch) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;

        // forward with caches: (layer input, pre-activation)
        let mut cache: Vec<Option<(Array2<f64>, Array2<f64>)>> = vec![None; self.layers.len()];
        let mut a = batch.inputs.clone();
        for idx in 0..self.trunk_len {
            let z = pre_activation(&self.layers[idx], a.view(), idx)?;
            let mut out = z.clone();
            self.layers[idx].activation.apply(&mut out);
            cache[idx] = Some((a, z));
            a = out;
        }
        let trunk_out = a;

        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let mut d_trunk = Array2::<f64>::zeros(trunk_out.dim());
        for (h, range) in self.head_layers.iter().enumerate() {
            let mut a = trunk_out.clone();
            for idx in range.clone() {
                let z = pre_activation(&self.layers[idx], a.view(), idx)?;
                let mut out = z.clone();
                self.layers[idx].activation.apply(&mut out);
                cache[idx] = Some((a, z));
                a = out;
            }
            let mut diff = &a - &batch.targets[h];
            let sq = diff.mapv(|d| d * d);
            if let Some(ws) = &batch.weights {
                loss += (sq * &ws[h]).sum() / n;
                diff *= &ws[h];
            } else {
                loss += sq.sum() / n;
            }
            let mut delta = diff * (2.0 / n);
            for idx in range.clone().rev() {
                delta = self.backprop_layer(idx, delta, cache[idx].as_ref().unwrap(), &mut grads);
            }
            d_trunk += &delta;
        }
        let mut delta = d_trunk;
        for idx in (0..self.trunk_len).rev() {
            delta = self.backprop_layer(idx, delta, cache[idx].as_ref().unwrap(), &mut grads);
        }
        Ok((loss, grads))
    }

    /// `delta` is dL/d(output) of layer `idx`; returns dL/d(input).
    fn backprop_layer(
        &self,
        idx: usize,
        mut delta: Array2<f64>,
        (input, z): &(Array2<f64>, Array2<f64>),
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let layer = &self.layers[idx];
        if layer.activation == Activation::Relu {
            delta.zip_mut_with(z, |d, &zv| {
                if zv <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let (gw, gb) = &mut grads.layers[idx];
        *gw += &delta.t().dot(input);
        *gb += &delta.sum_axis(Axis(0));
        delta.dot(&layer.weights)
    }

    /// One Adam step.
    pub fn apply_update(&mut self, grads: &Gradients, opt: &mut Adam) {
        opt.step(self, grads);
    }

    pub fn write_checkpoint(&self, mut out: impl Write) -> std::io::Result<()> {
        let t = &self.topology;
        out.write_all(MAGIC)?;
        let u32le = |v: usize| (v as u32).to_le_bytes();
        out.write_all(&u32le(t.input))?;
        out.write_all(&u32le(t.trunk.len()))?;
        for &w in &t.trunk {
            out.write_all(&u32le(w))?;
        }
        out.write_all(&u32le(t.heads.len()))?;
        for h in &t.heads {
            out.write_all(&u32le(h.name.len()))?;
            out.write_all(h.name.as_bytes())?;
            out.write_all(&u32le(h.hidden.len()))?;
            for &w in &h.hidden {
                out.write_all(&u32le(w))?;
            }
            out.write_all(&u32le(h.outputs))?;
        }
        out.write_all(&(self.param_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.param_count() * 8);
        for p in self.params() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&buf)
    }

    /// Load a checkpoint; with `expected`, the stored topology must match it.
    pub fn read_checkpoint(mut input: impl Read, expected: Option<&Topology>) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let read_u32 = |input: &mut dyn Read| -> Result<usize> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| bad("truncated topology"))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        const LIMIT: usize = 1 << 20;
        let input_w = read_u32(&mut input)?;
        let n_trunk = read_u32(&mut input)?;
        if n_trunk > 64 {
            return Err(bad("implausible trunk depth"));
        }
        let trunk = (0..n_trunk)
            .map(|_| read_u32(&mut input))
            .collect::<Result<Vec<_>>>()?;
        let n_heads = read_u32(&mut input)?;
        if n_heads > 64 {
            return Err(bad("implausible head count"));
        }
        let mut heads = Vec::new();
        for _ in 0..n_heads {
            let len = read_u32(&mut input)?;
            if len > 256 {
                return Err(bad("implausible head name"));
            }
            let mut name = vec![0u8; len];
            input.read_exact(&mut name).map_err(|_| bad("truncated head name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("head name is not utf-8"))?;
            let n_hidden = read_u32(&mut input)?;
            if n_hidden > 64 {
                return Err(bad("implausible head depth"));
            }
            let hidden = (0..n_hidden)
                .map(|_| read_u32(&mut input))
                .collect::<Result<Vec<_>>>()?;
            let outputs = read_u32(&mut input)?;
            heads.push(HeadSpec { name, hidden, outputs });
        }
        let topology = Topology {
            input: input_w,
            trunk,
            heads,
        };
        if input_w > LIMIT || topology.trunk.iter().any(|&w| w > LIMIT) {
            return Err(bad("implausible layer width"));
        }
        if let Some(exp) = expected {
            if exp != &topology {
                return Err(Error::Checkpoint(format!(
                    "topology mismatch: file has {topology:?}, expected {exp:?}"
                )));
            }
        }
        let mut net = Self::zeros(topology)?;
        let mut count = [0u8; 8];
        input.read_exact(&mut count).map_err(|_| bad("truncated parameter count"))?;
        if u64::from_le_bytes(count) as usize != net.param_count() {
            return Err(bad("parameter count does not match topology"));
        }
        let mut buf = vec![0u8; net.param_count() * 8];
        input.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
        let mut values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for layer in &mut net.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = values.next().expect("count checked");
                if !w.is_finite() {
                    return Err(bad("non-finite parameter"));
                }
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Topology>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file), expected)
    }
}

fn pre_activation(layer: &Layer, input: ArrayView2<f64>, idx: usize) -> Result<Array2<f64>> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: idx });
    }
    Ok(z)
}

fn layer_forward(layer: &Layer, input: ArrayView2<f64>, idx: usize) -> Result<Array2<f64>> {
    let mut z = pre_activation(layer, input, idx)?;
    layer.activation.apply(&mut z);
    Ok(z)
}

/// Adam optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        self.steps += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = self.steps as i32;
        let lr = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let adam = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.first.layers[i];
            let (vw, vb) = &mut self.second.layers[i];
            Zip::from(&mut layer.weights).and(gw).and(mw).and(vw).for_each(adam);
            Zip::from(&mut layer.bias).and(gb).and(mb).and(vb).for_each(adam);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn split_topology() -> Topology {
        Topology {
            input: 5,
            trunk: vec![6, 6],
            heads: vec![HeadSpec::new("vx", vec![4], 1), HeadSpec::new("vy", vec![4], 1)],
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(split_topology()).unwrap();
        let out = net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(out["vx"], vec![0.0]);
        assert_eq!(out["vy"], vec![0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let topo = Topology {
            input: 3,
            trunk: vec![],
            heads: vec![HeadSpec::new("out", vec![], 3)],
        };
        let mut net = DenseNet::zeros(topo).unwrap();
        net.layers[0].weights = Array2::eye(3);
        let out = net.forward(&[0.25, -4.0, 7.5]).unwrap();
        assert_eq!(out["out"], vec![0.25, -4.0, 7.5]);
    }

    #[test]
    fn forward_is_pure() {
        let net = DenseNet::new(split_topology(), 42).unwrap();
        let x = [0.3, -0.1, 0.7, 0.0, 1.0];
        let first = net.forward(&x).unwrap();
        for _ in 0..100 {
            assert_eq!(net.forward(&x).unwrap(), first);
        }
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let net = DenseNet::new(split_topology(), 1).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_weights_report_layer() {
        let mut net = DenseNet::new(split_topology(), 1).unwrap();
        net.layers[1].weights[[0, 0]] = f64::NAN;
        let batch = TrainBatch::new(array![[1.0, 1.0, 1.0, 1.0, 1.0]], vec![array![[0.0]], array![[0.0]]]);
        assert!(matches!(net.backward(&batch), Err(Error::Numeric { layer: 1 })));
    }

    #[test]
    fn perfect_targets_give_zero_loss_and_gradient() {
        let net = DenseNet::new(split_topology(), 3).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4, 0.5], [1.0, -1.0, 0.5, 0.0, 2.0]];
        let targets = net.forward_batch(x.view()).unwrap();
        let (loss, grads) = net.backward(&TrainBatch::new(x, targets)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn doubling_residuals_quadruples_loss() {
        let net = DenseNet::new(split_topology(), 5).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4, 0.5], [1.0, -1.0, 0.5, 0.0, 2.0]];
        let y = net.forward_batch(x.view()).unwrap();
        let t1: Vec<_> = y.iter().map(|o| o + 0.7).collect();
        let t2: Vec<_> = y.iter().map(|o| o + 1.4).collect();
        let l1 = net.loss(&TrainBatch::new(x.clone(), t1)).unwrap();
        let l2 = net.loss(&TrainBatch::new(x, t2)).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2.max(1.0));
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut net = DenseNet::new(split_topology(), 9).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, 1e-3);
        net.apply_update(&Gradients::zeros_like(&net), &mut adam);
        assert_eq!(net, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn update_moves_toward_quadratic_minimum() {
        // loss = (w * 1 - 3)^2 on a single linear weight starting at 0
        let topo = Topology {
            input: 1,
            trunk: vec![],
            heads: vec![HeadSpec::new("y", vec![], 1)],
        };
        let mut net = DenseNet::zeros(topo).unwrap();
        let mut adam = Adam::new(&net, 1e-3);
        let batch = TrainBatch::new(array![[1.0]], vec![array![[3.0]]]);
        let before = net.loss(&batch).unwrap();
        let (_, g) = net.backward(&batch).unwrap();
        net.apply_update(&g, &mut adam);
        assert!(net.param(0) > 0.0);
        assert!(net.loss(&batch).unwrap() < before);
    }

    #[test]
    fn fits_y_equals_two_x() {
        let topo = Topology {
            input: 1,
            trunk: vec![],
            heads: vec![HeadSpec::new("y", vec![], 1)],
        };
        let mut net = DenseNet::zeros(topo).unwrap();
        let mut adam = Adam::new(&net, 1e-2);
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let x = Array2::from_shape_vec((16, 1), xs.clone()).unwrap();
        let y = Array2::from_shape_vec((16, 1), xs.iter().map(|v| 2.0 * v).collect()).unwrap();
        let batch = TrainBatch::new(x, vec![y]);
        for _ in 0..500 {
            let (_, g) = net.backward(&batch).unwrap();
            net.apply_update(&g, &mut adam);
        }
        assert!((net.param(0) - 2.0).abs() < 0.05, "weight {}", net.param(0));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = DenseNet::new(split_topology(), 17).unwrap();
        let b = DenseNet::new(split_topology(), 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a, DenseNet::new(split_topology(), 18).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let net = DenseNet::new(split_topology(), 4).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = DenseNet::read_checkpoint(&buf[..], Some(&split_topology())).unwrap();
        assert_eq!(back, net);

        let mut other = split_topology();
        other.trunk = vec![6, 7];
        assert!(matches!(
            DenseNet::read_checkpoint(&buf[..], Some(&other)),
            Err(Error::Checkpoint(_))
        ));
        assert!(DenseNet::read_checkpoint(&buf[..buf.len() - 3], None).is_err());
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(DenseNet::read_checkpoint(&corrupt[..], None).is_err());
    }
}
