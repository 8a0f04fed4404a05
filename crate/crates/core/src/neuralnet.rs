//! Fully connected Q-network: ReLU hidden layers, identity output, squared
//! error on the taken action's output only, plain SGD. Everything is `f64`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GSQN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Usage(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// Three hidden layers sized as multiples of the input width.
    pub fn scaled(input: usize, outputs: usize, factors: [usize; 3]) -> Self {
        Self {
            sizes: vec![
                input,
                factors[0] * input,
                factors[1] * input,
                factors[2] * input,
                outputs,
            ],
        }
    }

    pub fn input(&self) -> usize {
        self.sizes[0]
    }

    pub fn output(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in self.weights.chunks_exact(self.in_dim).enumerate() {
            out[o] = self.bias[o] + dot(row, input);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

/// Reusable activation buffers for one network shape.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: LayerSpec,
    layers: Vec<Layer>,
}

impl QNetwork {
    /// Uniform Glorot initialization, zero biases.
    pub fn init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = LayerSpec::new(spec.sizes.clone())?;
        let layers = spec
            .sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let mut sizes = vec![layers.first().map_or(0, |l| l.in_dim)];
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != sizes[i] || l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Usage(format!("layer {i} shape does not chain")));
            }
            sizes.push(l.out_dim);
        }
        Ok(Self {
            spec: LayerSpec::new(sizes)?,
            layers,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn workspace(&self) -> Workspace {
        let widest = *self.spec.sizes.iter().max().unwrap_or(&1);
        Workspace {
            acts: self.spec.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input() {
            return Err(Error::Usage(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.spec.input()
            )));
        }
        Ok(())
    }

    fn forward_ws<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        ws.acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            let out = &mut tail[0];
            layer.affine_into(&head[i], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        &ws.acts[last + 1]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        Ok(self.forward_ws(input, &mut ws).to_vec())
    }

    /// Forward pass reusing `ws`; the returned slice lives in the workspace.
    pub fn forward_with<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> Result<&'w [f64]> {
        self.check_input(input)?;
        Ok(self.forward_ws(input, ws))
    }

    fn check_target(&self, action: usize, target: f64) -> Result<()> {
        if !target.is_finite() {
            return Err(Error::Usage(format!("non-finite target {target}")));
        }
        if action >= self.spec.output() {
            return Err(Error::Usage(format!("action {action} has no output head")));
        }
        Ok(())
    }

    pub fn loss(&self, input: &[f64], action: usize, target: f64) -> Result<f64> {
        self.check_target(action, target)?;
        let q = self.forward(input)?[action];
        Ok((target - q) * (target - q))
    }

    /// Gradient of `(target - Q[action])^2` without touching the weights.
    pub fn gradient(&self, input: &[f64], action: usize, target: f64) -> Result<(f64, Gradients)> {
        self.check_input(input)?;
        self.check_target(action, target)?;
        let mut ws = self.workspace();
        let q = self.forward_ws(input, &mut ws)[action];
        let n = self.layers.len();
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let mut delta = vec![0.0; self.spec.output()];
        delta[action] = 2.0 * (q - target);
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let a_prev = &ws.acts[li];
            let mut delta_prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                grads.bias[li][o] = d;
                for i in 0..layer.in_dim {
                    grads.weights[li][o * layer.in_dim + i] = d * a_prev[i];
                    delta_prev[i] += layer.weights[o * layer.in_dim + i] * d;
                }
            }
            if li > 0 {
                for (dp, a) in delta_prev.iter_mut().zip(a_prev) {
                    if *a <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
            delta = delta_prev;
        }
        Ok(((target - q) * (target - q), grads))
    }

    /// One SGD step on `(target - Q[action])^2`; returns the pre-step loss.
    pub fn sgd_step(
        &mut self,
        input: &[f64],
        action: usize,
        target: f64,
        lr: f64,
        ws: &mut Workspace,
    ) -> Result<f64> {
        self.check_input(input)?;
        self.check_target(action, target)?;
        let q = self.forward_ws(input, ws)[action];
        let err = q - target;
        let n = self.layers.len();

        // Output layer: only the taken action's row has a nonzero delta.
        {
            let layer = &mut self.layers[n - 1];
            let d = 2.0 * err;
            let in_dim = layer.in_dim;
            let a_prev = &ws.acts[n - 1];
            let row = &mut layer.weights[action * in_dim..(action + 1) * in_dim];
            for i in 0..in_dim {
                ws.delta_prev[i] = row[i] * d;
                row[i] -= lr * d * a_prev[i];
            }
            layer.bias[action] -= lr * d;
            for i in 0..in_dim {
                if a_prev[i] <= 0.0 {
                    ws.delta_prev[i] = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }

        for li in (0..n - 1).rev() {
            let layer = &mut self.layers[li];
            let in_dim = layer.in_dim;
            let a_prev = &ws.acts[li];
            let delta = &ws.delta[..layer.out_dim];
            let delta_prev = &mut ws.delta_prev[..in_dim];
            delta_prev.iter_mut().for_each(|v| *v = 0.0);
            for (o, row) in layer.weights.chunks_exact_mut(in_dim).enumerate() {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let step = lr * d;
                for i in 0..in_dim {
                    delta_prev[i] += row[i] * d;
                    row[i] -= step * a_prev[i];
                }
                layer.bias[o] -= step;
            }
            if li > 0 {
                for i in 0..in_dim {
                    if a_prev[i] <= 0.0 {
                        delta_prev[i] = 0.0;
                    }
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
        Ok(err * err)
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &QNetwork) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Usage(format!(
                "cannot sync {:?} from {:?}",
                self.spec.sizes, other.spec.sizes
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
        }
        Ok(())
    }

    /// Binary checkpoint: magic, format version, layer widths, then per layer
    /// the row-major weights and the bias as little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.spec.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.spec.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Validation(format!("checkpoint: {m}"));
        let mut buf4 = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut buf4).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(buf4))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..n)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = LayerSpec::new(sizes).map_err(|_| bad("invalid widths"))?;
        let mut buf8 = [0u8; 8];
        let mut layers = Vec::with_capacity(n - 1);
        for w in spec.sizes.windows(2) {
            let mut take = |count: usize| -> Result<Vec<f64>> {
                (0..count)
                    .map(|_| {
                        r.read_exact(&mut buf8).map_err(|_| bad("truncated weights"))?;
                        Ok(f64::from_le_bytes(buf8))
                    })
                    .collect()
            };
            let weights = take(w[0] * w[1])?;
            let bias = take(w[1])?;
            layers.push(Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights,
                bias,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|_| bad("read failure"))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { spec, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn rng(i: u64) -> ChaCha8Rng {
        substream(11, Stream::Weights, i)
    }

    fn random_input(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    /// Straight-line re-implementation of the forward pass.
    fn naive_forward(net: &QNetwork, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        let n = net.layers().len();
        for (li, l) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut s = l.bias[o];
                for i in 0..l.in_dim {
                    s += l.weights[o * l.in_dim + i] * a[i];
                }
                z[o] = if li + 1 < n && s < 0.0 { 0.0 } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn init_shapes_and_zero_bias() {
        let spec = LayerSpec::new(vec![5, 10, 20, 10, 11]).unwrap();
        let net = QNetwork::init(&spec, &mut rng(0)).unwrap();
        let shapes: Vec<(usize, usize)> =
            net.layers().iter().map(|l| (l.out_dim, l.in_dim)).collect();
        assert_eq!(shapes, vec![(10, 5), (20, 10), (10, 20), (11, 10)]);
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        for l in net.layers() {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
        assert_eq!(net, QNetwork::init(&spec, &mut rng(0)).unwrap());
        assert!(LayerSpec::new(vec![3]).is_err());
        assert!(LayerSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = LayerSpec::new(vec![4, 6, 11]).unwrap();
        let mut net = QNetwork::init(&spec, &mut rng(0)).unwrap();
        for l in net.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 11]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let net = QNetwork::from_layers(vec![
            Layer { in_dim: 1, out_dim: 1, weights: vec![-3.0], bias: vec![0.0] },
            Layer { in_dim: 1, out_dim: 1, weights: vec![1.0], bias: vec![0.0] },
        ])
        .unwrap();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![0.0]);
        assert!(net.forward(&[2.0, 1.0]).is_err());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let spec = LayerSpec::scaled(7, 11, [2, 4, 2]);
        for seed in 0..10 {
            let mut r = rng(100 + seed);
            let net = QNetwork::init(&spec, &mut r).unwrap();
            let x = random_input(7, &mut r);
            let fast = net.forward(&x).unwrap();
            let slow = naive_forward(&net, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(fast, net.forward(&x).unwrap());
        }
    }

    fn perturb(net: &mut QNetwork, layer: usize, idx: usize, bias: bool, by: f64) {
        let l = &mut net.layers_mut()[layer];
        if bias {
            l.bias[idx] += by;
        } else {
            l.weights[idx] += by;
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let eps = 1e-5;
        for case in 0..24u64 {
            let mut r = rng(1000 + case);
            let width = 3 + (case as usize % 4);
            let spec = LayerSpec::scaled(width, 11, [2, 4, 2]);
            let mut net = QNetwork::init(&spec, &mut r).unwrap();
            for l in net.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
            }
            let x = random_input(width, &mut r);
            let action = r.random_range(0..11);
            let target = r.random_range(-5.0..5.0);
            let (_, grads) = net.gradient(&x, action, target).unwrap();
            let mut worst: f64 = 0.0;
            for li in 0..net.layers().len() {
                for (bias, count) in [(false, net.layers()[li].weights.len()), (true, net.layers()[li].bias.len())] {
                    for idx in 0..count {
                        let mut plus = net.clone();
                        perturb(&mut plus, li, idx, bias, eps);
                        let mut minus = net.clone();
                        perturb(&mut minus, li, idx, bias, -eps);
                        let fd = (plus.loss(&x, action, target).unwrap()
                            - minus.loss(&x, action, target).unwrap())
                            / (2.0 * eps);
                        let an = if bias { grads.bias[li][idx] } else { grads.weights[li][idx] };
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        worst = worst.max(rel);
                    }
                }
            }
            assert!(worst < 1e-4, "case {case}: relative error {worst}");
        }
    }

    #[test]
    fn fused_step_applies_the_gradient() {
        let mut r = rng(7);
        let spec = LayerSpec::scaled(5, 11, [2, 4, 2]);
        let net = QNetwork::init(&spec, &mut r).unwrap();
        let x = random_input(5, &mut r);
        let (loss, grads) = net.gradient(&x, 3, 2.5).unwrap();
        let mut stepped = net.clone();
        let mut ws = stepped.workspace();
        let lr = 0.01;
        let fused_loss = stepped.sgd_step(&x, 3, 2.5, lr, &mut ws).unwrap();
        assert!((loss - fused_loss).abs() < 1e-12);
        for (li, (before, after)) in net.layers().iter().zip(stepped.layers()).enumerate() {
            for i in 0..before.weights.len() {
                let expect = before.weights[i] - lr * grads.weights[li][i];
                assert!((after.weights[i] - expect).abs() < 1e-14);
            }
            for i in 0..before.bias.len() {
                let expect = before.bias[i] - lr * grads.bias[li][i];
                assert!((after.bias[i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_error_leaves_weights_unchanged() {
        let mut r = rng(8);
        let spec = LayerSpec::scaled(4, 11, [2, 4, 2]);
        let mut net = QNetwork::init(&spec, &mut r).unwrap();
        let x = random_input(4, &mut r);
        let q = net.forward(&x).unwrap()[6];
        let before = net.clone();
        let mut ws = net.workspace();
        let loss = net.sgd_step(&x, 6, q, 0.1, &mut ws).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
        assert!(net.sgd_step(&x, 6, f64::NAN, 0.1, &mut ws).is_err());
        assert!(net.sgd_step(&x, 11, 0.0, 0.1, &mut ws).is_err());
    }

    #[test]
    fn repeated_sample_loss_decreases() {
        let mut r = rng(9);
        let spec = LayerSpec::scaled(5, 11, [2, 4, 2]);
        let mut net = QNetwork::init(&spec, &mut r).unwrap();
        let x = random_input(5, &mut r);
        let mut ws = net.workspace();
        let losses: Vec<f64> = (0..500)
            .map(|_| net.sgd_step(&x, 2, -3.0, 0.0005, &mut ws).unwrap())
            .collect();
        for w in losses[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(losses[499] < losses[0]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let spec = LayerSpec::scaled(6, 11, [4, 8, 4]);
        let net = QNetwork::init(&spec, &mut rng(3)).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"GSQN");
        let back = QNetwork::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, net);
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert!(QNetwork::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(QNetwork::read_from(longer.as_slice()).is_err());
    }

    #[test]
    fn copy_requires_matching_spec() {
        let a = QNetwork::init(&LayerSpec::scaled(3, 11, [2, 4, 2]), &mut rng(1)).unwrap();
        let mut b = QNetwork::init(&LayerSpec::scaled(3, 11, [2, 4, 2]), &mut rng(2)).unwrap();
        b.copy_from(&a).unwrap();
        assert_eq!(a, b);
        let mut c = QNetwork::init(&LayerSpec::scaled(4, 11, [2, 4, 2]), &mut rng(2)).unwrap();
        assert!(c.copy_from(&a).is_err());
    }
}
