//! Small dense feedforward engine.
//!
//! Hidden layers use ReLU; the final layer is either linear (scalar scorers)
//! or ReLU (the shared trunk of the multi-task model). The first layer accepts
//! sparse Bag-of-Words input, everything downstream is dense. Parameters are
//! `f64`; checkpoints narrow them to `f32`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::SparseVec;
use crate::{Error, Result};

pub const POSITIVE: f64 = 1.0;
pub const NEGATIVE: f64 = -1.0;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 + exp(-y * score))`.
pub fn logistic_loss(score: f64, y: f64) -> f64 {
    softplus(-y * score)
}

/// Surrogate losses usable inside the PU risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    Logistic,
    /// `sigmoid(-y * score)`, bounded in (0, 1).
    Sigmoid,
}

impl Loss {
    pub fn value(self, score: f64, y: f64) -> f64 {
        match self {
            Loss::Logistic => logistic_loss(score, y),
            Loss::Sigmoid => sigmoid(-y * score),
        }
    }

    /// Derivative with respect to `score`.
    pub fn derivative(self, score: f64, y: f64) -> f64 {
        let s = sigmoid(-y * score);
        match self {
            Loss::Logistic => -y * s,
            Loss::Sigmoid => -y * s * (1.0 - s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "sigmoid" => Ok(Loss::Sigmoid),
            other => Err(Error::config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Probability view of a score, clipped into `[epsilon, 1 - epsilon]`.
/// Only for reporting; training never sees the clamp.
pub fn clamp_prob(score: f64, epsilon: f64) -> f64 {
    sigmoid(score).clamp(epsilon, 1.0 - epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`, zero biases.
    #[default]
    HeUniform,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub seed: u64,
    pub init: Init,
    pub epsilon: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seed: 0,
            init: Init::HeUniform,
            epsilon: 1e-5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::config(format!(
                "epsilon {} must lie in (0, 0.5)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Fully connected layer; weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn apply_dense(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let dot: f64 = self.row(o).iter().zip(x).map(|(w, v)| w * v).sum();
            *y = dot + self.bias[o];
        }
    }

    fn apply_sparse(&self, x: &SparseVec, out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = self.row(o);
            let dot: f64 = x.iter().map(|(i, v)| row[i] * v).sum();
            *y = dot + self.bias[o];
        }
    }

    /// `W^T delta`.
    fn transpose_apply(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (acc, w) in out.iter_mut().zip(self.row(o)) {
                *acc += w * d;
            }
        }
        out
    }
}

/// Network input: Bag-of-Words for the first stage, dense activations after.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Sparse(&'a SparseVec),
    Dense(&'a [f64]),
}

#[derive(Debug, Clone)]
enum StoredInput {
    Sparse(SparseVec),
    Dense(Vec<f64>),
}

/// Activations recorded by [`Mlp::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    input: StoredInput,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    dims: Vec<usize>,
    generation: u64,
    relu_output: bool,
}

impl Cache {
    /// Output of the final layer.
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }

    /// Scalar output of a scoring network.
    pub fn score(&self) -> f64 {
        self.output()[0]
    }

    /// Smallest `|pre-activation|` over ReLU units; a finite-difference probe
    /// closer than this to a kink is unreliable.
    pub fn relu_margin(&self) -> f64 {
        let relu_layers = if self.relu_output {
            self.pre.len()
        } else {
            self.pre.len() - 1
        };
        self.pre[..relu_layers]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Multilayer perceptron with ReLU hidden units.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    relu_output: bool,
    /// Bumped on every parameter mutation to detect stale caches.
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.relu_output == other.relu_output && self.layers == other.layers
    }
}

impl Mlp {
    /// `dims` lists layer widths, input first. `relu_output` applies ReLU to
    /// the final layer as well.
    pub fn new(dims: &[usize], relu_output: bool, cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        if dims.len() < 2 {
            return Err(Error::config("a network needs at least two layer widths"));
        }
        if dims.contains(&0) {
            return Err(Error::config(format!("zero layer width in {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                if cfg.init == Init::HeUniform {
                    let bound = (6.0 / w[0] as f64).sqrt();
                    for p in &mut layer.weights {
                        *p = rng.random_range(-bound..bound);
                    }
                }
                layer
            })
            .collect();
        Ok(Mlp {
            layers,
            relu_output,
            generation: 0,
        })
    }

    /// Scalar scoring network: final width 1, linear output.
    pub fn scorer(dims: &[usize], cfg: &NetConfig) -> Result<Self> {
        if dims.last() != Some(&1) {
            return Err(Error::config(format!(
                "scoring network must end in width 1, got {dims:?}"
            )));
        }
        Self::new(dims, false, cfg)
    }

    /// Rebuilds a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>, relu_output: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("no layers"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::config(format!("layer {i} has inconsistent shape")));
            }
            if i > 0 && layers[i - 1].out_dim != layer.in_dim {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].out_dim,
                    got: layer.in_dim,
                });
            }
        }
        Ok(Mlp {
            layers,
            relu_output,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn relu_output(&self) -> bool {
        self.relu_output
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in layer order, weights before biases within a layer.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn forward(&self, input: Input<'_>) -> Result<Cache> {
        let got = match input {
            Input::Sparse(x) => x.dim(),
            Input::Dense(x) => x.len(),
        };
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            match (l, input) {
                (0, Input::Sparse(x)) => layer.apply_sparse(x, &mut out),
                (0, Input::Dense(x)) => layer.apply_dense(x, &mut out),
                _ => layer.apply_dense(&outputs[l - 1], &mut out),
            }
            pre.push(out.clone());
            if l < last || self.relu_output {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            outputs.push(out);
        }
        let input = match input {
            Input::Sparse(x) => StoredInput::Sparse(x.clone()),
            Input::Dense(x) => StoredInput::Dense(x.to_vec()),
        };
        Ok(Cache {
            input,
            pre,
            outputs,
            dims: self.dims(),
            generation: self.generation,
            relu_output: self.relu_output,
        })
    }

    /// Scalar score of a sparse input.
    pub fn score(&self, x: &SparseVec) -> Result<f64> {
        Ok(self.forward(Input::Sparse(x))?.score())
    }

    /// Accumulates into `grads` the gradient of `upstream · output` and
    /// returns the gradient with respect to a dense input (empty for sparse
    /// input). The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &Cache, upstream: &[f64], grads: &mut Grads) -> Result<Vec<f64>> {
        if cache.generation != self.generation || cache.dims != self.dims() {
            return Err(Error::StaleCache(format!(
                "cache from generation {} dims {:?}, network at generation {} dims {:?}",
                cache.generation,
                cache.dims,
                self.generation,
                self.dims()
            )));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        grads.check_shape(self)?;

        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        if self.relu_output {
            mask_relu(&mut delta, &cache.outputs[last]);
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                match (l, &cache.input) {
                    (0, StoredInput::Sparse(x)) => {
                        for (i, v) in x.iter() {
                            row[i] += d * v;
                        }
                    }
                    (0, StoredInput::Dense(x)) => {
                        for (g, v) in row.iter_mut().zip(x) {
                            *g += d * v;
                        }
                    }
                    _ => {
                        for (g, v) in row.iter_mut().zip(&cache.outputs[l - 1]) {
                            *g += d * v;
                        }
                    }
                }
            }
            if l > 0 {
                let mut upstream = layer.transpose_apply(&delta);
                mask_relu(&mut upstream, &cache.outputs[l - 1]);
                delta = upstream;
            } else if let StoredInput::Dense(_) = cache.input {
                return Ok(layer.transpose_apply(&delta));
            }
        }
        Ok(Vec::new())
    }
}

fn mask_relu(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Parameter-shaped buffer: gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn check_shape(&self, net: &Mlp) -> Result<()> {
        let ok = self.weights.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].len() == l.weights.len() && self.biases[i].len() == l.bias.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::config("gradient buffer does not match network shape"))
        }
    }

    pub fn clear(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn max_abs_diff(&self, other: &Grads) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Coefficient of the `weight_decay * param` term added to every gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Optimizer state bound to one network.
#[derive(Debug, Clone)]
pub struct OptimState {
    cfg: OptimConfig,
    first: Grads,
    second: Grads,
    steps: u64,
}

impl OptimState {
    pub fn new(cfg: OptimConfig, net: &Mlp) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimState {
            cfg,
            first: Grads::zeros_like(net),
            second: Grads::zeros_like(net),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Rejects non-finite gradients before touching parameters.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<()> {
        grads.check_shape(net)?;
        if let Some((i, _)) = grads.values().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.steps += 1;
        let cfg = self.cfg;
        let (bc1, bc2) = (
            1.0 - cfg.beta1.powi(self.steps.min(i32::MAX as u64) as i32),
            1.0 - cfg.beta2.powi(self.steps.min(i32::MAX as u64) as i32),
        );
        let params = net
            .layers_mut()
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let moments = self.first.values_mut().zip(self.second.values_mut());
        for ((p, g), (m, v)) in params.zip(grads.values()).zip(moments) {
            let g = g + cfg.weight_decay * *p;
            match cfg.kind {
                OptimizerKind::Sgd => *p -= cfg.lr * g,
                OptimizerKind::Adam => {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(seed: u64) -> NetConfig {
        NetConfig {
            seed,
            ..Default::default()
        }
    }

    fn sparse(dim: usize, pairs: &[(usize, f64)]) -> SparseVec {
        SparseVec::from_pairs(dim, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn logistic_values() {
        assert_abs_diff_eq!(logistic_loss(0.0, 1.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(logistic_loss(2.0, 1.0), 0.126_928_011_042_972_5, epsilon = 1e-15);
        assert_abs_diff_eq!(logistic_loss(2.0, -1.0), 2.126_928_011_042_972_5, epsilon = 1e-14);
        assert!(logistic_loss(-1e6, 1.0).is_finite());
        assert_eq!(logistic_loss(1e6, 1.0), 0.0);
    }

    #[test]
    fn clamp_prob_bounds() {
        assert_eq!(clamp_prob(0.0, 0.01), 0.5);
        assert_abs_diff_eq!(clamp_prob(1e9, 0.01), 0.99);
        assert_abs_diff_eq!(clamp_prob(-1e9, 0.01), 0.01);
    }

    #[test]
    fn zero_network_scores_zero() {
        let net = Mlp::scorer(
            &[4, 3, 1],
            &NetConfig {
                init: Init::Zeros,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(net.score(&sparse(4, &[(0, 3.0), (2, 1.0)])).unwrap(), 0.0);
    }

    #[test]
    fn single_layer_arithmetic_and_gradient() {
        let layer = Layer {
            in_dim: 2,
            out_dim: 1,
            weights: vec![1.0, -1.0],
            bias: vec![0.5],
        };
        let net = Mlp::from_layers(vec![layer], false).unwrap();
        let x = sparse(2, &[(0, 2.0), (1, 1.0)]);
        let cache = net.forward(Input::Sparse(&x)).unwrap();
        assert_eq!(cache.score(), 1.5);
        let mut g = Grads::zeros_like(&net);
        net.backward(&cache, &[1.0], &mut g).unwrap();
        assert_eq!(g.weights[0], [2.0, 1.0]);
        assert_eq!(g.biases[0], [1.0]);
    }

    #[test]
    fn first_layer_homogeneity() {
        // One linear layer with zero bias: doubling weights doubles the score.
        let mut net = Mlp::scorer(&[3, 1], &cfg(5)).unwrap();
        let x = sparse(3, &[(0, 1.0), (2, 2.0)]);
        let before = net.score(&x).unwrap();
        for w in &mut net.layers_mut()[0].weights {
            *w *= 2.0;
        }
        assert_abs_diff_eq!(net.score(&x).unwrap(), 2.0 * before, epsilon = 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = Mlp::scorer(&[5, 4, 3, 1], &cfg(1)).unwrap();
        let x = sparse(5, &[(1, 1.0), (4, 2.0)]);
        let cache = net.forward(Input::Sparse(&x)).unwrap();
        let mut g = Grads::zeros_like(&net);
        net.backward(&cache, &[0.0], &mut g).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Mlp::scorer(&[3, 2, 1], &cfg(1)).unwrap();
        let x = sparse(3, &[(0, 1.0)]);
        let cache = net.forward(Input::Sparse(&x)).unwrap();
        let mut g = Grads::zeros_like(&net);
        let mut opt = OptimState::new(OptimConfig::sgd(0.1), &net).unwrap();
        opt.step(&mut net, &g.clone()).unwrap();
        assert!(matches!(
            net.backward(&cache, &[1.0], &mut g),
            Err(Error::StaleCache(_))
        ));
        let other = Mlp::scorer(&[3, 4, 1], &cfg(1)).unwrap();
        let c2 = other.forward(Input::Sparse(&x)).unwrap();
        assert!(net.backward(&c2, &[1.0], &mut g).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::scorer(&[3, 1], &cfg(1)).unwrap();
        assert!(matches!(
            net.score(&SparseVec::empty(4)),
            Err(Error::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn param_count_formula() {
        let net = Mlp::scorer(&[7, 5, 3, 1], &cfg(0)).unwrap();
        assert_eq!(net.param_count(), 7 * 5 + 5 + 5 * 3 + 3 + 3 + 1);
        assert_eq!(net.params().count(), net.param_count());
    }

    #[test]
    fn sgd_update_rules() {
        let mut net = Mlp::scorer(&[3, 2, 1], &cfg(3)).unwrap();
        let before: Vec<f64> = net.params().collect();
        let mut opt = OptimState::new(OptimConfig::sgd(0.1), &net).unwrap();
        let zero = Grads::zeros_like(&net);
        opt.step(&mut net, &zero).unwrap();
        assert_eq!(net.params().collect::<Vec<_>>(), before);

        let mut g = Grads::zeros_like(&net);
        for (i, w) in g.weights.iter_mut().flatten().enumerate() {
            *w = 0.01 * i as f64 - 0.03;
        }
        let expected: Vec<f64> = before
            .iter()
            .zip(g.values())
            .map(|(p, g)| p - 0.1 * g)
            .collect();
        opt.step(&mut net, &g).unwrap();
        assert_eq!(net.params().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut net = Mlp::scorer(&[3, 2, 1], &cfg(3)).unwrap();
        let norm = |n: &Mlp| n.params().map(|p| p * p).sum::<f64>();
        let before = norm(&net);
        let mut opt = OptimState::new(
            OptimConfig {
                weight_decay: 0.5,
                ..OptimConfig::sgd(0.1)
            },
            &net,
        )
        .unwrap();
        let zero = Grads::zeros_like(&net);
        opt.step(&mut net, &zero).unwrap();
        assert!(norm(&net) < before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = Mlp::scorer(&[2, 1], &cfg(0)).unwrap();
        let before = net.clone();
        let mut g = Grads::zeros_like(&net);
        g.biases[0][0] = f64::NAN;
        let mut opt = OptimState::new(OptimConfig::default(), &net).unwrap();
        assert!(matches!(opt.step(&mut net, &g), Err(Error::NonFinite(_))));
        assert_eq!(net.params().collect::<Vec<_>>(), before.params().collect::<Vec<_>>());
    }

    #[test]
    fn invalid_configs() {
        assert!(Mlp::scorer(&[3, 2], &cfg(0)).is_err());
        assert!(Mlp::new(
            &[3, 1],
            false,
            &NetConfig {
                epsilon: 0.5,
                ..Default::default()
            }
        )
        .is_err());
        let net = Mlp::scorer(&[2, 1], &cfg(0)).unwrap();
        assert!(OptimState::new(OptimConfig::sgd(0.0), &net).is_err());
        assert!(OptimState::new(
            OptimConfig {
                weight_decay: -1.0,
                ..Default::default()
            },
            &net
        )
        .is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Mlp::scorer(&[6, 4, 1], &cfg(9)).unwrap();
        let b = Mlp::scorer(&[6, 4, 1], &cfg(9)).unwrap();
        let c = Mlp::scorer(&[6, 4, 1], &cfg(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn finite_difference_check(net: &Mlp, x: &SparseVec, upstream: f64) -> f64 {
        let cache = net.forward(Input::Sparse(x)).unwrap();
        let mut g = Grads::zeros_like(net);
        net.backward(&cache, &[upstream], &mut g).unwrap();
        let analytic: Vec<f64> = g.values().collect();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        let n = net.param_count();
        for k in 0..n {
            let eval = |probe: &mut Mlp, delta: f64| {
                let (mut l, mut off) = (0, k);
                loop {
                    let layer = &probe.layers[l];
                    let size = layer.weights.len() + layer.bias.len();
                    if off < size {
                        break;
                    }
                    off -= size;
                    l += 1;
                }
                let layer = &mut probe.layers_mut()[l];
                let wl = layer.weights.len();
                let p = if off < wl {
                    &mut layer.weights[off]
                } else {
                    &mut layer.bias[off - wl]
                };
                *p += delta;
            };
            eval(&mut probe, h);
            let up = upstream * probe.score(x).unwrap();
            eval(&mut probe, -2.0 * h);
            let down = upstream * probe.score(x).unwrap();
            eval(&mut probe, h);
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn backward_matches_finite_differences(
            seed in 0u64..1000,
            hidden in 1usize..8,
            depth in 1usize..3,
            upstream in -2.0f64..2.0,
            x in proptest::collection::vec(0.0f64..3.0, 5),
        ) {
            let mut dims = vec![5];
            dims.extend(std::iter::repeat_n(hidden, depth));
            dims.push(1);
            let net = Mlp::scorer(&dims, &cfg(seed)).unwrap();
            let xs = SparseVec::from_pairs(5, x.iter().copied().enumerate()).unwrap();
            let cache = net.forward(Input::Sparse(&xs)).unwrap();
            prop_assume!(cache.relu_margin() > 1e-2);
            prop_assert!(finite_difference_check(&net, &xs, upstream) < 1e-4);
        }

        #[test]
        fn logistic_symmetry_and_monotonicity(z in -50.0f64..50.0, dz in 0.0f64..5.0) {
            prop_assert_eq!(logistic_loss(z, -1.0), logistic_loss(-z, 1.0));
            prop_assert!(logistic_loss(z, 1.0) >= 0.0);
            prop_assert!(logistic_loss(z + dz, 1.0) <= logistic_loss(z, 1.0));
        }
    }
}
