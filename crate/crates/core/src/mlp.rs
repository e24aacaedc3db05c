//! Feedforward classifier over fixed-length feature vectors: Glorot-uniform
//! init, tanh/relu hidden layers, two-way softmax output, cross-entropy plus
//! L2 loss, mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            activation: Activation::Tanh,
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.to_string()));
        if self.layer_sizes.len() < 3 {
            return bad("need an input layer, at least one hidden layer and an output layer");
        }
        if self.layer_sizes.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if self.layer_sizes.last() != Some(&2) {
            return bad("output layer must have size 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected} inputs, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
}

/// Dense layer; `weights` is row-major `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.fan_in, self.fan_out)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    pub report: TrainingReport,
}

/// Anything that maps a feature vector to (p_TF, p_TI).
pub trait Scorer {
    fn input_dim(&self) -> usize;
    fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2], MlpError>;
}

/// Gradients laid out like the model's layers.
pub type Gradients = Vec<Layer>;

pub fn init(cfg: &MlpConfig) -> Result<MlpModel, MlpError> {
    cfg.validate()?;
    let mut r = rng(cfg.seed);
    let layers = cfg
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut l = Layer::zeros(fan_in, fan_out);
            for x in &mut l.weights {
                *x = r.random_range(-limit..=limit);
            }
            l
        })
        .collect();
    Ok(MlpModel {
        config: cfg.clone(),
        layers,
        report: TrainingReport::default(),
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    fn check(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(MlpError::ShapeMismatch {
                expected: self.input_dim(),
                found: x.len(),
            })
        }
    }

    /// Activations of every layer; the last entry holds the two logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let act = self.config.activation;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (k, l) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let mut z = l.bias.clone();
            for (i, xi) in input.iter().enumerate() {
                let row = &l.weights[i * l.fan_out..(i + 1) * l.fan_out];
                for (zj, w) in z.iter_mut().zip(row) {
                    *zj += xi * w;
                }
            }
            if k + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    fn proba_from_logits(z: &[f64]) -> [f64; 2] {
        let p_ti = sigmoid(z[1] - z[0]);
        [1.0 - p_ti, p_ti]
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2], MlpError> {
        self.check(x)?;
        let acts = self.forward(x);
        Ok(Self::proba_from_logits(acts.last().unwrap()))
    }

    fn l2_term(&self) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum();
        0.5 * self.config.l2 * sq
    }

    /// Mean cross-entropy over the batch plus the L2 penalty on weights.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[ClassLabel]) -> Result<f64, MlpError> {
        let mut ce = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            self.check(x)?;
            let acts = self.forward(x);
            let z = acts.last().unwrap();
            // -log softmax_y = logsumexp(z) - z_y, computed stably.
            let (zy, zo) = (z[y.index()], z[1 - y.index()]);
            let d = zo - zy;
            ce += if d > 0.0 {
                d + (-d).exp().ln_1p()
            } else {
                d.exp().ln_1p()
            };
        }
        let mean = if xs.is_empty() { 0.0 } else { ce / xs.len() as f64 };
        Ok(mean + self.l2_term())
    }

    /// Loss and its analytic gradient.
    pub fn loss_and_grad(
        &self,
        xs: &[Vec<f64>],
        ys: &[ClassLabel],
    ) -> Result<(f64, Gradients), MlpError> {
        let act = self.config.activation;
        let mut grads: Gradients = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.fan_in, l.fan_out))
            .collect();
        let n = xs.len().max(1) as f64;
        for (x, y) in xs.iter().zip(ys) {
            self.check(x)?;
            let acts = self.forward(x);
            let p = Self::proba_from_logits(acts.last().unwrap());
            let mut delta = vec![p[0], p[1]];
            delta[y.index()] -= 1.0;
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let g = &mut grads[k];
                let input = &acts[k];
                for (i, xi) in input.iter().enumerate() {
                    let row = &mut g.weights[i * l.fan_out..(i + 1) * l.fan_out];
                    for (gw, d) in row.iter_mut().zip(&delta) {
                        *gw += xi * d / n;
                    }
                }
                for (gb, d) in g.bias.iter_mut().zip(&delta) {
                    *gb += d / n;
                }
                if k > 0 {
                    let mut prev = vec![0.0; l.fan_in];
                    for (i, pi) in prev.iter_mut().enumerate() {
                        let row = &l.weights[i * l.fan_out..(i + 1) * l.fan_out];
                        let s: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                        *pi = s * act.derivative(acts[k][i]);
                    }
                    delta = prev;
                }
            }
        }
        for (g, l) in grads.iter_mut().zip(&self.layers) {
            for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
                *gw += self.config.l2 * w;
            }
        }
        Ok((self.loss(xs, ys)?, grads))
    }

    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

fn grad_at(g: &Gradients, mut idx: usize) -> f64 {
    for l in g {
        if idx < l.weights.len() {
            return l.weights[idx];
        }
        idx -= l.weights.len();
        if idx < l.bias.len() {
            return l.bias[idx];
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range");
}

impl Scorer for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2], MlpError> {
        MlpModel::predict_proba(self, x)
    }
}

/// Train with mini-batch SGD and momentum. Epoch order is shuffled by a
/// generator seeded from `cfg.seed`; the report records the full-set loss
/// before training and after every epoch.
pub fn train(
    model: &MlpModel,
    xs: &[Vec<f64>],
    ys: &[ClassLabel],
    cfg: &MlpConfig,
) -> Result<MlpModel, MlpError> {
    cfg.validate()?;
    if xs.len() != ys.len() {
        return Err(MlpError::ShapeMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let mut m = model.clone();
    m.config = MlpConfig {
        layer_sizes: model.config.layer_sizes.clone(),
        ..cfg.clone()
    };
    for x in xs {
        m.check(x)?;
    }
    let initial = m.loss(xs, ys)?;
    if !initial.is_finite() {
        return Err(MlpError::Divergence { epoch: 0 });
    }
    let mut velocity: Gradients = m
        .layers
        .iter()
        .map(|l| Layer::zeros(l.fan_in, l.fan_out))
        .collect();
    let mut r = rng(crate::seed::derive_seed(cfg.seed, "mlp-shuffle"));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let (mut bx, mut by) = (Vec::new(), Vec::new());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(xs[i].clone());
                by.push(ys[i]);
            }
            let (_, g) = m.loss_and_grad(&bx, &by)?;
            for ((l, v), g) in m.layers.iter_mut().zip(&mut velocity).zip(&g) {
                for ((w, vw), gw) in l.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                    *vw = cfg.momentum * *vw - cfg.learning_rate * gw;
                    *w += *vw;
                }
                for ((b, vb), gb) in l.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                    *vb = cfg.momentum * *vb - cfg.learning_rate * gb;
                    *b += *vb;
                }
            }
        }
        let loss = m.loss(xs, ys)?;
        if !loss.is_finite() {
            return Err(MlpError::Divergence { epoch });
        }
        losses.push(loss);
    }
    m.report = TrainingReport {
        initial_loss: initial,
        final_loss: losses.last().copied().unwrap_or(initial),
        epoch_losses: losses,
    };
    Ok(m)
}

/// Convenience: init from `cfg` and train.
pub fn fit(xs: &[Vec<f64>], ys: &[ClassLabel], cfg: &MlpConfig) -> Result<MlpModel, MlpError> {
    train(&init(cfg)?, xs, ys, cfg)
}

/// Maximum relative error between `analytic` gradients and central finite
/// differences of the loss (step 1e-5), over all parameters.
pub fn grad_check_with<F>(model: &MlpModel, xs: &[Vec<f64>], ys: &[ClassLabel], analytic: F) -> f64
where
    F: Fn(&MlpModel, &[Vec<f64>], &[ClassLabel]) -> Gradients,
{
    const H: f64 = 1e-5;
    let g = analytic(model, xs, ys);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..model.param_count() {
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + H;
        let up = probe.loss(xs, ys).expect("shapes checked by caller");
        *probe.param_mut(idx) = orig - H;
        let down = probe.loss(xs, ys).expect("shapes checked by caller");
        *probe.param_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * H);
        let a = grad_at(&g, idx);
        // The floor keeps round-off in near-zero gradients from dominating.
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn grad_check(model: &MlpModel, xs: &[Vec<f64>], ys: &[ClassLabel]) -> f64 {
    grad_check_with(model, xs, ys, |m, x, y| {
        m.loss_and_grad(x, y).expect("shapes checked by caller").1
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::{TF, TI};

    fn xor() -> (Vec<Vec<f64>>, Vec<ClassLabel>) {
        (
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![TF, TI, TI, TF],
        )
    }

    #[test]
    fn init_shapes_and_determinism() {
        let cfg = MlpConfig::new(vec![12, 16, 2]);
        let m = init(&cfg).unwrap();
        let shapes: Vec<_> = m.layers.iter().map(Layer::shape).collect();
        assert_eq!(shapes, vec![(12, 16), (16, 2)]);
        assert!(m.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        let limit = (6.0f64 / 28.0).sqrt();
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_eq!(init(&cfg).unwrap(), m);
        assert!(matches!(init(&MlpConfig::new(vec![12])), Err(MlpError::Config(_))));
        assert!(matches!(init(&MlpConfig::new(vec![12, 4, 3])), Err(MlpError::Config(_))));
    }

    #[test]
    fn xor_is_learned() {
        let (xs, ys) = xor();
        let cfg = MlpConfig {
            epochs: 2000,
            batch_size: 4,
            learning_rate: 0.1,
            seed: 7,
            ..MlpConfig::new(vec![2, 8, 2])
        };
        let m = fit(&xs, &ys, &cfg).unwrap();
        assert!(m.report.final_loss < 0.1, "final loss {}", m.report.final_loss);
        assert!(m.report.final_loss <= m.report.initial_loss);
        assert!(m.predict_proba(&[1.0, 0.0]).unwrap()[1] > 0.5);
        assert!(m.predict_proba(&[1.0, 1.0]).unwrap()[0] > 0.5);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (xs, ys) = xor();
        let cfg = MlpConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..MlpConfig::new(vec![2, 4, 2])
        };
        let m0 = init(&cfg).unwrap();
        let m1 = train(&m0, &xs, &ys, &cfg).unwrap();
        assert_eq!(m0.layers, m1.layers);
    }

    #[test]
    fn wrong_input_length() {
        let m = init(&MlpConfig::new(vec![3, 4, 2])).unwrap();
        assert_eq!(
            m.predict_proba(&[1.0]),
            Err(MlpError::ShapeMismatch {
                expected: 3,
                found: 1
            })
        );
        let cfg = m.config.clone();
        assert!(train(&m, &[vec![1.0, 2.0]], &[TF], &cfg).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let mut m = init(&MlpConfig::new(vec![3, 4, 2])).unwrap();
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(m.predict_proba(&[5.0, -1.0, 2.0]).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (xs, ys) = xor();
        let cfg = MlpConfig {
            learning_rate: 1e300,
            activation: Activation::Relu,
            epochs: 50,
            ..MlpConfig::new(vec![2, 8, 2])
        };
        assert!(matches!(fit(&xs, &ys, &cfg), Err(MlpError::Divergence { .. })));
    }

    #[test]
    fn grad_check_random_net() {
        let cfg = MlpConfig {
            seed: 3,
            l2: 1e-2,
            ..MlpConfig::new(vec![4, 5, 2])
        };
        let m = init(&cfg).unwrap();
        let xs = vec![
            vec![0.1, -0.5, 1.2, 0.3],
            vec![-1.0, 0.2, 0.0, 0.7],
            vec![0.4, 0.4, -0.3, -1.1],
        ];
        let ys = vec![TF, TI, TI];
        assert!(grad_check(&m, &xs, &ys) < 1e-4);
        // Empty batch: only the L2 term contributes.
        assert!(grad_check(&m, &[], &[]) < 1e-4);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let m = init(&MlpConfig::new(vec![4, 5, 2])).unwrap();
        let xs = vec![vec![0.1, -0.5, 1.2, 0.3]];
        let ys = vec![TI];
        let err = grad_check_with(&m, &xs, &ys, |m, x, y| {
            let mut g = m.loss_and_grad(x, y).unwrap().1;
            g[0].weights[0] += 0.5;
            g
        });
        assert!(err > 1e-2);
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = xor();
        let cfg = MlpConfig {
            epochs: 20,
            seed: 11,
            ..MlpConfig::new(vec![2, 4, 2])
        };
        assert_eq!(fit(&xs, &ys, &cfg).unwrap(), fit(&xs, &ys, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(x in prop::collection::vec(-1e6f64..1e6, 3), seed in any::<u64>()) {
            let cfg = MlpConfig { seed, activation: Activation::Relu, ..MlpConfig::new(vec![3, 6, 2]) };
            let p = init(&cfg).unwrap().predict_proba(&x).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }
}
