//! Per-class, per-modality GAN for feature-space augmentation and
//! missing-modality imputation.
//!
//! Generator: latent -> hidden (tanh) -> feature (linear). Discriminator:
//! feature -> hidden (tanh) -> logit. Non-saturating generator loss, SGD
//! with momentum, fixed epoch budget.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Dataset, DatasetError, LabeledSample, Modality, Provenance};
use crate::features::NormStats;
use crate::mlp::Layer;
use crate::seed::{derive_seed, rng};

/// Generated vectors are clipped to this box in normalized space.
pub const CLIP: f64 = 6.0;
pub const MIN_REAL: usize = 8;
const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden_width: 32,
            epochs: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::Argument(m.to_string()));
        if self.latent_dim == 0 || self.hidden_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("latent_dim, hidden_width, epochs and batch_size must be positive");
        }
        if self.latent_dim > self.hidden_width {
            return bad("latent_dim must not exceed hidden_width");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("GAN training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub config: GanConfig,
    pub feature_dim: usize,
    pub class: Option<ClassLabel>,
    pub modality: Option<Modality>,
    pub generator: [Layer; 2],
    pub discriminator: [Layer; 2],
    /// Mean (discriminator, generator) loss per epoch.
    pub loss_trace: Vec<(f64, f64)>,
}

fn glorot(r: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Layer {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Layer {
        fan_in,
        fan_out,
        weights: (0..fan_in * fan_out)
            .map(|_| r.random_range(-limit..=limit))
            .collect(),
        bias: vec![0.0; fan_out],
    }
}

fn zeros_like(net: &[Layer; 2]) -> [Layer; 2] {
    net.clone().map(|mut l| {
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
        l
    })
}

fn dense(l: &Layer, x: &[f64]) -> Vec<f64> {
    let mut z = l.bias.clone();
    for (i, xi) in x.iter().enumerate() {
        for (zj, w) in z.iter_mut().zip(&l.weights[i * l.fan_out..(i + 1) * l.fan_out]) {
            *zj += xi * w;
        }
    }
    z
}

/// Hidden activations and output of a tanh-hidden, linear-output net.
fn forward(net: &[Layer; 2], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = dense(&net[0], x);
    h.iter_mut().for_each(|v| *v = v.tanh());
    let out = dense(&net[1], &h);
    (h, out)
}

/// Accumulate `scale * dL/dparams` into `grads` and return dL/dx.
fn backward(
    net: &[Layer; 2],
    x: &[f64],
    h: &[f64],
    dout: &[f64],
    scale: f64,
    grads: Option<&mut [Layer; 2]>,
) -> Vec<f64> {
    let (l0, l1) = (&net[0], &net[1]);
    let mut dh = vec![0.0; l1.fan_in];
    for (i, d) in dh.iter_mut().enumerate() {
        let row = &l1.weights[i * l1.fan_out..(i + 1) * l1.fan_out];
        let s: f64 = row.iter().zip(dout).map(|(w, g)| w * g).sum();
        *d = s * (1.0 - h[i] * h[i]);
    }
    if let Some(g) = grads {
        for (i, hi) in h.iter().enumerate() {
            for (gw, d) in g[1].weights[i * l1.fan_out..(i + 1) * l1.fan_out]
                .iter_mut()
                .zip(dout)
            {
                *gw += scale * hi * d;
            }
        }
        for (gb, d) in g[1].bias.iter_mut().zip(dout) {
            *gb += scale * d;
        }
        for (i, xi) in x.iter().enumerate() {
            for (gw, d) in g[0].weights[i * l0.fan_out..(i + 1) * l0.fan_out]
                .iter_mut()
                .zip(&dh)
            {
                *gw += scale * xi * d;
            }
        }
        for (gb, d) in g[0].bias.iter_mut().zip(&dh) {
            *gb += scale * d;
        }
    }
    let mut dx = vec![0.0; l0.fan_in];
    for (i, d) in dx.iter_mut().enumerate() {
        let row = &l0.weights[i * l0.fan_out..(i + 1) * l0.fan_out];
        *d = row.iter().zip(&dh).map(|(w, g)| w * g).sum();
    }
    dx
}

fn step(net: &mut [Layer; 2], vel: &mut [Layer; 2], grads: &[Layer; 2], lr: f64) {
    for ((l, v), g) in net.iter_mut().zip(vel.iter_mut()).zip(grads) {
        for ((w, vw), gw) in l.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
            *vw = MOMENTUM * *vw - lr * gw;
            *w += *vw;
        }
        for ((b, vb), gb) in l.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
            *vb = MOMENTUM * *vb - lr * gb;
            *b += *vb;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy -ln(sigmoid(z)) evaluated on the probability itself, so a
/// discriminator that is confidently wrong beyond f64 range reports an
/// infinite loss.
fn bce(z: f64) -> f64 {
    -sigmoid(z).ln()
}

fn latent(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.sample(StandardNormal)).collect()
}

/// Train on normalized vectors of one class and one modality.
pub fn train_gan(real: &[Vec<f64>], cfg: &GanConfig) -> Result<GanModel, GanError> {
    cfg.validate()?;
    if real.len() < MIN_REAL {
        return Err(GanError::InsufficientData(format!(
            "{} real vectors, need at least {MIN_REAL}",
            real.len()
        )));
    }
    let dim = real[0].len();
    if dim == 0 || real.iter().any(|v| v.len() != dim) {
        return Err(GanError::Argument("vectors must share one positive width".into()));
    }
    let mut r = rng(cfg.seed);
    let mut gen = [
        glorot(&mut r, cfg.latent_dim, cfg.hidden_width),
        glorot(&mut r, cfg.hidden_width, dim),
    ];
    let mut disc = [glorot(&mut r, dim, cfg.hidden_width), glorot(&mut r, cfg.hidden_width, 1)];
    let (mut gvel, mut dvel) = (zeros_like(&gen), zeros_like(&disc));
    let mut order: Vec<usize> = (0..real.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let m = chunk.len();
            let scale = 1.0 / m as f64;
            // Discriminator: real -> 1, fake -> 0.
            let mut dgrad = zeros_like(&disc);
            let mut d_loss = 0.0;
            for &i in chunk {
                let (h, s) = forward(&disc, &real[i]);
                d_loss += bce(s[0]);
                backward(&disc, &real[i], &h, &[sigmoid(s[0]) - 1.0], scale, Some(&mut dgrad));
            }
            for _ in 0..m {
                let z = latent(&mut r, cfg.latent_dim);
                let (_, x) = forward(&gen, &z);
                let (h, s) = forward(&disc, &x);
                d_loss += bce(-s[0]);
                backward(&disc, &x, &h, &[sigmoid(s[0])], scale, Some(&mut dgrad));
            }
            step(&mut disc, &mut dvel, &dgrad, cfg.learning_rate);
            // Generator: non-saturating loss -log D(G(z)).
            let mut ggrad = zeros_like(&gen);
            let mut g_loss = 0.0;
            for _ in 0..m {
                let z = latent(&mut r, cfg.latent_dim);
                let (gh, x) = forward(&gen, &z);
                let (dh, s) = forward(&disc, &x);
                g_loss += bce(s[0]);
                let dx = backward(&disc, &x, &dh, &[sigmoid(s[0]) - 1.0], 1.0, None);
                backward(&gen, &z, &gh, &dx, scale, Some(&mut ggrad));
            }
            step(&mut gen, &mut gvel, &ggrad, cfg.learning_rate);
            d_sum += d_loss * scale;
            g_sum += g_loss * scale;
            batches += 1;
        }
        let losses = (d_sum / batches as f64, g_sum / batches as f64);
        if !losses.0.is_finite() || !losses.1.is_finite() {
            return Err(GanError::Divergence { epoch });
        }
        trace.push(losses);
    }
    Ok(GanModel {
        config: cfg.clone(),
        feature_dim: dim,
        class: None,
        modality: None,
        generator: gen,
        discriminator: disc,
        loss_trace: trace,
    })
}

/// Draw `n` generated vectors, clipped to `[-CLIP, CLIP]`.
pub fn sample(m: &GanModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, GanError> {
    if n == 0 {
        return Err(GanError::Argument("sample count must be at least 1".into()));
    }
    let mut r = rng(seed);
    Ok((0..n)
        .map(|_| {
            let z = latent(&mut r, m.config.latent_dim);
            let (_, mut x) = forward(&m.generator, &z);
            for v in &mut x {
                *v = if v.is_finite() { v.clamp(-CLIP, CLIP) } else { 0.0 };
            }
            x
        })
        .collect())
}

/// Fit per-class normalization, train on normalized vectors and return
/// `n` de-normalized samples.
fn generate_like(
    real: &[Vec<f64>],
    n: usize,
    cfg: &GanConfig,
    tag: &str,
) -> Result<Vec<Vec<f64>>, GanError> {
    if real.len() < MIN_REAL {
        return Err(GanError::InsufficientData(format!(
            "{tag}: {} real samples, need at least {MIN_REAL}",
            real.len()
        )));
    }
    let stats = NormStats::fit(real).map_err(|e| GanError::Argument(e.to_string()))?;
    let normalized = stats
        .apply_all(real)
        .map_err(|e| GanError::Argument(e.to_string()))?;
    let train_cfg = GanConfig {
        seed: derive_seed(cfg.seed, &format!("gan/{tag}")),
        ..cfg.clone()
    };
    let model = train_gan(&normalized, &train_cfg)?;
    sample(&model, n, derive_seed(cfg.seed, &format!("sample/{tag}")))?
        .iter()
        .map(|z| stats.invert(z).map_err(|e| GanError::Argument(e.to_string())))
        .collect()
}

/// Number of TI samples and TF samples required for `target_total` at TI
/// fraction `balance`.
pub fn class_targets(target_total: usize, balance: f64) -> [usize; 2] {
    let ti = (balance * target_total as f64).ceil() as usize;
    [target_total - ti, ti]
}

/// Append generated samples until the class counts reach the targets. One
/// GAN is trained per (class, modality) on that class's real samples; each
/// generated sample carries every modality of the schema.
pub fn augment_to_target(
    d: &Dataset,
    target_total: usize,
    balance: f64,
    cfg: &GanConfig,
) -> Result<Dataset, GanError> {
    cfg.validate()?;
    if !(balance > 0.0 && balance < 1.0) {
        return Err(GanError::Argument(format!("balance {balance} is outside (0, 1)")));
    }
    if target_total < d.len() {
        return Err(GanError::Argument(format!(
            "target {target_total} is below the current size {}",
            d.len()
        )));
    }
    let targets = class_targets(target_total, balance);
    let counts = d.class_counts();
    let mut need = [0usize; 2];
    for c in ClassLabel::ALL {
        let (have, want) = (counts[c.index()], targets[c.index()]);
        if have > want {
            return Err(GanError::Argument(format!(
                "class {c} already has {have} samples, above its target {want}"
            )));
        }
        need[c.index()] = want - have;
    }
    let jobs: Vec<(ClassLabel, Modality)> = ClassLabel::ALL
        .iter()
        .filter(|c| need[c.index()] > 0)
        .flat_map(|c| d.schemas().keys().map(move |m| (*c, *m)))
        .collect();
    let generated: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(class, modality)| {
            let real: Vec<Vec<f64>> = d
                .samples()
                .iter()
                .filter(|s| s.label == class && s.provenance == Provenance::Real)
                .filter_map(|s| s.get(modality).map(<[f64]>::to_vec))
                .collect();
            generate_like(&real, need[class.index()], cfg, &format!("{class}/{modality}"))
        })
        .collect::<Result<_, _>>()?;
    let mut out = d.clone();
    for class in ClassLabel::ALL {
        let mut next = 1usize;
        for k in 0..need[class.index()] {
            let mut id = format!("gen-{class}-{next:04}");
            while out.samples().iter().any(|s| s.design_id == id) {
                next += 1;
                id = format!("gen-{class}-{next:04}");
            }
            next += 1;
            let mut s = LabeledSample::new(id, class);
            s.provenance = Provenance::Generated;
            for ((c, m), vs) in jobs.iter().zip(&generated) {
                if *c == class {
                    s = s.with(*m, vs[k].clone());
                }
            }
            out.push(s)?;
        }
    }
    Ok(out)
}

/// Fill every missing modality from a GAN trained on the complete samples
/// of the same (class, modality).
pub fn impute_missing(d: &Dataset, cfg: &GanConfig) -> Result<Dataset, GanError> {
    cfg.validate()?;
    let mut holes: Vec<((ClassLabel, Modality), Vec<usize>)> = Vec::new();
    for (i, s) in d.samples().iter().enumerate() {
        for m in &s.missing {
            let key = (s.label, *m);
            match holes.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(i),
                None => holes.push((key, vec![i])),
            }
        }
    }
    if holes.is_empty() {
        return Ok(d.clone());
    }
    holes.sort_by_key(|(k, _)| *k);
    let fills: Vec<Vec<Vec<f64>>> = holes
        .par_iter()
        .map(|((class, modality), idx)| {
            let real: Vec<Vec<f64>> = d
                .samples()
                .iter()
                .filter(|s| s.label == *class && s.missing.is_empty())
                .filter_map(|s| s.get(*modality).map(<[f64]>::to_vec))
                .collect();
            generate_like(&real, idx.len(), cfg, &format!("impute/{class}/{modality}"))
        })
        .collect::<Result<_, _>>()?;
    let mut out = d.clone();
    for ((( _, modality), idx), vs) in holes.iter().zip(fills) {
        for (&i, v) in idx.iter().zip(vs) {
            out.impute(i, *modality, v)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        (0..n).map(|_| latent(&mut r, dim)).collect()
    }

    #[test]
    fn learns_a_standard_normal_envelope() {
        let real = gaussian(50, 4, 100);
        let cfg = GanConfig {
            seed: 5,
            ..GanConfig::default()
        };
        let m = train_gan(&real, &cfg).unwrap();
        assert!(m.loss_trace.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
        let xs = sample(&m, 500, 1).unwrap();
        for j in 0..4 {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / 500.0;
            let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / 500.0;
            assert!(mean.abs() < 0.5, "slot {j} mean {mean}");
            assert!((0.5..=2.0).contains(&var.sqrt()), "slot {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn too_few_vectors() {
        assert!(matches!(
            train_gan(&gaussian(3, 4, 1), &GanConfig::default()),
            Err(GanError::InsufficientData(_))
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let cfg = GanConfig {
            learning_rate: 1e6,
            epochs: 200,
            ..GanConfig::default()
        };
        assert!(matches!(
            train_gan(&gaussian(20, 4, 2), &cfg),
            Err(GanError::Divergence { .. })
        ));
    }

    #[test]
    fn sampling_shape_determinism_and_clip() {
        let cfg = GanConfig {
            epochs: 5,
            ..GanConfig::default()
        };
        let m = train_gan(&gaussian(10, 9, 3), &cfg).unwrap();
        let a = sample(&m, 3, 4).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|v| v.len() == 9 && v.iter().all(|x| x.is_finite())));
        assert_eq!(a, sample(&m, 3, 4).unwrap());
        assert!(matches!(sample(&m, 0, 4), Err(GanError::Argument(_))));
        let mut wild = m.clone();
        wild.generator[1].bias.iter_mut().for_each(|b| *b = 100.0);
        assert!(sample(&wild, 20, 1)
            .unwrap()
            .iter()
            .flatten()
            .all(|x| x.abs() <= CLIP));
    }

    fn two_modal(tf: usize, ti: usize) -> Dataset {
        let schemas = BTreeMap::from([(Modality::Tabular, 3), (Modality::Graph, 2)]);
        let mut r = rng(9);
        let mut d = Dataset::new(schemas);
        for i in 0..tf + ti {
            let label = if i < tf { ClassLabel::TF } else { ClassLabel::TI };
            d.push(
                LabeledSample::new(format!("r{i:03}"), label)
                    .with(Modality::Tabular, latent(&mut r, 3))
                    .with(Modality::Graph, latent(&mut r, 2)),
            )
            .unwrap();
        }
        d
    }

    fn fast() -> GanConfig {
        GanConfig {
            epochs: 30,
            seed: 1,
            ..GanConfig::default()
        }
    }

    #[test]
    fn augments_to_exact_counts() {
        let d = two_modal(40, 12);
        let out = augment_to_target(&d, 100, 0.5, &fast()).unwrap();
        assert_eq!(out.class_counts(), [50, 50]);
        assert_eq!(&out.samples()[..52], d.samples());
        let gen: Vec<_> = out.samples()[52..].to_vec();
        assert!(gen.iter().all(|s| s.provenance == Provenance::Generated && s.missing.is_empty()));
        assert_eq!(out, augment_to_target(&d, 100, 0.5, &fast()).unwrap());
    }

    #[test]
    fn target_equal_to_size_is_identity() {
        let d = two_modal(10, 10);
        assert_eq!(augment_to_target(&d, 20, 0.5, &fast()).unwrap(), d);
    }

    #[test]
    fn few_minority_reals() {
        let d = two_modal(40, 5);
        assert!(matches!(
            augment_to_target(&d, 100, 0.5, &fast()),
            Err(GanError::InsufficientData(_))
        ));
        assert!(matches!(
            augment_to_target(&d, 10, 0.5, &fast()),
            Err(GanError::Argument(_))
        ));
    }

    #[test]
    fn imputes_single_missing_graph() {
        let full = two_modal(50, 50);
        let mut samples: Vec<LabeledSample> = full.samples().to_vec();
        samples[3].modalities.remove(&Modality::Graph);
        let d = Dataset::from_samples(full.schemas().clone(), samples).unwrap();
        assert_eq!(d.missing_count(), 1);
        let out = impute_missing(&d, &fast()).unwrap();
        assert_eq!(out.missing_count(), 0);
        let s = &out.samples()[3];
        assert_eq!(s.provenance, Provenance::ImputedPartial);
        assert_eq!(s.get(Modality::Graph).unwrap().len(), 2);
        assert_eq!(impute_missing(&full, &fast()).unwrap(), full);
    }

    #[test]
    fn imputation_needs_complete_samples() {
        let full = two_modal(20, 10);
        let samples: Vec<LabeledSample> = full
            .samples()
            .iter()
            .cloned()
            .map(|mut s| {
                if s.label == ClassLabel::TI && s.design_id.as_str() > "r023" {
                    s.modalities.remove(&Modality::Tabular);
                }
                s
            })
            .collect();
        let d = Dataset::from_samples(full.schemas().clone(), samples).unwrap();
        assert!(matches!(impute_missing(&d, &fast()), Err(GanError::InsufficientData(_))));
    }
}
