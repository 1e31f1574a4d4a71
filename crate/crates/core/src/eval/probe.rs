use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, EvalError, EvalReport, TOP_K};
use crate::ag::{adam_step, AdamConfig, AdamState, Graph, NamedTensor, Tensor, Var};
use crate::geometry::PointCloud;
use crate::model::{embed, encode, EncoderConfig, EncoderParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Softmax regression on frozen embeddings.
    #[default]
    LinearProbe,
    /// Encoder and linear head trained jointly.
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub steps: u64,
    /// Learning rate of the linear head.
    pub lr: f64,
    /// Learning rate of the encoder when fine-tuning.
    pub encoder_lr: f64,
    /// Examples per step; 0 uses the whole training set.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { mode: ProbeMode::LinearProbe, steps: 200, lr: 1e-2, encoder_lr: 1e-4, batch_size: 0, seed: 0 }
    }
}

/// `logits = x · weight + bias` over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

impl LinearClassifier {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self { weight: Tensor::zeros(&[dim, classes]), bias: Tensor::zeros(&[1, classes]) }
    }

    pub fn classes(&self) -> usize {
        self.bias.cols()
    }

    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, EvalError> {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(x.clone());
        let (w, b) = (g.constant(self.weight.clone()), g.constant(self.bias.clone()));
        let h = g.matmul(xv, w)?;
        let out = g.add(h, b)?;
        Ok(g.value(out).clone())
    }

    /// Top-`min(5, C)` classes per row by logit, ties by lower id.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<Vec<usize>>, EvalError> {
        let logits = self.logits(x)?;
        let k = TOP_K.min(self.classes());
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut ids: Vec<usize> = (0..row.len()).collect();
                ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                ids.truncate(k);
                ids
            })
            .collect())
    }
}

/// Training and held-out examples, either as fixed embeddings or as clouds
/// passed through an encoder.
#[derive(Clone, Copy, Debug)]
pub enum ProbeInput<'a> {
    Embeddings { train: &'a Tensor<f32>, test: &'a Tensor<f32> },
    Encoder { params: &'a EncoderParams, config: &'a EncoderConfig, train: &'a [PointCloud], test: &'a [PointCloud] },
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub classifier: LinearClassifier,
    /// Updated encoder, present after fine-tuning.
    pub encoder: Option<EncoderParams>,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
    pub losses: Vec<f64>,
}

fn cmp_bits(a: &[f32], b: &[f32]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits())))
}

fn cloud_key(pc: &PointCloud) -> Vec<f32> {
    let mut key: Vec<f32> = pc.points().iter().flatten().copied().collect();
    if let Some(c) = pc.colors() {
        key.extend(c.iter().flatten());
    }
    key
}

/// Order of training examples by (label, content), independent of how the
/// caller ordered them.
fn canonical_order(labels: &[usize], key: impl Fn(usize) -> Vec<f32>) -> Vec<usize> {
    let keys: Vec<Vec<f32>> = (0..labels.len()).map(key).collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]).then_with(|| cmp_bits(&keys[a], &keys[b])));
    order
}

fn check_labels(labels: &[usize], count: usize, classes: usize) -> Result<(), EvalError> {
    if labels.len() != count {
        return Err(EvalError::LengthMismatch { predictions: count, truth: labels.len() });
    }
    if count == 0 {
        return Err(EvalError::Empty);
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(EvalError::LabelOutOfRange { index, label, classes });
    }
    Ok(())
}

fn gather_rows(x: &Tensor<f32>, rows: &[usize]) -> Result<Tensor<f32>, EvalError> {
    let mut data = Vec::with_capacity(rows.len() * x.cols());
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Ok(Tensor::matrix(rows.len(), x.cols(), data)?)
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor<f32>, EvalError> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Ok(Tensor::matrix(labels.len(), classes, data)?)
}

/// Mean softmax cross-entropy of `features · W + b` against one-hot targets.
fn cross_entropy(g: &mut Graph<f32>, features: Var, w: Var, b: Var, targets: Tensor<f32>) -> Result<Var, EvalError> {
    let n = targets.rows();
    let h = g.matmul(features, w)?;
    let logits = g.add(h, b)?;
    let logp = g.log_softmax_rows(logits)?;
    let t = g.constant(targets);
    let picked = g.mul(logp, t)?;
    let total = g.sum_all(picked)?;
    Ok(g.scale_const(total, -1.0 / n as f64)?)
}

/// Per-step minibatches in canonical order, drawn from a seeded rng.
struct Schedule {
    order: Vec<usize>,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Schedule {
    fn next(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch == 0 || self.batch >= n {
            return self.order.clone();
        }
        let mut picks = index::sample(&mut self.rng, n, self.batch).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| self.order[i]).collect()
    }
}

fn grad_or_zero(g: &Graph<f32>, v: Var) -> Tensor<f32> {
    g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
}

fn head_tensors(head: &LinearClassifier) -> Vec<NamedTensor> {
    vec![NamedTensor::new("head.weight", head.weight.clone()), NamedTensor::new("head.bias", head.bias.clone())]
}

/// Trains a classifier on the training split and reports on both splits.
pub fn fit_classifier(
    input: ProbeInput<'_>,
    train_labels: &[usize],
    test_labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    if !(config.lr >= 0.0 && config.encoder_lr >= 0.0) {
        return Err(EvalError::InvalidConfig(format!("learning rates {} / {}", config.lr, config.encoder_lr)));
    }
    let first = *train_labels.first().ok_or(EvalError::Empty)?;
    if train_labels.iter().all(|&l| l == first) {
        return Err(EvalError::SingleClass(first));
    }
    match (input, config.mode) {
        (ProbeInput::Embeddings { train, test }, ProbeMode::LinearProbe) => {
            check_labels(train_labels, train.rows(), classes)?;
            let order = canonical_order(train_labels, |i| train.row(i).to_vec());
            linear_probe(train, test, order, train_labels, test_labels, classes, config)
        }
        (ProbeInput::Embeddings { .. }, ProbeMode::Finetune) => {
            Err(EvalError::InvalidConfig("fine-tuning needs point clouds and an encoder".into()))
        }
        (ProbeInput::Encoder { params, config: model, train, test }, ProbeMode::LinearProbe) => {
            check_labels(train_labels, train.len(), classes)?;
            // same ordering as fine-tuning, so a frozen encoder gives identical runs
            let order = canonical_order(train_labels, |i| cloud_key(&train[i]));
            let (train_x, test_x) = (embed(params, model, train)?, embed(params, model, test)?);
            linear_probe(&train_x, &test_x, order, train_labels, test_labels, classes, config)
        }
        (ProbeInput::Encoder { params, config: model, train, test }, ProbeMode::Finetune) => {
            finetune(params, model, train, test, train_labels, test_labels, classes, config)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn linear_probe(
    train: &Tensor<f32>,
    test: &Tensor<f32>,
    order: Vec<usize>,
    train_labels: &[usize],
    test_labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    check_labels(train_labels, train.rows(), classes)?;
    check_labels(test_labels, test.rows(), classes)?;
    let mut schedule = Schedule { order, batch: config.batch_size, rng: ChaCha8Rng::seed_from_u64(config.seed) };
    let mut head = head_tensors(&LinearClassifier::zeros(train.cols(), classes));
    let mut adam = AdamState::new(&head);
    let hyper = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let rows = schedule.next();
        let mut g = Graph::<f32>::new();
        let x = g.constant(gather_rows(train, &rows)?);
        let (w, b) = (g.param(head[0].tensor.clone()), g.param(head[1].tensor.clone()));
        let labels: Vec<usize> = rows.iter().map(|&r| train_labels[r]).collect();
        let loss = cross_entropy(&mut g, x, w, b, one_hot(&labels, classes)?)?;
        let value = f64::from(g.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(EvalError::NonFinite(step));
        }
        losses.push(value);
        g.backward(loss)?;
        adam_step(&mut head, &[grad_or_zero(&g, w), grad_or_zero(&g, b)], &mut adam, &hyper)?;
    }
    let [w, b]: [NamedTensor; 2] = head.try_into().expect("two head tensors");
    let classifier = LinearClassifier { weight: w.tensor, bias: b.tensor };
    let train_report = compute_metrics(&classifier.predict(train)?, train_labels, classes)?;
    let test_report = compute_metrics(&classifier.predict(test)?, test_labels, classes)?;
    Ok(ProbeOutcome { classifier, encoder: None, train_report, test_report, losses })
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    params: &EncoderParams,
    model: &EncoderConfig,
    train: &[PointCloud],
    test: &[PointCloud],
    train_labels: &[usize],
    test_labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    check_labels(train_labels, train.len(), classes)?;
    check_labels(test_labels, test.len(), classes)?;
    params.check(model)?;
    let order = canonical_order(train_labels, |i| cloud_key(&train[i]));
    let mut schedule = Schedule { order, batch: config.batch_size, rng: ChaCha8Rng::seed_from_u64(config.seed) };
    let mut encoder = params.tensors.clone();
    let mut head = head_tensors(&LinearClassifier::zeros(model.embed_dim, classes));
    let (mut enc_adam, mut head_adam) = (AdamState::new(&encoder), AdamState::new(&head));
    let enc_hyper = AdamConfig { lr: config.encoder_lr, ..AdamConfig::default() };
    let head_hyper = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let rows = schedule.next();
        let batch: Vec<PointCloud> = rows.iter().map(|&r| train[r].clone()).collect();
        let mut g = Graph::<f32>::new();
        let enc_vars: Vec<Var> = encoder.iter().map(|t| g.param(t.tensor.clone())).collect();
        let feats = encode(&mut g, &enc_vars, model, &batch)?;
        let (w, b) = (g.param(head[0].tensor.clone()), g.param(head[1].tensor.clone()));
        let labels: Vec<usize> = rows.iter().map(|&r| train_labels[r]).collect();
        let loss = cross_entropy(&mut g, feats, w, b, one_hot(&labels, classes)?)?;
        let value = f64::from(g.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(EvalError::NonFinite(step));
        }
        losses.push(value);
        g.backward(loss)?;
        let enc_grads: Vec<Tensor<f32>> = enc_vars.iter().map(|&v| grad_or_zero(&g, v)).collect();
        adam_step(&mut encoder, &enc_grads, &mut enc_adam, &enc_hyper)?;
        adam_step(&mut head, &[grad_or_zero(&g, w), grad_or_zero(&g, b)], &mut head_adam, &head_hyper)?;
    }
    let encoder = EncoderParams { tensors: encoder };
    let [w, b]: [NamedTensor; 2] = head.try_into().expect("two head tensors");
    let classifier = LinearClassifier { weight: w.tensor, bias: b.tensor };
    let train_report = compute_metrics(&classifier.predict(&embed(&encoder, model, train)?)?, train_labels, classes)?;
    let test_report = compute_metrics(&classifier.predict(&embed(&encoder, model, test)?)?, test_labels, classes)?;
    Ok(ProbeOutcome { classifier, encoder: Some(encoder), train_report, test_report, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::Rng;

    /// Two clusters on either side of a random hyperplane.
    fn separable(seed: u64, n: usize, d: usize) -> (Tensor<f32>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let mut v: Vec<f32> = (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
            v[0] = if c == 0 { 1.0 } else { -1.0 };
            data.extend(v);
            labels.push(c);
        }
        (Tensor::matrix(n, d, data).unwrap(), labels)
    }

    #[test]
    fn separable_data_is_fit() {
        let (x, y) = separable(1, 60, 8);
        let (xt, yt) = separable(2, 20, 8);
        let out = fit_classifier(ProbeInput::Embeddings { train: &x, test: &xt }, &y, &yt, 2, &ProbeConfig::default())
            .unwrap();
        assert!(out.train_report.top1 >= 0.99);
        assert!(out.test_report.top1 >= 0.95);
        assert!(out.losses.last().unwrap() < &out.losses[0]);
    }

    #[test]
    fn training_order_does_not_matter() {
        let (x, y) = separable(3, 40, 6);
        let perm: Vec<usize> = (0..40).rev().collect();
        let xp = gather_rows(&x, &perm).unwrap();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let cfg = ProbeConfig { batch_size: 8, steps: 50, ..ProbeConfig::default() };
        let a = fit_classifier(ProbeInput::Embeddings { train: &x, test: &x }, &y, &y, 2, &cfg).unwrap();
        let b = fit_classifier(ProbeInput::Embeddings { train: &xp, test: &x }, &yp, &y, 2, &cfg).unwrap();
        assert_eq!(a.classifier, b.classifier);
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = separable(4, 4, 3);
        let r = fit_classifier(
            ProbeInput::Embeddings { train: &x, test: &x },
            &[1; 4],
            &[1; 4],
            2,
            &ProbeConfig::default(),
        );
        assert!(matches!(r, Err(EvalError::SingleClass(1))));
    }

    #[test]
    fn frozen_finetune_equals_linear_probe() {
        let model = EncoderConfig {
            in_channels: 3,
            point_mlp_widths: vec![8, 16],
            head_widths: vec![16, 6],
            embed_dim: 6,
            layer_norm: false,
        };
        let params = init_params(&model, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut clouds = Vec::new();
        let mut labels = Vec::new();
        for i in 0..12 {
            let c = i % 3;
            let pts = (0..10)
                .map(|_| [rng.random_range(-1.0..1.0), c as f32 * 0.5 + rng.random_range(-0.1..0.1), 0.2])
                .collect();
            clouds.push(PointCloud::new(pts, None).unwrap());
            labels.push(c);
        }
        let cfg = ProbeConfig { steps: 30, batch_size: 5, encoder_lr: 0.0, ..ProbeConfig::default() };
        let input = ProbeInput::Encoder { params: &params, config: &model, train: &clouds, test: &clouds };
        let probe = fit_classifier(input, &labels, &labels, 3, &cfg).unwrap();
        let tuned =
            fit_classifier(input, &labels, &labels, 3, &ProbeConfig { mode: ProbeMode::Finetune, ..cfg }).unwrap();
        assert_eq!(tuned.encoder.as_ref(), Some(&params));
        assert_eq!(tuned.classifier, probe.classifier);
        assert_eq!(tuned.test_report, probe.test_report);
        assert_eq!(tuned.losses, probe.losses);
    }
}
