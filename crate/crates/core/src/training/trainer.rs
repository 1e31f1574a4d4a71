use std::io::{self, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{BatchSampler, SampleSpec, Subsample, TrainingData};
use super::checkpoint::{Checkpoint, CheckpointConfig, RngState};
use super::loss::{total_loss_node, LogitScale, LossWeights, Reduction};
use super::TrainError;
use crate::ag::{adam_step, AdamConfig, AdamState, AgError, Graph, NamedTensor, Tensor};
use crate::geometry::AugmentSpec;
use crate::model::{encode, init_params, EncoderConfig, EncoderParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub reduction: Reduction,
    pub weights: LossWeights,
    pub augment: AugmentSpec,
    pub tau_init: f64,
    /// Upper bound on the logit multiplier `exp(s) = 1/τ`.
    pub tau_max: f64,
    pub caption_topk: usize,
    pub point_budget: usize,
    pub subsample: Subsample,
    /// Half-cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 32,
            steps: 300,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            reduction: Reduction::Mean,
            weights: LossWeights::default(),
            augment: AugmentSpec::default(),
            tau_init: 0.07,
            tau_max: 100.0,
            caption_topk: 1,
            point_budget: 2048,
            subsample: Subsample::Fps,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2 gives a constant contrastive loss", self.batch_size));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {}", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad(format!("adam betas ({}, {}) / eps {}", self.beta1, self.beta2, self.eps));
        }
        let w = self.weights;
        if !(w.image >= 0.0 && w.text >= 0.0 && w.image.is_finite() && w.text.is_finite()) {
            return bad(format!("loss weights ({}, {}) must be finite and non-negative", w.image, w.text));
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return bad(format!("tau_init {}", self.tau_init));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return bad(format!("tau_max {}", self.tau_max));
        }
        if self.caption_topk == 0 || self.point_budget == 0 {
            return bad("caption_topk and point_budget must be positive".into());
        }
        self.augment.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            batch_size: self.batch_size,
            point_budget: self.point_budget,
            subsample: self.subsample,
            augment: self.augment.clone(),
            caption_topk: self.caption_topk,
        }
    }

    /// Learning rate used for the update at 0-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.cosine_decay && self.steps > 0 {
            let frac = step as f64 / self.steps as f64;
            self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            self.lr
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss_total: f64,
    pub loss_p2i: f64,
    pub loss_p2t: f64,
    /// Temperature used for this step's loss.
    pub tau: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,loss_total,loss_p2i,loss_p2t,tau";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss_total, self.loss_p2i, self.loss_p2t, self.tau)
    }
}

pub fn write_loss_log<W: Write>(mut w: W, records: &[LossRecord]) -> io::Result<()> {
    writeln!(w, "{LOSS_LOG_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Stateful optimizer loop over a [`TrainingData`] set.
#[derive(Debug)]
pub struct Trainer<'a> {
    sampler: BatchSampler<'a>,
    model: EncoderConfig,
    config: TrainConfig,
    /// Encoder tensors followed by the logit scale.
    tensors: Vec<NamedTensor>,
    adam: AdamState,
    step: u64,
    rng: ChaCha8Rng,
    workers: usize,
}

fn check_dims(data: &TrainingData, model: &EncoderConfig) -> Result<(), TrainError> {
    if data.dim() != model.embed_dim || data.text.dim() != model.embed_dim {
        return Err(TrainError::DimMismatch { table: data.dim(), model: model.embed_dim });
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    /// Fresh parameters and optimizer state derived from `config.seed`.
    pub fn new(data: &'a TrainingData, model: &EncoderConfig, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        model.validate()?;
        check_dims(data, model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(model, rng.next_u64())?;
        let mut tensors = params.tensors;
        tensors.push(NamedTensor::new("logit_scale", Tensor::scalar(LogitScale::from_tau(config.tau_init).s)));
        let adam = AdamState::new(&tensors);
        Ok(Self {
            sampler: BatchSampler::new(data, config.sample_spec())?,
            model: model.clone(),
            config: config.clone(),
            tensors,
            adam,
            step: 0,
            rng,
            workers: 1,
        })
    }

    /// Continues from a saved state with that state's configuration.
    pub fn resume(data: &'a TrainingData, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let CheckpointConfig { model, train } = &ckpt.config;
        train.validate()?;
        check_dims(data, model)?;
        let mut tensors = ckpt.params.tensors.clone();
        tensors.push(NamedTensor::new("logit_scale", Tensor::scalar(ckpt.logit_scale.s)));
        Ok(Self {
            sampler: BatchSampler::new(data, train.sample_spec())?,
            model: model.clone(),
            config: train.clone(),
            tensors,
            adam: ckpt.adam.clone(),
            step: ckpt.step,
            rng: ckpt.rng.restore(),
            workers: 1,
        })
    }

    /// Threads used for batch assembly. Results do not depend on it.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn logit_scale(&self) -> LogitScale {
        LogitScale { s: self.tensors.last().expect("logit scale").tensor.data()[0] }
    }

    pub fn params(&self) -> EncoderParams {
        EncoderParams { tensors: self.tensors[..self.tensors.len() - 1].to_vec() }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: CheckpointConfig { model: self.model.clone(), train: self.config.clone() },
            params: self.params(),
            logit_scale: self.logit_scale(),
            adam: self.adam.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    /// One sample → encode → loss → backward → Adam update. On a
    /// non-finite loss or gradient the trainer is left exactly as it was.
    pub fn step(&mut self) -> Result<LossRecord, TrainError> {
        let rng_before = self.rng.clone();
        match self.try_step()? {
            Ok(record) => Ok(record),
            Err(detail) => {
                self.rng = rng_before;
                Err(TrainError::NonFinite { step: self.step, detail, last_good: Box::new(self.checkpoint()) })
            }
        }
    }

    /// The inner error describes a numerical failure; nothing but the rng
    /// has been touched when it is returned.
    fn try_step(&mut self) -> Result<Result<LossRecord, String>, TrainError> {
        let step = self.step;
        let batch = self.sampler.sample(&mut self.rng, self.workers)?;
        let mut g = Graph::<f32>::new();
        let vars: Vec<_> = self.tensors.iter().map(|t| g.param(t.tensor.clone())).collect();
        let (enc_vars, s) = vars.split_at(vars.len() - 1);
        let fp = encode(&mut g, enc_vars, &self.model, &batch.clouds)?;
        let fi = g.constant(batch.image);
        let ft = g.constant(batch.text);
        let (total, p2i, p2t) = total_loss_node(&mut g, fp, fi, ft, s[0], self.config.weights, self.config.reduction)?;
        let item = |v| f64::from(g.value(v).data()[0]);
        let record = LossRecord {
            step,
            loss_total: item(total),
            loss_p2i: item(p2i),
            loss_p2t: item(p2t),
            tau: self.logit_scale().tau(),
        };
        if !record.loss_total.is_finite() {
            return Ok(Err(format!("loss is {}", record.loss_total)));
        }
        g.backward(total)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.tensor.shape())))
            .collect();
        match adam_step(&mut self.tensors, &grads, &mut self.adam, &self.config.adam(self.config.lr_at(step))) {
            Err(AgError::NonFiniteGradient(name)) => return Ok(Err(format!("gradient of {name} is not finite"))),
            other => other?,
        }
        let mut scale = self.logit_scale();
        scale.clamp(self.config.tau_max);
        self.tensors.last_mut().expect("logit scale").tensor.data_mut()[0] = scale.s;
        self.step += 1;
        Ok(Ok(record))
    }

    /// Steps until `config.steps` updates have been applied.
    pub fn run(&mut self, mut on_step: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>, TrainError> {
        let mut log = Vec::new();
        while self.step < self.config.steps {
            let rec = self.step()?;
            on_step(&rec);
            log.push(rec);
        }
        Ok(log)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

pub fn train(
    data: &TrainingData,
    model: &EncoderConfig,
    config: &TrainConfig,
    workers: usize,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(data, model, config)?.with_workers(workers);
    let log = trainer.run(|_| {})?;
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{EmbeddingTable, ShapeRecord, TripletManifest, ViewRecord};
    use crate::geometry::PointCloud;
    use rand::Rng;

    const D: usize = 4;

    /// Two classes of clouds (a line and a plane) aligned to two anchors.
    fn data(shapes: usize) -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let anchors = [[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let mut rows = Vec::new();
        let mut records = Vec::new();
        let mut clouds = Vec::new();
        for s in 0..shapes {
            let c = s % 2;
            let mut row = anchors[c];
            row.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
            rows.extend_from_slice(&row);
            records.push(ShapeRecord {
                shape_id: format!("s{s}"),
                point_cloud_path: String::new(),
                label: Some(c),
                views: vec![ViewRecord { view_index: 0, image_row: s, caption_rows: vec![s] }],
            });
            let pts = (0..24)
                .map(|_| {
                    let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if c == 0 {
                        [u, 0.05 * v, 0.0]
                    } else {
                        [u, v, 0.3]
                    }
                })
                .collect();
            clouds.push(PointCloud::new(pts, None).unwrap());
        }
        let table = EmbeddingTable::normalized(D, rows, "t").unwrap();
        TrainingData::new(TripletManifest { shapes: records }, table.clone(), table, clouds).unwrap()
    }

    fn model() -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            point_mlp_widths: vec![16, 16],
            head_widths: vec![16, D],
            embed_dim: D,
            layer_norm: false,
        }
    }

    fn config(steps: u64) -> TrainConfig {
        TrainConfig { batch_size: 4, steps, lr: 1e-2, point_budget: 24, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let d = data(6);
        let mut cfg = config(5);
        cfg.lr = 0.0;
        let before = Trainer::new(&d, &model(), &cfg).unwrap().checkpoint();
        let after = train(&d, &model(), &cfg, 1).unwrap().checkpoint;
        assert_eq!(before.params, after.params);
        assert_eq!(before.logit_scale, after.logit_scale);
    }

    #[test]
    fn same_seed_same_digest() {
        let d = data(6);
        let a = train(&d, &model(), &config(4), 1).unwrap();
        let b = train(&d, &model(), &config(4), 3).unwrap();
        assert_eq!(a.checkpoint.digest().unwrap(), b.checkpoint.digest().unwrap());
        let mut other = config(4);
        other.seed = 6;
        assert_ne!(
            a.checkpoint.digest().unwrap(),
            train(&d, &model(), &other, 1).unwrap().checkpoint.digest().unwrap()
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let d = data(6);
        let full = train(&d, &model(), &config(6), 1).unwrap();
        let mut first = Trainer::new(&d, &model(), &config(6)).unwrap();
        for _ in 0..3 {
            first.step().unwrap();
        }
        let mut second = Trainer::resume(&d, &first.checkpoint()).unwrap();
        let tail = second.run(|_| {}).unwrap();
        assert_eq!(second.checkpoint(), full.checkpoint);
        assert_eq!(tail, full.log[3..]);
    }

    #[test]
    fn loss_decreases_and_scale_stays_bounded() {
        let d = data(8);
        let mut cfg = config(60);
        cfg.tau_max = 20.0;
        let mut trainer = Trainer::new(&d, &model(), &cfg).unwrap();
        let log = trainer.run(|_| {}).unwrap();
        let mean = |r: &[LossRecord]| r.iter().map(|x| x.loss_total).sum::<f64>() / r.len() as f64;
        assert!(mean(&log[50..]) < mean(&log[..10]));
        assert!(trainer.logit_scale().scale() <= 20.0);
        assert!(log.iter().all(|r| r.tau > 0.0 && 1.0 / r.tau <= 20.0 * (1.0 + 1e-6)));
    }

    #[test]
    fn non_finite_loss_keeps_last_good_state() {
        let d = data(6);
        let mut trainer = Trainer::new(&d, &model(), &config(10)).unwrap();
        trainer.step().unwrap();
        let good = trainer.checkpoint();
        trainer.tensors[0].tensor.data_mut()[0] = f32::NAN;
        let poisoned = trainer.checkpoint();
        match trainer.step() {
            Err(TrainError::NonFinite { step, last_good, .. }) => {
                assert_eq!(step, 1);
                // NaN != NaN, so compare encodings
                assert_eq!(last_good.digest().unwrap(), poisoned.digest().unwrap());
                assert_eq!(last_good.rng, good.rng);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn log_format() {
        let rec = LossRecord { step: 3, loss_total: 1.5, loss_p2i: 0.75, loss_p2t: 0.75, tau: 0.07 };
        let mut out = Vec::new();
        write_loss_log(&mut out, &[rec]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,loss_total,loss_p2i,loss_p2t,tau\n3,1.5,0.75,0.75,0.07\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.weights.text = -1.0;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batch_sz": 3}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"reduction": "sum", "subsample": "truncate"}"#).unwrap();
        assert_eq!((c.reduction, c.subsample), (Reduction::Sum, Subsample::Truncate));
    }
}
