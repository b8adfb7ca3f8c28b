//! Retraining a discrete network: loss, augmentation, the epoch loop and checkpoints.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{GradBuffer, ParamStore, Reduction, Sgd, Tensor};

use crate::checkpoint::{config_hash, header_field, Container};
use crate::data::Sample;
use crate::depth::DepthMap;
use crate::error::{invalid, shape, Error, Result};
use crate::genotype::Genotype;
use crate::metrics::{score_image, EvalReport};
use crate::model::{Architecture, ModelConfig, SaliencyNet, Track};

/// Pixel reduction of the cross-entropy loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Summed over pixels, learning rate 1e-10.
    Sum,
    /// Averaged over pixels, learning rate 1e-3.
    #[default]
    Mean,
}

impl LossMode {
    pub fn default_lr(self) -> f64 {
        match self {
            LossMode::Sum => 1e-10,
            LossMode::Mean => 1e-3,
        }
    }

    pub fn reduction(self) -> Reduction {
        match self {
            LossMode::Sum => Reduction::Sum,
            LossMode::Mean => Reduction::Mean,
        }
    }
}

const BCE_CLAMP: f64 = 1e-7;

/// Cross-entropy of probabilities `pred` against binary `gt`, clamped at `1e-7`.
pub fn bce_loss(pred: &Tensor, gt: &Tensor, mode: LossMode) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(match mode {
        LossMode::Sum => total,
        LossMode::Mean => total / pred.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    pub rotate: bool,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop_scale: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            crop: true,
            rotate: true,
            min_crop_scale: 0.8,
            max_rotation_deg: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip: false,
            crop: false,
            rotate: false,
            ..Self::default()
        }
    }
}

/// One concrete spatial transform. Crop offsets are fractions of the free margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub crop_scale: f64,
    pub crop_offset: (f64, f64),
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        crop_scale: 1.0,
        crop_offset: (0.0, 0.0),
        angle_deg: 0.0,
    };

    pub fn sample(config: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = config.flip && rng.random_bool(0.5);
        let (crop_scale, crop_offset) = if config.crop {
            (
                rng.random_range(config.min_crop_scale..=1.0),
                (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)),
            )
        } else {
            (1.0, (0.0, 0.0))
        };
        let angle_deg = if config.rotate {
            rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg)
        } else {
            0.0
        };
        Self {
            flip,
            crop_scale,
            crop_offset,
            angle_deg,
        }
    }
}

/// Apply the same flip, crop-and-resize and rotation to RGB (bilinear), depth
/// and ground truth (nearest neighbour). The output keeps the input size.
pub fn augment(sample: &Sample, p: &AugmentParams) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let (hf, wf) = (h as f64, w as f64);
    let (ch, cw) = (hf * p.crop_scale, wf * p.crop_scale);
    let (oy, ox) = ((hf - ch) * p.crop_offset.0, (wf - cw) * p.crop_offset.1);
    let (cy, cx) = (oy + ch / 2.0, ox + cw / 2.0);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    // source coordinates (pixel centres at integers) of every output pixel
    let coords: Vec<(f64, f64)> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let sy = oy + (y + 0.5) * p.crop_scale;
            let sx = ox + (x + 0.5) * p.crop_scale;
            let (dy, dx) = (sy - cy, sx - cx);
            let ry = cy + dx * sin + dy * cos - 0.5;
            let mut rx = cx + dx * cos - dy * sin - 0.5;
            if p.flip {
                rx = wf - 1.0 - rx;
            }
            (ry, rx)
        })
        .collect();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let nearest = |(y, x): (f64, f64)| {
        let yi = clamp((y + 0.5).floor(), h) as usize;
        let xi = clamp((x + 0.5).floor(), w) as usize;
        yi * w + xi
    };
    let bilinear = |plane: &[f64], (y, x): (f64, f64)| {
        let (y, x) = (clamp(y, h), clamp(x, w));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
        let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    };
    let rgb = Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        bilinear(sample.rgb.channel(c), coords[i % (h * w)])
    });
    let idx: Vec<usize> = coords.iter().map(|&c| nearest(c)).collect();
    let depth = DepthMap::new(
        w,
        h,
        idx.iter().map(|&k| sample.depth.values()[k]).collect(),
        idx.iter().map(|&k| sample.depth.valid()[k]).collect(),
    )
    .expect("resampled depth is consistent");
    let gt = Tensor::new(&[1, h, w], idx.iter().map(|&k| sample.gt.data()[k]).collect());
    Sample {
        id: sample.id.clone(),
        rgb,
        depth,
        gt,
    }
}

/// Stop once the training-set scores reach both targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub f: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    /// Defaults to the loss mode's learning rate.
    pub lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Score the training set every this many epochs (0 disables).
    pub eval_every: usize,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 2,
            loss_mode: LossMode::Mean,
            lr: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: AugmentConfig::default(),
            seed: 0,
            eval_every: 1,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(self.loss_mode.default_lr())
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if self.batch_size == 0 || !(lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("training needs batch_size >= 1 and non-negative lr, momentum and weight decay"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub f: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BestRecord {
    pub epoch: usize,
    pub mae: f64,
    pub params: ParamStore,
}

pub(crate) fn check_finite(value: f64, context: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            value,
            context: context(),
        })
    }
}

/// Score `net` on `samples` without augmentation.
pub fn evaluate(net: &SaliencyNet, samples: &[Sample]) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for s in samples {
        let pred = net.predict(&net.prepare(s)?)?;
        report.push(score_image(&s.id, &pred, &s.gt)?);
    }
    Ok(report)
}

pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Momentum-SGD training of a fixed-architecture network.
pub struct Trainer {
    pub net: SaliencyNet,
    pub config: TrainConfig,
    sgd: Sgd,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<BestRecord>,
    pub history: Vec<TrainRecord>,
}

impl Trainer {
    pub fn new(net: SaliencyNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        net.own_arch()?;
        let sgd = Sgd::new(&net.params, config.learning_rate(), config.momentum, config.weight_decay);
        Ok(Self {
            net,
            config,
            sgd,
            epoch: 0,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<TrainRecord> {
        if samples.is_empty() {
            return Err(invalid("cannot train on an empty dataset"));
        }
        let epoch = self.epoch + 1;
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let reduction = self.config.loss_mode.reduction();
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut grads = GradBuffer::zeros_like(&self.net.params);
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let params = AugmentParams::sample(&self.config.augment, &mut rng);
                let s = augment(&samples[k], &params);
                let input = self.net.prepare(&s)?;
                let g = self.net.loss_and_grads(&input, None, Track::WEIGHTS, reduction)?;
                check_finite(g.loss, || format!("epoch {epoch}, sample `{}`", s.id))?;
                grads.accumulate(&g.weights, scale);
                total += g.loss;
            }
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: f64::NAN,
                    context: format!("non-finite gradient in epoch {epoch}"),
                });
            }
            self.sgd.step(&mut self.net.params, &grads);
        }
        self.epoch = epoch;
        let mut record = TrainRecord {
            epoch,
            loss: total / samples.len() as f64,
            f: None,
            mae: None,
        };
        if self.config.eval_every > 0 && (epoch % self.config.eval_every == 0 || epoch == self.config.epochs) {
            let report = evaluate(&self.net, samples)?;
            record.f = report.mean_f();
            record.mae = Some(report.mean_mae());
            let mae = report.mean_mae();
            if self.best.as_ref().is_none_or(|b| mae < b.mae) {
                self.best = Some(BestRecord {
                    epoch,
                    mae,
                    params: self.net.params.clone(),
                });
            }
        }
        info!(
            "epoch {epoch}: loss {:.5} F {} MAE {}",
            record.loss,
            record.f.map_or("-".into(), |v| format!("{v:.4}")),
            record.mae.map_or("-".into(), |v| format!("{v:.4}"))
        );
        self.history.push(record.clone());
        Ok(record)
    }

    fn reached_target(&self, r: &TrainRecord) -> bool {
        match (self.config.early_stop, r.f, r.mae) {
            (Some(t), Some(f), Some(mae)) => f >= t.f && mae <= t.mae,
            _ => false,
        }
    }

    /// Train until `config.epochs` epochs are complete or the early-stop target
    /// is met, writing a checkpoint after every epoch when `checkpoint` is set.
    pub fn run(&mut self, samples: &[Sample], checkpoint: Option<&Path>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let record = self.train_epoch(samples)?;
            if let Some(path) = checkpoint {
                self.checkpoint().save(path)?;
            }
            if self.reached_target(&record) {
                break;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> TrainCheckpoint {
        TrainCheckpoint {
            model: self.net.config.clone(),
            train: self.config.clone(),
            arch: self.net.arch.clone(),
            epoch: self.epoch,
            params: self.net.params.clone(),
            momentum: self.sgd.state().to_vec(),
            best: self.best.as_ref().map(|b| (b.epoch, b.mae)),
            history: self.history.clone(),
        }
    }

    /// The network with the lowest training MAE seen so far (or the current one).
    pub fn best_net(&self) -> SaliencyNet {
        let mut net = self.net.clone();
        if let Some(b) = &self.best {
            net.params = b.params.clone();
        }
        net
    }

    /// Continue from a checkpoint. The best-epoch weights are not stored, so the
    /// best record restarts from the checkpoint's weights.
    pub fn resume(ckpt: TrainCheckpoint) -> Result<Self> {
        let net = ckpt.network()?;
        let mut t = Trainer::new(net, ckpt.train.clone())?;
        t.sgd.load_state(ckpt.momentum);
        t.epoch = ckpt.epoch;
        t.history = ckpt.history;
        t.best = ckpt.best.map(|(epoch, mae)| BestRecord {
            epoch,
            mae,
            params: t.net.params.clone(),
        });
        Ok(t)
    }
}

/// Everything needed to rebuild or resume a trained network.
#[derive(Clone, Debug)]
pub struct TrainCheckpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub arch: Architecture,
    pub epoch: usize,
    pub params: ParamStore,
    pub momentum: Vec<Tensor>,
    pub best: Option<(usize, f64)>,
    pub history: Vec<TrainRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ArchRepr {
    Supernet,
    Concat,
    Genotype(String),
}

pub(crate) fn arch_to_repr(arch: &Architecture) -> serde_json::Value {
    let r = match arch {
        Architecture::Supernet => ArchRepr::Supernet,
        Architecture::Concat => ArchRepr::Concat,
        Architecture::Genotype(g) => ArchRepr::Genotype(g.to_text()),
    };
    serde_json::to_value(r).expect("serializable")
}

pub(crate) fn arch_from_repr(v: &serde_json::Value) -> Result<Architecture> {
    let r: ArchRepr = serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
    Ok(match r {
        ArchRepr::Supernet => Architecture::Supernet,
        ArchRepr::Concat => Architecture::Concat,
        ArchRepr::Genotype(text) => Architecture::Genotype(Genotype::parse(&text)?),
    })
}

/// Copy stored tensors into `store` by name, checking names and shapes.
pub(crate) fn load_params(store: &mut ParamStore, c: &Container, prefix: &str) -> Result<()> {
    let stored: Vec<(&str, &Tensor)> = c.with_prefix(prefix).collect();
    if stored.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} `{prefix}` tensors, found {}",
            store.len(),
            stored.len()
        )));
    }
    for (id, (name, t)) in store.ids().collect::<Vec<_>>().into_iter().zip(stored) {
        if store.name(id) != name || store.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` {:?} does not match parameter `{}` {:?}",
                t.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        store.set(id, t.clone());
    }
    Ok(())
}

impl TrainCheckpoint {
    pub fn config_hash(&self) -> String {
        config_hash(&(&self.model, &self.train))
    }

    pub fn to_container(&self) -> Container {
        let header = serde_json::json!({
            "kind": "train",
            "model": self.model,
            "train": self.train,
            "architecture": arch_to_repr(&self.arch),
            "epoch": self.epoch,
            "best": self.best,
            "history": self.history,
            "config_hash": self.config_hash(),
        });
        let mut tensors: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (format!("w/{n}"), t.clone()))
            .collect();
        tensors.extend(self.momentum.iter().enumerate().map(|(i, t)| (format!("sgd/{i}"), t.clone())));
        Container { header, tensors }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind: String = header_field(&c.header, "kind")?;
        if kind != "train" {
            return Err(Error::Checkpoint(format!("expected a training checkpoint, found `{kind}`")));
        }
        let model: ModelConfig = header_field(&c.header, "model")?;
        let train: TrainConfig = header_field(&c.header, "train")?;
        let arch = arch_from_repr(c.header.get("architecture").unwrap_or(&serde_json::Value::Null))?;
        let mut net = SaliencyNet::new(model.clone(), arch.clone(), 0)?;
        load_params(&mut net.params, c, "w/")?;
        let momentum: Vec<Tensor> = c.with_prefix("sgd/").map(|(_, t)| t.clone()).collect();
        if momentum.len() != net.params.len() {
            return Err(Error::Checkpoint("momentum buffers do not match parameters".into()));
        }
        let ckpt = Self {
            model,
            train,
            arch,
            epoch: header_field(&c.header, "epoch")?,
            params: net.params,
            momentum,
            best: header_field(&c.header, "best")?,
            history: header_field(&c.header, "history")?,
        };
        let stored: String = header_field(&c.header, "config_hash")?;
        if stored != ckpt.config_hash() {
            return Err(Error::Checkpoint("config hash does not match the stored configuration".into()));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn network(&self) -> Result<SaliencyNet> {
        let mut net = SaliencyNet::new(self.model.clone(), self.arch.clone(), 0)?;
        net.params = self.params.clone();
        Ok(net)
    }
}

/// Train a network with `genotype` fusion on `samples` from scratch.
pub fn train_full(
    genotype: &Genotype,
    samples: &[Sample],
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<Trainer> {
    let net = SaliencyNet::new(model.clone(), Architecture::Genotype(genotype.clone()), seed)?;
    let mut trainer = Trainer::new(net, config.clone())?;
    trainer.run(samples, None)?;
    Ok(trainer)
}
