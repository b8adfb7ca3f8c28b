//! First-order bi-level architecture search.
//!
//! Each step first takes an Adam step on the architecture logits using the
//! validation loss (network weights held constant), then a momentum-SGD step
//! on the network weights using the training loss (the updated logits held
//! constant).

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{clip_grad_norm, Adam, GradBuffer, Reduction, Sgd, Tensor};

use crate::cells::CellType;
use crate::checkpoint::{config_hash, header_field, Container};
use crate::data::Sample;
use crate::error::{invalid, Error, Result};
use crate::genotype::{discretize, Genotype};
use crate::model::{Architecture, ModelConfig, PreparedInput, SaliencyNet, Track};
use crate::train::{check_finite, epoch_rng, load_params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            betas: (0.5, 0.999),
            weight_decay: 1e-3,
        }
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay of the weight learning rate to 1e-3 of its initial value.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha_opt: AdamConfig,
    pub weight_opt: SgdConfig,
    /// Global gradient-norm cap for the weight step (0 disables clipping).
    pub grad_clip: f64,
    pub lr_schedule: LrSchedule,
    pub split_seed: u64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            alpha_opt: AdamConfig::default(),
            weight_opt: SgdConfig::default(),
            grad_clip: 5.0,
            lr_schedule: LrSchedule::Constant,
            split_seed: 0,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.alpha_opt.lr,
            self.alpha_opt.weight_decay,
            self.weight_opt.lr,
            self.weight_opt.momentum,
            self.weight_opt.weight_decay,
            self.grad_clip,
        ];
        if self.batch_size == 0 || nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("search needs batch_size >= 1 and non-negative optimizer settings"));
        }
        let (b1, b2) = self.alpha_opt.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Disjoint halves, the first of size `ceil(n / 2)`, deterministic in `seed`.
pub fn split_train_val<T: Clone>(dataset: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if dataset.len() < 2 {
        return Err(invalid(format!("search needs at least 2 samples, got {}", dataset.len())));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = dataset.len().div_ceil(2);
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset[i].clone()).collect();
    Ok((pick(&idx[..half]), pick(&idx[half..])))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean per-edge entropy for MM, MS, GA, SR.
    pub entropy: [f64; 4],
    pub genotype: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub records: Vec<EpochRecord>,
}

impl SearchHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,entropy_mm,entropy_ms,entropy_ga,entropy_sr\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
                r.epoch, r.train_loss, r.val_loss, r.entropy[0], r.entropy[1], r.entropy[2], r.entropy[3]
            )
            .unwrap();
        }
        out
    }

    pub fn mean_entropy(&self, epoch_index: usize) -> f64 {
        self.records[epoch_index].entropy.iter().sum::<f64>() / 4.0
    }
}

/// Losses of one search step: validation loss before the α update and
/// training loss before the weight update, both batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub val: f64,
    pub train: f64,
}

/// Supernet weights, architecture logits and optimizer state.
pub struct Searcher {
    pub config: SearchConfig,
    pub net: SaliencyNet,
    pub alpha: crate::genotype::ArchParams,
    sgd: Sgd,
    adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: SearchHistory,
}

impl Searcher {
    pub fn new(model: ModelConfig, config: SearchConfig) -> Result<Self> {
        config.validate()?;
        let net = SaliencyNet::new(model, Architecture::Supernet, config.seed)?;
        let alpha = net.init_alpha(config.seed.wrapping_add(1));
        let sgd = Sgd::new(&net.params, config.weight_opt.lr, config.weight_opt.momentum, config.weight_opt.weight_decay);
        let adam = Adam::new(&alpha.store, config.alpha_opt.lr, config.alpha_opt.betas, config.alpha_opt.weight_decay);
        Ok(Self {
            config,
            net,
            alpha,
            sgd,
            adam,
            epoch: 0,
            history: SearchHistory::default(),
        })
    }

    fn weight_lr(&self, epoch: usize) -> f64 {
        let lr = self.config.weight_opt.lr;
        match self.config.lr_schedule {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let min = lr * 1e-3;
                let t = (epoch - 1) as f64 / self.config.epochs.max(1) as f64;
                min + 0.5 * (lr - min) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    /// One alternating step: α on `val`, then weights on `train`.
    pub fn step(&mut self, train: &[&PreparedInput], val: &[&PreparedInput]) -> Result<StepLosses> {
        if train.is_empty() || val.is_empty() {
            return Err(invalid("search step needs non-empty batches"));
        }
        let mut ag = GradBuffer::zeros_like(&self.alpha.store);
        let mut val_loss = 0.0;
        for x in val {
            let g = self.net.loss_and_grads(x, Some(&self.alpha), Track::ALPHA, Reduction::Mean)?;
            check_finite(g.loss, || format!("validation loss in epoch {}", self.epoch + 1))?;
            ag.accumulate(&g.alpha, 1.0 / val.len() as f64);
            val_loss += g.loss / val.len() as f64;
        }
        self.adam.step(&mut self.alpha.store, &ag);

        let mut wg = GradBuffer::zeros_like(&self.net.params);
        let mut train_loss = 0.0;
        for x in train {
            let g = self.net.loss_and_grads(x, Some(&self.alpha), Track::WEIGHTS, Reduction::Mean)?;
            check_finite(g.loss, || format!("training loss in epoch {}", self.epoch + 1))?;
            wg.accumulate(&g.weights, 1.0 / train.len() as f64);
            train_loss += g.loss / train.len() as f64;
        }
        if !wg.is_finite() {
            return Err(Error::NonFiniteLoss {
                value: f64::NAN,
                context: format!("non-finite weight gradient in epoch {}", self.epoch + 1),
            });
        }
        if self.config.grad_clip > 0.0 {
            clip_grad_norm(&mut wg, self.config.grad_clip);
        }
        self.sgd.step(&mut self.net.params, &wg);
        Ok(StepLosses {
            val: val_loss,
            train: train_loss,
        })
    }

    pub fn run_epoch(&mut self, train: &[PreparedInput], val: &[PreparedInput]) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        self.sgd.lr = self.weight_lr(epoch);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut ti: Vec<usize> = (0..train.len()).collect();
        let mut vi: Vec<usize> = (0..val.len()).collect();
        ti.shuffle(&mut rng);
        vi.shuffle(&mut rng);
        let b = self.config.batch_size;
        let mut train_loss = 0.0;
        let steps = train.len().div_ceil(b);
        for s in 0..steps {
            let tb: Vec<&PreparedInput> = ti[s * b..((s + 1) * b).min(ti.len())].iter().map(|&i| &train[i]).collect();
            let vb: Vec<&PreparedInput> = (0..tb.len()).map(|k| &val[vi[(s * b + k) % vi.len()]]).collect();
            train_loss += self.step(&tb, &vb)?.train * tb.len() as f64;
        }
        let mut val_loss = 0.0;
        for x in val {
            val_loss += self.net.loss(x, Some(&self.alpha), Reduction::Mean)?;
        }
        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            train_loss: train_loss / train.len() as f64,
            val_loss: val_loss / val.len() as f64,
            entropy: CellType::ALL.map(|t| self.alpha.entropy(t)),
            genotype: self.genotype().to_text(),
        };
        info!(
            "search epoch {epoch}: train {:.5} val {:.5} entropy {:.4}",
            record.train_loss,
            record.val_loss,
            record.entropy.iter().sum::<f64>() / 4.0
        );
        self.history.records.push(record.clone());
        Ok(record)
    }

    pub fn genotype(&self) -> Genotype {
        discretize(&self.alpha, self.net.config.cells.prune_top2)
    }

    pub fn to_container(&self) -> Container {
        let header = serde_json::json!({
            "kind": "search",
            "model": self.net.config,
            "search": self.config,
            "epoch": self.epoch,
            "history": self.history,
            "adam_step": self.adam.step_count(),
            "config_hash": config_hash(&(&self.net.config, &self.config)),
        });
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        tensors.extend(self.net.params.iter().map(|(n, t)| (format!("w/{n}"), t.clone())));
        tensors.extend(self.alpha.store.iter().map(|(n, t)| (format!("a/{n}"), t.clone())));
        tensors.extend(self.sgd.state().iter().enumerate().map(|(i, t)| (format!("sgd/{i}"), t.clone())));
        let (m, v) = self.adam.state();
        tensors.extend(m.iter().enumerate().map(|(i, t)| (format!("adam_m/{i}"), t.clone())));
        tensors.extend(v.iter().enumerate().map(|(i, t)| (format!("adam_v/{i}"), t.clone())));
        Container { header, tensors }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind: String = header_field(&c.header, "kind")?;
        if kind != "search" {
            return Err(Error::Checkpoint(format!("expected a search checkpoint, found `{kind}`")));
        }
        let model: ModelConfig = header_field(&c.header, "model")?;
        let config: SearchConfig = header_field(&c.header, "search")?;
        let stored: String = header_field(&c.header, "config_hash")?;
        if stored != config_hash(&(&model, &config)) {
            return Err(Error::Checkpoint("config hash does not match the stored configuration".into()));
        }
        let mut s = Searcher::new(model, config)?;
        load_params(&mut s.net.params, c, "w/")?;
        load_params(&mut s.alpha.store, c, "a/")?;
        let grab = |prefix: &str, n: usize| -> Result<Vec<Tensor>> {
            let v: Vec<Tensor> = c.with_prefix(prefix).map(|(_, t)| t.clone()).collect();
            if v.len() != n {
                return Err(Error::Checkpoint(format!("expected {n} `{prefix}` tensors, found {}", v.len())));
            }
            Ok(v)
        };
        s.sgd.load_state(grab("sgd/", s.net.params.len())?);
        let na = s.alpha.store.len();
        s.adam.load_state(header_field(&c.header, "adam_step")?, grab("adam_m/", na)?, grab("adam_v/", na)?);
        s.epoch = header_field(&c.header, "epoch")?;
        s.history = header_field(&c.header, "history")?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Prepare both halves of the search split.
pub fn prepare_split(net: &SaliencyNet, dataset: &[Sample], seed: u64) -> Result<(Vec<PreparedInput>, Vec<PreparedInput>)> {
    let (train, val) = split_train_val(dataset, seed)?;
    let prep = |xs: &[Sample]| xs.iter().map(|s| net.prepare(s)).collect::<Result<Vec<_>>>();
    Ok((prep(&train)?, prep(&val)?))
}

/// Run (or continue) a search until `searcher.config.epochs` epochs are done,
/// saving a checkpoint after every epoch when `checkpoint` is set.
pub fn continue_search(searcher: &mut Searcher, dataset: &[Sample], checkpoint: Option<&Path>) -> Result<Genotype> {
    let (train, val) = prepare_split(&searcher.net, dataset, searcher.config.split_seed)?;
    while searcher.epoch < searcher.config.epochs {
        searcher.run_epoch(&train, &val)?;
        if let Some(p) = checkpoint {
            searcher.save(p)?;
        }
    }
    Ok(searcher.genotype())
}

/// Search from scratch; returns the discretized architecture and the history.
pub fn run_search(
    model: &ModelConfig,
    config: &SearchConfig,
    dataset: &[Sample],
    checkpoint: Option<&Path>,
) -> Result<(Genotype, SearchHistory)> {
    let mut searcher = Searcher::new(model.clone(), config.clone())?;
    let g = continue_search(&mut searcher, dataset, checkpoint)?;
    Ok((g, searcher.history))
}
