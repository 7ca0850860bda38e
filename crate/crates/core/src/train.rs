//! Minibatch SGD over ranking units.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::image::{channel_mean, PersonImage};
use crate::data::sampler::{build_units, make_minibatches, Curriculum, RankingUnit, SamplerPolicy};
use crate::data::stitch::{apply_variant, central_crop, join_halves, random_crop, resize_half, Variant};
use crate::error::{Error, Result};
use crate::kernels::{sgd_momentum_step, Mode, OptState};
use crate::net::{Checkpoint, Gradients, Network, NetworkConfig};
use crate::rank::{unit_grad, unit_loss, UnitScores};
use crate::seed;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_units: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub curriculum: Curriculum,
    pub cross_view_relaxed: bool,
    pub seed: u64,
    /// Write `snap_<epoch>.drnk` into `snapshot_dir` every this many epochs.
    pub snapshot_every: Option<usize>,
    pub snapshot_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Batches of 16 units, learning rate 1e-4, momentum 0.9, weight decay
    /// 5e-4, reference sets growing 1 → 2 → 4 at thirds of the run.
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_units: 16,
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            curriculum: Curriculum::thirds(epochs),
            cross_view_relaxed: false,
            seed,
            snapshot_every: None,
            snapshot_dir: None,
        }
    }

    pub fn policy(&self) -> SamplerPolicy {
        SamplerPolicy {
            cross_view_relaxed: self.cross_view_relaxed,
            curriculum: self.curriculum.clone(),
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_units == 0 {
            return Err(Error::invalid("batch_units must be at least 1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub epochs: Vec<EpochLoss>,
}

impl LossLog {
    /// `epoch,train_loss,heldout_loss,seconds`; a missing held-out loss is an empty cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,heldout_loss,seconds\n");
        for e in &self.epochs {
            let held = e.heldout_loss.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{},{:.3}", e.epoch, e.train_loss, held, e.seconds);
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every training and held-out
    /// loss, in order. Wall-clock times are excluded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.epochs {
            h.update(e.train_loss.to_le_bytes());
            h.update(e.heldout_loss.unwrap_or(f64::NAN).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Hooks into the training loop. Both methods default to doing nothing.
pub trait TrainObserver<T> {
    /// Called with the averaged gradients just before each optimizer step.
    fn on_batch(&mut self, _epoch: usize, _batch: usize, _grads: &Gradients<T>) {}

    /// Called after each epoch; `Break` stops training early.
    fn on_epoch(&mut self, _net: &Network<T>, _entry: &EpochLoss) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl<T> TrainObserver<T> for () {}

/// Resized halves of every image, computed once per run.
struct Halves(Vec<Tensor<f32>>);

impl Halves {
    fn new(set: &[PersonImage], side: usize) -> Result<Self> {
        Ok(Halves(set.par_iter().map(|img| resize_half(img, side)).collect::<Result<_>>()?))
    }

    fn canonical(&self, left: usize, right: usize) -> Result<Tensor<f32>> {
        join_halves(&self.0[left], &self.0[right])
    }
}

const AUGMENT_STREAM: u64 = 0x6175_676d;
const HELDOUT_STREAM: u64 = 0x686f_6c64;

/// Forward and backward for one unit with fresh augmentation; returns the unit
/// loss and its parameter gradients.
fn unit_step<T: Real>(
    net: &Network<T>,
    halves: &Halves,
    unit: &RankingUnit,
    rng_path: [u64; 3],
    base_seed: u64,
) -> Result<(f64, Gradients<T>)> {
    let mut rng = seed::rng(base_seed, &rng_path);
    let crop = net.config().input_side;
    let mut scores = Vec::with_capacity(unit.pair_count());
    let mut caches = Vec::with_capacity(unit.pair_count());
    for &other in std::iter::once(&unit.positive).chain(&unit.references) {
        let pair = apply_variant(&halves.canonical(unit.probe, other)?, Variant::random(&mut rng));
        let input = random_crop(&pair, crop, &mut rng)?.cast::<T>();
        let (s, cache) = net.score_pair(&input, Mode::Train, &mut rng)?;
        scores.push(s.as_f64());
        caches.push(cache);
    }
    let us = UnitScores::new(scores[0], scores[1..].to_vec())?;
    let loss = unit_loss(&us)?;
    let g = unit_grad(&us)?;
    let mut grads = net.zero_grads();
    for (cache, d) in caches.iter().zip(std::iter::once(g.positive).chain(g.negatives)) {
        net.backward_pair(cache, T::from_f64_lossy(d), &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean unit loss with infer-mode scoring on centrally cropped canonical pairs.
pub fn held_out_loss<T: Real>(net: &Network<T>, set: &[PersonImage], units: &[RankingUnit]) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::invalid("held_out_loss needs at least one unit"));
    }
    let halves = Halves::new(set, net.config().stitch_side)?;
    held_out_with(net, &halves, units)
}

fn held_out_with<T: Real>(net: &Network<T>, halves: &Halves, units: &[RankingUnit]) -> Result<f64> {
    let crop = net.config().input_side;
    let losses = units
        .par_iter()
        .map(|u| {
            let mut scores = Vec::with_capacity(u.pair_count());
            for &other in std::iter::once(&u.positive).chain(&u.references) {
                let input = central_crop(&halves.canonical(u.probe, other)?, crop)?.cast::<T>();
                scores.push(net.score(&input)?.as_f64());
            }
            unit_loss(&UnitScores::new(scores[0], scores[1..].to_vec())?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fixed held-out units at the curriculum's final reference-set size.
pub fn held_out_units(set: &[PersonImage], cfg: &TrainConfig) -> Result<Vec<RankingUnit>> {
    let policy = SamplerPolicy {
        cross_view_relaxed: cfg.cross_view_relaxed,
        curriculum: Curriculum::constant(cfg.curriculum.max_size())?,
        seed: seed::derive(cfg.seed, &[HELDOUT_STREAM]),
    };
    build_units(set, 0, &policy)
}

/// Trains `net` in place. The channel mean is recomputed from `train_set`.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &[PersonImage],
    cfg: &TrainConfig,
    heldout: Option<&[PersonImage]>,
) -> Result<LossLog> {
    train_observed(net, train_set, cfg, heldout, &mut ())
}

pub fn train_observed<T: Real>(
    net: &mut Network<T>,
    train_set: &[PersonImage],
    cfg: &TrainConfig,
    heldout: Option<&[PersonImage]>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<LossLog> {
    cfg.validate()?;
    if let Some(dir) = &cfg.snapshot_dir {
        std::fs::create_dir_all(dir)?;
    }
    net.channel_mean = channel_mean(train_set);
    net.meta.seed = cfg.seed;
    let side = net.config().stitch_side;
    let halves = Halves::new(train_set, side)?;
    let held = match heldout {
        Some(set) => Some((Halves::new(set, side)?, held_out_units(set, cfg)?)),
        None => None,
    };
    let mut opt = OptState::new(net.params(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let policy = cfg.policy();
    let mut log = LossLog::default();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let units = build_units(train_set, epoch, &policy)?;
        let mut loss_sum = 0.0;
        let mut offset = 0usize;
        for (b, batch) in make_minibatches(&units, cfg.batch_units)?.into_iter().enumerate() {
            let frozen: &Network<T> = net;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, u)| {
                    let path = [AUGMENT_STREAM, epoch as u64, (offset + i) as u64];
                    unit_step(frozen, &halves, u, path, cfg.seed)
                })
                .collect::<Result<Vec<_>>>()?;
            offset += batch.len();

            let mut grads = net.zero_grads();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grads.add_scaled(g, T::one())?;
            }
            if !batch_loss.is_finite() || grads.arrays.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            grads.scale(T::one() / T::from_f64_lossy(batch.len() as f64));
            observer.on_batch(epoch, b, &grads);
            sgd_momentum_step(net.params_mut(), &grads.arrays, &mut opt)?;
            loss_sum += batch_loss;
        }
        let heldout_loss = match &held {
            Some((h, u)) => Some(held_out_with(net, h, u)?),
            None => None,
        };
        let entry = EpochLoss {
            epoch: epoch + 1,
            train_loss: loss_sum / units.len() as f64,
            heldout_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log.epochs.push(entry.clone());
        net.meta.epoch += 1;
        net.meta.loss_digest = log.digest();
        if let (Some(every), Some(dir)) = (cfg.snapshot_every, &cfg.snapshot_dir) {
            if (epoch + 1) % every == 0 {
                Checkpoint::from_network(net).save(dir.join(format!("snap_{}.drnk", epoch + 1)))?;
            }
        }
        if observer.on_epoch(net, &entry).is_break() {
            break;
        }
    }
    Ok(log)
}

/// Continues training from a checkpoint whose network configuration must equal `expected`.
pub fn fine_tune<T: Real>(
    pretrained: &Checkpoint,
    expected: &NetworkConfig,
    train_set: &[PersonImage],
    cfg: &TrainConfig,
    heldout: Option<&[PersonImage]>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(Network<T>, LossLog)> {
    let diff = pretrained.config.diff(expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff.join("; ")));
    }
    let mut net = pretrained.to_network::<T>()?;
    let log = train_observed(&mut net, train_set, cfg, heldout, observer)?;
    Ok((net, log))
}
