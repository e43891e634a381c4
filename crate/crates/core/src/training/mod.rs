//! Composite cGAN objective, Adam and the alternating training loop.

mod adam;
mod augment;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use augment::{augment, crop, resize_bilinear, Image};

use crate::error::{Error, Result};
use crate::networks::{
    build_discriminator, build_generator, update_running_stats, ConcreteHyper, Discriminator, DiscriminatorSpec,
    DropoutNoise, Generator, GeneratorSpec, NetMode, ParamStore,
};
use crate::rng::{self, derive_seed};
use crate::tensor::{Checkpoint, Element, Graph, NodeId, Tensor};

// ─── configuration ──────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_l1: f64,
    pub lambda_kl: f64,
    pub temperature: f64,
    pub c_w: f64,
    pub c_d: f64,
    pub resize_to: usize,
    pub crop_to: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 8,
            epochs: 20,
            lambda_l1: 100.0,
            lambda_kl: 100.0,
            temperature: 0.1,
            c_w: 1e-6,
            c_d: 1e-5,
            resize_to: 36,
            crop_to: 32,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self { batch_size: 16, epochs: 40, resize_to: 286, crop_to: 256, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        for (name, v) in [("lambda_l1", self.lambda_l1), ("lambda_kl", self.lambda_kl), ("c_w", self.c_w), ("c_d", self.c_d)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.crop_to == 0 || self.resize_to < self.crop_to {
            return Err(Error::Config(format!(
                "resize_to ({}) must be at least crop_to ({})",
                self.resize_to, self.crop_to
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn concrete_hyper(&self) -> ConcreteHyper {
        ConcreteHyper { temperature: self.temperature, weight_reg_coeff: self.c_w, dropout_reg_coeff: self.c_d }
    }
}

// ─── losses ─────────────────────────────────────────────────────────────────

/// Mean binary cross-entropy of `logits` against a constant label, in the
/// stable form `softplus(−z)` (label 1) or `softplus(z)` (label 0).
pub fn bce_with_logits<T: Element>(g: &mut Graph<T>, logits: NodeId, target_is_real: bool) -> Result<NodeId> {
    let z = if target_is_real { g.scalar_mul(logits, -1.0)? } else { logits };
    let sp = g.softplus(z)?;
    g.mean(sp)
}

/// Nodes of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: NodeId,
    pub gan: NodeId,
    pub l1: NodeId,
    pub kl: NodeId,
}

/// `bce(D(x, G(x)), 1) + λ₁·mean|G(x) − y| + λ_kl·kl_reg`.
pub fn generator_loss<T: Element>(
    g: &mut Graph<T>,
    d_fake_logits: NodeId,
    fake: NodeId,
    real: NodeId,
    kl_reg: NodeId,
    lambda_l1: f64,
    lambda_kl: f64,
) -> Result<GeneratorLoss> {
    if g.value(fake).shape() != g.value(real).shape() {
        return Err(Error::shape(
            "generator_loss",
            format!("fake {:?} vs real {:?}", g.value(fake).shape(), g.value(real).shape()),
        ));
    }
    let gan = bce_with_logits(g, d_fake_logits, true)?;
    let diff = g.sub(fake, real)?;
    let abs = g.abs(diff)?;
    let l1 = g.mean(abs)?;
    let weighted_l1 = g.scalar_mul(l1, lambda_l1)?;
    let weighted_kl = g.scalar_mul(kl_reg, lambda_kl)?;
    let partial = g.add(gan, weighted_l1)?;
    let total = g.add(partial, weighted_kl)?;
    Ok(GeneratorLoss { total, gan, l1, kl: kl_reg })
}

/// `½·[bce(D_real, 1) + bce(D_fake, 0)]`.
pub fn discriminator_loss<T: Element>(g: &mut Graph<T>, d_real_logits: NodeId, d_fake_logits: NodeId) -> Result<NodeId> {
    let real = bce_with_logits(g, d_real_logits, true)?;
    let fake = bce_with_logits(g, d_fake_logits, false)?;
    let sum = g.add(real, fake)?;
    g.scalar_mul(sum, 0.5)
}

// ─── training loop ──────────────────────────────────────────────────────────

/// One source/target training slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePair {
    pub a: Image,
    pub b: Image,
}

/// Raw per-batch loss terms (the L1 and KL values are unweighted).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchTerms {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1: f64,
    pub g_kl: f64,
    pub g_total: f64,
}

/// Epoch means of the loss terms plus the learned dropout probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1: f64,
    pub g_kl: f64,
    pub p: Vec<f64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let layers = rows.first().map_or(0, |r| r.p.len());
    let mut out = String::from("epoch,d_loss,g_gan,g_l1,g_kl");
    for i in 1..=layers {
        let _ = write!(out, ",p_{i}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{}", r.epoch, r.d_loss, r.g_gan, r.g_l1, r.g_kl);
        for p in &r.p {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<HistoryRow>> {
    let bad = |detail: String| Error::Malformed { format: "history csv", detail };
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(bad(format!("line {} has {} fields", n + 1, fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 1)));
        rows.push(HistoryRow {
            epoch: fields[0].parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?,
            d_loss: num(fields[1])?,
            g_gan: num(fields[2])?,
            g_l1: num(fields[3])?,
            g_kl: num(fields[4])?,
            p: fields[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Generator, discriminator and optimizer state, advanced batch by batch.
pub struct Trainer {
    pub gen: Generator,
    pub disc: Discriminator,
    pub cfg: TrainConfig,
    gen_adam: Vec<AdamState>,
    disc_adam: Vec<AdamState>,
    pub step: u64,
    pub epoch: usize,
    pub history: Vec<HistoryRow>,
}

fn fresh_moments(store: &ParamStore) -> Vec<AdamState> {
    store.trainable().into_iter().map(|i| AdamState::new(store.get(i).value.numel())).collect()
}

fn adam_update(store: &mut ParamStore, states: &mut [AdamState], grads: &[Vec<f32>], cfg: &AdamConfig) -> Result<()> {
    for ((index, state), grad) in store.trainable().into_iter().zip(states.iter_mut()).zip(grads) {
        adam_step(store.value_mut(index), grad, state, cfg)?;
    }
    Ok(())
}

fn stack(images: &[&Image]) -> Tensor<f32> {
    let size = images[0].size;
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 1, size, size], data).expect("images share one size")
}

const PROGRESS: &str = "train.progress";

impl Trainer {
    pub fn new(mut gen: Generator, disc: Discriminator, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.crop_to != gen.spec.input_size {
            return Err(Error::Config(format!(
                "crop_to ({}) must equal the generator input size ({})",
                cfg.crop_to, gen.spec.input_size
            )));
        }
        if disc.spec.output_size(cfg.crop_to).map_or(true, |n| n == 0) {
            return Err(Error::Config(format!("crop size {} leaves the discriminator no output", cfg.crop_to)));
        }
        gen.hyper = cfg.concrete_hyper();
        Ok(Self {
            gen_adam: fresh_moments(&gen.params),
            disc_adam: fresh_moments(&disc.params),
            gen,
            disc,
            cfg,
            step: 0,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Builds both networks from their specs with seeds derived from `cfg.seed`.
    pub fn from_specs(gen_spec: &GeneratorSpec, disc_spec: &DiscriminatorSpec, cfg: TrainConfig) -> Result<Self> {
        let gen = build_generator(gen_spec, derive_seed(cfg.seed, "init.generator", &[]))?;
        let disc = build_discriminator(disc_spec, derive_seed(cfg.seed, "init.discriminator", &[]))?;
        Self::new(gen, disc, cfg)
    }

    /// Full training state: weights, buffers, Adam moments and progress.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        self.gen.params.write_to(&mut ckpt);
        self.disc.params.write_to(&mut ckpt);
        for (store, states) in [(&self.gen.params, &self.gen_adam), (&self.disc.params, &self.disc_adam)] {
            for (index, state) in store.trainable().into_iter().zip(states) {
                let p = store.get(index);
                let shape = p.value.shape().to_vec();
                ckpt.insert(format!("adam.{}.m", p.name), Tensor::new(shape.clone(), state.m.clone()).expect("shape"));
                ckpt.insert(format!("adam.{}.v", p.name), Tensor::new(shape, state.v.clone()).expect("shape"));
            }
        }
        // u16 limbs are exact in f32
        let limbs = [self.epoch as u64, self.step >> 48, (self.step >> 32) & 0xffff, (self.step >> 16) & 0xffff, self.step & 0xffff];
        ckpt.insert(PROGRESS, Tensor::new(vec![5], limbs.iter().map(|&v| v as f32).collect()).expect("shape"));
        ckpt
    }

    /// Restores weights, moments and counters written by [`Trainer::checkpoint`].
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.gen.params.read_from(ckpt)?;
        self.disc.params.read_from(ckpt)?;
        for (store, states) in [(&self.gen.params, &mut self.gen_adam), (&self.disc.params, &mut self.disc_adam)] {
            for (index, state) in store.trainable().into_iter().zip(states.iter_mut()) {
                let name = &store.get(index).name;
                state.m = ckpt.require(&format!("adam.{name}.m"))?.data().to_vec();
                state.v = ckpt.require(&format!("adam.{name}.v"))?.data().to_vec();
            }
        }
        let progress = ckpt.require(PROGRESS)?.data();
        if progress.len() != 5 {
            return Err(Error::Malformed { format: "checkpoint", detail: "bad progress record".into() });
        }
        self.epoch = progress[0] as usize;
        self.step = progress[1..].iter().fold(0u64, |acc, &limb| (acc << 16) | limb as u64);
        for states in [&mut self.gen_adam, &mut self.disc_adam] {
            states.iter_mut().for_each(|s| s.step = self.step);
        }
        Ok(())
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<BatchTerms> {
        let adam = self.cfg.adam();
        let noise = DropoutNoise::new(self.cfg.seed, "train.dropout", &[self.step]);
        let mut g = Graph::new();
        let gb = self.gen.params.bind(&mut g, true);
        let xi = g.constant(x.clone());
        let yi = g.constant(y.clone());
        let gen_trace = self.gen.forward(&mut g, &gb, xi, NetMode::Train, &noise)?;
        let fake = gen_trace.output();

        // discriminator on real and detached fake pairs
        let mut dg = Graph::new();
        let db = self.disc.params.bind(&mut dg, true);
        let dx = dg.constant(x.clone());
        let dy = dg.constant(y.clone());
        let dfake = dg.constant(g.value(fake).clone());
        let real_pair = dg.concat_channels(&[dx, dy])?;
        let fake_pair = dg.concat_channels(&[dx, dfake])?;
        let real_trace = self.disc.forward(&mut dg, &db, real_pair, NetMode::Train)?;
        let fake_trace = self.disc.forward(&mut dg, &db, fake_pair, NetMode::Train)?;
        let d_loss = discriminator_loss(&mut dg, real_trace.output(), fake_trace.output())?;
        let d_grads = dg.backward(d_loss)?;
        let grads: Vec<Vec<f32>> =
            self.disc.params.trainable().into_iter().map(|i| d_grads.wrt(&dg, db.id(i)).into_data()).collect();
        adam_update(&mut self.disc.params, &mut self.disc_adam, &grads, &adam)?;
        update_running_stats(&mut self.disc.params, &dg, &real_trace);
        update_running_stats(&mut self.disc.params, &dg, &fake_trace);

        // generator through the updated discriminator
        let db = self.disc.params.bind(&mut g, false);
        let pair = g.concat_channels(&[xi, fake])?;
        let logits = self.disc.forward(&mut g, &db, pair, NetMode::Train)?.output();
        let kl = self.gen.collect_regularizers(&mut g, &gb)?;
        let loss = generator_loss(&mut g, logits, fake, yi, kl, self.cfg.lambda_l1, self.cfg.lambda_kl)?;
        let g_grads = g.backward(loss.total)?;
        let grads: Vec<Vec<f32>> =
            self.gen.params.trainable().into_iter().map(|i| g_grads.wrt(&g, gb.id(i)).into_data()).collect();
        adam_update(&mut self.gen.params, &mut self.gen_adam, &grads, &adam)?;
        update_running_stats(&mut self.gen.params, &g, &gen_trace);

        self.step += 1;
        let item = |graph: &Graph<f32>, id: NodeId| graph.value(id).item() as f64;
        Ok(BatchTerms {
            d_loss: item(&dg, d_loss),
            g_gan: item(&g, loss.gan),
            g_l1: item(&g, loss.l1),
            g_kl: item(&g, loss.kl),
            g_total: item(&g, loss.total),
        })
    }

    /// Shuffles `data`, augments every slice and runs one pass over it.
    pub fn run_epoch(&mut self, data: &[SlicePair]) -> Result<HistoryRow> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, "train.shuffle", &[epoch as u64]));
        let mut sums = BatchTerms::default();
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut sources = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut r = rng::stream(self.cfg.seed, "train.augment", &[epoch as u64, i as u64]);
                let (a, b) = augment(&data[i].a, &data[i].b, self.cfg.resize_to, self.cfg.crop_to, &mut r)?;
                sources.push(a);
                targets.push(b);
            }
            let x = stack(&sources.iter().collect::<Vec<_>>());
            let y = stack(&targets.iter().collect::<Vec<_>>());
            let terms = self.train_step(&x, &y).map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    batch: batch + 1,
                    detail: format!("non-finite value in {op}; epoch means so far {:?}", mean_terms(&sums, batches)),
                },
                other => other,
            })?;
            let values = [terms.d_loss, terms.g_gan, terms.g_l1, terms.g_kl, terms.g_total];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, batch: batch + 1, detail: format!("{terms:?}") });
            }
            sums.d_loss += terms.d_loss;
            sums.g_gan += terms.g_gan;
            sums.g_l1 += terms.g_l1;
            sums.g_kl += terms.g_kl;
            sums.g_total += terms.g_total;
            batches += 1;
        }
        let mean = mean_terms(&sums, batches);
        let row = HistoryRow {
            epoch,
            d_loss: mean.d_loss,
            g_gan: mean.g_gan,
            g_l1: mean.g_l1,
            g_kl: mean.g_kl,
            p: self.gen.concrete_layers().iter().map(|l| l.p).collect(),
        };
        self.epoch = epoch;
        self.history.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining epochs. With `out_dir`, a checkpoint
    /// (`epoch_NNN.bcgw`) and the history CSV are written after every epoch.
    pub fn fit(&mut self, data: &[SlicePair], out_dir: Option<&Path>) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch(data)?;
            if let Some(dir) = out_dir {
                self.checkpoint().save(&dir.join(checkpoint_name(self.epoch)))?;
                let path = dir.join(HISTORY_FILE);
                std::fs::write(&path, history_csv(&self.history)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

pub const HISTORY_FILE: &str = "history.csv";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.bcgw")
}

fn mean_terms(sums: &BatchTerms, n: usize) -> BatchTerms {
    let n = n.max(1) as f64;
    BatchTerms {
        d_loss: sums.d_loss / n,
        g_gan: sums.g_gan / n,
        g_l1: sums.g_l1 / n,
        g_kl: sums.g_kl / n,
        g_total: sums.g_total / n,
    }
}

/// Builds fresh networks and trains them for `cfg.epochs` epochs.
pub fn train(
    data: &[SlicePair],
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Trainer> {
    let mut trainer = Trainer::from_specs(gen_spec, disc_spec, cfg.clone())?;
    trainer.fit(data, out_dir)?;
    Ok(trainer)
}
