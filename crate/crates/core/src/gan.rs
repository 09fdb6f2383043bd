//! F0-conditioned generator and critic trained with the Wasserstein loss,
//! a gradient penalty and an L1 reconstruction term.
//!
//! Tensors are NCHW internally; shape traces are reported as NHWC to line
//! up with the architecture tables (`(n, h, w, c)`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use switchgan_tensor::{grad, nn, no_grad, Adam, Bound, ConvGeom, ParamStore, Tensor, Var};

use crate::checkpoint::{iteration_dir_name, Checkpoint};
use crate::error::{Error, Result};
use crate::features::{ConditioningVector, MelSpectrogram, NormStats, SpecDomain, N_FRAMES, N_MELS};
use crate::rng::{derive_seed, rng_for};

const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;
/// Spatial side of the first generator feature map / last critic map.
const BASE: usize = 4;
const STAGES: usize = 5;

const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_ALPHA: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub lambda_gp: f64,
    pub lambda_recon: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub critic_steps: usize,
    pub dropout_p: f64,
    pub leaky_relu_alpha: f64,
    /// Side of the square convolution kernels.
    pub kernel_size: usize,
    /// Generator channel plan after the dense projection (five entries).
    pub gen_channels: Vec<usize>,
    /// Critic channel plan of the five strided convolutions.
    pub critic_channels: Vec<usize>,
    pub bn_momentum: f64,
    /// Keep generator dropout active when sampling.
    pub dropout_at_sample: bool,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_gp: 10.0,
            lambda_recon: 10.0,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            batch_size: 8,
            total_iterations: 150_000,
            critic_steps: 5,
            dropout_p: 0.5,
            leaky_relu_alpha: 0.2,
            kernel_size: 5,
            gen_channels: vec![1024, 512, 256, 128, 64],
            critic_channels: vec![64, 128, 256, 512, 1024],
            bn_momentum: 0.1,
            dropout_at_sample: true,
            checkpoint_every: 5000,
            log_every: 1,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_gp", self.lambda_gp >= 0.0),
            ("lambda_recon", self.lambda_recon >= 0.0),
            ("learning_rate", self.learning_rate > 0.0),
            ("adam_beta1", (0.0..1.0).contains(&self.adam_beta1)),
            ("adam_beta2", (0.0..1.0).contains(&self.adam_beta2)),
            ("batch_size", self.batch_size > 0),
            ("critic_steps", self.critic_steps >= 1),
            ("dropout_p", (0.0..1.0).contains(&self.dropout_p)),
            ("leaky_relu_alpha", self.leaky_relu_alpha >= 0.0),
            ("kernel_size", self.kernel_size % 2 == 1),
            ("bn_momentum", self.bn_momentum > 0.0 && self.bn_momentum <= 1.0),
            ("checkpoint_every", self.checkpoint_every > 0),
            ("log_every", self.log_every > 0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::invalid(format!("gan.{name} is out of range")));
        }
        for (name, plan) in [("gen_channels", &self.gen_channels), ("critic_channels", &self.critic_channels)] {
            if plan.len() != STAGES || plan.contains(&0) {
                return Err(Error::invalid(format!("gan.{name} needs {STAGES} positive entries")));
            }
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.kernel_size / 2
    }
}

/// One row of a layer-by-layer shape trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeRow {
    pub layer: String,
    pub shape: Vec<usize>,
}

fn nhwc(x: &Var) -> Vec<usize> {
    match *x.shape() {
        [n, c, h, w] => vec![n, h, w, c],
        ref s => s.to_vec(),
    }
}

fn record(trace: &mut Vec<ShapeRow>, layer: &str, x: &Var) {
    trace.push(ShapeRow { layer: layer.to_string(), shape: nhwc(x) });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    /// Batch statistics in batch normalisation.
    Train,
    /// Running statistics; dropout per `dropout_at_sample`.
    Sample,
}

pub struct GenForward {
    pub output: Var,
    /// `(layer, batch mean, batch variance)` for running-stat updates.
    pub batch_stats: Vec<(String, Tensor, Tensor)>,
    pub trace: Vec<ShapeRow>,
}

pub fn init_generator<R: Rng + ?Sized>(cfg: &GanConfig, rng: &mut R) -> ParamStore {
    let mut s = ParamStore::new();
    let ch = &cfg.gen_channels;
    nn::init_dense(&mut s, "gen.dense", N_FRAMES, BASE * BASE * ch[0], rng);
    for i in 1..STAGES {
        nn::init_conv(&mut s, &format!("gen.conv{i}"), ch[i - 1], ch[i], cfg.kernel_size, rng);
        let bn = format!("gen.bn{i}");
        nn::init_affine(&mut s, &bn, ch[i]);
        s.insert_buffer(format!("{bn}.running_mean"), Tensor::zeros(vec![ch[i]]));
        s.insert_buffer(format!("{bn}.running_var"), Tensor::ones(vec![ch[i]]));
    }
    nn::init_conv(&mut s, &format!("gen.conv{STAGES}"), ch[STAGES - 1], 1, cfg.kernel_size, rng);
    s
}

pub fn init_critic<R: Rng + ?Sized>(cfg: &GanConfig, rng: &mut R) -> ParamStore {
    let mut s = ParamStore::new();
    let ch = &cfg.critic_channels;
    nn::init_dense(&mut s, "critic.cond", N_FRAMES, N_MELS * N_FRAMES, rng);
    let mut inp = 2;
    for (i, &out) in ch.iter().enumerate() {
        nn::init_conv(&mut s, &format!("critic.conv{}", i + 1), inp, out, cfg.kernel_size, rng);
        nn::init_affine(&mut s, &format!("critic.ln{}", i + 1), out);
        inp = out;
    }
    nn::init_dense(&mut s, "critic.out", BASE * BASE * inp, 1, rng);
    s
}

fn dropout(x: &Var, cfg: &GanConfig, active: bool, seed: u64, layer: u64) -> Var {
    if !active || cfg.dropout_p == 0.0 {
        return x.clone();
    }
    let mut rng = rng_for(seed, &[layer]);
    x.mul_const(&nn::dropout_mask(x.shape(), cfg.dropout_p, &mut rng))
}

/// Maps `n x 128` conditioning vectors to `n x 1 x 128 x 128` in `[-1, 1]`.
pub fn generator_forward(p: &Bound, cfg: &GanConfig, cond: &Var, mode: GenMode, noise_seed: u64) -> GenForward {
    let n = cond.shape()[0];
    let ch = &cfg.gen_channels;
    let mut trace = Vec::new();
    let mut batch_stats = Vec::new();
    let use_dropout = mode == GenMode::Train || cfg.dropout_at_sample;
    let geom = ConvGeom { stride: 1, pad: cfg.pad() };

    record(&mut trace, "input", cond);
    let h = nn::dense(p, "gen.dense", cond);
    record(&mut trace, "dense", &h);
    let h = h.reshape(&[n, ch[0], BASE, BASE]);
    record(&mut trace, "reshape", &h);
    let h = dropout(&h, cfg, use_dropout, noise_seed, 0);
    record(&mut trace, "dropout0", &h);
    let mut h = h.relu();
    record(&mut trace, "relu0", &h);

    for i in 1..STAGES {
        let conv = nn::conv(p, &format!("gen.conv{i}"), &h.upsample2(), geom);
        record(&mut trace, &format!("upconv{i}"), &conv);
        let bn = format!("gen.bn{i}");
        let normed = match mode {
            GenMode::Train => {
                let (y, mean, var) = nn::batch_norm_train(p, &bn, &conv, BN_EPS);
                batch_stats.push((bn, mean, var));
                y
            }
            GenMode::Sample => nn::batch_norm_eval(p, &bn, &conv, BN_EPS),
        };
        let normed = if i == 1 {
            let d = dropout(&normed, cfg, use_dropout, noise_seed, 1);
            record(&mut trace, "dropout1", &d);
            d
        } else {
            normed
        };
        h = normed.relu();
        record(&mut trace, &format!("relu{i}"), &h);
    }
    let out = nn::conv(p, &format!("gen.conv{STAGES}"), &h.upsample2(), geom).tanh();
    record(&mut trace, &format!("upconv{STAGES}"), &out);
    GenForward { output: out, batch_stats, trace }
}

pub struct CriticForward {
    /// `n x 1` unbounded scores.
    pub scores: Var,
    pub trace: Vec<ShapeRow>,
}

/// Scores `n x 1 x 128 x 128` spectrograms under `n x 128` conditions.
pub fn critic_forward(p: &Bound, cfg: &GanConfig, spec: &Var, cond: &Var) -> CriticForward {
    let mut trace = Vec::new();
    let c = nn::dense(p, "critic.cond", cond);
    record(&mut trace, "dense", &c);
    let c = c.reshape(&[spec.shape()[0], 1, N_MELS, N_FRAMES]);
    record(&mut trace, "reshape", &c);
    critic_body(p, cfg, spec, &c, trace)
}

/// The conditioning map `[N, 1, 128, 128]` the critic concatenates with its input.
pub fn critic_cond_map(p: &Bound, cond: &Var) -> Var {
    let n = cond.shape()[0];
    nn::dense(p, "critic.cond", cond).reshape(&[n, 1, N_MELS, N_FRAMES])
}

/// Critic scores given a precomputed conditioning map, so one map can be
/// shared by the real, fake and interpolated passes.
pub fn critic_with_map(p: &Bound, cfg: &GanConfig, spec: &Var, cond_map: &Var) -> Var {
    critic_body(p, cfg, spec, cond_map, Vec::new()).scores
}

fn critic_body(p: &Bound, cfg: &GanConfig, spec: &Var, c: &Var, mut trace: Vec<ShapeRow>) -> CriticForward {
    let n = spec.shape()[0];
    record(&mut trace, "spectrogram", spec);
    let mut h = Var::concat(&[c.clone(), spec.clone()], 1);
    record(&mut trace, "concat", &h);
    let geom = ConvGeom { stride: 2, pad: cfg.pad() };
    for i in 1..=STAGES {
        let conv = nn::conv(p, &format!("critic.conv{i}"), &h, geom);
        record(&mut trace, &format!("conv{i}"), &conv);
        h = nn::layer_norm(p, &format!("critic.ln{i}"), &conv, LN_EPS).leaky_relu(cfg.leaky_relu_alpha);
        record(&mut trace, &format!("leaky{i}"), &h);
    }
    let flat = h.reshape(&[n, h.value().numel() / n]);
    record(&mut trace, "flatten", &flat);
    let scores = nn::dense(p, "critic.out", &flat);
    record(&mut trace, "out", &scores);
    CriticForward { scores, trace }
}

fn check_scores(real: &Var, fake: &Var) -> Result<()> {
    if real.value().numel() == 0 || fake.value().numel() == 0 {
        return Err(Error::invalid("score batches must be non-empty"));
    }
    if real.value().numel() != fake.value().numel() {
        return Err(Error::Shape(format!(
            "real and fake score counts differ: {} vs {}",
            real.value().numel(),
            fake.value().numel()
        )));
    }
    Ok(())
}

/// `(mean(fake) - mean(real), -mean(fake))`.
pub fn wgan_losses(real_scores: &Var, fake_scores: &Var) -> Result<(Var, Var)> {
    check_scores(real_scores, fake_scores)?;
    let critic = fake_scores.mean().sub(&real_scores.mean());
    let generator = fake_scores.mean().neg();
    Ok((critic, generator))
}

/// Mean over the batch of `(||grad_x D(x_hat)||_2 - 1)^2` at random
/// interpolates `x_hat = a * fake + (1 - a) * real`, one `a ~ U(0, 1)` per
/// example. The result stays differentiable with respect to the critic's
/// parameters.
pub fn gradient_penalty<F>(critic: F, real: &Tensor, fake: &Tensor, seed: u64) -> Result<Var>
where
    F: Fn(&Var) -> Var,
{
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
    }
    let n = *real.shape().first().ok_or_else(|| Error::invalid("empty batch"))?;
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let per = real.numel() / n;
    let mut rng = rng_for(seed, &[]);
    let alphas: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut mixed = real.data().to_vec();
    for (i, chunk) in mixed.chunks_mut(per).enumerate() {
        let a = alphas[i];
        for (m, f) in chunk.iter_mut().zip(&fake.data()[i * per..(i + 1) * per]) {
            *m = a * f + (1.0 - a) * *m;
        }
    }
    let x_hat = Var::param(Tensor::new(real.shape().to_vec(), mixed));
    let scores = critic(&x_hat);
    if !scores.requires_grad() {
        // a critic that ignores its input has zero gradient everywhere
        return Ok(Var::constant(Tensor::new(vec![1], vec![1.0])));
    }
    let g = grad(&scores.sum(), &[&x_hat], true).remove(0);
    let mut stat_shape = vec![1; real.shape().len()];
    stat_shape[0] = n;
    let norms = g.square().sum_to(&stat_shape).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Mean absolute difference over every cell.
pub fn recon_loss(real: &Var, fake: &Var) -> Result<Var> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
    }
    Ok(real.sub(fake).abs().mean())
}

/// `(critic_loss + lambda_gp * gp, generator_loss + lambda_recon * recon)`.
pub fn total_losses(
    critic_loss: &Var,
    gp: &Var,
    generator_loss: &Var,
    recon: &Var,
    lambda_gp: f64,
    lambda_recon: f64,
) -> (Var, Var) {
    (critic_loss.add(&gp.scale(lambda_gp)), generator_loss.add(&recon.scale(lambda_recon)))
}

/// Paired normalised spectrograms and conditioning vectors.
#[derive(Clone, Debug)]
pub struct GanData {
    specs: Tensor,
    conds: Tensor,
}

impl GanData {
    pub fn new(specs: &[MelSpectrogram], conds: &[ConditioningVector]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::invalid("GAN training needs at least one example"));
        }
        if specs.len() != conds.len() {
            return Err(Error::Shape(format!("{} spectrograms but {} conditions", specs.len(), conds.len())));
        }
        if let Some(s) = specs.iter().find(|s| s.domain() != SpecDomain::NormPm1) {
            return Err(Error::Domain { expected: "norm_pm1".into(), actual: s.domain().tag().into() });
        }
        let n = specs.len();
        let spec_data = specs.iter().flat_map(|s| s.values().iter().copied()).collect();
        let cond_data = conds.iter().flat_map(|c| c.values().iter().copied()).collect();
        Ok(GanData {
            specs: Tensor::new(vec![n, 1, N_MELS, N_FRAMES], spec_data),
            conds: Tensor::new(vec![n, N_FRAMES], cond_data),
        })
    }

    pub fn len(&self) -> usize {
        self.conds.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let per_spec = N_MELS * N_FRAMES;
        let mut s = Vec::with_capacity(idx.len() * per_spec);
        let mut c = Vec::with_capacity(idx.len() * N_FRAMES);
        for &i in idx {
            s.extend_from_slice(&self.specs.data()[i * per_spec..(i + 1) * per_spec]);
            c.extend_from_slice(&self.conds.data()[i * N_FRAMES..(i + 1) * N_FRAMES]);
        }
        (
            Tensor::new(vec![idx.len(), 1, N_MELS, N_FRAMES], s),
            Tensor::new(vec![idx.len(), N_FRAMES], c),
        )
    }
}

/// One logged training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub critic_total: f64,
    pub generator_total: f64,
    pub gp: f64,
    pub recon: f64,
}

pub const LOG_HEADER: &str = "iteration,critic_total,generator_total,gp,recon";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.iteration, self.critic_total, self.generator_total, self.gp, self.recon
        )
    }
}

/// Appends rows to a delimited log, writing the header for a new file.
pub fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

const GEN: &str = "generator";
const CRITIC: &str = "critic";
const OPT_GEN: &str = "generator_adam";
const OPT_CRITIC: &str = "critic_adam";

/// Alternating critic/generator optimisation state.
///
/// All randomness in iteration `i` is derived from `(seed, stream, i, step)`,
/// so a trainer restored from a checkpoint continues exactly as an
/// uninterrupted run would.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    pub config: GanConfig,
    pub gen: ParamStore,
    pub critic: ParamStore,
    pub opt_gen: Adam,
    pub opt_critic: Adam,
    pub iteration: u64,
    pub norm_stats: Option<NormStats>,
    pub cond_stats: Option<NormStats>,
}

impl GanTrainer {
    pub fn new(config: GanConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[STREAM_INIT]);
        let gen = init_generator(&config, &mut rng);
        let critic = init_critic(&config, &mut rng);
        let adam = || Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2);
        Ok(GanTrainer {
            opt_gen: adam(),
            opt_critic: adam(),
            config,
            gen,
            critic,
            iteration: 0,
            norm_stats: None,
            cond_stats: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.kind != "gan" {
            return Err(Error::Checkpoint(format!("expected a gan checkpoint, found `{}`", ck.meta.kind)));
        }
        let config: GanConfig = serde_json::from_value(ck.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
        config.validate()?;
        Ok(GanTrainer {
            gen: ck.store(GEN)?.clone(),
            critic: ck.store(CRITIC)?.clone(),
            opt_gen: ck.optimizer(OPT_GEN)?.clone(),
            opt_critic: ck.optimizer(OPT_CRITIC)?.clone(),
            iteration: ck.meta.iteration,
            norm_stats: ck.extra("norm_stats").ok(),
            cond_stats: ck.extra("cond_stats").ok(),
            config,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir, &[GEN, CRITIC])?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::to_value(&self.config).expect("serialisable config");
        let mut ck = Checkpoint::new("gan", self.iteration, config);
        ck.stores.insert(GEN.into(), self.gen.clone());
        ck.stores.insert(CRITIC.into(), self.critic.clone());
        ck.optimizers.insert(OPT_GEN.into(), self.opt_gen.clone());
        ck.optimizers.insert(OPT_CRITIC.into(), self.opt_critic.clone());
        if let Some(s) = &self.norm_stats {
            ck.set_extra("norm_stats", s);
        }
        if let Some(s) = &self.cond_stats {
            ck.set_extra("cond_stats", s);
        }
        ck
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(iteration_dir_name(self.iteration));
        self.to_checkpoint().save(&dir)?;
        Ok(dir)
    }

    fn batch_indices(&self, n: usize, step: u64) -> Vec<usize> {
        let mut rng = rng_for(self.config.seed, &[STREAM_BATCH, self.iteration, step]);
        index::sample(&mut rng, n, self.config.batch_size.min(n)).into_vec()
    }

    fn noise_seed(&self, step: u64) -> u64 {
        derive_seed(self.config.seed, &[STREAM_DROPOUT, self.iteration, step])
    }

    /// Runs one iteration: `critic_steps` critic updates then one
    /// generator update.
    pub fn step(&mut self, data: &GanData) -> Result<LogRow> {
        if data.is_empty() {
            return Err(Error::invalid("GAN training needs at least one example"));
        }
        let cfg = self.config.clone();
        let mut critic_total = 0.0;
        let mut gp_value = 0.0;
        for s in 0..cfg.critic_steps as u64 {
            let (real, cond) = data.batch(&self.batch_indices(data.len(), s));
            let fake = {
                let _guard = no_grad();
                let g = self.gen.bind_frozen();
                generator_forward(&g, &cfg, &Var::constant(cond.clone()), GenMode::Train, self.noise_seed(s))
                    .output
                    .value()
                    .clone()
            };
            let c = self.critic.bind();
            let map = critic_cond_map(&c, &Var::constant(cond));
            let real_scores = critic_with_map(&c, &cfg, &Var::constant(real.clone()), &map);
            let fake_scores = critic_with_map(&c, &cfg, &Var::constant(fake.clone()), &map);
            let (wgan_critic, _) = wgan_losses(&real_scores, &fake_scores)?;
            let alpha_seed = derive_seed(cfg.seed, &[STREAM_ALPHA, self.iteration, s]);
            let gp = gradient_penalty(|x| critic_with_map(&c, &cfg, x, &map), &real, &fake, alpha_seed)?;
            let zero = Var::constant(Tensor::zeros(vec![1]));
            let (total, _) = total_losses(&wgan_critic, &gp, &zero, &zero, cfg.lambda_gp, 0.0);
            critic_total = total.value().item();
            gp_value = gp.value().item();
            if !critic_total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite critic loss at iteration {} (critic step {s})",
                    self.iteration + 1
                )));
            }
            let grads = c.grads(&total);
            self.opt_critic.apply(&mut self.critic, &grads);
        }

        let s = cfg.critic_steps as u64;
        let (real, cond) = data.batch(&self.batch_indices(data.len(), s));
        let g = self.gen.bind();
        let cond_v = Var::constant(cond);
        let fwd = generator_forward(&g, &cfg, &cond_v, GenMode::Train, self.noise_seed(s));
        let frozen = self.critic.bind_frozen();
        let fake_scores = critic_forward(&frozen, &cfg, &fwd.output, &cond_v).scores;
        let generator_loss = fake_scores.mean().neg();
        let recon = recon_loss(&Var::constant(real), &fwd.output)?;
        let zero = Var::constant(Tensor::zeros(vec![1]));
        let (_, gen_total) = total_losses(&zero, &zero, &generator_loss, &recon, 0.0, cfg.lambda_recon);
        let generator_total = gen_total.value().item();
        if !generator_total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite generator loss at iteration {}",
                self.iteration + 1
            )));
        }
        let grads = g.grads(&gen_total);
        self.opt_gen.apply(&mut self.gen, &grads);
        let m = cfg.bn_momentum;
        for (name, mean, var) in fwd.batch_stats {
            for (key, batch) in [("running_mean", mean), ("running_var", var)] {
                let full = format!("{name}.{key}");
                let old = self.gen.buffer(&full).expect("running statistic").clone();
                self.gen.insert_buffer(full, old.zip_map(&batch, |r, b| (1.0 - m) * r + m * b));
            }
        }

        self.iteration += 1;
        Ok(LogRow {
            iteration: self.iteration,
            critic_total,
            generator_total,
            gp: gp_value,
            recon: recon.value().item(),
        })
    }

    /// Trains until `until` iterations have completed. Checkpoints go to
    /// `checkpoint_dir/iter_XXXXXXX` every `checkpoint_every` iterations
    /// (and at iteration 0 for a fresh run); log rows to `log.csv` there.
    pub fn train_until(&mut self, data: &GanData, until: u64, checkpoint_dir: Option<&Path>) -> Result<Vec<LogRow>> {
        if data.is_empty() {
            return Err(Error::invalid("GAN training needs at least one example"));
        }
        if let Some(dir) = checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if self.iteration == 0 {
                self.save(dir)?;
            }
        }
        let mut rows = Vec::new();
        while self.iteration < until {
            let row = self.step(data)?;
            if row.iteration % self.config.log_every == 0 {
                if let Some(dir) = checkpoint_dir {
                    append_log(&dir.join("log.csv"), &[row])?;
                }
                log::debug!("gan {}", row.to_csv());
                rows.push(row);
            }
            if let Some(dir) = checkpoint_dir {
                if self.iteration.is_multiple_of(self.config.checkpoint_every) || self.iteration == until {
                    self.save(dir)?;
                }
            }
        }
        Ok(rows)
    }
}

/// Trains a fresh model for `config.total_iterations` iterations.
pub fn train_gan(data: &GanData, config: &GanConfig, checkpoint_dir: Option<&Path>) -> Result<(GanTrainer, Vec<LogRow>)> {
    let mut trainer = GanTrainer::new(config.clone())?;
    let rows = trainer.train_until(data, config.total_iterations, checkpoint_dir)?;
    Ok((trainer, rows))
}

const SAMPLE_CHUNK: usize = 16;

/// Runs the generator in sampling mode.
pub fn sample_from(gen: &ParamStore, cfg: &GanConfig, conds: &[ConditioningVector], seed: u64) -> Result<Vec<MelSpectrogram>> {
    let _guard = no_grad();
    let bound = gen.bind_frozen();
    let mut out = Vec::with_capacity(conds.len());
    for (chunk_idx, chunk) in conds.chunks(SAMPLE_CHUNK).enumerate() {
        let data = chunk.iter().flat_map(|c| c.values().iter().copied()).collect();
        let cond = Var::constant(Tensor::new(vec![chunk.len(), N_FRAMES], data));
        let noise = derive_seed(seed, &[STREAM_DROPOUT, chunk_idx as u64]);
        let y = generator_forward(&bound, cfg, &cond, GenMode::Sample, noise).output;
        if !y.value().all_finite() {
            return Err(Error::Numerical("generator produced non-finite values".into()));
        }
        for spec in y.value().unstack() {
            let values = spec.into_vec().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            out.push(MelSpectrogram::new(values, SpecDomain::NormPm1)?.with_source("synthetic"));
        }
    }
    Ok(out)
}

impl GanTrainer {
    pub fn sample(&self, conds: &[ConditioningVector], seed: u64) -> Result<Vec<MelSpectrogram>> {
        sample_from(&self.gen, &self.config, conds, seed)
    }
}

/// Draws `count` conditions by resampling `pool` and jittering voiced
/// frames by `U(-jitter, jitter)`, clamped to `[0, 1]`. Unvoiced frames
/// (exact zeros) stay unvoiced.
pub fn resample_conditions(
    pool: &[ConditioningVector],
    count: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<ConditioningVector>> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot resample from an empty condition pool"));
    }
    let mut rng = rng_for(seed, &[]);
    (0..count)
        .map(|_| {
            let base = &pool[rng.random_range(0..pool.len())];
            let values = base
                .values()
                .iter()
                .map(|&v| {
                    if v == 0.0 {
                        0.0
                    } else {
                        (v + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0)
                    }
                })
                .collect();
            ConditioningVector::new(values)
        })
        .collect()
}

/// Mean gradient penalty of `critic` over a fixed probe batch.
pub fn probe_gradient_penalty(trainer: &GanTrainer, data: &GanData, fake: &Tensor, seed: u64) -> Result<f64> {
    let n = fake.shape()[0];
    let idx: Vec<usize> = (0..n).map(|i| i % data.len()).collect();
    let (real, cond) = data.batch(&idx);
    let c = trainer.critic.bind_frozen();
    let cond_v = Var::constant(cond);
    let gp = gradient_penalty(|x| critic_forward(&c, &trainer.config, x, &cond_v).scores, &real, fake, seed)?;
    Ok(gp.value().item())
}
