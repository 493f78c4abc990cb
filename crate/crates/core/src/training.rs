//! Losses, Adam, cosine annealing and the two-mode training loop.
//!
//! Each step draws a mode. FOCUSED trains only the two dancer VAEs on
//! reconstruction and KL; FULL runs the whole network and trains both
//! decoders on next-frame prediction with the velocity penalty.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stack_batch, Dancer, DuetModel};
use crate::nn::{kl_divergence, velocity_penalty, Graph, Mat, Param, ParamStore, Var};
use crate::preprocess::{compute_norm_stats, gaussian_augment, normalize};
use crate::sequence::JointSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Window length `T`; windows hold `T + 1` frames for the shifted target.
    pub seq_len: usize,
    /// Probability of a FOCUSED step.
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    /// Offset between the velocities compared by the velocity loss.
    pub frames: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub t_max: usize,
    pub epochs: usize,
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seq_len: 64,
            p: 0.1,
            alpha: 0.5,
            beta: 0.05,
            eta: 0.00005,
            frames: 1,
            lr: 0.001,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            t_max: 100,
            epochs: 100,
            noise_sigma: 0.01,
            batch_size: 8,
            stride: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::arg(format!("p must lie in [0, 1], got {}", self.p)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta), ("noise_sigma", self.noise_sigma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::arg(format!("lr must be > 0, got {}", self.lr)));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        for (name, v) in [
            ("frames", self.frames),
            ("t_max", self.t_max),
            ("batch_size", self.batch_size),
            ("stride", self.stride),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be >= 1")));
            }
        }
        if self.seq_len < self.frames + 2 {
            return Err(Error::arg(format!(
                "seq_len {} too short for velocity offset {}",
                self.seq_len, self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_mse: f64,
    pub l_velocity: f64,
    pub l_kl: f64,
    pub total: f64,
}

/// `alpha * l_mse + beta * l_velocity + eta * l_kl`.
pub fn total_loss(l_mse: f64, l_velocity: f64, l_kl: f64, cfg: &TrainConfig) -> LossBreakdown {
    LossBreakdown {
        l_mse,
        l_velocity,
        l_kl,
        total: cfg.alpha * l_mse + cfg.beta * l_velocity + cfg.eta * l_kl,
    }
}

pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::dim(format!(
            "mse_loss: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / pred.len().max(1) as f64)
}

pub fn kl_loss(mu: &Mat, log_var: &Mat) -> Result<f64> {
    kl_divergence(mu, log_var)
}

/// Mean over time (and batch) of `||v[t+frames] - v[t]||` for a time-major batch.
pub fn velocity_loss(pred: &Mat, batch: usize, frames: usize) -> Result<f64> {
    velocity_penalty(pred, batch, frames)
}

/// Cosine annealing from `cfg.lr` to zero over `t_max` epochs; later epochs stay at zero.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.t_max {
        return 0.0;
    }
    let phase = std::f64::consts::PI * epoch as f64 / cfg.t_max as f64;
    0.5 * cfg.lr * (1.0 + phase.cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Mat,
    pub v: Mat,
    pub step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Mat::zeros(rows, cols),
            v: Mat::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step on a single parameter.
pub fn adam_update(param: &mut Param, state: &mut AdamState, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient for `{}`", param.name)));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let g = param.grad.data();
    let m = state.m.data_mut();
    for (mi, gi) in m.iter_mut().zip(g) {
        *mi = b1 * *mi + (1.0 - b1) * gi;
    }
    let v = state.v.data_mut();
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
    }
    for ((w, mi), vi) in param.value.data_mut().iter_mut().zip(state.m.data()).zip(state.v.data()) {
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a whole parameter store with per-parameter step counts.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore, betas: (f64, f64), eps: f64) -> Self {
        Self {
            states: store.iter().map(|p| AdamState::new(p.value.rows(), p.value.cols())).collect(),
            betas,
            eps,
        }
    }

    pub fn state(&self, index: usize) -> &AdamState {
        &self.states[index]
    }

    /// Updates every parameter for which `select` holds. Gradients are
    /// checked for all selected parameters before any value changes.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, select: impl Fn(&Param) -> bool) -> Result<()> {
        if self.states.len() != store.len() {
            return Err(Error::State("optimizer built for a different parameter store".into()));
        }
        if let Some(p) = store.iter().find(|p| select(p) && !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for `{}`", p.name)));
        }
        for (p, s) in store.iter_mut().zip(&mut self.states) {
            if select(p) {
                adam_update(p, s, lr, self.betas, self.eps)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Focused,
    Full,
}

/// `u ~ U[0, 1)`; FOCUSED when `u < p`.
pub fn draw_mode(rng: &mut impl Rng, p: f64) -> Mode {
    if rng.random::<f64>() < p {
        Mode::Focused
    } else {
        Mode::Full
    }
}

/// Parameters FOCUSED steps may change.
pub fn is_dancer_vae_param(p: &Param) -> bool {
    p.name.starts_with("vae1.") || p.name.starts_with("vae2.")
}

/// One time-major batch of normalized windows. `input*` may carry
/// augmentation noise; `clean*` are the same frames without it and `next*`
/// are shifted one frame ahead.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub input1: Mat,
    pub input2: Mat,
    pub clean1: Mat,
    pub clean2: Mat,
    pub next1: Mat,
    pub next2: Mat,
    pub batch: usize,
}

impl TrainBatch {
    /// Splits windows of `T + 1` frames into inputs `[0, T)` and targets `[1, T + 1)`.
    pub fn from_windows(windows: &[&(JointSequence, JointSequence)], noise_sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut parts: [Vec<JointSequence>; 6] = Default::default();
        for (a, b) in windows {
            let t = a.frames();
            if t < 2 || !a.same_layout(b) {
                return Err(Error::dim("training windows need two equal-shape dancers of >= 2 frames"));
            }
            let (ca, cb) = (a.slice(0, t - 1)?, b.slice(0, t - 1)?);
            parts[0].push(gaussian_augment(&ca, noise_sigma, rng)?);
            parts[1].push(gaussian_augment(&cb, noise_sigma, rng)?);
            parts[4].push(a.slice(1, t - 1)?);
            parts[5].push(b.slice(1, t - 1)?);
            parts[2].push(ca);
            parts[3].push(cb);
        }
        let stack = |v: &Vec<JointSequence>| stack_batch(&v.iter().collect::<Vec<_>>());
        Ok(Self {
            input1: stack(&parts[0])?,
            input2: stack(&parts[1])?,
            clean1: stack(&parts[2])?,
            clean2: stack(&parts[3])?,
            next1: stack(&parts[4])?,
            next2: stack(&parts[5])?,
            batch: windows.len(),
        })
    }
}

/// Windows of `len` frames every `stride` frames over each pair. Pairs
/// shorter than `len` contribute nothing.
pub fn make_windows(pairs: &[(JointSequence, JointSequence)], len: usize, stride: usize) -> Result<Vec<(JointSequence, JointSequence)>> {
    if len == 0 || stride == 0 {
        return Err(Error::arg("window length and stride must be >= 1"));
    }
    let mut out = Vec::new();
    for (a, b) in pairs {
        if !a.same_layout(b) {
            return Err(Error::dim("dancers of a pair differ in shape"));
        }
        let mut start = 0;
        while start + len <= a.frames() {
            out.push((a.slice(start, len)?, b.slice(start, len)?));
            start += stride;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub mode: Mode,
    pub loss: LossBreakdown,
}

fn build_focused(g: &mut Graph, model: &DuetModel, b: &TrainBatch, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<(Var, [Var; 3])> {
    let x1 = g.input(b.input1.clone());
    let x2 = g.input(b.input2.clone());
    let c1 = g.input(b.clean1.clone());
    let c2 = g.input(b.clean2.clone());
    let v1 = model.vae1.forward(g, &model.params, x1, b.batch, rng)?;
    let v2 = model.vae2.forward(g, &model.params, x2, b.batch, rng)?;
    let m1 = g.mse_loss(v1.recon, c1)?;
    let m2 = g.mse_loss(v2.recon, c2)?;
    let mse = g.add(m1, m2)?;
    let k1 = g.kl_loss(v1.latent.mu, v1.latent.log_var)?;
    let k2 = g.kl_loss(v2.latent.mu, v2.latent.log_var)?;
    let kl = g.add(k1, k2)?;
    let zero = g.input(Mat::scalar(0.0));
    let a = g.scale(mse, cfg.alpha);
    let e = g.scale(kl, cfg.eta);
    let total = g.add(a, e)?;
    Ok((total, [mse, zero, kl]))
}

/// FULL-mode objective: both decoders predict their dancer's next frame.
pub fn build_full(g: &mut Graph, model: &DuetModel, b: &TrainBatch, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<(Var, [Var; 3])> {
    let x1 = g.input(b.input1.clone());
    let x2 = g.input(b.input2.clone());
    let y1 = g.input(b.next1.clone());
    let y2 = g.input(b.next2.clone());
    let v = model.forward_graph(g, x1, x2, b.batch, Dancer::Two, rng)?;
    let pred1 = model.decoder1.forward(g, &model.params, x1, v.d2, b.batch)?;
    let pred2 = v.prediction;
    let m1 = g.mse_loss(pred1, y1)?;
    let m2 = g.mse_loss(pred2, y2)?;
    let m = g.add(m1, m2)?;
    let mse = g.scale(m, 0.5);
    let s1 = g.velocity_loss(pred1, b.batch, cfg.frames)?;
    let s2 = g.velocity_loss(pred2, b.batch, cfg.frames)?;
    let s = g.add(s1, s2)?;
    let vel = g.scale(s, 0.5);
    let mut kl = g.kl_loss(v.latents[0].mu, v.latents[0].log_var)?;
    for l in &v.latents[1..] {
        let k = g.kl_loss(l.mu, l.log_var)?;
        kl = g.add(kl, k)?;
    }
    let a = g.scale(mse, cfg.alpha);
    let bv = g.scale(vel, cfg.beta);
    let e = g.scale(kl, cfg.eta);
    let ab = g.add(a, bv)?;
    let total = g.add(ab, e)?;
    Ok((total, [mse, vel, kl]))
}

/// Runs one step in the given mode and applies Adam at learning rate `lr`.
pub fn train_step_in_mode(
    model: &mut DuetModel,
    adam: &mut Adam,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    mode: Mode,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let (total, [mse, vel, kl]) = match mode {
        Mode::Focused => build_focused(&mut g, model, batch, cfg, rng)?,
        Mode::Full => build_full(&mut g, model, batch, cfg, rng)?,
    };
    let loss = total_loss(g.value(mse).item(), g.value(vel).item(), g.value(kl).item(), cfg);
    if !loss.total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {loss:?}")));
    }
    model.params.zero_grad();
    g.backward(total, &mut model.params)?;
    match mode {
        Mode::Focused => adam.step(&mut model.params, lr, is_dancer_vae_param)?,
        Mode::Full => adam.step(&mut model.params, lr, |_| true)?,
    }
    Ok(loss)
}

/// Draws the mode with probability `cfg.p` of FOCUSED, then steps.
pub fn train_step(
    model: &mut DuetModel,
    adam: &mut Adam,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let mode = draw_mode(rng, cfg.p);
    let loss = train_step_in_mode(model, adam, batch, cfg, mode, lr, rng)?;
    Ok(StepOutcome { mode, loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_mse: f64,
    pub l_velocity: f64,
    pub l_kl: f64,
    pub total: f64,
    /// Fraction of steps that ran in FOCUSED mode.
    pub mode_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Every step's mode and loss in order.
    pub steps: Vec<StepOutcome>,
}

/// Computes normalization statistics from `pairs` (both dancers pooled),
/// stores them on the model and trains for `cfg.epochs` epochs. `on_epoch`
/// runs after each epoch.
pub fn train_with(
    model: &mut DuetModel,
    pairs: &[(JointSequence, JointSequence)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &DuetModel) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::NoData("training set is empty".into()));
    }
    let all: Vec<&JointSequence> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    let stats = compute_norm_stats(&all)?;
    if stats.channels() != model.config.frame_dim() {
        return Err(Error::dim(format!(
            "data has {} channels per frame, model expects {}",
            stats.channels(),
            model.config.frame_dim()
        )));
    }
    let normalized = pairs
        .iter()
        .map(|(a, b)| Ok((normalize(a, &stats, false)?, normalize(b, &stats, false)?)))
        .collect::<Result<Vec<_>>>()?;
    model.norm_stats = Some(stats);
    let windows = make_windows(&normalized, cfg.seq_len + 1, cfg.stride)?;
    if windows.is_empty() {
        return Err(Error::NoData(format!(
            "no recording has the {} frames one training window needs",
            cfg.seq_len + 1
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.betas, cfg.adam_eps);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut focused = 0usize;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let selected: Vec<&(JointSequence, JointSequence)> = chunk.iter().map(|&i| &windows[i]).collect();
            let batch = TrainBatch::from_windows(&selected, cfg.noise_sigma, &mut rng)?;
            let out = train_step(model, &mut adam, &batch, cfg, lr, &mut rng)?;
            sum.l_mse += out.loss.l_mse;
            sum.l_velocity += out.loss.l_velocity;
            sum.l_kl += out.loss.l_kl;
            sum.total += out.loss.total;
            focused += usize::from(out.mode == Mode::Focused);
            steps += 1;
            report.steps.push(out);
        }
        let n = steps as f64;
        let record = EpochRecord {
            epoch,
            l_mse: sum.l_mse / n,
            l_velocity: sum.l_velocity / n,
            l_kl: sum.l_kl / n,
            total: sum.total / n,
            mode_fraction: focused as f64 / n,
        };
        on_epoch(&record, model)?;
        report.epochs.push(record);
    }
    Ok(report)
}

pub fn train(model: &mut DuetModel, pairs: &[(JointSequence, JointSequence)], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, pairs, cfg, |_, _| Ok(()))
}

pub const REPORT_HEADER: &str = "epoch,l_mse,l_velocity,l_kl,total,mode_fraction";

pub fn write_train_report(mut writer: impl Write, epochs: &[EpochRecord]) -> Result<()> {
    writeln!(writer, "{REPORT_HEADER}")?;
    for e in epochs {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            e.epoch, e.l_mse, e.l_velocity, e.l_kl, e.total, e.mode_fraction
        )?;
    }
    Ok(())
}

pub fn read_train_report(reader: impl BufRead) -> Result<Vec<EpochRecord>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != REPORT_HEADER {
        return Err(Error::Parse {
            location: "line 1".into(),
            field: "header".into(),
            message: format!("expected `{REPORT_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", i + 2);
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::Parse {
                location,
                field: "<row>".into(),
                message: format!("expected 6 cells, got {}", cells.len()),
            });
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            cells[k].trim().parse().map_err(|_| Error::Parse {
                location: location.clone(),
                field: name.into(),
                message: format!("`{}` is not a number", cells[k]),
            })
        };
        out.push(EpochRecord {
            epoch: num(0, "epoch")? as usize,
            l_mse: num(1, "l_mse")?,
            l_velocity: num(2, "l_velocity")?,
            l_kl: num(3, "l_kl")?,
            total: num(4, "total")?,
            mode_fraction: num(5, "mode_fraction")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = m(1, 2, &[0.0, 0.0]);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &m(1, 2, &[1.0, 3.0])).unwrap(), 5.0);
        assert_eq!(mse_loss(&m(1, 2, &[2.0, 4.0]), &m(1, 2, &[1.0, 3.0])).unwrap(), 1.0);
        assert!(mse_loss(&a, &Mat::zeros(2, 1)).is_err());
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_loss(&Mat::zeros(1, 3), &Mat::zeros(1, 3)).unwrap(), 0.0);
        assert_eq!(kl_loss(&m(1, 1, &[1.0]), &m(1, 1, &[0.0])).unwrap(), 0.5);
        let v = kl_loss(&Mat::zeros(1, 2), &m(1, 2, &[1.0, 1.0])).unwrap();
        assert!((v - (std::f64::consts::E - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn velocity_cases() {
        let squares = Mat::from_fn(6, 1, |t, _| (t * t) as f64);
        assert!((velocity_loss(&squares, 1, 1).unwrap() - 2.0).abs() < 1e-12);
        let linear = Mat::from_fn(6, 2, |t, c| 0.5 + c as f64 - 1.5 * t as f64);
        assert_eq!(velocity_loss(&linear, 1, 1).unwrap(), 0.0);
        assert!(matches!(velocity_loss(&Mat::zeros(2, 1), 1, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn weighted_total() {
        let cfg = TrainConfig::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &cfg).total, 0.0);
        assert_eq!(total_loss(1.0, 0.0, 0.0, &cfg).total, 0.5);
        assert!((total_loss(1.0, 1.0, 1.0, &cfg).total - 0.55005).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cosine_lr(0, &cfg), 0.001);
        assert!(cosine_lr(100, &cfg).abs() < 1e-18);
        assert!((cosine_lr(50, &cfg) - 0.0005).abs() < 1e-15);
        assert_eq!(cosine_lr(150, &cfg), 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [-3.0, 0.02, 7.5] {
            let mut p = Param {
                name: "w".into(),
                value: m(1, 1, &[1.0]),
                grad: m(1, 1, &[g]),
            };
            let mut s = AdamState::new(1, 1);
            adam_update(&mut p, &mut s, 0.01, (0.9, 0.999), 1e-8).unwrap();
            let moved = 1.0 - p.value.item();
            assert!((moved.abs() - 0.01).abs() < 1e-8);
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_and_nan() {
        let mut p = Param {
            name: "w".into(),
            value: m(1, 2, &[1.0, 2.0]),
            grad: Mat::zeros(1, 2),
        };
        let mut s = AdamState::new(1, 2);
        s.m = m(1, 2, &[0.5, 0.5]);
        s.v = m(1, 2, &[1.0, 1.0]);
        s.step = 5;
        let mut zero = p.clone();
        let mut s0 = AdamState::new(1, 2);
        adam_update(&mut zero, &mut s0, 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(zero.value, p.value);
        adam_update(&mut p, &mut s, 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(s.m.data()[0], 0.45);
        p.grad = m(1, 2, &[f64::NAN, 0.0]);
        match adam_update(&mut p, &mut s, 0.1, (0.9, 0.999), 1e-8) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("`w`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mode_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| draw_mode(&mut rng, 0.0) == Mode::Full));
        assert!((0..1000).all(|_| draw_mode(&mut rng, 1.0) == Mode::Focused));
    }

    #[test]
    fn windows_and_shift() {
        let a = JointSequence::new((0..30).map(|v| v as f64).collect(), 10, 1, 3, 30.0).unwrap();
        let w = make_windows(&[(a.clone(), a.clone())], 5, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].0.frame(0), a.frame(3));
        let b = TrainBatch::from_windows(&[&w[0]], 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.input1.rows(), 4);
        assert_eq!(b.next1.row(0), a.frame(1));
        assert_eq!(b.input1, b.clean1);
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![
            EpochRecord { epoch: 0, l_mse: 0.1 + 0.2, l_velocity: 1e-17, l_kl: 3.0, total: 0.7, mode_fraction: 0.125 },
            EpochRecord { epoch: 1, l_mse: 0.05, l_velocity: 0.0, l_kl: 2.5, total: 0.3, mode_fraction: 0.0 },
        ];
        let mut buf = Vec::new();
        write_train_report(&mut buf, &rows).unwrap();
        assert_eq!(read_train_report(buf.as_slice()).unwrap(), rows);
    }
}
