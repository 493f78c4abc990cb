//! Autoregressive generation: a partner for a given leader, or a whole
//! duet from a sampled interaction latent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Dancer, DuetModel, TransformerDecoder};
use crate::nn::{Graph, Mat, ParamStore};
use crate::preprocess::normalize;
use crate::sequence::JointSequence;

/// Default context length for a 64-frame rollout.
pub const DEFAULT_CONTEXT: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sequence: JointSequence,
    pub decoder_calls: usize,
}

/// Extends `start` to `total` frames, one decoder call per new frame. The
/// whole prefix is fed back each time and the last output row is appended.
pub fn autoregress(
    decoder: &TransformerDecoder,
    params: &ParamStore,
    start: &Mat,
    memory: &Mat,
    total: usize,
) -> Result<(Mat, usize)> {
    if start.rows() == 0 {
        return Err(Error::arg("rollout needs at least one context frame"));
    }
    let width = start.cols();
    let mut frames = start.data().to_vec();
    let mut calls = 0;
    for t in start.rows()..total {
        let mut g = Graph::new();
        let prefix = g.input(Mat::from_vec(t, width, frames.clone())?);
        let mem = g.input(memory.clone());
        let out = decoder.forward(&mut g, params, prefix, mem, 1)?;
        calls += 1;
        let next = g.value(out).row(t - 1).to_vec();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite prediction for frame {t}")));
        }
        frames.extend(next);
    }
    Ok((Mat::from_vec(total.max(start.rows()), width, frames)?, calls))
}

/// Generates `target` given the other dancer's full sequence and the first
/// `context.frames()` frames of `target`. Inputs and output are in raw
/// coordinates; output frames before the context length are the context
/// itself.
pub fn rollout_partner(
    model: &DuetModel,
    leader: &JointSequence,
    context: &JointSequence,
    target: Dancer,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let stats = model.norm_stats()?;
    let (total, t0) = (leader.frames(), context.frames());
    if t0 == 0 || t0 >= total {
        return Err(Error::arg(format!(
            "context length {t0} must satisfy 1 <= t0 < T = {total}"
        )));
    }
    if leader.joints() != context.joints() || leader.coords() != context.coords() {
        return Err(Error::dim("leader and context joint layouts differ"));
    }
    let lead = normalize(leader, stats, false)?.to_mat();
    let ctx = normalize(context, stats, false)?.to_mat();
    let width = lead.cols();
    if width != model.config.frame_dim() {
        return Err(Error::dim(format!(
            "sequence frame width {width}, model expects {}",
            model.config.frame_dim()
        )));
    }

    // the partner is unknown past the context, so it is held at its last frame
    let held = Mat::from_fn(total, width, |t, c| ctx.get(t.min(t0 - 1), c));
    let proximity = lead.zip_map(&held, |a, b| (a - b).abs());
    let mut g = Graph::new();
    let lv = g.input(lead);
    let pv = g.input(proximity);
    let o_lead = model.vae(target.other()).forward(&mut g, &model.params, lv, 1, rng)?;
    let o3 = model.vae3.forward(&mut g, &model.params, pv, 1, rng)?;
    let memory = g.add(o_lead.recon, o3.recon)?;
    let memory = g.value(memory).clone();

    let (generated, calls) = autoregress(model.decoder(target), &model.params, &ctx, &memory, total)?;
    let generated = JointSequence::from_mat(&generated, leader.joints(), leader.coords(), leader.fps)?;
    let mut out = normalize(&generated, stats, true)?;
    out.data_mut()[..context.data().len()].copy_from_slice(context.data());
    Ok(Rollout {
        sequence: out,
        decoder_calls: calls,
    })
}

pub fn generate_partner(
    model: &DuetModel,
    leader: &JointSequence,
    context: &JointSequence,
    target: Dancer,
    rng: &mut impl Rng,
) -> Result<JointSequence> {
    rollout_partner(model, leader, context, target, rng).map(|r| r.sequence)
}

/// Samples an interaction sequence from the proximity VAE's prior and rolls
/// out both dancers against it from the mean pose held for `length / 4`
/// frames (at least one).
pub fn generate_duet(model: &DuetModel, length: usize, fps: f64, rng: &mut impl Rng) -> Result<(JointSequence, JointSequence)> {
    if length < 2 {
        return Err(Error::arg(format!("duet length must be >= 2, got {length}")));
    }
    let stats = model.norm_stats()?;
    let memory = model.sample_interaction(length, rng)?;
    let start = Mat::zeros((length / 4).max(1), model.config.frame_dim());
    let (cfg_j, cfg_c) = (model.config.joints, model.config.coords);
    let mut out = Vec::with_capacity(2);
    for dancer in [Dancer::One, Dancer::Two] {
        let (m, _) = autoregress(model.decoder(dancer), &model.params, &start, &memory, length)?;
        let seq = JointSequence::from_mat(&m, cfg_j, cfg_c, fps)?;
        out.push(normalize(&seq, stats, true)?);
    }
    let b = out.pop().expect("two dancers");
    let a = out.pop().expect("two dancers");
    Ok((a, b))
}
