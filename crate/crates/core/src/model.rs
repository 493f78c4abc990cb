//! The duet network: three sequence VAEs (one per dancer, one for their
//! proximity) and two transformer decoders, one per predictable dancer.
//!
//! Batches are time-major: `B` windows of `T` frames form a `(T*B) x F`
//! matrix whose row `t*B + b` is frame `t` of window `b`, with `F = M*D`.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    batched_positional_encoding, reparameterize_vars, standard_normal, ConvSmooth, Graph,
    LatentVars, LayerNorm, Linear, Lstm, Mat, ModelConfig, MultiHeadAttention, ParamStore, Var,
    VaeLatent,
};
use crate::preprocess::{proximity_signal, NormStats};
use crate::sequence::JointSequence;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dancer {
    One,
    Two,
}

impl Dancer {
    pub fn other(self) -> Self {
        match self {
            Dancer::One => Dancer::Two,
            Dancer::Two => Dancer::One,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Dancer::One),
            2 => Ok(Dancer::Two),
            _ => Err(Error::arg(format!("dancer must be 1 or 2, got {i}"))),
        }
    }
}

/// Stacks equal-length sequences into one time-major batch matrix.
pub fn stack_batch(seqs: &[&JointSequence]) -> Result<Mat> {
    let first = seqs.first().ok_or_else(|| Error::NoData("empty batch".into()))?;
    if seqs.iter().any(|s| !s.same_layout(first)) {
        return Err(Error::dim("batch sequences differ in shape"));
    }
    let (t, b, w) = (first.frames(), seqs.len(), first.frame_dim());
    let mut data = Vec::with_capacity(t * b * w);
    for step in 0..t {
        for s in seqs {
            data.extend_from_slice(s.frame(step));
        }
    }
    Mat::from_vec(t * b, w, data)
}

/// Inverse of [`stack_batch`].
pub fn unstack_batch(m: &Mat, batch: usize, joints: usize, coords: usize, fps: f64) -> Result<Vec<JointSequence>> {
    if batch == 0 || m.rows() % batch != 0 {
        return Err(Error::dim(format!("{} rows not a multiple of batch {batch}", m.rows())));
    }
    let t = m.rows() / batch;
    (0..batch)
        .map(|b| {
            let data = (0..t).flat_map(|s| m.row(s * batch + b).iter().copied()).collect();
            JointSequence::new(data, t, joints, coords, fps)
        })
        .collect()
}

fn check_width(g: &Graph, x: Var, width: usize, what: &str) -> Result<()> {
    let cols = g.value(x).cols();
    if cols != width {
        return Err(Error::dim(format!("{what}: frame width {cols}, model expects {width}")));
    }
    Ok(())
}

fn frames_of(g: &Graph, x: Var, batch: usize) -> Result<usize> {
    let rows = g.value(x).rows();
    if batch == 0 || rows % batch != 0 || rows == 0 {
        return Err(Error::dim(format!("{rows} rows do not form whole frames for batch {batch}")));
    }
    Ok(rows / batch)
}

/// Encoder: embedding, positional encoding, self-attention, LSTM, then
/// per-frame `mu` / `log_var` heads. Decoder: LSTM, temporal smoothing
/// convolution, projection back to frame width.
#[derive(Debug, Clone)]
pub struct DancerVae {
    embed: Linear,
    attention: MultiHeadAttention,
    encoder: Lstm,
    mu: Linear,
    log_var: Linear,
    decoder: Lstm,
    smooth: ConvSmooth,
    output: Linear,
    d_model: usize,
    frame_dim: usize,
    latent_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct VaeVars {
    pub recon: Var,
    pub latent: LatentVars,
}

impl DancerVae {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (f, d, l) = (cfg.frame_dim(), cfg.d_model, cfg.latent_dim);
        Ok(Self {
            embed: Linear::new(store, &format!("{name}.embed"), f, d, rng),
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.n_heads, rng)?,
            encoder: Lstm::new(store, &format!("{name}.enc"), d, d, cfg.lstm_layers, rng),
            mu: Linear::new(store, &format!("{name}.mu"), d, l, rng),
            log_var: Linear::new(store, &format!("{name}.log_var"), d, l, rng),
            decoder: Lstm::new(store, &format!("{name}.dec"), l, d, cfg.lstm_layers, rng),
            smooth: ConvSmooth::new(store, &format!("{name}.conv"), d, cfg.conv_kernel, rng)?,
            output: Linear::new(store, &format!("{name}.out"), d, f, rng),
            d_model: d,
            frame_dim: f,
            latent_dim: l,
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let (f, d, l) = (cfg.frame_dim(), cfg.d_model, cfg.latent_dim);
        Linear::param_count(f, d)
            + MultiHeadAttention::param_count(d)
            + Lstm::param_count(d, d, cfg.lstm_layers)
            + 2 * Linear::param_count(d, l)
            + Lstm::param_count(l, d, cfg.lstm_layers)
            + ConvSmooth::param_count(d, cfg.conv_kernel)
            + Linear::param_count(d, f)
    }

    /// Returns `(mu, log_var)`, each `(T*B) x latent`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<(Var, Var)> {
        check_width(g, x, self.frame_dim, "vae encoder")?;
        let t = frames_of(g, x, batch)?;
        let h = self.embed.forward(g, store, x)?;
        let pe = g.input(batched_positional_encoding(t, self.d_model, batch)?);
        let h = g.add(h, pe)?;
        let a = self.attention.forward(g, store, h, h, batch, false)?;
        let h = g.add(h, a)?;
        let (h, _) = self.encoder.forward(g, store, h, batch, None)?;
        Ok((self.mu.forward(g, store, h)?, self.log_var.forward(g, store, h)?))
    }

    pub fn decode(&self, g: &mut Graph, store: &ParamStore, z: Var, batch: usize) -> Result<Var> {
        check_width(g, z, self.latent_dim, "vae decoder")?;
        frames_of(g, z, batch)?;
        let (h, _) = self.decoder.forward(g, store, z, batch, None)?;
        let h = self.smooth.forward(g, store, h, batch)?;
        self.output.forward(g, store, h)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize, rng: &mut impl Rng) -> Result<VaeVars> {
        let (mu, log_var) = self.encode(g, store, x, batch)?;
        let latent = reparameterize_vars(g, mu, log_var, rng)?;
        let recon = self.decode(g, store, latent.z, batch)?;
        Ok(VaeVars { recon, latent })
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm3: LayerNorm,
}

/// Post-norm transformer decoder. The projected output is added to the
/// current target frame, so each row is the next-frame estimate.
#[derive(Debug, Clone)]
pub struct TransformerDecoder {
    target_in: Linear,
    memory_in: Linear,
    layers: Vec<DecoderLayer>,
    output: Linear,
    d_model: usize,
    frame_dim: usize,
}

impl TransformerDecoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (f, d) = (cfg.frame_dim(), cfg.d_model);
        let layers = (0..cfg.decoder_layers)
            .map(|i| {
                let p = format!("{name}.layer{i}");
                Ok(DecoderLayer {
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, cfg.n_heads, rng)?,
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d),
                    cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), d, cfg.n_heads, rng)?,
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.ff_dim, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.ff_dim, d, rng),
                    norm3: LayerNorm::new(store, &format!("{p}.norm3"), d),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            target_in: Linear::new(store, &format!("{name}.target_in"), f, d, rng),
            memory_in: Linear::new(store, &format!("{name}.memory_in"), f, d, rng),
            layers,
            output: Linear::new(store, &format!("{name}.out"), d, f, rng),
            d_model: d,
            frame_dim: f,
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let (f, d) = (cfg.frame_dim(), cfg.d_model);
        let layer = 2 * MultiHeadAttention::param_count(d)
            + 3 * LayerNorm::param_count(d)
            + Linear::param_count(d, cfg.ff_dim)
            + Linear::param_count(cfg.ff_dim, d);
        2 * Linear::param_count(f, d) + cfg.decoder_layers * layer + Linear::param_count(d, f)
    }

    /// `target` is `(T_q*B) x F`, `memory` is `(T_k*B) x F`; row `t` of the
    /// result depends on target rows `0..=t` and all of memory.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, target: Var, memory: Var, batch: usize) -> Result<Var> {
        check_width(g, target, self.frame_dim, "decoder target")?;
        check_width(g, memory, self.frame_dim, "decoder memory")?;
        let t = frames_of(g, target, batch)?;
        frames_of(g, memory, batch)?;
        let h = self.target_in.forward(g, store, target)?;
        let pe = g.input(batched_positional_encoding(t, self.d_model, batch)?);
        let mut h = g.add(h, pe)?;
        let mem = self.memory_in.forward(g, store, memory)?;
        for layer in &self.layers {
            let a = layer.self_attn.forward(g, store, h, h, batch, true)?;
            let s = g.add(h, a)?;
            h = layer.norm1.forward(g, store, s)?;
            let c = layer.cross_attn.forward(g, store, h, mem, batch, false)?;
            let s = g.add(h, c)?;
            h = layer.norm2.forward(g, store, s)?;
            let f = layer.ff1.forward(g, store, h)?;
            let f = g.relu(f);
            let f = layer.ff2.forward(g, store, f)?;
            let s = g.add(h, f)?;
            h = layer.norm3.forward(g, store, s)?;
        }
        let delta = self.output.forward(g, store, h)?;
        g.add(target, delta)
    }
}

/// Graph handles of one duet forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DuetVars {
    pub o1: Var,
    pub o2: Var,
    pub o3: Var,
    pub d1: Var,
    pub d2: Var,
    pub prediction: Var,
    pub latents: [LatentVars; 3],
}

/// Numeric result of [`DuetModel::duet_forward`], all `(T*B) x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DuetForwardOutput {
    pub o1: Mat,
    pub o2: Mat,
    pub o3: Mat,
    pub d1: Mat,
    pub d2: Mat,
    pub prediction: Mat,
    pub latents: [VaeLatent; 3],
}

#[derive(Debug, Clone)]
pub struct DuetModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub norm_stats: Option<NormStats>,
    pub vae1: DancerVae,
    pub vae2: DancerVae,
    pub vae3: DancerVae,
    pub decoder1: TransformerDecoder,
    pub decoder2: TransformerDecoder,
}

impl DuetModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let vae1 = DancerVae::new(&mut params, "vae1", &config, &mut rng)?;
        let vae2 = DancerVae::new(&mut params, "vae2", &config, &mut rng)?;
        let vae3 = DancerVae::new(&mut params, "vae3", &config, &mut rng)?;
        let decoder1 = TransformerDecoder::new(&mut params, "decoder1", &config, &mut rng)?;
        let decoder2 = TransformerDecoder::new(&mut params, "decoder2", &config, &mut rng)?;
        Ok(Self {
            config,
            params,
            norm_stats: None,
            vae1,
            vae2,
            vae3,
            decoder1,
            decoder2,
        })
    }

    pub fn param_count(config: &ModelConfig) -> usize {
        3 * DancerVae::param_count(config) + 2 * TransformerDecoder::param_count(config)
    }

    pub fn vae(&self, which: Dancer) -> &DancerVae {
        match which {
            Dancer::One => &self.vae1,
            Dancer::Two => &self.vae2,
        }
    }

    /// The decoder that predicts `which`.
    pub fn decoder(&self, which: Dancer) -> &TransformerDecoder {
        match which {
            Dancer::One => &self.decoder1,
            Dancer::Two => &self.decoder2,
        }
    }

    pub fn norm_stats(&self) -> Result<&NormStats> {
        self.norm_stats
            .as_ref()
            .ok_or_else(|| Error::State("model has no normalization statistics".into()))
    }

    /// Builds the full pass on graph inputs `x1`, `x2`. The proximity signal
    /// is computed from their values and enters as a constant.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x1: Var,
        x2: Var,
        batch: usize,
        target: Dancer,
        rng: &mut impl Rng,
    ) -> Result<DuetVars> {
        let (a, b) = (g.value(x1), g.value(x2));
        if !a.same_shape(b) {
            return Err(Error::dim(format!(
                "dancer inputs differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let prox = a.zip_map(b, |p, q| (p - q).abs());
        let x3 = g.input(prox);
        let v1 = self.vae1.forward(g, &self.params, x1, batch, rng)?;
        let v2 = self.vae2.forward(g, &self.params, x2, batch, rng)?;
        let v3 = self.vae3.forward(g, &self.params, x3, batch, rng)?;
        let d1 = g.add(v1.recon, v3.recon)?;
        let d2 = g.add(v2.recon, v3.recon)?;
        let prediction = match target {
            Dancer::Two => self.decoder2.forward(g, &self.params, x2, d1, batch)?,
            Dancer::One => self.decoder1.forward(g, &self.params, x1, d2, batch)?,
        };
        Ok(DuetVars {
            o1: v1.recon,
            o2: v2.recon,
            o3: v3.recon,
            d1,
            d2,
            prediction,
            latents: [v1.latent, v2.latent, v3.latent],
        })
    }

    /// Teacher-forced pass on normalized batches; row `t` of `prediction`
    /// estimates frame `t + 1` of the target dancer.
    pub fn duet_forward(&self, x1: &Mat, x2: &Mat, batch: usize, target: Dancer, rng: &mut impl Rng) -> Result<DuetForwardOutput> {
        let mut g = Graph::new();
        let a = g.input(x1.clone());
        let b = g.input(x2.clone());
        let v = self.forward_graph(&mut g, a, b, batch, target, rng)?;
        Ok(DuetForwardOutput {
            o1: g.value(v.o1).clone(),
            o2: g.value(v.o2).clone(),
            o3: g.value(v.o3).clone(),
            d1: g.value(v.d1).clone(),
            d2: g.value(v.d2).clone(),
            prediction: g.value(v.prediction).clone(),
            latents: [
                v.latents[0].values(&g),
                v.latents[1].values(&g),
                v.latents[2].values(&g),
            ],
        })
    }

    /// Single-sequence convenience over [`DuetModel::duet_forward`].
    pub fn duet_forward_sequences(
        &self,
        x1: &JointSequence,
        x2: &JointSequence,
        target: Dancer,
        rng: &mut impl Rng,
    ) -> Result<DuetForwardOutput> {
        proximity_signal(x1, x2)?;
        self.duet_forward(&x1.to_mat(), &x2.to_mat(), 1, target, rng)
    }

    /// Reconstruction of one VAE on a numeric batch.
    pub fn vae_forward(&self, which: Vae, x: &Mat, batch: usize, rng: &mut impl Rng) -> Result<(Mat, VaeLatent)> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let vae = match which {
            Vae::One => &self.vae1,
            Vae::Two => &self.vae2,
            Vae::Proximity => &self.vae3,
        };
        let out = vae.forward(&mut g, &self.params, xv, batch, rng)?;
        Ok((g.value(out.recon).clone(), out.latent.values(&g)))
    }

    /// Decodes latents drawn from `N(0, I)` with the proximity VAE.
    pub fn sample_interaction(&self, frames: usize, rng: &mut impl Rng) -> Result<Mat> {
        let mut g = Graph::new();
        let z = g.input(standard_normal(frames, self.config.latent_dim, rng));
        let out = self.vae3.decode(&mut g, &self.params, z, 1)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, writer: impl Write) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            norm_stats: self.norm_stats.clone(),
            params: self
                .params
                .iter()
                .map(|p| SavedParam {
                    name: p.name.clone(),
                    shape: [p.value.rows(), p.value.cols()],
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load(reader: impl Read) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_reader(reader)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        let mut model = Self::new(file.config, 0)?;
        if file.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, architecture needs {}",
                file.params.len(),
                model.params.len()
            )));
        }
        for saved in file.params {
            let id = model
                .params
                .find(&saved.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", saved.name)))?;
            let expected = model.params.value(id).shape();
            if expected != (saved.shape[0], saved.shape[1]) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    saved.name, saved.shape, expected
                )));
            }
            *model.params.value_mut(id) = Mat::from_vec(saved.shape[0], saved.shape[1], saved.data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", saved.name)))?;
        }
        if let Some(stats) = &file.norm_stats {
            if stats.channels() != model.config.frame_dim() {
                return Err(Error::Checkpoint("normalization statistics do not match joint layout".into()));
            }
        }
        model.norm_stats = file.norm_stats;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vae {
    One,
    Two,
    Proximity,
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    norm_stats: Option<NormStats>,
    params: Vec<SavedParam>,
}
