use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Mat;
use crate::error::{Error, Result};

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/width))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/width))`.
pub fn positional_encoding(length: usize, width: usize) -> Result<Mat> {
    if length == 0 || width == 0 {
        return Err(Error::arg("positional encoding needs length and width >= 1"));
    }
    if width % 2 != 0 {
        return Err(Error::arg(format!("positional encoding width {width} must be even")));
    }
    Ok(Mat::from_fn(length, width, |pos, col| {
        let i2 = (col - col % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / width as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Position table repeated for every batch element in time-major layout.
pub fn batched_positional_encoding(length: usize, width: usize, batch: usize) -> Result<Mat> {
    let pe = positional_encoding(length, width)?;
    Ok(Mat::from_fn(length * batch, width, |r, c| pe.get(r / batch, c)))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), inputs, outputs, inputs, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, outputs, inputs, rng);
        Self { weight, bias }
    }

    pub fn param_count(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    /// `x * W + b` for `x` of shape `N x in`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Stacked LSTM with input, forget, candidate and output gates (in that
/// column order of the fused gate matrices).
#[derive(Debug, Clone)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_w = if l == 0 { inputs } else { hidden };
                LstmLayer {
                    w_ih: store.add_uniform(format!("{name}.l{l}.w_ih"), in_w, 4 * hidden, hidden, rng),
                    w_hh: store.add_uniform(format!("{name}.l{l}.w_hh"), hidden, 4 * hidden, hidden, rng),
                    bias: store.add_uniform(format!("{name}.l{l}.bias"), 1, 4 * hidden, hidden, rng),
                }
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn param_count(inputs: usize, hidden: usize, layers: usize) -> usize {
        (0..layers)
            .map(|l| {
                let in_w = if l == 0 { inputs } else { hidden };
                in_w * 4 * hidden + hidden * 4 * hidden + 4 * hidden
            })
            .sum()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs the stack over `x` of shape `(T*B) x in`. Returns the top layer's
    /// hidden states `(T*B) x hidden` and the final state of every layer.
    /// Missing initial states are zero.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        batch: usize,
        initial: Option<&[LstmState]>,
    ) -> Result<(Var, Vec<LstmState>)> {
        let rows = g.value(x).rows();
        if batch == 0 || rows % batch != 0 {
            return Err(Error::dim(format!("lstm: {rows} rows not a multiple of batch {batch}")));
        }
        if let Some(init) = initial {
            if init.len() != self.layers.len() {
                return Err(Error::dim("lstm: one initial state per layer required"));
            }
        }
        let steps = rows / batch;
        let h = self.hidden;
        let mut input = x;
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let w_ih = g.param(store, layer.w_ih);
            if g.value(input).cols() != g.value(w_ih).rows() {
                return Err(Error::dim(format!(
                    "lstm layer {l}: input width {} expected {}",
                    g.value(input).cols(),
                    g.value(w_ih).rows()
                )));
            }
            let w_hh = g.param(store, layer.w_hh);
            let bias = g.param(store, layer.bias);
            let projected = g.matmul(input, w_ih)?;
            let projected = g.add_row(projected, bias)?;
            let (mut hs, mut cs) = match initial {
                Some(init) => (init[l].h, init[l].c),
                None => {
                    let z = g.input(Mat::zeros(batch, h));
                    (z, z)
                }
            };
            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = g.rows(projected, t * batch, batch)?;
                let rec = g.matmul(hs, w_hh)?;
                let gates = g.add(xt, rec)?;
                let i = g.cols(gates, 0, h)?;
                let f = g.cols(gates, h, h)?;
                let cand = g.cols(gates, 2 * h, h)?;
                let o = g.cols(gates, 3 * h, h)?;
                let i = g.sigmoid(i);
                let f = g.sigmoid(f);
                let cand = g.tanh(cand);
                let o = g.sigmoid(o);
                let keep = g.mul(f, cs)?;
                let write = g.mul(i, cand)?;
                cs = g.add(keep, write)?;
                let ct = g.tanh(cs);
                hs = g.mul(o, ct)?;
                outputs.push(hs);
            }
            finals.push(LstmState { h: hs, c: cs });
            input = g.concat_rows(&outputs)?;
        }
        Ok((input, finals))
    }
}

/// Multi-head attention with learned query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::arg(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        })
    }

    pub fn param_count(width: usize) -> usize {
        4 * Linear::param_count(width, width)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        key_value: Var,
        batch: usize,
        causal: bool,
    ) -> Result<Var> {
        self.forward_with_weights(g, store, query, key_value, batch, causal)
            .map(|(out, _)| out)
    }

    /// Also returns the raw attention node, whose softmax weights can be read
    /// with [`Graph::attention_weights`].
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        key_value: Var,
        batch: usize,
        causal: bool,
    ) -> Result<(Var, Var)> {
        let q = self.query.forward(g, store, query)?;
        let k = self.key.forward(g, store, key_value)?;
        let v = self.value.forward(g, store, key_value)?;
        let attn = g.attention(q, k, v, batch, self.heads, causal)?;
        let out = self.output.forward(g, store, attn)?;
        Ok((out, attn))
    }
}

/// Depthwise temporal smoothing convolution (one odd-width filter per channel).
#[derive(Debug, Clone)]
pub struct ConvSmooth {
    pub kernel: ParamId,
}

impl ConvSmooth {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::arg(format!("convolution kernel width {width} must be odd")));
        }
        let kernel = store.add_uniform(format!("{name}.kernel"), channels, width, width, rng);
        Ok(Self { kernel })
    }

    pub fn param_count(channels: usize, width: usize) -> usize {
        channels * width
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<Var> {
        let k = g.param(store, self.kernel);
        g.conv_time(x, k, batch)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, width, 1.0)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, width)),
        }
    }

    pub fn param_count(width: usize) -> usize {
        2 * width
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Reparameterized Gaussian sample in numeric form.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeLatent {
    pub mu: Mat,
    pub sigma: Mat,
    pub z: Mat,
    pub eps: Mat,
}

/// Graph handles of a reparameterized sample. `eps` is a constant leaf, so
/// gradients reach `mu` and `log_var` only.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub log_var: Var,
    pub sigma: Var,
    pub eps: Var,
    pub z: Var,
}

impl LatentVars {
    pub fn values(&self, g: &Graph) -> VaeLatent {
        VaeLatent {
            mu: g.value(self.mu).clone(),
            sigma: g.value(self.sigma).clone(),
            z: g.value(self.z).clone(),
            eps: g.value(self.eps).clone(),
        }
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `z = mu + exp(0.5 * log_var) * eps` with the supplied noise.
pub fn reparameterize_with_noise(g: &mut Graph, mu: Var, log_var: Var, eps: Mat) -> Result<LatentVars> {
    if !g.value(mu).same_shape(g.value(log_var)) || !g.value(mu).same_shape(&eps) {
        return Err(Error::dim("reparameterize: mu, log_var and eps shapes differ"));
    }
    let half = g.scale(log_var, 0.5);
    let sigma = g.exp(half);
    let eps = g.input(eps);
    let spread = g.mul(sigma, eps)?;
    let z = g.add(mu, spread)?;
    Ok(LatentVars {
        mu,
        log_var,
        sigma,
        eps,
        z,
    })
}

/// Draws `eps ~ N(0, I)` from `rng` and reparameterizes.
pub fn reparameterize_vars(
    g: &mut Graph,
    mu: Var,
    log_var: Var,
    rng: &mut impl Rng,
) -> Result<LatentVars> {
    let (r, c) = g.value(mu).shape();
    let eps = standard_normal(r, c, rng);
    reparameterize_with_noise(g, mu, log_var, eps)
}

/// Numeric convenience wrapper around [`reparameterize_vars`].
pub fn reparameterize(mu: &Mat, log_var: &Mat, rng: &mut impl Rng) -> Result<VaeLatent> {
    let mut g = Graph::new();
    let m = g.input(mu.clone());
    let l = g.input(log_var.clone());
    Ok(reparameterize_vars(&mut g, m, l, rng)?.values(&g))
}
