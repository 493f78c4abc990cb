use duetgen::model::{DancerVae, DuetModel, TransformerDecoder};
use duetgen::nn::{
    check_graph_gradients, reparameterize_with_noise, standard_normal, ConvSmooth, Graph, LayerNorm, Linear, Lstm,
    Mat, ModelConfig, MultiHeadAttention, ParamStore, Var,
};
use duetgen::training::{build_full, TrainBatch, TrainConfig};
use duetgen::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_mat(r: usize, c: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-0.5..0.5))
}

fn redraw(store: &mut ParamStore, rng: &mut impl Rng) {
    for p in store.iter_mut() {
        p.value = rand_mat(p.value.rows(), p.value.cols(), rng);
    }
}

/// Reduces any node to a scalar through an MSE against a fixed random target.
fn reduce(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(out).shape();
    let target = g.input(rand_mat(r, c, &mut ChaCha8Rng::seed_from_u64(seed)));
    g.mse_loss(out, target)
}

fn assert_grad<F>(label: &str, store: &ParamStore, inputs: &[Mat], build: F)
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let report = check_graph_gradients(store, inputs, H, FLOOR, build).unwrap();
    assert!(report.checked_entries > 0, "{label}: nothing checked");
    assert!(
        report.max_rel_error < TOL,
        "{label}: max relative error {} in {}",
        report.max_rel_error,
        report.worst
    );
}

const SHAPES: [(usize, usize); 3] = [(1, 1), (3, 4), (5, 2)];

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let empty = ParamStore::new();
    for (r, c) in SHAPES {
        let xs = [rand_mat(r, c, &mut rng), rand_mat(r, c, &mut rng)];
        type Op = fn(&mut Graph, Var, Var) -> Result<Var>;
        let ops: [(&str, Op); 9] = [
            ("add", |g, a, b| g.add(a, b)),
            ("sub", |g, a, b| g.sub(a, b)),
            ("mul", |g, a, b| g.mul(a, b)),
            ("scale", |g, a, _| Ok(g.scale(a, -1.7))),
            ("sigmoid", |g, a, _| Ok(g.sigmoid(a))),
            ("tanh", |g, a, _| Ok(g.tanh(a))),
            ("relu", |g, a, _| Ok(g.relu(a))),
            ("exp", |g, a, _| Ok(g.exp(a))),
            ("chain", |g, a, b| {
                let s = g.sigmoid(a);
                let m = g.mul(s, b)?;
                let t = g.tanh(m);
                g.add(t, a)
            }),
        ];
        for (name, op) in ops {
            assert_grad(&format!("{name} {r}x{c}"), &empty, &xs, |g, _, v| {
                let out = op(g, v[0], v[1])?;
                reduce(g, out, 7)
            });
        }
    }
}

#[test]
fn matmul_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let empty = ParamStore::new();
    for (n, k, m) in [(1, 1, 1), (3, 4, 2), (2, 5, 6)] {
        let xs = [rand_mat(n, k, &mut rng), rand_mat(k, m, &mut rng), rand_mat(1, m, &mut rng)];
        assert_grad(&format!("matmul {n}x{k}x{m}"), &empty, &xs, |g, _, v| {
            let p = g.matmul(v[0], v[1])?;
            let out = g.add_row(p, v[2])?;
            reduce(g, out, 3)
        });
    }
}

#[test]
fn slicing_and_concatenation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let empty = ParamStore::new();
    for (r, c) in [(2, 3), (4, 5), (6, 2)] {
        let xs = [rand_mat(r, c, &mut rng), rand_mat(r, c, &mut rng)];
        assert_grad(&format!("cols/rows {r}x{c}"), &empty, &xs, |g, _, v| {
            let a = g.cols(v[0], 1, c - 1)?;
            let b = g.cols(v[1], 0, 1)?;
            let joined = g.concat_cols(&[b, a])?;
            let top = g.rows(joined, 0, 1)?;
            let rest = g.rows(v[1], 1, r - 1)?;
            let stacked = g.concat_rows(&[rest, top])?;
            reduce(g, stacked, 4)
        });
    }
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let empty = ParamStore::new();
    for (r, c) in [(4, 1), (6, 3), (10, 2)] {
        let xs = [rand_mat(r, c, &mut rng), rand_mat(r, c, &mut rng)];
        assert_grad(&format!("mse {r}x{c}"), &empty, &xs, |g, _, v| g.mse_loss(v[0], v[1]));
        assert_grad(&format!("kl {r}x{c}"), &empty, &xs, |g, _, v| g.kl_loss(v[0], v[1]));
        for batch in [1, 2] {
            if r % batch == 0 && r / batch >= 3 {
                assert_grad(&format!("velocity {r}x{c} b{batch}"), &empty, &xs, |g, _, v| g.velocity_loss(v[0], batch, 1));
            }
        }
    }
}

#[test]
fn layer_norm_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (r, c) in [(1, 2), (3, 4), (5, 7)] {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", c);
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(r, c, &mut rng)];
        assert_grad(&format!("layer_norm {r}x{c}"), &store, &xs, |g, s, v| {
            let out = ln.forward(g, s, v[0])?;
            reduce(g, out, 5)
        });
    }
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, i, o) in [(1, 1, 1), (3, 4, 2), (5, 3, 6)] {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", i, o, &mut rng);
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(n, i, &mut rng)];
        assert_grad(&format!("linear {n}x{i}->{o}"), &store, &xs, |g, s, v| {
            let out = lin.forward(g, s, v[0])?;
            reduce(g, out, 6)
        });
    }
}

#[test]
fn lstm_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (t, b, d, h, layers) in [(3, 1, 4, 4, 2), (2, 2, 3, 5, 1), (4, 3, 2, 3, 2)] {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", d, h, layers, &mut rng);
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(t * b, d, &mut rng)];
        assert_grad(&format!("lstm T{t} B{b} d{d} h{h}"), &store, &xs, |g, s, v| {
            let (out, finals) = lstm.forward(g, s, v[0], b, None)?;
            let last = finals.last().unwrap();
            let both = g.concat_rows(&[out, last.c])?;
            reduce(g, both, 8)
        });
    }
}

#[test]
fn attention_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (tq, tk, b, d, heads) in [(1, 1, 1, 2, 1), (3, 4, 2, 4, 2), (4, 4, 1, 6, 3)] {
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", d, heads, &mut rng).unwrap();
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(tq * b, d, &mut rng), rand_mat(tk * b, d, &mut rng)];
        for causal in [false, true] {
            assert_grad(&format!("mha tq{tq} tk{tk} b{b} d{d} h{heads} causal={causal}"), &store, &xs, |g, s, v| {
                let out = mha.forward(g, s, v[0], v[1], b, causal)?;
                reduce(g, out, 9)
            });
        }
    }
}

#[test]
fn conv_smooth_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (t, b, c, k) in [(1, 1, 1, 3), (5, 2, 3, 3), (6, 1, 2, 5)] {
        let mut store = ParamStore::new();
        let conv = ConvSmooth::new(&mut store, "conv", c, k, &mut rng).unwrap();
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(t * b, c, &mut rng)];
        assert_grad(&format!("conv T{t} B{b} C{c} k{k}"), &store, &xs, |g, s, v| {
            let out = conv.forward(g, s, v[0], b)?;
            reduce(g, out, 10)
        });
    }
}

#[test]
fn reparameterize_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (r, c) in SHAPES {
        let eps = standard_normal(r, c, &mut rng);
        let xs = [rand_mat(r, c, &mut rng), rand_mat(r, c, &mut rng)];
        assert_grad(&format!("reparameterize {r}x{c}"), &ParamStore::new(), &xs, |g, _, v| {
            let lat = reparameterize_with_noise(g, v[0], v[1], eps.clone())?;
            let kl = g.kl_loss(v[0], v[1])?;
            let rec = reduce(g, lat.z, 11)?;
            g.add(rec, kl)
        });
    }
}

fn tiny_config(heads: usize) -> ModelConfig {
    ModelConfig {
        joints: 2,
        coords: 3,
        d_model: 8,
        n_heads: heads,
        latent_dim: 3,
        lstm_layers: 2,
        conv_kernel: 3,
        decoder_layers: 1,
        ff_dim: 6,
    }
}

#[test]
fn tiny_transformer_decoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (t, tk, b, heads) in [(4, 4, 1, 1), (3, 5, 2, 2), (2, 2, 3, 4)] {
        let cfg = tiny_config(heads);
        let mut store = ParamStore::new();
        let dec = TransformerDecoder::new(&mut store, "dec", &cfg, &mut rng).unwrap();
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(t * b, 6, &mut rng), rand_mat(tk * b, 6, &mut rng)];
        assert_grad(&format!("decoder T{t} Tk{tk} B{b} heads{heads}"), &store, &xs, |g, s, v| {
            let out = dec.forward(g, s, v[0], v[1], b)?;
            reduce(g, out, 12)
        });
    }
}

#[test]
fn tiny_vae() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (t, b) in [(3, 1), (4, 2)] {
        let cfg = tiny_config(2);
        let mut store = ParamStore::new();
        let vae = DancerVae::new(&mut store, "vae", &cfg, &mut rng).unwrap();
        redraw(&mut store, &mut rng);
        let xs = [rand_mat(t * b, 6, &mut rng)];
        assert_grad(&format!("vae T{t} B{b}"), &store, &xs, |g, s, v| {
            let out = vae.forward(g, s, v[0], b, &mut ChaCha8Rng::seed_from_u64(99))?;
            let rec = reduce(g, out.recon, 13)?;
            let kl = g.kl_loss(out.latent.mu, out.latent.log_var)?;
            g.add(rec, kl)
        });
    }
}

#[test]
fn full_training_objective() {
    // every parameter of a tiny duet model through the FULL-mode loss
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = DuetModel::new(tiny_config(2), 5).unwrap();
    redraw(&mut model.params, &mut rng);
    let batch = TrainBatch {
        input1: rand_mat(8, 6, &mut rng),
        input2: rand_mat(8, 6, &mut rng),
        clean1: rand_mat(8, 6, &mut rng),
        clean2: rand_mat(8, 6, &mut rng),
        next1: rand_mat(8, 6, &mut rng),
        next2: rand_mat(8, 6, &mut rng),
        batch: 2,
    };
    let cfg = TrainConfig {
        eta: 0.3,
        ..Default::default()
    };
    let report = check_graph_gradients(&model.params, &[], H, FLOOR, |g, s, _| {
        let mut m = model.clone();
        m.params = s.clone();
        build_full(g, &m, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(21)).map(|(total, _)| total)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn checker_flags_a_detached_path() {
    // the parameter reaches the loss only through a constant copy, so the
    // analytic gradient is zero while the numeric one is not
    let mut store = ParamStore::new();
    let id = store.add("w", Mat::from_vec(1, 2, vec![0.3, -0.2]).unwrap());
    let report = check_graph_gradients(&store, &[], H, FLOOR, |g, s, _| {
        let copy = g.input(s.value(id).clone());
        reduce(g, copy, 1)
    })
    .unwrap();
    assert!(report.max_rel_error > 0.5, "{report:?}");
}
