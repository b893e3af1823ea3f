//! Random gradient-check instances shared by the gradient tests and the
//! acceptance run. Everything runs in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbooster::autograd::{Graph, Var};
use tbooster::connector::{connector_loss, Connector, ConnectorConfig};
use tbooster::gradcheck::{grad_check, REL_FLOOR};
use tbooster::params::ParamStore;
use tbooster::splitter::{splitter_loss, Splitter, SplitterConfig};
use tbooster::tensor::Tensor;
use tbooster::Result;

pub const EPS: f64 = 1e-4;

pub type Loss = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ r ⊙ y` so that every output element receives a distinct weight.
fn weighted(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let w = g.input(r.clone(), false)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// One random instance of `op`: inputs plus the scalar function to check.
pub fn instance(op: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Loss) {
    let (m, n) = (dim(rng, 1, 4), dim(rng, 1, 5));
    let r = rand_t(rng, &[m, n]);
    match op {
        "matmul" => {
            let k = dim(rng, 1, 4);
            (
                vec![rand_t(rng, &[m, k]), rand_t(rng, &[k, n])],
                Box::new(move |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "add" | "mul" => {
            let mul = op == "mul";
            (
                vec![rand_t(rng, &[m, n]), rand_t(rng, &[m, n])],
                Box::new(move |g, v| {
                    let y = if mul { g.mul(v[0], v[1])? } else { g.add(v[0], v[1])? };
                    weighted(g, y, &r)
                }),
            )
        }
        "scale" => {
            let c: f64 = rng.random_range(-2.0..2.0);
            (
                vec![rand_t(rng, &[m, n])],
                Box::new(move |g, v| {
                    let y = g.scale(v[0], c)?;
                    weighted(g, y, &r)
                }),
            )
        }
        "bias_cols" => (
            vec![rand_t(rng, &[m, n]), rand_t(rng, &[m])],
            Box::new(move |g, v| {
                let y = g.bias_cols(v[0], v[1])?;
                weighted(g, y, &r)
            }),
        ),
        "bias_rows" => (
            vec![rand_t(rng, &[m, n]), rand_t(rng, &[n])],
            Box::new(move |g, v| {
                let y = g.bias_rows(v[0], v[1])?;
                weighted(g, y, &r)
            }),
        ),
        "conv1d_dilated" => {
            let (ci, co, t, d) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 9), dim(rng, 1, 4));
            let r = rand_t(rng, &[co, t]);
            (
                vec![rand_t(rng, &[ci, t]), rand_t(rng, &[co, ci, 3])],
                Box::new(move |g, v| {
                    let y = g.conv1d(v[0], v[1], d)?;
                    weighted(g, y, &r)
                }),
            )
        }
        "relu" | "sigmoid" | "softplus" => {
            let kind = op.to_string();
            let x = if op == "relu" {
                rand_away(rng, &[m, n])
            } else {
                rand_t(rng, &[m, n])
            };
            (
                vec![x],
                Box::new(move |g, v| {
                    let y = match kind.as_str() {
                        "relu" => g.relu(v[0])?,
                        "sigmoid" => g.sigmoid(v[0])?,
                        _ => g.softplus(v[0])?,
                    };
                    weighted(g, y, &r)
                }),
            )
        }
        "pair_mean_cols" => {
            let n = dim(rng, 2, 6);
            let r = rand_t(rng, &[m, n - 1]);
            (
                vec![rand_t(rng, &[m, n])],
                Box::new(move |g, v| {
                    let y = g.pair_mean_cols(v[0])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "transpose" => {
            let r = rand_t(rng, &[n, m]);
            (
                vec![rand_t(rng, &[m, n])],
                Box::new(move |g, v| {
                    let y = g.transpose(v[0])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "softmax_rows" => (
            vec![rand_t(rng, &[m, n])],
            Box::new(move |g, v| {
                let y = g.softmax_rows(v[0])?;
                weighted(g, y, &r)
            }),
        ),
        "layer_norm_rows" => {
            let n = dim(rng, 2, 5);
            let r = rand_t(rng, &[m, n]);
            (
                vec![rand_t(rng, &[m, n]), rand_t(rng, &[n]), rand_t(rng, &[n])],
                Box::new(move |g, v| {
                    let y = g.layer_norm_rows(v[0], v[1], v[2])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "concat_cols" => {
            let n2 = dim(rng, 1, 3);
            let r = rand_t(rng, &[m, n + n2]);
            (
                vec![rand_t(rng, &[m, n]), rand_t(rng, &[m, n2])],
                Box::new(move |g, v| {
                    let y = g.concat_cols(&[v[0], v[1]])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "concat_rows" => {
            let m2 = dim(rng, 1, 3);
            let r = rand_t(rng, &[m + m2, n]);
            (
                vec![rand_t(rng, &[m, n]), rand_t(rng, &[m2, n])],
                Box::new(move |g, v| {
                    let y = g.concat_rows(&[v[0], v[1]])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "mean_rows" => {
            let r = rand_t(rng, &[1, n]);
            (
                vec![rand_t(rng, &[m, n])],
                Box::new(move |g, v| {
                    let y = g.mean_rows(v[0])?;
                    weighted(g, y, &r)
                }),
            )
        }
        "l2_normalize_rows" => (
            vec![rand_away(rng, &[m, n])],
            Box::new(move |g, v| {
                let y = g.l2_normalize_rows(v[0])?;
                weighted(g, y, &r)
            }),
        ),
        "sum" => (vec![rand_t(rng, &[m, n])], Box::new(|g, v| g.sum(v[0]))),
        "smooth_mse" => {
            let t = dim(rng, 4, 16);
            let m_star: Vec<f64> = (0..t).map(|_| if rng.random_bool(0.25) { 1.0 } else { 0.0 }).collect();
            let valid: Vec<bool> = (0..t).map(|_| rng.random_bool(0.9)).collect();
            let m_hat = Tensor::new(vec![1, t], (0..t).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            // widths well inside the clamp range so σ̂ receives a gradient
            let sigma = Tensor::new(vec![1, t], (0..t).map(|_| rng.random_range(0.3..4.0)).collect()).unwrap();
            (
                vec![m_hat, sigma],
                Box::new(move |g, v| g.smooth_mse(v[0], v[1], &m_star, &valid, 0.001, 10.0)),
            )
        }
        "hard_mse" => {
            let t = dim(rng, 2, 12);
            let target: Vec<f64> = (0..t).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let valid: Vec<bool> = (0..t).map(|_| rng.random_bool(0.9)).collect();
            (
                vec![rand_t(rng, &[1, t])],
                Box::new(move |g, v| g.hard_mse(v[0], &target, &valid)),
            )
        }
        "cross_entropy" => {
            let c = dim(rng, 2, 5);
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
            (
                vec![rand_t(rng, &[m, c])],
                Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
            )
        }
        "batch_hard_triplet" => {
            let n_rows = dim(rng, 3, 6);
            let mut labels: Vec<usize> = (0..n_rows).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let margin: f64 = rng.random_range(0.5..2.0);
            (
                vec![rand_t(rng, &[n_rows, n])],
                Box::new(move |g, v| g.batch_hard_triplet(v[0], &labels, margin)),
            )
        }
        other => panic!("no gradient case for `{other}`"),
    }
}

pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "mul",
    "scale",
    "bias_cols",
    "bias_rows",
    "conv1d_dilated",
    "relu",
    "sigmoid",
    "softplus",
    "pair_mean_cols",
    "transpose",
    "softmax_rows",
    "layer_norm_rows",
    "concat_cols",
    "concat_rows",
    "mean_rows",
    "l2_normalize_rows",
    "sum",
    "smooth_mse",
    "hard_mse",
    "cross_entropy",
    "batch_hard_triplet",
];

/// Largest relative error of `op` over `n` random instances.
pub fn worst_op_error(op: &str, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (inputs, f) = instance(op, &mut rng);
        let err = grad_check(&*f, &inputs, EPS).unwrap_or_else(|e| panic!("{op}: {e}"));
        worst = worst.max(err);
    }
    worst
}

/// Central differences over the elements of every parameter, compared with
/// the gradients `backward` accumulates into the store.
fn param_error(params: &mut ParamStore<f64>, loss: &dyn Fn(&ParamStore<f64>) -> Result<(f64, ParamStore<f64>)>) -> f64 {
    let (_, with_grads) = loss(params).unwrap();
    let mut worst = 0.0f64;
    let ids: Vec<usize> = (0..params.len()).collect();
    for pid in ids {
        let id = tbooster::params::ParamId(pid);
        let analytic = with_grads.get(id).grad.clone().map(Tensor::into_data);
        for i in 0..params.get(id).value.len() {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + EPS;
            let (lp, _) = loss(params).unwrap();
            params.get_mut(id).value.data_mut()[i] = orig - EPS;
            let (lm, _) = loss(params).unwrap();
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * EPS);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    worst
}

/// Adaptive splitter loss of a small random splitter on a random window,
/// checked against every parameter and the input features.
pub fn splitter_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SplitterConfig {
        num_blocks: 2,
        channels: 3,
        window: 10,
        feature_dim: 5,
        ..Default::default()
    };
    let model = Splitter::<f64>::new(cfg.clone(), seed).unwrap();
    let mut params = model.params.clone();
    // random heads so that neither output sits at its initial constant
    for p in params.iter_mut() {
        if p.name.starts_with("head.") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let t = cfg.window;
    let x = rand_t(&mut rng, &[cfg.feature_dim, t]);
    let mut m_star = vec![0.0; t - 1];
    m_star[rng.random_range(0..t - 1)] = 1.0;
    let valid = vec![true; t - 1];
    let loss = |p: &ParamStore<f64>| -> Result<(f64, ParamStore<f64>)> {
        let m = Splitter::from_params(p.clone(), cfg.clone())?;
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false)?;
        let (mh, sh) = m.forward(&mut g, xv)?;
        let l = splitter_loss(&mut g, mh, sh, &m_star, &valid, &cfg)?;
        let mut store = m.params.clone();
        g.backward(l)?.accumulate_into(&mut store);
        Ok((g.value(l).data()[0], store))
    };
    let wrt_params = param_error(&mut params, &loss);
    let fixed = Splitter::from_params(params, cfg.clone()).unwrap();
    let wrt_input = grad_check(
        |g, v| {
            let (mh, sh) = fixed.forward(g, v[0])?;
            splitter_loss(g, mh, sh, &m_star, &valid, &cfg)
        },
        &[x.clone()],
        EPS,
    )
    .unwrap();
    wrt_params.max(wrt_input)
}

/// Cross-entropy plus triplet loss of a small random connector on a random
/// batch of two identities, checked against every parameter.
pub fn connector_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ConnectorConfig {
        layers: 1,
        heads: 2,
        model_dim: 4,
        feature_dim: 5,
        margin: 2.5,
        lambda: 0.5,
        num_classes: 2,
    };
    let model = Connector::<f64>::new(cfg.clone(), seed).unwrap();
    let mut params = model.params.clone();
    let labels = vec![0usize, 0, 1, 1];
    let xs: Vec<Tensor<f64>> = labels
        .iter()
        .map(|_| {
            let t = rng.random_range(2..5);
            rand_t(&mut rng, &[cfg.feature_dim, t])
        })
        .collect();
    let loss = |p: &ParamStore<f64>| -> Result<(f64, ParamStore<f64>)> {
        let m = Connector::from_params(p.clone(), cfg.clone())?;
        let mut g = Graph::new();
        let mut embs = Vec::new();
        let mut logits = Vec::new();
        for x in &xs {
            let xv = g.input(x.clone(), false)?;
            let tr = m.encode(&mut g, xv)?;
            let (h, l) = m.head(&mut g, tr.z)?;
            embs.push(h);
            logits.push(l);
        }
        let e = g.concat_rows(&embs)?;
        let l = g.concat_rows(&logits)?;
        let total = connector_loss(&mut g, e, l, &labels, &cfg)?;
        let mut store = m.params.clone();
        g.backward(total)?.accumulate_into(&mut store);
        Ok((g.value(total).data()[0], store))
    };
    param_error(&mut params, &loss)
}
