//! Helpers shared by the integration tests.
#![allow(dead_code)]

use bgm::model::{displacement_loss, EncodedBatch, ModelOptions, ModelParams};
use bgm::nn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values with magnitude at least 0.05, away from relu/norm kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Checks the tape gradient of a scalar built by `build` against central
/// differences, for every input. Returns the worst relative error.
pub fn check_op(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = build(&mut t, &vars);
        t.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&tape, vars[k]);
        let numeric = numeric_grad(input.data(), |x| {
            let mut vals = inputs.to_vec();
            vals[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            eval(&vals)
        });
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Reduces any tensor to a scalar through fixed random weights so every
/// output element gets a distinct upstream gradient.
pub fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
    let w = random_tensor(&mut rng(seed), t.shape(v));
    let w = t.leaf(w);
    let p = t.mul(v, w).unwrap();
    t.sum(p)
}

pub fn model_loss(params: &ModelParams, batch: &EncodedBatch, opts: ModelOptions) -> f64 {
    let mut t = Tape::new();
    let p = params.store.bind(&mut t);
    let pred = params.forward(&mut t, &p, batch, opts).unwrap();
    let target = t.leaf(batch.targets.clone().unwrap());
    let l = displacement_loss(&mut t, pred, target).unwrap();
    t.value(l).item()
}

/// Worst relative error over all parameter tensors of the end-to-end loss.
pub fn model_gradcheck(params: &ModelParams, batch: &EncodedBatch, opts: ModelOptions) -> Vec<(String, f64)> {
    let mut t = Tape::new();
    let p = params.store.bind(&mut t);
    let pred = params.forward(&mut t, &p, batch, opts).unwrap();
    let target = t.leaf(batch.targets.clone().unwrap());
    let l = displacement_loss(&mut t, pred, target).unwrap();
    let grads = p.grads(&t, &t.backward(l).unwrap());
    let mut out = Vec::new();
    for (i, analytic) in grads.iter().enumerate() {
        let name = params.store.iter().nth(i).unwrap().0.to_string();
        let base = params.store.tensors()[i].clone();
        let numeric = numeric_grad(base.data(), |x| {
            let mut probe = params.clone();
            probe.store.tensors_mut()[i] = Tensor::new(base.shape().to_vec(), x.to_vec()).unwrap();
            model_loss(&probe, batch, opts)
        });
        out.push((name, rel_err(analytic.data(), &numeric)));
    }
    out
}

/// Every tape primitive on randomized shapes. Returns (case, worst error).
pub fn primitive_suite(seed: u64) -> Vec<(String, f64)> {
    use bgm::nn::Padding;
    let mut r = rng(seed);
    let mut out = Vec::new();
    for case in 0..3u64 {
        let s = seed * 100 + case;
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let a = random_tensor(&mut r, &[m, k]);
        let b = random_tensor(&mut r, &[k, n]);
        out.push((format!("matmul {m}x{k}x{n}"), check_op(&[a, b], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, s)
        })));

        let a = random_tensor(&mut r, &[m, n]);
        let b = random_tensor(&mut r, &[m, n]);
        let bias = random_tensor(&mut r, &[n]);
        out.push((format!("add/sub/mul {m}x{n}"), check_op(&[a, b, bias], |t, v| {
            let x = t.add(v[0], v[1]).unwrap();
            let x = t.add(x, v[2]).unwrap();
            let y = t.sub(x, v[1]).unwrap();
            let z = t.mul(y, v[1]).unwrap();
            project(t, z, s)
        })));

        let a = random_tensor(&mut r, &[m, n]);
        let c = random_tensor(&mut r, &[1]);
        out.push((format!("scale/scale_by {m}x{n}"), check_op(&[a, c], |t, v| {
            let x = t.scale(v[0], -1.7);
            let y = t.scale_by(x, v[1]).unwrap();
            project(t, y, s)
        })));

        let a = random_tensor(&mut r, &[m, n]);
        out.push((format!("tanh/sigmoid {m}x{n}"), check_op(&[a], |t, v| {
            let x = t.tanh(v[0]);
            let y = t.sigmoid(v[0]);
            let z = t.mul(x, y).unwrap();
            project(t, z, s)
        })));

        let a = away_from_zero(&mut r, &[m, n]);
        out.push((format!("relu {m}x{n}"), check_op(&[a], |t, v| {
            let x = t.relu(v[0]);
            project(t, x, s)
        })));

        let a = random_tensor(&mut r, &[m, n]);
        let b = random_tensor(&mut r, &[m, k]);
        let c = random_tensor(&mut r, &[k, n]);
        out.push((format!("concat/slice {m}x{n}"), check_op(&[a, b, c], |t, v| {
            let x = t.concat(&[v[0], v[1]], 1).unwrap();
            let y = t.concat(&[v[0], v[2]], 0).unwrap();
            let xs = t.slice(x, 1, 1, n + k - 1).unwrap();
            let ys = t.slice(y, 0, 0, m + k - 1).unwrap();
            let px = project(t, xs, s);
            let py = project(t, ys, s + 1);
            t.add(px, py).unwrap()
        })));

        let (bsz, ch, h) = (r.gen_range(1..3), r.gen_range(1..3), 2 * r.gen_range(1..4));
        let a = random_tensor(&mut r, &[bsz, ch, h, h + 2]);
        out.push((format!("avg_pool {bsz}x{ch}x{h}x{}", h + 2), check_op(&[a], |t, v| {
            let x = t.avg_pool_2d(v[0], 2).unwrap();
            project(t, x, s)
        })));

        let co = r.gen_range(1..4);
        let x = random_tensor(&mut r, &[bsz, ch, h + 1, h + 2]);
        let w = random_tensor(&mut r, &[co, ch, 3, 3]);
        let bb = random_tensor(&mut r, &[co]);
        for pad in [Padding::Same, Padding::Valid] {
            out.push((format!("conv_2d {pad:?} {bsz}x{ch}x{}x{} -> {co}", h + 1, h + 2), check_op(&[x.clone(), w.clone(), bb.clone()], |t, v| {
                let y = t.conv_2d(v[0], v[1], Some(v[2]), pad).unwrap();
                project(t, y, s)
            })));
        }

        let a = random_tensor(&mut r, &[bsz, ch, 2, 3]);
        out.push((format!("reshape/flatten {bsz}x{ch}x2x3"), check_op(&[a], |t, v| {
            let x = t.flatten(v[0]).unwrap();
            let y = t.reshape(x, &[bsz * ch * 3, 2]).unwrap();
            project(t, y, s)
        })));

        let a = random_tensor(&mut r, &[m, n]);
        out.push((format!("sum_of_squares/sum {m}x{n}"), check_op(&[a], |t, v| {
            let x = t.sum_of_squares(v[0]);
            let y = t.sum(v[0]);
            let z = t.mul(x, y).unwrap();
            t.sum(z)
        })));

        let a = away_from_zero(&mut r, &[m + 1, 2]);
        out.push((format!("row_norms {}x2", m + 1), check_op(&[a], |t, v| {
            let x = t.row_norms(v[0]).unwrap();
            project(t, x, s)
        })));
    }
    out
}

pub fn tiny_model_config(scale: bgm::model::ScaleWeights) -> bgm::model::ModelConfig {
    bgm::model::ModelConfig {
        t_obs: 3,
        t_pred: 2,
        embed_dim: 3,
        hidden_dim: 4,
        feature_dim: 5,
        decoder_hidden_per_step: 3,
        conv1_channels: 2,
        conv2_channels: 2,
        local_side: 8,
        scale_weights: scale,
    }
}

/// End-to-end loss gradient for both scale-weight variants, with and
/// without the context branch.
pub fn end_to_end_suite(seed: u64) -> Vec<(String, f64)> {
    use bgm::model::{ModelInput, ScaleWeights};
    use bgm::TrajPoint;
    let mut r = rng(seed);
    let mut out = Vec::new();
    for scale in [ScaleWeights::Matrix, ScaleWeights::Scalar] {
        let cfg = tiny_model_config(scale);
        let mut params = ModelParams::init(cfg, seed);
        // zero biases put ReLUs exactly on their kink; move every weight off it
        for t in params.store.tensors_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.3..0.3);
            }
        }
        let mut inputs = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..2 {
            let obs: Vec<TrajPoint> = (0..3).map(|_| TrajPoint::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))).collect();
            let map: Vec<f64> = (0..64).map(|_| r.gen_range(0.0..1.0)).collect();
            inputs.push(ModelInput { observed: obs, map: Some(map) });
            truths.push((0..2).map(|_| TrajPoint::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0))).collect::<Vec<_>>());
        }
        let truth_refs: Vec<&[TrajPoint]> = truths.iter().map(|t| t.as_slice()).collect();
        let batch = EncodedBatch::with_targets(&cfg, &inputs, &truth_refs).unwrap();
        for ctx in [true, false] {
            for (name, err) in model_gradcheck(&params, &batch, ModelOptions { use_context: ctx }) {
                out.push((format!("{scale:?} ctx={ctx} {name}"), err));
            }
        }
    }
    out
}
