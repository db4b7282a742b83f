use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{numel, Tensor};
use super::NnError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// One gradient per parameter, zero where the loss does not depend on it.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(tape, v)).collect()
    }
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..numel(shape)).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Uniform in `±sqrt(6 / fan_in)`, for layers followed by a ReLU.
pub fn he_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let a = (6.0 / fan_in as f64).sqrt();
    let data = (0..numel(shape)).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Affine map `x W + b` on `[B, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add(&format!("{name}.w"), xavier_uniform(rng, &[d_in, d_out], d_in, d_out));
        let bias = store.add(&format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, NnError> {
        let y = tape.matmul(x, p.var(self.weight))?;
        tape.add(y, p.var(self.bias))
    }
}

/// Standard LSTM cell with gates packed as `[i, f, g, o]` along the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, hidden: usize) -> Self {
        let w_ih = store.add(
            &format!("{name}.w_ih"),
            xavier_uniform(rng, &[d_in, 4 * hidden], d_in, 4 * hidden),
        );
        let w_hh = store.add(
            &format!("{name}.w_hh"),
            xavier_uniform(rng, &[hidden, 4 * hidden], hidden, 4 * hidden),
        );
        let bias = store.add(&format!("{name}.b"), Tensor::zeros(&[4 * hidden]));
        Self { w_ih, w_hh, bias, hidden }
    }
}

/// One step: `(h, c) -> (h', c')` for a batch `x: [B, d_in]`.
pub fn lstm_cell(tape: &mut Tape, p: &Bound, params: &LstmParams, x: Var, h: Var, c: Var) -> Result<(Var, Var), NnError> {
    let hd = params.hidden;
    let xi = tape.matmul(x, p.var(params.w_ih))?;
    let hh = tape.matmul(h, p.var(params.w_hh))?;
    let z = tape.add(xi, hh)?;
    let z = tape.add(z, p.var(params.bias))?;
    let gi = tape.slice(z, 1, 0, hd)?;
    let gf = tape.slice(z, 1, hd, hd)?;
    let gg = tape.slice(z, 1, 2 * hd, hd)?;
    let go = tape.slice(z, 1, 3 * hd, hd)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}
