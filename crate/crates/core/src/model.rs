//! The trainable forecaster: multi-scale history encoder, context CNN over
//! the local guidance map, and a one-shot MLP decoder.
//!
//! All coordinates entering the network are relative to the agent's last
//! observed position, and the decoder emits offsets from that position.
//!
//! The history encoder runs the shared LSTM over every prefix
//! `X[0..t]`, `t = 1..=t_obs`, from a zero state. Since the cell is causal, the
//! final state of prefix `t` equals the state after step `t` of a single run
//! over the whole observation, so one pass yields all prefix features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmap::LocalMap;
use crate::ingest::{TrajPoint, TrajectorySample};
use crate::nn::{
    he_uniform, lstm_cell, xavier_uniform, AdamConfig, AdamState, Bound, Checkpoint, Linear, LstmParams, NnError, Padding, ParamId,
    ParamStore, Tape, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("expected {expected} {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleWeights {
    /// One `hidden x hidden` matrix per prefix length.
    Matrix,
    /// One scalar per prefix length.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub decoder_hidden_per_step: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Side of the local map patch in cells.
    pub local_side: usize,
    pub scale_weights: ScaleWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_obs: 8,
            t_pred: 12,
            embed_dim: 64,
            hidden_dim: 64,
            feature_dim: 256,
            decoder_hidden_per_step: 64,
            conv1_channels: 8,
            conv2_channels: 16,
            local_side: 32,
            scale_weights: ScaleWeights::Matrix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// When false the context feature is replaced by zeros.
    pub use_context: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { use_context: true }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embed: Linear,
    pub lstm: LstmParams,
    pub scale: Vec<ParamId>,
    pub scale_bias: ParamId,
    pub mlp: Linear,
}

#[derive(Debug, Clone)]
pub struct ContextEncoderParams {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub hidden: Linear,
    pub out: Linear,
}

/// All trainable weights plus the layout that names them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub context: ContextEncoderParams,
    pub decoder: DecoderParams,
}

/// Network input for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub observed: Vec<TrajPoint>,
    /// Normalized `local_side^2` patch; `None` means an all-zero map.
    pub map: Option<Vec<f64>>,
}

impl ModelInput {
    pub fn new(observed: Vec<TrajPoint>, map: Option<&LocalMap>) -> Self {
        Self {
            observed,
            map: map.map(LocalMap::normalized),
        }
    }
}

fn conv_kernel(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize) -> (ParamId, ParamId) {
    let k = store.add(&format!("{name}.k"), he_uniform(rng, &[c_out, c_in, 3, 3], c_in * 9));
    let b = store.add(&format!("{name}.b"), Tensor::zeros(&[c_out]));
    (k, b)
}

impl ModelParams {
    /// Xavier-uniform weights (He-uniform before the context ReLUs) and zero
    /// biases from a seeded generator.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config;
        let embed = Linear::new(&mut store, &mut rng, "enc.embed", 2, c.embed_dim);
        let lstm = LstmParams::new(&mut store, &mut rng, "enc.lstm", c.embed_dim, c.hidden_dim);
        let scale = (1..=c.t_obs)
            .map(|t| {
                let tensor = match c.scale_weights {
                    ScaleWeights::Matrix => {
                        xavier_uniform(&mut rng, &[c.hidden_dim, c.hidden_dim], c.hidden_dim, c.hidden_dim)
                    }
                    ScaleWeights::Scalar => Tensor::vector(vec![1.0 / c.t_obs as f64]),
                };
                store.add(&format!("enc.scale.w{t}"), tensor)
            })
            .collect();
        let scale_bias = store.add("enc.scale.b", Tensor::zeros(&[c.hidden_dim]));
        let mlp = Linear::new(&mut store, &mut rng, "enc.mlp", c.hidden_dim, c.feature_dim);

        let conv1 = conv_kernel(&mut store, &mut rng, "ctx.conv1", 1, c.conv1_channels);
        let conv2 = conv_kernel(&mut store, &mut rng, "ctx.conv2", c.conv1_channels, c.conv2_channels);
        let flat = c.conv2_channels * (c.local_side / 4) * (c.local_side / 4);
        let proj = Linear::new(&mut store, &mut rng, "ctx.proj", flat, c.feature_dim);
        *store.get_mut(proj.weight) = he_uniform(&mut rng, &[flat, c.feature_dim], flat);

        let dec_hidden = c.t_pred * c.decoder_hidden_per_step;
        let hidden = Linear::new(&mut store, &mut rng, "dec.l1", 2 * c.feature_dim, dec_hidden);
        let out = Linear::new(&mut store, &mut rng, "dec.l2", dec_hidden, c.t_pred * 2);
        Self {
            config,
            store,
            encoder: EncoderParams {
                embed,
                lstm,
                scale,
                scale_bias,
                mlp,
            },
            context: ContextEncoderParams { conv1, conv2, proj },
            decoder: DecoderParams { hidden, out },
        }
    }

    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self, ModelError> {
        let mut params = Self::init(config, 0);
        ck.load_into(&mut params.store)?;
        Ok(params)
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    /// History feature `[B, feature_dim]` from per-step relative positions,
    /// each `[B, 2]`.
    pub fn encode_history_var(&self, tape: &mut Tape, p: &Bound, steps: &[Var]) -> Result<Var, ModelError> {
        let c = self.config;
        if steps.len() != c.t_obs {
            return Err(ModelError::Length {
                what: "observed steps",
                expected: c.t_obs,
                got: steps.len(),
            });
        }
        let batch = tape.shape(steps[0])[0];
        let enc = &self.encoder;
        let mut h = tape.leaf(Tensor::zeros(&[batch, c.hidden_dim]));
        let mut cell = tape.leaf(Tensor::zeros(&[batch, c.hidden_dim]));
        let mut acc: Option<Var> = None;
        for (t, &x) in steps.iter().enumerate() {
            let e = enc.embed.forward(tape, p, x)?;
            (h, cell) = lstm_cell(tape, p, &enc.lstm, e, h, cell)?;
            let w = p.var(enc.scale[t]);
            let term = match c.scale_weights {
                ScaleWeights::Matrix => tape.matmul(h, w)?,
                ScaleWeights::Scalar => tape.scale_by(h, w)?,
            };
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let summed = tape.add(acc.expect("t_obs >= 1"), p.var(enc.scale_bias))?;
        let f = enc.mlp.forward(tape, p, summed)?;
        Ok(tape.relu(f))
    }

    /// Context feature `[B, feature_dim]` from maps `[B, 1, S, S]`.
    pub fn encode_context_var(&self, tape: &mut Tape, p: &Bound, maps: Var) -> Result<Var, ModelError> {
        let ctx = &self.context;
        let x = tape.conv_2d(maps, p.var(ctx.conv1.0), Some(p.var(ctx.conv1.1)), Padding::Same)?;
        let x = tape.relu(x);
        let x = tape.avg_pool_2d(x, 2)?;
        let x = tape.conv_2d(x, p.var(ctx.conv2.0), Some(p.var(ctx.conv2.1)), Padding::Same)?;
        let x = tape.relu(x);
        let x = tape.avg_pool_2d(x, 2)?;
        let x = tape.flatten(x)?;
        let f = ctx.proj.forward(tape, p, x)?;
        Ok(tape.relu(f))
    }

    /// Relative offsets `[B, 2 * t_pred]` from the two features.
    pub fn decode_var(&self, tape: &mut Tape, p: &Bound, seq: Var, ctx: Var) -> Result<Var, ModelError> {
        let joint = tape.concat(&[seq, ctx], 1)?;
        let h = self.decoder.hidden.forward(tape, p, joint)?;
        let h = tape.relu(h);
        Ok(self.decoder.out.forward(tape, p, h)?)
    }

    /// Full forward pass over a batch of encoded inputs.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &EncodedBatch, opts: ModelOptions) -> Result<Var, ModelError> {
        let c = self.config;
        let steps: Vec<Var> = batch.steps.iter().map(|t| tape.leaf(t.clone())).collect();
        let seq = self.encode_history_var(tape, p, &steps)?;
        let ctx = if opts.use_context {
            let maps = tape.leaf(batch.maps.clone());
            self.encode_context_var(tape, p, maps)?
        } else {
            tape.leaf(Tensor::zeros(&[batch.len, c.feature_dim]))
        };
        self.decode_var(tape, p, seq, ctx)
    }

    pub fn encode_history(&self, observed: &[TrajPoint]) -> Result<Vec<f64>, ModelError> {
        let batch = EncodedBatch::new(&self.config, &[ModelInput::new(observed.to_vec(), None)])?;
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let steps: Vec<Var> = batch.steps.iter().map(|t| tape.leaf(t.clone())).collect();
        let f = self.encode_history_var(&mut tape, &p, &steps)?;
        Ok(tape.value(f).data().to_vec())
    }

    pub fn encode_context(&self, local: &LocalMap) -> Result<Vec<f64>, ModelError> {
        let s = self.config.local_side;
        if local.side != s {
            return Err(ModelError::Length {
                what: "local map side",
                expected: s,
                got: local.side,
            });
        }
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let maps = tape.leaf(Tensor::new(vec![1, 1, s, s], local.normalized())?);
        let f = self.encode_context_var(&mut tape, &p, maps)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// Decodes two feature vectors into `t_pred` relative offsets.
    pub fn decode_preliminary(&self, seq: &[f64], ctx: &[f64]) -> Result<Vec<TrajPoint>, ModelError> {
        let d = self.config.feature_dim;
        for (what, v) in [("sequence feature", seq), ("context feature", ctx)] {
            if v.len() != d {
                return Err(ModelError::Length {
                    what,
                    expected: d,
                    got: v.len(),
                });
            }
        }
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let s = tape.leaf(Tensor::matrix(1, d, seq.to_vec())?);
        let c = tape.leaf(Tensor::matrix(1, d, ctx.to_vec())?);
        let y = self.decode_var(&mut tape, &p, s, c)?;
        Ok(to_points(tape.value(y).data()))
    }

    /// World-coordinate forecasts, one per input. Inputs are processed in
    /// parallel chunks; each row is independent of its batch neighbours, so
    /// the output does not depend on chunking.
    pub fn predict_batch(&self, inputs: &[ModelInput], opts: ModelOptions) -> Result<Vec<Vec<TrajPoint>>, ModelError> {
        const CHUNK: usize = 64;
        let chunks: Vec<Result<Vec<Vec<TrajPoint>>, ModelError>> = inputs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let batch = EncodedBatch::new(&self.config, chunk)?;
                let mut tape = Tape::new();
                let p = self.store.bind(&mut tape);
                let y = self.forward(&mut tape, &p, &batch, opts)?;
                let out = tape.value(y).data();
                let width = 2 * self.config.t_pred;
                Ok(chunk
                    .iter()
                    .enumerate()
                    .map(|(i, input)| {
                        let origin = *input.observed.last().expect("validated");
                        to_points(&out[i * width..(i + 1) * width])
                            .into_iter()
                            .map(|d| origin + d)
                            .collect()
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn predict(&self, observed: &[TrajPoint], map: Option<&LocalMap>, opts: ModelOptions) -> Result<Vec<TrajPoint>, ModelError> {
        let input = ModelInput::new(observed.to_vec(), map);
        Ok(self.predict_batch(std::slice::from_ref(&input), opts)?.remove(0))
    }
}

fn to_points(flat: &[f64]) -> Vec<TrajPoint> {
    flat.chunks(2).map(|c| TrajPoint::new(c[0], c[1])).collect()
}

/// Inputs laid out as tensors: `steps[t]` is `[B, 2]`, `maps` is
/// `[B, 1, S, S]`, `targets` (when present) is `[B, 2 * t_pred]`.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub len: usize,
    pub steps: Vec<Tensor>,
    pub maps: Tensor,
    pub targets: Option<Tensor>,
}

impl EncodedBatch {
    pub fn new(config: &ModelConfig, inputs: &[ModelInput]) -> Result<Self, ModelError> {
        Self::build(config, inputs, None)
    }

    pub fn with_targets(config: &ModelConfig, inputs: &[ModelInput], truths: &[&[TrajPoint]]) -> Result<Self, ModelError> {
        Self::build(config, inputs, Some(truths))
    }

    fn build(config: &ModelConfig, inputs: &[ModelInput], truths: Option<&[&[TrajPoint]]>) -> Result<Self, ModelError> {
        let b = inputs.len();
        let s = config.local_side;
        let mut steps = vec![vec![0.0; 2 * b]; config.t_obs];
        let mut maps = vec![0.0; b * s * s];
        for (i, input) in inputs.iter().enumerate() {
            if input.observed.len() != config.t_obs {
                return Err(ModelError::Length {
                    what: "observed points",
                    expected: config.t_obs,
                    got: input.observed.len(),
                });
            }
            let origin = *input.observed.last().expect("t_obs >= 1");
            for (t, &pt) in input.observed.iter().enumerate() {
                let d = pt - origin;
                steps[t][2 * i] = d.x;
                steps[t][2 * i + 1] = d.y;
            }
            if let Some(m) = &input.map {
                if m.len() != s * s {
                    return Err(ModelError::Length {
                        what: "map cells",
                        expected: s * s,
                        got: m.len(),
                    });
                }
                maps[i * s * s..(i + 1) * s * s].copy_from_slice(m);
            }
        }
        let targets = match truths {
            None => None,
            Some(truths) => {
                let mut t = vec![0.0; b * 2 * config.t_pred];
                for (i, (truth, input)) in truths.iter().zip(inputs).enumerate() {
                    if truth.len() != config.t_pred {
                        return Err(ModelError::Length {
                            what: "ground-truth points",
                            expected: config.t_pred,
                            got: truth.len(),
                        });
                    }
                    let origin = *input.observed.last().expect("validated");
                    for (k, &pt) in truth.iter().enumerate() {
                        let d = pt - origin;
                        t[i * 2 * config.t_pred + 2 * k] = d.x;
                        t[i * 2 * config.t_pred + 2 * k + 1] = d.y;
                    }
                }
                Some(Tensor::matrix(b, 2 * config.t_pred, t)?)
            }
        };
        Ok(Self {
            len: b,
            steps: steps
                .into_iter()
                .map(|d| Tensor::matrix(b, 2, d))
                .collect::<Result<_, _>>()?,
            maps: Tensor::new(vec![b, 1, s, s], maps)?,
            targets,
        })
    }
}

/// Sum over agents and steps of the Euclidean error, as a tape scalar.
pub fn displacement_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, ModelError> {
    let diff = tape.sub(pred, target)?;
    let rows = tape.value(diff).len() / 2;
    let pts = tape.reshape(diff, &[rows, 2])?;
    let norms = tape.row_norms(pts)?;
    Ok(tape.sum(norms))
}

/// Plain-number version of [`displacement_loss`] for world-space point lists.
pub fn displacement_loss_value(preds: &[Vec<TrajPoint>], truths: &[&[TrajPoint]]) -> f64 {
    preds
        .iter()
        .zip(truths)
        .flat_map(|(p, t)| p.iter().zip(t.iter()).map(|(a, b)| a.dist(*b)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    /// Samples per forward/backward pass; gradients are accumulated across
    /// chunks within a batch.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.01,
            seed: 42,
            batch_size: 0,
            chunk_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Summed Euclidean error over the training set, before the epoch's updates.
    pub loss: f64,
    /// The same error as a mean per predicted point.
    pub mean_displacement: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub losses: Vec<EpochLoss>,
}

/// One training example: encoder inputs and relative targets.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub input: ModelInput,
    pub truth: Vec<TrajPoint>,
}

impl TrainExample {
    pub fn from_sample(sample: &TrajectorySample, map: Option<&LocalMap>) -> Self {
        Self {
            input: ModelInput::new(sample.observed.clone(), map),
            truth: sample.ground_truth.clone(),
        }
    }
}

/// Minimizes the summed displacement loss with Adam. Gradients are divided by
/// the batch size before each step.
pub fn train(
    config: ModelConfig,
    examples: &[TrainExample],
    train_cfg: TrainConfig,
    opts: ModelOptions,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut params = ModelParams::init(config, train_cfg.seed);
    let adam_cfg = AdamConfig {
        lr: train_cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, params.store.tensors());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_0f_0a11);
    let batch_size = match train_cfg.batch_size {
        0 => examples.len(),
        n => n.min(examples.len()),
    };
    let chunk_size = train_cfg.chunk_size.max(1);
    let points = (examples.len() * config.t_pred) as f64;
    let mut losses = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        if batch_size < examples.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grads: Vec<Tensor> = params.store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for chunk in batch.chunks(chunk_size) {
                let inputs: Vec<ModelInput> = chunk.iter().map(|&i| examples[i].input.clone()).collect();
                let truths: Vec<&[TrajPoint]> = chunk.iter().map(|&i| examples[i].truth.as_slice()).collect();
                let encoded = EncodedBatch::with_targets(&config, &inputs, &truths)?;
                let mut tape = Tape::new();
                let p = params.store.bind(&mut tape);
                let pred = params.forward(&mut tape, &p, &encoded, opts)?;
                let target = tape.leaf(encoded.targets.clone().expect("targets set"));
                let loss = displacement_loss(&mut tape, pred, target)?;
                epoch_loss += tape.value(loss).item();
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64);
                let g = tape.backward(scaled)?;
                for (acc, gi) in grads.iter_mut().zip(p.grads(&tape, &g)) {
                    acc.add_assign(&gi);
                }
            }
            if !epoch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged { epoch, loss: epoch_loss });
            }
            adam.step(params.store.tensors_mut(), &grads)?;
        }
        let record = EpochLoss {
            epoch,
            loss: epoch_loss,
            mean_displacement: epoch_loss / points,
        };
        on_epoch(&record);
        losses.push(record);
    }
    Ok(TrainOutcome { params, losses })
}
