//! Edge-featured graph attention autoencoder.
//!
//! Each EGAT layer runs a node module and then an edge module with separate
//! parameters. Layer outputs are merged, pooled into a graph latent `g`, and a
//! one-hidden-layer decoder reconstructs `(O, E)` from `g`.
//!
//! Projections are stored as right-multiplied matrices: `O* = O W^o` with
//! `W^o` of shape `d x k_o`, where `k_o = floor(lambda d)` and `k_e = d - k_o`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffnet::{
    Activation, DiffError, Init, Mlp, Optimizer, OptimizerKind, OutputActivation, ParamId, ParamStore, StepDecay, Tape, Tensor, Var,
    ELU_ALPHA, LEAKY_SLOPE,
};
use crate::hgraph::HGraph;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EgateError {
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("graph shape {got:?} does not match the model's {expected:?}")]
    ShapeMismatch { expected: GraphShape, got: GraphShape },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss became non-finite at step {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Merge {
    /// Layer outputs side by side.
    Concat,
    /// Element-wise mean over layers.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pooling {
    /// `[sum_i o_i || sum_ij e_ij]`.
    Sum,
    /// Sum pooling followed by an affine map to `target` dims.
    LinearAfterSum { target: usize },
    /// Flattened `(O, E)` through a one-hidden-layer MLP to `target` dims.
    MlpFlatten { target: usize, hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgateConfig {
    pub layers: usize,
    pub lambda: f64,
    pub attention_hidden: Vec<usize>,
    pub edge_hidden: Vec<usize>,
    pub merge: Merge,
    pub pooling: Pooling,
    pub decoder_hidden: usize,
    pub beta: f64,
}

impl EgateConfig {
    /// `L` layers, Mean merge, Sum pooling, the given decoder width.
    pub fn new(layers: usize, decoder_hidden: usize) -> Self {
        Self {
            layers,
            lambda: 0.5,
            attention_hidden: vec![16, 16],
            edge_hidden: vec![16, 16],
            merge: Merge::Mean,
            pooling: Pooling::Sum,
            decoder_hidden,
            beta: 1.0,
        }
    }

    pub fn with_merge(mut self, merge: Merge) -> Self {
        self.merge = merge;
        self
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    fn validate(&self) -> Result<(), EgateError> {
        if self.layers == 0 {
            return Err(EgateError::Config("at least one layer".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(EgateError::Config(format!("lambda {} outside (0, 1)", self.lambda)));
        }
        if self.decoder_hidden == 0 {
            return Err(EgateError::Config("decoder needs a hidden layer".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(EgateError::Config(format!("beta {}", self.beta)));
        }
        match self.pooling {
            Pooling::LinearAfterSum { target: 0 } | Pooling::MlpFlatten { target: 0, .. } | Pooling::MlpFlatten { hidden: 0, .. } => {
                Err(EgateError::Config("pooling widths must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `(n, m, d_o + d_s, d_e)` of the graphs a model accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphShape {
    pub n: usize,
    pub m: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
}

impl GraphShape {
    pub fn of<T: Real>(g: &HGraph<T>) -> Self {
        Self {
            n: g.n(),
            m: g.m(),
            node_dim: g.node_dim(),
            edge_dim: g.edge_dim(),
        }
    }
}

/// `(k_o, k_e)` for feature width `d`.
pub fn split_dims(lambda: f64, d: usize) -> (usize, usize) {
    let k_o = (lambda * d as f64 + 1e-9).floor() as usize;
    (k_o, d - k_o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModule {
    pub w_o: ParamId,
    pub w_e: ParamId,
    pub attention: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeModule {
    pub w_o: ParamId,
    pub w_e: ParamId,
    pub attention: Mlp,
    /// Maps `[o*_i || o*_j || e'_i || e'_j || e_ij]` to the new `e_ij`.
    pub update: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgatLayer {
    pub node: NodeModule,
    pub edge: EdgeModule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PoolHead {
    Sum,
    Linear { w: ParamId, b: ParamId },
    Flatten(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub node_w: ParamId,
    pub node_b: ParamId,
    pub edge_w: ParamId,
    pub edge_b: ParamId,
}

/// Directed message slots: for each undirected edge `k = (i, j)` the pairs
/// `(dst, src)` = `(i, j)` and `(j, i)`, grouped by destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub edge: Vec<usize>,
    pub edge_i: Vec<usize>,
    pub edge_j: Vec<usize>,
}

impl Adjacency {
    pub fn new<T: Real>(g: &HGraph<T>) -> Result<Self, EgateError> {
        let mut adj = Adjacency {
            dst: Vec::new(),
            src: Vec::new(),
            edge: Vec::new(),
            edge_i: g.edges().iter().map(|e| e.0).collect(),
            edge_j: g.edges().iter().map(|e| e.1).collect(),
        };
        for (i, nb) in g.neighbors().into_iter().enumerate() {
            if nb.is_empty() {
                return Err(EgateError::IsolatedNode(i));
            }
            for (j, k) in nb {
                adj.dst.push(i);
                adj.src.push(j);
                adj.edge.push(k);
            }
        }
        Ok(adj)
    }
}

/// Intermediate values of one encoder pass, kept for inspection.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub node_outputs: Vec<Var>,
    pub edge_outputs: Vec<Var>,
    /// Per layer, `alpha` indexed like [`Adjacency::dst`].
    pub alphas: Vec<Var>,
    pub betas: Vec<Var>,
    pub latent: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgateModel<T> {
    pub config: EgateConfig,
    pub shape: GraphShape,
    pub layers: Vec<EgatLayer>,
    pool: PoolHead,
    pub decoder: Decoder,
    pub store: ParamStore<T>,
}

fn attention_mlp<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
    rng: &mut R,
) -> Result<Mlp, DiffError> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    Mlp::new(
        store,
        prefix,
        &widths,
        Activation::LeakyRelu(LEAKY_SLOPE),
        OutputActivation::Identity,
        Init::FanInUniform,
        Init::FanInUniform,
        rng,
    )
}

fn linear<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    rows: usize,
    cols: usize,
    init: Init,
    rng: &mut R,
) -> Result<(ParamId, ParamId), DiffError> {
    let w = store.add(format!("{name}.w"), init.sample(rows, cols, rng))?;
    let b = store.add(format!("{name}.b"), init.sample_bias(rows, cols, rng))?;
    Ok((w, b))
}

impl<T: Real> EgateModel<T> {
    pub fn new(config: EgateConfig, shape: GraphShape, seed: u64) -> Result<Self, EgateError> {
        config.validate()?;
        let d = shape.node_dim;
        let de = shape.edge_dim;
        let (k_o, k_e) = split_dims(config.lambda, d);
        if k_o == 0 || k_e == 0 {
            return Err(EgateError::Config(format!("node width {d} too small to split at lambda {}", config.lambda)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let node = NodeModule {
                w_o: store.add(format!("{p}.node.w_o"), Init::GlorotNormal.sample(d, k_o, &mut rng))?,
                w_e: store.add(format!("{p}.node.w_e"), Init::GlorotNormal.sample(de, k_e, &mut rng))?,
                attention: attention_mlp(&mut store, &format!("{p}.node.attn"), 2 * k_o + k_e, &config.attention_hidden, 1, &mut rng)?,
            };
            let edge = EdgeModule {
                w_o: store.add(format!("{p}.edge.w_o"), Init::GlorotNormal.sample(d, k_o, &mut rng))?,
                w_e: store.add(format!("{p}.edge.w_e"), Init::GlorotNormal.sample(de, k_e, &mut rng))?,
                attention: attention_mlp(&mut store, &format!("{p}.edge.attn"), 2 * k_o + k_e, &config.attention_hidden, 1, &mut rng)?,
                update: attention_mlp(
                    &mut store,
                    &format!("{p}.edge.update"),
                    2 * k_o + 2 * k_e + de,
                    &config.edge_hidden,
                    de,
                    &mut rng,
                )?,
            };
            layers.push(EgatLayer { node, edge });
        }
        let (merged_node, merged_edge) = match config.merge {
            Merge::Concat => (config.layers * d, config.layers * de),
            Merge::Mean => (d, de),
        };
        let sum_dim = merged_node + merged_edge;
        let (pool, latent) = match config.pooling {
            Pooling::Sum => (PoolHead::Sum, sum_dim),
            Pooling::LinearAfterSum { target } => {
                let (w, b) = linear(&mut store, "pool", sum_dim, target, Init::FanInUniform, &mut rng)?;
                (PoolHead::Linear { w, b }, target)
            }
            Pooling::MlpFlatten { target, hidden } => {
                let flat = shape.n * merged_node + shape.m * merged_edge;
                let mlp = Mlp::new(
                    &mut store,
                    "pool",
                    &[flat, hidden, target],
                    Activation::Relu,
                    OutputActivation::Identity,
                    Init::FanInUniform,
                    Init::FanInUniform,
                    &mut rng,
                )?;
                (PoolHead::Flatten(mlp), target)
            }
        };
        let h = config.decoder_hidden;
        let (hidden_w, hidden_b) = linear(&mut store, "decoder.hidden", latent, h, Init::FanInUniform, &mut rng)?;
        // Zero output heads start the reconstruction at O' = E' = 0.
        let (node_w, node_b) = linear(&mut store, "decoder.node", h, shape.n * d, Init::Zeros, &mut rng)?;
        let (edge_w, edge_b) = linear(&mut store, "decoder.edge", h, shape.m * de, Init::Zeros, &mut rng)?;
        Ok(Self {
            config,
            shape,
            layers,
            pool,
            decoder: Decoder {
                hidden_w,
                hidden_b,
                node_w,
                node_b,
                edge_w,
                edge_b,
            },
            store,
        })
    }

    pub fn latent_dim(&self) -> usize {
        let (mn, me) = self.merged_dims();
        match self.config.pooling {
            Pooling::Sum => mn + me,
            Pooling::LinearAfterSum { target } | Pooling::MlpFlatten { target, .. } => target,
        }
    }

    fn merged_dims(&self) -> (usize, usize) {
        match self.config.merge {
            Merge::Concat => (self.config.layers * self.shape.node_dim, self.config.layers * self.shape.edge_dim),
            Merge::Mean => (self.shape.node_dim, self.shape.edge_dim),
        }
    }

    pub fn check_graph(&self, g: &HGraph<T>) -> Result<(), EgateError> {
        let got = GraphShape::of(g);
        if got != self.shape {
            return Err(EgateError::ShapeMismatch {
                expected: self.shape,
                got,
            });
        }
        Ok(())
    }

    /// Scores `sigma(a([o*_dst || o*_src || e*_edge]))` normalized over each
    /// destination's neighbors. Returns `(weights, Ostar_src, Estar_edge)`.
    fn attend(
        tape: &mut Tape<T>,
        adj: &Adjacency,
        n: usize,
        ostar: Var,
        estar: Var,
        attention: &Mlp,
    ) -> Result<(Var, Var, Var), EgateError> {
        let oi = tape.gather_rows(ostar, &adj.dst)?;
        let oj = tape.gather_rows(ostar, &adj.src)?;
        let eij = tape.gather_rows(estar, &adj.edge)?;
        let x = tape.concat_cols(&[oi, oj, eij])?;
        let s = attention.forward(tape, x)?;
        let w = tape.leaky_relu(s, T::lit(LEAKY_SLOPE))?;
        let a = tape.softmax_over_sets(w, &adj.dst, n).map_err(|e| match e {
            DiffError::EmptySet(i) => EgateError::IsolatedNode(i),
            other => other.into(),
        })?;
        Ok((a, oj, eij))
    }

    /// Node module: returns `(O^l, alpha)`.
    pub fn node_module(
        &self,
        tape: &mut Tape<T>,
        adj: &Adjacency,
        layer: &EgatLayer,
        o_prev: Var,
        e_prev: Var,
    ) -> Result<(Var, Var), EgateError> {
        let m = &layer.node;
        let ostar = tape.matmul(o_prev, tape.param(m.w_o))?;
        let estar = tape.matmul(e_prev, tape.param(m.w_e))?;
        let (alpha, oj, eij) = Self::attend(tape, adj, self.shape.n, ostar, estar, &m.attention)?;
        let msg = tape.concat_cols(&[oj, eij])?;
        let weighted = tape.mul_col(msg, alpha)?;
        let agg = tape.segment_sum(weighted, &adj.dst, self.shape.n)?;
        Ok((tape.elu(agg, T::lit(ELU_ALPHA))?, alpha))
    }

    /// Edge module: returns `(E^l, beta)`.
    pub fn edge_module(
        &self,
        tape: &mut Tape<T>,
        adj: &Adjacency,
        layer: &EgatLayer,
        o_cur: Var,
        e_prev: Var,
    ) -> Result<(Var, Var), EgateError> {
        let m = &layer.edge;
        let ostar = tape.matmul(o_cur, tape.param(m.w_o))?;
        let estar = tape.matmul(e_prev, tape.param(m.w_e))?;
        let (beta, _, eij) = Self::attend(tape, adj, self.shape.n, ostar, estar, &m.attention)?;
        let weighted = tape.mul_col(eij, beta)?;
        let transit = tape.segment_sum(weighted, &adj.dst, self.shape.n)?;
        let oi = tape.gather_rows(ostar, &adj.edge_i)?;
        let oj = tape.gather_rows(ostar, &adj.edge_j)?;
        let ti = tape.gather_rows(transit, &adj.edge_i)?;
        let tj = tape.gather_rows(transit, &adj.edge_j)?;
        let x = tape.concat_cols(&[oi, oj, ti, tj, e_prev])?;
        Ok((m.update.forward(tape, x)?, beta))
    }

    /// Encoder pass up to the latent row vector.
    pub fn encode(&self, tape: &mut Tape<T>, g: &HGraph<T>) -> Result<EncoderTrace, EgateError> {
        self.check_graph(g)?;
        let adj = Adjacency::new(g)?;
        let (n, m) = (self.shape.n, self.shape.m);
        let mut o = tape.constant(Tensor::new(n, self.shape.node_dim, g.node_features().to_vec())?);
        let mut e = tape.constant(Tensor::new(m, self.shape.edge_dim, g.edge_features().to_vec())?);
        let mut trace = EncoderTrace {
            node_outputs: Vec::new(),
            edge_outputs: Vec::new(),
            alphas: Vec::new(),
            betas: Vec::new(),
            latent: o,
        };
        for layer in &self.layers {
            let (o_next, alpha) = self.node_module(tape, &adj, layer, o, e)?;
            let (e_next, beta) = self.edge_module(tape, &adj, layer, o_next, e)?;
            o = o_next;
            e = e_next;
            trace.node_outputs.push(o);
            trace.edge_outputs.push(e);
            trace.alphas.push(alpha);
            trace.betas.push(beta);
        }
        let (o_fin, e_fin) = match self.config.merge {
            Merge::Concat => (tape.concat_cols(&trace.node_outputs)?, tape.concat_cols(&trace.edge_outputs)?),
            Merge::Mean => {
                let inv = T::one() / T::from_usize(self.layers.len()).unwrap();
                let mean = |tape: &mut Tape<T>, xs: &[Var]| -> Result<Var, DiffError> {
                    let mut acc = xs[0];
                    for &x in &xs[1..] {
                        acc = tape.add(acc, x)?;
                    }
                    if xs.len() == 1 {
                        Ok(acc)
                    } else {
                        tape.scale(acc, inv)
                    }
                };
                (mean(tape, &trace.node_outputs)?, mean(tape, &trace.edge_outputs)?)
            }
        };
        trace.latent = match &self.pool {
            PoolHead::Sum => self.sum_pool(tape, o_fin, e_fin)?,
            PoolHead::Linear { w, b } => {
                let s = self.sum_pool(tape, o_fin, e_fin)?;
                let z = tape.matmul(s, tape.param(*w))?;
                tape.add_bias(z, tape.param(*b))?
            }
            PoolHead::Flatten(mlp) => {
                let (mn, me) = self.merged_dims();
                let fo = tape.reshape(o_fin, 1, n * mn)?;
                let fe = tape.reshape(e_fin, 1, m * me)?;
                let flat = tape.concat_cols(&[fo, fe])?;
                mlp.forward(tape, flat)?
            }
        };
        Ok(trace)
    }

    fn sum_pool(&self, tape: &mut Tape<T>, o_fin: Var, e_fin: Var) -> Result<Var, EgateError> {
        let so = tape.sum_rows(o_fin)?;
        let se = tape.sum_rows(e_fin)?;
        Ok(tape.concat_cols(&[so, se])?)
    }

    /// `(O', E')` from a latent row.
    pub fn decode(&self, tape: &mut Tape<T>, latent: Var) -> Result<(Var, Var), EgateError> {
        let d = &self.decoder;
        let h = tape.matmul(latent, tape.param(d.hidden_w))?;
        let h = tape.add_bias(h, tape.param(d.hidden_b))?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, tape.param(d.node_w))?;
        let o = tape.add_bias(o, tape.param(d.node_b))?;
        let e = tape.matmul(h, tape.param(d.edge_w))?;
        let e = tape.add_bias(e, tape.param(d.edge_b))?;
        Ok((
            tape.reshape(o, self.shape.n, self.shape.node_dim)?,
            tape.reshape(e, self.shape.m, self.shape.edge_dim)?,
        ))
    }

    /// `MSE(O, O') + beta MSE(E, E')` on the tape.
    pub fn reconstruction_loss(&self, tape: &mut Tape<T>, g: &HGraph<T>, beta: T) -> Result<Var, EgateError> {
        let trace = self.encode(tape, g)?;
        let (o_hat, e_hat) = self.decode(tape, trace.latent)?;
        let o = tape.constant(Tensor::new(self.shape.n, self.shape.node_dim, g.node_features().to_vec())?);
        let e = tape.constant(Tensor::new(self.shape.m, self.shape.edge_dim, g.edge_features().to_vec())?);
        let lo = tape.mse(o_hat, o)?;
        let le = tape.mse(e_hat, e)?;
        let le = tape.scale(le, beta)?;
        Ok(tape.add(lo, le)?)
    }

    pub fn loss(&self, g: &HGraph<T>) -> Result<T, EgateError> {
        let mut tape = Tape::with_params(&self.store);
        let l = self.reconstruction_loss(&mut tape, g, T::lit(self.config.beta))?;
        Ok(tape.value(l).item())
    }

    pub fn mean_loss(&self, graphs: &[HGraph<T>]) -> Result<T, EgateError> {
        if graphs.is_empty() {
            return Err(EgateError::EmptyDataset);
        }
        let total = graphs.iter().map(|g| self.loss(g)).sum::<Result<T, _>>()?;
        Ok(total / T::from_usize(graphs.len()).unwrap())
    }

    /// Graph-level latent vector.
    pub fn encode_latent(&self, g: &HGraph<T>) -> Result<Vec<T>, EgateError> {
        let mut tape = Tape::with_params(&self.store);
        let trace = self.encode(&mut tape, g)?;
        Ok(tape.value(trace.latent).values.clone())
    }

    /// Trains on `graphs`, returning the loss report. Each step averages the
    /// per-graph loss over one batch.
    pub fn train(&mut self, graphs: &[HGraph<T>], cfg: &EgateTrainConfig) -> Result<TrainReport, EgateError> {
        if graphs.is_empty() {
            return Err(EgateError::EmptyDataset);
        }
        for g in graphs {
            self.check_graph(g)?;
        }
        let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.schedule)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let beta = T::lit(self.config.beta);
        let initial = self.mean_loss(graphs)?.to_f64_lossy();
        let mut history = Vec::new();
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        let batch_size = cfg.batching.size(graphs.len());
        let mut step = 0usize;
        let mut reached = cfg.target_loss.is_some_and(|t| initial < t);
        'outer: for _ in 0..cfg.epochs {
            if reached {
                break;
            }
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch_size) {
                if cfg.max_steps.is_some_and(|s| step >= s) {
                    break 'outer;
                }
                let mut tape = Tape::with_params(&self.store);
                let mut total: Option<Var> = None;
                for &k in chunk {
                    let l = self.reconstruction_loss(&mut tape, &graphs[k], beta)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, l)?,
                        None => l,
                    });
                }
                let loss = tape.scale(total.expect("nonempty chunk"), T::one() / T::from_usize(chunk.len()).unwrap())?;
                let value = tape.value(loss).item().to_f64_lossy();
                if !value.is_finite() {
                    return Err(EgateError::NonFiniteLoss(step));
                }
                history.push(value);
                tape.backward(loss)?;
                opt.step(&mut self.store, &tape.param_grads())?;
                step += 1;
                if let Some(t) = cfg.target_loss {
                    if self.mean_loss(graphs)?.to_f64_lossy() < t {
                        reached = true;
                        break 'outer;
                    }
                }
            }
        }
        let final_loss = self.mean_loss(graphs)?.to_f64_lossy();
        if !final_loss.is_finite() {
            return Err(EgateError::NonFiniteLoss(step));
        }
        Ok(TrainReport {
            initial_loss: initial,
            final_loss,
            steps: step,
            history,
            reached_target: reached,
        })
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            config: self.config.clone(),
            shape: self.shape,
            latent_dim: self.latent_dim(),
        }
    }

    /// `{architecture, params}` JSON document.
    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            architecture: self.descriptor(),
            params: self.store.to_checkpoint(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self, EgateError> {
        let ck: Checkpoint<T> = serde_json::from_str(s).map_err(|e| EgateError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(ck.architecture.config, ck.architecture.shape, 0)?;
        model.store.load_checkpoint(&ck.params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub config: EgateConfig,
    pub shape: GraphShape,
    pub latent_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    architecture: ModelDescriptor,
    params: std::collections::BTreeMap<String, Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Batching {
    Full,
    /// Split into this many batches.
    Count(usize),
    /// Batches of this many graphs.
    Size(usize),
}

impl Batching {
    pub fn size(self, total: usize) -> usize {
        match self {
            Batching::Full => total,
            Batching::Count(c) => total.div_ceil(c.max(1)),
            Batching::Size(s) => s.clamp(1, total),
        }
        .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgateTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batching: Batching,
    pub schedule: Option<StepDecay>,
    pub shuffle: bool,
    pub seed: u64,
    /// Stop once the dataset loss drops below this value.
    pub target_loss: Option<f64>,
    pub max_steps: Option<usize>,
}

impl EgateTrainConfig {
    pub fn full_batch(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            optimizer: OptimizerKind::ADAM,
            batching: Batching::Full,
            schedule: None,
            shuffle: true,
            seed,
            target_loss: None,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    /// Batch loss before each update.
    pub history: Vec<f64>,
    pub reached_target: bool,
}

/// `MSE(O, O') + beta MSE(E, E')` on plain slices.
pub fn reconstruction_mse(o: &[f64], o_hat: &[f64], e: &[f64], e_hat: &[f64], beta: f64) -> f64 {
    let mse = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
        }
    };
    mse(o, o_hat) + beta * mse(e, e_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgraph::{encode, FeatureScheme};
    use crate::pauli::{build_family, Family, FamilySpec};

    fn graph(family: Family, n: usize, params: &[(&str, f64)]) -> HGraph<f64> {
        let h = build_family(&FamilySpec::new(family, n, params)).unwrap();
        encode(&h, &FeatureScheme::for_family(family)).unwrap()
    }

    #[test]
    fn latent_dims_for_benchmarks() {
        for (n, want) in [(4, 7), (6, 9), (8, 11)] {
            let g = graph(Family::Xxz1d, n, &[("Jzz", 1.0)]);
            let m = EgateModel::<f64>::new(EgateConfig::new(2, 8), GraphShape::of(&g), 1).unwrap();
            assert_eq!(m.encode_latent(&g).unwrap().len(), want);
        }
        for n in [4, 6, 8] {
            let g = graph(Family::XxzX1d, n, &[("Jzz", 1.0), ("Kx", 0.3)]);
            let m = EgateModel::<f64>::new(EgateConfig::new(2, 8), GraphShape::of(&g), 1).unwrap();
            assert_eq!(m.latent_dim(), 5);
            assert_eq!(m.encode_latent(&g).unwrap().len(), 5);
        }
        let g = graph(Family::Xyz2d33, 9, &[("Jyy", 0.5), ("Jzz1", 1.0), ("Jzz2", -1.0)]);
        let cfg = EgateConfig::new(2, 8).with_pooling(Pooling::MlpFlatten { target: 8, hidden: 32 });
        let m = EgateModel::<f64>::new(cfg, GraphShape::of(&g), 1).unwrap();
        assert_eq!(m.encode_latent(&g).unwrap().len(), 8);
    }

    #[test]
    fn single_layer_mean_equals_layer_output() {
        let g = graph(Family::Xxz1d, 4, &[("Jzz", 0.7)]);
        let m = EgateModel::<f64>::new(EgateConfig::new(1, 8), GraphShape::of(&g), 5).unwrap();
        let mut tape = Tape::with_params(&m.store);
        let tr = m.encode(&mut tape, &g).unwrap();
        let o = tape.value(tr.node_outputs[0]).clone();
        let e = tape.value(tr.edge_outputs[0]).clone();
        let mut want: Vec<f64> = (0..o.cols()).map(|c| (0..o.rows()).map(|r| o.get(r, c)).sum()).collect();
        want.extend((0..e.cols()).map(|c| (0..e.rows()).map(|r| e.get(r, c)).sum::<f64>()));
        assert_eq!(tape.value(tr.latent).values, want);
    }

    #[test]
    fn single_edge_attention_is_one() {
        let g = HGraph::new(2, 2, 3, vec![1.0, 0.0, 0.0, 1.0], vec![(0, 1)], vec![1.0, 1.0, 0.5]).unwrap();
        let m = EgateModel::<f64>::new(EgateConfig::new(2, 4), GraphShape::of(&g), 3).unwrap();
        let mut tape = Tape::with_params(&m.store);
        let tr = m.encode(&mut tape, &g).unwrap();
        for v in tr.alphas.iter().chain(&tr.betas) {
            assert_eq!(tape.value(*v).values, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn isolated_node_rejected() {
        let g = HGraph::new(3, 2, 1, vec![1.0; 6], vec![(0, 1)], vec![1.0]).unwrap();
        let m = EgateModel::<f64>::new(EgateConfig::new(1, 4), GraphShape::of(&g), 0).unwrap();
        assert_eq!(m.encode_latent(&g), Err(EgateError::IsolatedNode(2)));
    }

    #[test]
    fn zeroed_update_mlp_gives_zero_edges() {
        let g = graph(Family::Xxz1d, 4, &[("Jzz", 2.0)]);
        let mut m = EgateModel::<f64>::new(EgateConfig::new(1, 4), GraphShape::of(&g), 2).unwrap();
        let upd = m.layers[0].edge.update.clone();
        for id in upd.weights.iter().chain(&upd.biases) {
            m.store.get_mut(*id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::with_params(&m.store);
        let tr = m.encode(&mut tape, &g).unwrap();
        assert!(tape.value(tr.edge_outputs[0]).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_zero_ignores_edge_reconstruction() {
        let g = graph(Family::Xxz1d, 4, &[("Jzz", 2.0)]);
        let mut cfg = EgateConfig::new(1, 4);
        cfg.beta = 0.0;
        let mut m = EgateModel::<f64>::new(cfg, GraphShape::of(&g), 2).unwrap();
        let before = m.loss(&g).unwrap();
        let b = m.decoder.edge_b;
        m.store.get_mut(b).values.iter_mut().for_each(|v| *v += 3.0);
        assert_eq!(m.loss(&g).unwrap(), before);
    }

    #[test]
    fn hand_computed_mse() {
        let l = reconstruction_mse(&[1.0, 0.0, 0.0, 1.0], &[0.5, 0.0, 0.0, 1.0], &[2.0, 1.0], &[1.0, 1.0], 2.0);
        assert!((l - (0.25 / 4.0 + 2.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_leave_the_model_unchanged() {
        let g = graph(Family::Xxz1d, 4, &[("Jzz", 2.0)]);
        let mut m = EgateModel::<f64>::new(EgateConfig::new(1, 4), GraphShape::of(&g), 2).unwrap();
        let before = m.clone();
        let r = m.train(&[g], &EgateTrainConfig::full_batch(0, 1e-3, 0)).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = graph(Family::XxzX1d, 4, &[("Jzz", 1.0), ("Kx", 0.5)]);
        let cfg = EgateConfig::new(2, 6).with_pooling(Pooling::LinearAfterSum { target: 1 });
        let m = EgateModel::<f64>::new(cfg, GraphShape::of(&g), 8).unwrap();
        let back = EgateModel::<f64>::from_checkpoint_json(&m.to_checkpoint_json()).unwrap();
        assert_eq!(back.encode_latent(&g).unwrap(), m.encode_latent(&g).unwrap());
        assert_eq!(back.descriptor(), m.descriptor());
    }
}
