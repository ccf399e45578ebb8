//! Loop-by-loop reimplementation of the node and edge modules that reads raw
//! weights out of the parameter store. Shared by the core and acceptance tests.

// Each including target uses a different subset.
#![allow(dead_code)]

use egate_core::diffnet::{Mlp, ParamId, ParamStore, Tape};
use egate_core::egate::EgateModel;
use egate_core::hgraph::HGraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn weights(store: &ParamStore<f64>, id: ParamId) -> Mat {
    let t = store.get(id);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w.first().map_or(0, Vec::len);
    (0..cols).map(|c| x.iter().zip(w).map(|(a, row)| a * row[c]).sum()).collect()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn mlp(store: &ParamStore<f64>, net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = net.weights.len() - 1;
    for (k, (&w, &b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let bias = store.get(b).values.clone();
        h = vec_mat(&h, &weights(store, w)).iter().zip(&bias).map(|(a, b)| a + b).collect();
        if k < last {
            h = h.into_iter().map(leaky).collect();
        }
    }
    h
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

struct Oracle<'a> {
    store: &'a ParamStore<f64>,
    edges: Vec<(usize, usize)>,
    n: usize,
}

impl Oracle<'_> {
    fn neighbors(&self, i: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a == i {
                out.push((b, k));
            } else if b == i {
                out.push((a, k));
            }
        }
        out
    }

    fn project(&self, o: &Mat, e: &Mat, w_o: ParamId, w_e: ParamId) -> (Mat, Mat) {
        let wo = weights(self.store, w_o);
        let we = weights(self.store, w_e);
        (
            o.iter().map(|r| vec_mat(r, &wo)).collect(),
            e.iter().map(|r| vec_mat(r, &we)).collect(),
        )
    }

    fn scores(&self, i: usize, os: &Mat, es: &Mat, attn: &Mlp) -> Vec<f64> {
        let nb = self.neighbors(i);
        let raw: Vec<f64> = nb
            .iter()
            .map(|&(j, k)| {
                let x = [os[i].clone(), os[j].clone(), es[k].clone()].concat();
                leaky(mlp(self.store, attn, &x)[0])
            })
            .collect();
        softmax(&raw)
    }

    fn node(&self, o: &Mat, e: &Mat, m: &egate_core::egate::NodeModule) -> (Mat, Vec<Vec<f64>>) {
        let (os, es) = self.project(o, e, m.w_o, m.w_e);
        let mut out = Vec::new();
        let mut alphas = Vec::new();
        for i in 0..self.n {
            let alpha = self.scores(i, &os, &es, &m.attention);
            let width = os[0].len() + es[0].len();
            let mut acc = vec![0.0; width];
            for (&(j, k), a) in self.neighbors(i).iter().zip(&alpha) {
                let msg = [os[j].clone(), es[k].clone()].concat();
                for (s, v) in acc.iter_mut().zip(msg) {
                    *s += a * v;
                }
            }
            out.push(acc.into_iter().map(elu).collect());
            alphas.push(alpha);
        }
        (out, alphas)
    }

    fn edge(&self, o: &Mat, e: &Mat, m: &egate_core::egate::EdgeModule) -> (Mat, Vec<Vec<f64>>) {
        let (os, es) = self.project(o, e, m.w_o, m.w_e);
        let mut transit = Vec::new();
        let mut betas = Vec::new();
        for i in 0..self.n {
            let beta = self.scores(i, &os, &es, &m.attention);
            let mut acc = vec![0.0; es[0].len()];
            for (&(_, k), b) in self.neighbors(i).iter().zip(&beta) {
                for (s, v) in acc.iter_mut().zip(&es[k]) {
                    *s += b * v;
                }
            }
            transit.push(acc);
            betas.push(beta);
        }
        let out = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let x = [os[i].clone(), os[j].clone(), transit[i].clone(), transit[j].clone(), e[k].clone()].concat();
                mlp(self.store, &m.update, &x)
            })
            .collect();
        (out, betas)
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> HGraph<f64> {
    let n = rng.random_range(3..8);
    let d = rng.random_range(2..6);
    let de = rng.random_range(1..4);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let o = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let e = (0..edges.len() * de).map(|_| rng.random_range(-2.0..2.0)).collect();
    HGraph::new(n, d, de, o, edges, e).unwrap()
}

pub fn rows(t: &egate_core::diffnet::Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Worst deviations of one model's encoder from the oracle on `g`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGap {
    pub node: f64,
    pub edge: f64,
    pub attention: f64,
    /// Largest `|sum(row) - 1|` over every attention row.
    pub row_sum: f64,
}

pub fn compare(model: &EgateModel<f64>, g: &HGraph<f64>) -> OracleGap {
    let mut tape = Tape::with_params(&model.store);
    let trace = model.encode(&mut tape, g).unwrap();
    let oracle = Oracle {
        store: &model.store,
        edges: g.edges().to_vec(),
        n: g.n(),
    };
    let mut gap = OracleGap::default();
    let mut o: Mat = (0..g.n()).map(|i| g.node_row(i).to_vec()).collect();
    let mut e: Mat = (0..g.m()).map(|k| g.edge_row(k).to_vec()).collect();
    for (l, layer) in model.layers.iter().enumerate() {
        let (o_next, alphas) = oracle.node(&o, &e, &layer.node);
        let (e_next, betas) = oracle.edge(&o_next, &e, &layer.edge);
        gap.node = gap.node.max(max_diff(&o_next, &rows(tape.value(trace.node_outputs[l]))));
        gap.edge = gap.edge.max(max_diff(&e_next, &rows(tape.value(trace.edge_outputs[l]))));
        // The tape orders attention slots by destination, then neighbor list order.
        let ta = &tape.value(trace.alphas[l]).values;
        let tb = &tape.value(trace.betas[l]).values;
        for (x, y) in alphas.concat().iter().zip(ta).chain(betas.concat().iter().zip(tb)) {
            gap.attention = gap.attention.max((x - y).abs());
        }
        for a in alphas.iter().chain(&betas) {
            gap.row_sum = gap.row_sum.max((a.iter().sum::<f64>() - 1.0).abs());
        }
        o = o_next;
        e = e_next;
    }
    gap
}

