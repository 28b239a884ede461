//! Parameterised building blocks over [`Graph`].

use rand::Rng;

use crate::error::Result;
use crate::graph::{ConvGeom, Graph, Var};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::LeakyRelu => g.leaky_relu(x, 0.1),
        }
    }
}

/// `y = x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_glorot(
            format!("{name}.weight"),
            &[in_dim, out_dim],
            in_dim,
            out_dim,
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn zeros(store: &mut ParameterStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Same computation with the parameters held constant.
    pub fn forward_frozen(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let w = g.param_frozen(store, self.weight);
        let b = g.param_frozen(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// NCHW convolution with weight `[out, in, kh, kw]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
}

impl Conv2d {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let area = kernel.0 * kernel.1;
        let weight = store.add_glorot(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel.0, kernel.1],
            in_channels * area,
            out_channels * area,
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.geom)
    }

    pub fn forward_frozen(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let w = g.param_frozen(store, self.weight);
        let b = g.param_frozen(store, self.bias);
        g.conv2d(x, w, Some(b), self.geom)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        crate::graph::conv_out(h, w, self.kernel.0, self.kernel.1, self.geom)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Glorot input weights, uniform `±1/√hidden` recurrent weights, forget bias +1.
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_input = store.add_glorot(
            format!("{name}.w_input"),
            &[input_dim, 4 * hidden],
            input_dim,
            hidden,
            rng,
        )?;
        let w_hidden = store.add_uniform(
            format!("{name}.w_hidden"),
            &[hidden, 4 * hidden],
            1.0 / (hidden as f64).sqrt(),
            rng,
        )?;
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), b)?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        let h = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let c = g.constant(Tensor::zeros(&[batch, self.hidden]));
        LstmState { h, c }
    }

    pub fn step(&self, g: &mut Graph, store: &ParameterStore, x: Var, state: LstmState) -> LstmState {
        let wx = g.param(store, self.w_input);
        let wh = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let a = g.matmul(x, wx);
        let r = g.matmul(state.h, wh);
        let z = g.add(a, r);
        let z = g.add_row(z, b);
        let n = self.hidden;
        let i = g.slice(z, 1, 0, n);
        let f = g.slice(z, 1, n, n);
        let cand = g.slice(z, 1, 2 * n, n);
        let o = g.slice(z, 1, 3 * n, n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let table = store.add_uniform(format!("{name}.table"), &[vocab, dim], 0.1, rng)?;
        Ok(Self { table, vocab, dim })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, tokens: &[usize]) -> Var {
        let t = g.param(store, self.table);
        g.gather(t, tokens)
    }
}

/// Concat-score attention: `score(q, k_t) = vᵀ tanh(W_q q + W_k k_t)`.
#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub v: ParamId,
    pub attn_dim: usize,
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_query = store.add_glorot(
            format!("{name}.w_query"),
            &[query_dim, attn_dim],
            query_dim,
            attn_dim,
            rng,
        )?;
        let w_key = store.add_glorot(
            format!("{name}.w_key"),
            &[key_dim, attn_dim],
            key_dim,
            attn_dim,
            rng,
        )?;
        let v = store.add_glorot(format!("{name}.v"), &[attn_dim, 1], attn_dim, 1, rng)?;
        Ok(Self {
            w_query,
            w_key,
            v,
            attn_dim,
        })
    }

    /// Projects the memory `[t, key_dim]` once per sequence.
    pub fn project_keys(&self, g: &mut Graph, store: &ParameterStore, memory: Var) -> Var {
        let wk = g.param(store, self.w_key);
        g.matmul(memory, wk)
    }

    /// Returns `(weights [b, t], context [b, key_dim])`.
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        query: Var,
        keys: Var,
        memory: Var,
    ) -> (Var, Var) {
        let b = g.shape(query)[0];
        let t = g.shape(keys)[0];
        let wq = g.param(store, self.w_query);
        let v = g.param(store, self.v);
        let q = g.matmul(query, wq);
        let e = g.add_outer(q, keys);
        let e = g.tanh(e);
        let s = g.matmul(e, v);
        let s = g.reshape(s, &[b, t]);
        let alpha = g.softmax(s);
        let ctx = g.matmul(alpha, memory);
        (alpha, ctx)
    }
}
