//! Layers composed from graph primitives.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::param::{Init, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Fully connected layer `x·W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), input_dim, output_dim, Init::default(), rng)?,
            bias: store.add(format!("{prefix}.bias"), 1, output_dim, Init::Zeros, rng)?,
            input_dim,
            output_dim,
        })
    }

    pub fn num_params(input_dim: usize, output_dim: usize) -> usize {
        input_dim * output_dim + output_dim
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

/// Gated recurrent unit in the Cho et al. (2014) form:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h~ = tanh(x·Wh + (r ∘ h)·Uh + bh)
/// h' = z ∘ h + (1 − z) ∘ h~
/// ```
///
/// Input projections for the three gates are stored side by side in one
/// `[input × 3·hidden]` matrix (order z, r, h); the recurrent z/r weights
/// share a `[hidden × 2·hidden]` matrix.
#[derive(Debug, Clone)]
pub struct Gru {
    pub w_input: ParamId,
    pub u_gates: ParamId,
    pub u_candidate: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            w_input: store.add(format!("{prefix}.w_input"), input_dim, 3 * hidden, Init::default(), rng)?,
            u_gates: store.add(format!("{prefix}.u_gates"), hidden, 2 * hidden, Init::default(), rng)?,
            u_candidate: store.add(format!("{prefix}.u_candidate"), hidden, hidden, Init::default(), rng)?,
            bias: store.add(format!("{prefix}.bias"), 1, 3 * hidden, Init::Zeros, rng)?,
            input_dim,
            hidden,
        })
    }

    pub fn num_params(input_dim: usize, hidden: usize) -> usize {
        3 * hidden * (input_dim + hidden + 1)
    }

    /// One recurrence step over a batch: `x` is `[B×input]`, `h_prev` is `[B×hidden]`.
    pub fn step(&self, g: &mut Graph, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let (bx, ix) = g.value(x).dims();
        let (bh, hh) = g.value(h_prev).dims();
        if ix != self.input_dim || hh != self.hidden || bx != bh {
            return Err(shape_err(
                "gru_step",
                format!("x [{bx}x{ix}], h [{bh}x{hh}] for GRU({}, {})", self.input_dim, self.hidden),
            ));
        }
        let h = self.hidden;
        let w = g.param(self.w_input);
        let b = g.param(self.bias);
        let u = g.param(self.u_gates);
        let uc = g.param(self.u_candidate);

        let xw = g.matmul(x, w)?;
        let xw = g.add_row(xw, b)?;
        let hu = g.matmul(h_prev, u)?;

        let xz = g.slice_cols(xw, 0, h)?;
        let xr = g.slice_cols(xw, h, h)?;
        let xh = g.slice_cols(xw, 2 * h, h)?;
        let hz = g.slice_cols(hu, 0, h)?;
        let hr = g.slice_cols(hu, h, h)?;

        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);

        let rh = g.mul(r, h_prev)?;
        let rhu = g.matmul(rh, uc)?;
        let cand = g.add(xh, rhu)?;
        let cand = g.tanh(cand);

        let keep = g.mul(z, h_prev)?;
        let one_minus_z = g.affine(z, -1.0, 1.0);
        let fresh = g.mul(one_minus_z, cand)?;
        g.add(keep, fresh)
    }

    /// Runs the cell over `seq` (each element `[B×input]`) from a zero state.
    pub fn run(&self, g: &mut Graph, seq: &[NodeId]) -> Result<Vec<NodeId>> {
        let Some(&first) = seq.first() else {
            return Err(NnError::EmptySequence);
        };
        let batch = g.value(first).rows();
        let mut h = g.input(Tensor::zeros(batch, self.hidden));
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            h = self.step(g, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Bidirectional GRU layer. `units` is the total width; each direction has
/// `units / 2` hidden units and the per-step output is `[forward ‖ backward]`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
    pub units: usize,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        units: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !units.is_multiple_of(2) || units == 0 {
            return Err(NnError::OddUnits(units));
        }
        let half = units / 2;
        Ok(Self {
            forward: Gru::new(store, &format!("{prefix}.fwd"), input_dim, half, rng)?,
            backward: Gru::new(store, &format!("{prefix}.bwd"), input_dim, half, rng)?,
            units,
        })
    }

    pub fn num_params(input_dim: usize, units: usize) -> usize {
        2 * Gru::num_params(input_dim, units / 2)
    }

    pub fn run(&self, g: &mut Graph, seq: &[NodeId]) -> Result<Vec<NodeId>> {
        let fwd = self.forward.run(g, seq)?;
        let reversed: Vec<NodeId> = seq.iter().rev().copied().collect();
        let mut bwd = self.backward.run(g, &reversed)?;
        bwd.reverse();
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect()
    }
}

/// Dot-product attention pooling with a learned query vector:
/// `w = softmax_t(H_t · q)`, `context = Σ_t w_t H_t`.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub query: ParamId,
    pub dim: usize,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            query: store.add(format!("{prefix}.query"), dim, 1, Init::default(), rng)?,
            dim,
        })
    }

    /// Returns `(context [B×dim], weights [B×T])`.
    pub fn forward(&self, g: &mut Graph, seq: &[NodeId]) -> Result<(NodeId, NodeId)> {
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let q = g.param(self.query);
        let scores = seq
            .iter()
            .map(|&h| g.matmul(h, q))
            .collect::<Result<Vec<_>>>()?;
        let scores = g.concat_cols(&scores)?;
        let weights = g.softmax(scores);
        let mut context = None;
        for (t, &h) in seq.iter().enumerate() {
            let w_t = g.slice_cols(weights, t, 1)?;
            let term = g.mul_col(h, w_t)?;
            context = Some(match context {
                None => term,
                Some(c) => g.add(c, term)?,
            });
        }
        Ok((context.expect("non-empty"), weights))
    }
}

/// A probability distribution over sequence positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || (total - 1.0).abs() > Self::TOLERANCE
        {
            return Err(shape_err("attention_weights", format!("not a distribution (sum {total})")));
        }
        Ok(Self(weights))
    }

    /// One distribution per row of a `[B×T]` weight tensor.
    pub fn from_rows(t: &Tensor) -> Result<Vec<Self>> {
        t.to_rows().into_iter().map(Self::new).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{prefix}.gain"), 1, dim, Init::Ones, rng)?,
            bias: store.add(format!("{prefix}.bias"), 1, dim, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, Self::EPS)
    }
}

/// Multi-head scaled dot-product attention with learned input and output
/// projections. Each head attends over `dim / heads` features with scale
/// `1/√(dim/heads)`; head outputs are concatenated then projected.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NnError::IndivisibleDim { dim, heads });
        }
        Ok(Self {
            query: Dense::new(store, &format!("{prefix}.q"), dim, dim, rng)?,
            key: Dense::new(store, &format!("{prefix}.k"), dim, dim, rng)?,
            value: Dense::new(store, &format!("{prefix}.v"), dim, dim, rng)?,
            output: Dense::new(store, &format!("{prefix}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    pub fn num_params(dim: usize) -> usize {
        4 * Dense::num_params(dim, dim)
    }

    /// `queries` is `[Tq×dim]`, `context` is `[Tk×dim]`; returns `[Tq×dim]`
    /// and the per-head attention matrices `[Tq×Tk]`.
    pub fn forward(&self, g: &mut Graph, queries: NodeId, context: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        for n in [queries, context] {
            if g.value(n).cols() != self.dim {
                return Err(shape_err("multi_head_attention", format!("expected width {}", self.dim)));
            }
        }
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let d_head = self.dim / self.heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d_head, d_head)?;
            let kh = g.slice_cols(k, h * d_head, d_head)?;
            let vh = g.slice_cols(v, h * d_head, d_head)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.affine(scores, scale, 0.0);
            let attn = g.softmax(scores);
            outs.push(g.matmul(attn, vh)?);
            maps.push(attn);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.output.forward(g, joined)?, maps))
    }
}
