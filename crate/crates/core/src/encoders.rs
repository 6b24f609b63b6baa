//! Findings encoders (BiLSTM, Transformer) and the graph encoders (GCN, GAT).

use graphsum_numerics::{Graph, ParamId, Tensor, Var};

use crate::config::Gnn;
use crate::error::{CoreError, Result};
use crate::layers::{positions, Builder, FeedForward, LayerNorm, LstmCell, MultiHeadAttention};
use crate::wordgraph::WordGraph;

/// Per-token states `h^x` (N x d) and the summary vector `h_f` (1 x d).
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub states: Var,
    pub summary: Var,
    /// Final LSTM cell, concatenated over both directions.
    pub cell: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    pub layers: Vec<(LstmCell, LstmCell)>,
}

impl BiLstmEncoder {
    pub fn new(b: &mut Builder, name: &str, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input } else { 2 * hidden };
            out.push((
                LstmCell::new(b, &format!("{name}.l{l}.fwd"), inp, hidden)?,
                LstmCell::new(b, &format!("{name}.l{l}.bwd"), inp, hidden)?,
            ));
        }
        Ok(Self { layers: out })
    }

    /// Run both directions over `inputs` (N x e). The summary is the
    /// concatenation of the forward state after the last token and the
    /// backward state after the first.
    pub fn encode(&self, g: &mut Graph, inputs: Var) -> Result<EncoderOutput> {
        let n = g.shape(inputs).rows;
        if n == 0 {
            return Err(CoreError::Data("cannot encode an empty sequence".into()));
        }
        let mut x = inputs;
        let mut last = None;
        for (fwd, bwd) in &self.layers {
            let (hf, ff) = run_direction(g, fwd, x, false)?;
            let (hb, fb) = run_direction(g, bwd, x, true)?;
            let fstates = g.concat_rows(&hf)?;
            let bstates = g.concat_rows(&hb)?;
            x = g.concat_cols(&[fstates, bstates])?;
            last = Some((ff, fb));
        }
        let ((hf, cf), (hb, cb)) = last.expect("at least one layer");
        let summary = g.concat_cols(&[hf, hb])?;
        let cell = g.concat_cols(&[cf, cb])?;
        Ok(EncoderOutput {
            states: x,
            summary,
            cell: Some(cell),
        })
    }
}

/// States in token order plus the final `(h, c)`.
fn run_direction(g: &mut Graph, cell: &LstmCell, x: Var, reverse: bool) -> Result<(Vec<Var>, (Var, Var))> {
    let n = g.shape(x).rows;
    let proj = cell.input_proj(g, x)?;
    let mut h = g.constant(Tensor::zeros(1, cell.hidden));
    let mut c = h;
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let xp = g.row(proj, t)?;
        (h, c) = cell.step_proj(g, xp, h, c)?;
        states[t] = h;
    }
    Ok((states, (h, c)))
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Pre-norm Transformer encoder with sinusoidal positions.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_out: LayerNorm,
    pub dim: usize,
}

impl TransformerEncoder {
    pub fn new(b: &mut Builder, name: &str, dim: usize, ff: usize, heads: usize, layers: usize) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{name}.l{l}");
                Ok(EncoderLayer {
                    ln_attn: LayerNorm::new(b, &format!("{p}.ln_attn"), dim)?,
                    attn: MultiHeadAttention::new(b, &format!("{p}.attn"), dim, heads)?,
                    ln_ff: LayerNorm::new(b, &format!("{p}.ln_ff"), dim)?,
                    ff: FeedForward::new(b, &format!("{p}.ff"), dim, ff)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            ln_out: LayerNorm::new(b, &format!("{name}.ln_out"), dim)?,
            dim,
        })
    }

    /// Encode embeddings (N x d). The summary is the mean of the states.
    pub fn encode(&self, g: &mut Graph, inputs: Var) -> Result<EncoderOutput> {
        let n = g.shape(inputs).rows;
        if n == 0 {
            return Err(CoreError::Data("cannot encode an empty sequence".into()));
        }
        let mut x = add_positions(g, inputs, self.dim)?;
        for layer in &self.layers {
            let h = layer.ln_attn.forward(g, x)?;
            let a = layer.attn.forward(g, h, h, false)?;
            x = g.add(x, a)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        let states = self.ln_out.forward(g, x)?;
        let summary = g.mean_rows(states)?;
        Ok(EncoderOutput {
            states,
            summary,
            cell: None,
        })
    }
}

/// `sqrt(d) * x + positions`.
pub fn add_positions(g: &mut Graph, x: Var, dim: usize) -> Result<Var> {
    let n = g.shape(x).rows;
    let scaled = g.scale(x, (dim as f64).sqrt());
    let pe = g.constant(positions(n, dim));
    Ok(g.add(scaled, pe)?)
}

/// `D^-1/2 A D^-1/2` of the self-looped adjacency.
pub fn normalized_adjacency(graph: &WordGraph) -> Tensor {
    let n = graph.len();
    let adj = graph.adjacency();
    let deg: Vec<f64> = (0..n)
        .map(|i| adj[i * n..(i + 1) * n].iter().filter(|&&a| a).count() as f64)
        .collect();
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adj[i * n + j] {
                t.set(i, j, 1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    t
}

#[derive(Clone, Debug)]
pub enum GnnLayer {
    /// `relu(Â H W + b)`.
    Gcn { w: ParamId, b: ParamId },
    /// Single-head attention over neighbors:
    /// `e_ij = leaky_relu(a_src·Wh_i + a_dst·Wh_j)`, masked softmax, `elu(α Wh)`.
    Gat {
        w: ParamId,
        a_src: ParamId,
        a_dst: ParamId,
    },
}

pub const GAT_SLOPE: f64 = 0.2;

impl GnnLayer {
    pub fn new(b: &mut Builder, name: &str, kind: Gnn, input: usize, output: usize) -> Result<Self> {
        match kind {
            Gnn::Gcn => Ok(GnnLayer::Gcn {
                w: b.weight(&format!("{name}.w"), input, output)?,
                b: b.bias(&format!("{name}.b"), output)?,
            }),
            Gnn::Gat => Ok(GnnLayer::Gat {
                w: b.weight(&format!("{name}.w"), input, output)?,
                a_src: b.weight(&format!("{name}.a_src"), output, 1)?,
                a_dst: b.weight(&format!("{name}.a_dst"), output, 1)?,
            }),
            Gnn::Off => Err(CoreError::Config("no graph layer for gnn = off".into())),
        }
    }

    /// `adj` carries the normalized adjacency for GCN, `mask` the binary
    /// neighborhoods for GAT. Returns the new node states and, for GAT, the
    /// attention matrix.
    pub fn forward(&self, g: &mut Graph, h: Var, adj: Var, mask: &[bool]) -> Result<(Var, Option<Var>)> {
        match *self {
            GnnLayer::Gcn { w, b } => {
                let agg = g.matmul(adj, h)?;
                let w = g.param(w);
                let z = g.matmul(agg, w)?;
                let b = g.param(b);
                let z = g.add_row(z, b)?;
                Ok((g.relu(z), None))
            }
            GnnLayer::Gat { w, a_src, a_dst } => {
                let w = g.param(w);
                let wh = g.matmul(h, w)?;
                let a_src = g.param(a_src);
                let a_dst = g.param(a_dst);
                let s = g.matmul(wh, a_src)?;
                let d = g.matmul(wh, a_dst)?;
                let d = g.transpose(d);
                let e = g.add_outer(s, d)?;
                let e = g.leaky_relu(e, GAT_SLOPE);
                let alpha = g.masked_softmax(e, mask)?;
                let out = g.matmul(alpha, wh)?;
                Ok((g.elu(out), Some(alpha)))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub layers: Vec<GnnLayer>,
}

impl GraphEncoder {
    pub fn new(b: &mut Builder, name: &str, kind: Gnn, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GnnLayer::new(b, &format!("{name}.l{l}"), kind, inp, hidden)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn encode(&self, g: &mut Graph, nodes: Var, input: &GraphInput) -> Result<Var> {
        let mut h = nodes;
        for layer in &self.layers {
            h = layer.forward(g, h, input.norm_adj, &input.mask)?.0;
        }
        Ok(h)
    }
}

/// Constant adjacency data shared by both graph branches of one report.
pub struct GraphInput {
    pub norm_adj: Var,
    pub mask: Vec<bool>,
}

impl GraphInput {
    pub fn new(g: &mut Graph, graph: &WordGraph) -> Self {
        Self {
            norm_adj: g.constant(normalized_adjacency(graph)),
            mask: graph.adjacency().to_vec(),
        }
    }
}

/// `z^b` (background) and `z^l` (guidance), each `|V| x d`.
#[derive(Clone, Copy, Debug)]
pub struct GraphEncoding {
    pub background: Var,
    pub guidance: Var,
}

/// Two graph encoders with independent parameters over the same graph.
#[derive(Clone, Debug)]
pub struct DualGraphEncoder {
    pub background: GraphEncoder,
    pub guidance: GraphEncoder,
}

impl DualGraphEncoder {
    pub fn new(b: &mut Builder, kind: Gnn, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        Ok(Self {
            background: GraphEncoder::new(b, "graph_bg", kind, input, hidden, layers)?,
            guidance: GraphEncoder::new(b, "graph_guide", kind, input, hidden, layers)?,
        })
    }

    /// `None` for an empty graph.
    pub fn encode(&self, g: &mut Graph, nodes: Var, graph: &WordGraph) -> Result<Option<GraphEncoding>> {
        if graph.is_empty() {
            return Ok(None);
        }
        let input = GraphInput::new(g, graph);
        Ok(Some(GraphEncoding {
            background: self.background.encode(g, nodes, &input)?,
            guidance: self.guidance.encode(g, nodes, &input)?,
        }))
    }
}
