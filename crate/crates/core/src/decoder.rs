//! Decoder pieces: additive attention-and-sum (`AttCon`), guidance, the
//! guided state update, the output head and the pointer mixture.

use graphsum_numerics::{Graph, ParamId, Var};

use crate::config::UpdateRule;
use crate::error::{CoreError, Result};
use crate::layers::{Builder, FeedForward, LayerNorm, Linear, LstmCell, MultiHeadAttention};

/// `e_i = p^T tanh(W_s state_i + W_q query)`, `a = softmax(e)`,
/// `context = sum_i a_i state_i`.
#[derive(Clone, Debug)]
pub struct AttCon {
    pub w_state: ParamId,
    pub w_query: ParamId,
    pub p: ParamId,
}

/// States plus their cached projection `states W_s`.
#[derive(Clone, Copy, Debug)]
pub struct AttMemory {
    pub states: Var,
    pub proj: Var,
}

impl AttCon {
    pub fn new(b: &mut Builder, name: &str, state_dim: usize, query_dim: usize, att_dim: usize) -> Result<Self> {
        Ok(Self {
            w_state: b.weight(&format!("{name}.w_state"), state_dim, att_dim)?,
            w_query: b.weight(&format!("{name}.w_query"), query_dim, att_dim)?,
            p: b.weight(&format!("{name}.p"), att_dim, 1)?,
        })
    }

    pub fn memory(&self, g: &mut Graph, states: Var) -> Result<AttMemory> {
        if g.shape(states).rows == 0 {
            return Err(CoreError::Data("attention over zero states".into()));
        }
        let w = g.param(self.w_state);
        let proj = g.matmul(states, w)?;
        Ok(AttMemory { states, proj })
    }

    /// Returns `(context 1 x d, weights 1 x M)`.
    pub fn attend(&self, g: &mut Graph, mem: &AttMemory, query: Var) -> Result<(Var, Var)> {
        let wq = g.param(self.w_query);
        let q = g.matmul(query, wq)?;
        let pre = g.add_row(mem.proj, q)?;
        let act = g.tanh(pre);
        let p = g.param(self.p);
        let scores = g.matmul(act, p)?;
        let scores = g.transpose(scores);
        let weights = g.softmax(scores);
        let context = g.matmul(weights, mem.states)?;
        Ok((context, weights))
    }

    pub fn apply(&self, g: &mut Graph, states: Var, query: Var) -> Result<(Var, Var)> {
        let mem = self.memory(g, states)?;
        self.attend(g, &mem, query)
    }
}

/// `softmax(c z^T) z` per query row, optionally scaled by `1/sqrt(d)`.
/// Returns `(guidance, weights)`.
pub fn dot_guidance(g: &mut Graph, queries: Var, nodes: Var, scaled: bool) -> Result<(Var, Var)> {
    let zt = g.transpose(nodes);
    let mut scores = g.matmul(queries, zt)?;
    if scaled {
        let d = g.shape(nodes).cols as f64;
        scores = g.scale(scores, 1.0 / d.sqrt());
    }
    let weights = g.softmax(scores);
    Ok((g.matmul(weights, nodes)?, weights))
}

/// Folds guidance into the decoder state:
/// gated `s = s' + sigmoid(f_g(h)) * tanh(f_u(h))` or product `s = s' + f_g(h) * f_u(h)`.
#[derive(Clone, Debug)]
pub struct StateUpdate {
    pub gate: Linear,
    pub update: Linear,
    pub rule: UpdateRule,
}

impl StateUpdate {
    pub fn new(b: &mut Builder, guide_dim: usize, state_dim: usize, rule: UpdateRule) -> Result<Self> {
        Ok(Self {
            gate: Linear::new(b, "update.gate", guide_dim, state_dim, true)?,
            update: Linear::new(b, "update.value", guide_dim, state_dim, true)?,
            rule,
        })
    }

    pub fn apply(&self, g: &mut Graph, state: Var, guidance: Var) -> Result<Var> {
        let fg = self.gate.forward(g, guidance)?;
        let fu = self.update.forward(g, guidance)?;
        let (fg, fu) = match self.rule {
            UpdateRule::Gated => (g.sigmoid(fg), g.tanh(fu)),
            UpdateRule::Product => (fg, fu),
        };
        let delta = g.mul(fg, fu)?;
        Ok(g.add(state, delta)?)
    }
}

/// `P_vocab = softmax(Q' tanh(Q [s; g]))` and the generation switch
/// `p_gen = sigmoid(w [g; s; y'] + b)`.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub q: ParamId,
    pub q_out: ParamId,
    pub pgen: Option<Linear>,
}

impl OutputHead {
    pub fn new(
        b: &mut Builder,
        state_dim: usize,
        ctx_dim: usize,
        input_dim: usize,
        vocab: usize,
        copy: bool,
    ) -> Result<Self> {
        Ok(Self {
            q: b.weight("out.q", state_dim + ctx_dim, state_dim)?,
            q_out: b.weight("out.q_out", state_dim, vocab)?,
            pgen: if copy {
                Some(Linear::new(b, "pgen", ctx_dim + state_dim + input_dim, 1, true)?)
            } else {
                None
            },
        })
    }

    pub fn vocab_distribution(&self, g: &mut Graph, state: Var, ctx: Var) -> Result<Var> {
        let x = g.concat_cols(&[state, ctx])?;
        let q = g.param(self.q);
        let h = g.matmul(x, q)?;
        let h = g.tanh(h);
        let qo = g.param(self.q_out);
        let logits = g.matmul(h, qo)?;
        Ok(g.softmax(logits))
    }

    pub fn p_gen(&self, g: &mut Graph, ctx: Var, state: Var, input: Var) -> Result<Option<Var>> {
        let Some(lin) = &self.pgen else {
            return Ok(None);
        };
        let x = g.concat_cols(&[ctx, state, input])?;
        let z = lin.forward(g, x)?;
        Ok(Some(g.sigmoid(z)))
    }
}

/// `P(w) = p_gen P_vocab(w) + (1 - p_gen) sum_{i: x_i = w} a_i` over the
/// extended vocabulary.
pub fn pointer_mix(
    g: &mut Graph,
    p_vocab: Var,
    attn: Var,
    p_gen: Var,
    source_ids: &[usize],
    extended_size: usize,
) -> Result<Var> {
    let gen = g.pad_cols(p_vocab, extended_size)?;
    let gen = g.mul_scalar(gen, p_gen)?;
    let copy = g.scatter_cols(attn, source_ids, extended_size)?;
    let p_copy = g.affine(p_gen, -1.0, 1.0);
    let copy = g.mul_scalar(copy, p_copy)?;
    Ok(g.add(gen, copy)?)
}

#[derive(Clone, Debug)]
pub struct LstmDecoder {
    pub cell: LstmCell,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Pre-norm Transformer decoder. Exposes the penultimate layer's output
/// alongside the normalized final output.
#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    /// Projects `[y; h^b]` back to model width when the graph is on.
    pub in_proj: Option<Linear>,
    pub layers: Vec<DecoderLayer>,
    pub ln_out: LayerNorm,
    pub dim: usize,
}

impl TransformerDecoder {
    pub fn new(
        b: &mut Builder,
        dim: usize,
        ff: usize,
        heads: usize,
        layers: usize,
        background_dim: Option<usize>,
    ) -> Result<Self> {
        let in_proj = match background_dim {
            Some(extra) => Some(Linear::new(b, "dec.in_proj", dim + extra, dim, true)?),
            None => None,
        };
        let layers = (0..layers)
            .map(|l| {
                let p = format!("dec.l{l}");
                Ok(DecoderLayer {
                    ln_self: LayerNorm::new(b, &format!("{p}.ln_self"), dim)?,
                    self_attn: MultiHeadAttention::new(b, &format!("{p}.self"), dim, heads)?,
                    ln_cross: LayerNorm::new(b, &format!("{p}.ln_cross"), dim)?,
                    cross_attn: MultiHeadAttention::new(b, &format!("{p}.cross"), dim, heads)?,
                    ln_ff: LayerNorm::new(b, &format!("{p}.ln_ff"), dim)?,
                    ff: FeedForward::new(b, &format!("{p}.ff"), dim, ff)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            in_proj,
            layers,
            ln_out: LayerNorm::new(b, "dec.ln_out", dim)?,
            dim,
        })
    }

    /// Run over all positions (T x d, positions already added) with a causal
    /// mask. Returns `(penultimate, final)`, each T x d.
    pub fn forward(&self, g: &mut Graph, inputs: Var, memory: Var) -> Result<(Var, Var)> {
        let mut x = inputs;
        let mut penultimate = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == last {
                penultimate = x;
            }
            let h = layer.ln_self.forward(g, x)?;
            let a = layer.self_attn.forward(g, h, h, true)?;
            x = g.add(x, a)?;
            let h = layer.ln_cross.forward(g, x)?;
            let a = layer.cross_attn.forward(g, h, memory, false)?;
            x = g.add(x, a)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        let out = self.ln_out.forward(g, x)?;
        Ok((penultimate, out))
    }
}
