//! The full summarizer: sequence encoder, dual graph encoders, guided decoder
//! and pointer-generator head, all over one parameter store.

use std::collections::BTreeMap;

use graphsum_numerics::{Checkpoint, Graph, Gradients, NumericsError, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GuidanceKey, ModelConfig, Variant};
use crate::corpus::{CopyEncoding, Report, Vocabulary, BOS, EOS};
use crate::decoder::{dot_guidance, pointer_mix, AttCon, AttMemory, LstmDecoder, OutputHead, StateUpdate, TransformerDecoder};
use crate::encoders::{add_positions, BiLstmEncoder, DualGraphEncoder, EncoderOutput, TransformerEncoder};
use crate::error::{CoreError, Result};
use crate::layers::{Builder, Dropout, LstmCell};
use crate::wordgraph::{build_graph, WordGraph};

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum SeqEncoder {
    Lstm(BiLstmEncoder),
    Transformer(TransformerEncoder),
}

#[derive(Clone, Debug)]
enum DecoderNet {
    Lstm(LstmDecoder),
    Transformer(TransformerDecoder),
}

#[derive(Clone, Debug)]
struct GraphParts {
    encoders: DualGraphEncoder,
    background: AttCon,
    /// Additive guidance attention (LSTM decoder only).
    guide: Option<AttCon>,
    update: StateUpdate,
}

#[derive(Clone, Debug)]
struct Network {
    embedding: ParamId,
    encoder: SeqEncoder,
    graph: Option<GraphParts>,
    decoder: DecoderNet,
    source_att: AttCon,
    head: OutputHead,
}

/// One report turned into model inputs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub copy: CopyEncoding,
    /// Source ids in the base vocabulary (OOV → UNK) for the embedding.
    pub source: Vec<usize>,
    pub graph: WordGraph,
    /// Base-vocabulary ids of the graph's node words.
    pub node_ids: Vec<usize>,
    /// Gold ids over the output space, EOS last.
    pub targets: Vec<usize>,
    /// Teacher-forced decoder inputs: BOS then the gold prefix.
    pub inputs: Vec<usize>,
    pub reference: Vec<String>,
}

/// Graph-derived context for one report.
#[derive(Clone, Copy, Debug)]
pub enum Guide {
    Additive(AttMemory),
    Dot(Var),
}

#[derive(Clone, Debug)]
pub enum DecoderState {
    Lstm { hidden: Var, cell: Var },
    /// Projected inputs seen so far; the stack reruns over all of them.
    Transformer { inputs: Vec<Var> },
}

/// Everything the decoder reads from the encoders, computed once per report.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub source: AttMemory,
    pub summary: Var,
    /// `h^b`; `None` when the graph is off, zeros for an empty graph.
    pub background: Option<Var>,
    pub background_weights: Option<Var>,
    pub guide: Option<Guide>,
    pub init: DecoderState,
    pub source_ids: Vec<usize>,
    pub extended_size: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Next-token distribution over the output space.
    pub probs: Var,
    pub p_vocab: Var,
    pub p_gen: Option<Var>,
    /// Source attention `a^t`.
    pub attention: Var,
    pub guide_weights: Option<Var>,
    /// Updated hidden state `s_t`.
    pub state: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    net: Network,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = {
            let mut b = Builder {
                store: &mut params,
                rng: &mut rng,
            };
            Self::build(&config, vocab.len(), &mut b)?
        };
        Ok(Self {
            config,
            vocab,
            params,
            net,
        })
    }

    fn build(c: &ModelConfig, vocab_size: usize, b: &mut Builder) -> Result<Network> {
        let enc_dim = c.enc_dim();
        let dec_dim = c.dec_dim();
        let gh = c.graph_hidden;
        let background_dim = c.graph_enabled().then_some(gh);
        let input_dim = c.emb_dim + background_dim.unwrap_or(0);

        let embedding = b.embedding("embedding", vocab_size, c.emb_dim)?;
        let encoder = match c.variant {
            Variant::Lstm => {
                SeqEncoder::Lstm(BiLstmEncoder::new(b, "enc", c.emb_dim, c.enc_hidden, c.enc_layers)?)
            }
            Variant::Transformer => SeqEncoder::Transformer(TransformerEncoder::new(
                b, "enc", c.d_model, c.ff_dim, c.heads, c.enc_layers,
            )?),
        };
        let graph = if c.graph_enabled() {
            Some(GraphParts {
                encoders: DualGraphEncoder::new(b, c.gnn, c.emb_dim, gh, c.gnn_layers)?,
                background: AttCon::new(b, "att_bg", gh, enc_dim, dec_dim)?,
                guide: match c.variant {
                    Variant::Lstm => Some(AttCon::new(b, "att_guide", gh, dec_dim, dec_dim)?),
                    Variant::Transformer => None,
                },
                update: StateUpdate::new(b, gh, dec_dim, c.update_rule)?,
            })
        } else {
            None
        };
        let decoder = match c.variant {
            Variant::Lstm => DecoderNet::Lstm(LstmDecoder {
                cell: LstmCell::new(b, "dec.lstm", input_dim, dec_dim)?,
            }),
            Variant::Transformer => DecoderNet::Transformer(TransformerDecoder::new(
                b,
                c.d_model,
                c.ff_dim,
                c.heads,
                c.dec_layers,
                background_dim,
            )?),
        };
        let source_att = AttCon::new(b, "att_src", enc_dim, dec_dim, dec_dim)?;
        let head = OutputHead::new(b, dec_dim, enc_dim, input_dim, vocab_size, c.copy)?;
        Ok(Network {
            embedding,
            encoder,
            graph,
            decoder,
            source_att,
            head,
        })
    }

    pub fn config_hash(&self) -> String {
        self.config.hash(&self.vocab.to_text())
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }

    /// Size of the distribution the decoder emits for `p`.
    pub fn output_size(&self, p: &Prepared) -> usize {
        if self.config.copy {
            p.copy.extended_size
        } else {
            self.vocab.len()
        }
    }

    pub fn prepare(&self, report: &Report) -> Result<Prepared> {
        if report.findings.is_empty() {
            return Err(CoreError::Data(format!("report `{}` has empty findings", report.id)));
        }
        let copy = CopyEncoding::new(&report.findings, &self.vocab);
        let graph = build_graph(report, self.config.edge_types);
        let node_ids = graph.words().iter().map(|w| self.vocab.id(w)).collect();
        let mut targets = copy.target_ids(&report.impression, &self.vocab);
        if !self.config.copy {
            targets.iter_mut().for_each(|t| *t = copy.base_id(*t));
        }
        let mut inputs = vec![BOS];
        inputs.extend(targets.iter().map(|&t| copy.base_id(t)));
        targets.push(EOS);
        Ok(Prepared {
            id: report.id.clone(),
            source: copy.source_base_ids(),
            copy,
            graph,
            node_ids,
            targets,
            inputs,
            reference: report.impression.clone(),
        })
    }

    fn embed(&self, g: &mut Graph, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        let table = g.param(self.net.embedding);
        let e = g.gather_rows(table, ids)?;
        drop.apply(g, e)
    }

    pub fn encode(&self, g: &mut Graph, p: &Prepared, drop: &mut Dropout) -> Result<Encoded> {
        let emb = self.embed(g, &p.source, drop)?;
        let out: EncoderOutput = match &self.net.encoder {
            SeqEncoder::Lstm(e) => e.encode(g, emb)?,
            SeqEncoder::Transformer(e) => e.encode(g, emb)?,
        };
        let source = self.net.source_att.memory(g, out.states)?;

        let (mut background, mut background_weights, mut guide) = (None, None, None);
        if let Some(parts) = &self.net.graph {
            let encoding = if p.graph.is_empty() {
                None
            } else {
                let nodes = self.embed(g, &p.node_ids, drop)?;
                parts.encoders.encode(g, nodes, &p.graph)?
            };
            match encoding {
                Some(z) => {
                    let (hb, ab) = parts.background.apply(g, z.background, out.summary)?;
                    background = Some(hb);
                    background_weights = Some(ab);
                    guide = Some(match &parts.guide {
                        Some(att) => Guide::Additive(att.memory(g, z.guidance)?),
                        None => Guide::Dot(z.guidance),
                    });
                }
                None => {
                    background = Some(g.constant(Tensor::zeros(1, self.config.graph_hidden)));
                }
            }
        }

        let init = match self.config.variant {
            Variant::Lstm => DecoderState::Lstm {
                hidden: out.summary,
                cell: out.cell.expect("LSTM encoder returns its cell"),
            },
            Variant::Transformer => DecoderState::Transformer { inputs: Vec::new() },
        };
        Ok(Encoded {
            source,
            summary: out.summary,
            background,
            background_weights,
            guide,
            init,
            source_ids: p.copy.source_ids.clone(),
            extended_size: p.copy.extended_size,
        })
    }

    /// `y'_{t-1} = [emb(y_{t-1}); h^b]` (just the embedding with the graph off).
    fn expand_input(&self, g: &mut Graph, enc: &Encoded, prev: usize, drop: &mut Dropout) -> Result<Var> {
        let y = self.embed(g, &[prev], drop)?;
        match enc.background {
            Some(hb) => Ok(g.concat_cols(&[y, hb])?),
            None => Ok(y),
        }
    }

    /// Shared tail of every step: guidance update, source attention, output
    /// distribution.
    fn head(&self, g: &mut Graph, enc: &Encoded, s_prime: Var, key: Var, input: Var) -> Result<StepOutput> {
        let (state, guide_weights) = match (&self.net.graph, enc.guide) {
            (Some(parts), Some(guide)) => {
                let (hl, w) = match guide {
                    Guide::Additive(mem) => parts
                        .guide
                        .as_ref()
                        .expect("additive guide has parameters")
                        .attend(g, &mem, key)?,
                    Guide::Dot(z) => dot_guidance(g, key, z, self.config.scale_guidance)?,
                };
                (parts.update.apply(g, s_prime, hl)?, Some(w))
            }
            _ => (s_prime, None),
        };
        let (ctx, attention) = self.net.source_att.attend(g, &enc.source, state)?;
        let p_vocab = self.net.head.vocab_distribution(g, state, ctx)?;
        let p_gen = self.net.head.p_gen(g, ctx, state, input)?;
        let probs = match p_gen {
            Some(pg) => pointer_mix(g, p_vocab, attention, pg, &enc.source_ids, enc.extended_size)?,
            None => p_vocab,
        };
        Ok(StepOutput {
            probs,
            p_vocab,
            p_gen,
            attention,
            guide_weights,
            state,
        })
    }

    /// One decoding step from `state` given the previous token (any id of
    /// the output space; copied OOV ids are fed back as UNK).
    pub fn step(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: &DecoderState,
        prev: usize,
        drop: &mut Dropout,
    ) -> Result<(StepOutput, DecoderState)> {
        let prev = if prev < self.vocab.len() { prev } else { crate::corpus::UNK };
        let input = self.expand_input(g, enc, prev, drop)?;
        match (state, &self.net.decoder) {
            (DecoderState::Lstm { hidden, cell }, DecoderNet::Lstm(dec)) => {
                let (s_prime, c) = dec.cell.step(g, input, *hidden, *cell)?;
                let key = match self.config.guidance_key {
                    GuidanceKey::Cell => c,
                    GuidanceKey::Hidden => s_prime,
                };
                let out = self.head(g, enc, s_prime, key, input)?;
                let next = DecoderState::Lstm {
                    hidden: out.state,
                    cell: c,
                };
                Ok((out, next))
            }
            (DecoderState::Transformer { inputs }, DecoderNet::Transformer(dec)) => {
                let projected = match &dec.in_proj {
                    Some(lin) => lin.forward(g, input)?,
                    None => input,
                };
                let mut inputs = inputs.clone();
                inputs.push(projected);
                let (pen, fin) = self.transformer_stack(g, enc, dec, &inputs)?;
                let t = inputs.len() - 1;
                let c_t = g.row(pen, t)?;
                let s_t = g.row(fin, t)?;
                let out = self.head(g, enc, s_t, c_t, input)?;
                Ok((out, DecoderState::Transformer { inputs }))
            }
            _ => Err(CoreError::Config("decoder state does not match the model variant".into())),
        }
    }

    fn transformer_stack(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        dec: &TransformerDecoder,
        inputs: &[Var],
    ) -> Result<(Var, Var)> {
        let x = g.concat_rows(inputs)?;
        let x = add_positions(g, x, dec.dim)?;
        dec.forward(g, x, enc.source.states)
    }

    /// Teacher-forced step outputs for every target position.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        p: &Prepared,
        drop: &mut Dropout,
    ) -> Result<(Encoded, Vec<StepOutput>)> {
        let enc = self.encode(g, p, drop)?;
        let mut outs = Vec::with_capacity(p.inputs.len());
        match &self.net.decoder {
            DecoderNet::Lstm(_) => {
                let mut state = enc.init.clone();
                for &prev in &p.inputs {
                    let (out, next) = self.step(g, &enc, &state, prev, drop)?;
                    outs.push(out);
                    state = next;
                }
            }
            DecoderNet::Transformer(dec) => {
                let mut raw = Vec::with_capacity(p.inputs.len());
                let mut projected = Vec::with_capacity(p.inputs.len());
                for &prev in &p.inputs {
                    let input = self.expand_input(g, &enc, prev, drop)?;
                    raw.push(input);
                    projected.push(match &dec.in_proj {
                        Some(lin) => lin.forward(g, input)?,
                        None => input,
                    });
                }
                let (pen, fin) = self.transformer_stack(g, &enc, dec, &projected)?;
                for (t, &input) in raw.iter().enumerate() {
                    let c_t = g.row(pen, t)?;
                    let s_t = g.row(fin, t)?;
                    outs.push(self.head(g, &enc, s_t, c_t, input)?);
                }
            }
        }
        Ok((enc, outs))
    }

    /// Summed negative log-likelihood of the gold impression and its token
    /// count (EOS included).
    pub fn nll(&self, g: &mut Graph, p: &Prepared, drop: &mut Dropout) -> Result<(Var, usize)> {
        let (_, outs) = self.teacher_forced(g, p, drop)?;
        let terms = outs
            .iter()
            .zip(&p.targets)
            .map(|(o, &t)| {
                let width = g.shape(o.probs).cols;
                if t >= width {
                    return Err(CoreError::Data(format!(
                        "gold id {t} outside an output space of {width}"
                    )));
                }
                Ok(g.neg_log_pick(o.probs, t, PROB_FLOOR)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let all = g.concat_cols(&terms)?;
        Ok((g.sum(all), terms.len()))
    }

    /// Summed NLL, token count and parameter gradients for one report.
    pub fn example_gradients(&self, p: &Prepared, drop: &mut Dropout) -> Result<(f64, usize, Gradients)> {
        let mut g = Graph::new(&self.params);
        let (loss, n) = self.nll(&mut g, p, drop)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item()?, n, grads))
    }

    /// Mean token NLL over `examples` without dropout.
    pub fn mean_nll(&self, examples: &[Prepared]) -> Result<f64> {
        let (mut total, mut count) = (0.0, 0);
        for p in examples {
            let mut g = Graph::new(&self.params);
            let (loss, n) = self.nll(&mut g, p, &mut Dropout::off())?;
            total += g.value(loss).item()?;
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }

    pub fn dropout(&self, seed: u64) -> Dropout {
        Dropout::new(self.config.dropout, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn to_checkpoint(&self, optimizer: Option<graphsum_numerics::Adam>) -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("vocab".to_string(), self.vocab.to_text().into_bytes());
        metadata.insert(
            "config".to_string(),
            serde_json::to_vec(&self.config).expect("config serializes"),
        );
        Checkpoint {
            config_hash: self.config_hash(),
            metadata,
            params: self.params.clone(),
            optimizer,
        }
    }

    /// Rebuild a model from a checkpoint. With `expected`, the checkpoint
    /// must have been written for exactly that architecture.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        let meta = |k: &str| {
            ck.metadata
                .get(k)
                .ok_or_else(|| CoreError::Data(format!("checkpoint lacks `{k}` metadata")))
        };
        let vocab_text = String::from_utf8(meta("vocab")?.clone())
            .map_err(|_| CoreError::Data("checkpoint vocabulary is not UTF-8".into()))?;
        let stored: ModelConfig = serde_json::from_slice(meta("config")?)
            .map_err(|e| CoreError::Data(format!("checkpoint config: {e}")))?;
        let config = expected.cloned().unwrap_or(stored);
        let hash = config.hash(&vocab_text);
        if hash != ck.config_hash {
            return Err(NumericsError::ConfigMismatch {
                expected: hash,
                found: ck.config_hash.clone(),
            }
            .into());
        }
        let vocab = Vocabulary::from_text(&vocab_text)?;
        let mut model = Model::new(config, vocab, 0)?;
        model.params.load_values(&ck.params)?;
        Ok(model)
    }
}
