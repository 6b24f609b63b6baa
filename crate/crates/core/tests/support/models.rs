//! Random small models and the checks run against them.

use graphsum_core::config::{GuidanceKey, UpdateRule};
use graphsum_core::corpus::{Report, Vocabulary};
use graphsum_core::layers::Dropout;
use graphsum_core::model::Prepared;
use graphsum_core::numerics::Graph;
use graphsum_core::synthetic;
use graphsum_core::wordgraph::EdgeTypeSet;
use graphsum_core::{Gnn, Model, ModelConfig, Variant};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::plain_pg::PlainPointerGenerator;

/// Adds uniform noise of a random scale to every parameter so biases are
/// non-zero and distributions are far from uniform.
pub fn perturb(model: &mut Model, rng: &mut ChaCha8Rng) {
    let scale = rng.gen_range(0.05..1.5);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.value_mut(id).data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// A short corpus and a vocabulary that leaves some findings words out, so
/// the copy path sees OOV tokens.
fn corpus(rng: &mut ChaCha8Rng) -> (Vec<Report>, Vocabulary) {
    let reports = synthetic::generate(6, rng.gen());
    let vocab = Vocabulary::build(&reports, rng.gen_range(1..=2)).expect("vocabulary");
    (reports, vocab)
}

/// Graph-off, copy-on LSTM with random small widths and perturbed weights.
pub fn baseline_case(seed: u64) -> (Model, Prepared) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (reports, vocab) = corpus(&mut rng);
    let enc_hidden = rng.gen_range(1..=4);
    let cfg = ModelConfig {
        gnn: Gnn::Off,
        copy: true,
        emb_dim: rng.gen_range(1..=5),
        enc_hidden,
        enc_layers: rng.gen_range(1..=3),
        dec_hidden: 2 * enc_hidden,
        dropout: 0.0,
        ..ModelConfig::lstm()
    };
    let mut model = Model::new(cfg, vocab, rng.gen()).expect("model");
    perturb(&mut model, &mut rng);
    let report = reports.choose(&mut rng).expect("non-empty corpus");
    let p = model.prepare(report).expect("prepare");
    (model, p)
}

/// Largest absolute difference between the model's teacher-forced output
/// distributions and the plain-loop oracle's.
pub fn baseline_max_diff(model: &Model, p: &Prepared) -> f64 {
    let mut g = Graph::new(&model.params);
    let (_, outs) = model.teacher_forced(&mut g, p, &mut Dropout::off()).expect("forward");
    let oracle = PlainPointerGenerator::new(&model.params, model.config.enc_layers, model.config.copy);
    let want = oracle.distributions(&p.source, &p.copy.source_ids, p.copy.extended_size, &p.inputs);
    assert_eq!(outs.len(), want.len());
    let mut worst: f64 = 0.0;
    for (o, w) in outs.iter().zip(&want) {
        let got = g.value(o.probs).data();
        assert_eq!(got.len(), w.len());
        for (a, b) in got.iter().zip(w) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Any architecture: variant, graph encoder, copy, edge subset, update rule
/// and guidance options all drawn at random; widths stay tiny.
pub fn random_case(seed: u64) -> (Model, Prepared) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (reports, vocab) = corpus(&mut rng);
    let variant = if rng.gen_bool(0.5) { Variant::Lstm } else { Variant::Transformer };
    let gnn = *[Gnn::Off, Gnn::Gat, Gnn::Gcn].choose(&mut rng).unwrap();
    let mut edges = EdgeTypeSet::nonempty_subsets();
    edges.push(EdgeTypeSet::none());
    let base = ModelConfig {
        variant,
        gnn,
        copy: rng.gen_bool(0.5),
        edge_types: *edges.choose(&mut rng).unwrap(),
        guidance_key: if rng.gen_bool(0.5) { GuidanceKey::Cell } else { GuidanceKey::Hidden },
        update_rule: if rng.gen_bool(0.5) { UpdateRule::Gated } else { UpdateRule::Product },
        scale_guidance: rng.gen_bool(0.5),
        gnn_layers: rng.gen_range(1..=2),
        ..ModelConfig::preset(variant)
    };
    let cfg = match variant {
        Variant::Lstm => {
            let h = rng.gen_range(1..=3);
            ModelConfig {
                emb_dim: rng.gen_range(1..=4),
                enc_hidden: h,
                enc_layers: rng.gen_range(1..=2),
                dec_hidden: 2 * h,
                graph_hidden: rng.gen_range(1..=4),
                dropout: 0.0,
                ..base
            }
        }
        Variant::Transformer => {
            let heads = rng.gen_range(1..=2);
            let d = heads * rng.gen_range(1..=3);
            ModelConfig {
                emb_dim: d,
                d_model: d,
                heads,
                ff_dim: rng.gen_range(1..=6),
                enc_layers: rng.gen_range(1..=2),
                dec_layers: 2,
                graph_hidden: d,
                dropout: 0.0,
                ..base
            }
        }
    };
    let mut model = Model::new(cfg, vocab, rng.gen()).expect("model");
    perturb(&mut model, &mut rng);
    let report = reports.choose(&mut rng).expect("non-empty corpus");
    let p = model.prepare(report).expect("prepare");
    (model, p)
}

/// Worst deviation from 1 of the total mass of every attention (source and
/// graph) and of every output distribution, plus whether any entry was
/// negative or non-finite.
#[derive(Clone, Copy, Debug, Default)]
pub struct MassReport {
    pub attention: f64,
    pub output: f64,
    pub invalid_entry: bool,
}

pub fn mass_report(model: &Model, p: &Prepared) -> MassReport {
    let mut g = Graph::new(&model.params);
    let (enc, outs) = model.teacher_forced(&mut g, p, &mut Dropout::off()).expect("forward");
    let mut r = MassReport::default();
    let rows = |g: &Graph, v, worst: &mut f64, invalid: &mut bool| {
        let t = g.value(v);
        for i in 0..t.rows() {
            let row = t.row_slice(i);
            *invalid |= row.iter().any(|x| !x.is_finite() || *x < 0.0);
            *worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    };
    if let Some(w) = enc.background_weights {
        rows(&g, w, &mut r.attention, &mut r.invalid_entry);
    }
    for o in &outs {
        rows(&g, o.attention, &mut r.attention, &mut r.invalid_entry);
        if let Some(w) = o.guide_weights {
            rows(&g, w, &mut r.attention, &mut r.invalid_entry);
        }
        rows(&g, o.p_vocab, &mut r.output, &mut r.invalid_entry);
        rows(&g, o.probs, &mut r.output, &mut r.invalid_entry);
    }
    r
}
