//! Seeded generator of annotated findings/impression pairs.
//!
//! Findings are a shuffled mix of abnormal, normal and filler sentences.
//! Abnormal sentences carry fully annotated entities (with modifier targets)
//! and dependency arcs; the impression lists the abnormal findings in order,
//! so the graph's entity words are exactly the words the summary needs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Report;
use crate::wordgraph::{DependencyArc, EntityCategory, EntitySpan};

const SIDES: &[&str] = &["left", "right", "bilateral"];
const SEVERITIES: &[&str] = &["small", "moderate", "large", "mild", "trace"];
const OBSERVATIONS: &[&[&str]] = &[
    &["pleural", "effusion"],
    &["pneumothorax"],
    &["consolidation"],
    &["opacity"],
    &["atelectasis"],
    &["edema"],
];
const REGIONS: &[&str] = &["base", "apex", "lung", "hilum"];
const HEDGES: &[&str] = &["possible", "likely", "probable"];
const NORMAL: &[(&str, &str)] = &[
    ("heart", "normal"),
    ("mediastinum", "unremarkable"),
    ("aorta", "tortuous"),
];
const FILLER: &[&str] = &[
    "pa and lateral views of the chest were obtained .",
    "the osseous structures are intact .",
    "no acute bony abnormality is seen .",
    "comparison is made to the prior study .",
];

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    entities: Vec<EntitySpan>,
    deps: Vec<DependencyArc>,
}

impl Builder {
    fn push(&mut self, word: &str) -> usize {
        self.tokens.push(word.to_string());
        self.tokens.len() - 1
    }

    fn words(&mut self, words: &[&str]) -> (usize, usize) {
        let start = self.tokens.len();
        for w in words {
            self.push(w);
        }
        (start, self.tokens.len())
    }

    fn entity(&mut self, (start, end): (usize, usize), category: EntityCategory) -> usize {
        self.entities.push(EntitySpan::new(start, end, category));
        self.entities.len() - 1
    }

    fn target(&mut self, modifier: usize, target: usize) {
        self.entities[modifier].target = Some(target);
    }

    fn arc(&mut self, head: Option<usize>, dep: usize, label: &str) {
        self.deps.push(DependencyArc {
            head,
            dep,
            label: label.to_string(),
        });
    }

    /// Chain a multi-word span: the last word heads the others.
    fn compound(&mut self, (start, end): (usize, usize)) -> usize {
        let head = end - 1;
        for p in start..head {
            self.arc(Some(head), p, "compound");
        }
        head
    }
}

/// "there is a {severity} {side} {observation} ." → "{severity} {side} {observation}"
fn severity_sentence(b: &mut Builder, rng: &mut ChaCha8Rng) -> Vec<String> {
    let sev = *SEVERITIES.choose(rng).expect("non-empty");
    let side = *SIDES.choose(rng).expect("non-empty");
    let obs = *OBSERVATIONS.choose(rng).expect("non-empty");
    let there = b.push("there");
    let is = b.push("is");
    let a = b.push("a");
    let s = b.words(&[sev]);
    let d = b.words(&[side]);
    let o = b.words(obs);
    let dot = b.push(".");
    let e_sev = b.entity(s, EntityCategory::ObservationModifier);
    b.entity(d, EntityCategory::AnatomyModifier);
    let e_obs = b.entity(o, EntityCategory::Observation);
    b.target(e_sev, e_obs);
    let head = b.compound(o);
    b.arc(None, is, "root");
    b.arc(Some(is), there, "expl");
    b.arc(Some(is), head, "nsubj");
    b.arc(Some(head), a, "det");
    b.arc(Some(head), s.0, "amod");
    b.arc(Some(head), d.0, "amod");
    b.arc(Some(is), dot, "punct");
    [sev, side].iter().chain(obs).map(|w| w.to_string()).collect()
}

/// "{hedge} {observation} in the {side} {region} ." → "{hedge} {side} {region} {observation}"
fn hedged_sentence(b: &mut Builder, rng: &mut ChaCha8Rng) -> Vec<String> {
    let hedge = *HEDGES.choose(rng).expect("non-empty");
    let obs = *OBSERVATIONS.choose(rng).expect("non-empty");
    let side = *SIDES.choose(rng).expect("non-empty");
    let region = *REGIONS.choose(rng).expect("non-empty");
    let h = b.words(&[hedge]);
    let o = b.words(obs);
    let inn = b.push("in");
    let the = b.push("the");
    let d = b.words(&[side]);
    let r = b.words(&[region]);
    let dot = b.push(".");
    let e_h = b.entity(h, EntityCategory::Uncertainty);
    let e_o = b.entity(o, EntityCategory::Observation);
    let e_d = b.entity(d, EntityCategory::AnatomyModifier);
    let e_r = b.entity(r, EntityCategory::Anatomy);
    b.target(e_h, e_o);
    b.target(e_d, e_r);
    let head = b.compound(o);
    b.arc(None, head, "root");
    b.arc(Some(head), h.0, "amod");
    b.arc(Some(head), r.0, "nmod");
    b.arc(Some(r.0), inn, "case");
    b.arc(Some(r.0), the, "det");
    b.arc(Some(r.0), d.0, "amod");
    b.arc(Some(head), dot, "punct");
    [hedge, side, region]
        .iter()
        .chain(obs)
        .map(|w| w.to_string())
        .collect()
}

/// "the {anatomy} is {state} ." (not summarized)
fn normal_sentence(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let (anat, state) = *NORMAL.choose(rng).expect("non-empty");
    let the = b.push("the");
    let a = b.words(&[anat]);
    let is = b.push("is");
    let s = b.words(&[state]);
    let dot = b.push(".");
    b.entity(a, EntityCategory::Anatomy);
    b.entity(s, EntityCategory::Observation);
    b.arc(None, s.0, "root");
    b.arc(Some(s.0), a.0, "nsubj");
    b.arc(Some(a.0), the, "det");
    b.arc(Some(s.0), is, "cop");
    b.arc(Some(s.0), dot, "punct");
}

fn filler_sentence(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let words: Vec<&str> = FILLER.choose(rng).expect("non-empty").split(' ').collect();
    let (start, end) = b.words(&words);
    // flat chain: every word depends on the first
    b.arc(None, start, "root");
    for p in start + 1..end {
        b.arc(Some(start), p, "dep");
    }
}

/// `n` reports; identical seeds give identical corpora. Every report has
/// at least 10 findings tokens and 2 impression tokens.
pub fn generate(n: usize, seed: u64) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut b = Builder::default();
            let abnormal = rng.gen_range(0..=2);
            let mut kinds: Vec<u8> = (0..abnormal).map(|_| rng.gen_range(0..2)).collect();
            kinds.push(2);
            if rng.gen_bool(0.5) || abnormal == 0 {
                kinds.push(3);
            }
            kinds.shuffle(&mut rng);
            let mut parts: Vec<Vec<String>> = Vec::new();
            for k in kinds {
                match k {
                    0 => parts.push(severity_sentence(&mut b, &mut rng)),
                    1 => parts.push(hedged_sentence(&mut b, &mut rng)),
                    2 => normal_sentence(&mut b, &mut rng),
                    _ => filler_sentence(&mut b, &mut rng),
                }
            }
            let impression = if parts.is_empty() {
                ["no", "acute", "cardiopulmonary", "process", "."]
                    .map(String::from)
                    .to_vec()
            } else {
                let mut out = Vec::new();
                for (j, p) in parts.into_iter().enumerate() {
                    if j > 0 {
                        out.push(",".to_string());
                    }
                    out.extend(p);
                }
                out.push(".".to_string());
                out
            };
            Report {
                id: format!("synth-{seed}-{i:04}"),
                findings: b.tokens,
                impression,
                entities: b.entities,
                deps: b.deps,
            }
        })
        .collect()
}

/// The worked example: a device entity, a modified effusion that appears
/// twice, and a dependency arc from "left" to "effusion".
pub fn worked_example() -> Report {
    let text = "endotracheal tube is in standard position . there is a moderate left pleural effusion . the effusion is unchanged .";
    let findings: Vec<String> = text.split(' ').map(String::from).collect();
    use EntityCategory::*;
    let entities = vec![
        EntitySpan::new(0, 2, Observation),
        EntitySpan::new(10, 11, ObservationModifier).with_target(4),
        EntitySpan::new(11, 12, AnatomyModifier).with_target(3),
        EntitySpan::new(12, 13, Anatomy),
        EntitySpan::new(13, 14, Observation),
        EntitySpan::new(16, 17, Observation),
        EntitySpan::new(18, 19, ObservationModifier).with_target(5),
    ];
    let arcs: &[(i64, usize, &str)] = &[
        (5, 1, "nsubj"),
        (1, 0, "compound"),
        (5, 2, "cop"),
        (5, 3, "case"),
        (5, 4, "amod"),
        (-1, 5, "root"),
        (5, 6, "punct"),
        (8, 7, "expl"),
        (-1, 8, "root"),
        (13, 9, "det"),
        (13, 10, "amod"),
        (8, 11, "nsubj"),
        (13, 12, "compound"),
        (11, 13, "nmod"),
        (8, 14, "punct"),
        (16, 15, "det"),
        (18, 16, "nsubj"),
        (18, 17, "cop"),
        (-1, 18, "root"),
        (18, 19, "punct"),
    ];
    let deps = arcs
        .iter()
        .map(|&(h, d, l)| DependencyArc {
            head: (h >= 0).then_some(h as usize),
            dep: d,
            label: l.to_string(),
        })
        .collect();
    Report {
        id: "worked-example".into(),
        findings,
        impression: "moderate left pleural effusion , unchanged .".split(' ').map(String::from).collect(),
        entities,
        deps,
    }
}
