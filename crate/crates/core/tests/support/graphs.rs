//! Brute-force edge enumeration straight from the construction rules.

use std::collections::BTreeSet;

use graphsum_core::corpus::Report;
use graphsum_core::wordgraph::{DependencyArc, EdgeType, EdgeTypeSet, EntityCategory, EntitySpan, WordGraph};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type WordEdge = (String, String, EdgeType);

pub fn word_pair(a: &str, b: &str, kind: EdgeType) -> Option<WordEdge> {
    match a.cmp(b) {
        std::cmp::Ordering::Less => Some((a.to_string(), b.to_string(), kind)),
        std::cmp::Ordering::Greater => Some((b.to_string(), a.to_string(), kind)),
        std::cmp::Ordering::Equal => None,
    }
}

pub fn graph_word_edges(g: &WordGraph) -> BTreeSet<WordEdge> {
    g.typed_edges
        .iter()
        .map(|e| word_pair(&g.words()[e.u], &g.words()[e.v], e.kind).expect("no self-loops"))
        .collect()
}

pub fn base_of(c: EntityCategory) -> Option<EntityCategory> {
    use EntityCategory::*;
    match c {
        ObservationModifier | Uncertainty => Some(Observation),
        AnatomyModifier => Some(Anatomy),
        _ => None,
    }
}

/// Edge sets straight from the construction rules, by enumerating token
/// positions rather than nodes.
pub fn brute_force(r: &Report, types: EdgeTypeSet) -> (BTreeSet<String>, BTreeSet<WordEdge>) {
    let tok = &r.findings;
    let covered: BTreeSet<usize> = r.entities.iter().flat_map(|e| e.start..e.end).collect();
    let nodes = covered.iter().map(|&p| tok[p].clone()).collect();
    let mut edges = BTreeSet::new();
    let mut link = |p: usize, q: usize, kind: EdgeType| {
        if covered.contains(&p) && covered.contains(&q) {
            edges.extend(word_pair(&tok[p], &tok[q], kind));
        }
    };
    if types.contains(EdgeType::I) {
        for e in &r.entities {
            for p in e.start..e.end {
                if p + 1 < e.end {
                    link(p, p + 1, EdgeType::I);
                }
            }
        }
    }
    if types.contains(EdgeType::II) {
        for (i, m) in r.entities.iter().enumerate() {
            let Some(base) = base_of(m.category) else { continue };
            let explicit = m.target.filter(|&t| r.entities[t].category == base);
            let gap = |s: &EntitySpan| {
                (m.start..m.end)
                    .flat_map(|p| (s.start..s.end).map(move |q| p.abs_diff(q)))
                    .min()
                    .unwrap()
            };
            let target = explicit.or_else(|| {
                let mut best: Option<(usize, usize, usize)> = None;
                for (j, s) in r.entities.iter().enumerate() {
                    if j == i || s.category != base {
                        continue;
                    }
                    let key = (gap(s), s.start, j);
                    if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                        best = Some(key);
                    }
                }
                best.map(|b| b.2)
            });
            if let Some(t) = target {
                let t = &r.entities[t];
                for p in m.start..m.end {
                    for q in t.start..t.end {
                        link(p, q, EdgeType::II);
                    }
                }
            }
        }
    }
    if types.contains(EdgeType::III) {
        for a in &r.deps {
            if let Some(h) = a.head {
                link(h, a.dep, EdgeType::III);
            }
        }
    }
    (nodes, edges)
}

pub fn random_report(rng: &mut ChaCha8Rng, id: usize) -> Report {
    const WORDS: &[&str] = &["left", "effusion", "small", "lung", "opacity", "no", "base", "the"];
    use EntityCategory::*;
    let n = rng.gen_range(1..=12);
    let findings: Vec<String> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
    let mut entities = Vec::new();
    for _ in 0..rng.gen_range(0..=5) {
        let start = rng.gen_range(0..n);
        let end = rng.gen_range(start + 1..=(start + 3).min(n));
        let category = EntityCategory::ALL[rng.gen_range(0..5)];
        entities.push(EntitySpan::new(start, end, category));
    }
    let count = entities.len();
    for i in 0..count {
        if matches!(entities[i].category, ObservationModifier | Uncertainty | AnatomyModifier)
            && count > 1
            && rng.gen_bool(0.6)
        {
            let t = (i + rng.gen_range(1..count)) % count;
            entities[i].target = Some(t);
        }
    }
    let deps = (0..n)
        .map(|d| {
            let head = if rng.gen_bool(0.2) {
                None
            } else {
                Some((d + rng.gen_range(1..n.max(2))) % n).filter(|&h| h != d)
            };
            DependencyArc {
                head,
                dep: d,
                label: "dep".into(),
            }
        })
        .collect();
    Report {
        id: format!("r{id}"),
        findings,
        impression: vec!["x".into(), "y".into()],
        entities,
        deps,
    }
}

