//! Greedy and beam decoding, and ROUGE evaluation with length buckets.

use std::fmt::Write as _;

use graphsum_numerics::Graph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Report, BOS, EOS};
use crate::error::{CoreError, Result};
use crate::layers::Dropout;
use crate::model::{DecoderState, Model, Prepared};
use crate::rouge::{score, RougeTriple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    /// Beam search ranked by log-probability per emitted token.
    Beam(usize),
}

impl Default for DecodeMode {
    fn default() -> Self {
        DecodeMode::Greedy
    }
}

pub const DEFAULT_BEAM: usize = 4;

/// Decode output-space ids; EOS is not included.
pub fn generate_ids(model: &Model, p: &Prepared, max_len: usize, mode: DecodeMode) -> Result<Vec<usize>> {
    match mode {
        DecodeMode::Greedy => greedy(model, p, max_len),
        DecodeMode::Beam(width) => beam(model, p, max_len, width.max(1)),
    }
}

pub fn generate(model: &Model, p: &Prepared, max_len: usize, mode: DecodeMode) -> Result<Vec<String>> {
    let ids = generate_ids(model, p, max_len, mode)?;
    Ok(p.copy.decode(&ids, &model.vocab))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn greedy(model: &Model, p: &Prepared, max_len: usize) -> Result<Vec<usize>> {
    let mut g = Graph::new(&model.params);
    let mut off = Dropout::off();
    let enc = model.encode(&mut g, p, &mut off)?;
    let mut state = enc.init.clone();
    let mut prev = BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (step, next) = model.step(&mut g, &enc, &state, prev, &mut off)?;
        let id = argmax(g.value(step.probs).data());
        if id == EOS {
            break;
        }
        out.push(id);
        prev = id;
        state = next;
    }
    Ok(out)
}

struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
    state: DecoderState,
}

fn beam(model: &Model, p: &Prepared, max_len: usize, width: usize) -> Result<Vec<usize>> {
    let mut g = Graph::new(&model.params);
    let mut off = Dropout::off();
    let enc = model.encode(&mut g, p, &mut off)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state: enc.init.clone(),
    }];
    let mut finished: Vec<(Vec<usize>, f64, usize)> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (b, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (step, next) = model.step(&mut g, &enc, &h.state, prev, &mut off)?;
            let probs = g.value(step.probs).data();
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            for &w in order.iter().take(width) {
                candidates.push((h.logp + probs[w].ln(), b, w));
            }
            next_states.push(next);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut new_live = Vec::new();
        for (logp, b, w) in candidates.into_iter().take(width) {
            let mut tokens = live[b].tokens.clone();
            if w == EOS {
                let len = tokens.len() + 1;
                finished.push((tokens, logp, len));
            } else {
                tokens.push(w);
                new_live.push(Hyp {
                    tokens,
                    logp,
                    state: next_states[b].clone(),
                });
            }
        }
        live = new_live;
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }
    if finished.is_empty() {
        finished = live
            .into_iter()
            .map(|h| {
                let len = h.tokens.len().max(1);
                (h.tokens, h.logp, len)
            })
            .collect();
    }
    let best = finished
        .into_iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| (a.1 / a.2 as f64).total_cmp(&(b.1 / b.2 as f64)).then(j.cmp(i)))
        .map(|(_, f)| f.0)
        .unwrap_or_default();
    Ok(best)
}

/// Reference-length intervals; the last is closed.
pub const LENGTH_BUCKETS: [(usize, usize); 5] = [(15, 20), (20, 25), (25, 30), (30, 35), (35, 40)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanF1 {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

impl MeanF1 {
    /// Macro-average of per-pair F1; `None` for no pairs.
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a RougeTriple>) -> Option<Self> {
        let mut sum = MeanF1::default();
        let mut n = 0usize;
        for s in scores {
            sum.rouge1 += s.rouge1.f1;
            sum.rouge2 += s.rouge2.f1;
            sum.rouge_l += s.rouge_l.f1;
            n += 1;
        }
        (n > 0).then(|| MeanF1 {
            rouge1: sum.rouge1 / n as f64,
            rouge2: sum.rouge2 / n as f64,
            rouge_l: sum.rouge_l / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub interval: String,
    pub count: usize,
    /// Absent when no reference falls in the interval.
    pub scores: Option<MeanF1>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub scores: RougeTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub overall: MeanF1,
    pub buckets: Vec<BucketReport>,
}

fn in_bucket(len: usize, (lo, hi): (usize, usize), last: bool) -> bool {
    len >= lo && (len < hi || (last && len == hi))
}

fn interval_label((lo, hi): (usize, usize), last: bool) -> String {
    if last {
        format!("[{lo},{hi}]")
    } else {
        format!("[{lo},{hi})")
    }
}

/// Aggregate scored pairs into overall and per-bucket means.
pub fn summarize(pairs: &[PairResult]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(CoreError::Data("evaluation over an empty corpus".into()));
    }
    let n = LENGTH_BUCKETS.len();
    let buckets = LENGTH_BUCKETS
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let members: Vec<&RougeTriple> = pairs
                .iter()
                .filter(|p| in_bucket(p.reference.split_whitespace().count(), b, i + 1 == n))
                .map(|p| &p.scores)
                .collect();
            BucketReport {
                interval: interval_label(b, i + 1 == n),
                count: members.len(),
                scores: MeanF1::of(members),
            }
        })
        .collect();
    Ok(MetricReport {
        count: pairs.len(),
        overall: MeanF1::of(pairs.iter().map(|p| &p.scores)).expect("non-empty"),
        buckets,
    })
}

pub fn score_pair(id: &str, reference: &[String], hypothesis: &[String]) -> PairResult {
    PairResult {
        id: id.to_string(),
        reference: reference.join(" "),
        hypothesis: hypothesis.join(" "),
        scores: score(reference, hypothesis),
    }
}

/// Decode every report (in parallel over `threads` workers) and score it
/// against its impression. Results keep corpus order.
pub fn evaluate(
    model: &Model,
    reports: &[Report],
    max_len: usize,
    mode: DecodeMode,
    threads: usize,
) -> Result<(MetricReport, Vec<PairResult>)> {
    if reports.is_empty() {
        return Err(CoreError::Data("evaluation over an empty corpus".into()));
    }
    let run = |r: &Report| -> Result<PairResult> {
        let p = model.prepare(r)?;
        let hyp = generate(model, &p, max_len, mode)?;
        Ok(score_pair(&r.id, &r.impression, &hyp))
    };
    let pairs: Vec<PairResult> = if threads <= 1 {
        reports.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
        pool.install(|| reports.par_iter().map(run).collect::<Result<_>>())?
    };
    Ok((summarize(&pairs)?, pairs))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned plain-text table (F1 x 100).
    pub fn to_table(&self) -> String {
        let mut rows = vec![[
            "subset".to_string(),
            "n".to_string(),
            "R-1".to_string(),
            "R-2".to_string(),
            "R-L".to_string(),
        ]];
        let fmt = |label: String, n: usize, s: Option<MeanF1>| match s {
            Some(s) => [label, n.to_string(), pct(s.rouge1), pct(s.rouge2), pct(s.rouge_l)],
            None => [label, n.to_string(), "-".into(), "-".into(), "-".into()],
        };
        rows.push(fmt("all".into(), self.count, Some(self.overall)));
        for b in &self.buckets {
            rows.push(fmt(format!("len {}", b.interval), b.count, b.scores));
        }
        render_table(&rows)
    }

    /// `interval,count,rouge1` per bucket; absent buckets have an empty score.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("interval,count,rouge1\n");
        for b in &self.buckets {
            let r1 = b.scores.map(|m| format!("{:.6}", m.rouge1)).unwrap_or_default();
            let _ = writeln!(s, "\"{}\",{},{}", b.interval, b.count, r1);
        }
        s
    }
}

/// Left-align the first column, right-align the rest.
pub fn render_table<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (N - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
