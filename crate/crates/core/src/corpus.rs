//! Findings/impression pairs: JSONL loading, tokenization, filtering,
//! vocabulary and copy-aware encoding.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::wordgraph::{DependencyArc, EntitySpan};

pub const MAX_FINDINGS_TOKENS: usize = 200;
pub const MAX_IMPRESSION_TOKENS: usize = 50;
pub const MIN_FINDINGS_TOKENS: usize = 10;
pub const MIN_IMPRESSION_TOKENS: usize = 2;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Lowercases and splits on whitespace, then splits punctuation off into
/// standalone tokens. A `.` or `,` between two digits stays inside the number.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let numeric_sep = matches!(c, '.' | ',')
                && i > 0
                && chars[i - 1].is_ascii_digit()
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if c.is_alphanumeric() || numeric_sep {
                current.push(c);
            } else {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub id: String,
    pub findings: Vec<String>,
    pub impression: Vec<String>,
    pub entities: Vec<EntitySpan>,
    pub deps: Vec<DependencyArc>,
}

impl Report {
    /// Both sections present.
    pub fn is_complete(&self) -> bool {
        !self.findings.is_empty() && !self.impression.is_empty()
    }

    /// Check span, target and arc indices against the findings length.
    pub fn validate(&self) -> Result<()> {
        let n = self.findings.len();
        let bad = |msg: String| Err(CoreError::Data(format!("report `{}`: {msg}", self.id)));
        for (i, e) in self.entities.iter().enumerate() {
            if e.start >= e.end || e.end > n {
                return bad(format!("entity {i} span [{}, {}) invalid for {n} tokens", e.start, e.end));
            }
            if let Some(t) = e.target {
                if t >= self.entities.len() || t == i {
                    return bad(format!("entity {i} has invalid target {t}"));
                }
            }
        }
        for (i, a) in self.deps.iter().enumerate() {
            if a.dep >= n || a.head.is_some_and(|h| h >= n) {
                return bad(format!("dependency arc {i} out of range for {n} tokens"));
            }
            if a.head == Some(a.dep) {
                return bad(format!("dependency arc {i} is a self-arc"));
            }
        }
        Ok(())
    }

    /// Cut sections to the batching limits, clipping or dropping annotations
    /// that fall past the findings cut.
    pub fn truncate(&mut self, max_findings: usize, max_impression: usize) {
        self.impression.truncate(max_impression);
        if self.findings.len() <= max_findings {
            return;
        }
        self.findings.truncate(max_findings);
        let mut remap = vec![None; self.entities.len()];
        let mut kept = Vec::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.start < max_findings {
                remap[i] = Some(kept.len());
                let mut e = e.clone();
                e.end = e.end.min(max_findings);
                kept.push(e);
            }
        }
        for e in &mut kept {
            e.target = e.target.and_then(|t| remap[t]);
        }
        self.entities = kept;
        self.deps
            .retain(|a| a.dep < max_findings && a.head.is_none_or(|h| h < max_findings));
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    id: String,
    #[serde(default)]
    findings: Option<String>,
    #[serde(default)]
    impression: Option<String>,
    #[serde(default)]
    entities: Vec<EntitySpan>,
    #[serde(default)]
    deps: Vec<ArcJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcJson {
    head: i64,
    dep: usize,
    label: String,
}

impl TryFrom<ArcJson> for DependencyArc {
    type Error = CoreError;

    fn try_from(a: ArcJson) -> Result<Self> {
        let head = match a.head {
            -1 => None,
            h if h >= 0 => Some(h as usize),
            h => return Err(CoreError::Data(format!("dependency head {h} is not a token index"))),
        };
        Ok(DependencyArc {
            head,
            dep: a.dep,
            label: a.label,
        })
    }
}

/// Parse one JSONL record. Sections are tokenized; missing sections become
/// empty token lists (and fail [`Report::is_complete`]).
pub fn parse_record(line: &str) -> Result<Report> {
    let rec: RecordJson =
        serde_json::from_str(line).map_err(|e| CoreError::Data(format!("bad record: {e}")))?;
    let report = Report {
        findings: rec.findings.as_deref().map(tokenize).unwrap_or_default(),
        impression: rec.impression.as_deref().map(tokenize).unwrap_or_default(),
        entities: rec.entities,
        deps: rec
            .deps
            .into_iter()
            .map(DependencyArc::try_from)
            .collect::<Result<_>>()?,
        id: rec.id,
    };
    report.validate()?;
    Ok(report)
}

/// Serialize a tokenized report back into the corpus line format.
pub fn to_record(report: &Report) -> String {
    let rec = RecordJson {
        id: report.id.clone(),
        findings: Some(report.findings.join(" ")),
        impression: Some(report.impression.join(" ")),
        entities: report.entities.clone(),
        deps: report
            .deps
            .iter()
            .map(|a| ArcJson {
                head: a.head.map_or(-1, |h| h as i64),
                dep: a.dep,
                label: a.label.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("record serializes")
}

/// Read a corpus file, validate every record and truncate to the batching
/// limits. Blank lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Report>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut reports = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut r = parse_record(&line).map_err(|e| match e {
            CoreError::Data(msg) => {
                CoreError::Data(format!("{}:{}: {msg}", path.display(), lineno + 1))
            }
            other => other,
        })?;
        r.truncate(MAX_FINDINGS_TOKENS, MAX_IMPRESSION_TOKENS);
        reports.push(r);
    }
    Ok(reports)
}

pub fn write_jsonl(path: impl AsRef<Path>, reports: &[Report]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in reports {
        out.push_str(&to_record(r));
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| CoreError::io(path, e))
}

pub fn keep_report(r: &Report) -> bool {
    r.is_complete()
        && r.findings.len() >= MIN_FINDINGS_TOKENS
        && r.impression.len() >= MIN_IMPRESSION_TOKENS
}

/// Drop incomplete reports, findings under 10 tokens and impressions under 2.
pub fn filter_corpus(reports: Vec<Report>) -> Vec<Report> {
    reports.into_iter().filter(keep_report).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    /// Every token from both sections seen at least `min_count` times, most
    /// frequent first, ties broken lexicographically.
    pub fn build(reports: &[Report], min_count: usize) -> Result<Self> {
        if reports.is_empty() {
            return Err(CoreError::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in reports {
            for t in r.findings.iter().chain(&r.impression) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut learned: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && !RESERVED.contains(&t))
            .collect();
        learned.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(Self::from_tokens(
            learned.into_iter().map(|(t, _)| t.to_string()),
            min_count,
        ))
    }

    fn from_tokens(learned: impl IntoIterator<Item = String>, min_count: usize) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(learned)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Learned tokens, without the reserved entries.
    pub fn learned(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// One token per line, preceded by a `min_count` header.
    pub fn to_text(&self) -> String {
        let mut s = format!("min_count {}\n", self.min_count);
        for t in self.learned() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let min_count = lines
            .next()
            .and_then(|h| h.strip_prefix("min_count "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| CoreError::Data("vocabulary header missing".into()))?;
        let vocab = Self::from_tokens(lines.map(String::from), min_count);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(CoreError::Data("vocabulary has duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

/// A report's ids over its extended vocabulary: base vocabulary plus one slot
/// per distinct out-of-vocabulary findings token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyEncoding {
    pub source_ids: Vec<usize>,
    pub oov_tokens: Vec<String>,
    pub extended_size: usize,
    base_size: usize,
}

impl CopyEncoding {
    pub fn new(source: &[String], vocab: &Vocabulary) -> Self {
        let mut oov_tokens: Vec<String> = Vec::new();
        let source_ids = source
            .iter()
            .map(|t| {
                vocab.get(t).unwrap_or_else(|| {
                    let k = match oov_tokens.iter().position(|o| o == t) {
                        Some(k) => k,
                        None => {
                            oov_tokens.push(t.clone());
                            oov_tokens.len() - 1
                        }
                    };
                    vocab.len() + k
                })
            })
            .collect();
        Self {
            source_ids,
            extended_size: vocab.len() + oov_tokens.len(),
            oov_tokens,
            base_size: vocab.len(),
        }
    }

    /// Target ids: vocabulary id, else the extended id of a copied source
    /// token, else UNK.
    pub fn target_ids(&self, target: &[String], vocab: &Vocabulary) -> Vec<usize> {
        target
            .iter()
            .map(|t| {
                vocab.get(t).unwrap_or_else(|| {
                    self.oov_tokens
                        .iter()
                        .position(|o| o == t)
                        .map_or(UNK, |k| self.base_size + k)
                })
            })
            .collect()
    }

    /// Map an extended id back into the base vocabulary (OOV slots → UNK).
    pub fn base_id(&self, id: usize) -> usize {
        if id < self.base_size {
            id
        } else {
            UNK
        }
    }

    pub fn source_base_ids(&self) -> Vec<usize> {
        self.source_ids.iter().map(|&i| self.base_id(i)).collect()
    }

    pub fn token<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id < self.base_size {
            vocab.token(id).unwrap_or(RESERVED[UNK])
        } else {
            self.oov_tokens
                .get(id - self.base_size)
                .map_or(RESERVED[UNK], String::as_str)
        }
    }

    pub fn decode(&self, ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
        ids.iter().map(|&i| self.token(i, vocab).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordgraph::EntityCategory;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pair(findings: &str, impression: &str) -> Report {
        Report {
            id: "r".into(),
            findings: toks(findings),
            impression: toks(impression),
            entities: vec![],
            deps: vec![],
        }
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("Moderate left pleural effusion."),
            ["moderate", "left", "pleural", "effusion", "."]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("3.9 cm"), ["3.9", "cm"]);
        assert_eq!(tokenize("(T11), no"), ["(", "t11", ")", ",", "no"]);
        assert_eq!(tokenize("size 2.5."), ["size", "2.5", "."]);
    }

    #[test]
    fn filter_boundaries() {
        let ten = "a b c d e f g h i j";
        let nine = "a b c d e f g h i";
        assert_eq!(filter_corpus(vec![pair(nine, "x y")]).len(), 0);
        assert_eq!(filter_corpus(vec![pair(ten, "x")]).len(), 0);
        assert_eq!(filter_corpus(vec![pair(ten, "x y")]).len(), 1);
        assert_eq!(filter_corpus(vec![pair(ten, "")]).len(), 0);
    }

    #[test]
    fn filter_is_idempotent() {
        let c = vec![pair("a b c d e f g h i j", "x y"), pair("a", "b c")];
        let once = filter_corpus(c);
        assert_eq!(filter_corpus(once.clone()), once);
    }

    #[test]
    fn vocab_min_count() {
        let c = vec![pair("a b", ""), pair("a", "")];
        let v1 = Vocabulary::build(&c, 1).unwrap();
        assert_eq!(v1.learned(), ["a", "b"]);
        let v2 = Vocabulary::build(&c, 2).unwrap();
        assert_eq!(v2.learned(), ["a"]);
        assert_eq!(v2.len(), 5);
        assert!(Vocabulary::build(&[], 1).is_err());
    }

    #[test]
    fn vocab_includes_impression_only_tokens() {
        let v = Vocabulary::build(&[pair("a", "zz")], 1).unwrap();
        assert!(v.contains("zz"));
    }

    #[test]
    fn vocab_text_roundtrip_keeps_ids() {
        let v = Vocabulary::build(&[pair("b a c a", "d")], 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("nope"), UNK);
        assert_eq!(back.token(UNK), Some("<unk>"));
    }

    #[test]
    fn reserved_tokens_do_not_collide() {
        let v = Vocabulary::build(&[pair("<unk> <pad> a", "b")], 1).unwrap();
        assert_eq!(v.learned(), ["a", "b"]);
    }

    #[test]
    fn copy_encoding_counts_distinct_oovs() {
        let v = Vocabulary::build(&[pair("a b", "c")], 1).unwrap();
        let all_in = CopyEncoding::new(&toks("a b c"), &v);
        assert_eq!(all_in.extended_size, v.len());
        assert!(all_in.oov_tokens.is_empty());

        let enc = CopyEncoding::new(&toks("a x b y x"), &v);
        assert_eq!(enc.extended_size, v.len() + 2);
        assert_eq!(enc.source_ids[1], enc.source_ids[4]);
        assert_eq!(enc.source_ids[1], v.len());
        assert_eq!(enc.source_ids[3], v.len() + 1);
        assert_eq!(enc.decode(&enc.source_ids, &v), toks("a x b y x"));

        let t = enc.target_ids(&toks("y a z"), &v);
        assert_eq!(t, vec![v.len() + 1, v.id("a"), UNK]);
        assert_eq!(enc.source_base_ids()[1], UNK);
    }

    #[test]
    fn record_roundtrip_and_validation() {
        let line = r#"{"id":"1","findings":"Left effusion.","impression":"Effusion.","entities":[{"start":0,"end":1,"type":"anatomy_modifier","target":1},{"start":1,"end":2,"type":"observation"}],"deps":[{"head":1,"dep":0,"label":"amod"},{"head":-1,"dep":1,"label":"root"}]}"#;
        let r = parse_record(line).unwrap();
        assert_eq!(r.findings, ["left", "effusion", "."]);
        assert_eq!(r.entities[0].category, EntityCategory::AnatomyModifier);
        assert_eq!(r.deps[1].head, None);
        assert_eq!(parse_record(&to_record(&r)).unwrap(), r);

        let bad_span = r#"{"id":"1","findings":"a b","impression":"c d","entities":[{"start":1,"end":5,"type":"anatomy"}],"deps":[]}"#;
        assert!(matches!(parse_record(bad_span), Err(CoreError::Data(_))));
        let bad_type = r#"{"id":"1","findings":"a b","impression":"c d","entities":[{"start":0,"end":1,"type":"device"}],"deps":[]}"#;
        assert!(parse_record(bad_type).is_err());
        let missing = r#"{"id":"1","findings":"a b c"}"#;
        assert!(!parse_record(missing).unwrap().is_complete());
    }

    #[test]
    fn truncation_clips_annotations() {
        let mut r = pair("a b c d e", "x y z");
        r.entities = vec![
            EntitySpan::new(0, 1, EntityCategory::AnatomyModifier).with_target(2),
            EntitySpan::new(3, 5, EntityCategory::Observation),
            EntitySpan::new(2, 4, EntityCategory::Anatomy),
        ];
        r.deps = vec![
            DependencyArc { head: Some(4), dep: 0, label: "x".into() },
            DependencyArc { head: Some(1), dep: 2, label: "x".into() },
        ];
        r.truncate(3, 2);
        assert_eq!(r.findings.len(), 3);
        assert_eq!(r.impression.len(), 2);
        assert_eq!(r.entities.len(), 2);
        assert_eq!(r.entities[0].target, Some(1));
        assert_eq!(r.entities[1].end, 3);
        assert_eq!(r.deps.len(), 1);
        r.validate().unwrap();
    }
}
