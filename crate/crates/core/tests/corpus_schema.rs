use graphsum_core::corpus::{
    filter_corpus, load_jsonl, parse_record, to_record, tokenize, write_jsonl, CopyEncoding, Vocabulary,
    MAX_FINDINGS_TOKENS, MAX_IMPRESSION_TOKENS, UNK,
};
use graphsum_core::synthetic::{generate, worked_example};
use graphsum_core::wordgraph::EntityCategory;
use graphsum_core::CoreError;
use proptest::prelude::*;

const LINE: &str = r#"{"id":"r1","findings":"Moderate left pleural effusion. Heart size 1.5 cm.","impression":"Left effusion.","entities":[{"start":0,"end":1,"type":"observation_modifier","target":2},{"start":1,"end":2,"type":"anatomy_modifier","target":3},{"start":3,"end":4,"type":"observation"},{"start":2,"end":3,"type":"anatomy"}],"deps":[{"head":-1,"dep":3,"label":"root"},{"head":3,"dep":0,"label":"amod"}]}"#;

#[test]
fn parses_a_full_record() {
    let r = parse_record(LINE).unwrap();
    assert_eq!(r.id, "r1");
    assert_eq!(
        r.findings,
        ["moderate", "left", "pleural", "effusion", ".", "heart", "size", "1.5", "cm", "."]
    );
    assert_eq!(r.impression, ["left", "effusion", "."]);
    assert_eq!(r.entities[0].category, EntityCategory::ObservationModifier);
    assert_eq!(r.entities[0].target, Some(2));
    assert_eq!(r.entities[3].target, None);
    assert_eq!(r.deps[0].head, None);
    assert_eq!(r.deps[1].head, Some(3));
}

#[test]
fn record_roundtrip_preserves_reports() {
    for r in generate(30, 8).into_iter().chain([worked_example()]) {
        assert_eq!(parse_record(&to_record(&r)).unwrap(), r);
    }
}

#[test]
fn file_roundtrip_preserves_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let reports = generate(12, 2);
    write_jsonl(&path, &reports).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), reports);
}

#[test]
fn unknown_fields_are_rejected() {
    let line = LINE.replacen(r#""id":"r1","#, r#""id":"r1","extra":1,"#, 1);
    assert!(matches!(parse_record(&line), Err(CoreError::Data(_))));
    let line = LINE.replacen(r#""type":"anatomy"}"#, r#""type":"anatomy","score":0.5}"#, 1);
    assert!(parse_record(&line).is_err());
    let line = LINE.replacen("observation_modifier", "disease", 1);
    assert!(parse_record(&line).is_err());
}

#[test]
fn out_of_range_annotations_are_rejected() {
    for (from, to) in [
        (r#""start":3,"end":4"#, r#""start":3,"end":40"#),
        (r#""start":3,"end":4"#, r#""start":4,"end":4"#),
        (r#""target":2"#, r#""target":9"#),
        (r#""target":2"#, r#""target":0"#),
        (r#""head":3,"dep":0"#, r#""head":30,"dep":0"#),
        (r#""head":3,"dep":0"#, r#""head":0,"dep":0"#),
        (r#""head":3,"dep":0"#, r#""head":-2,"dep":0"#),
    ] {
        let line = LINE.replacen(from, to, 1);
        assert_ne!(line, LINE);
        assert!(matches!(parse_record(&line), Err(CoreError::Data(_))), "{to}");
    }
}

#[test]
fn errors_name_the_file_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, format!("{LINE}\n\n{{\"id\":\"x\",\"oops\":true}}\n")).unwrap();
    let err = load_jsonl(&path).unwrap_err().to_string();
    assert!(err.contains("bad.jsonl:3:"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_jsonl("/nonexistent/corpus.jsonl"), Err(CoreError::Io { .. })));
}

#[test]
fn missing_or_blank_sections_are_filtered_out() {
    let long = "a b c d e f g h i j";
    let rec = |f: Option<&str>, i: Option<&str>| {
        let mut v = serde_json::json!({ "id": "x" });
        if let Some(f) = f {
            v["findings"] = f.into();
        }
        if let Some(i) = i {
            v["impression"] = i.into();
        }
        parse_record(&v.to_string()).unwrap()
    };
    let kept = filter_corpus(vec![
        rec(Some(long), Some("no change")),
        rec(None, Some("no change")),
        rec(Some(long), None),
        rec(Some(long), Some("   ")),
        rec(Some("a b c d e f g h i"), Some("no change")),
        rec(Some(long), Some("stable")),
    ]);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].impression, ["no", "change"]);
}

#[test]
fn loading_truncates_long_sections_and_their_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("long.jsonl");
    let findings = vec!["w"; MAX_FINDINGS_TOKENS + 20].join(" ");
    let impression = vec!["v"; MAX_IMPRESSION_TOKENS + 5].join(" ");
    let cut = MAX_FINDINGS_TOKENS;
    let v = serde_json::json!({
        "id": "long",
        "findings": findings,
        "impression": impression,
        "entities": [
            {"start": 0, "end": 1, "type": "observation"},
            {"start": cut + 2, "end": cut + 3, "type": "anatomy"},
            {"start": cut - 1, "end": cut + 1, "type": "observation_modifier", "target": 0},
            {"start": cut + 4, "end": cut + 5, "type": "anatomy_modifier", "target": 1},
        ],
        "deps": [{"head": 0, "dep": 1, "label": "x"}, {"head": cut + 1, "dep": 0, "label": "y"}],
    });
    std::fs::write(&path, v.to_string()).unwrap();
    let r = load_jsonl(&path).unwrap().remove(0);
    assert_eq!(r.findings.len(), MAX_FINDINGS_TOKENS);
    assert_eq!(r.impression.len(), MAX_IMPRESSION_TOKENS);
    assert_eq!(r.entities.len(), 2);
    assert_eq!((r.entities[1].start, r.entities[1].end, r.entities[1].target), (cut - 1, cut, Some(0)));
    assert_eq!(r.deps.len(), 1);
    r.validate().unwrap();
}

#[test]
fn tokenizer_splits_punctuation_but_keeps_numbers() {
    assert_eq!(tokenize("No PTX, 2.5 cm (stable)."), ["no", "ptx", ",", "2.5", "cm", "(", "stable", ")", "."]);
    assert_eq!(tokenize("1,200 ml."), ["1,200", "ml", "."]);
    assert!(tokenize("  \n ").is_empty());
}

#[test]
fn vocabulary_text_roundtrip_and_min_count() {
    let data = generate(20, 3);
    let v = Vocabulary::build(&data, 3).unwrap();
    assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    let all = Vocabulary::build(&data, 1).unwrap();
    assert!(v.len() < all.len());
    assert!(v.learned().iter().all(|t| all.contains(t)));
}

#[test]
fn copy_encoding_gives_each_oov_word_one_slot() {
    let vocab = Vocabulary::build(&[worked_example()], 1).unwrap();
    let src: Vec<String> = ["tube", "zzz", "yyy", "zzz"].map(String::from).to_vec();
    let c = CopyEncoding::new(&src, &vocab);
    let n = vocab.len();
    assert_eq!(c.source_ids, [vocab.id("tube"), n, n + 1, n]);
    assert_eq!(c.extended_size, n + 2);
    assert_eq!(c.oov_tokens, ["zzz", "yyy"]);
    assert_eq!(c.source_base_ids(), [vocab.id("tube"), UNK, UNK, UNK]);
}

proptest! {
    #[test]
    fn tokens_never_contain_whitespace(s in "[ a-zA-Z0-9.,;:()\\-\n]{0,60}") {
        for t in tokenize(&s) {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().any(char::is_whitespace));
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }

    #[test]
    fn tokenizing_joined_tokens_is_stable(s in "[ a-zA-Z0-9.,;()]{0,60}") {
        let once = tokenize(&s);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }
}
