//! Adapter for ASAP-shaped TSV files.
//!
//! Expected header: `essay_id  prompt_id  essay  <trait>...`, where trait
//! columns may use full names ("Word Choice") or short ids ("wc"). Essay
//! words are lowercased, split on non-alphanumerics and hashed (FNV-1a) into
//! the body-token buckets of the vocabulary.

use std::io::Read;
use std::path::Path;

use super::{EssayRecord, Schema, TraitId, TraitScoreVector};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

fn fnv1a(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn tokenize_body(text: &str, vocab: &Vocabulary, max_tokens: usize) -> Vec<u32> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(max_tokens)
        .map(|w| vocab.body((fnv1a(&w.to_lowercase()) % vocab.body_size() as u64) as usize))
        .collect()
}

pub fn ingest_external_corpus(
    path: impl AsRef<Path>,
    schema: &Schema,
    vocab: &Vocabulary,
    max_body_tokens: usize,
) -> Result<Vec<EssayRecord>> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema, vocab, max_body_tokens)
}

pub fn ingest_reader<R: Read>(
    input: R,
    schema: &Schema,
    vocab: &Vocabulary,
    max_body_tokens: usize,
) -> Result<Vec<EssayRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
    };
    let missing = |c: &str| Error::Parse { row: 1, message: format!("header lacks a {c} column") };
    let id_col = find(&["essay_id"]).ok_or_else(|| missing("essay_id"))?;
    let prompt_col = find(&["prompt_id", "essay_set"]).ok_or_else(|| missing("prompt_id"))?;
    let text_col = find(&["essay", "essay_text", "text"]).ok_or_else(|| missing("essay"))?;
    let known = schema.traits();
    let trait_cols: Vec<(usize, TraitId)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![id_col, prompt_col, text_col].contains(i))
        .filter_map(|(i, h)| {
            let t = TraitId::from_label(h);
            if known.contains(&t) {
                Some((i, t))
            } else {
                log::warn!("ignoring unrecognised column {h:?}");
                None
            }
        })
        .collect();

    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse { row, message };
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let essay_id: u64 = field(id_col)
            .parse()
            .map_err(|_| perr(format!("bad essay_id {:?}", field(id_col))))?;
        let prompt_id: u32 = field(prompt_col)
            .parse()
            .map_err(|_| perr(format!("bad prompt_id {:?}", field(prompt_col))))?;
        let prompt = schema
            .prompt(prompt_id)
            .ok_or_else(|| perr(format!("prompt {prompt_id} not in schema")))?;

        let mut gold = TraitScoreVector::new();
        for t in &known {
            gold.set(t.clone(), None);
        }
        for (col, t) in &trait_cols {
            let cell = field(*col);
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| perr(format!("bad score {cell:?} for trait {t}")))?;
            if value.fract() != 0.0 {
                return Err(perr(format!("non-integer score {cell} for trait {t}")));
            }
            gold.set(t.clone(), Some(value as i64));
        }
        gold.validate(prompt)
            .map_err(|e| Error::Validation(format!("row {row}: {e}")))?;

        let mut tokens = vocab.prefix(prompt_id)?;
        tokens.extend(tokenize_body(field(text_col), vocab, max_body_tokens));
        let latent_quality = match (gold.get(&TraitId::overall()), prompt.overall_range()) {
            (Some(s), Some(r)) => (s - r.lo) as f64 / r.span(),
            _ => 0.5,
        };
        out.push(EssayRecord {
            essay_id,
            prompt_id,
            tokens,
            gold,
            latent_quality,
            fold: None,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("no essay rows".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_prompt_schema;
    use crate::vocab::build_vocab;

    const HEADER: &str = "essay_id\tprompt_id\tessay\tOverall\tContent\tPA\tLanguage\tNarrativity\tOrganization\tConventions\tStyle\n";

    fn ingest(body: &str) -> Result<Vec<EssayRecord>> {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 16);
        ingest_reader(format!("{HEADER}{body}").as_bytes(), &schema, &vocab, 64)
    }

    #[test]
    fn maps_rows_to_records() {
        let recs = ingest("11\t3\tThe cat sat.\t2\t1\t2\t3\t2\t\t\t\n").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.essay_id, 11);
        assert_eq!(r.gold.get(&TraitId::new("pa")), Some(2));
        assert_eq!(r.gold.get(&TraitId::new("voice")), None);
        assert_eq!(r.tokens.len(), 8 + 3);
        assert!((r.latent_quality - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_validation_error() {
        let err = ingest("11\t3\ttext\t2\t1\t9\t3\t2\t\t\t\n").unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("row 2")));
    }

    #[test]
    fn missing_style_cell_becomes_nan() {
        let recs = ingest("5\t7\tOnce upon a time\t20\t4\t\t\t\t3\t3\t\n").unwrap();
        assert_eq!(recs[0].gold.get(&TraitId::new("style")), None);
        assert_eq!(recs[0].gold.get(&TraitId::new("org")), Some(3));
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = ingest("1\t3\tok\t1\t1\t1\t1\t1\t\t\t\nx\t3\tbad\t1\t1\t1\t1\t1\t\t\t\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err:?}");
        let err = ingest("1\t3\tok\t1.5\t1\t1\t1\t1\t\t\t\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
    }

    #[test]
    fn hashing_is_stable() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 16);
        assert_eq!(tokenize_body("Hello hello", &vocab, 10)[0], tokenize_body("hello", &vocab, 10)[0]);
        assert_eq!(tokenize_body("a b c d e", &vocab, 3).len(), 3);
    }
}
