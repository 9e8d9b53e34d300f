//! Token vocabulary with reserved framing ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BOS_ID, EOS_ID, PAD_ID, RESERVED_TOKENS, UNK_ID};

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bijective token/id mapping. Ids 0..=3 are reserved for BOS, EOS, PAD and
/// UNK; real tokens follow ordered by (count descending, token ascending),
/// so builds are deterministic regardless of corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut v = Self {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
            counts: Vec::new(),
        };
        for (token, id) in [
            (BOS_TOKEN, BOS_ID),
            (EOS_TOKEN, EOS_ID),
            (PAD_TOKEN, PAD_ID),
            (UNK_TOKEN, UNK_ID),
        ] {
            debug_assert_eq!(v.id_to_token.len(), id);
            v.id_to_token.push(token.to_string());
            v.token_to_id.insert(token.to_string(), id);
            v.counts.push(0);
        }
        v
    }

    /// Counts tokens over the corpus and keeps those reaching `min_count`.
    pub fn build<'a>(
        sequences: impl IntoIterator<Item = &'a Vec<String>>,
        min_count: u64,
    ) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for seq in sequences {
            for token in seq {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut v = Self::with_reserved();
        for (token, count) in kept {
            let id = v.id_to_token.len();
            v.id_to_token.push(token.to_string());
            v.token_to_id.insert(token.to_string(), id);
            v.counts.push(count);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a known token.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Id of a token, falling back to UNK.
    pub fn lookup(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                op: "vocabulary token",
                index: id,
                size: self.id_to_token.len(),
            })
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| self.token(id).map(str::to_string))
            .collect()
    }

    /// Writes one `token<TAB>id<TAB>count` line per entry, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (id, (token, count)) in self.id_to_token.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{token}\t{id}\t{count}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut v = Self {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
            counts: Vec::new(),
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            let (Some(token), Some(id), Some(count)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!(
                    "vocabulary line {} has fewer than 3 fields",
                    i + 1
                )));
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("vocabulary line {}: bad id", i + 1)))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::Format(format!("vocabulary line {}: bad count", i + 1)))?;
            if id != v.id_to_token.len() {
                return Err(Error::Format(format!(
                    "vocabulary ids must be contiguous, saw {id} at line {}",
                    i + 1
                )));
            }
            if v.token_to_id.insert(token.to_string(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {token}")));
            }
            v.id_to_token.push(token.to_string());
            v.counts.push(count);
        }
        let reserved = Self::with_reserved();
        if v.id_to_token.len() < RESERVED_TOKENS
            || v.id_to_token[..RESERVED_TOKENS] != reserved.id_to_token[..]
        {
            return Err(Error::Format(
                "vocabulary is missing the reserved token header".into(),
            ));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn reserved_ids_come_first_and_match_the_model_constants() {
        let v = Vocabulary::build(corpus(&["a b"]).iter(), 1);
        assert_eq!(v.token(BOS_ID).unwrap(), BOS_TOKEN);
        assert_eq!(v.token(EOS_ID).unwrap(), EOS_TOKEN);
        assert_eq!(v.token(PAD_ID).unwrap(), PAD_TOKEN);
        assert_eq!(v.token(UNK_ID).unwrap(), UNK_TOKEN);
        assert_eq!(v.len(), RESERVED_TOKENS + 2);
    }

    #[test]
    fn ids_order_by_count_then_token() {
        let v = Vocabulary::build(corpus(&["b b c a a a", "c b"]).iter(), 1);
        // a: 3, b: 3, c: 2; ties broken alphabetically.
        assert_eq!(v.id("a").unwrap(), RESERVED_TOKENS);
        assert_eq!(v.id("b").unwrap(), RESERVED_TOKENS + 1);
        assert_eq!(v.id("c").unwrap(), RESERVED_TOKENS + 2);
    }

    #[test]
    fn min_count_threshold_sends_rare_tokens_to_unk() {
        let c = corpus(&["a b", "a"]);
        let keep_all = Vocabulary::build(c.iter(), 1);
        assert!(keep_all.id("b").is_some());

        let thresholded = Vocabulary::build(c.iter(), 2);
        assert!(thresholded.id("a").is_some());
        assert_eq!(thresholded.id("b"), None);
        assert_eq!(thresholded.lookup("b"), UNK_ID);
        assert_eq!(thresholded.len(), RESERVED_TOKENS + 1);
    }

    #[test]
    fn builds_are_invariant_to_corpus_order() {
        let a = corpus(&["x y z", "y z", "w"]);
        let b = corpus(&["w", "y z", "x y z"]);
        assert_eq!(
            Vocabulary::build(a.iter(), 1),
            Vocabulary::build(b.iter(), 1)
        );
    }

    #[test]
    fn save_load_roundtrip_preserves_the_mapping() {
        let v = Vocabulary::build(corpus(&["hello world hello", "shop"]).iter(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, v);
    }

    #[test]
    fn load_rejects_gapped_ids_and_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let gapped = dir.path().join("gapped.tsv");
        std::fs::write(&gapped, "<bos>\t0\t0\n<eos>\t2\t0\n").unwrap();
        assert!(Vocabulary::load(&gapped).is_err());

        let headerless = dir.path().join("headerless.tsv");
        std::fs::write(&headerless, "hello\t0\t3\n").unwrap();
        assert!(Vocabulary::load(&headerless)
            .unwrap_err()
            .to_string()
            .contains("reserved"));
    }
}
