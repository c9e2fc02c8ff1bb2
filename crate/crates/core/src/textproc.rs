//! Query tokenization, language tagging and the token vocabulary.
//!
//! Token ids live in one combined space: `0..vocab_size` are in-vocabulary
//! tokens and `vocab_size..vocab_size + num_buckets` are hash buckets shared by
//! every out-of-vocabulary token regardless of language.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: u64 = 6;
pub const DEFAULT_NUM_BUCKETS: usize = 1_000_000;

/// Whether tokens carry a `<lang>:` prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangMode {
    Aware,
    Unaware,
}

impl fmt::Display for LangMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LangMode::Aware => "aware",
            LangMode::Unaware => "unaware",
        })
    }
}

impl FromStr for LangMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aware" => Ok(LangMode::Aware),
            "unaware" => Ok(LangMode::Unaware),
            other => Err(Error::Config(format!("unknown language mode {other:?}"))),
        }
    }
}

/// Index into the combined vocabulary + bucket id space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub usize);

impl TokenId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Splits a raw query into tokens.
///
/// Anything that is not a Unicode letter or digit acts as a separator. The
/// surface forms are lowercased and, in [`LangMode::Aware`], prefixed with
/// `lang:`.
pub fn tokenize(raw_query: &str, lang: &str, mode: LangMode) -> Vec<String> {
    let cleaned: String = raw_query
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|surface| {
            let surface = surface.to_lowercase();
            match mode {
                LangMode::Aware => format!("{lang}:{surface}"),
                LangMode::Unaware => surface,
            }
        })
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    num_buckets: usize,
    min_count: u64,
    mode: LangMode,
}

impl Vocabulary {
    /// Counts every token occurrence in `stream` and keeps those seen at least
    /// `min_count` times, ordered by descending count then lexicographically.
    pub fn build<I, S>(stream: I, min_count: u64, num_buckets: usize, mode: LangMode) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if num_buckets < 1 {
            return Err(Error::Config("num_buckets must be at least 1".into()));
        }

        let mut counts: HashMap<String, u64> = HashMap::new();
        for token in stream {
            let token = token.as_ref();
            if let Some(c) = counts.get_mut(token) {
                *c += 1;
            } else {
                counts.insert(token.to_owned(), 1);
            }
        }

        let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        Ok(Self::from_parts(
            kept.into_iter().map(|(t, _)| t).collect(),
            num_buckets,
            min_count,
            mode,
        ))
    }

    fn from_parts(tokens: Vec<String>, num_buckets: usize, min_count: u64, mode: LangMode) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            num_buckets,
            min_count,
            mode,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    /// `vocab_size + num_buckets`: the number of embedding rows required.
    pub fn num_ids(&self) -> usize {
        self.tokens.len() + self.num_buckets
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn mode(&self) -> LangMode {
        self.mode
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.0).map(String::as_str)
    }

    /// In-vocabulary id, without falling back to a hash bucket.
    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied().map(TokenId)
    }

    pub fn lookup(&self, token: &str) -> TokenId {
        self.get(token)
            .unwrap_or_else(|| TokenId(self.vocab_size() + (fnv1a64(token.as_bytes()) % self.num_buckets as u64) as usize))
    }

    pub fn is_bucket(&self, id: TokenId) -> bool {
        id.0 >= self.vocab_size()
    }

    /// Writes the header line `"<vocab_size> <num_buckets> <mode>"` followed by
    /// one token per line in id order.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.vocab_size(), self.num_buckets, self.mode)?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();

        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "missing header")),
        };
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 {
            return Err(Error::parse(path, 1, "header must be \"<vocab_size> <num_buckets> <mode>\""));
        }
        let vocab_size: usize = parts[0]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad vocab size"))?;
        let num_buckets: usize = parts[1]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad bucket count"))?;
        let mode: LangMode = parts[2]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad language mode"))?;

        let mut tokens = Vec::with_capacity(vocab_size);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                return Err(Error::parse(path, i + 2, "empty token"));
            }
            tokens.push(line);
        }
        if tokens.len() != vocab_size {
            return Err(Error::parse(
                path,
                tokens.len() + 1,
                format!("expected {vocab_size} tokens, found {}", tokens.len()),
            ));
        }
        // The on-disk form does not record min_count.
        Ok(Self::from_parts(tokens, num_buckets, 1, mode))
    }

    /// FNV-1a of the serialized vocabulary; used to tie checkpoints to the
    /// vocabulary they were trained with.
    pub fn content_hash(&self) -> u64 {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        fnv1a64(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repeat(token: &str, n: usize) -> impl Iterator<Item = String> + '_ {
        std::iter::repeat_n(token.to_string(), n)
    }

    #[test]
    fn tokenize_tags_language() {
        assert_eq!(tokenize("back  pain", "en", LangMode::Aware), vec!["en:back", "en:pain"]);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", "en", LangMode::Aware).is_empty());
        assert!(tokenize(" -_!? ", "en", LangMode::Aware).is_empty());
    }

    #[test]
    fn tokenize_separators_unaware() {
        assert_eq!(
            tokenize("cat-with big_ears", "en", LangMode::Unaware),
            vec!["cat", "with", "big", "ears"]
        );
    }

    #[test]
    fn tokenize_lowercases_and_keeps_non_latin_letters() {
        assert_eq!(
            tokenize("  Straße,東京 ÉTÉ2 ", "de", LangMode::Aware),
            vec!["de:straße", "de:東京", "de:été2"]
        );
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn min_count_boundary() {
        let stream = repeat("en:a", 6).chain(repeat("en:b", 5));
        let v = Vocabulary::build(stream, 6, 10, LangMode::Aware).unwrap();
        assert_eq!(v.tokens(), &["en:a".to_string()]);
        assert_eq!(v.vocab_size(), 1);
    }

    #[test]
    fn empty_stream() {
        let v = Vocabulary::build(Vec::<String>::new(), 6, 10, LangMode::Aware).unwrap();
        assert_eq!(v.vocab_size(), 0);
        assert_eq!(v.num_ids(), 10);
    }

    #[test]
    fn ties_break_lexicographically() {
        let stream = repeat("en:y", 7).chain(repeat("en:x", 7));
        let v = Vocabulary::build(stream, 6, 10, LangMode::Aware).unwrap();
        assert_eq!(v.lookup("en:x"), TokenId(0));
        assert_eq!(v.lookup("en:y"), TokenId(1));
    }

    #[test]
    fn frequency_order() {
        let stream = repeat("b", 3).chain(repeat("a", 1)).chain(repeat("c", 9));
        let v = Vocabulary::build(stream, 1, 4, LangMode::Unaware).unwrap();
        assert_eq!(v.tokens(), &["c", "b", "a"]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Vocabulary::build(Vec::<String>::new(), 0, 10, LangMode::Aware).is_err());
        assert!(Vocabulary::build(Vec::<String>::new(), 1, 0, LangMode::Aware).is_err());
    }

    #[test]
    fn in_vocab_lookup_is_identity() {
        let tokens: Vec<String> = (0..30).map(|i| format!("en:t{i:02}")).collect();
        let stream = tokens.iter().flat_map(|t| repeat(t, 6).collect::<Vec<_>>());
        let v = Vocabulary::build(stream, 6, 5, LangMode::Aware).unwrap();
        assert_eq!(v.lookup("en:t17"), TokenId(17));
    }

    #[test]
    fn oov_lookup_hashes_into_bucket_region() {
        // fnv1a64("en:zzzunseen") = 0xce848a206f0240be, which is 590 mod 1000
        // (computed with an independent reference implementation).
        let tokens: Vec<String> = (0..100).map(|i| format!("en:w{i:03}")).collect();
        let v = Vocabulary::build(tokens.iter(), 1, 1000, LangMode::Aware).unwrap();
        assert_eq!(v.vocab_size(), 100);
        assert_eq!(v.lookup("en:zzzunseen"), TokenId(690));
        assert!(v.is_bucket(v.lookup("en:zzzunseen")));
        assert_eq!(v.get("en:zzzunseen"), None);
    }

    #[test]
    fn aware_and_unaware_mode_separation() {
        let mut stream = tokenize("pain", "en", LangMode::Aware);
        stream.extend(tokenize("pain", "fr", LangMode::Aware));
        let aware = Vocabulary::build(stream, 1, 10, LangMode::Aware).unwrap();
        assert_ne!(aware.lookup("en:pain"), aware.lookup("fr:pain"));

        let en = tokenize("pain", "en", LangMode::Unaware);
        let fr = tokenize("pain", "fr", LangMode::Unaware);
        assert_eq!(en, fr);
        let unaware = Vocabulary::build(en.iter().chain(fr.iter()), 1, 10, LangMode::Unaware).unwrap();
        assert_eq!(unaware.vocab_size(), 1);
        assert_eq!(unaware.lookup(&en[0]), unaware.lookup(&fr[0]));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["en:a", "en:b", "en:a"], 1, 7, LangMode::Aware).unwrap();
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "2 7 aware\nen:a\nen:b\n");
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.num_buckets(), 7);
        assert_eq!(back.mode(), LangMode::Aware);
        assert_eq!(back.content_hash(), v.content_hash());
    }

    #[test]
    fn load_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "3 7 aware\nen:a\n").unwrap();
        assert!(matches!(Vocabulary::load(&path), Err(Error::Parse { .. })));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_and_determinism(words in prop::collection::vec("[a-e]{1,3}", 0..200), min_count in 1u64..4, buckets in 1usize..50) {
                let a = Vocabulary::build(words.iter(), min_count, buckets, LangMode::Unaware).unwrap();
                let b = Vocabulary::build(words.iter(), min_count, buckets, LangMode::Unaware).unwrap();
                prop_assert_eq!(&a, &b);
                for (i, t) in a.tokens().iter().enumerate() {
                    prop_assert_eq!(a.lookup(t), TokenId(i));
                    let n = words.iter().filter(|w| *w == t).count() as u64;
                    prop_assert!(n >= min_count);
                }
            }

            #[test]
            fn oov_never_below_vocab(words in prop::collection::vec("[a-c]{1,2}", 0..50), probe in "[x-z]{1,6}", buckets in 1usize..100) {
                let v = Vocabulary::build(words.iter(), 1, buckets, LangMode::Unaware).unwrap();
                let id = v.lookup(&probe);
                prop_assert!(id.0 >= v.vocab_size());
                prop_assert!(id.0 < v.num_ids());
            }
        }
    }
}
