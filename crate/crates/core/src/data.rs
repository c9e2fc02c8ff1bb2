//! Corpus files, the multilingual image filter, synthetic corpora and the
//! conversion of raw triples into training examples.
//!
//! File formats (UTF-8, LF, `.` as decimal separator):
//!
//! * `triples.tsv`: `weight \t lang \t query \t image_id`
//! * `features.tsv`: `image_id \t f1,f2,...`
//! * `lexicon.tsv`: `word1 \t word2 \t concept_id`

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::ImageRef;
use crate::textproc::{tokenize, LangMode, Vocabulary};
use crate::training::Example;

#[derive(Clone, Debug, PartialEq)]
pub struct TripleRecord {
    pub weight: f64,
    pub lang: String,
    pub query: String,
    pub image_id: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn numbered_lines<'a, R: BufRead + 'a>(reader: R, path: &'a Path) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(path, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.is_empty()))
}

pub fn parse_triples<R: BufRead>(reader: R, path: &Path) -> Result<Vec<TripleRecord>> {
    let mut out = Vec::new();
    for item in numbered_lines(reader, path) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, n, format!("expected 4 columns, found {}", cols.len())));
        }
        let weight: f64 = cols[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n, format!("non-numeric weight {:?}", cols[0])))?;
        if !weight.is_finite() {
            return Err(Error::parse(path, n, "non-finite weight"));
        }
        if weight < 0.0 {
            return Err(Error::parse(path, n, "negative weight"));
        }
        if cols[1].is_empty() {
            return Err(Error::parse(path, n, "empty language code"));
        }
        if cols[3].is_empty() {
            return Err(Error::parse(path, n, "empty image id"));
        }
        out.push(TripleRecord {
            weight,
            lang: cols[1].to_string(),
            query: cols[2].to_string(),
            image_id: cols[3].to_string(),
        });
    }
    Ok(out)
}

pub fn load_triples(path: &Path) -> Result<Vec<TripleRecord>> {
    parse_triples(open(path)?, path)
}

pub fn write_triples<W: Write>(mut w: W, triples: &[TripleRecord]) -> std::io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}\t{}", t.weight, t.lang, t.query, t.image_id)?;
    }
    Ok(())
}

pub fn save_triples(path: &Path, triples: &[TripleRecord]) -> Result<()> {
    let mut w = create(path)?;
    write_triples(&mut w, triples)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Image features keyed by image id, all of one dimensionality.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    features: HashMap<String, Arc<[f64]>>,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&Arc<[f64]>> {
        self.features.get(image_id)
    }
}

pub fn parse_features<R: BufRead>(reader: R, path: &Path) -> Result<FeatureMap> {
    let mut map = FeatureMap::default();
    for item in numbered_lines(reader, path) {
        let (n, line) = item?;
        let Some((id, values)) = line.split_once('\t') else {
            return Err(Error::parse(path, n, "expected \"image_id<TAB>f1,f2,...\""));
        };
        if id.is_empty() {
            return Err(Error::parse(path, n, "empty image id"));
        }
        let vec = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, n, format!("bad feature value: {e}")))?;
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, n, "non-finite feature value"));
        }
        if map.features.is_empty() {
            map.dim = vec.len();
        } else if vec.len() != map.dim {
            return Err(Error::parse(
                path,
                n,
                format!("feature dimension {} differs from {}", vec.len(), map.dim),
            ));
        }
        if map.features.insert(id.to_string(), vec.into()).is_some() {
            return Err(Error::parse(path, n, format!("duplicate image id {id:?}")));
        }
    }
    Ok(map)
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    parse_features(open(path)?, path)
}

pub fn write_features<W: Write>(mut w: W, features: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    for (id, f) in features {
        let values: Vec<String> = f.iter().map(f64::to_string).collect();
        writeln!(w, "{id}\t{}", values.join(","))?;
    }
    Ok(())
}

/// Keeps the triples whose image occurs with at least two distinct languages
/// anywhere in the input. Order is preserved.
pub fn filter_multilingual(triples: &[TripleRecord]) -> Vec<TripleRecord> {
    let mut langs: HashMap<&str, HashSet<&str>> = HashMap::new();
    for t in triples {
        langs.entry(&t.image_id).or_default().insert(&t.lang);
    }
    triples
        .iter()
        .filter(|t| langs[t.image_id.as_str()].len() >= 2)
        .cloned()
        .collect()
}

/// Every token occurrence in the corpus, in file order.
pub fn token_stream(triples: &[TripleRecord], mode: LangMode) -> impl Iterator<Item = String> + '_ {
    triples.iter().flat_map(move |t| tokenize(&t.query, &t.lang, mode))
}

pub fn build_vocab(triples: &[TripleRecord], min_count: u64, num_buckets: usize, mode: LangMode) -> Result<Vocabulary> {
    Vocabulary::build(token_stream(triples, mode), min_count, num_buckets, mode)
}

/// Where example images come from.
#[derive(Clone, Copy, Debug)]
pub enum ImageSource<'a> {
    /// MLP tower: every image id must have a feature vector.
    Features(&'a FeatureMap),
    /// Lookup tower: image ids are re-indexed densely in first-seen order.
    Lookup,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub examples: Vec<Example>,
    /// Triples dropped because their query produced no tokens.
    pub dropped: usize,
    /// Image ids by dense index (lookup source only).
    pub image_ids: Vec<String>,
}

pub fn prepare_examples(triples: &[TripleRecord], images: ImageSource<'_>, vocab: &Vocabulary) -> Result<Prepared> {
    let mut examples = Vec::with_capacity(triples.len());
    let mut dropped = 0;
    let mut image_index: HashMap<&str, usize> = HashMap::new();
    let mut image_ids = Vec::new();

    for t in triples {
        let tokens: Vec<_> = tokenize(&t.query, &t.lang, vocab.mode())
            .iter()
            .map(|tok| vocab.lookup(tok))
            .collect();
        if tokens.is_empty() {
            dropped += 1;
            continue;
        }
        let image = match images {
            ImageSource::Features(map) => ImageRef::Features(
                map.get(&t.image_id)
                    .cloned()
                    .ok_or_else(|| Error::MissingFeatures(t.image_id.clone()))?,
            ),
            ImageSource::Lookup => {
                let next = image_index.len();
                let id = *image_index.entry(&t.image_id).or_insert_with(|| {
                    image_ids.push(t.image_id.clone());
                    next
                });
                ImageRef::Id(id)
            }
        };
        examples.push(Example {
            tokens,
            image,
            weight: t.weight,
        });
    }
    if dropped > 0 {
        warn!("dropped {dropped} triples whose query has no tokens");
    }
    Ok(Prepared {
        examples,
        dropped,
        image_ids,
    })
}

/// Ground-truth translation pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LexiconEntry {
    pub word1: String,
    pub word2: String,
    pub concept: usize,
}

pub fn parse_lexicon<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LexiconEntry>> {
    let mut out = Vec::new();
    for item in numbered_lines(reader, path) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(path, n, format!("expected 3 columns, found {}", cols.len())));
        }
        let concept = cols[2]
            .parse()
            .map_err(|_| Error::parse(path, n, format!("bad concept id {:?}", cols[2])))?;
        out.push(LexiconEntry {
            word1: cols[0].to_string(),
            word2: cols[1].to_string(),
            concept,
        });
    }
    Ok(out)
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    parse_lexicon(open(path)?, path)
}

pub fn write_lexicon<W: Write>(mut w: W, lexicon: &[LexiconEntry]) -> std::io::Result<()> {
    for e in lexicon {
        writeln!(w, "{}\t{}\t{}", e.word1, e.word2, e.concept)?;
    }
    Ok(())
}

/// Parameters of a synthetic multilingual corpus.
///
/// Each concept has a random unit prototype in feature space. An example picks
/// a concept and a language uniformly, uses 1–3 of that concept's words in that
/// language as its query, and shows an image whose features are the
/// normalised prototype plus Gaussian noise. Words that mean the same thing in
/// different languages therefore co-occur with similar images and never with
/// each other.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_concepts: usize,
    pub num_languages: usize,
    pub words_per_concept: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub num_examples: usize,
    /// Size of each concept's image pool. `None` gives every example its own
    /// image.
    pub images_per_concept: Option<usize>,
    /// Concepts `0..shared_concepts` use the same surface forms in every
    /// language (cognates).
    pub shared_concepts: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_concepts: 20,
            num_languages: 3,
            words_per_concept: 2,
            feature_dim: crate::model::DEFAULT_FEATURE_DIM,
            noise_sigma: 0.1,
            num_examples: 50_000,
            images_per_concept: None,
            shared_concepts: 0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_concepts < 1 || self.num_languages < 1 || self.num_examples < 1 {
            return Err(Error::Config("concepts, languages and examples must be at least 1".into()));
        }
        if self.words_per_concept < 1 || self.feature_dim < 1 {
            return Err(Error::Config("words per concept and feature dim must be at least 1".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if self.images_per_concept == Some(0) {
            return Err(Error::Config("images per concept must be at least 1".into()));
        }
        if self.shared_concepts > self.num_concepts {
            return Err(Error::Config("shared concepts exceed the number of concepts".into()));
        }
        Ok(())
    }

    pub fn lang_code(lang: usize) -> String {
        format!("l{lang}")
    }

    /// Surface form of word `slot` for `concept` in `lang`.
    pub fn word(&self, lang: usize, concept: usize, slot: usize) -> String {
        if concept < self.shared_concepts {
            format!("w{concept}k{slot}")
        } else {
            format!("l{lang}w{concept}k{slot}")
        }
    }

    /// The word as a language-tagged token.
    pub fn tagged_word(&self, lang: usize, concept: usize, slot: usize) -> String {
        format!("{}:{}", Self::lang_code(lang), self.word(lang, concept, slot))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub triples: Vec<TripleRecord>,
    pub features: Vec<(String, Vec<f64>)>,
    pub lexicon: Vec<LexiconEntry>,
}

impl SyntheticCorpus {
    pub const TRIPLES_FILE: &'static str = "triples.tsv";
    pub const FEATURES_FILE: &'static str = "features.tsv";
    pub const LEXICON_FILE: &'static str = "lexicon.tsv";

    /// Writes the three corpus files into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_triples(&dir.join(Self::TRIPLES_FILE), &self.triples)?;
        let path = dir.join(Self::FEATURES_FILE);
        let mut w = create(&path)?;
        write_features(&mut w, &self.features)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        let path = dir.join(Self::LEXICON_FILE);
        let mut w = create(&path)?;
        write_lexicon(&mut w, &self.lexicon)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap {
            dim: self.features.first().map_or(0, |(_, f)| f.len()),
            features: self
                .features
                .iter()
                .map(|(id, f)| (id.clone(), Arc::from(f.as_slice())))
                .collect(),
        }
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;

    let prototypes: Vec<Vec<f64>> = (0..spec.num_concepts)
        .map(|_| unit((0..d).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let draw_image = |rng: &mut ChaCha8Rng, concept: usize| -> Vec<f64> {
        unit(prototypes[concept].iter().map(|p| p + noise.sample(rng)).collect())
    };

    let mut features = Vec::new();
    if let Some(pool) = spec.images_per_concept {
        for c in 0..spec.num_concepts {
            for p in 0..pool {
                features.push((format!("img{c}_{p}"), draw_image(&mut rng, c)));
            }
        }
    }

    let max_len = spec.words_per_concept.min(3);
    let slots: Vec<usize> = (0..spec.words_per_concept).collect();
    let mut triples = Vec::with_capacity(spec.num_examples);
    for n in 0..spec.num_examples {
        let concept = rng.gen_range(0..spec.num_concepts);
        let lang = rng.gen_range(0..spec.num_languages);
        let len = rng.gen_range(1..=max_len);
        let words: Vec<String> = rand::seq::index::sample(&mut rng, slots.len(), len)
            .into_iter()
            .map(|k| spec.word(lang, concept, k))
            .collect();
        let image_id = match spec.images_per_concept {
            Some(pool) => format!("img{concept}_{}", rng.gen_range(0..pool)),
            None => {
                let id = format!("img{n}");
                features.push((id.clone(), draw_image(&mut rng, concept)));
                id
            }
        };
        triples.push(TripleRecord {
            weight: 1.0,
            lang: SyntheticSpec::lang_code(lang),
            query: words.join(" "),
            image_id,
        });
    }

    let mut lexicon = Vec::new();
    for c in 0..spec.num_concepts {
        for l1 in 0..spec.num_languages {
            for l2 in l1 + 1..spec.num_languages {
                for k1 in 0..spec.words_per_concept {
                    for k2 in 0..spec.words_per_concept {
                        lexicon.push(LexiconEntry {
                            word1: spec.tagged_word(l1, c, k1),
                            word2: spec.tagged_word(l2, c, k2),
                            concept: c,
                        });
                    }
                }
            }
        }
    }

    Ok(SyntheticCorpus {
        triples,
        features,
        lexicon,
    })
}

/// A lexicon word with its language and concept.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LexiconWord {
    pub token: String,
    pub lang: String,
    pub concept: usize,
}

/// Distinct words mentioned in a lexicon of language-tagged tokens. With
/// `strip_tags` the returned tokens drop their `lang:` prefix, which is how
/// they appear in a language-unaware vocabulary.
pub fn lexicon_words(lexicon: &[LexiconEntry], strip_tags: bool) -> Vec<LexiconWord> {
    let mut words = BTreeSet::new();
    for e in lexicon {
        for w in [&e.word1, &e.word2] {
            let (lang, surface) = w.split_once(':').unwrap_or(("", w.as_str()));
            words.insert(LexiconWord {
                token: if strip_tags { surface.to_string() } else { w.clone() },
                lang: lang.to_string(),
                concept: e.concept,
            });
        }
    }
    words.into_iter().collect()
}
