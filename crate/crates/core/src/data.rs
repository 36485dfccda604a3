//! Synthetic two-domain parallel corpora, vocabularies, corpus files and
//! mini-batching.
//!
//! A domain's transduction rule substitutes every content token through a
//! domain-specific bijection, then reverses the sequence. Domains A and B
//! share one vocabulary and agree on `⌊shared_map_fraction · vocab_size⌋`
//! of their substitutions.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BOS, EOS, PAD, UNK};

pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(content: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t.to_string());
        }
        for t in content {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    /// Reserved symbols followed by `content_size` tokens `t0 … t{n-1}`.
    pub fn synthetic(content_size: usize) -> Self {
        Vocab::from_tokens((0..content_size).map(|i| format!("t{i}")))
    }

    /// Vocabulary of every token in a text corpus, in first-seen order.
    pub fn build(corpus: &TextCorpus) -> Self {
        let tokens = corpus
            .pairs
            .iter()
            .flat_map(|(s, t)| s.iter().chain(t.iter()))
            .cloned()
            .collect::<Vec<_>>();
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn encode_corpus(&self, text: &TextCorpus) -> Corpus {
        let pairs = text
            .pairs
            .iter()
            .zip(&text.lines)
            .map(|((s, t), &line)| Pair {
                line,
                src: self.encode(s),
                tgt: self.encode(t),
            })
            .collect();
        Corpus { pairs }
    }

    pub fn decode_corpus(&self, corpus: &Corpus) -> TextCorpus {
        TextCorpus {
            pairs: corpus
                .pairs
                .iter()
                .map(|p| (self.decode(&p.src), self.decode(&p.tgt)))
                .collect(),
            lines: corpus.pairs.iter().map(|p| p.line).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Data(format!(
                "{}: vocabulary must start with {}",
                path.display(),
                RESERVED.join(" ")
            )));
        }
        Ok(Vocab::from_tokens(tokens[RESERVED.len()..].iter().copied()))
    }
}

const _: () = assert!(PAD == 0 && BOS == 1 && EOS == 2 && UNK == 3);

/// One sentence pair of token ids and its stable line index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub line: u64,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<Pair>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|p| p.src.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|p| p.tgt.as_slice())
    }

    pub fn max_target_len(&self) -> usize {
        self.pairs.iter().map(|p| p.tgt.len()).max().unwrap_or(0)
    }
}

/// Whitespace-tokenized sentence pairs as read from or written to disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TextCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub lines: Vec<u64>,
}

pub fn read_corpus(src_path: &Path, tgt_path: &Path) -> Result<TextCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line count mismatch: {} has {} lines, {} has {} lines",
            src_path.display(),
            src.len(),
            tgt_path.display(),
            tgt.len()
        )));
    }
    let mut corpus = TextCorpus::default();
    for (i, (s, t)) in src.into_iter().zip(tgt).enumerate() {
        corpus.pairs.push((s, t));
        corpus.lines.push(i as u64);
    }
    Ok(corpus)
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                Err(Error::Data(format!("{}: empty sentence on line {}", path.display(), i + 1)))
            } else {
                Ok(tokens)
            }
        })
        .collect()
}

pub fn write_corpus(corpus: &TextCorpus, src_path: &Path, tgt_path: &Path) -> Result<()> {
    write_lines(src_path, corpus.pairs.iter().map(|(s, _)| s))?;
    write_lines(tgt_path, corpus.pairs.iter().map(|(_, t)| t))
}

/// One sentence per line, tokens separated by single spaces.
pub fn write_lines<'a>(path: &Path, sentences: impl Iterator<Item = &'a Vec<String>>) -> Result<()> {
    let mut out = Vec::new();
    for s in sentences {
        writeln!(out, "{}", s.join(" ")).expect("writing to memory");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a file of whitespace-tokenized sentences; empty lines are kept as
/// empty sentences (system outputs may be empty).
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainId {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substitution {
    /// Domain-specific bijection derived from `map_seed`.
    Random,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    /// Number of content tokens (the vocabulary adds the reserved symbols).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub shared_map_fraction: f64,
    pub domain: DomainId,
    pub substitution: Substitution,
    pub reverse: bool,
    /// Zipf exponent for source token frequencies; `None` draws uniformly.
    pub zipf: Option<f64>,
    /// Seed of the bijections; both domains must use the same value.
    pub map_seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            vocab_size: 120,
            min_len: 3,
            max_len: 12,
            shared_map_fraction: 0.7,
            domain: DomainId::A,
            substitution: Substitution::Random,
            reverse: true,
            zipf: None,
            map_seed: 0x5EED_F00D,
        }
    }
}

impl DomainSpec {
    pub fn with_domain(mut self, domain: DomainId) -> Self {
        self.domain = domain;
        self
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(self.vocab_size)
    }

    pub fn shared_count(&self) -> usize {
        (self.shared_map_fraction * self.vocab_size as f64).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("domain needs at least one content token".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_map_fraction) {
            return Err(Error::Config(format!(
                "shared_map_fraction {} outside [0, 1]",
                self.shared_map_fraction
            )));
        }
        if self.substitution == Substitution::Random && self.vocab_size - self.shared_count() == 1 {
            return Err(Error::Config(format!(
                "vocabulary of {} tokens cannot hold two bijections differing on exactly one token",
                self.vocab_size
            )));
        }
        if let Some(s) = self.zipf {
            if !(s > 0.0) {
                return Err(Error::Config(format!("zipf exponent must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Substitution table over content-token offsets `0..vocab_size`.
    pub fn bijection(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let n = self.vocab_size;
        if self.substitution == Substitution::Identity {
            return Ok((0..n).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.map_seed);
        let mut domain_a: Vec<usize> = (0..n).collect();
        domain_a.shuffle(&mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        if self.domain == DomainId::A {
            return Ok(domain_a);
        }
        // B agrees with A on the first `shared` tokens of `order`; on the
        // rest it composes A with a cyclic derangement.
        let differing = &order[self.shared_count()..];
        let mut domain_b = domain_a.clone();
        for (i, &tok) in differing.iter().enumerate() {
            let next = differing[(i + 1) % differing.len()];
            domain_b[tok] = domain_a[next];
        }
        Ok(domain_b)
    }

    pub fn transduce(&self, bijection: &[usize], src: &[usize]) -> Vec<usize> {
        let offset = RESERVED.len();
        let mut tgt: Vec<usize> = src.iter().map(|&t| bijection[t - offset] + offset).collect();
        if self.reverse {
            tgt.reverse();
        }
        tgt
    }
}

/// `n` sentence pairs of the given domain; a pure function of `(spec, n, seed)`.
/// Source draws do not depend on the domain, so equal seeds give equal sources.
pub fn generate(spec: &DomainSpec, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Argument("cannot generate an empty corpus".into()));
    }
    let bijection = spec.bijection()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = spec
        .zipf
        .map(|s| WeightedIndex::new((1..=spec.vocab_size).map(|r| (r as f64).powf(-s))))
        .transpose()
        .map_err(|e| Error::Config(format!("zipf weights: {e}")))?;
    let offset = RESERVED.len();
    let pairs = (0..n)
        .map(|i| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let src: Vec<usize> = (0..len)
                .map(|_| {
                    offset
                        + match &zipf {
                            Some(w) => w.sample(&mut rng),
                            None => rng.gen_range(0..spec.vocab_size),
                        }
                })
                .collect();
            let tgt = spec.transduce(&bijection, &src);
            Pair {
                line: i as u64,
                src,
                tgt,
            }
        })
        .collect();
    Ok(Corpus { pairs })
}

/// Uniform sample of `size` pairs without replacement, in sampled order.
/// Line indices are preserved.
pub fn subsample(corpus: &Corpus, size: usize, seed: u64) -> Result<Corpus> {
    if size == 0 || size > corpus.len() {
        return Err(Error::Argument(format!(
            "subsample size {size} outside 1..={}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, corpus.len(), size);
    Ok(Corpus {
        pairs: picks.iter().map(|i| corpus.pairs[i].clone()).collect(),
    })
}

/// Number of consecutive batches grouped into one length-sorted bucket.
const BUCKET_BATCHES: usize = 8;

/// Shuffled mini-batches of corpus positions: shuffle, group into buckets
/// of `BUCKET_BATCHES` batches, sort each bucket by source length, cut into
/// batches, then shuffle the batch order. Yields `⌈n / batch_size⌉` batches.
pub fn make_batches<R: Rng>(corpus: &Corpus, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(corpus.len().div_ceil(batch_size));
    for bucket in order.chunks_mut(batch_size * BUCKET_BATCHES) {
        bucket.sort_by_key(|&i| corpus.pairs[i].src.len());
        batches.extend(bucket.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}
