//! Corpus BLEU-4 (no smoothing, single reference) and paired bootstrap
//! resampling.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one or more sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..BleuStats::default()
        };
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            stats.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            if self.totals[n] > 0 {
                precisions[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0)
        };
        let bleu = if precisions.iter().all(|&p| p > 0.0) {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * log_mean.exp()
        } else {
            0.0
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }

    fn score(&self) -> f64 {
        self.report().bleu
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuReport {
    /// `key=value` lines for machine consumption.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("bleu={:.2}\n", self.bleu);
        for (n, p) in self.precisions.iter().enumerate() {
            s.push_str(&format!("p{}={:.6}\n", n + 1, p));
        }
        s.push_str(&format!(
            "bp={:.6}\nhyp_len={}\nref_len={}\n",
            self.brevity_penalty, self.hyp_len, self.ref_len
        ));
        s
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        write!(
            f,
            "BLEU = {:.2}, {} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            p.join("/"),
            self.brevity_penalty,
            if self.ref_len == 0 { 0.0 } else { self.hyp_len as f64 / self.ref_len as f64 },
            self.hyp_len,
            self.ref_len
        )
    }
}

fn sentence_stats<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(hyps: &[H], refs: &[R]) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::Argument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref()))
        .collect())
}

/// Corpus-level BLEU-4 of `hyps` against single references.
pub fn bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(hyps: &[H], refs: &[R]) -> Result<BleuReport> {
    let mut total = BleuStats::default();
    for s in sentence_stats(hyps, refs)? {
        total.add(&s);
    }
    Ok(total.report())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_resamples: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub significant_at_5pct: bool,
    pub bleu_a: f64,
    pub bleu_b: f64,
}

impl SignificanceResult {
    pub fn to_key_values(&self) -> String {
        format!(
            "bleu_a={:.2}\nbleu_b={:.2}\np_value={:.4}\nn_resamples={}\nwins_a={}\nwins_b={}\nties={}\nsignificant_at_5pct={}\ntest=paired_bootstrap_one_sided\n",
            self.bleu_a,
            self.bleu_b,
            self.p_value,
            self.n_resamples,
            self.wins_a,
            self.wins_b,
            self.ties,
            self.significant_at_5pct
        )
    }
}

pub const DEFAULT_RESAMPLES: usize = 1000;

/// One-sided paired bootstrap test that system A beats system B: the
/// p-value is the fraction of resamples where BLEU(B) ≥ BLEU(A).
pub fn bootstrap_significance<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(
    hyp_a: &[H],
    hyp_b: &[H],
    refs: &[R],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if n_resamples == 0 {
        return Err(Error::Argument("bootstrap needs at least one resample".into()));
    }
    let stats_a = sentence_stats(hyp_a, refs)?;
    let stats_b = sentence_stats(hyp_b, refs)?;
    if refs.is_empty() {
        return Err(Error::Argument("bootstrap needs at least one sentence".into()));
    }
    let total = |stats: &[BleuStats]| {
        let mut t = BleuStats::default();
        stats.iter().for_each(|s| t.add(s));
        t.score()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = refs.len();
    let (mut wins_a, mut wins_b, mut ties) = (0, 0, 0);
    for _ in 0..n_resamples {
        let mut a = BleuStats::default();
        let mut b = BleuStats::default();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            a.add(&stats_a[i]);
            b.add(&stats_b[i]);
        }
        let (sa, sb) = (a.score(), b.score());
        if sa > sb {
            wins_a += 1;
        } else if sb > sa {
            wins_b += 1;
        } else {
            ties += 1;
        }
    }
    let p_value = (wins_b + ties) as f64 / n_resamples as f64;
    Ok(SignificanceResult {
        p_value,
        n_resamples,
        wins_a,
        wins_b,
        ties,
        significant_at_5pct: p_value < 0.05,
        bleu_a: total(&stats_a),
        bleu_b: total(&stats_b),
    })
}
