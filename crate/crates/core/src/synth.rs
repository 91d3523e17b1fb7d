//! Synthetic PU corpora with hidden ground truth.
//!
//! Words are drawn from two topic distributions over a shared vocabulary.
//! The near-future topic mixes a Zipf-weighted block of the first half of
//! the vocabulary with a uniform background; the distant-future topic does
//! the same over the second half. `overlap` is the background weight, so 0
//! gives disjoint supports and 1 makes the classes indistinguishable.
//!
//! Current-condition answers (positives) come from the near topic; future
//! answers are the `π_t` mixture of both topics, with the hidden class
//! recorded in the ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocumentRecord, Kind, SparseVec};
use crate::net::{NEGATIVE, POSITIVE};
use crate::{Error, Result};

/// Rank distribution of hidden near-future answers, mean 2.65.
pub const NEAR_RANKS: [f64; 5] = [0.05, 0.10, 0.25, 0.35, 0.25];
/// Rank distribution of hidden distant-future answers, mean 1.35.
pub const DISTANT_RANKS: [f64; 5] = [0.25, 0.35, 0.25, 0.10, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub periods: usize,
    /// Current-condition documents per period.
    pub n_pos: usize,
    /// Future-condition documents per period.
    pub n_unl: usize,
    pub vocab_size: usize,
    /// Hidden positive fraction of the unlabeled documents; one value for
    /// every period or one per period.
    pub priors: Vec<f64>,
    /// Background weight shared by both topics, in `[0, 1]`.
    pub overlap: f64,
    /// Zipf exponent of the topic blocks.
    pub zipf: f64,
    /// Mean tokens per document (at least one token is always drawn).
    pub doc_len: f64,
    pub near_ranks: [f64; 5],
    pub distant_ranks: [f64; 5],
    /// First calendar month as `(year, month)`.
    pub start: (u32, u32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            periods: 6,
            n_pos: 300,
            n_unl: 300,
            vocab_size: 2000,
            priors: vec![0.2],
            overlap: 0.5,
            zipf: 0.8,
            doc_len: 12.0,
            near_ranks: NEAR_RANKS,
            distant_ranks: DISTANT_RANKS,
            start: (2016, 1),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn prior(&self, period: usize) -> f64 {
        if self.priors.len() == 1 {
            self.priors[0]
        } else {
            self.priors[period - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods == 0 || self.n_pos == 0 || self.n_unl == 0 {
            return Err(Error::config("periods and per-period counts must be >= 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocabulary needs at least 2 words"));
        }
        if self.priors.len() != 1 && self.priors.len() != self.periods {
            return Err(Error::config(format!(
                "{} priors for {} periods",
                self.priors.len(),
                self.periods
            )));
        }
        if let Some(p) = self.priors.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::config(format!("synthetic prior {p} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::config("overlap must lie in [0, 1]"));
        }
        if !(self.doc_len >= 1.0 && self.doc_len.is_finite()) || self.zipf.is_nan() || self.zipf < 0.0 {
            return Err(Error::config("doc_len must be >= 1 and zipf >= 0"));
        }
        for dist in [&self.near_ranks, &self.distant_ranks] {
            if dist.iter().any(|&p| p < 0.0) || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::config("rank distributions must be probability vectors"));
            }
        }
        if !(1..=12).contains(&self.start.1) {
            return Err(Error::config("start month must be 1..12"));
        }
        Ok(())
    }

    fn month_label(&self, period: usize) -> String {
        let months = self.start.0 * 12 + (self.start.1 - 1) + (period as u32 - 1);
        format!("{:04}-{:02}", months / 12, months % 12 + 1)
    }
}

/// Word id formatting keeps lexicographic and numeric order identical.
pub fn word(id: usize) -> String {
    format!("w{id:05}")
}

/// Class-conditional document sampler.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: SynthConfig,
    near: Vec<f64>,
    distant: Vec<f64>,
    near_words: WeightedIndex<f64>,
    distant_words: WeightedIndex<f64>,
    near_ranks: WeightedIndex<f64>,
    distant_ranks: WeightedIndex<f64>,
    length: Option<Poisson<f64>>,
}

fn zipf_block(len: usize, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len).map(|r| 1.0 / ((r + 1) as f64).powf(exponent)).collect();
    w.shuffle(rng);
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

impl Generator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.vocab_size;
        let half = v / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let block_a = zipf_block(half, cfg.zipf, &mut rng);
        let block_b = zipf_block(v - half, cfg.zipf, &mut rng);
        let uniform = 1.0 / v as f64;
        let o = cfg.overlap;
        let near: Vec<f64> = (0..v)
            .map(|i| o * uniform + if i < half { (1.0 - o) * block_a[i] } else { 0.0 })
            .collect();
        let distant: Vec<f64> = (0..v)
            .map(|i| o * uniform + if i >= half { (1.0 - o) * block_b[i - half] } else { 0.0 })
            .collect();
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied()).map_err(|e| Error::config(e.to_string()))
        };
        let length = if cfg.doc_len > 1.0 {
            Some(Poisson::new(cfg.doc_len - 1.0).map_err(|e| Error::config(e.to_string()))?)
        } else {
            None
        };
        Ok(Generator {
            near_words: weighted(&near)?,
            distant_words: weighted(&distant)?,
            near_ranks: weighted(&cfg.near_ranks)?,
            distant_ranks: weighted(&cfg.distant_ranks)?,
            near,
            distant,
            length,
            cfg,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Word distribution of the near (`true`) or distant (`false`) topic.
    pub fn topic(&self, near: bool) -> &[f64] {
        if near {
            &self.near
        } else {
            &self.distant
        }
    }

    pub fn draw_word_ids<R: Rng>(&self, near: bool, rng: &mut R) -> Vec<usize> {
        let len = 1 + self.length.map_or(0, |p| p.sample(rng) as usize);
        let dist = if near { &self.near_words } else { &self.distant_words };
        (0..len).map(|_| dist.sample(rng)).collect()
    }

    /// Bag-of-Words vector with word id as column.
    pub fn draw_vector<R: Rng>(&self, near: bool, rng: &mut R) -> SparseVec {
        let ids = self.draw_word_ids(near, rng);
        SparseVec::from_pairs(self.cfg.vocab_size, ids.into_iter().map(|i| (i, 1.0)))
            .expect("word ids are below vocab_size")
    }

    pub fn draw_rank<R: Rng>(&self, near: bool, rng: &mut R) -> u8 {
        let dist = if near { &self.near_ranks } else { &self.distant_ranks };
        dist.sample(rng) as u8
    }

    /// Case-control sample: `n_pos` positives and `n_unl` draws from the
    /// `prior` mixture.
    pub fn draw_pu<R: Rng>(
        &self,
        n_pos: usize,
        n_unl: usize,
        prior: f64,
        rng: &mut R,
    ) -> (Vec<SparseVec>, Vec<SparseVec>) {
        let pos = (0..n_pos).map(|_| self.draw_vector(true, rng)).collect();
        let unl = (0..n_unl)
            .map(|_| {
                let near = rng.random_bool(prior);
                self.draw_vector(near, rng)
            })
            .collect();
        (pos, unl)
    }
}

/// Hidden labels of the unlabeled documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, i8>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    id: String,
    y: i8,
}

impl GroundTruth {
    pub fn is_positive(&self, id: &str) -> Option<bool> {
        self.labels.get(id).map(|&y| y > 0)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, &y) in &self.labels {
            serde_json::to_writer(&mut out, &TruthRecord { id: id.clone(), y })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: TruthRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.y != 1 && r.y != -1 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("label {} is not 1 or -1", r.y),
                });
            }
            labels.insert(r.id, r.y);
        }
        Ok(GroundTruth { labels })
    }
}

/// Generates a corpus and the hidden labels of its future documents.
///
/// Each period receives exactly `round(π_t · n_unl)` hidden positives, placed
/// at random, so the empirical class fraction matches the prior.
pub fn generate(cfg: &SynthConfig) -> Result<(Corpus, GroundTruth)> {
    let gen = Generator::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut records = Vec::with_capacity(cfg.periods * (cfg.n_pos + cfg.n_unl));
    let mut truth = GroundTruth::default();
    let to_record = |id: String, period: &str, kind: Kind, rank: u8, ids: Vec<usize>| DocumentRecord {
        id,
        period: period.to_owned(),
        kind,
        rank: rank as i64,
        tokens: ids.into_iter().map(word).collect(),
    };
    for t in 1..=cfg.periods {
        let label = cfg.month_label(t);
        for i in 0..cfg.n_pos {
            let ids = gen.draw_word_ids(true, &mut rng);
            let rank = gen.draw_rank(true, &mut rng);
            records.push(to_record(format!("p{t:02}-c{i:04}"), &label, Kind::Current, rank, ids));
        }
        let n_near = ((cfg.prior(t) * cfg.n_unl as f64).round() as usize).min(cfg.n_unl);
        let mut hidden: Vec<bool> = (0..cfg.n_unl).map(|i| i < n_near).collect();
        hidden.shuffle(&mut rng);
        for (i, near) in hidden.into_iter().enumerate() {
            let id = format!("p{t:02}-f{i:04}");
            let ids = gen.draw_word_ids(near, &mut rng);
            let rank = gen.draw_rank(near, &mut rng);
            truth
                .labels
                .insert(id.clone(), if near { POSITIVE as i8 } else { NEGATIVE as i8 });
            records.push(to_record(id, &label, Kind::Future, rank, ids));
        }
    }
    Ok((Corpus::from_records(records)?, truth))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Fully supervised risk `π E_p[ℓ(f,+1)] + (1-π) E_n[ℓ(f,-1)]`, estimated
/// from `n_mc` labeled draws of each class.
pub fn oracle_pn_risk<F>(
    f: F,
    gen: &Generator,
    prior: f64,
    loss: crate::net::Loss,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: Fn(&SparseVec) -> f64,
{
    if n_mc < 100 {
        return Err(Error::config(format!("n_mc = {n_mc} is below 100")));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::config(format!("prior {prior} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Welford updates: exact for constant losses, stable otherwise.
    let mut moments = |near: bool, y: f64| {
        let (mut mean, mut m2) = (0.0, 0.0);
        for i in 1..=n_mc {
            let l = loss.value(f(&gen.draw_vector(near, &mut rng)), y);
            let delta = l - mean;
            mean += delta / i as f64;
            m2 += delta * (l - mean);
        }
        (mean, m2 / (n_mc as f64 - 1.0))
    };
    let (mp, vp) = moments(true, POSITIVE);
    let (mn, vn) = moments(false, NEGATIVE);
    let n = n_mc as f64;
    Ok(Estimate {
        mean: prior * mp + (1.0 - prior) * mn,
        std_err: (prior * prior * vp / n + (1.0 - prior).powi(2) * vn / n).sqrt(),
    })
}
