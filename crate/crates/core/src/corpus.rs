//! Document ingestion, vocabulary fitting and Bag-of-Words vectors.
//!
//! Documents arrive pre-tokenized as JSONL, one survey answer per line:
//!
//! ```text
//! {"id": "a1", "period": "2016-01", "kind": "current", "rank": 3, "tokens": ["sales", "up"]}
//! ```
//!
//! Calendar months are mapped onto contiguous period indices `1..=T` in
//! sorted order. Answers about current conditions are PU positives, answers
//! about future conditions are unlabeled.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which condition a survey answer evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Current,
    Future,
}

/// Observed PU label state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuLabel {
    Positive,
    Unlabeled,
}

impl Kind {
    pub fn pu_label(self) -> PuLabel {
        match self {
            Kind::Current => PuLabel::Positive,
            Kind::Future => PuLabel::Unlabeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    /// 1-based period index.
    pub period: usize,
    pub kind: Kind,
    /// Five-rank assessment, 0 = worse, 4 = better.
    pub rank: u8,
    pub tokens: Vec<String>,
}

/// On-disk JSONL record. Unknown fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub period: String,
    pub kind: Kind,
    pub rank: i64,
    pub tokens: Vec<String>,
}

/// An immutable, period-indexed collection of documents.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    period_labels: Vec<String>,
    period_index: Vec<Vec<usize>>,
    by_id: HashMap<String, usize>,
}

fn parse_month(label: &str) -> Option<(u32, u32)> {
    let (year, month) = label.split_once('-')?;
    if year.len() != 4 || month.len() != 2 {
        return None;
    }
    let year: u32 = year.parse().ok()?;
    let month: u32 = month.parse().ok()?;
    (1..=12).contains(&month).then_some((year, month))
}

fn validate_record(record: &DocumentRecord) -> std::result::Result<(), String> {
    if record.id.is_empty() {
        return Err("empty id".into());
    }
    if !(0..=4).contains(&record.rank) {
        return Err(format!("rank {} outside 0..4", record.rank));
    }
    if record.tokens.is_empty() {
        return Err("empty token list".into());
    }
    if parse_month(&record.period).is_none() {
        return Err(format!("period {:?} is not YYYY-MM", record.period));
    }
    Ok(())
}

impl Corpus {
    /// Builds a corpus from records. Each record is validated; errors carry
    /// the 1-based position of the offending record.
    pub fn from_records(records: Vec<DocumentRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoDocuments);
        }
        for (i, record) in records.iter().enumerate() {
            validate_record(record).map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
        }

        let months: BTreeSet<(u32, u32)> = records
            .iter()
            .filter_map(|r| parse_month(&r.period))
            .collect();
        let period_of: BTreeMap<(u32, u32), usize> = months
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, i + 1))
            .collect();
        let period_labels = months
            .iter()
            .map(|(y, m)| format!("{y:04}-{m:02}"))
            .collect::<Vec<_>>();

        let mut documents = Vec::with_capacity(records.len());
        let mut seen = HashMap::with_capacity(records.len());
        for (i, record) in records.into_iter().enumerate() {
            if seen.insert(record.id.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate id {:?}", record.id),
                });
            }
            let month = parse_month(&record.period).expect("validated");
            documents.push(Document {
                id: record.id,
                period: period_of[&month],
                kind: record.kind,
                rank: record.rank as u8,
                tokens: record.tokens,
            });
        }
        documents.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.id.cmp(&b.id)));

        let mut period_index = vec![Vec::new(); period_labels.len()];
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            period_index[doc.period - 1].push(i);
            by_id.insert(doc.id.clone(), i);
        }

        Ok(Corpus {
            documents,
            period_labels,
            period_index,
            by_id,
        })
    }

    pub fn from_jsonl_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DocumentRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            validate_record(&record).map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
            records.push(record);
        }
        Self::from_records(records)
    }

    pub fn to_records(&self) -> Vec<DocumentRecord> {
        self.documents
            .iter()
            .map(|d| DocumentRecord {
                id: d.id.clone(),
                period: self.period_labels[d.period - 1].clone(),
                kind: d.kind,
                rank: d.rank as i64,
                tokens: d.tokens.clone(),
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for record in self.to_records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn num_periods(&self) -> usize {
        self.period_labels.len()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    /// Calendar label (`YYYY-MM`) of a 1-based period.
    pub fn period_label(&self, period: usize) -> Result<&str> {
        self.check_period(period)?;
        Ok(&self.period_labels[period - 1])
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    /// Resolves either a `YYYY-MM` label or a 1-based index.
    pub fn resolve_period(&self, key: &str) -> Result<usize> {
        if let Some(i) = self.period_labels.iter().position(|l| l == key) {
            return Ok(i + 1);
        }
        match key.parse::<usize>() {
            Ok(t) => self.check_period(t).map(|_| t),
            Err(_) => Err(Error::config(format!("unknown period {key:?}"))),
        }
    }

    /// Documents of a 1-based period, in stable id order.
    pub fn period_documents(&self, period: usize) -> Result<impl Iterator<Item = &Document>> {
        self.check_period(period)?;
        Ok(self.period_index[period - 1]
            .iter()
            .map(move |&i| &self.documents[i]))
    }

    fn check_period(&self, period: usize) -> Result<()> {
        if period == 0 || period > self.num_periods() {
            return Err(Error::PeriodOutOfRange {
                period,
                periods: self.num_periods(),
            });
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = File::open(path)?;
    Corpus::from_jsonl_reader(BufReader::new(file))
}

/// Positives and unlabeled documents of one period, as corpus positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSlice {
    pub period: usize,
    pub positives: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn period_slice(corpus: &Corpus, period: usize) -> Result<PeriodSlice> {
    corpus.check_period(period)?;
    let mut positives = Vec::new();
    let mut unlabeled = Vec::new();
    for &i in &corpus.period_index[period - 1] {
        match corpus.documents[i].kind.pu_label() {
            PuLabel::Positive => positives.push(i),
            PuLabel::Unlabeled => unlabeled.push(i),
        }
    }
    if positives.is_empty() {
        return Err(Error::period(period, "no positive (current) documents"));
    }
    if unlabeled.is_empty() {
        return Err(Error::period(period, "no unlabeled (future) documents"));
    }
    Ok(PeriodSlice {
        period,
        positives,
        unlabeled,
    })
}

/// Sparse non-negative vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn empty(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs in any order. Duplicate indices are
    /// summed and zero entries dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: i + 1,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sparse entry {i}")));
            }
            *acc.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = acc
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(i, v)| (i as u32, v))
            .unzip();
        Ok(SparseVec {
            dim,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// Componentwise sum of two vectors of equal dimension.
    pub fn add(&self, other: &SparseVec) -> Result<SparseVec> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        SparseVec::from_pairs(self.dim, self.iter().chain(other.iter()))
    }
}

/// Token to column map fitted on a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    /// Keeps tokens occurring at least `min_count` times overall and assigns
    /// indices in lexicographic order.
    pub fn fit<'a, I, D>(docs: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_count == 0 {
            return Err(Error::config("min_count must be >= 1"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for token in doc {
                *counts.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let tokens: Vec<String> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(t, _)| t.to_owned())
            .collect();
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            min_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.tokens.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Raw-count Bag-of-Words vector; out-of-vocabulary tokens are dropped.
    pub fn vectorize_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVec {
        let pairs = tokens
            .iter()
            .filter_map(|t| self.index_of(t.as_ref()))
            .map(|i| (i, 1.0));
        SparseVec::from_pairs(self.dim(), pairs).expect("indices come from the vocabulary")
    }

    pub fn vectorize(&self, doc: &Document) -> SparseVec {
        self.vectorize_tokens(&doc.tokens)
    }
}

pub fn build_vocabulary(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::NoDocuments);
    }
    Vocabulary::fit(corpus.documents().iter().map(|d| &d.tokens), min_count)
}
