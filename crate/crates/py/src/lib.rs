//! Python bindings for the `mtpu` crate.

use std::io::BufReader;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mtpu::analysis;
use mtpu::checkpoint::{self, Checkpoint};
use mtpu::corpus;
use mtpu::multitask::{Architecture, MtpuTrainConfig, Schedule};
use mtpu::net::{NetConfig, OptimConfig};
use mtpu::pipeline::{self, Mode, TrainOptions};
use mtpu::purisk::{self, PuConfig, TrainConfig};
use mtpu::stats;
use mtpu::synth::{self, SynthConfig};
use mtpu::textmine::{self, EdgeRule, ExportFormat, GroupLabel, Horizon};

fn err(e: mtpu::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Time-indexed corpus of survey answers.
#[pyclass(module = "mtpu_py")]
pub struct Corpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        corpus::load_corpus(path).map(|inner| Corpus { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        corpus::Corpus::from_jsonl_reader(BufReader::new(text.as_bytes()))
            .map(|inner| Corpus { inner })
            .map_err(err)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.inner.write_jsonl(&mut out).map_err(err)?;
        Ok(String::from_utf8(out).expect("JSON is UTF-8"))
    }

    #[getter]
    fn num_periods(&self) -> usize {
        self.inner.num_periods()
    }

    #[getter]
    fn period_labels(&self) -> Vec<String> {
        self.inner.period_labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(id, period, kind, rank, tokens)` of one document.
    fn document(&self, id: &str) -> Option<(String, usize, String, u8, Vec<String>)> {
        self.inner.get(id).map(|d| {
            let kind = match d.kind {
                corpus::Kind::Current => "current",
                corpus::Kind::Future => "future",
            };
            (d.id.clone(), d.period, kind.to_owned(), d.rank, d.tokens.clone())
        })
    }

    /// Ids of the unlabeled (future) documents of a 1-based period.
    fn unlabeled_ids(&self, period: usize) -> PyResult<Vec<String>> {
        let slice = corpus::period_slice(&self.inner, period).map_err(err)?;
        Ok(slice
            .unlabeled
            .iter()
            .map(|&i| self.inner.documents()[i].id.clone())
            .collect())
    }
}

/// Generates a synthetic corpus; returns it with `{id: ±1}` hidden labels.
#[pyfunction]
#[pyo3(signature = (periods=6, n_pos=300, n_unl=300, vocab_size=2000, prior=0.2, overlap=0.5, doc_len=12.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    periods: usize,
    n_pos: usize,
    n_unl: usize,
    vocab_size: usize,
    prior: f64,
    overlap: f64,
    doc_len: f64,
    seed: u64,
) -> PyResult<(Corpus, std::collections::BTreeMap<String, i8>)> {
    let cfg = SynthConfig {
        periods,
        n_pos,
        n_unl,
        vocab_size,
        priors: vec![prior],
        overlap,
        doc_len,
        seed,
        ..Default::default()
    };
    let (inner, truth) = synth::generate(&cfg).map_err(err)?;
    Ok((Corpus { inner }, truth.labels))
}

/// A trained model together with its vocabulary.
#[pyclass(module = "mtpu_py")]
pub struct Model {
    checkpoint: Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Checkpoint::load(path).map(|checkpoint| Model { checkpoint }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.checkpoint.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.checkpoint.model {
            checkpoint::Model::Single(_) => "pu1",
            checkpoint::Model::Multitask(_) => "mtpu",
            checkpoint::Model::PerPeriod(_) => "pu2",
        }
    }

    #[getter]
    fn num_periods(&self) -> Option<usize> {
        self.checkpoint.model.num_periods()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.checkpoint.model.input_dim()
    }

    /// Per-period lists of `(id, score)` for the unlabeled documents.
    fn score_unlabeled(&self, corpus: &Corpus) -> PyResult<Vec<Vec<(String, f64)>>> {
        let vocab = pipeline::checkpoint_vocabulary(&corpus.inner, &self.checkpoint).map_err(err)?;
        pipeline::score_unlabeled(&corpus.inner, &vocab, &self.checkpoint.model).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (corpus, mode="mtpu", prior=0.2, epochs=20, lr=1e-3, batch_pos=64, batch_unl=256, weight_decay=1e-4, hidden=500, seed=0, schedule="round-robin", min_count=1))]
#[allow(clippy::too_many_arguments)]
fn train(
    corpus: &Corpus,
    mode: &str,
    prior: f64,
    epochs: usize,
    lr: f64,
    batch_pos: usize,
    batch_unl: usize,
    weight_decay: f64,
    hidden: usize,
    seed: u64,
    schedule: &str,
    min_count: usize,
) -> PyResult<Model> {
    let mode: Mode = mode.parse().map_err(err)?;
    let schedule: Schedule = schedule.parse().map_err(err)?;
    let opts = TrainOptions {
        mode,
        arch: Architecture::uniform(hidden),
        net: NetConfig {
            seed,
            ..Default::default()
        },
        mtpu: MtpuTrainConfig {
            pu: vec![PuConfig::with_prior(prior)],
            schedule,
            train: TrainConfig {
                epochs,
                batch_pos,
                batch_unl,
                optim: OptimConfig {
                    lr,
                    weight_decay,
                    ..Default::default()
                },
                seed,
            },
            ..Default::default()
        },
        min_count,
    };
    let trained = pipeline::train(&corpus.inner, &opts).map_err(err)?;
    Ok(Model {
        checkpoint: trained.checkpoint,
    })
}

/// `(total, term_pos, correction, clamped)` of the PU risk on raw scores.
#[pyfunction]
#[pyo3(signature = (pos_scores, unl_scores, prior, nonneg=true))]
fn pu_risk(pos_scores: Vec<f64>, unl_scores: Vec<f64>, prior: f64, nonneg: bool) -> PyResult<(f64, f64, f64, bool)> {
    let cfg = PuConfig {
        nonneg,
        ..PuConfig::with_prior(prior)
    };
    let r = purisk::pu_risk(&pos_scores, &unl_scores, &cfg).map_err(err)?;
    Ok((r.total, r.term_pos, r.term_neg_correction, r.correction_clamped))
}

/// `(t, dof, p_value, stars)` of Welch's two-sample test.
#[pyfunction]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64, &'static str)> {
    let r = stats::welch_ttest(&a, &b).map_err(err)?;
    Ok((r.t_stat, r.dof, r.p_value, r.stars()))
}

/// `(near_ids, distant_ids)` cut from the two ends of the score order.
#[pyfunction]
#[pyo3(signature = (scores, fraction=0.2))]
fn quantile_split(scores: Vec<(String, f64)>, fraction: f64) -> PyResult<(Vec<String>, Vec<String>)> {
    let s = analysis::quantile_split(1, &scores, fraction).map_err(err)?;
    Ok((s.near, s.distant))
}

/// Table CSV text for the given per-period score lists.
#[pyfunction]
#[pyo3(signature = (corpus, mtpu_scores, pu1_scores=None, pu2_scores=None, fraction=0.2))]
fn assessment_table_csv(
    corpus: &Corpus,
    mtpu_scores: Vec<Vec<(String, f64)>>,
    pu1_scores: Option<Vec<Vec<(String, f64)>>>,
    pu2_scores: Option<Vec<Vec<(String, f64)>>>,
    fraction: f64,
) -> PyResult<String> {
    let table = analysis::assessment_table(
        &corpus.inner,
        &mtpu_scores,
        pu1_scores.as_deref(),
        pu2_scores.as_deref(),
        fraction,
    )
    .map_err(err)?;
    let mut out = Vec::new();
    analysis::write_table_csv(&table.rows, &mut out).map_err(err)?;
    Ok(String::from_utf8(out).expect("CSV is UTF-8"))
}

#[pyfunction]
fn jaccard(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    textmine::jaccard(&a.into_iter().collect(), &b.into_iter().collect()).map_err(err)
}

/// Co-occurrence network of one group as JSON (or DOT with `format="dot"`).
///
/// `groups` maps `(period, "near"|"distant")` to member ids.
#[pyfunction]
#[pyo3(signature = (corpus, groups, period, horizon, k=50, top_edges=60, threshold=None, format="json"))]
#[allow(clippy::too_many_arguments)]
fn cooccurrence_network(
    corpus: &Corpus,
    groups: Vec<((usize, String), Vec<String>)>,
    period: usize,
    horizon: &str,
    k: usize,
    top_edges: usize,
    threshold: Option<f64>,
    format: &str,
) -> PyResult<String> {
    let all = groups
        .into_iter()
        .map(|((p, h), ids)| {
            let horizon: Horizon = h.parse()?;
            textmine::Group::from_corpus(&corpus.inner, GroupLabel { period: p, horizon }, &ids)
        })
        .collect::<mtpu::Result<Vec<_>>>()
        .map_err(err)?;
    let label = GroupLabel {
        period,
        horizon: horizon.parse().map_err(err)?,
    };
    let group = all
        .iter()
        .find(|g| g.label == label)
        .ok_or_else(|| PyValueError::new_err(format!("no {horizon} group for period {period}")))?;
    let rule = threshold.map_or(EdgeRule::TopEdges(top_edges), EdgeRule::MinJaccard);
    let net = textmine::build_network(group, &all, k, rule).map_err(err)?;
    let format = match format {
        "json" => ExportFormat::Json,
        "dot" => ExportFormat::Dot,
        other => return Err(PyValueError::new_err(format!("unknown format {other:?}"))),
    };
    Ok(String::from_utf8(net.export(format).map_err(err)?).expect("exports are UTF-8"))
}

#[pymodule]
fn mtpu_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(pu_risk, m)?)?;
    m.add_function(wrap_pyfunction!(welch_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_split, m)?)?;
    m.add_function(wrap_pyfunction!(assessment_table_csv, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(cooccurrence_network, m)?)?;
    Ok(())
}
