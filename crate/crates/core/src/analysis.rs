//! Near/distant split of scored future answers and the per-period
//! averaged-assessment table.
//!
//! Only the order of scores matters: the top fraction of a period's
//! unlabeled answers is labelled near future, the bottom fraction distant
//! future. Scores may therefore come from a model trained with a
//! mis-specified class prior.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Kind};
pub use crate::stats::{rank_agreement, welch_ttest, WelchResult};
use crate::{Error, Result};

pub const DEFAULT_FRACTION: f64 = 0.2;

/// Scores of one period's unlabeled documents, keyed by document id.
pub type PeriodScores = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub period: usize,
    pub fraction: f64,
    /// Highest scores first.
    pub near: Vec<String>,
    /// Lowest scores last.
    pub distant: Vec<String>,
    pub middle: Vec<String>,
}

fn validate_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::config(format!("fraction {fraction} must lie in (0, 0.5]")));
    }
    Ok(())
}

/// Sorts by descending score (ascending id on ties) and cuts
/// `k = floor(fraction * n)` documents from each end.
pub fn quantile_split<S: AsRef<str>>(
    period: usize,
    scores: &[(S, f64)],
    fraction: f64,
) -> Result<SplitResult> {
    validate_fraction(fraction)?;
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of {:?}", id.as_ref())));
    }
    let n = scores.len();
    // Guard against 0.2 * 15 = 3.0000000000000004 style rounding both ways.
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::period(
            period,
            format!("{n} documents are too few to cut a {fraction} fraction"),
        ));
    }
    let mut order: Vec<(&str, f64)> = scores.iter().map(|(id, s)| (id.as_ref(), *s)).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let ids: Vec<String> = order.into_iter().map(|(id, _)| id.to_owned()).collect();
    Ok(SplitResult {
        period,
        fraction,
        near: ids[..k].to_vec(),
        middle: ids[k..n - k].to_vec(),
        distant: ids[n - k..].to_vec(),
    })
}

fn ranks_of<S: AsRef<str>>(ids: &[S], corpus: &Corpus) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| {
            corpus
                .get(id.as_ref())
                .map(|d| d.rank as f64)
                .ok_or_else(|| Error::config(format!("unknown document id {:?}", id.as_ref())))
        })
        .collect()
}

/// Arithmetic mean of the assessment ranks of `ids`.
pub fn mean_assessment<S: AsRef<str>>(ids: &[S], corpus: &Corpus) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("document ids"));
    }
    let ranks = ranks_of(ids, corpus)?;
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMeans {
    pub near: f64,
    pub distant: f64,
}

/// One line of the averaged-assessment table.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentRow {
    pub period: String,
    pub mtpu: Option<HorizonMeans>,
    pub orig_current: Option<f64>,
    pub orig_future: Option<f64>,
    pub pu1: Option<HorizonMeans>,
    pub pu2: Option<HorizonMeans>,
    /// Near vs distant ranks under the multi-task split.
    pub welch: Option<WelchResult>,
    /// Set when the period could not be analysed completely.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentTable {
    pub rows: Vec<AssessmentRow>,
    /// Multi-task split per period, `None` where it failed.
    pub splits: Vec<Option<SplitResult>>,
}

fn split_means(
    period: usize,
    scores: &[(String, f64)],
    fraction: f64,
    corpus: &Corpus,
) -> Result<(SplitResult, HorizonMeans)> {
    let split = quantile_split(period, scores, fraction)?;
    let means = HorizonMeans {
        near: mean_assessment(&split.near, corpus)?,
        distant: mean_assessment(&split.distant, corpus)?,
    };
    Ok((split, means))
}

fn kind_mean(corpus: &Corpus, period: usize, kind: Kind) -> Result<Option<f64>> {
    let ranks: Vec<f64> = corpus
        .period_documents(period)?
        .filter(|d| d.kind == kind)
        .map(|d| d.rank as f64)
        .collect();
    Ok((!ranks.is_empty()).then(|| ranks.iter().sum::<f64>() / ranks.len() as f64))
}

fn check_score_sets(corpus: &Corpus, name: &str, sets: &[PeriodScores]) -> Result<()> {
    if sets.len() != corpus.num_periods() {
        return Err(Error::config(format!(
            "{name}: {} score sets for {} periods",
            sets.len(),
            corpus.num_periods()
        )));
    }
    Ok(())
}

/// Builds one row per period. Failures inside a period flag that row instead
/// of aborting the table.
pub fn assessment_table(
    corpus: &Corpus,
    mtpu: &[PeriodScores],
    pu1: Option<&[PeriodScores]>,
    pu2: Option<&[PeriodScores]>,
    fraction: f64,
) -> Result<AssessmentTable> {
    validate_fraction(fraction)?;
    check_score_sets(corpus, "mtpu", mtpu)?;
    if let Some(s) = pu1 {
        check_score_sets(corpus, "pu1", s)?;
    }
    if let Some(s) = pu2 {
        check_score_sets(corpus, "pu2", s)?;
    }

    let mut rows = Vec::with_capacity(corpus.num_periods());
    let mut splits = Vec::with_capacity(corpus.num_periods());
    for t in 1..=corpus.num_periods() {
        let mut errors = Vec::new();
        let mut note = |what: &str, e: Error| errors.push(format!("{what}: {e}"));

        let (mtpu_means, welch, split) = match split_means(t, &mtpu[t - 1], fraction, corpus) {
            Ok((split, means)) => {
                let welch = match (ranks_of(&split.near, corpus), ranks_of(&split.distant, corpus)) {
                    (Ok(a), Ok(b)) => welch_ttest(&a, &b).map_err(|e| note("t-test", e)).ok(),
                    (Err(e), _) | (_, Err(e)) => {
                        note("t-test", e);
                        None
                    }
                };
                (Some(means), welch, Some(split))
            }
            Err(e) => {
                note("mtpu", e);
                (None, None, None)
            }
        };
        let baseline = |sets: Option<&[PeriodScores]>, name: &str, note: &mut dyn FnMut(&str, Error)| {
            sets.and_then(|s| match split_means(t, &s[t - 1], fraction, corpus) {
                Ok((_, m)) => Some(m),
                Err(e) => {
                    note(name, e);
                    None
                }
            })
        };
        let pu1_means = baseline(pu1, "pu1", &mut note);
        let pu2_means = baseline(pu2, "pu2", &mut note);
        let row = AssessmentRow {
            period: corpus.period_label(t)?.to_owned(),
            mtpu: mtpu_means,
            orig_current: kind_mean(corpus, t, Kind::Current)?,
            orig_future: kind_mean(corpus, t, Kind::Future)?,
            pu1: pu1_means,
            pu2: pu2_means,
            welch,
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        };
        rows.push(row);
        splits.push(split);
    }
    Ok(AssessmentTable { rows, splits })
}

pub const TABLE_COLUMNS: [&str; 13] = [
    "period",
    "mtpu_nf",
    "mtpu_df",
    "orig_current",
    "orig_future",
    "pu1_nf",
    "pu1_df",
    "pu2_nf",
    "pu2_df",
    "t_stat",
    "dof",
    "p_value",
    "stars",
];

/// Marker in the `stars` column of rows that could not be fully analysed.
pub const FLAGGED: &str = "NA";

fn fmt3(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_default()
}

/// Means and t statistics with 3 decimals, p-values with 6.
pub fn write_table_csv<W: Write>(rows: &[AssessmentRow], mut out: W) -> Result<()> {
    writeln!(out, "{}", TABLE_COLUMNS.join(","))?;
    for row in rows {
        let stars = if row.error.is_some() {
            FLAGGED
        } else {
            row.welch.as_ref().map(WelchResult::stars).unwrap_or("")
        };
        let fields = [
            row.period.clone(),
            fmt3(row.mtpu.map(|m| m.near)),
            fmt3(row.mtpu.map(|m| m.distant)),
            fmt3(row.orig_current),
            fmt3(row.orig_future),
            fmt3(row.pu1.map(|m| m.near)),
            fmt3(row.pu1.map(|m| m.distant)),
            fmt3(row.pu2.map(|m| m.near)),
            fmt3(row.pu2.map(|m| m.distant)),
            fmt3(row.welch.map(|w| w.t_stat)),
            fmt3(row.welch.map(|w| w.dof)),
            row.welch
                .map(|w| format!("{:.6}", w.p_value))
                .unwrap_or_default(),
            stars.to_owned(),
        ];
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// A parsed line of the table CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRecord {
    pub period: String,
    /// Columns `mtpu_nf` through `p_value`, in order.
    pub values: [Option<f64>; 11],
    pub stars: String,
}

pub fn read_table_csv<R: BufRead>(input: R) -> Result<Vec<TableRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or(Error::EmptyInput("table csv"))?;
    if header.trim_end() != TABLE_COLUMNS.join(",") {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        let bad = |message: String| Error::Parse {
            line: i + 2,
            message,
        };
        if cells.len() != TABLE_COLUMNS.len() {
            return Err(bad(format!("{} cells", cells.len())));
        }
        let mut values = [None; 11];
        for (slot, cell) in values.iter_mut().zip(&cells[1..12]) {
            if !cell.is_empty() {
                *slot = Some(cell.parse().map_err(|_| bad(format!("bad number {cell:?}")))?);
            }
        }
        records.push(TableRecord {
            period: cells[0].to_owned(),
            values,
            stars: cells[12].to_owned(),
        });
    }
    Ok(records)
}

/// Long-format series for plotting: `period,series,value,sig_level`.
pub fn write_timeseries_csv<W: Write>(rows: &[AssessmentRow], mut out: W) -> Result<()> {
    writeln!(out, "period,series,value,sig_level")?;
    for row in rows {
        let sig = match row.welch {
            Some(w) if w.sig1 => "1%",
            Some(w) if w.sig5 => "5%",
            _ => "",
        };
        let series: [(&str, Option<f64>, &str); 8] = [
            ("mtpu_nf", row.mtpu.map(|m| m.near), sig),
            ("mtpu_df", row.mtpu.map(|m| m.distant), sig),
            ("orig_current", row.orig_current, ""),
            ("orig_future", row.orig_future, ""),
            ("pu1_nf", row.pu1.map(|m| m.near), ""),
            ("pu1_df", row.pu1.map(|m| m.distant), ""),
            ("pu2_nf", row.pu2.map(|m| m.near), ""),
            ("pu2_df", row.pu2.map(|m| m.distant), ""),
        ];
        for (name, value, sig) in series {
            if let Some(v) = value {
                writeln!(out, "{},{name},{v:.3},{sig}", row.period)?;
            }
        }
    }
    Ok(())
}

/// Split membership as written by `analyze` and read by `network`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsFile {
    pub fraction: f64,
    pub periods: Vec<PeriodSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub period: String,
    pub near: Vec<String>,
    pub distant: Vec<String>,
}

impl SplitsFile {
    pub fn from_table(corpus: &Corpus, table: &AssessmentTable, fraction: f64) -> Result<Self> {
        let mut periods = Vec::new();
        for split in table.splits.iter().flatten() {
            periods.push(PeriodSplit {
                period: corpus.period_label(split.period)?.to_owned(),
                near: split.near.clone(),
                distant: split.distant.clone(),
            });
        }
        Ok(SplitsFile { fraction, periods })
    }
}
