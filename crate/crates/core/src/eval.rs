//! Ranked retrieval and the NN / first tier / second tier / DCG statistics plus
//! interpolated precision–recall.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bow::{histogram_distance, BowHistogram, Normalization};
use crate::error::{Error, Result};

pub const RECALL_LEVELS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    /// (model_id, distance), ascending distance, ties by model_id.
    pub entries: Vec<(String, f64)>,
}

/// Ranks `corpus` by distance to `query`, leaving out the query's own id.
pub fn rank(query: &BowHistogram, corpus: &[BowHistogram]) -> Result<RankedList> {
    let mut entries = Vec::with_capacity(corpus.len());
    let mut seen = BTreeSet::new();
    for h in corpus {
        if !seen.insert(h.model_id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate model id {}", h.model_id)));
        }
        if h.model_id == query.model_id {
            continue;
        }
        entries.push((h.model_id.clone(), histogram_distance(query, h)?));
    }
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList {
        query_id: query.model_id.clone(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub class: String,
    pub nn: f64,
    pub first_tier: f64,
    pub second_tier: f64,
    pub dcg: f64,
    /// Interpolated precision at recall 0.05, 0.10, ..., 1.00.
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub nn: f64,
    pub first_tier: f64,
    pub second_tier: f64,
    pub dcg: f64,
}

/// Statistics of a relevance pattern in rank order. `None` when nothing is relevant.
pub fn metrics_from_relevance(relevant: &[bool]) -> Option<Statistics> {
    let r = relevant.iter().filter(|&&x| x).count();
    if r == 0 {
        return None;
    }
    let within = |n: usize| relevant.iter().take(n).filter(|&&x| x).count() as f64;
    let dcg_of = |pattern: &mut dyn Iterator<Item = bool>| {
        let mut dcg = 0.0;
        for (i, rel) in pattern.enumerate() {
            if rel {
                dcg += if i == 0 { 1.0 } else { 1.0 / ((i + 1) as f64).log2() };
            }
        }
        dcg
    };
    let ideal = dcg_of(&mut (0..r).map(|_| true));
    Some(Statistics {
        nn: if relevant[0] { 1.0 } else { 0.0 },
        first_tier: within(r) / r as f64,
        second_tier: within(2 * r) / r as f64,
        dcg: dcg_of(&mut relevant.iter().copied()) / ideal,
    })
}

/// Interpolated precision at the 20 recall levels: the best precision of any
/// prefix whose recall reaches the level.
pub fn precision_from_relevance(relevant: &[bool]) -> Option<Vec<f64>> {
    let r = relevant.iter().filter(|&&x| x).count();
    if r == 0 {
        return None;
    }
    let mut best = vec![0.0f64; RECALL_LEVELS];
    let mut hits = 0;
    for (m, &rel) in relevant.iter().enumerate() {
        if !rel {
            continue;
        }
        hits += 1;
        let p = hits as f64 / (m + 1) as f64;
        for (j, b) in best.iter_mut().enumerate() {
            // recall hits/r reaches (j+1)/20
            if hits * RECALL_LEVELS >= (j + 1) * r {
                *b = b.max(p);
            }
        }
    }
    Some(best)
}

pub fn recall_levels() -> Vec<f64> {
    (1..=RECALL_LEVELS).map(|j| j as f64 / RECALL_LEVELS as f64).collect()
}

fn relevance(ranked: &RankedList, labels: &BTreeMap<String, String>) -> Result<(String, Vec<bool>)> {
    let class = labels
        .get(&ranked.query_id)
        .ok_or_else(|| Error::MissingLabel(ranked.query_id.clone()))?;
    let rel = ranked
        .entries
        .iter()
        .map(|(id, _)| labels.get(id).map(|c| c == class).ok_or_else(|| Error::MissingLabel(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok((class.clone(), rel))
}

/// Per-query statistics; `None` (with a warning) when the query's class has no
/// other member in the list.
pub fn compute_metrics(ranked: &RankedList, labels: &BTreeMap<String, String>) -> Result<Option<QueryMetrics>> {
    let (class, rel) = relevance(ranked, labels)?;
    let (Some(s), Some(precision)) = (metrics_from_relevance(&rel), precision_from_relevance(&rel)) else {
        log::warn!("query {} has no other member of class {class}; skipped", ranked.query_id);
        return Ok(None);
    };
    Ok(Some(QueryMetrics {
        query_id: ranked.query_id.clone(),
        class,
        nn: s.nn,
        first_tier: s.first_tier,
        second_tier: s.second_tier,
        dcg: s.dcg,
        precision,
    }))
}

pub fn precision_recall(ranked: &RankedList, labels: &BTreeMap<String, String>) -> Result<Option<Vec<(f64, f64)>>> {
    let (_, rel) = relevance(ranked, labels)?;
    Ok(precision_from_relevance(&rel).map(|p| recall_levels().into_iter().zip(p).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub normalization: Normalization,
    pub n_models: usize,
    pub class_sizes: BTreeMap<String, usize>,
    /// Every histogram is identical, so the ranking is decided by the id tie rule alone.
    pub degenerate: bool,
    pub skipped_queries: Vec<String>,
    pub mean: Statistics,
    pub precision_recall: Vec<(f64, f64)>,
    pub queries: Vec<QueryMetrics>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub parameters: serde_json::Value,
}

/// Every model queries the rest of the corpus; statistics are averaged over the
/// queries whose class has at least two members.
pub fn evaluate_corpus(histograms: &[BowHistogram], labels: &BTreeMap<String, String>, method: &str) -> Result<EvalReport> {
    let first = histograms
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty corpus".into()))?;
    let mut class_sizes: BTreeMap<String, usize> = BTreeMap::new();
    for h in histograms {
        let c = labels.get(&h.model_id).ok_or_else(|| Error::MissingLabel(h.model_id.clone()))?;
        *class_sizes.entry(c.clone()).or_default() += 1;
    }
    if class_sizes.len() < 2 {
        log::warn!("corpus has fewer than two classes");
    }
    let degenerate = histograms.iter().all(|h| h.counts == first.counts);
    if degenerate {
        log::warn!("all histograms are identical; ranking falls back to id order");
    }

    let results = histograms
        .par_iter()
        .map(|q| compute_metrics(&rank(q, histograms)?, labels).map(|m| (q.model_id.clone(), m)))
        .collect::<Result<Vec<_>>>()?;
    let mut queries = Vec::new();
    let mut skipped_queries = Vec::new();
    for (id, m) in results {
        match m {
            Some(m) => queries.push(m),
            None => skipped_queries.push(id),
        }
    }
    if queries.is_empty() {
        return Err(Error::InvalidParameter("no class has two or more members".into()));
    }
    let n = queries.len() as f64;
    let mean_of = |f: &dyn Fn(&QueryMetrics) -> f64| queries.iter().map(f).sum::<f64>() / n;
    let mean = Statistics {
        nn: mean_of(&|q| q.nn),
        first_tier: mean_of(&|q| q.first_tier),
        second_tier: mean_of(&|q| q.second_tier),
        dcg: mean_of(&|q| q.dcg),
    };
    let precision_recall = recall_levels()
        .into_iter()
        .enumerate()
        .map(|(j, r)| (r, mean_of(&|q| q.precision[j])))
        .collect();
    Ok(EvalReport {
        method: method.to_string(),
        normalization: first.normalization,
        n_models: histograms.len(),
        class_sizes,
        degenerate,
        skipped_queries,
        mean,
        precision_recall,
        queries,
        parameters: serde_json::Value::Null,
    })
}

impl EvalReport {
    pub const SUMMARY_HEADER: &'static str = "method,NN,FT,ST,DCG";

    pub fn summary_row(&self) -> String {
        let m = &self.mean;
        format!(
            "{},{},{},{},{}",
            self.method,
            crate::sig9(m.nn),
            crate::sig9(m.first_tier),
            crate::sig9(m.second_tier),
            crate::sig9(m.dcg)
        )
    }

    pub fn summary_csv(&self) -> String {
        format!("{}\n{}\n", Self::SUMMARY_HEADER, self.summary_row())
    }

    pub fn precision_recall_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.precision_recall {
            let _ = writeln!(out, "{},{}", crate::sig9(*r), crate::sig9(*p));
        }
        out
    }
}
