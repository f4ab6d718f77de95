//! Novelty scoring, rank-based ROC-AUC and per-class suite reports.

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

use crate::data::{ImageSet, OneClassSplit};
use crate::losses;
use crate::model::{CostReport, Generator, ModelError};
use crate::parallel;
use crate::tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("AUC needs at least one normal and one novel sample (normal {normal}, novel {novel})")]
    SingleClass { normal: usize, novel: usize },
    #[error("score {score} at index {index} is not finite")]
    NonFinite { index: usize, score: f64 },
    #[error("label {label} at index {index} is not binary")]
    BadLabel { index: usize, label: u8 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_index: usize,
    pub score: f64,
    /// 0 = normal, 1 = novel.
    pub label: u8,
}

/// Per-sample mean squared distance between the two latent codes, computed in
/// evaluation mode.
pub fn novelty_score<T: Real>(gen: &Generator<T>, x: &Tensor<T>) -> Result<Vec<f64>, ModelError> {
    let out = gen.forward(x)?;
    Ok((0..x.batch())
        .map(|i| losses::s_enc(out.z1.sample(i), out.z2.sample(i)).expect("latent shapes agree").to_f64_lossy())
        .collect())
}

/// Images scored per forward pass. Fixed so results never depend on thread count.
pub const SCORE_CHUNK: usize = 100;

/// Scores every image of a set.
pub fn score_set(gen: &Generator<f32>, set: &ImageSet) -> Result<Vec<f64>, ModelError> {
    let chunks: Vec<Vec<usize>> = (0..set.len()).collect::<Vec<_>>().chunks(SCORE_CHUNK).map(<[usize]>::to_vec).collect();
    let scored = parallel::map(&chunks, |idx| novelty_score(gen, &set.batch(idx).0));
    let mut scores = Vec::with_capacity(set.len());
    for s in scored {
        scores.extend(s?);
    }
    Ok(scores)
}

/// Probability that a random novel sample scores above a random normal sample,
/// ties counting one half. Computed from average ranks.
pub fn auc(records: &[ScoreRecord]) -> Result<f64, EvalError> {
    for (index, r) in records.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(EvalError::NonFinite { index, score: r.score });
        }
        if r.label > 1 {
            return Err(EvalError::BadLabel { index, label: r.label });
        }
    }
    let novel = records.iter().filter(|r| r.label == 1).count();
    let normal = records.len() - novel;
    if novel == 0 || normal == 0 {
        return Err(EvalError::SingleClass { normal, novel });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].score.total_cmp(&records[b].score));
    // Sum of (1-based, tie-averaged) ranks of the novel samples, doubled to stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && records[order[end]].score == records[order[start]].score {
            end += 1;
        }
        let twice_avg_rank = (start + 1 + end) as u64; // (start+1) + end, i.e. 2 * mean rank
        let novel_in_group = order[start..end].iter().filter(|&&i| records[i].label == 1).count() as u64;
        twice_rank_sum += twice_avg_rank * novel_in_group;
        start = end;
    }
    let n1 = novel as u64;
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(twice_u as f64 / 2.0 / (normal as f64 * novel as f64))
}

pub fn records_from(scores: &[f64], labels: &[u8]) -> Vec<ScoreRecord> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(sample_index, (&score, &label))| ScoreRecord { sample_index, score, label })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl ScoreStats {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let count = values.clone().count();
        if count == 0 {
            return Self { count, mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.clone().sum::<f64>() / count as f64;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self { count, mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub normal: ScoreStats,
    pub novel: ScoreStats,
}

/// Scores the test partition and reports AUC with per-label score statistics.
pub fn evaluate_model(gen: &Generator<f32>, split: &OneClassSplit) -> Result<Evaluation, EvalError> {
    let scores = score_set(gen, &split.test)?;
    let records = records_from(&scores, &split.test_labels);
    let auc = auc(&records)?;
    let pick = |label| records.iter().filter(move |r| r.label == label).map(|r| r.score);
    Ok(Evaluation { auc, normal: ScoreStats::of(pick(0)), novel: ScoreStats::of(pick(1)) })
}

/// One row of a suite report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: u8,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// `(repeat, message)` for every cell that did not produce an AUC.
    pub failures: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub dataset: String,
    pub rows: Vec<ClassRow>,
    /// Mean over rows that have at least one successful repeat.
    pub mean_auc: f64,
    pub cost: Option<CostReport>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
}

impl SuiteReport {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.failures.is_empty())
    }

    /// One line per class, then a `MEAN` line. Failed cells are counted in the `failed` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,mean_auc,std_auc,repeats,failed\n");
        for r in &self.rows {
            out += &format!("{},{:.6},{:.6},{},{}\n", r.class, r.mean_auc, r.std_auc, r.aucs.len(), r.failures.len());
        }
        let failed: usize = self.rows.iter().map(|r| r.failures.len()).sum();
        let ok: usize = self.rows.iter().map(|r| r.aucs.len()).sum();
        out += &format!("MEAN,{:.6},,{},{}\n", self.mean_auc, ok, failed);
        out
    }
}

/// Runs `cell(class, repeat)` for every combination and aggregates. A cell that
/// errors or panics is recorded as a failure without stopping the others.
pub fn run_suite<F>(dataset: &str, classes: &[u8], repeats: usize, seeds: Vec<u64>, epochs: usize, cost: Option<CostReport>, cell: F) -> SuiteReport
where
    F: Fn(u8, usize) -> Result<f64, String> + Send + Sync,
{
    let cells: Vec<(u8, usize)> = classes.iter().flat_map(|&c| (0..repeats).map(move |r| (c, r))).collect();
    let results = parallel::map(&cells, |&(class, repeat)| {
        catch_unwind(AssertUnwindSafe(|| cell(class, repeat))).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "cell panicked".into());
            Err(format!("panic: {msg}"))
        })
    });
    let mut rows: Vec<ClassRow> = classes
        .iter()
        .map(|&class| ClassRow { class, aucs: Vec::new(), mean_auc: f64::NAN, std_auc: f64::NAN, failures: Vec::new() })
        .collect();
    for (&(class, repeat), result) in cells.iter().zip(results) {
        let row = rows.iter_mut().find(|r| r.class == class).expect("row exists");
        match result {
            Ok(auc) if auc.is_finite() => row.aucs.push(auc),
            Ok(auc) => row.failures.push((repeat, format!("non-finite AUC {auc}"))),
            Err(e) => row.failures.push((repeat, e)),
        }
    }
    for row in &mut rows {
        if !row.aucs.is_empty() {
            let stats = ScoreStats::of(row.aucs.iter().copied());
            row.mean_auc = stats.mean;
            row.std_auc = stats.std;
        }
    }
    let done: Vec<f64> = rows.iter().filter(|r| !r.aucs.is_empty()).map(|r| r.mean_auc).collect();
    let mean_auc = if done.is_empty() { f64::NAN } else { done.iter().sum::<f64>() / done.len() as f64 };
    SuiteReport { dataset: dataset.to_string(), rows, mean_auc, cost, seeds, epochs }
}
