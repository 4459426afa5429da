//! AUROC computation and the one-class benchmark protocol.
//!
//! For every requested category the benchmark trains a fresh model with that
//! category as normal, scores the full test split, labels every other
//! category anomalous, and reports the per-category AUC plus the average.
//! AUROC uses the midrank convention (ties get half credit), which makes the
//! rank statistic equal to the probability that a random anomalous sample
//! outscores a random normal one — and equal to trapezoidal integration of
//! the ROC curve.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{InteractionDataset, InteractionPair, Split};
use crate::distmap;
use crate::error::{Error, Result};
use crate::train::{train_one_class, TrainConfig};

/// One scored test clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// NLL under the trained model; higher means more anomalous.
    pub score: f64,
    /// 1 = anomalous (category differs from the normal class), 0 = normal.
    pub label: u8,
    pub category: String,
}

/// Area under the ROC curve via midranks. Requires both classes present.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let n_pos = samples.iter().filter(|s| s.label == 1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUROC needs both classes; got {n_pos} anomalous and {n_neg} normal samples"
        )));
    }
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Numeric("AUROC input contains a non-finite score".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    // Midranks: tied scores share the average of their 1-based positions.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && samples[order[j]].score == samples[order[i]].score {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if samples[idx].label == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// ROC curve points as (FPR, TPR) pairs from (0,0) to (1,1), sweeping the
/// threshold downward through every distinct score.
pub fn roc_points(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    let n_pos = samples.iter().filter(|s| s.label == 1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].score.total_cmp(&samples[a].score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && samples[order[j]].score == samples[order[i]].score {
            if samples[order[j]].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(points)
}

/// Result row for one normal category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub auc: f64,
    /// Displacement statistic over all samples of this category.
    pub dsp: f64,
    pub train_count: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    /// ROC curve of this category's run as (FPR, TPR) pairs.
    pub roc: Vec<(f64, f64)>,
}

/// Per-category benchmark table plus the average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<CategoryResult>,
    pub average_auc: f64,
    /// SHA-256 of the resolved base configuration JSON.
    pub config_fingerprint: String,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Plain-text table with one row per category and an average row.
    pub fn text_table(&self, include_dsp: bool) -> String {
        let mut out = String::new();
        let name_w = self
            .rows
            .iter()
            .map(|r| r.category.len())
            .chain(["category".len(), "Avg.".len()])
            .max()
            .unwrap_or(8);
        let header = if include_dsp {
            format!("{:name_w$}  {:>7}  {:>7}", "category", "AUC", "dsp")
        } else {
            format!("{:name_w$}  {:>7}", "category", "AUC")
        };
        out.push_str(&header);
        out.push('\n');
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        for r in &self.rows {
            if include_dsp {
                out.push_str(&format!(
                    "{:name_w$}  {:>7.4}  {:>7.4}\n",
                    r.category, r.auc, r.dsp
                ));
            } else {
                out.push_str(&format!("{:name_w$}  {:>7.4}\n", r.category, r.auc));
            }
        }
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        if include_dsp {
            out.push_str(&format!("{:name_w$}  {:>7.4}  {:>7}\n", "Avg.", self.average_auc, ""));
        } else {
            out.push_str(&format!("{:name_w$}  {:>7.4}\n", "Avg.", self.average_auc));
        }
        out
    }
}

/// Stable fingerprint of a configuration: SHA-256 over its JSON form.
pub fn config_fingerprint(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Train/test division of one dataset. Explicit split tags win; when the
/// dataset carries no tags at all, each category is shuffled with a seed
/// derived from (base seed, category name) and divided 80/20. In a tagged
/// dataset, untagged samples default to the training side.
fn divide<'a>(
    dataset: &'a InteractionDataset,
    seed: u64,
) -> (Vec<&'a InteractionPair>, Vec<&'a InteractionPair>) {
    let has_tags = dataset.samples.iter().any(|s| s.split.is_some());
    if has_tags {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for s in &dataset.samples {
            match s.split {
                Some(Split::Test) => test.push(s),
                _ => train.push(s),
            }
        }
        return (train, test);
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for category in &dataset.categories {
        let members: Vec<&InteractionPair> = dataset
            .samples
            .iter()
            .filter(|s| &s.category == category)
            .collect();
        let mut hasher = Sha256::new();
        hasher.update(category.as_bytes());
        let digest = hasher.finalize();
        let tag = u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"));
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ tag));
        let n_train = ((members.len() as f64) * 0.8).round() as usize;
        let n_train = n_train.clamp(1.min(members.len()), members.len());
        for (i, &idx) in order.iter().enumerate() {
            if i < n_train {
                train.push(members[idx]);
            } else {
                test.push(members[idx]);
            }
        }
    }
    (train, test)
}

/// Runs the one-class protocol for every category in `categories` and
/// assembles the report, training up to `threads` categories in parallel.
/// Results are merged in category order regardless of thread timing.
pub fn run_benchmark(
    dataset: &InteractionDataset,
    categories: &[String],
    base_cfg: &TrainConfig,
    threads: usize,
) -> Result<BenchmarkReport> {
    if categories.is_empty() {
        return Err(Error::Config("benchmark needs at least one category".into()));
    }
    for c in categories {
        if !dataset.categories.contains(c) {
            return Err(Error::Data(format!("category '{c}' not present in the dataset")));
        }
    }
    base_cfg.validate()?;
    let threads = threads.max(1).min(categories.len());
    let (train_split, test_split) = divide(dataset, base_cfg.seed);

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..categories.len()).collect());
    let slots: Mutex<Vec<Option<CategoryResult>>> = Mutex::new(vec![None; categories.len()]);
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    let run_category = |index: usize| -> Result<CategoryResult> {
        let category = &categories[index];
        let cfg = TrainConfig {
            normal_category: category.clone(),
            ..base_cfg.clone()
        };
        let train_set = InteractionDataset::from_samples(
            train_split
                .iter()
                .filter(|s| &s.category == category)
                .map(|&s| s.clone())
                .collect(),
        )?;
        let model = train_one_class(&train_set, &cfg)?;
        let scored = test_split
            .iter()
            .map(|pair| {
                Ok(ScoredSample {
                    score: model.score(pair)?,
                    label: u8::from(&pair.category != category),
                    category: pair.category.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let members: Vec<InteractionPair> = dataset
            .samples
            .iter()
            .filter(|s| &s.category == category)
            .cloned()
            .collect();
        Ok(CategoryResult {
            category: category.clone(),
            auc: auroc(&scored)?,
            dsp: distmap::displacement_statistic(&members)?,
            train_count: train_set.samples.len(),
            test_normal: scored.iter().filter(|s| s.label == 0).count(),
            test_anomalous: scored.iter().filter(|s| s.label == 1).count(),
            roc: roc_points(&scored)?,
        })
    };

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let index = match queue.lock().expect("queue lock").pop_front() {
                    Some(i) => i,
                    None => break,
                };
                match run_category(index) {
                    Ok(row) => slots.lock().expect("slots lock")[index] = Some(row),
                    Err(e) => {
                        failure.lock().expect("failure lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let mut rows: Vec<CategoryResult> = slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|r| r.expect("every category ran"))
        .collect();
    rows.sort_by(|a, b| a.category.cmp(&b.category));
    let average_auc = rows.iter().map(|r| r.auc).sum::<f64>() / rows.len() as f64;
    Ok(BenchmarkReport {
        rows,
        average_auc,
        config_fingerprint: config_fingerprint(base_cfg),
    })
}
