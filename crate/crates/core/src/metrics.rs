//! Cluster quality (homogeneity, completeness, V-measure), the k sweep, and
//! classification reports.
//!
//! Entropies use natural logarithms; the base cancels in every ratio.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{fit_best_of, FeatureVector, FitOptions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class-by-cluster counts. Rows follow the sorted distinct labels, columns
/// the sorted distinct cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let width = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != width) {
            return Err(Error::Domain("ragged contingency table".into()));
        }
        let n = counts.iter().flatten().sum();
        if n == 0 {
            return Err(Error::EmptyInput("contingency table is empty".into()));
        }
        Ok(Self { counts, n })
    }

    pub fn transpose(&self) -> Self {
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        Self {
            counts: (0..cols)
                .map(|j| (0..rows).map(|i| self.counts[i][j]).collect())
                .collect(),
            n: self.n,
        }
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        self.transpose().row_sums()
    }
}

pub fn contingency<L: Ord + Clone>(labels: &[L], clusters: &[usize]) -> Result<ContingencyTable> {
    if labels.len() != clusters.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: clusters.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels".into()));
    }
    let rows: BTreeMap<&L, usize> = labels
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let cols: BTreeMap<usize, usize> = clusters
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (l, c) in labels.iter().zip(clusters) {
        counts[rows[l]][cols[c]] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: labels.len() as u64,
    })
}

fn entropy(marginal: &[u64], n: u64) -> f64 {
    let n = n as f64;
    marginal
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `H(row | column)` for the table.
fn conditional_entropy(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let cols = t.col_sums();
    let mut h = 0.0;
    for row in &t.counts {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                h -= (c as f64 / n) * (c as f64 / cols[j] as f64).ln();
            }
        }
    }
    h
}

/// `1 - H(class | cluster) / H(class)`, or 1 when there is a single class.
pub fn homogeneity(t: &ContingencyTable) -> f64 {
    let h_class = entropy(&t.row_sums(), t.n);
    if h_class <= 0.0 {
        return 1.0;
    }
    (1.0 - conditional_entropy(t) / h_class).clamp(0.0, 1.0)
}

/// `1 - H(cluster | class) / H(cluster)`, or 1 when there is a single
/// cluster.
pub fn completeness(t: &ContingencyTable) -> f64 {
    homogeneity(&t.transpose())
}

/// Harmonic mean of homogeneity and completeness, 0 when both are 0.
pub fn v_measure(h: f64, c: f64) -> Result<f64> {
    for (name, v) in [("homogeneity", h), ("completeness", c)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} {v} outside [0, 1]")));
        }
    }
    if h + c == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * h * c / (h + c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

impl ClusterQuality {
    pub fn from_table(t: &ContingencyTable) -> Self {
        let h = homogeneity(t);
        let c = completeness(t);
        Self {
            homogeneity: h,
            completeness: c,
            v_measure: v_measure(h, c).expect("h and c are clamped to [0, 1]"),
        }
    }

    pub fn score<L: Ord + Clone>(labels: &[L], clusters: &[usize]) -> Result<Self> {
        Ok(Self::from_table(&contingency(labels, clusters)?))
    }
}

/// How the sweep picks `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Smallest k whose homogeneity is within `tolerance` of the best
    /// homogeneity in the sweep.
    HomogeneityPriority { tolerance: f64 },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::HomogeneityPriority { tolerance: 0.01 }
    }
}

impl SelectionPolicy {
    pub fn choose(&self, entries: &[SweepEntry]) -> Option<usize> {
        match *self {
            SelectionPolicy::HomogeneityPriority { tolerance } => {
                let best = entries
                    .iter()
                    .map(|e| e.quality.homogeneity)
                    .fold(f64::NEG_INFINITY, f64::max);
                entries
                    .iter()
                    .find(|e| e.quality.homogeneity >= best - tolerance)
                    .map(|e| e.k)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub quality: ClusterQuality,
    pub inertia: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepResult {
    pub entries: Vec<SweepEntry>,
    pub chosen_k: usize,
    pub policy: SelectionPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub n_init: usize,
    pub fit: FitOptions,
    pub policy: SelectionPolicy,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n_init: 5,
            fit: FitOptions::default(),
            policy: SelectionPolicy::default(),
        }
    }
}

/// Fits every `k` in `k_min..=k_max` and scores it against `labels`.
pub fn k_sweep<T: Scalar, L: Ord + Clone + Sync>(
    points: &[FeatureVector<T>],
    labels: &[L],
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<KSweepResult> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    if k_min < 2 || k_min > k_max {
        return Err(Error::Domain(format!(
            "k range {k_min}..={k_max} must satisfy 2 <= k_min <= k_max"
        )));
    }
    if k_max > points.len() {
        return Err(Error::KTooLarge {
            k: k_max,
            available: points.len(),
        });
    }
    let entries = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let model = fit_best_of(points, k, seed, options.n_init, &options.fit)?;
            Ok(SweepEntry {
                k,
                quality: ClusterQuality::score(labels, &model.labels())?,
                inertia: model.inertia,
                seed: model.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen_k = options.policy.choose(&entries).expect("non-empty sweep");
    Ok(KSweepResult {
        entries,
        chosen_k,
        policy: options.policy,
    })
}

impl KSweepResult {
    pub fn entry(&self, k: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.k == k)
    }

    pub fn chosen(&self) -> &SweepEntry {
        self.entry(self.chosen_k).expect("chosen_k is in the sweep")
    }

    /// CSV with header `k,homogeneity,completeness,v_measure,inertia,seed`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "k",
            "homogeneity",
            "completeness",
            "v_measure",
            "inertia",
            "seed",
        ])
        .map_err(|e| Error::Encode(e.to_string()))?;
        for e in &self.entries {
            w.write_record([
                e.k.to_string(),
                e.quality.homogeneity.to_string(),
                e.quality.completeness.to_string(),
                e.quality.v_measure.to_string(),
                e.inertia.to_string(),
                e.seed.to_string(),
            ])
            .map_err(|e| Error::Encode(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Encode(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::Encode(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses rows written by [`KSweepResult::to_csv`].
    pub fn entries_from_csv(text: &str) -> Result<Vec<SweepEntry>> {
        #[derive(Deserialize)]
        struct Row {
            k: usize,
            homogeneity: f64,
            completeness: f64,
            v_measure: f64,
            inertia: f64,
            seed: u64,
        }
        let mut r = csv::Reader::from_reader(text.as_bytes());
        r.deserialize::<Row>()
            .map(|row| {
                let row = row.map_err(|e| Error::ManifestParse(e.to_string()))?;
                Ok(SweepEntry {
                    k: row.k,
                    quality: ClusterQuality {
                        homogeneity: row.homogeneity,
                        completeness: row.completeness,
                        v_measure: row.v_measure,
                    },
                    inertia: row.inertia,
                    seed: row.seed,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Confusion matrix, accuracy, one-vs-rest precision/recall/F1 per class and
/// their macro averages. Labels must belong to `classes`.
pub fn classification_report<S: AsRef<str>>(
    y_true: &[S],
    y_pred: &[S],
    classes: &[String],
) -> Result<ClassificationReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let index = |s: &str| {
        classes
            .iter()
            .position(|c| c == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    };
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        confusion[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let (precision, u1) = ratio(tp, predicted);
            let (recall, u2) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: classes[c].clone(),
                precision,
                recall,
                f1,
                support,
                undefined: u1 || u2,
            }
        })
        .collect();
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(ClassificationReport {
        classes: classes.to_vec(),
        accuracy: correct as f64 / y_true.len() as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion,
    })
}

impl ClassificationReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == name)
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self).map_err(|e| Error::Encode(e.to_string()))
    }
}
