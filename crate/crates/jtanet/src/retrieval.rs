//! Feature database, nearest-neighbor retrieval, and precision evaluation.
//!
//! Retrieval is an exhaustive scan: with at most a few tens of thousands of
//! database rows and feature lengths up to 1024, brute force is exact and
//! fast, and exactness is what the precision numbers are defined on. Ranking
//! sorts by Euclidean distance with ties broken toward the lower database
//! index, so results are fully reproducible.

use crate::checkpoint::checkpoint_fingerprint;
use crate::container::{ContainerBuilder, ContainerReader};
use crate::data::PatchRecord;
use crate::error::{Error, Result};
use crate::model::{EmbeddingBatch, ModelParams};
use crate::tensor::Tensor;
use crate::train::extract_features;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"JTDB";
const VERSION: u32 = 1;

/// Eval-mode features of every training patch, ready to be queried.
///
/// Invariants: `features` is `(N, dim)` with one row per entry of `labels`
/// and `ids`; `fingerprint` identifies the checkpoint that produced the
/// features, so a stale database is detectable.
#[derive(Debug, Clone)]
pub struct FeatureDatabase {
    pub features: Tensor,
    pub labels: Vec<u32>,
    pub ids: Vec<u32>,
    pub class_names: Vec<String>,
    pub fingerprint: String,
}

impl FeatureDatabase {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (n, _) = self.features.dims2()?;
        if n != self.labels.len() || n != self.ids.len() {
            return Err(Error::shape(format!(
                "{n} feature rows, {} labels, {} ids",
                self.labels.len(),
                self.ids.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.class_names.len()) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {} classes",
                self.class_names.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub query_id: Option<u32>,
    pub query_label: Option<u32>,
    /// `(database index, Euclidean distance)`, distances non-decreasing.
    pub ranked: Vec<(usize, f64)>,
}

pub fn build_index(
    params: &ModelParams,
    records: &[PatchRecord],
    class_names: &[String],
) -> Result<FeatureDatabase> {
    if records.is_empty() {
        return Err(Error::invalid("cannot build a database from zero patches".to_string()));
    }
    let e = extract_features(params, records)?;
    let db = FeatureDatabase {
        features: e.features,
        labels: e.labels,
        ids: (0..records.len() as u32).collect(),
        class_names: class_names.to_vec(),
        fingerprint: checkpoint_fingerprint(params),
    };
    db.validate()?;
    Ok(db)
}

/// Indices of the `delta` database rows nearest to `feature`, with their
/// Euclidean distances. Ranking happens on squared distances (the square
/// root is monotone) and the reported distances take the root at the end.
pub fn query(db: &FeatureDatabase, feature: &[f64], delta: usize) -> Result<RetrievalResult> {
    let (n, dim) = db.features.dims2()?;
    if feature.len() != dim {
        return Err(Error::shape(format!(
            "query feature has length {}, database rows have {dim}",
            feature.len()
        )));
    }
    if delta == 0 || delta > n {
        return Err(Error::invalid(format!(
            "delta must be between 1 and the database size {n}, got {delta}"
        )));
    }
    let fs = db.features.data();
    let mut d2: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let row = &fs[i * dim..(i + 1) * dim];
        let mut acc = 0.0;
        for v in 0..dim {
            let diff = feature[v] - row[v];
            acc += diff * diff;
        }
        d2.push(acc);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| d2[i].total_cmp(&d2[j]).then(i.cmp(&j)));
    let ranked = order[..delta].iter().map(|&i| (i, d2[i].sqrt())).collect();
    Ok(RetrievalResult { query_id: None, query_label: None, ranked })
}

/// Precision for one delta: the mean over queries of
/// `100 * correct / delta`, plus per-query values and a per-class average
/// (classes with no query present stay `None`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub delta: usize,
    pub mean: f64,
    pub per_query: Vec<f64>,
    pub per_class: Vec<Option<f64>>,
}

/// Precision of the database against already-extracted query features.
pub fn precision_for_features(
    db: &FeatureDatabase,
    queries: &EmbeddingBatch,
    delta: usize,
) -> Result<PrecisionReport> {
    db.validate()?;
    let (nq, dim) = queries.features.dims2()?;
    if nq == 0 {
        return Err(Error::invalid("precision needs at least one query".to_string()));
    }
    if nq != queries.labels.len() {
        return Err(Error::shape(format!("{nq} query rows, {} labels", queries.labels.len())));
    }
    let qs = queries.features.data();
    let per_query: Vec<f64> = (0..nq)
        .into_par_iter()
        .map(|j| {
            let r = query(db, &qs[j * dim..(j + 1) * dim], delta)?;
            let correct =
                r.ranked.iter().filter(|&&(i, _)| db.labels[i] == queries.labels[j]).count();
            Ok(100.0 * correct as f64 / delta as f64)
        })
        .collect::<Result<_>>()?;
    let mean = per_query.iter().sum::<f64>() / nq as f64;

    let mut class_sum = vec![0.0; db.class_names.len()];
    let mut class_n = vec![0usize; db.class_names.len()];
    for (j, &label) in queries.labels.iter().enumerate() {
        let c = label as usize;
        if c >= class_sum.len() {
            return Err(Error::invalid(format!(
                "query label {label} out of range for {} classes",
                class_sum.len()
            )));
        }
        class_sum[c] += per_query[j];
        class_n[c] += 1;
    }
    let per_class = class_sum
        .iter()
        .zip(&class_n)
        .map(|(&s, &n)| if n > 0 { Some(s / n as f64) } else { None })
        .collect();

    Ok(PrecisionReport { delta, mean, per_query, per_class })
}

pub fn mean_precision(
    db: &FeatureDatabase,
    params: &ModelParams,
    test: &[PatchRecord],
    delta: usize,
) -> Result<PrecisionReport> {
    let queries = extract_features(params, test)?;
    precision_for_features(db, &queries, delta)
}

/// The delta grid retrieval curves are evaluated on: 5 to 100 in steps of 5.
pub fn sweep_deltas() -> Vec<usize> {
    (1..=20).map(|k| 5 * k).collect()
}

/// Evaluates precision at several deltas, extracting query features once.
pub fn precision_sweep(
    db: &FeatureDatabase,
    params: &ModelParams,
    test: &[PatchRecord],
    deltas: &[usize],
) -> Result<Vec<PrecisionReport>> {
    let queries = extract_features(params, test)?;
    deltas.iter().map(|&d| precision_for_features(db, &queries, d)).collect()
}

/// Writes `delta,mean,<one column per class>` rows; classes without queries
/// produce empty cells.
pub fn write_precision_csv(w: &mut impl Write, class_names: &[String], reports: &[PrecisionReport]) -> std::io::Result<()> {
    write!(w, "delta,mean")?;
    for name in class_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for r in reports {
        write!(w, "{},{}", r.delta, r.mean)?;
        for c in &r.per_class {
            match c {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DatabaseMeta {
    fingerprint: String,
    class_names: Vec<String>,
}

pub fn save_database(path: &Path, db: &FeatureDatabase) -> Result<()> {
    db.validate()?;
    let meta = DatabaseMeta {
        fingerprint: db.fingerprint.clone(),
        class_names: db.class_names.clone(),
    };
    let mut b = ContainerBuilder::new();
    b.add_f64("features", db.features.shape(), db.features.data());
    b.add_u32("labels", &[db.labels.len()], &db.labels);
    b.add_u32("ids", &[db.ids.len()], &db.ids);
    b.write(path, MAGIC, VERSION, serde_json::to_value(&meta)?)
}

pub fn load_database(path: &Path) -> Result<FeatureDatabase> {
    let r = ContainerReader::open(path, MAGIC, VERSION)?;
    let meta: DatabaseMeta = serde_json::from_value(r.meta.clone())
        .map_err(|e| Error::format(path, format!("bad database metadata: {e}")))?;
    let (shape, data) = r.f64("features")?;
    let db = FeatureDatabase {
        features: Tensor::from_vec(&shape, data)?,
        labels: r.u32("labels")?.1,
        ids: r.u32("ids")?.1,
        class_names: meta.class_names,
        fingerprint: meta.fingerprint,
    };
    db.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(db)
}
