//! Per-class label-map features, labeled datasets, cross-validation folds and
//! recursive feature elimination.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{self, BoostedEnsemble, TrainConfig};
use crate::labelmap::{ClassId, ClassTaxonomy, LabelMap};
use crate::scenario::ScenarioLabel;

/// Centroid recorded for a class with no pixels.
pub const ABSENT_CENTROID: (f64, f64) = (-1.0, -1.0);

/// Values describing one class in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFeatures {
    pub class: ClassId,
    pub presence: bool,
    pub pixel_sum: u64,
    /// Mean pixel coordinate `(x, y)`; [`ABSENT_CENTROID`] when absent.
    pub centroid: (f64, f64),
}

/// Presence flag, pixel count and centroid for every taxonomy class in
/// ascending class-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    classes: Vec<ClassFeatures>,
}

pub const FEATURES_PER_CLASS: usize = 4;

impl FeatureVector {
    pub fn classes(&self) -> &[ClassFeatures] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassFeatures> {
        self.classes.get(id as usize)
    }

    /// Fraction of all pixels held by `id`.
    pub fn fraction(&self, id: ClassId) -> f64 {
        let total: u64 = self.classes.iter().map(|c| c.pixel_sum).sum();
        match self.class(id) {
            Some(c) if total > 0 => c.pixel_sum as f64 / total as f64,
            _ => 0.0,
        }
    }

    /// Flattened values in column order `presence_c, pixsum_c, cx_c, cy_c`.
    pub fn values(&self) -> Vec<f64> {
        self.classes
            .iter()
            .flat_map(|c| {
                [
                    if c.presence { 1.0 } else { 0.0 },
                    c.pixel_sum as f64,
                    c.centroid.0,
                    c.centroid.1,
                ]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len() * FEATURES_PER_CLASS
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Column names matching [`FeatureVector::values`].
pub fn feature_names(tax: &ClassTaxonomy) -> Vec<String> {
    tax.ids()
        .flat_map(|id| {
            [
                format!("presence_{id}"),
                format!("pixsum_{id}"),
                format!("cx_{id}"),
                format!("cy_{id}"),
            ]
        })
        .collect()
}

pub fn extract_features(map: &LabelMap, tax: &ClassTaxonomy) -> FeatureVector {
    let k = tax.len();
    let mut count = vec![0u64; k];
    let mut sx = vec![0u64; k];
    let mut sy = vec![0u64; k];
    let w = map.width();
    for (i, &c) in map.cells().iter().enumerate() {
        // Cells outside the taxonomy are ignored; callers validate maps first.
        if let Some(slot) = count.get_mut(c as usize) {
            *slot += 1;
            sx[c as usize] += (i % w) as u64;
            sy[c as usize] += (i / w) as u64;
        }
    }
    let classes = (0..k)
        .map(|c| ClassFeatures {
            class: c as ClassId,
            presence: count[c] > 0,
            pixel_sum: count[c],
            centroid: if count[c] > 0 {
                (sx[c] as f64 / count[c] as f64, sy[c] as f64 / count[c] as f64)
            } else {
                ABSENT_CENTROID
            },
        })
        .collect();
    FeatureVector { classes }
}

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    feature_names: Vec<String>,
    class_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        feature_names: Vec<String>,
        class_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", rows.len()),
                found: labels.len().to_string(),
            });
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != feature_names.len()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", feature_names.len()),
                found: format!("{} in row {i}", r.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!("label {l} outside {} classes", class_names.len())));
        }
        Ok(LabeledDataset {
            feature_names,
            class_names,
            rows,
            labels,
        })
    }

    /// Dataset over the four scenario labels.
    pub fn scenarios(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: &[ScenarioLabel]) -> Result<Self> {
        Self::new(
            feature_names,
            ScenarioLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            rows,
            labels.iter().map(|l| l.index()).collect(),
        )
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.width()) {
            return Err(Error::invalid(format!("column {c} outside width {}", self.width())));
        }
        Ok(LabeledDataset {
            feature_names: columns.iter().map(|&c| self.feature_names[c].clone()).collect(),
            class_names: self.class_names.clone(),
            rows: self.rows.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect(),
            labels: self.labels.clone(),
        })
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes the header (feature names then `label`) and one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map_err = |e: csv::Error| Error::format("feature csv", e.to_string());
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header).map_err(map_err)?;
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(self.class_names[label].clone());
            w.write_record(&record).map_err(map_err)?;
        }
        w.flush().map_err(|e| Error::format("feature csv", e.to_string()))
    }

    /// Reads a labeled feature CSV. Class names are the scenario labels when
    /// every label names one, otherwise the sorted distinct label strings.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let ctx = "feature csv";
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::format(ctx, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.last().map(String::as_str) != Some("label") {
            return Err(Error::format(ctx, "last column must be \"label\""));
        }
        let feature_names = header[..header.len() - 1].to_vec();
        let mut rows = Vec::new();
        let mut raw_labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(ctx, e.to_string()))?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (col, field) in record.iter().take(feature_names.len()).enumerate() {
                row.push(field.trim().parse::<f64>().map_err(|_| {
                    Error::format(ctx, format!("row {}: column {} value {field:?} is not a number", line + 1, col))
                })?);
            }
            rows.push(row);
            raw_labels.push(record.get(feature_names.len()).unwrap_or("").trim().to_string());
        }
        let class_names: Vec<String> = if raw_labels.iter().all(|l| ScenarioLabel::from_name(l).is_some()) {
            ScenarioLabel::ALL.iter().map(|l| l.name().to_string()).collect()
        } else {
            let mut names = raw_labels.clone();
            names.sort();
            names.dedup();
            names
        };
        let labels = raw_labels
            .iter()
            .map(|l| class_names.iter().position(|c| c == l).expect("label collected above"))
            .collect();
        Self::new(feature_names, class_names, rows, labels)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Ranks features by their share of the total split gain in `model`.
pub fn feature_importance(model: &BoostedEnsemble) -> Result<Vec<(String, f64)>> {
    if model.n_rounds() == 0 {
        return Err(Error::Model("model has no trees".into()));
    }
    let gains = gain_per_feature(model);
    let total: f64 = gains.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Model("model has no splits".into()));
    }
    let mut ranked: Vec<(usize, f64)> = gains.into_iter().map(|g| g / total).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .map(|(f, share)| (model.feature_names()[f].clone(), share))
        .collect())
}

fn gain_per_feature(model: &BoostedEnsemble) -> Vec<f64> {
    let mut gains = vec![0.0; model.width()];
    for (f, g) in model.split_gains() {
        gains[f] += g;
    }
    gains
}

/// Stratified fold assignment: each class's rows are shuffled with `seed` and
/// dealt round-robin across `k` folds.
pub fn stratified_folds(data: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let counts = data.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n < k {
            return Err(Error::invalid(format!(
                "class {:?} has {n} rows, fewer than {k} folds; some fold would lack it",
                data.class_names()[c]
            )));
        }
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::invalid("cross-validation needs at least two labels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; data.n_rows()];
    let mut offset = 0;
    for class in 0..data.n_classes() {
        let mut members: Vec<usize> = (0..data.n_rows()).filter(|&i| data.labels()[i] == class).collect();
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + j) % k;
        }
        offset += members.len();
    }
    Ok(fold_of)
}

/// Out-of-fold predicted labels, one per row. Folds train in parallel and
/// results are gathered in row order.
pub fn cross_val_predict(data: &LabeledDataset, folds: usize, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let fold_of = stratified_folds(data, folds, cfg.seed)?;
    let per_fold: Vec<Vec<(usize, usize)>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train_idx: Vec<usize> = (0..data.n_rows()).filter(|&i| fold_of[i] != fold).collect();
            let model = gbdt::train(&data.select_rows(&train_idx), cfg)?;
            (0..data.n_rows())
                .filter(|&i| fold_of[i] == fold)
                .map(|i| Ok((i, model.predict(&data.rows()[i])?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut pred = vec![0; data.n_rows()];
    for (i, p) in per_fold.into_iter().flatten() {
        pred[i] = p;
    }
    Ok(pred)
}

/// Mean k-fold accuracy.
pub fn cross_val_accuracy(data: &LabeledDataset, folds: usize, cfg: &TrainConfig) -> Result<f64> {
    let pred = cross_val_predict(data, folds, cfg)?;
    let fold_of = stratified_folds(data, folds, cfg.seed)?;
    let mut correct = vec![0usize; folds];
    let mut total = vec![0usize; folds];
    for i in 0..data.n_rows() {
        total[fold_of[i]] += 1;
        if pred[i] == data.labels()[i] {
            correct[fold_of[i]] += 1;
        }
    }
    Ok(correct.iter().zip(&total).map(|(&c, &t)| c as f64 / t as f64).sum::<f64>() / folds as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub selected: Vec<String>,
    /// `(subset size, mean cross-validated accuracy)` from full width down to
    /// the target size.
    pub cv_score_per_step: Vec<(usize, f64)>,
}

/// Recursive feature elimination: score the current subset by k-fold
/// accuracy, refit on all rows, drop the feature with the smallest gain share
/// (ties drop the later column) and repeat until `target_size` remain.
pub fn rfe_select(data: &LabeledDataset, folds: usize, target_size: usize, cfg: &TrainConfig) -> Result<FeatureSelection> {
    if target_size == 0 || target_size > data.width() {
        return Err(Error::invalid(format!(
            "target size {target_size} must lie in 1..={}",
            data.width()
        )));
    }
    cfg.validate()?;
    let mut current: Vec<usize> = (0..data.width()).collect();
    let mut trace = Vec::new();
    loop {
        let subset = data.select_columns(&current)?;
        trace.push((current.len(), cross_val_accuracy(&subset, folds, cfg)?));
        if current.len() == target_size {
            break;
        }
        let model = gbdt::train(&subset, cfg)?;
        let gains = gain_per_feature(&model);
        let mut drop = 0;
        for (pos, &g) in gains.iter().enumerate() {
            if g <= gains[drop] {
                drop = pos;
            }
        }
        current.remove(drop);
    }
    Ok(FeatureSelection {
        selected: current.iter().map(|&c| data.feature_names()[c].clone()).collect(),
        cv_score_per_step: trace,
    })
}
