//! Segmentation and model evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{ClassId, LabelMap};
use crate::motion::PixelPoint;

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `counts[i][j]` is the number of items of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix rows must be square"));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    /// Tallies paired (truth, prediction) labels.
    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} predictions", truth.len()),
                found: pred.len().to_string(),
            });
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::invalid(format!("label {} outside 0..{k}", t.max(p))));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    /// Adds another matrix of the same size in place.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::DimensionMismatch {
                expected: format!("k={}", self.k),
                found: format!("k={}", other.k),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k).map(|i| self.get(i, i)).sum::<u64>() as f64 / total as f64
    }
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, k: usize) -> Result<ConfusionMatrix> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", truth.width(), truth.height()),
            found: format!("{}x{}", pred.width(), pred.height()),
        });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&t, &p) in truth.cells().iter().zip(pred.cells()) {
        let (t, p) = (t as usize, p as usize);
        if t >= k || p >= k {
            return Err(Error::UnknownClass {
                class: t.max(p) as u32,
            });
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// How classes absent from both truth and prediction enter the mean IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentPolicy {
    #[default]
    ExcludeAbsent,
    IncludeAbsent,
}

impl std::str::FromStr for AbsentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "exclude_absent" => Ok(AbsentPolicy::ExcludeAbsent),
            "include_absent" => Ok(AbsentPolicy::IncludeAbsent),
            _ => Err(Error::invalid(format!("unknown absent-class policy {s:?}"))),
        }
    }
}

/// Per-class IoU; `None` where the class has neither support nor predictions.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.k)
        .map(|i| {
            let tp = cm.get(i, i);
            let union = cm.row_sum(i) + cm.col_sum(i) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

pub fn miou(cm: &ConfusionMatrix, policy: AbsentPolicy) -> Result<f64> {
    if cm.k == 0 {
        return Err(Error::invalid("confusion matrix has no classes"));
    }
    let ious = per_class_iou(cm);
    let (sum, n) = ious.iter().fold((0.0, 0usize), |(s, n), iou| match (iou, policy) {
        (Some(v), _) => (s + v, n + 1),
        (None, AbsentPolicy::IncludeAbsent) => (s, n + 1),
        (None, AbsentPolicy::ExcludeAbsent) => (s, n),
    });
    if ious.iter().all(Option::is_none) {
        return Err(Error::Undefined("every class is absent from truth and prediction".into()));
    }
    Ok(sum / n as f64)
}

/// Per-class F1 (0 when precision and recall are both 0).
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k)
        .map(|i| {
            let tp = cm.get(i, i) as f64;
            let predicted = cm.col_sum(i) as f64;
            let actual = cm.row_sum(i) as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if actual > 0.0 { tp / actual } else { 0.0 };
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.k == 0 {
        return Err(Error::invalid("confusion matrix has no classes"));
    }
    Ok(per_class_f1(cm).iter().sum::<f64>() / cm.k as f64)
}

/// Per-pixel class probabilities, stored pixel-major (`k` values per pixel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityField {
    width: usize,
    height: usize,
    k: usize,
    probs: Vec<f64>,
}

impl ProbabilityField {
    pub fn new(width: usize, height: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        if k == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("probability field needs positive width, height and k"));
        }
        if width.checked_mul(height).and_then(|n| n.checked_mul(k)) != Some(probs.len()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * k),
                found: probs.len().to_string(),
            });
        }
        for (i, px) in probs.chunks_exact(k).enumerate() {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("pixel {i} has a probability outside [0, 1]")));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("pixel {i} probabilities sum to {s}")));
            }
        }
        Ok(ProbabilityField { width, height, k, probs })
    }

    /// Probability 1 on the mapped class at every pixel.
    pub fn one_hot(map: &LabelMap, k: usize) -> Result<Self> {
        let mut probs = vec![0.0; map.len() * k];
        for (i, &c) in map.cells().iter().enumerate() {
            if c as usize >= k {
                return Err(Error::UnknownClass { class: c as u32 });
            }
            probs[i * k + c as usize] = 1.0;
        }
        Self::new(map.width(), map.height(), k, probs)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn prob(&self, pixel: usize, class: ClassId) -> f64 {
        self.probs[pixel * self.k + class as usize]
    }

    /// Most probable class per pixel (ties to the lower id).
    pub fn argmax_map(&self) -> LabelMap {
        let cells = self
            .probs
            .chunks_exact(self.k)
            .map(|px| {
                let mut best = 0;
                for (c, &p) in px.iter().enumerate() {
                    if p > px[best] {
                        best = c;
                    }
                }
                best as ClassId
            })
            .collect();
        LabelMap::new(self.width, self.height, cells).expect("dimensions already validated")
    }
}

/// Mean negative log-likelihood of the true class, probabilities floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy(pred: &ProbabilityField, truth: &LabelMap) -> Result<f64> {
    if (pred.width, pred.height) != (truth.width(), truth.height()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", truth.width(), truth.height()),
            found: format!("{}x{}", pred.width, pred.height),
        });
    }
    let mut sum = 0.0;
    for (i, &c) in truth.cells().iter().enumerate() {
        if c as usize >= pred.k {
            return Err(Error::UnknownClass { class: c as u32 });
        }
        sum -= pred.prob(i, c).clamp(PROB_FLOOR, 1.0).ln();
    }
    Ok(sum / truth.len() as f64)
}

/// Which list supplies the denominator of each percentage error term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapeDenominator {
    #[default]
    Reference,
    Model,
}

/// Mean absolute percentage error, in percent.
pub fn mape(model: &[f64], reference: &[f64], denominator: MapeDenominator) -> Result<f64> {
    if model.len() != reference.len() || model.is_empty() {
        return Err(Error::invalid(format!(
            "mape needs two equal non-empty lists, got {} and {}",
            model.len(),
            reference.len()
        )));
    }
    let mut sum = 0.0;
    for (i, (&m, &r)) in model.iter().zip(reference).enumerate() {
        let d = match denominator {
            MapeDenominator::Reference => r,
            MapeDenominator::Model => m,
        };
        if d == 0.0 {
            return Err(Error::invalid(format!("zero denominator at entry {i}")));
        }
        sum += ((m - r) / d).abs();
    }
    Ok(100.0 * sum / model.len() as f64)
}

/// Root mean squared Euclidean distance between paired points, in pixels.
pub fn rmse_points(a: &[PixelPoint], b: &[PixelPoint]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "rmse needs two equal non-empty sequences, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub cross_entropy: Option<f64>,
    pub f1_macro: f64,
}

impl SegmentationReport {
    pub fn from_confusion(cm: &ConfusionMatrix, policy: AbsentPolicy, cross_entropy: Option<f64>) -> Result<Self> {
        Ok(SegmentationReport {
            miou: miou(cm, policy)?,
            per_class_iou: per_class_iou(cm),
            cross_entropy,
            f1_macro: f1_macro(cm)?,
        })
    }
}
