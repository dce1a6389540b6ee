//! Pixel accuracy and per-class intersection over union.
//!
//! Classes whose union is empty (absent from both prediction and ground
//! truth) are excluded from the mean rather than scored as 0 or 1.

use crate::error::{invalid, shape_err, Result};

fn check_pair(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return shape_err(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        ));
    }
    if gt.is_empty() {
        return shape_err("empty class grids");
    }
    Ok(())
}

/// Fraction of pixels whose predicted class equals the ground truth.
pub fn pixel_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_pair(pred, gt)?;
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gt.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouResult {
    pub miou: f64,
    /// `None` for classes with an empty union (or background when excluded).
    pub per_class: Vec<Option<f64>>,
}

/// Mean Jaccard index over classes present in either grid.
pub fn mean_iou(
    pred: &[usize],
    gt: &[usize],
    num_classes: usize,
    include_background: bool,
) -> Result<IouResult> {
    check_pair(pred, gt)?;
    check_range(pred, num_classes)?;
    check_range(gt, num_classes)?;
    let mut inter = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let first = usize::from(!include_background);
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (c >= first && union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    Ok(IouResult {
        miou: mean_of(&per_class),
        per_class,
    })
}

fn check_range(grid: &[usize], num_classes: usize) -> Result<()> {
    match grid.iter().find(|&&c| c >= num_classes) {
        Some(c) => invalid(format!("class {c} outside [0, {num_classes})")),
        None => Ok(()),
    }
}

fn mean_of(values: &[Option<f64>]) -> f64 {
    let (sum, n) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-class true/false positive and false negative pixel counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub num_classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            total: 0,
        }
    }

    pub fn from_grids(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<Self> {
        let mut c = Self::new(num_classes);
        c.add_grids(pred, gt)?;
        Ok(c)
    }

    pub fn add_grids(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        check_pair(pred, gt)?;
        check_range(pred, self.num_classes)?;
        check_range(gt, self.num_classes)?;
        for (&p, &g) in pred.iter().zip(gt) {
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        self.total += gt.len() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.num_classes, other.num_classes, "class count mismatch");
        for c in 0..self.num_classes {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.total += other.total;
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn pixel_accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.tp.iter().sum::<u64>() as f64 / self.total as f64
    }

    /// `TP / (TP + FP + FN)` per class, `None` where the union is empty.
    pub fn per_class_iou(&self, include_background: bool) -> Vec<Option<f64>> {
        let first = usize::from(!include_background);
        (0..self.num_classes)
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (c >= first && union > 0).then(|| self.tp[c] as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self, include_background: bool) -> f64 {
        mean_of(&self.per_class_iou(include_background))
    }
}
