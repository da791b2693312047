use crate::error::{Error, Result};
use crate::model::LabelMap;

/// `C x C` pixel counts, rows are ground truth and columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::shape("prediction and ground truth differ in size"));
        }
        pred.check_classes(self.classes)?;
        gt.check_classes(self.classes)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("cannot merge matrices over different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` where the union is empty.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|p| self.get(k, p)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|g| self.get(g, k)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with a non-empty union.
    pub fn miou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::domain("no class has a defined IoU"));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Mean IoU restricted to `subset`; undefined classes are skipped.
    pub fn miou_subset(&self, subset: &[usize]) -> Result<f64> {
        let ious = self.iou_per_class();
        let mut defined = Vec::new();
        for &k in subset {
            let iou = ious.get(k).ok_or(Error::Index {
                index: k,
                bound: self.classes,
            })?;
            defined.extend(iou);
        }
        if defined.is_empty() {
            return Err(Error::domain("no class in the subset has a defined IoU"));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        diag as f64 / total as f64
    }
}

pub fn confusion(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt)?;
    Ok(cm)
}

/// Mean and population standard deviation of the last `k` entries.
pub fn trajectory_stats(series: &[f64], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::domain("trajectory window must be at least 1"));
    }
    if k > series.len() {
        return Err(Error::domain(format!(
            "window {k} longer than series of {}",
            series.len()
        )));
    }
    let tail = &series[series.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
    Ok((mean, var.sqrt()))
}
