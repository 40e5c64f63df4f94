use crate::error::MetricError;
use crate::model::SegMap;
use crate::tensor::Tensor;

/// Probabilities are clamped here before taking the log.
const PROB_FLOOR: f64 = 1e-30;

fn check_label(label: u16, index: usize, classes: usize) -> Result<(), MetricError> {
    if label == 0 || label as usize > classes {
        return Err(MetricError::Label {
            label,
            index,
            classes,
        });
    }
    Ok(())
}

/// Mean of `-ln y[gt_i, i]` over pixels whose label differs from `ignore`.
pub fn cross_entropy(y: &Tensor, gt: &SegMap, ignore: Option<u16>) -> Result<f64, MetricError> {
    let (s, h, w) = y.chw()?;
    if (h, w) != (gt.height(), gt.width()) {
        return Err(MetricError::Size {
            pred: (h, w),
            gt: (gt.height(), gt.width()),
        });
    }
    let plane = h * w;
    let mut sum = 0f64;
    let mut n = 0usize;
    for (i, &label) in gt.labels().iter().enumerate() {
        if Some(label) == ignore {
            continue;
        }
        check_label(label, i, s)?;
        let p = y.data()[(label as usize - 1) * plane + i] as f64;
        sum -= p.max(PROB_FLOOR).ln();
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::NoPixels);
    }
    Ok(sum / n as f64)
}

/// Trade-off weight `alpha`, strictly between 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDConfig {
    alpha: f64,
}

impl RDConfig {
    pub fn new(alpha: f64) -> Result<Self, MetricError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(MetricError::Alpha(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `alpha * distortion + (1 - alpha) * rate`.
pub fn rd_loss(distortion: f64, rate: f64, cfg: RDConfig) -> f64 {
    cfg.alpha * distortion + (1.0 - cfg.alpha) * rate
}

/// `S x S` counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            ignored: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn get(&self, gt: u16, pred: u16) -> u64 {
        self.counts[(gt as usize - 1) * self.classes + pred as usize - 1]
    }

    pub fn counted(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(
        &mut self,
        pred: &SegMap,
        gt: &SegMap,
        ignore: Option<u16>,
    ) -> Result<(), MetricError> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(MetricError::Size {
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
            });
        }
        for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
            if Some(g) == ignore {
                self.ignored += 1;
                continue;
            }
            check_label(g, i, self.classes)?;
            check_label(p, i, self.classes)?;
            self.counts[(g as usize - 1) * self.classes + p as usize - 1] += 1;
        }
        Ok(())
    }

    /// Sums another shard's counts into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(
            self.classes, other.classes,
            "merging matrices of different class counts"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
    }

    /// Per-class IoU for classes seen in ground truth or prediction.
    pub fn ious(&self) -> Vec<(u16, f64)> {
        let s = self.classes;
        (0..s)
            .filter_map(|c| {
                let tp = self.counts[c * s + c];
                let gt_total: u64 = self.counts[c * s..(c + 1) * s].iter().sum();
                let pred_total: u64 = (0..s).map(|g| self.counts[g * s + c]).sum();
                let union = gt_total + pred_total - tp;
                (union > 0).then(|| (c as u16 + 1, tp as f64 / union as f64))
            })
            .collect()
    }

    /// Mean IoU in percent over classes present in either map.
    pub fn miou(&self) -> Result<f64, MetricError> {
        let ious = self.ious();
        if ious.is_empty() {
            return Err(MetricError::NoPixels);
        }
        Ok(100.0 * ious.iter().map(|(_, v)| v).sum::<f64>() / ious.len() as f64)
    }
}

pub fn miou(
    pred: &SegMap,
    gt: &SegMap,
    classes: usize,
    ignore: Option<u16>,
) -> Result<f64, MetricError> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt, ignore)?;
    cm.miou()
}
