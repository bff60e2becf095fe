//! Confusion-matrix evaluation: overall accuracy, per-class/mean IoU, and
//! per-class/mean precision, recall, and F1.

use crate::error::{Error, Result};

/// K×K confusion counts; `counts[t][p]` is the number of pixels with true
/// class `t` predicted as `p`. Pixels whose true label equals `ignore_label`
/// are never counted.
#[derive(Clone, Debug)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    k: usize,
    pub class_names: Vec<String>,
    pub ignore_label: Option<u32>,
}

/// Per-class and macro-averaged precision/recall/F1.
#[derive(Clone, Debug)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub mean_f1: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

impl ConfusionMatrix {
    pub fn new(k: usize, ignore_label: Option<u32>) -> Self {
        assert!(k >= 2, "need at least 2 classes, got {}", k);
        ConfusionMatrix {
            counts: vec![0; k * k],
            k,
            class_names: (0..k).map(|i| format!("class{}", i)).collect(),
            ignore_label,
        }
    }

    pub fn with_names(k: usize, names: &[String], ignore_label: Option<u32>) -> Self {
        assert_eq!(names.len(), k, "need one name per class");
        let mut cm = Self::new(k, ignore_label);
        cm.class_names = names.to_vec();
        cm
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Count each (truth, prediction) pixel pair. Order-independent, so tile
    /// results can accumulate in any order.
    pub fn accumulate(&mut self, y_true: &[u32], y_pred: &[u32]) -> Result<()> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Invalid(format!(
                "label maps differ in size: {} vs {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        let k = self.k as u32;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if Some(t) == self.ignore_label {
                continue;
            }
            if t >= k {
                return Err(Error::Invalid(format!(
                    "true label {} out of range for {} classes",
                    t, self.k
                )));
            }
            if p >= k {
                return Err(Error::Invalid(format!(
                    "predicted label {} out of range for {} classes",
                    p, self.k
                )));
            }
            self.counts[(t as usize) * self.k + p as usize] += 1;
        }
        Ok(())
    }

    /// Add another matrix's counts (for per-thread accumulation).
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "cannot merge differently sized matrices");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positive(&self, class: usize) -> u64 {
        self.counts[class * self.k + class]
    }

    pub fn false_positive(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.counts[t * self.k + class]).sum::<u64>()
            - self.true_positive(class)
    }

    pub fn false_negative(&self, class: usize) -> u64 {
        self.counts[class * self.k..(class + 1) * self.k].iter().sum::<u64>()
            - self.true_positive(class)
    }

    /// Trace over total: the fraction of evaluated pixels labeled correctly.
    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Invalid("no pixels accumulated".into()));
        }
        let trace: u64 = (0..self.k).map(|c| self.true_positive(c)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// IoU per class; `None` where the class never occurs in truth or
    /// prediction (union empty).
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.true_positive(c);
                let denom = tp + self.false_positive(c) + self.false_negative(c);
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over the classes that occur (empty-union classes excluded).
    pub fn mean_iou(&self) -> Result<f64> {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Invalid("no class present in truth or prediction".into()));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Per-class precision/recall/F1 with unweighted macro averages.
    /// Undefined (0/0) ratios score 0 and emit a warning on stderr.
    pub fn f1_scores(&self) -> F1Scores {
        let ratio = |num: u64, den: u64, what: &str, class: usize| {
            if den == 0 {
                eprintln!(
                    "warning: {} undefined for {} (0/0), scoring 0",
                    what, self.class_names[class]
                );
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let mut per_class = Vec::with_capacity(self.k);
        let mut precision = Vec::with_capacity(self.k);
        let mut recall = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let tp = self.true_positive(c);
            let fp = self.false_positive(c);
            let fnn = self.false_negative(c);
            precision.push(ratio(tp, tp + fp, "precision", c));
            recall.push(ratio(tp, tp + fnn, "recall", c));
            per_class.push(ratio(2 * tp, 2 * tp + fp + fnn, "F1", c));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        F1Scores {
            mean_f1: mean(&per_class),
            mean_precision: mean(&precision),
            mean_recall: mean(&recall),
            per_class,
            precision,
            recall,
        }
    }

    /// The headline metrics in report column order:
    /// each per-class F1, then mean F1, OA, and mIoU.
    pub fn summary(&self) -> Result<Vec<(String, f64)>> {
        let f1 = self.f1_scores();
        let mut out: Vec<(String, f64)> = self
            .class_names
            .iter()
            .zip(&f1.per_class)
            .map(|(n, &v)| (format!("f1_{}", n), v))
            .collect();
        out.push(("mean_f1".into(), f1.mean_f1));
        out.push(("oa".into(), self.overall_accuracy()?));
        out.push(("miou".into(), self.mean_iou()?));
        Ok(out)
    }

    /// Human-readable aligned table.
    pub fn report(&self) -> Result<String> {
        let rows = self.summary()?;
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (name, value) in rows {
            s.push_str(&format!("{:<width$}  {:.4}\n", name, value, width = width));
        }
        Ok(s)
    }

    /// Machine-readable `name<TAB>value` lines, 4 decimal places, same order
    /// as the text report.
    pub fn report_tsv(&self) -> Result<String> {
        let rows = self.summary()?;
        let mut s = String::new();
        for (name, value) in rows {
            s.push_str(&format!("{}\t{:.4}\n", name, value));
        }
        Ok(s)
    }
}

/// Argmax over the class axis of `[B,K,H,W]` logits, flattened row-major
/// per batch element.
pub fn argmax_classes<T: crate::tensor::Element>(logits: &crate::tensor::Tensor<T>) -> Vec<u32> {
    assert_eq!(logits.rank(), 4, "expected [B,K,H,W] logits");
    let (b, k, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let d = logits.data();
    let hw = h * w;
    let mut out = Vec::with_capacity(b * hw);
    for img in 0..b {
        for px in 0..hw {
            let mut best = 0usize;
            let mut best_v = d[img * k * hw + px];
            for c in 1..k {
                let v = d[(img * k + c) * hw + px];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out.push(best as u32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_case() -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(2, None);
        cm.accumulate(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        cm
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let mut cm = ConfusionMatrix::new(3, None);
        cm.accumulate(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(cm.overall_accuracy().unwrap(), 1.0);
        assert_eq!(cm.mean_iou().unwrap(), 1.0);
        assert_eq!(cm.f1_scores().mean_f1, 1.0);
    }

    #[test]
    fn hand_computed_counts() {
        let cm = hand_case();
        assert_eq!(cm.overall_accuracy().unwrap(), 0.75);
        let iou = cm.per_class_iou();
        assert_eq!(iou[0], Some(0.5));
        assert!((iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((cm.mean_iou().unwrap() - 7.0 / 12.0).abs() < 1e-12);
        let f1 = cm.f1_scores();
        assert!((f1.per_class[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1.per_class[1] - 0.8).abs() < 1e-12);
        assert!((f1.mean_f1 - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(f1.precision[0], 1.0);
        assert_eq!(f1.recall[0], 0.5);
    }

    #[test]
    fn accumulation_is_additive() {
        let mut once = ConfusionMatrix::new(3, None);
        once.accumulate(&[0, 1, 2, 0, 1, 2], &[0, 2, 2, 1, 1, 0]).unwrap();
        let mut split = ConfusionMatrix::new(3, None);
        split.accumulate(&[0, 1, 2], &[0, 2, 2]).unwrap();
        split.accumulate(&[0, 1, 2], &[1, 1, 0]).unwrap();
        assert_eq!(once.counts, split.counts);

        let mut merged = ConfusionMatrix::new(3, None);
        let mut part = ConfusionMatrix::new(3, None);
        part.accumulate(&[0, 1, 2], &[0, 2, 2]).unwrap();
        merged.merge(&part);
        let mut part2 = ConfusionMatrix::new(3, None);
        part2.accumulate(&[0, 1, 2], &[1, 1, 0]).unwrap();
        merged.merge(&part2);
        assert_eq!(once.counts, merged.counts);
    }

    #[test]
    fn ignore_label_pixels_are_skipped() {
        let mut cm = ConfusionMatrix::new(2, Some(255));
        cm.accumulate(&[0, 255, 1, 255], &[0, 1, 0, 0]).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.overall_accuracy().unwrap(), 0.5);
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let mut cm = ConfusionMatrix::new(2, None);
        assert!(cm.accumulate(&[2], &[0]).is_err());
        assert!(cm.accumulate(&[0], &[2]).is_err());
        assert!(cm.accumulate(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn empty_matrix_errors() {
        let cm = ConfusionMatrix::new(2, None);
        assert!(cm.overall_accuracy().is_err());
        assert!(cm.mean_iou().is_err());
    }

    #[test]
    fn absent_class_excluded_from_miou_but_zero_in_f1() {
        let mut cm = ConfusionMatrix::new(3, None);
        // Class 2 never appears in truth or prediction.
        cm.accumulate(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(cm.per_class_iou()[2], None);
        let with_two = cm.mean_iou().unwrap();
        assert!((with_two - (0.5 + 0.5) / 2.0).abs() < 1e-12);
        assert_eq!(cm.f1_scores().per_class[2], 0.0);
    }

    #[test]
    fn f1_is_determined_by_iou() {
        let mut cm = ConfusionMatrix::new(4, None);
        let y_true: Vec<u32> = (0..4000).map(|i| (i * 7 % 4) as u32).collect();
        let y_pred: Vec<u32> = (0..4000).map(|i| (i * 13 % 4) as u32).collect();
        cm.accumulate(&y_true, &y_pred).unwrap();
        let f1 = cm.f1_scores();
        for (c, iou) in cm.per_class_iou().iter().enumerate() {
            let iou = iou.unwrap();
            assert!((f1.per_class[c] - 2.0 * iou / (1.0 + iou)).abs() < 1e-9);
            assert!(iou <= f1.per_class[c] + 1e-12);
        }
    }

    #[test]
    fn class_permutation_preserves_aggregates() {
        let y_true: Vec<u32> = (0..999).map(|i| (i % 3) as u32).collect();
        let y_pred: Vec<u32> = (0..999).map(|i| ((i / 2) % 3) as u32).collect();
        let mut cm = ConfusionMatrix::new(3, None);
        cm.accumulate(&y_true, &y_pred).unwrap();
        let perm = [2u32, 0, 1];
        let pt: Vec<u32> = y_true.iter().map(|&t| perm[t as usize]).collect();
        let pp: Vec<u32> = y_pred.iter().map(|&p| perm[p as usize]).collect();
        let mut pcm = ConfusionMatrix::new(3, None);
        pcm.accumulate(&pt, &pp).unwrap();
        assert!((cm.overall_accuracy().unwrap() - pcm.overall_accuracy().unwrap()).abs() < 1e-12);
        assert!((cm.mean_iou().unwrap() - pcm.mean_iou().unwrap()).abs() < 1e-12);
        assert!((cm.f1_scores().mean_f1 - pcm.f1_scores().mean_f1).abs() < 1e-12);
        // Per-class outputs permute along.
        let f1 = cm.f1_scores().per_class;
        let pf1 = pcm.f1_scores().per_class;
        for c in 0..3 {
            assert!((f1[c] - pf1[perm[c] as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn report_formats() {
        let cm = hand_case();
        let tsv = cm.report_tsv().unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("f1_class0\t"));
        assert!(lines[1].starts_with("f1_class1\t"));
        assert!(lines[2].starts_with("mean_f1\t"));
        assert!(lines[3].starts_with("oa\t0.7500"));
        assert!(lines[4].starts_with("miou\t0.5833"));
        let text = cm.report().unwrap();
        assert!(text.contains("oa") && text.contains("0.7500"));
    }

    #[test]
    fn argmax_picks_largest_class_plane() {
        use crate::tensor::Tensor;
        // 1 batch, 3 classes, 2x2: class plane c holds value (c == winner).
        let mut data = vec![0.0f32; 12];
        let winners = [2usize, 0, 1, 2];
        for (px, &wc) in winners.iter().enumerate() {
            data[wc * 4 + px] = 1.0;
        }
        let t = Tensor::from_vec(vec![1, 3, 2, 2], data);
        assert_eq!(argmax_classes(&t), vec![2, 0, 1, 2]);
    }
}
