//! Detection matching oracle: IoU, F1 and confidence-based uncertainty.

use serde::{Deserialize, Serialize};

/// Detections scoring below this confidence count as uncertain.
pub const UNCERTAIN_CONFIDENCE: f64 = 0.5;
/// A prediction matches a ground-truth box only above this IoU.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x1, y1, x2, y2]` in pixels.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub category: String,
    pub confidence: f64,
}

impl Detection {
    pub fn is_valid(&self) -> bool {
        self.bbox[2] > self.bbox[0] && self.bbox[3] > self.bbox[1]
    }

    fn area(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])
    }
}

/// One line of a detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_idx: u64,
    pub detections: Vec<Detection>,
}

pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let w = a.bbox[2].min(b.bbox[2]) - a.bbox[0].max(b.bbox[0]);
    let h = a.bbox[3].min(b.bbox[3]) - a.bbox[1].max(b.bbox[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to detect and
    /// nothing was predicted.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.true_positives + self.false_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            (2 * self.true_positives) as f64 / d as f64
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }
}

/// Greedy matching within one frame: predictions in descending confidence
/// each take the unmatched same-category truth box with the highest IoU,
/// provided that IoU exceeds [`MATCH_IOU`].
pub fn match_frame(predicted: &[Detection], truth: &[Detection]) -> MatchCounts {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    // Stable sort keeps input order among equal confidences.
    order.sort_by(|&a, &b| predicted[b].confidence.total_cmp(&predicted[a].confidence));
    let mut taken = vec![false; truth.len()];
    let mut tp = 0;
    for i in order {
        let p = &predicted[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truth.iter().enumerate() {
            if taken[j] || t.category != p.category {
                continue;
            }
            let v = iou(p, t);
            if v > MATCH_IOU && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
    }
    MatchCounts {
        true_positives: tp,
        false_positives: predicted.len() - tp,
        false_negatives: truth.len() - tp,
    }
}

/// F1 over a span of frame-aligned detection lists, from aggregate counts.
pub fn compute_f1(predicted: &[Vec<Detection>], truth: &[Vec<Detection>]) -> f64 {
    match_counts(predicted, truth).f1()
}

pub fn match_counts(predicted: &[Vec<Detection>], truth: &[Vec<Detection>]) -> MatchCounts {
    let empty = Vec::new();
    let frames = predicted.len().max(truth.len());
    let mut total = MatchCounts::default();
    for i in 0..frames {
        let p = predicted.get(i).unwrap_or(&empty);
        let t = truth.get(i).unwrap_or(&empty);
        total += match_frame(p, t);
    }
    total
}

/// Fraction of detections with confidence below 0.5; 0 when there are no
/// detections.
pub fn compute_uncertainty<'a, I>(detections: I) -> f64
where
    I: IntoIterator<Item = &'a Detection>,
{
    let (mut total, mut uncertain) = (0usize, 0usize);
    for d in detections {
        total += 1;
        if d.confidence < UNCERTAIN_CONFIDENCE {
            uncertain += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        uncertain as f64 / total as f64
    }
}

/// Uncertainty over whole frames of detections.
pub fn frames_uncertainty(frames: &[FrameDetections]) -> f64 {
    compute_uncertainty(frames.iter().flat_map(|f| &f.detections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(bbox: [f64; 4], category: &str, confidence: f64) -> Detection {
        Detection {
            bbox,
            category: category.into(),
            confidence,
        }
    }

    #[test]
    fn iou_examples() {
        let a = det([0.0, 0.0, 10.0, 10.0], "car", 0.9);
        let b = det([5.0, 0.0, 15.0, 10.0], "car", 0.9);
        let c = det([20.0, 20.0, 30.0, 30.0], "car", 0.9);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        assert_eq!(iou(&a, &b), 1.0 / 3.0);
    }

    #[test]
    fn f1_examples() {
        let truth = vec![vec![
            det([0.0, 0.0, 10.0, 10.0], "car", 1.0),
            det([50.0, 50.0, 60.0, 60.0], "person", 1.0),
        ]];
        assert_eq!(compute_f1(&truth, &truth), 1.0);

        let predicted = vec![vec![
            det([0.0, 0.0, 10.0, 9.0], "car", 0.9),
            det([100.0, 100.0, 120.0, 120.0], "car", 0.8),
        ]];
        let counts = match_counts(&predicted, &truth);
        assert_eq!(counts.precision(), 0.5);
        assert_eq!(counts.recall(), 0.5);
        assert_eq!(counts.f1(), 0.5);

        let wrong_class = vec![vec![det([0.0, 0.0, 10.0, 10.0], "person", 0.9)]];
        let one_truth = vec![vec![det([0.0, 0.0, 10.0, 10.0], "car", 1.0)]];
        assert_eq!(compute_f1(&wrong_class, &one_truth), 0.0);
    }

    #[test]
    fn iou_threshold_is_strict() {
        // IoU exactly 0.5: [0,10]x[0,10] vs [0,10]x[0,20] -> 100/200.
        let t = vec![vec![det([0.0, 0.0, 10.0, 20.0], "car", 1.0)]];
        let p = vec![vec![det([0.0, 0.0, 10.0, 10.0], "car", 0.9)]];
        assert_eq!(compute_f1(&p, &t), 0.0);
    }

    #[test]
    fn greedy_prefers_confident_predictions() {
        let t = vec![vec![det([0.0, 0.0, 10.0, 10.0], "car", 1.0)]];
        let p = vec![vec![
            det([0.0, 0.0, 10.0, 10.0], "car", 0.3),
            det([0.0, 0.0, 10.0, 8.0], "car", 0.9),
        ]];
        let counts = match_counts(&p, &t);
        assert_eq!(counts.true_positives, 1);
        assert_eq!(counts.false_positives, 1);
    }

    #[test]
    fn uncertainty_examples() {
        let dets: Vec<Detection> = [0.9, 0.3, 0.4, 0.8]
            .iter()
            .map(|&c| det([0.0, 0.0, 1.0, 1.0], "car", c))
            .collect();
        assert_eq!(compute_uncertainty(&dets), 0.5);
        assert_eq!(compute_uncertainty(&dets[..1]), 0.0);
        assert_eq!(compute_uncertainty(&[]), 0.0);
    }

    #[test]
    fn detection_file_line_format() {
        let line = r#"{"frame_idx":3,"detections":[{"box":[1.0,2.0,3.0,4.0],"category":"car","confidence":0.7}]}"#;
        let f: FrameDetections = serde_json::from_str(line).unwrap();
        assert_eq!(f.detections[0].bbox, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(serde_json::to_string(&f).unwrap(), line);
    }

    fn arb_box() -> impl Strategy<Value = Detection> {
        (0.0..100.0f64, 0.0..100.0f64, 1.0..50.0f64, 1.0..50.0f64)
            .prop_map(|(x, y, w, h)| det([x, y, x + w, y + h], "car", 0.9))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn f1_symmetric_on_unique_matches(
            boxes in proptest::collection::vec((0u32..10, 0.5..1.0f64), 1..6),
            drop in proptest::collection::vec(any::<bool>(), 6),
        ) {
            // Boxes on a coarse grid never overlap each other, so any match
            // is unique.
            let mut truth = Vec::new();
            let mut pred = Vec::new();
            for (i, (cell, jitter)) in boxes.iter().enumerate() {
                let x = f64::from(*cell) * 100.0;
                let y = i as f64 * 100.0;
                truth.push(det([x, y, x + 40.0, y + 40.0], "car", 1.0));
                if !drop[i] {
                    pred.push(det([x, y, x + 40.0, y + 40.0 * jitter], "car", 1.0));
                }
            }
            let a = compute_f1(&[pred.clone()], &[truth.clone()]);
            let b = compute_f1(&[truth], &[pred]);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
