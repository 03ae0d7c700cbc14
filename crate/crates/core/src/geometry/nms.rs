use std::cmp::Ordering;

use super::{iou, BBox};

/// Greedy non-maximum suppression. Boxes are visited by descending score,
/// ties by lower index; a box is suppressed when its IoU with an already
/// kept box exceeds `iou_threshold`. Returns kept indices in visit order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_box_is_kept() {
        assert_eq!(nms(&[BBox::new(0.0, 0.0, 1.0, 1.0)], &[0.3], 0.5), vec![0]);
    }

    #[test]
    fn duplicate_keeps_higher_score() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[b, b], &[0.8, 0.9], 0.99), vec![1]);
        assert_eq!(nms(&[b, b], &[0.9, 0.8], 0.5), vec![0]);
    }

    #[test]
    fn equal_scores_prefer_lower_index() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[b, b, b], &[0.5, 0.5, 0.5], 0.5), vec![0]);
    }

    #[test]
    fn disjoint_boxes_all_survive() {
        let boxes = [
            BBox::new(0.0, 0.0, 1.0, 1.0),
            BBox::new(5.0, 5.0, 6.0, 6.0),
            BBox::new(10.0, 0.0, 11.0, 1.0),
        ];
        assert_eq!(nms(&boxes, &[0.1, 0.9, 0.5], 0.0), vec![1, 2, 0]);
    }
}
