//! Localization metrics (precision/recall/F-score under the 50%-overlap
//! rule) and segmentation metrics (Dice, Hausdorff).

use std::io::Write;

use crate::consistency::overlap_ratio;
use crate::detector::RoiBox;
use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub dice: f64,
    pub hausdorff: f64,
}

/// Scores per-frame localizations against ground-truth boxes. A prediction
/// overlapping its frame's truth by at least `overlap_threshold` (smaller-box
/// ratio) is a true positive; a prediction below the threshold counts as a
/// false positive AND a missed nerve; an absent prediction is a miss.
pub fn localization_metrics(
    pred: &[Option<RoiBox>],
    gt_boxes: &[RoiBox],
    overlap_threshold: f64,
) -> Result<LocalizationReport> {
    if pred.len() != gt_boxes.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} ground-truth frames",
            pred.len(),
            gt_boxes.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (p, gt) in pred.iter().zip(gt_boxes) {
        match p {
            Some(b) if overlap_ratio(b, gt) >= overlap_threshold => tp += 1,
            Some(_) => {
                fp += 1;
                fn_ += 1;
            }
            None => fn_ += 1,
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(LocalizationReport { tp, fp, fn_, precision, recall, f_score })
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)`; two empty masks count as a
/// perfect match.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidInput(format!(
            "mask dims {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Symmetric Hausdorff distance between the boundary pixel sets of two
/// non-empty masks, Euclidean on pixel centers.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidInput(format!(
            "mask dims {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "hausdorff distance of an empty mask is undefined".into(),
        ));
    }
    let ba = a.boundary_pixels();
    let bb = b.boundary_pixels();
    let d2 = directed_max_min_sq(&ba, &bb).max(directed_max_min_sq(&bb, &ba));
    Ok((d2 as f64).sqrt())
}

/// max over `from` of the min squared distance into `to`, with the classic
/// early break: once a point's running minimum drops to the current overall
/// maximum it cannot raise it.
fn directed_max_min_sq(from: &[(usize, usize)], to: &[(usize, usize)]) -> i64 {
    let mut overall: i64 = 0;
    for &(ax, ay) in from {
        let mut best = i64::MAX;
        for &(bx, by) in to {
            let dx = ax as i64 - bx as i64;
            let dy = ay as i64 - by as i64;
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
                if best <= overall {
                    break;
                }
            }
        }
        if best > overall {
            overall = best;
        }
    }
    overall
}

pub fn write_localization_report(
    w: &mut impl Write,
    r: &LocalizationReport,
) -> std::io::Result<()> {
    writeln!(w, "localization")?;
    writeln!(w, "  tp        {:>8}", r.tp)?;
    writeln!(w, "  fp        {:>8}", r.fp)?;
    writeln!(w, "  fn        {:>8}", r.fn_)?;
    writeln!(w, "  precision {:>8.4}", r.precision)?;
    writeln!(w, "  recall    {:>8.4}", r.recall)?;
    writeln!(w, "  f-score   {:>8.4}", r.f_score)?;
    writeln!(w, "{:.6},{:.6},{:.6}", r.precision, r.recall, r.f_score)
}

pub fn write_seg_report(w: &mut impl Write, r: &SegReport) -> std::io::Result<()> {
    writeln!(w, "segmentation")?;
    writeln!(w, "  dice      {:>8.4}", r.dice)?;
    writeln!(w, "  hausdorff {:>8.2}", r.hausdorff)?;
    writeln!(w, "{:.6},{:.6}", r.dice, r.hausdorff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt_box() -> RoiBox {
        RoiBox { x: 100, y: 80, w: 60, h: 40, prob: 1.0, class_id: 1 }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![gt_box(); 10];
        let preds: Vec<Option<RoiBox>> = gts.iter().map(|&b| Some(b)).collect();
        let r = localization_metrics(&preds, &gts, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (10, 0, 0));
        assert_eq!((r.precision, r.recall, r.f_score), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions_give_vacuous_precision() {
        let gts = vec![gt_box(); 10];
        let preds = vec![None; 10];
        let r = localization_metrics(&preds, &gts, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 10));
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f_score, 0.0);
    }

    #[test]
    fn misplaced_prediction_counts_as_fp_and_fn() {
        let gts = vec![gt_box(); 10];
        let mut preds: Vec<Option<RoiBox>> = gts.iter().map(|&b| Some(b)).collect();
        preds[3] = Some(RoiBox { x: 400, y: 200, w: 64, h: 64, prob: 0.9, class_id: 1 });
        preds[7] = None;
        let r = localization_metrics(&preds, &gts, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (8, 1, 2));
        assert!((r.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((r.recall - 0.8).abs() < 1e-12);
        let f = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        assert!((r.f_score - f).abs() < 1e-12);
        assert!((r.f_score - 0.842).abs() < 1e-3);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(localization_metrics(&[None], &[], 0.5).is_err());
    }

    fn disc_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
        })
    }

    #[test]
    fn dice_identical_and_disjoint() {
        let a = disc_mask(40, 40, 20.0, 20.0, 8.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = Mask::from_fn(40, 40, |x, _| x < 2);
        let c = Mask::from_fn(40, 40, |x, _| x > 30);
        assert_eq!(dice(&b, &c).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlap() {
        // |A| = |B| = 100, |A∩B| = 50 → 0.5
        let a = Mask::from_fn(30, 30, |x, y| x < 10 && y < 10);
        let b = Mask::from_fn(30, 30, |x, y| (5..15).contains(&x) && y < 10);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_convention_and_dim_mismatch() {
        let e = Mask::new(8, 8);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&e, &Mask::new(9, 8)).is_err());
    }

    #[test]
    fn hausdorff_identical_is_zero() {
        let a = disc_mask(40, 40, 20.0, 20.0, 9.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_single_pixels_is_euclidean() {
        let mut a = Mask::new(10, 10);
        a.set(0, 0, true);
        let mut b = Mask::new(10, 10);
        b.set(3, 4, true);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn hausdorff_shifted_square() {
        let a = Mask::from_fn(40, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let b = Mask::from_fn(40, 20, |x, y| (12..22).contains(&x) && (5..15).contains(&y));
        assert_eq!(hausdorff(&a, &b).unwrap(), 7.0);
    }

    #[test]
    fn hausdorff_empty_rejected() {
        let a = disc_mask(10, 10, 5.0, 5.0, 2.0);
        assert!(hausdorff(&a, &Mask::new(10, 10)).is_err());
    }

    /// Plain all-pairs min-max oracle over boundary sets.
    fn hausdorff_oracle(a: &Mask, b: &Mask) -> f64 {
        let ba = a.boundary_pixels();
        let bb = b.boundary_pixels();
        let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
            from.iter()
                .map(|&(ax, ay)| {
                    to.iter()
                        .map(|&(bx, by)| {
                            let dx = ax as i64 - bx as i64;
                            let dy = ay as i64 - by as i64;
                            dx * dx + dy * dy
                        })
                        .min()
                        .unwrap()
                })
                .max()
                .unwrap()
        };
        ((directed(&ba, &bb).max(directed(&bb, &ba))) as f64).sqrt()
    }

    proptest! {
        #[test]
        fn hausdorff_matches_oracle_and_is_symmetric(
            rects in proptest::collection::vec((0usize..48, 0usize..48, 1usize..16, 1usize..16), 1..4),
            rects2 in proptest::collection::vec((0usize..48, 0usize..48, 1usize..16, 1usize..16), 1..4),
        ) {
            let paint = |rs: &[(usize, usize, usize, usize)]| {
                Mask::from_fn(64, 64, |x, y| {
                    rs.iter().any(|&(rx, ry, rw, rh)| {
                        (rx..rx + rw).contains(&x) && (ry..ry + rh).contains(&y)
                    })
                })
            };
            let a = paint(&rects);
            let b = paint(&rects2);
            let h1 = hausdorff(&a, &b).unwrap();
            let h2 = hausdorff(&b, &a).unwrap();
            prop_assert_eq!(h1, h2);
            prop_assert_eq!(h1, hausdorff_oracle(&a, &b));
        }

        #[test]
        fn dice_is_symmetric_and_bounded(
            rect_a in (0usize..32, 0usize..32, 1usize..16, 1usize..16),
            rect_b in (0usize..32, 0usize..32, 1usize..16, 1usize..16),
        ) {
            let paint = |r: (usize, usize, usize, usize)| {
                Mask::from_fn(48, 48, |x, y| {
                    (r.0..r.0 + r.2).contains(&x) && (r.1..r.1 + r.3).contains(&y)
                })
            };
            let a = paint(rect_a);
            let b = paint(rect_b);
            let d1 = dice(&a, &b).unwrap();
            prop_assert_eq!(d1, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d1));
        }
    }

    #[test]
    fn hausdorff_zero_iff_boundaries_coincide() {
        // Same boundary, different interior fill is impossible for masks,
        // but a mask and its filled ring share the outer boundary only.
        let solid = disc_mask(40, 40, 20.0, 20.0, 10.0);
        let ring = Mask::from_fn(40, 40, |x, y| {
            let d2 = (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2);
            d2 <= 100.0 && d2 >= 25.0
        });
        let h = hausdorff(&solid, &ring).unwrap();
        assert!(h > 0.0);
        assert_eq!(hausdorff(&solid, &solid).unwrap(), 0.0);
    }

    #[test]
    fn report_lines_reconstruct_f_score() {
        let r = LocalizationReport {
            tp: 8,
            fp: 1,
            fn_: 2,
            precision: 8.0 / 9.0,
            recall: 0.8,
            f_score: 2.0 * (8.0 / 9.0) * 0.8 / (8.0 / 9.0 + 0.8),
        };
        let recomputed = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        assert!((recomputed - r.f_score).abs() < 1e-12);
        let mut buf = Vec::new();
        write_localization_report(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last = text.lines().last().unwrap();
        assert_eq!(last.split(',').count(), 3);
    }
}
