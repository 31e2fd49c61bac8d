//! Classification and detection accounting.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::record::{BoundingBox, Label};
use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    /// Counts from `(predicted, truth)` pairs, Animal being the positive class.
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Label, Label)>,
    {
        let mut c = ConfusionCounts::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (Label::Animal, Label::Animal) => c.tp += 1,
                (Label::NoAnimal, Label::NoAnimal) => c.tn += 1,
                (Label::Animal, Label::NoAnimal) => c.fp += 1,
                (Label::NoAnimal, Label::Animal) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Youden's J.
    pub fn y_index(&self) -> Option<f64> {
        Some(self.sensitivity()? + self.specificity()? - 1.0)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(
            self.tp + o.tp,
            self.tn + o.tn,
            self.fp + o.fp,
            self.fn_ + o.fn_,
        )
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rates and counts as written to JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub y_index: Option<f64>,
}

impl From<ConfusionCounts> for ClassificationSummary {
    fn from(counts: ConfusionCounts) -> Self {
        ClassificationSummary {
            counts,
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            y_index: counts.y_index(),
        }
    }
}

/// Per-site counts in site order plus the total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiteTable {
    pub sites: BTreeMap<String, ConfusionCounts>,
}

impl SiteTable {
    pub fn add(&mut self, site_id: &str, pred: Label, truth: Label) {
        let c = self.sites.entry(site_id.to_string()).or_default();
        *c = *c + ConfusionCounts::from_pairs([(pred, truth)]);
    }

    pub fn total(&self) -> ConfusionCounts {
        self.sites.values().copied().sum()
    }

    /// One row per site and a `total` row; rates are unrounded fractions,
    /// empty when undefined.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "site_id",
            "animal_images",
            "tp",
            "fn",
            "sensitivity",
            "no_animal_images",
            "tn",
            "fp",
            "specificity",
            "y_index",
        ])?;
        let total = self.total();
        let rows = self
            .sites
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .chain([("total", total)]);
        for (site, c) in rows {
            w.write_record([
                site.to_string(),
                (c.tp + c.fn_).to_string(),
                c.tp.to_string(),
                c.fn_.to_string(),
                fmt_rate(c.sensitivity()),
                (c.tn + c.fp).to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                fmt_rate(c.specificity()),
                fmt_rate(c.y_index()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<site table>", e))?;
        Ok(())
    }
}

pub(crate) fn fmt_rate(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Detection

/// IoU of half-open rectangles `[x, x+w) × [y, y+h)`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, score: f64) -> Self {
        ScoredBox { bbox, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub est: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Matching result for one image. Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub matches: Vec<Match>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub true_negative: bool,
}

impl DetectionOutcome {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts::new(
            self.matches.len() as u64,
            self.true_negative as u64,
            self.false_positives.len() as u64,
            self.false_negatives.len() as u64,
        )
    }

    pub fn avg_iou(&self) -> Option<f64> {
        let n = self.matches.len();
        (n > 0).then(|| self.matches.iter().map(|m| m.iou).sum::<f64>() / n as f64)
    }
}

/// Greedy matching: estimates in descending score order (lower index first
/// on ties) each take the best-IoU unmatched ground truth box. A match
/// needs IoU strictly above `iou_thr`; otherwise the estimate is a false
/// positive.
pub fn match_detections(
    est: &[ScoredBox],
    gt: &[BoundingBox],
    iou_thr: f64,
) -> Result<DetectionOutcome> {
    if let Some(s) = est.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(Error::invalid(format!(
            "detection score {} outside [0, 1]",
            s.score
        )));
    }
    let mut order: Vec<usize> = (0..est.len()).collect();
    order.sort_by(|&a, &b| est[b].score.total_cmp(&est[a].score).then(a.cmp(&b)));

    let mut taken = vec![false; gt.len()];
    let mut out = DetectionOutcome::default();
    for i in order {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, g)| (j, iou(&est[i].bbox, g)))
            .fold(None::<(usize, f64)>, |best, (j, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v > iou_thr => {
                taken[j] = true;
                out.matches.push(Match {
                    est: i,
                    gt: j,
                    iou: v,
                });
            }
            _ => out.false_positives.push(i),
        }
    }
    out.false_negatives = (0..gt.len()).filter(|&j| !taken[j]).collect();
    out.true_negative = est.is_empty() && gt.is_empty();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub avg_iou: Option<f64>,
}

impl DetectionMetrics {
    /// Metrics from aggregate counts and the mean IoU over true positives.
    pub fn from_counts(counts: ConfusionCounts, avg_iou: Option<f64>) -> Self {
        DetectionMetrics {
            counts,
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            avg_iou,
        }
    }
}

pub fn detection_metrics(outcomes: &[DetectionOutcome]) -> Result<DetectionMetrics> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no detection outcomes to summarize"));
    }
    let counts = outcomes.iter().map(DetectionOutcome::counts).sum();
    let ious: Vec<f64> = outcomes
        .iter()
        .flat_map(|o| o.matches.iter().map(|m| m.iou))
        .collect();
    let avg = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
    Ok(DetectionMetrics::from_counts(counts, avg))
}

// ---------------------------------------------------------------------------
// Published figures that do not follow from their own counts

/// A reported percentage set against what its inputs give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub table: String,
    pub quantity: String,
    pub reported_percent: f64,
    pub computed_percent: f64,
    pub note: String,
}

impl Discrepancy {
    pub fn differs_after_rounding(&self) -> bool {
        self.computed_percent.round() != self.reported_percent.round()
    }
}

/// Rounding and definition mismatches in the published tables, recomputed
/// from the published inputs.
pub fn published_discrepancies() -> Vec<Discrepancy> {
    let day_j = 81.4 + 77.7 - 100.0;
    let night_j = 94.8 + 95.8 - 100.0;
    let bds = ConfusionCounts::new(526, 1534, 125, 35);
    vec![
        Discrepancy {
            table: "post-deployment day model".into(),
            quantity: "y_index".into(),
            reported_percent: 61.0,
            computed_percent: day_j,
            note: "Youden's J from the row's own sensitivity and specificity".into(),
        },
        Discrepancy {
            table: "post-deployment night model".into(),
            quantity: "y_index".into(),
            reported_percent: 91.0,
            computed_percent: night_j,
            note: "Youden's J from the row's own sensitivity and specificity".into(),
        },
        Discrepancy {
            table: "bird detector".into(),
            quantity: "sensitivity".into(),
            reported_percent: 94.0,
            computed_percent: 100.0 * bds.sensitivity().unwrap_or(0.0),
            note: "526 / (526 + 35)".into(),
        },
        Discrepancy {
            table: "bird detector".into(),
            quantity: "specificity".into(),
            reported_percent: 93.0,
            computed_percent: 100.0 * bds.specificity().unwrap_or(0.0),
            note: "1534 / (1534 + 125); reported unrounded value is kept".into(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn classification_rates() {
        let c = ConfusionCounts::new(346, 809, 32, 52);
        assert!((c.sensitivity().unwrap() - 346.0 / 398.0).abs() < 1e-15);
        assert_eq!((c.sensitivity().unwrap() * 100.0).round(), 87.0);
        assert_eq!((c.specificity().unwrap() * 100.0).round(), 96.0);
        let perfect = ConfusionCounts::new(5, 7, 0, 0);
        assert_eq!(perfect.y_index(), Some(1.0));
        let no_pos = ConfusionCounts::new(0, 4, 1, 0);
        assert_eq!(no_pos.sensitivity(), None);
        assert_eq!(no_pos.y_index(), None);
    }

    #[test]
    fn from_pairs_counts_each_cell() {
        use Label::*;
        let c = ConfusionCounts::from_pairs([
            (Animal, Animal),
            (Animal, NoAnimal),
            (NoAnimal, Animal),
            (NoAnimal, NoAnimal),
            (NoAnimal, NoAnimal),
        ]);
        assert_eq!(c, ConfusionCounts::new(1, 2, 1, 1));
    }

    #[test]
    fn site_table_csv() {
        let mut t = SiteTable::default();
        t.add("s2", Label::Animal, Label::Animal);
        t.add("s1", Label::NoAnimal, Label::Animal);
        t.add("s1", Label::NoAnimal, Label::NoAnimal);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "s1,1,0,1,0.000000,1,1,0,1.000000,0.000000");
        assert_eq!(lines[2], "s2,1,1,0,1.000000,0,0,0,,");
        assert!(lines[3].starts_with("total,2,1,1,0.500000,"));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(0.0, 0.0, 2.0, 2.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(5.0, 5.0, 2.0, 2.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(2.0, 0.0, 2.0, 2.0)), 0.0);
        // intersection 1, union 4 + 4 - 1
        assert!((iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn single_match_and_lone_fp() {
        let gt = [b(10.0, 10.0, 20.0, 20.0)];
        let o = match_detections(&[ScoredBox::new(gt[0].clone(), 0.9)], &gt, 0.4).unwrap();
        assert_eq!(o.counts(), ConfusionCounts::new(1, 0, 0, 0));
        assert_eq!(o.avg_iou(), Some(1.0));

        let o = match_detections(&[ScoredBox::new(gt[0].clone(), 0.9)], &[], 0.4).unwrap();
        assert_eq!(o.counts(), ConfusionCounts::new(0, 0, 1, 0));
        let o = match_detections(&[], &[], 0.4).unwrap();
        assert_eq!(o.counts(), ConfusionCounts::new(0, 1, 0, 0));
        let o = match_detections(&[], &gt, 0.4).unwrap();
        assert_eq!(o.counts(), ConfusionCounts::new(0, 0, 0, 1));
        assert!(match_detections(&[ScoredBox::new(gt[0].clone(), 1.5)], &gt, 0.4).is_err());
    }

    #[test]
    fn greedy_prefers_higher_score() {
        // gt 10x10 at the origin; estimate A overlaps 0.6, B 0.5
        let gt = [b(0.0, 0.0, 10.0, 10.0)];
        let a = b(0.0, 0.0, 6.0, 10.0); // iou 60/100
        let bb = b(0.0, 0.0, 5.0, 10.0); // iou 50/100
        assert!((iou(&a, &gt[0]) - 0.6).abs() < 1e-15);
        assert!((iou(&bb, &gt[0]) - 0.5).abs() < 1e-15);
        let est = [ScoredBox::new(bb, 0.8), ScoredBox::new(a, 0.9)];
        let o = match_detections(&est, &gt, 0.4).unwrap();
        assert_eq!(
            o.matches,
            vec![Match {
                est: 1,
                gt: 0,
                iou: 0.6
            }]
        );
        assert_eq!(o.false_positives, vec![0]);
    }

    #[test]
    fn low_overlap_is_fp_and_gt_stays_fn() {
        let gt = [b(0.0, 0.0, 10.0, 10.0)];
        let est = [ScoredBox::new(b(0.0, 0.0, 4.0, 10.0), 0.7)]; // iou exactly 0.4
        let o = match_detections(&est, &gt, 0.4).unwrap();
        assert_eq!(o.counts(), ConfusionCounts::new(0, 0, 1, 1));
    }

    #[test]
    fn detection_replay_and_avg_iou() {
        let m = DetectionMetrics::from_counts(ConfusionCounts::new(526, 1534, 125, 35), None);
        assert!((m.sensitivity.unwrap() - 0.937611).abs() < 1e-6);
        assert!((m.specificity.unwrap() - 0.924653).abs() < 1e-6);

        let gt = [b(0.0, 0.0, 100.0, 100.0)];
        // 68 x 100 inside the gt gives iou 0.68
        let est = [ScoredBox::new(b(0.0, 0.0, 68.0, 100.0), 0.9)];
        let outs: Vec<_> = (0..5)
            .map(|_| match_detections(&est, &gt, 0.4).unwrap())
            .collect();
        let m = detection_metrics(&outs).unwrap();
        assert!((m.avg_iou.unwrap() - 0.68).abs() < 1e-12);

        let empties: Vec<_> = (0..4)
            .map(|_| match_detections(&[], &[], 0.4).unwrap())
            .collect();
        let m = detection_metrics(&empties).unwrap();
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.sensitivity, None);
        assert!(detection_metrics(&[]).is_err());
    }

    #[test]
    fn discrepancies_flag_day_y_index_and_detector_specificity() {
        let d = published_discrepancies();
        assert!((d[0].computed_percent - 59.1).abs() < 1e-9);
        assert!(d[0].differs_after_rounding());
        assert!(!d[1].differs_after_rounding());
        assert!(!d[2].differs_after_rounding());
        assert!(d[3].differs_after_rounding());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..40, 0u32..40, 1u32..20, 1u32..20)
            .prop_map(|(x, y, w, h)| b(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, a == c);
        }

        #[test]
        fn matching_never_double_counts(
            est in proptest::collection::vec((arb_box(), 0u32..4), 0..8),
            gt in proptest::collection::vec(arb_box(), 0..6),
        ) {
            let est: Vec<_> = est.into_iter().map(|(bx, s)| ScoredBox::new(bx, s as f64 / 4.0)).collect();
            let o = match_detections(&est, &gt, 0.4).unwrap();
            let c = o.counts();
            prop_assert_eq!(c.tp + c.fp, est.len() as u64);
            prop_assert_eq!(c.tp + c.fn_, gt.len() as u64);
            let mut gts: Vec<_> = o.matches.iter().map(|m| m.gt).collect();
            gts.sort();
            gts.dedup();
            prop_assert_eq!(gts.len(), o.matches.len());
        }

        #[test]
        fn equal_score_order_is_index_stable(boxes in proptest::collection::vec(arb_box(), 1..6), gt in proptest::collection::vec(arb_box(), 1..4)) {
            let est: Vec<_> = boxes.into_iter().map(|bx| ScoredBox::new(bx, 0.5)).collect();
            let a = match_detections(&est, &gt, 0.4).unwrap();
            let b = match_detections(&est, &gt, 0.4).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
