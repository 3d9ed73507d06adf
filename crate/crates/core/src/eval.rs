//! Evaluation instruments: top-k accuracy, ROC and precision-recall
//! curves, area-normalized density histograms, and the bundle that ties
//! them to per-example uncertainty reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyReport;

/// Binary labels with real-valued scores; higher scores mean "more
/// positive".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBinary {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredBinary {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Data("NaN score".into()));
        }
        Ok(ScoredBinary { scores, labels })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    /// `(threshold, true positives, false positives)` at each distinct
    /// score, descending; tied scores enter together.
    fn sweep(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            out.push((s, tp, fp));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

impl Curve {
    /// `threshold,x,y` rows; the sentinel start threshold prints as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,x,y\n");
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.x, p.y));
        }
        out
    }
}

/// ROC curve (x = FPR, y = TPR) with trapezoidal area, which equals the
/// normalized Mann–Whitney statistic with ties counted as one half.
pub fn roc_curve_auc(sb: &ScoredBinary) -> Result<Curve> {
    let (p, n) = (sb.positives(), sb.negatives());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedCurve(format!(
            "ROC needs both classes ({p} positives, {n} negatives)"
        )));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut auc = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (threshold, tp, fp) in sb.sweep() {
        // integer trapezoid, scaled once at the end
        auc += ((fp - prev_fp) * (tp + prev_tp)) as f64;
        points.push(CurvePoint {
            threshold,
            x: fp as f64 / n as f64,
            y: tp as f64 / p as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    Ok(Curve {
        points,
        auc: auc / (2.0 * p as f64 * n as f64),
    })
}

/// Precision-recall curve (x = recall, y = precision) with area by
/// average precision, `Σ (R_i − R_{i−1}) · P_i` over distinct thresholds.
pub fn pr_curve_auc(sb: &ScoredBinary) -> Result<Curve> {
    let p = sb.positives();
    if p == 0 {
        return Err(Error::UndefinedCurve("precision-recall needs a positive".into()));
    }
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (threshold, tp, fp) in sb.sweep() {
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold,
            x: recall,
            y: precision,
        });
    }
    Ok(Curve { points, auc: ap })
}

/// Fraction of examples whose label ranks among the `k` largest
/// probabilities; on ties the lower class index ranks first.
pub fn top_k_accuracy(mean_probs: &[&[f64]], labels: &[usize], k: usize) -> Result<f64> {
    if mean_probs.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} labels",
            mean_probs.len(),
            labels.len()
        )));
    }
    if mean_probs.is_empty() {
        return Err(Error::Data("no examples".into()));
    }
    let num_classes = mean_probs[0].len();
    if k == 0 || k > num_classes {
        return Err(Error::Config(format!("k = {k} outside 1..={num_classes}")));
    }
    let mut hits = 0;
    for (probs, &y) in mean_probs.iter().zip(labels) {
        if probs.len() != num_classes || y >= num_classes {
            return Err(Error::Data(format!("label {y} or row width inconsistent")));
        }
        let py = probs[y];
        let rank = probs
            .iter()
            .enumerate()
            .filter(|&(c, &pc)| pc > py || (pc == py && c < y))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl DensityHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    /// `Σ density · width`, which is 1 up to rounding.
    pub fn area(&self) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(&self.densities)
            .map(|(e, d)| d * (e[1] - e[0]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,density\n");
        for (e, d) in self.bin_edges.windows(2).zip(&self.densities) {
            out.push_str(&format!("{:?},{:?},{:?}\n", e[0], e[1], d));
        }
        out
    }
}

/// Equal-width histogram over `[lo, hi]` normalized to unit area. Values
/// outside the range land in the edge bins.
pub fn density_histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<DensityHistogram> {
    if values.is_empty() {
        return Err(Error::Data("cannot histogram an empty sample".into()));
    }
    if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!(
            "invalid histogram: {bins} bins over [{lo}, {hi}]"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN in histogram input".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    let bin_edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect::<Vec<_>>();
    let n = values.len() as f64;
    let densities = counts
        .iter()
        .zip(bin_edges.windows(2))
        .map(|(&c, e)| c as f64 / (n * (e[1] - e[0])))
        .collect();
    Ok(DensityHistogram {
        bin_edges,
        densities,
    })
}

/// Everything the suite needs to know about one evaluated example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScores {
    pub mean_probs: Vec<f64>,
    pub report: UncertaintyReport,
    /// `None` for out-of-distribution rows.
    pub label: Option<usize>,
    pub is_ood: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bins: 50 }
    }
}

/// Headline metrics; undefined entries serialize as `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub roc_auc_micro: Option<f64>,
    pub pr_auc_micro: Option<f64>,
    pub roc_auc_correctness: Option<f64>,
    pub pr_auc_correctness: Option<f64>,
    pub ood_auroc_entropy: Option<f64>,
    pub ood_auroc_bald: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub summary: Summary,
    pub curves: Vec<(String, Curve)>,
    pub histograms: Vec<(String, DensityHistogram)>,
    pub notices: Vec<String>,
}

impl EvalBundle {
    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn histogram(&self, name: &str) -> Option<&DensityHistogram> {
        self.histograms.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `summary.json`, `curves/<name>.csv` and `hist/<name>.csv`
    /// under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_atomic(&dir.join("summary.json"), self.summary_json().as_bytes())?;
        for (name, c) in &self.curves {
            crate::io::write_atomic(&dir.join("curves").join(format!("{name}.csv")), c.to_csv().as_bytes())?;
        }
        for (name, h) in &self.histograms {
            crate::io::write_atomic(&dir.join("hist").join(format!("{name}.csv")), h.to_csv().as_bytes())?;
        }
        Ok(())
    }
}

/// Which uncertainty measure to histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Confidence,
    PredictiveEntropy,
    ExpectedEntropy,
    Bald,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Confidence => "confidence",
            Measure::PredictiveEntropy => "entropy",
            Measure::ExpectedEntropy => "expected_entropy",
            Measure::Bald => "bald",
        }
    }

    pub fn of(self, r: &UncertaintyReport) -> f64 {
        match self {
            Measure::Confidence => r.confidence,
            Measure::PredictiveEntropy => r.predictive_entropy,
            Measure::ExpectedEntropy => r.expected_entropy,
            Measure::Bald => r.bald,
        }
    }

    /// Default histogram range for `k` classes.
    pub fn range(self, k: usize) -> (f64, f64) {
        match self {
            Measure::Confidence => (0.0, 1.0),
            _ => (0.0, (k as f64).ln()),
        }
    }
}

/// Runs the full evaluation protocol over in-distribution and (optional)
/// out-of-distribution examples.
pub fn evaluation_suite(examples: &[ExampleScores], opts: &EvalOptions) -> Result<EvalBundle> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let k = examples[0].mean_probs.len();
    for e in examples {
        if e.mean_probs.len() != k {
            return Err(Error::Data("inconsistent class counts across examples".into()));
        }
        if e.is_ood == e.label.is_some() {
            return Err(Error::Data("OOD examples must be unlabeled and vice versa".into()));
        }
        if e.label.is_some_and(|l| l >= k) {
            return Err(Error::Data(format!("label outside 0..{k}")));
        }
    }
    let in_dist: Vec<&ExampleScores> = examples.iter().filter(|e| !e.is_ood).collect();
    let ood: Vec<&ExampleScores> = examples.iter().filter(|e| e.is_ood).collect();
    let mut bundle = EvalBundle {
        summary: Summary::default(),
        curves: Vec::new(),
        histograms: Vec::new(),
        notices: Vec::new(),
    };
    let record_curves = |bundle: &mut EvalBundle, name: &str, sb: &ScoredBinary| -> (Option<f64>, Option<f64>) {
        let roc = match roc_curve_auc(sb) {
            Ok(c) => {
                let auc = c.auc;
                bundle.curves.push((format!("roc_{name}"), c));
                Some(auc)
            }
            Err(e) => {
                bundle.notices.push(format!("roc_{name}: {e}"));
                None
            }
        };
        let pr = match pr_curve_auc(sb) {
            Ok(c) => {
                let auc = c.auc;
                bundle.curves.push((format!("pr_{name}"), c));
                Some(auc)
            }
            Err(e) => {
                bundle.notices.push(format!("pr_{name}: {e}"));
                None
            }
        };
        (roc, pr)
    };

    if in_dist.is_empty() {
        bundle.notices.push("no in-distribution examples: accuracy and class curves skipped".into());
    } else {
        let probs: Vec<&[f64]> = in_dist.iter().map(|e| e.mean_probs.as_slice()).collect();
        let labels: Vec<usize> = in_dist.iter().map(|e| e.label.expect("labeled")).collect();
        bundle.summary.top1 = Some(top_k_accuracy(&probs, &labels, 1)?);
        if k >= 5 {
            bundle.summary.top5 = Some(top_k_accuracy(&probs, &labels, 5)?);
        } else {
            bundle.notices.push(format!("top5 undefined for {k} classes"));
        }

        // micro one-vs-rest over every (example, class) pair
        let mut scores = Vec::with_capacity(in_dist.len() * k);
        let mut truth = Vec::with_capacity(in_dist.len() * k);
        for e in &in_dist {
            for (c, &p) in e.mean_probs.iter().enumerate() {
                scores.push(p);
                truth.push(Some(c) == e.label);
            }
        }
        let (roc, pr) = record_curves(&mut bundle, "micro", &ScoredBinary::new(scores, truth)?);
        bundle.summary.roc_auc_micro = roc;
        bundle.summary.pr_auc_micro = pr;

        // correctness detection: does confidence rank correct predictions first?
        let correct: Vec<bool> = in_dist
            .iter()
            .map(|e| Some(e.report.predicted_class) == e.label)
            .collect();
        let conf: Vec<f64> = in_dist.iter().map(|e| e.report.confidence).collect();
        let (roc, pr) = record_curves(&mut bundle, "correctness", &ScoredBinary::new(conf, correct.clone())?);
        bundle.summary.roc_auc_correctness = roc;
        bundle.summary.pr_auc_correctness = pr;

        for m in [Measure::Confidence, Measure::PredictiveEntropy, Measure::Bald] {
            let (lo, hi) = m.range(k);
            for (split, want) in [("true", true), ("false", false)] {
                let vals: Vec<f64> = in_dist
                    .iter()
                    .zip(&correct)
                    .filter(|(_, &c)| c == want)
                    .map(|(e, _)| m.of(&e.report))
                    .collect();
                push_histogram(&mut bundle, &format!("{}_{split}", m.name()), &vals, opts.bins, lo, hi);
            }
        }
    }

    if ood.is_empty() {
        bundle
            .notices
            .push("no out-of-distribution examples: in/out histograms and OOD AUROC skipped".into());
    } else {
        for m in [Measure::Confidence, Measure::PredictiveEntropy, Measure::Bald] {
            let (lo, hi) = m.range(k);
            for (split, group) in [("in", &in_dist), ("out", &ood)] {
                let vals: Vec<f64> = group.iter().map(|e| m.of(&e.report)).collect();
                push_histogram(&mut bundle, &format!("{}_{split}", m.name()), &vals, opts.bins, lo, hi);
            }
        }
        let is_ood: Vec<bool> = examples.iter().map(|e| e.is_ood).collect();
        for m in [Measure::PredictiveEntropy, Measure::Bald] {
            let scores: Vec<f64> = examples.iter().map(|e| m.of(&e.report)).collect();
            let sb = ScoredBinary::new(scores, is_ood.clone())?;
            let auc = match roc_curve_auc(&sb) {
                Ok(c) => {
                    let auc = c.auc;
                    bundle.curves.push((format!("roc_ood_{}", m.name()), c));
                    Some(auc)
                }
                Err(e) => {
                    bundle.notices.push(format!("roc_ood_{}: {e}", m.name()));
                    None
                }
            };
            match m {
                Measure::PredictiveEntropy => bundle.summary.ood_auroc_entropy = auc,
                _ => bundle.summary.ood_auroc_bald = auc,
            }
        }
    }
    Ok(bundle)
}

fn push_histogram(bundle: &mut EvalBundle, name: &str, vals: &[f64], bins: usize, lo: f64, hi: f64) {
    match density_histogram(vals, bins, lo, hi) {
        Ok(h) => bundle.histograms.push((name.to_string(), h)),
        Err(e) => bundle.notices.push(format!("{name}: {e}")),
    }
}
