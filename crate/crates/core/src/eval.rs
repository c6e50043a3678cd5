//! Evaluation of next-active-object scores: detection-style matching against
//! annotations, precision-recall curves and AP, cross-validation protocols
//! (leave one person out, leave one object class out), time to activation and
//! active-fire-rate tables.
//!
//! Two granularities are supported. Trajectory-level evaluation scores the
//! labeled trajectories extracted from held-out tracks (every active
//! trajectory plus one sampled trajectory per passive track). Detection-level
//! evaluation slides the scorer over held-out tracks and matches the
//! resulting boxes to per-frame annotations, where only passive frames of
//! tracks that later become active count as valid targets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{describe, motion_magnitude, DescriptorVariant};
use crate::error::{Error, Result};
use crate::forest::{balance_features, fit_threshold, train, LabeledFeature, TrainConfig};
use crate::geometry::{iou, PixelBox};
use crate::predictor::{
    check_encoding, run_offline, CenterBiasScorer, Model, MotionScorer, RandomScorer, ScoreContext, ScoredPrediction,
    Scorer,
};
use crate::seed;
use crate::trackstore::{classify_track, split_by_subject, Dataset, TrackKind};
use crate::trajectories::{extract_active_at, extract_passive_encoded, Encoding, Label, Trajectory};

pub const DEFAULT_IOU_MIN: f64 = 0.5;

// ---------------------------------------------------------------------------
// Ground truth and matching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub video_id: String,
    pub frame_index: u64,
    pub object_class: String,
    pub bbox: PixelBox,
    /// True on the passive frames of a track that later becomes active.
    pub valid: bool,
    /// The object is being manipulated in this frame.
    pub active: bool,
    pub source_track_id: String,
}

/// One entry per frame per track. Expects a densified dataset.
pub fn build_gt(dataset: &Dataset) -> Vec<GtEntry> {
    let mut out = Vec::with_capacity(dataset.n_frames());
    for t in &dataset.tracks {
        let mixed = classify_track(t) == TrackKind::Mixed;
        for f in &t.frames {
            out.push(GtEntry {
                video_id: t.video_id.clone(),
                frame_index: f.frame_index,
                object_class: t.object_class.clone(),
                bbox: f.bbox,
                valid: mixed && !f.active,
                active: f.active,
                source_track_id: t.track_id.clone(),
            });
        }
    }
    if !out.iter().any(|g| g.valid) {
        log::warn!("no valid annotations: recall is undefined");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub confidence: f64,
    pub tp: bool,
}

/// Labels each prediction TP or FP (output order follows `preds`). Within a
/// frame, predictions are processed by descending confidence and each claims
/// the unclaimed valid same-class annotation it overlaps most, provided the
/// IoU reaches `iou_min`.
pub fn match_predictions(preds: &[ScoredPrediction], gt: &[GtEntry], iou_min: f64) -> Vec<LabeledPrediction> {
    let mut gt_at: HashMap<(&str, u64), Vec<usize>> = HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        if g.valid {
            gt_at.entry((g.video_id.as_str(), g.frame_index)).or_default().push(i);
        }
    }
    let mut pred_at: HashMap<(&str, u64), Vec<usize>> = HashMap::new();
    for (i, p) in preds.iter().enumerate() {
        pred_at.entry((p.video_id.as_str(), p.frame_index)).or_default().push(i);
    }
    let mut out: Vec<LabeledPrediction> =
        preds.iter().map(|p| LabeledPrediction { confidence: p.confidence, tp: false }).collect();
    let mut claimed = vec![false; gt.len()];
    for (key, mut idx) in pred_at {
        let Some(candidates) = gt_at.get(&key) else {
            continue;
        };
        idx.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
        for i in idx {
            let p = &preds[i];
            let mut best: Option<(usize, f64)> = None;
            for &g in candidates {
                if claimed[g] || gt[g].object_class != p.object_class {
                    continue;
                }
                let o = iou(&p.bbox, &gt[g].bbox);
                if o >= iou_min && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
                out[i].tp = true;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Precision-recall and AP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub n_valid_gt: usize,
    pub n_predictions: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub h: Option<usize>,
    pub variant: Option<String>,
    pub fold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pr: Vec<PrPoint>,
    pub ap: f64,
    pub counts: Counts,
    pub metadata: ReportMeta,
}

/// Sweeps the distinct confidences in descending order and integrates the
/// curve with all-points interpolation:
/// `AP = Σ (R_i − R_{i−1}) · max{P_j : R_j ≥ R_i}`.
pub fn pr_and_ap(labeled: &[LabeledPrediction], n_valid_gt: usize) -> Result<EvalReport> {
    if n_valid_gt == 0 {
        return Err(Error::InsufficientData("no valid ground truth: AP is undefined".into()));
    }
    if labeled.iter().any(|l| !l.confidence.is_finite()) {
        return Err(Error::InvalidArgument("non-finite confidence".into()));
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut pr = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].confidence;
        while i < sorted.len() && sorted[i].confidence == threshold {
            if sorted[i].tp {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pr.push(PrPoint { precision: tp as f64 / (tp + fp) as f64, recall: tp as f64 / n_valid_gt as f64, threshold });
    }
    if tp > n_valid_gt {
        return Err(Error::InvalidArgument(format!("{tp} true positives exceed {n_valid_gt} valid annotations")));
    }
    let mut interp = vec![0.0; pr.len()];
    let mut running = 0.0f64;
    for j in (0..pr.len()).rev() {
        running = running.max(pr[j].precision);
        interp[j] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &pi) in pr.iter().zip(&interp) {
        ap += (p.recall - prev_recall) * pi;
        prev_recall = p.recall;
    }
    Ok(EvalReport {
        pr,
        ap: ap.clamp(0.0, 1.0),
        counts: Counts { n_valid_gt, n_predictions: labeled.len(), tp, fp },
        metadata: ReportMeta::default(),
    })
}

// ---------------------------------------------------------------------------
// Methods and trajectory-level scoring
// ---------------------------------------------------------------------------

/// A scoring method before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Forest {
        variant: DescriptorVariant,
        encoding: Encoding,
        config: TrainConfig,
    },
    /// Threshold on the summed center displacement over an `h`-frame window.
    Motion {
        h: usize,
    },
    CenterBias,
    Random,
}

impl Method {
    pub fn forest(variant: DescriptorVariant, encoding: Encoding) -> Self {
        Method::Forest { variant, encoding, config: TrainConfig::default() }
    }

    pub fn name(&self) -> String {
        match self {
            Method::Forest { variant, encoding, .. } => format!("forest/{variant}/{encoding}"),
            Method::Motion { h } => format!("motion/h{h}"),
            Method::CenterBias => "center-bias".into(),
            Method::Random => "random".into(),
        }
    }

    /// Encoding the method's training and test trajectories must use, if any.
    pub fn encoding(&self) -> Option<Encoding> {
        match *self {
            Method::Forest { encoding, .. } => Some(encoding),
            Method::Motion { h } => Some(Encoding::Window { h }),
            Method::CenterBias | Method::Random => None,
        }
    }

    fn meta(&self, fold: Option<&str>) -> ReportMeta {
        let (h, variant) = match self {
            Method::Forest { variant, encoding, .. } => (Some(encoding.n_boxes()), Some(variant.to_string())),
            Method::Motion { h } => (Some(*h), None),
            _ => (None, None),
        };
        ReportMeta { method: self.name(), h, variant, fold: fold.map(str::to_owned) }
    }
}

/// Every active trajectory (ending `offset` frames before its activation
/// point) and one sampled trajectory per passive track. Tracks are densified
/// first.
pub fn labeled_trajectories(
    dataset: &Dataset,
    encoding: Encoding,
    offset: usize,
    rng_seed: u64,
) -> Result<Vec<Trajectory>> {
    encoding.validate()?;
    let mut out = Vec::new();
    for track in &dataset.densified().tracks {
        match classify_track(track) {
            TrackKind::Mixed => out.extend(extract_active_at(track, encoding, offset)?),
            TrackKind::Passive => {
                let s = seed::derive(rng_seed, &format!("passive/{}", track.track_id), 0);
                out.extend(extract_passive_encoded(track, encoding, s)?);
            }
            TrackKind::ActiveOnly => {}
        }
    }
    Ok(out)
}

/// Trains `method` on labeled trajectories encoded with the method's
/// encoding. Labels other than Active count as passive.
pub fn fit_on_trajectories(method: &Method, samples: &[Trajectory], rng_seed: u64) -> Result<Model> {
    match method {
        Method::Forest { variant, encoding, config } => {
            let features = samples
                .iter()
                .map(|t| Ok(LabeledFeature { features: describe(t, *variant)?, active: t.label == Label::Active }))
                .collect::<Result<Vec<_>>>()?;
            let balanced = balance_features(&features, seed::derive(rng_seed, "balance", 0))?;
            let config = TrainConfig { seed: seed::derive(rng_seed, "forest", 0), ..config.clone() };
            Ok(Model::Forest(train(&balanced, *encoding, &config)?))
        }
        Method::Motion { h } => {
            let pairs: Vec<(f64, bool)> =
                samples.iter().map(|t| (motion_magnitude(t), t.label == Label::Active)).collect();
            let model = fit_threshold(&pairs, seed::derive(rng_seed, "balance", 0))?;
            Ok(Model::Motion(MotionScorer { model, h: *h }))
        }
        Method::CenterBias => Ok(Model::CenterBias(CenterBiasScorer)),
        Method::Random => Ok(Model::Random(RandomScorer { seed: rng_seed })),
    }
}

/// Extracts labeled training trajectories from `dataset` and trains on them.
pub fn fit(method: &Method, dataset: &Dataset, sample_encoding: Encoding, rng_seed: u64) -> Result<Model> {
    check_method_encoding(method, sample_encoding)?;
    let samples = labeled_trajectories(dataset, sample_encoding, 0, seed::derive(rng_seed, "train-samples", 0))?;
    fit_on_trajectories(method, &samples, rng_seed)
}

fn check_method_encoding(method: &Method, sample_encoding: Encoding) -> Result<()> {
    match method.encoding() {
        Some(e) if e != sample_encoding => Err(Error::ModelMismatch(format!(
            "{} needs {e} trajectories, protocol uses {sample_encoding}",
            method.name()
        ))),
        _ => Ok(()),
    }
}

/// Scores already-encoded trajectories; a trajectory is a TP iff it is active.
pub fn score_trajectories(scorer: &dyn Scorer, samples: &[Trajectory]) -> Vec<LabeledPrediction> {
    samples
        .iter()
        .map(|t| {
            let ctx = ScoreContext {
                video_id: &t.video_id,
                track_id: &t.source_track_id,
                frame_index: t.end_frame_index,
                det_score: 1.0,
            };
            LabeledPrediction { confidence: scorer.score_encoded(&t.boxes, &ctx), tp: t.label == Label::Active }
        })
        .collect()
}

/// AP of `scorer` on labeled test trajectories.
pub fn trajectory_report(scorer: &dyn Scorer, samples: &[Trajectory]) -> Result<EvalReport> {
    if let Some(t) = samples.first() {
        if let Some(enc) = scorer.encoding() {
            if enc.n_boxes() != t.boxes.len() {
                return Err(Error::ModelMismatch(format!(
                    "{} expects {} boxes per trajectory, got {}",
                    scorer.name(),
                    enc.n_boxes(),
                    t.boxes.len()
                )));
            }
        }
    }
    let n_active = samples.iter().filter(|t| t.label == Label::Active).count();
    pr_and_ap(&score_trajectories(scorer, samples), n_active)
}

// ---------------------------------------------------------------------------
// Leave one person out
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub subject: String,
    pub report: Option<EvalReport>,
    /// Why the fold produced no report.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LopoReport {
    pub method: String,
    pub folds: Vec<FoldReport>,
    /// Mean AP over the evaluated folds.
    pub mean_ap: f64,
    pub n_evaluated: usize,
}

fn fold_seed(master: u64, subject: &str) -> u64 {
    seed::derive(master, &format!("fold/{subject}"), 0)
}

/// Runs `fold_fn(train, test, fold_seed)` once per subject, holding that
/// subject out. Folds whose evaluation lacks data (e.g. no positives) are
/// skipped with a warning; the mean covers the remaining folds.
pub fn lopo<F>(dataset: &Dataset, rng_seed: u64, fold_fn: F) -> Result<LopoReport>
where
    F: Fn(&Dataset, &Dataset, u64) -> Result<EvalReport> + Sync,
{
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-person-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let folds = subjects
        .par_iter()
        .map(|subject| {
            let (train, test) = split_by_subject(dataset, subject)?;
            assert!(train.tracks.iter().all(|t| &t.subject_id != subject));
            match fold_fn(&train, &test, fold_seed(rng_seed, subject)) {
                Ok(mut report) => {
                    report.metadata.fold = Some(subject.clone());
                    Ok(FoldReport { subject: subject.clone(), report: Some(report), skipped: None })
                }
                Err(Error::InsufficientData(why)) => {
                    log::warn!("fold `{subject}` skipped: {why}");
                    Ok(FoldReport { subject: subject.clone(), report: None, skipped: Some(why) })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let aps: Vec<f64> = folds.iter().filter_map(|f| f.report.as_ref().map(|r| r.ap)).collect();
    if aps.is_empty() {
        return Err(Error::InsufficientData("no fold could be evaluated".into()));
    }
    let method = folds.iter().find_map(|f| f.report.as_ref().map(|r| r.metadata.method.clone())).unwrap_or_default();
    Ok(LopoReport { method, mean_ap: aps.iter().sum::<f64>() / aps.len() as f64, n_evaluated: aps.len(), folds })
}

/// Trajectory-level leave-one-person-out: train on the other subjects'
/// trajectories, score the held-out subject's labeled trajectories.
pub fn lopo_trajectory(dataset: &Dataset, method: &Method, encoding: Encoding, rng_seed: u64) -> Result<LopoReport> {
    check_method_encoding(method, encoding)?;
    lopo(dataset, rng_seed, |train, test, s| {
        let model = fit(method, train, encoding, s)?;
        let samples = labeled_trajectories(test, encoding, 0, seed::derive(s, "test-samples", 0))?;
        let mut report = trajectory_report(&model, &samples)?;
        report.metadata = method.meta(None);
        Ok(report)
    })
}

/// Detection-level evaluation of a trained scorer on ground-truth tracks:
/// slide over every frame, match against annotations, compute AP.
pub fn detection_report(scorer: &dyn Scorer, test: &Dataset, iou_min: f64) -> Result<EvalReport> {
    let dense = test.densified();
    let preds = run_offline(&dense, scorer);
    let gt = build_gt(&dense);
    let n_valid = gt.iter().filter(|g| g.valid).count();
    pr_and_ap(&match_predictions(&preds, &gt, iou_min), n_valid)
}

/// Detection-level leave-one-person-out on ground-truth tracks.
pub fn lopo_detection(
    dataset: &Dataset,
    method: &Method,
    encoding: Encoding,
    iou_min: f64,
    rng_seed: u64,
) -> Result<LopoReport> {
    check_method_encoding(method, encoding)?;
    lopo(dataset, rng_seed, |train, test, s| {
        let model = fit(method, train, encoding, s)?;
        let mut report = detection_report(&model, test, iou_min)?;
        report.metadata = method.meta(None);
        Ok(report)
    })
}

// ---------------------------------------------------------------------------
// Leave one object class out
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoooRow {
    pub object_class: String,
    /// Trained without any trajectory of the class.
    pub ap_without: f64,
    /// Trained on all classes.
    pub ap_with: f64,
    pub n_test: usize,
    pub n_test_active: usize,
}

/// For each held-out subject, trains once on all classes and once without
/// `object_class`, and scores the held-out trajectories of that class.
/// Scores are pooled across folds before computing the two APs.
pub fn looo(
    dataset: &Dataset,
    object_class: &str,
    method: &Method,
    encoding: Encoding,
    rng_seed: u64,
) -> Result<LoooRow> {
    check_method_encoding(method, encoding)?;
    if !dataset.tracks.iter().any(|t| t.object_class == object_class) {
        return Err(Error::UnknownClass(object_class.to_owned()));
    }
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::InsufficientData("leave-one-object-out needs at least 2 subjects".into()));
    }
    let per_fold = subjects
        .par_iter()
        .map(|subject| -> Result<(Vec<LabeledPrediction>, Vec<LabeledPrediction>)> {
            let s = fold_seed(rng_seed, subject);
            let (train, test) = split_by_subject(dataset, subject)?;
            let test = Dataset {
                tracks: test.tracks.into_iter().filter(|t| t.object_class == object_class).collect(),
                frame_rate: test.frame_rate,
            };
            let samples = labeled_trajectories(&test, encoding, 0, seed::derive(s, "test-samples", 0))?;
            if samples.is_empty() {
                return Ok((Vec::new(), Vec::new()));
            }
            let without = Dataset {
                tracks: train.tracks.iter().filter(|t| t.object_class != object_class).cloned().collect(),
                frame_rate: train.frame_rate,
            };
            let m_without = fit(method, &without, encoding, s)?;
            let m_with = fit(method, &train, encoding, s)?;
            Ok((score_trajectories(&m_without, &samples), score_trajectories(&m_with, &samples)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (without, with): (Vec<_>, Vec<_>) = per_fold.into_iter().unzip();
    let without: Vec<LabeledPrediction> = without.into_iter().flatten().collect();
    let with: Vec<LabeledPrediction> = with.into_iter().flatten().collect();
    let n_active = with.iter().filter(|l| l.tp).count();
    if n_active == 0 {
        return Err(Error::InsufficientData(format!("class `{object_class}` has no active test trajectory")));
    }
    Ok(LoooRow {
        object_class: object_class.to_owned(),
        ap_without: pr_and_ap(&without, n_active)?.ap,
        ap_with: pr_and_ap(&with, n_active)?.ap,
        n_test: with.len(),
        n_test_active: n_active,
    })
}

/// [`looo`] for every class with at least one active test trajectory.
pub fn looo_table(dataset: &Dataset, method: &Method, encoding: Encoding, rng_seed: u64) -> Result<Vec<LoooRow>> {
    let mut rows = Vec::new();
    for class in dataset.classes() {
        match looo(dataset, &class, method, encoding, rng_seed) {
            Ok(row) => rows.push(row),
            Err(Error::InsufficientData(why)) => log::warn!("class `{class}` skipped: {why}"),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Time to activation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetAp {
    pub offset: usize,
    /// Mean over the folds with at least one positive at this offset.
    pub ap: f64,
    pub n_folds: usize,
    pub n_active: usize,
}

/// Trajectory-level AP of a trained scorer when the positive trajectories
/// end `offset` frames before activation. `None` where no positive exists.
pub fn ap_at_offsets(
    scorer: &dyn Scorer,
    test: &Dataset,
    encoding: Encoding,
    offsets: &[usize],
    rng_seed: u64,
) -> Result<Vec<Option<EvalReport>>> {
    check_encoding(scorer, encoding)?;
    offsets
        .iter()
        .map(|&k| {
            let samples = labeled_trajectories(test, encoding, k, rng_seed)?;
            match trajectory_report(scorer, &samples) {
                Ok(r) => Ok(Some(r)),
                Err(Error::InsufficientData(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Leave-one-person-out AP per offset. The model of each fold is trained at
/// offset 0, so offset 0 reproduces [`lopo_trajectory`].
pub fn time_to_activation(
    dataset: &Dataset,
    method: &Method,
    encoding: Encoding,
    offsets: &[usize],
    rng_seed: u64,
) -> Result<Vec<OffsetAp>> {
    check_method_encoding(method, encoding)?;
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::InsufficientData("time to activation needs at least 2 subjects".into()));
    }
    let per_fold = subjects
        .par_iter()
        .map(|subject| {
            let s = fold_seed(rng_seed, subject);
            let (train, test) = split_by_subject(dataset, subject)?;
            let model = fit(method, &train, encoding, s)?;
            ap_at_offsets(&model, &test, encoding, offsets, seed::derive(s, "test-samples", 0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(i, &offset)| {
            let reports: Vec<&EvalReport> = per_fold.iter().filter_map(|f| f[i].as_ref()).collect();
            let n = reports.len();
            OffsetAp {
                offset,
                ap: if n == 0 { 0.0 } else { reports.iter().map(|r| r.ap).sum::<f64>() / n as f64 },
                n_folds: n,
                n_active: reports.iter().map(|r| r.counts.n_valid_gt).sum(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Active fire rate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireRateRow {
    pub threshold: f64,
    /// Share of active-segment annotations hit by a same-class prediction at
    /// or above the threshold.
    pub frac_active_fired: f64,
    /// Against valid annotations, counting predictions at or above the
    /// threshold; 0 when there are none.
    pub precision: f64,
    pub recall: f64,
    pub n_active_gt: usize,
}

pub fn active_fire_rate(
    preds: &[ScoredPrediction],
    gt: &[GtEntry],
    thresholds: &[f64],
    iou_min: f64,
) -> Result<Vec<FireRateRow>> {
    let active: Vec<&GtEntry> = gt.iter().filter(|g| g.active).collect();
    if active.is_empty() {
        return Err(Error::InsufficientData("no active annotations".into()));
    }
    let mut pred_at: HashMap<(&str, u64), Vec<&ScoredPrediction>> = HashMap::new();
    for p in preds {
        pred_at.entry((p.video_id.as_str(), p.frame_index)).or_default().push(p);
    }
    // Highest confidence among the predictions hitting each active box.
    let fired_at: Vec<f64> = active
        .iter()
        .map(|g| {
            pred_at
                .get(&(g.video_id.as_str(), g.frame_index))
                .into_iter()
                .flatten()
                .filter(|p| p.object_class == g.object_class && iou(&p.bbox, &g.bbox) >= iou_min)
                .map(|p| p.confidence)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let labeled = match_predictions(preds, gt, iou_min);
    let n_valid = gt.iter().filter(|g| g.valid).count();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&LabeledPrediction> = labeled.iter().filter(|l| l.confidence >= t).collect();
            let tp = kept.iter().filter(|l| l.tp).count();
            FireRateRow {
                threshold: t,
                frac_active_fired: fired_at.iter().filter(|&&c| c >= t).count() as f64 / active.len() as f64,
                precision: if kept.is_empty() { 0.0 } else { tp as f64 / kept.len() as f64 },
                recall: if n_valid == 0 { 0.0 } else { tp as f64 / n_valid as f64 },
                n_active_gt: active.len(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub encoding: Encoding,
    pub variant: DescriptorVariant,
    pub mean_ap: f64,
    pub n_folds: usize,
}

/// Trajectory-level leave-one-person-out AP for every (encoding, variant)
/// pair, encodings outermost.
pub fn sweep(
    dataset: &Dataset,
    encodings: &[Encoding],
    variants: &[DescriptorVariant],
    config: &TrainConfig,
    rng_seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &encoding in encodings {
        for &variant in variants {
            let method = Method::Forest { variant, encoding, config: config.clone() };
            let r = lopo_trajectory(dataset, &method, encoding, rng_seed)?;
            rows.push(SweepRow { encoding, variant, mean_ap: r.mean_ap, n_folds: r.n_evaluated });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_pr_csv<W: Write>(pr: &[PrPoint], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for p in pr {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_folds_csv<W: Write>(report: &LopoReport, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["subject", "ap", "n_valid_gt", "n_predictions", "tp", "fp"])?;
    for f in &report.folds {
        match &f.report {
            Some(r) => {
                let c = r.counts;
                w.write_record([
                    f.subject.clone(),
                    r.ap.to_string(),
                    c.n_valid_gt.to_string(),
                    c.n_predictions.to_string(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                ])?;
            }
            None => w.write_record([f.subject.as_str(), "", "", "", "", ""])?,
        }
    }
    w.write_record(["mean", &report.mean_ap.to_string(), "", "", "", ""])?;
    w.flush()?;
    Ok(())
}

pub fn write_rows_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["encoding", "variant", "mean_ap", "n_folds"])?;
    for r in rows {
        w.write_record([r.encoding.to_string(), r.variant.to_string(), r.mean_ap.to_string(), r.n_folds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Precision-recall curves as a standalone SVG document.
pub fn pr_curves_svg(curves: &[(String, Vec<PrPoint>)]) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let (w, h, m) = (480.0, 400.0, 50.0);
    let x = |r: f64| m + r * (w - 2.0 * m);
    let y = |p: f64| h - m - p * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#, x(v), y(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, x(0.0) - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">recall</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (label, pr)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (j, p) in pr.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if j == 0 { "M" } else { "L" }, x(p.recall), y(p.precision));
        }
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            w - m,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackstore::tests::track_with_flags;
    use proptest::prelude::*;

    fn lp(confidence: f64, tp: bool) -> LabeledPrediction {
        LabeledPrediction { confidence, tp }
    }

    fn pred(frame: u64, class: &str, b: PixelBox, confidence: f64) -> ScoredPrediction {
        ScoredPrediction {
            video_id: "v".into(),
            frame_index: frame,
            object_class: class.into(),
            bbox: b,
            confidence,
            source_track_id: "p".into(),
        }
    }

    fn gt(frame: u64, class: &str, b: PixelBox, valid: bool) -> GtEntry {
        GtEntry {
            video_id: "v".into(),
            frame_index: frame,
            object_class: class.into(),
            bbox: b,
            valid,
            active: !valid,
            source_track_id: "g".into(),
        }
    }

    fn bx(x: f64) -> PixelBox {
        PixelBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    #[test]
    fn ap_fixtures() {
        assert_eq!(pr_and_ap(&[lp(0.9, true)], 1).unwrap().ap, 1.0);
        let r = pr_and_ap(&[lp(0.9, true), lp(0.8, false), lp(0.7, true)], 2).unwrap();
        assert!((r.ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(pr_and_ap(&[lp(0.9, false), lp(0.3, false)], 3).unwrap().ap, 0.0);
        assert!(matches!(pr_and_ap(&[lp(0.9, true)], 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ties_collapse_into_one_point() {
        let r = pr_and_ap(&[lp(0.5, true), lp(0.5, false)], 1).unwrap();
        assert_eq!(r.pr.len(), 1);
        assert_eq!(r.ap, 0.5);
        assert_eq!(r.counts, Counts { n_valid_gt: 1, n_predictions: 2, tp: 1, fp: 1 });
    }

    #[test]
    fn build_gt_marks_passive_segment_of_mixed_tracks() {
        let mut flags = vec![false; 100];
        flags.extend([true; 50]);
        let ds = Dataset::new(vec![track_with_flags("m", &flags), track_with_flags("p", &[false; 10])]).unwrap();
        let g = build_gt(&ds);
        assert_eq!(g.len(), 160);
        assert!(g[..100].iter().all(|e| e.valid && !e.active));
        assert!(g[100..150].iter().all(|e| !e.valid && e.active));
        assert!(g[150..].iter().all(|e| !e.valid && !e.active));
    }

    #[test]
    fn matching_rules() {
        let g = vec![gt(0, "mug", bx(0.0), true), gt(1, "mug", bx(0.0), false)];
        let exact = match_predictions(&[pred(0, "mug", bx(0.0), 0.9)], &g, 0.5);
        assert!(exact[0].tp);
        let two = match_predictions(&[pred(0, "mug", bx(1.0), 0.4), pred(0, "mug", bx(0.0), 0.9)], &g, 0.5);
        assert!(!two[0].tp && two[1].tp);
        let wrong_class = match_predictions(&[pred(0, "pan", bx(0.0), 0.9)], &g, 0.5);
        assert!(!wrong_class[0].tp);
        let invalid = match_predictions(&[pred(1, "mug", bx(0.0), 0.9)], &g, 0.5);
        assert!(!invalid[0].tp);
    }

    #[test]
    fn fire_rate_rows() {
        let g = vec![gt(0, "mug", bx(0.0), true), gt(1, "mug", bx(0.0), false), gt(2, "mug", bx(0.0), false)];
        let p = vec![pred(0, "mug", bx(0.0), 0.6), pred(1, "mug", bx(0.0), 0.9), pred(2, "mug", bx(0.0), 0.3)];
        let rows = active_fire_rate(&p, &g, &[0.2, 0.5, 0.95], 0.5).unwrap();
        assert_eq!(rows.iter().map(|r| r.frac_active_fired).collect::<Vec<_>>(), vec![1.0, 0.5, 0.0]);
        assert!((rows[0].precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[0].recall, 1.0);
        assert_eq!((rows[2].precision, rows[2].recall), (0.0, 0.0));
        let none_active = vec![gt(0, "mug", bx(0.0), true)];
        assert!(active_fire_rate(&p, &none_active, &[0.5], 0.5).is_err());
    }

    #[test]
    fn lopo_requires_two_subjects() {
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 5])]).unwrap();
        let r = lopo(&ds, 0, |_, _, _| unreachable!());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn lopo_mean_is_mean_of_folds() {
        let mut tracks = Vec::new();
        for s in ["A", "B", "C"] {
            let mut t = track_with_flags(s, &[false; 5]);
            t.subject_id = s.into();
            tracks.push(t);
        }
        let ds = Dataset::new(tracks).unwrap();
        let r = lopo(&ds, 1, |train, test, _| {
            assert_eq!(train.tracks.len(), 2);
            assert_eq!(test.tracks.len(), 1);
            let ap = match test.tracks[0].subject_id.as_str() {
                "A" => 0.2,
                "B" => 0.4,
                _ => return Err(Error::InsufficientData("none".into())),
            };
            Ok(EvalReport { pr: vec![], ap, counts: Counts::default(), metadata: ReportMeta::default() })
        })
        .unwrap();
        assert_eq!(r.n_evaluated, 2);
        assert!((r.mean_ap - 0.3).abs() < 1e-12);
        assert!(r.folds[2].skipped.is_some());
    }

    #[test]
    fn method_encoding_must_match_protocol() {
        let m = Method::forest(DescriptorVariant::Full, Encoding::Window { h: 10 });
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 5])]).unwrap();
        assert!(matches!(fit(&m, &ds, Encoding::Window { h: 12 }, 0), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn svg_has_one_path_per_curve() {
        let pr = pr_and_ap(&[lp(0.9, true), lp(0.8, false), lp(0.7, true)], 2).unwrap().pr;
        let svg = pr_curves_svg(&[("a<b".into(), pr.clone()), ("c".into(), pr)]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-width=\"1.5\"").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }

    /// Recomputes TP/FP from scratch at every distinct threshold.
    fn brute_force_ap(labeled: &[LabeledPrediction], n_valid: usize) -> f64 {
        let mut thresholds: Vec<f64> = labeled.iter().map(|l| l.confidence).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let points: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let tp = labeled.iter().filter(|l| l.confidence >= t && l.tp).count();
                let n = labeled.iter().filter(|l| l.confidence >= t).count();
                (tp as f64 / n_valid as f64, tp as f64 / n as f64)
            })
            .collect();
        let mut ap = 0.0;
        let mut prev = 0.0;
        for &(r, _) in &points {
            let p = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
            ap += (r - prev) * p;
            prev = r;
        }
        ap
    }

    proptest! {
        #[test]
        fn ap_matches_brute_force(
            labels in prop::collection::vec((0u8..20, any::<bool>()), 0..60),
            extra_gt in 0usize..10,
        ) {
            let labeled: Vec<_> = labels.iter().map(|&(c, tp)| lp(f64::from(c) / 20.0, tp)).collect();
            let n_valid = labeled.iter().filter(|l| l.tp).count() + extra_gt;
            prop_assume!(n_valid > 0);
            let r = pr_and_ap(&labeled, n_valid).unwrap();
            prop_assert!((r.ap - brute_force_ap(&labeled, n_valid)).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&r.ap));
            prop_assert!(r.pr.windows(2).all(|w| w[1].recall >= w[0].recall));
        }

        #[test]
        fn matching_never_double_claims(
            boxes in prop::collection::vec((0u64..3, 0.0f64..40.0, 0.0f64..1.0), 0..30),
            gts in prop::collection::vec((0u64..3, 0.0f64..40.0), 0..10),
        ) {
            let g: Vec<GtEntry> = gts.iter().map(|&(f, x)| gt(f, "mug", bx(x), true)).collect();
            let p: Vec<ScoredPrediction> = boxes.iter().map(|&(f, x, c)| pred(f, "mug", bx(x), c)).collect();
            let labeled = match_predictions(&p, &g, 0.5);
            for f in 0..3u64 {
                let tps = p.iter().zip(&labeled).filter(|(q, l)| q.frame_index == f && l.tp).count();
                let gs = g.iter().filter(|e| e.frame_index == f).count();
                prop_assert!(tps <= gs);
            }
        }

        #[test]
        fn fire_rate_is_monotone(confs in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let g: Vec<GtEntry> = (0..confs.len() as u64).map(|f| gt(f, "mug", bx(0.0), false)).collect();
            let p: Vec<ScoredPrediction> = confs.iter().enumerate().map(|(f, &c)| pred(f as u64, "mug", bx(0.0), c)).collect();
            let thresholds: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
            let rows = active_fire_rate(&p, &g, &thresholds, 0.5).unwrap();
            prop_assert!(rows.windows(2).all(|w| w[1].frac_active_fired <= w[0].frac_active_fired));
        }
    }
}
