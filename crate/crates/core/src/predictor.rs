//! Sliding-window scoring of tracks, offline over stored tracks or online on
//! top of the tracker, plus the center-bias and random baselines.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{describe_into, motion_magnitude_boxes};
use crate::error::{Error, Result};
use crate::forest::{Forest, ThresholdModel};
use crate::geometry::{normalize_box, FrameSize, NormBox, PixelBox};
use crate::seed;
use crate::tracker::{group_by_video_frame, AssocConfig, Detection, Tracker};
use crate::trackstore::Dataset;
use crate::trajectories::Encoding;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub video_id: String,
    pub frame_index: u64,
    pub object_class: String,
    pub bbox: PixelBox,
    pub confidence: f64,
    pub source_track_id: String,
}

/// Identifies the box being scored; used by scorers that do not look at the
/// trajectory.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub video_id: &'a str,
    pub track_id: &'a str,
    pub frame_index: u64,
    /// Detector confidence of the current box (1.0 on ground-truth tracks).
    pub det_score: f64,
}

/// Common interface of the learned model and the baselines.
pub trait Scorer: Sync {
    fn name(&self) -> String;

    /// How a history is reduced before scoring. `None` means the scorer only
    /// needs the current box, so it fires from the first frame of a track.
    fn encoding(&self) -> Option<Encoding>;

    /// Scores boxes already reduced by [`Scorer::encoding`] (or the raw
    /// history when that is `None`). The result lies in [0, 1].
    fn score_encoded(&self, boxes: &[NormBox], ctx: &ScoreContext<'_>) -> f64;

    /// Number of history frames required before the scorer fires.
    fn min_history(&self) -> usize {
        self.encoding().map_or(1, |e| e.min_history())
    }
}

/// Scores the history ending at the current frame, or `None` during warm-up.
pub fn score_history(scorer: &dyn Scorer, history: &[NormBox], ctx: &ScoreContext<'_>) -> Option<f64> {
    if history.len() < scorer.min_history() {
        return None;
    }
    match scorer.encoding() {
        Some(enc) => enc.encode(history).map(|b| scorer.score_encoded(&b, ctx)),
        None => Some(scorer.score_encoded(history, ctx)),
    }
}

/// Fails when a model built for one encoding is applied with another.
pub fn check_encoding(scorer: &dyn Scorer, expected: Encoding) -> Result<()> {
    match scorer.encoding() {
        Some(enc) if enc != expected => {
            Err(Error::ModelMismatch(format!("{} uses {enc}, requested {expected}", scorer.name())))
        }
        _ => Ok(()),
    }
}

impl Scorer for Forest {
    fn name(&self) -> String {
        format!("forest/{}/{}", self.variant, self.encoding)
    }

    fn encoding(&self) -> Option<Encoding> {
        Some(self.encoding)
    }

    fn score_encoded(&self, boxes: &[NormBox], _ctx: &ScoreContext<'_>) -> f64 {
        let mut x = Vec::with_capacity(self.d);
        describe_into(boxes, self.variant, &mut x);
        self.predict_values(&x)
    }
}

/// Motion-magnitude threshold classifier over `h`-frame windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionScorer {
    pub model: ThresholdModel,
    pub h: usize,
}

impl Scorer for MotionScorer {
    fn name(&self) -> String {
        format!("motion/h{}", self.h)
    }

    fn encoding(&self) -> Option<Encoding> {
        Some(Encoding::Window { h: self.h })
    }

    fn score_encoded(&self, boxes: &[NormBox], _ctx: &ScoreContext<'_>) -> f64 {
        self.model.confidence(motion_magnitude_boxes(boxes))
    }
}

/// Detector score times `1 − d / d_max`, where `d` is the distance of the box
/// center from the frame center in normalized units and `d_max = √2 / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CenterBiasScorer;

impl Scorer for CenterBiasScorer {
    fn name(&self) -> String {
        "center-bias".into()
    }

    fn encoding(&self) -> Option<Encoding> {
        None
    }

    fn score_encoded(&self, boxes: &[NormBox], ctx: &ScoreContext<'_>) -> f64 {
        let b = boxes.last().expect("at least one box");
        let d = b.xc().hypot(b.yc());
        let s_c = (1.0 - d / std::f64::consts::FRAC_1_SQRT_2).clamp(0.0, 1.0);
        (ctx.det_score * s_c).clamp(0.0, 1.0)
    }
}

/// Uniform score per (video, track, frame), independent of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn name(&self) -> String {
        "random".into()
    }

    fn encoding(&self) -> Option<Encoding> {
        None
    }

    fn score_encoded(&self, _boxes: &[NormBox], ctx: &ScoreContext<'_>) -> f64 {
        seed::unit_hash(self.seed, &[ctx.video_id, ctx.track_id], ctx.frame_index)
    }
}

/// Any of the supported scorers, as produced by training.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(Forest),
    Motion(MotionScorer),
    CenterBias(CenterBiasScorer),
    Random(RandomScorer),
}

impl Model {
    fn inner(&self) -> &dyn Scorer {
        match self {
            Model::Forest(m) => m,
            Model::Motion(m) => m,
            Model::CenterBias(m) => m,
            Model::Random(m) => m,
        }
    }
}

impl Scorer for Model {
    fn name(&self) -> String {
        self.inner().name()
    }

    fn encoding(&self) -> Option<Encoding> {
        self.inner().encoding()
    }

    fn score_encoded(&self, boxes: &[NormBox], ctx: &ScoreContext<'_>) -> f64 {
        self.inner().score_encoded(boxes, ctx)
    }
}

/// One track as seen at the frame being scored.
#[derive(Debug, Clone, Copy)]
pub struct TrackView<'a> {
    pub video_id: &'a str,
    pub track_id: &'a str,
    pub object_class: &'a str,
    /// Normalized history of consecutive frames ending at `frame_index`.
    pub history: &'a [NormBox],
    pub bbox: PixelBox,
    pub frame_index: u64,
    pub det_score: f64,
}

/// Scores every view with enough history; shorter ones emit nothing.
pub fn predict_frame(views: &[TrackView<'_>], scorer: &dyn Scorer) -> Vec<ScoredPrediction> {
    views.iter().filter_map(|v| predict_view(v, scorer)).collect()
}

fn predict_view(v: &TrackView<'_>, scorer: &dyn Scorer) -> Option<ScoredPrediction> {
    let ctx =
        ScoreContext { video_id: v.video_id, track_id: v.track_id, frame_index: v.frame_index, det_score: v.det_score };
    let confidence = score_history(scorer, v.history, &ctx)?;
    Some(ScoredPrediction {
        video_id: v.video_id.to_owned(),
        frame_index: v.frame_index,
        object_class: v.object_class.to_owned(),
        bbox: v.bbox,
        confidence,
        source_track_id: v.track_id.to_owned(),
    })
}

fn sort_predictions(preds: &mut [ScoredPrediction]) {
    preds.sort_by(|a, b| {
        (a.video_id.as_str(), a.frame_index, a.source_track_id.as_str()).cmp(&(
            b.video_id.as_str(),
            b.frame_index,
            b.source_track_id.as_str(),
        ))
    });
}

/// Slides the scorer over every frame of every track. The history at each
/// frame is the run of consecutive frames ending there, so gaps restart the
/// warm-up. Output is sorted by (video, frame, track).
pub fn run_offline(dataset: &Dataset, scorer: &dyn Scorer) -> Vec<ScoredPrediction> {
    let mut out: Vec<ScoredPrediction> = dataset
        .tracks
        .par_iter()
        .flat_map_iter(|track| {
            let all = track.normalized(0..track.frames.len());
            let mut preds = Vec::new();
            let mut run_start = 0;
            for (p, f) in track.frames.iter().enumerate() {
                if p > 0 && track.frames[p - 1].frame_index + 1 != f.frame_index {
                    run_start = p;
                }
                let view = TrackView {
                    video_id: &track.video_id,
                    track_id: &track.track_id,
                    object_class: &track.object_class,
                    history: &all[run_start..=p],
                    bbox: f.bbox,
                    frame_index: f.frame_index,
                    det_score: 1.0,
                };
                preds.extend(predict_view(&view, scorer));
            }
            preds
        })
        .collect();
    sort_predictions(&mut out);
    out
}

/// Scores the live tracks of one video stream frame by frame.
pub struct OnlinePredictor<'a> {
    video_id: String,
    tracker: Tracker,
    scorer: &'a dyn Scorer,
    frame: FrameSize,
    /// Normalized history per live track id; entries before the current
    /// frame never change once written.
    cache: HashMap<u64, Vec<NormBox>>,
}

impl<'a> OnlinePredictor<'a> {
    pub fn new(video_id: &str, config: AssocConfig, scorer: &'a dyn Scorer, frame: FrameSize) -> Result<Self> {
        FrameSize::new(frame.width, frame.height)?;
        Ok(Self { video_id: video_id.to_owned(), tracker: Tracker::new(config)?, scorer, frame, cache: HashMap::new() })
    }

    /// Feeds one frame of detections and returns the predictions for it.
    /// A track is scored only once it has at least as many observed frames
    /// as the scorer's history requirement.
    pub fn push_frame(&mut self, frame_index: u64, detections: &[Detection]) -> Result<Vec<ScoredPrediction>> {
        let min_hits = self.scorer.min_history();
        let confirmed = self.tracker.step(frame_index, detections)?;
        let mut out = Vec::new();
        for t in confirmed {
            let cached = self.cache.entry(t.track_id).or_default();
            for e in &t.history[cached.len()..] {
                cached.push(normalize_box(&e.bbox, self.frame)?);
            }
            if (t.hits as usize) < min_hits {
                continue;
            }
            let track_id = format!("{}/trk{}", self.video_id, t.track_id);
            let view = TrackView {
                video_id: &self.video_id,
                track_id: &track_id,
                object_class: &t.object_class,
                history: cached,
                bbox: t.history.last().expect("matched track has history").bbox,
                frame_index,
                det_score: t.last_score,
            };
            out.extend(predict_view(&view, self.scorer));
        }
        let live: std::collections::HashSet<u64> = self.tracker.live_tracks().iter().map(|t| t.track_id).collect();
        self.cache.retain(|id, _| live.contains(id));
        out.sort_by(|a, b| a.source_track_id.cmp(&b.source_track_id));
        Ok(out)
    }
}

/// Runs the tracker and scorer over a detection list. Within each video the
/// detections must appear in non-decreasing frame order.
pub fn run_online(
    detections: &[Detection],
    config: &AssocConfig,
    scorer: &dyn Scorer,
    frame: FrameSize,
) -> Result<Vec<ScoredPrediction>> {
    let mut last: HashMap<&str, u64> = HashMap::new();
    for d in detections {
        if let Some(prev) = last.insert(&d.video_id, d.frame_index) {
            if d.frame_index < prev {
                return Err(Error::InvalidArgument(format!(
                    "video `{}`: frame {} follows frame {prev}",
                    d.video_id, d.frame_index
                )));
            }
        }
    }
    let mut out = Vec::new();
    for (video, frames) in group_by_video_frame(detections)? {
        let mut online = OnlinePredictor::new(&video, config.clone(), scorer, frame)?;
        for (f, dets) in frames {
            out.extend(online.push_frame(f, &dets)?);
        }
    }
    sort_predictions(&mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Predictions CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    video_id: String,
    frame: u64,
    class: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
    track_id: String,
}

pub fn write_predictions<W: Write>(preds: &[ScoredPrediction], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in preds {
        w.serialize(PredictionRow {
            video_id: p.video_id.clone(),
            frame: p.frame_index,
            class: p.object_class.clone(),
            x1: p.bbox.x1,
            y1: p.bbox.y1,
            x2: p.bbox.x2,
            y2: p.bbox.y2,
            confidence: p.confidence,
            track_id: p.source_track_id.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<ScoredPrediction>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let parse_err = |message: String| Error::Parse { line: i + 2, message };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let bbox = PixelBox::new(row.x1, row.y1, row.x2, row.y2).map_err(|e| parse_err(e.to_string()))?;
        if !(0.0..=1.0).contains(&row.confidence) {
            return Err(parse_err(format!("confidence {} outside [0, 1]", row.confidence)));
        }
        out.push(ScoredPrediction {
            video_id: row.video_id,
            frame_index: row.frame,
            object_class: row.class,
            bbox,
            confidence: row.confidence,
            source_track_id: row.track_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackstore::tests::track_with_flags;

    /// Scores the mean x-center of the window, mapped into [0, 1].
    struct MeanX(usize);

    impl Scorer for MeanX {
        fn name(&self) -> String {
            "mean-x".into()
        }
        fn encoding(&self) -> Option<Encoding> {
            Some(Encoding::Window { h: self.0 })
        }
        fn score_encoded(&self, boxes: &[NormBox], _: &ScoreContext<'_>) -> f64 {
            assert_eq!(boxes.len(), self.0);
            boxes.iter().map(|b| b.xc() + 0.5).sum::<f64>() / boxes.len() as f64
        }
    }

    fn ctx() -> ScoreContext<'static> {
        ScoreContext { video_id: "v", track_id: "t", frame_index: 0, det_score: 1.0 }
    }

    #[test]
    fn warm_up_discards_short_tracks() {
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 4])]).unwrap();
        assert!(run_offline(&ds, &MeanX(5)).is_empty());
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 5])]).unwrap();
        let preds = run_offline(&ds, &MeanX(5));
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].frame_index, 4);
    }

    #[test]
    fn two_eligible_tracks_two_predictions() {
        let views_boxes = vec![NormBox::from_center_size(0.0, 0.0, 0.1, 0.1); 3];
        let b = PixelBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mk = |id| TrackView {
            video_id: "v",
            track_id: id,
            object_class: "c",
            history: &views_boxes,
            bbox: b,
            frame_index: 9,
            det_score: 1.0,
        };
        let preds = predict_frame(&[mk("a"), mk("b"), TrackView { history: &views_boxes[..2], ..mk("c") }], &MeanX(3));
        assert_eq!(preds.len(), 2);
        assert!(preds.iter().all(|p| (0.0..=1.0).contains(&p.confidence)));
    }

    #[test]
    fn offline_is_sorted_and_split_invariant() {
        let mut a = track_with_flags("a", &[false; 12]);
        a.video_id = "v2".into();
        let b = track_with_flags("b", &[false; 9]);
        let whole = Dataset::new(vec![a.clone(), b.clone()]).unwrap();
        let merged = Dataset::new(vec![b, a]).unwrap();
        let p1 = run_offline(&whole, &MeanX(3));
        assert_eq!(p1, run_offline(&merged, &MeanX(3)));
        assert_eq!(p1.len(), 10 + 7);
        assert!(p1.windows(2).all(|w| (&w[0].video_id, w[0].frame_index) <= (&w[1].video_id, w[1].frame_index)));
        assert!(run_offline(&Dataset::default(), &MeanX(3)).is_empty());
    }

    #[test]
    fn offline_restarts_warm_up_after_gap() {
        let mut t = track_with_flags("a", &[false; 8]);
        for f in &mut t.frames[4..] {
            f.frame_index += 10;
        }
        let ds = Dataset::new(vec![t]).unwrap();
        let frames: Vec<u64> = run_offline(&ds, &MeanX(3)).iter().map(|p| p.frame_index).collect();
        assert_eq!(frames, vec![2, 3, 16, 17]);
    }

    #[test]
    fn center_bias_fixtures() {
        let s = CenterBiasScorer;
        let centered = [NormBox::from_center_size(0.0, 0.0, 0.2, 0.2)];
        let corner = [NormBox::from_center_size(0.5, 0.5, 0.2, 0.2)];
        assert!((s.score_encoded(&centered, &ctx()) - 1.0).abs() < 1e-12);
        assert!(s.score_encoded(&corner, &ctx()).abs() < 1e-12);
        let half = ScoreContext { det_score: 0.5, ..ctx() };
        assert!((s.score_encoded(&centered, &half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_scorer_is_order_independent() {
        let s = RandomScorer { seed: 3 };
        let b = [NormBox::from_center_size(0.0, 0.0, 0.2, 0.2)];
        let x = s.score_encoded(&b, &ctx());
        assert_eq!(x, s.score_encoded(&b, &ctx()));
        assert!((0.0..1.0).contains(&x));
        assert_ne!(x, RandomScorer { seed: 4 }.score_encoded(&b, &ctx()));
    }

    fn detections_from(ds: &Dataset, score: f64) -> Vec<Detection> {
        let mut dets: Vec<Detection> = ds
            .tracks
            .iter()
            .flat_map(|t| {
                t.frames.iter().map(move |f| Detection {
                    video_id: t.video_id.clone(),
                    frame_index: f.frame_index,
                    object_class: t.object_class.clone(),
                    bbox: f.bbox,
                    score,
                })
            })
            .collect();
        dets.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
        dets
    }

    #[test]
    fn online_matches_offline_on_perfect_detections() {
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 20])]).unwrap();
        let frame = ds.tracks[0].frame_size();
        let offline = run_offline(&ds, &MeanX(4));
        let online = run_online(&detections_from(&ds, 1.0), &AssocConfig::default(), &MeanX(4), frame).unwrap();
        assert_eq!(online.len(), offline.len());
        for (a, b) in online.iter().zip(&offline) {
            assert_eq!(a.frame_index, b.frame_index);
            assert!((a.confidence - b.confidence).abs() < 1e-12);
        }
        assert_eq!(online.first().unwrap().frame_index, 3);
    }

    #[test]
    fn online_ignores_low_scores_and_rejects_disorder() {
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 10])]).unwrap();
        let frame = ds.tracks[0].frame_size();
        let weak = detections_from(&ds, 0.5);
        assert!(run_online(&weak, &AssocConfig::default(), &MeanX(2), frame).unwrap().is_empty());
        let mut shuffled = detections_from(&ds, 1.0);
        shuffled.swap(2, 5);
        assert!(run_online(&shuffled, &AssocConfig::default(), &MeanX(2), frame).is_err());
    }

    #[test]
    fn predictions_csv_round_trip() {
        let ds = Dataset::new(vec![track_with_flags("a", &[false; 6])]).unwrap();
        let preds = run_offline(&ds, &MeanX(2));
        let mut buf = Vec::new();
        write_predictions(&preds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("video_id,frame,class,x1,y1,x2,y2,confidence,track_id\n"));
        assert_eq!(read_predictions(&buf[..]).unwrap(), preds);
    }

    #[test]
    fn encoding_mismatch_is_reported() {
        assert!(check_encoding(&MeanX(3), Encoding::Window { h: 3 }).is_ok());
        assert!(matches!(check_encoding(&MeanX(3), Encoding::Window { h: 4 }), Err(Error::ModelMismatch(_))));
        assert!(check_encoding(&CenterBiasScorer, Encoding::Window { h: 4 }).is_ok());
    }
}
