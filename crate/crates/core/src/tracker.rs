//! Detection-to-track association: Kalman prediction, 1 − IoU costs with
//! optional class gating, and optimal assignment per frame.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::assignment::solve_assignment;
use crate::error::{Error, Result};
use crate::geometry::{iou, FrameSize, PixelBox};
use crate::kalman::{KalmanParams, KalmanState};
use crate::trackstore::{Dataset, ObjectTrack, TrackFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub frame_index: u64,
    pub object_class: String,
    pub bbox: PixelBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssocConfig {
    pub iou_threshold: f64,
    /// Frames a track may go unmatched before it is retired.
    pub max_age: u32,
    pub min_hits: u32,
    pub det_score_min: f64,
    pub class_gated: bool,
    pub kalman: KalmanParams,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 5,
            min_hits: 1,
            det_score_min: 0.8,
            class_gated: true,
            kalman: KalmanParams::default(),
        }
    }
}

impl AssocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) || !(0.0..=1.0).contains(&self.det_score_min) {
            return Err(Error::InvalidArgument("iou_threshold and det_score_min must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub frame_index: u64,
    pub bbox: PixelBox,
    /// False when the box is the filter prediction for a missed frame.
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveTrack {
    pub track_id: u64,
    pub object_class: String,
    pub state: KalmanState,
    /// One entry per frame since the track was born.
    pub history: Vec<HistoryEntry>,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    /// Score of the most recently matched detection.
    pub last_score: f64,
}

impl LiveTrack {
    pub fn is_confirmed(&self, config: &AssocConfig) -> bool {
        self.hits >= config.min_hits
    }

    /// History up to the last observed frame.
    pub fn observed_history(&self) -> &[HistoryEntry] {
        let end = self.history.iter().rposition(|e| e.observed).map_or(0, |i| i + 1);
        &self.history[..end]
    }
}

/// Association state for one video stream. Frames must arrive in increasing
/// order; frames with no detections may be skipped and are filled by
/// prediction-only steps.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: AssocConfig,
    live: Vec<LiveTrack>,
    retired: Vec<LiveTrack>,
    next_id: u64,
    last_frame: Option<u64>,
}

/// Big finite cost for pairs forbidden by the class gate.
const GATED_COST: f64 = 1e6;

impl Tracker {
    pub fn new(config: AssocConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, live: Vec::new(), retired: Vec::new(), next_id: 0, last_frame: None })
    }

    pub fn live_tracks(&self) -> &[LiveTrack] {
        &self.live
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    fn predict_all(&mut self, frame_index: u64) {
        let params = &self.config.kalman;
        for t in &mut self.live {
            t.state = t.state.predict(params);
            t.age += 1;
            t.time_since_update += 1;
            t.history.push(HistoryEntry { frame_index, bbox: t.state.to_box(), observed: false });
        }
    }

    fn retire_stale(&mut self) {
        let max_age = self.config.max_age;
        let (stale, keep): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.live).into_iter().partition(|t| t.time_since_update > max_age);
        self.live = keep;
        self.retired.extend(stale);
    }

    /// Processes the detections of one frame and returns the confirmed tracks
    /// matched or born at this frame.
    pub fn step(&mut self, frame_index: u64, detections: &[Detection]) -> Result<Vec<&LiveTrack>> {
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::InvalidArgument(format!(
                "detection at frame {} passed to step for frame {frame_index}",
                d.frame_index
            )));
        }
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(Error::InvalidArgument(format!("frame {frame_index} arrived after frame {last}")));
            }
            for skipped in last + 1..frame_index {
                self.predict_all(skipped);
                self.retire_stale();
            }
        }
        self.last_frame = Some(frame_index);

        let dets: Vec<&Detection> = detections.iter().filter(|d| d.score >= self.config.det_score_min).collect();
        self.predict_all(frame_index);

        let cost: Vec<Vec<f64>> = self
            .live
            .iter()
            .map(|t| {
                let predicted = t.state.to_box();
                dets.iter()
                    .map(|d| {
                        if self.config.class_gated && d.object_class != t.object_class {
                            GATED_COST
                        } else {
                            1.0 - iou(&predicted, &d.bbox)
                        }
                    })
                    .collect()
            })
            .collect();
        let assignment = solve_assignment(&cost)?;

        let mut det_used = vec![false; dets.len()];
        for (ti, di) in assignment.pairs() {
            if cost[ti][di] >= GATED_COST || 1.0 - cost[ti][di] < self.config.iou_threshold {
                continue;
            }
            let d = dets[di];
            let track = &mut self.live[ti];
            track.state = track.state.update(&d.bbox, &self.config.kalman)?;
            track.hits += 1;
            track.time_since_update = 0;
            track.last_score = d.score;
            *track.history.last_mut().expect("predicted entry pushed") =
                HistoryEntry { frame_index, bbox: d.bbox, observed: true };
            det_used[di] = true;
        }

        for (di, d) in dets.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.live.push(LiveTrack {
                track_id: id,
                object_class: d.object_class.clone(),
                state: KalmanState::from_box(&d.bbox, &self.config.kalman),
                history: vec![HistoryEntry { frame_index, bbox: d.bbox, observed: true }],
                hits: 1,
                age: 0,
                time_since_update: 0,
                last_score: d.score,
            });
        }

        self.retire_stale();
        let config = &self.config;
        Ok(self.live.iter().filter(|t| t.time_since_update == 0 && t.is_confirmed(config)).collect())
    }

    /// All tracks ever created, ordered by id, with trailing unobserved
    /// history trimmed.
    pub fn finish(self) -> Vec<LiveTrack> {
        let mut all: Vec<LiveTrack> = self.retired.into_iter().chain(self.live).collect();
        all.sort_by_key(|t| t.track_id);
        for t in &mut all {
            let keep = t.observed_history().len();
            t.history.truncate(keep);
        }
        all
    }
}

/// Runs one tracker per video over a detection list and returns the tracks in
/// the track-file model (`active = false`, `annotated = false`). Boxes
/// predicted outside the frame are clipped.
pub fn track_detections(detections: &[Detection], config: &AssocConfig, frame: FrameSize) -> Result<Dataset> {
    let mut tracks = Vec::new();
    for (video, frames) in group_by_video_frame(detections)? {
        let mut tracker = Tracker::new(config.clone())?;
        for (f, dets) in frames {
            tracker.step(f, &dets)?;
        }
        for t in tracker.finish() {
            if !t.is_confirmed(config) {
                continue;
            }
            tracks.push(live_to_object_track(&video, &t, frame));
        }
    }
    Dataset::new(tracks)
}

pub fn live_to_object_track(video_id: &str, t: &LiveTrack, frame: FrameSize) -> ObjectTrack {
    let frames = t
        .history
        .iter()
        .filter_map(|e| {
            let b = PixelBox {
                x1: e.bbox.x1.clamp(0.0, frame.width),
                y1: e.bbox.y1.clamp(0.0, frame.height),
                x2: e.bbox.x2.clamp(0.0, frame.width),
                y2: e.bbox.y2.clamp(0.0, frame.height),
            };
            b.validate().ok().map(|_| TrackFrame {
                frame_index: e.frame_index,
                bbox: b,
                active: false,
                annotated: false,
            })
        })
        .collect();
    ObjectTrack {
        track_id: format!("{video_id}/trk{}", t.track_id),
        subject_id: video_id.to_owned(),
        video_id: video_id.to_owned(),
        object_class: t.object_class.clone(),
        frame_width: frame.width.round() as u32,
        frame_height: frame.height.round() as u32,
        frames,
    }
}

/// Detections grouped by video, then by frame, both ascending.
pub fn group_by_video_frame(detections: &[Detection]) -> Result<BTreeMap<String, BTreeMap<u64, Vec<Detection>>>> {
    let mut out: BTreeMap<String, BTreeMap<u64, Vec<Detection>>> = BTreeMap::new();
    for d in detections {
        d.bbox.validate()?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::InvalidArgument(format!("detection score {} outside [0, 1]", d.score)));
        }
        out.entry(d.video_id.clone()).or_default().entry(d.frame_index).or_default().push(d.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Detections CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    video_id: String,
    frame: u64,
    class: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

pub fn read_detections<R: Read>(reader: R) -> Result<Vec<Detection>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DetectionRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        let bbox = PixelBox::new(row.x1, row.y1, row.x2, row.y2)
            .map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        if !(0.0..=1.0).contains(&row.score) {
            return Err(Error::Parse { line: i + 2, message: format!("score {} outside [0, 1]", row.score) });
        }
        out.push(Detection {
            video_id: row.video_id,
            frame_index: row.frame,
            object_class: row.class,
            bbox,
            score: row.score,
        });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(detections: &[Detection], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for d in detections {
        w.serialize(DetectionRow {
            video_id: d.video_id.clone(),
            frame: d.frame_index,
            class: d.object_class.clone(),
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            score: d.score,
        })?;
    }
    w.flush()?;
    Ok(())
}
