//! Object-track datasets: JSON Lines I/O, densification, activation points and
//! subject partitioning.
//!
//! Boxes are kept in pixels; normalization happens when trajectories are built.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_box, FrameSize, NormBox, PixelBox};

pub const DEFAULT_FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame_index: u64,
    pub bbox: PixelBox,
    pub active: bool,
    /// False for frames inserted by [`densify`] or produced by the tracker.
    pub annotated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackKind {
    Passive,
    Mixed,
    ActiveOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub track_id: String,
    pub subject_id: String,
    pub video_id: String,
    pub object_class: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub frames: Vec<TrackFrame>,
}

impl ObjectTrack {
    pub fn frame_size(&self) -> FrameSize {
        FrameSize { width: f64::from(self.frame_width), height: f64::from(self.frame_height) }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks every structural invariant of a track.
    pub fn validate(&self) -> Result<()> {
        let frame = FrameSize::new(f64::from(self.frame_width), f64::from(self.frame_height))?;
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument(format!("track `{}` has no frames", self.track_id)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.bbox.validate()?;
            if !f.bbox.fits_in(frame) {
                return Err(Error::InvalidBox(format!(
                    "track `{}` frame {}: box {:?} outside {}x{} frame",
                    self.track_id, f.frame_index, f.bbox, self.frame_width, self.frame_height
                )));
            }
            if i > 0 && self.frames[i - 1].frame_index >= f.frame_index {
                return Err(Error::InvalidArgument(format!(
                    "track `{}`: frame indices not strictly ascending at {}",
                    self.track_id, f.frame_index
                )));
            }
        }
        Ok(())
    }

    /// Normalized boxes for the frames at positions `range`.
    pub fn normalized(&self, range: std::ops::Range<usize>) -> Vec<NormBox> {
        let frame = self.frame_size();
        self.frames[range].iter().map(|f| normalize_box(&f.bbox, frame).expect("validated frame geometry")).collect()
    }

    /// True when positions `range` cover consecutive frame indices.
    pub fn is_contiguous(&self, range: std::ops::Range<usize>) -> bool {
        self.frames[range].windows(2).all(|w| w[1].frame_index == w[0].frame_index + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tracks: Vec<ObjectTrack>,
    pub frame_rate: f64,
}

impl Default for Dataset {
    fn default() -> Self {
        Self { tracks: Vec::new(), frame_rate: DEFAULT_FRAME_RATE }
    }
}

impl Dataset {
    pub fn new(tracks: Vec<ObjectTrack>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tracks {
            t.validate()?;
            if !seen.insert(t.track_id.as_str()) {
                return Err(Error::DuplicateTrack(t.track_id.clone()));
            }
        }
        Ok(Self { tracks, frame_rate: DEFAULT_FRAME_RATE })
    }

    /// Sorted, de-duplicated subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.tracks.iter().map(|t| t.subject_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Sorted, de-duplicated object classes.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.tracks.iter().map(|t| t.object_class.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn densified(&self) -> Dataset {
        Dataset { tracks: self.tracks.iter().map(densify).collect(), frame_rate: self.frame_rate }
    }

    pub fn n_frames(&self) -> usize {
        self.tracks.iter().map(|t| t.frames.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// JSON Lines format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    f: u64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    active: bool,
    annotated: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    track_id: String,
    subject_id: String,
    video_id: String,
    class: String,
    frame_width: u32,
    frame_height: u32,
    frames: Vec<FrameRecord>,
}

impl From<&ObjectTrack> for TrackRecord {
    fn from(t: &ObjectTrack) -> Self {
        TrackRecord {
            track_id: t.track_id.clone(),
            subject_id: t.subject_id.clone(),
            video_id: t.video_id.clone(),
            class: t.object_class.clone(),
            frame_width: t.frame_width,
            frame_height: t.frame_height,
            frames: t
                .frames
                .iter()
                .map(|f| FrameRecord {
                    f: f.frame_index,
                    x1: f.bbox.x1,
                    y1: f.bbox.y1,
                    x2: f.bbox.x2,
                    y2: f.bbox.y2,
                    active: f.active,
                    annotated: f.annotated,
                })
                .collect(),
        }
    }
}

impl From<TrackRecord> for ObjectTrack {
    fn from(r: TrackRecord) -> Self {
        ObjectTrack {
            track_id: r.track_id,
            subject_id: r.subject_id,
            video_id: r.video_id,
            object_class: r.class,
            frame_width: r.frame_width,
            frame_height: r.frame_height,
            frames: r
                .frames
                .into_iter()
                .map(|f| TrackFrame {
                    frame_index: f.f,
                    bbox: PixelBox { x1: f.x1, y1: f.y1, x2: f.x2, y2: f.y2 },
                    active: f.active,
                    annotated: f.annotated,
                })
                .collect(),
        }
    }
}

/// Parses a JSON Lines track file. Blank lines are skipped; every error names
/// its 1-based line number.
pub fn parse_tracks<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut tracks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let record: TrackRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let track = ObjectTrack::from(record);
        track.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(track.track_id.clone()) {
            return Err(parse_err(Error::DuplicateTrack(track.track_id).to_string()));
        }
        tracks.push(track);
    }
    Ok(Dataset { tracks, frame_rate: DEFAULT_FRAME_RATE })
}

pub fn serialize_tracks<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    for t in &dataset.tracks {
        serde_json::to_writer(&mut writer, &TrackRecord::from(t))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Track analysis
// ---------------------------------------------------------------------------

pub fn classify_track(track: &ObjectTrack) -> TrackKind {
    let any_active = track.frames.iter().any(|f| f.active);
    let any_passive = track.frames.iter().any(|f| !f.active);
    match (any_active, any_passive) {
        (false, _) => TrackKind::Passive,
        (true, false) => TrackKind::ActiveOnly,
        (true, true) => TrackKind::Mixed,
    }
}

/// Positions where the flag flips from passive to active. Position 0 is never
/// an activation point.
pub fn activation_points(track: &ObjectTrack) -> Vec<usize> {
    track.frames.windows(2).enumerate().filter(|(_, w)| !w[0].active && w[1].active).map(|(i, _)| i + 1).collect()
}

/// Fills every missing frame index between consecutive frames with a per-corner
/// linear interpolation. Inserted frames carry the preceding frame's flag and
/// are marked as not annotated.
pub fn densify(track: &ObjectTrack) -> ObjectTrack {
    let mut frames = Vec::with_capacity(track.frames.len());
    for (i, cur) in track.frames.iter().enumerate() {
        if i > 0 {
            let prev = &track.frames[i - 1];
            let gap = cur.frame_index - prev.frame_index;
            for k in 1..gap {
                let t = k as f64 / gap as f64;
                frames.push(TrackFrame {
                    frame_index: prev.frame_index + k,
                    bbox: prev.bbox.lerp(&cur.bbox, t),
                    active: prev.active,
                    annotated: false,
                });
            }
        }
        frames.push(cur.clone());
    }
    ObjectTrack { frames, ..track.clone() }
}

/// Partitions a dataset into (train, test) where test holds exactly the
/// tracks of `held_out_subject`.
pub fn split_by_subject(dataset: &Dataset, held_out_subject: &str) -> Result<(Dataset, Dataset)> {
    if !dataset.tracks.iter().any(|t| t.subject_id == held_out_subject) {
        return Err(Error::UnknownSubject(held_out_subject.to_owned()));
    }
    let (test, train): (Vec<_>, Vec<_>) =
        dataset.tracks.iter().cloned().partition(|t| t.subject_id == held_out_subject);
    if train.is_empty() {
        log::warn!("holding out `{held_out_subject}` leaves an empty training set");
    }
    let wrap = |tracks| Dataset { tracks, frame_rate: dataset.frame_rate };
    Ok((wrap(train), wrap(test)))
}
