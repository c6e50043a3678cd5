//! Fixed-length trajectory extraction for training and sliding-window
//! inference, and the temporal-pyramid encoding of variable-length prefixes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormBox;
use crate::seed;
use crate::trackstore::{activation_points, classify_track, ObjectTrack, TrackKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Active,
    Passive,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub boxes: Vec<NormBox>,
    pub label: Label,
    pub source_track_id: String,
    pub end_frame_index: u64,
    pub object_class: String,
    pub subject_id: String,
    pub video_id: String,
}

impl Trajectory {
    pub fn h(&self) -> usize {
        self.boxes.len()
    }

    fn from_track(track: &ObjectTrack, boxes: Vec<NormBox>, end: usize, label: Label) -> Self {
        Trajectory {
            boxes,
            label,
            source_track_id: track.track_id.clone(),
            end_frame_index: track.frames[end].frame_index,
            object_class: track.object_class.clone(),
            subject_id: track.subject_id.clone(),
            video_id: track.video_id.clone(),
        }
    }
}

/// How a track history is turned into the box sequence fed to a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// The last `h` boxes.
    Window { h: usize },
    /// The whole observed prefix, pooled by a temporal pyramid.
    Pyramid { levels: u32 },
}

impl Encoding {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Encoding::Window { h } if h < 2 => Err(Error::InvalidArgument(format!("window length h={h} must be >= 2"))),
            Encoding::Pyramid { levels } if !(1..=20).contains(&levels) => {
                Err(Error::InvalidArgument(format!("pyramid levels l={levels} must be in 1..=20")))
            }
            _ => Ok(()),
        }
    }

    /// Shortest history that can be encoded.
    pub fn min_history(&self) -> usize {
        match *self {
            Encoding::Window { h } => h,
            Encoding::Pyramid { levels } => 1 << (levels - 1),
        }
    }

    /// Number of boxes produced by [`Encoding::encode`].
    pub fn n_boxes(&self) -> usize {
        match *self {
            Encoding::Window { h } => h,
            Encoding::Pyramid { levels } => (1 << levels) - 1,
        }
    }

    /// Encodes the tail of `history`; `None` when the history is too short.
    pub fn encode(&self, history: &[NormBox]) -> Option<Vec<NormBox>> {
        if history.len() < self.min_history() {
            return None;
        }
        match *self {
            Encoding::Window { h } => Some(history[history.len() - h..].to_vec()),
            Encoding::Pyramid { levels } => pyramid_encode(history, levels).ok().map(|p| p.boxes),
        }
    }
}

impl std::fmt::Display for Encoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Encoding::Window { h } => write!(f, "window(h={h})"),
            Encoding::Pyramid { levels } => write!(f, "pyramid(l={levels})"),
        }
    }
}

fn check_h(h: usize) -> Result<()> {
    Encoding::Window { h }.validate()
}

/// Start of the run of passive frames ending at `end` (inclusive), or `None`
/// if `end` itself is active.
fn passive_run_start(track: &ObjectTrack, end: usize) -> Option<usize> {
    if track.frames[end].active {
        return None;
    }
    let mut start = end;
    while start > 0
        && !track.frames[start - 1].active
        && track.frames[start - 1].frame_index + 1 == track.frames[start].frame_index
    {
        start -= 1;
    }
    Some(start)
}

/// Active trajectories: the `h` frames immediately preceding each activation
/// point, kept only when all of them are passive.
pub fn extract_active(track: &ObjectTrack, h: usize) -> Result<Vec<Trajectory>> {
    extract_active_at(track, Encoding::Window { h }, 0)
}

/// Like [`extract_active`] but the sample ends `offset` frames before the
/// last passive frame, and any [`Encoding`] may be used. The whole span from
/// the sample start to the activation point must be passive.
pub fn extract_active_at(track: &ObjectTrack, encoding: Encoding, offset: usize) -> Result<Vec<Trajectory>> {
    encoding.validate()?;
    let mut out = Vec::new();
    for p in activation_points(track) {
        let last_passive = p - 1;
        let Some(run_start) = passive_run_start(track, last_passive) else {
            continue;
        };
        if last_passive < run_start + offset {
            continue;
        }
        let end = last_passive - offset;
        let prefix_len = end + 1 - run_start;
        if prefix_len < encoding.min_history() {
            continue;
        }
        let boxes = match encoding {
            Encoding::Window { h } => track.normalized(end + 1 - h..end + 1),
            Encoding::Pyramid { .. } => {
                let prefix = track.normalized(run_start..end + 1);
                encoding.encode(&prefix).expect("prefix length checked")
            }
        };
        out.push(Trajectory::from_track(track, boxes, end, Label::Active));
    }
    Ok(out)
}

/// One uniformly sampled passive trajectory from a passive track, or `None`
/// if the track is shorter than `h`.
pub fn extract_passive(track: &ObjectTrack, h: usize, rng_seed: u64) -> Result<Option<Trajectory>> {
    extract_passive_encoded(track, Encoding::Window { h }, rng_seed)
}

pub fn extract_passive_encoded(track: &ObjectTrack, encoding: Encoding, rng_seed: u64) -> Result<Option<Trajectory>> {
    encoding.validate()?;
    if classify_track(track) != TrackKind::Passive {
        return Err(Error::InvalidArgument(format!("track `{}` is not passive", track.track_id)));
    }
    let min = encoding.min_history();
    let n = track.frames.len();
    if n < min {
        return Ok(None);
    }
    let mut rng = seed::rng(rng_seed);
    let end = rng.random_range(min - 1..n);
    let boxes = match encoding {
        Encoding::Window { h } => track.normalized(end + 1 - h..end + 1),
        Encoding::Pyramid { .. } => {
            let prefix = track.normalized(0..end + 1);
            encoding.encode(&prefix).expect("prefix length checked")
        }
    };
    Ok(Some(Trajectory::from_track(track, boxes, end, Label::Passive)))
}

/// Every contiguous `h`-frame window of a track, keyed by the frame index of
/// its last box. Tracks shorter than `h` yield nothing.
pub fn sliding_windows(track: &ObjectTrack, h: usize) -> Result<Vec<(u64, Trajectory)>> {
    check_h(h)?;
    let n = track.frames.len();
    if n < h {
        return Ok(Vec::new());
    }
    let all = track.normalized(0..n);
    Ok((h - 1..n)
        .filter(|&p| track.is_contiguous(p + 1 - h..p + 1))
        .map(|p| {
            let t = Trajectory::from_track(track, all[p + 1 - h..p + 1].to_vec(), p, Label::Unlabeled);
            (t.end_frame_index, t)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidEncoding {
    pub levels: u32,
    /// Coarse-to-fine: 1 box for level 1, then 2, then 4, ...
    pub boxes: Vec<NormBox>,
}

fn mean_box(boxes: &[NormBox]) -> NormBox {
    let n = boxes.len() as f64;
    let sum = boxes.iter().fold([0.0; 4], |acc, b| [acc[0] + b.x1, acc[1] + b.y1, acc[2] + b.x2, acc[3] + b.y2]);
    NormBox { x1: sum[0] / n, y1: sum[1] / n, x2: sum[2] / n, y2: sum[3] / n }
}

/// Temporal-pyramid pooling of `prefix` into `2^l - 1` averaged boxes. Level
/// `k` splits the prefix into `2^(k-1)` contiguous segments whose lengths
/// differ by at most one, longer segments first.
pub fn pyramid_encode(prefix: &[NormBox], levels: u32) -> Result<PyramidEncoding> {
    Encoding::Pyramid { levels }.validate()?;
    let finest = 1usize << (levels - 1);
    if prefix.len() < finest {
        return Err(Error::InsufficientData(format!(
            "pyramid with {levels} levels needs at least {finest} boxes, got {}",
            prefix.len()
        )));
    }
    let mut boxes = Vec::with_capacity((1 << levels) - 1);
    for level in 0..levels {
        let segments = 1usize << level;
        let base = prefix.len() / segments;
        let rem = prefix.len() % segments;
        let mut start = 0;
        for s in 0..segments {
            let len = base + usize::from(s < rem);
            boxes.push(mean_box(&prefix[start..start + len]));
            start += len;
        }
    }
    Ok(PyramidEncoding { levels, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackstore::tests::track_with_flags;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn flags(passive: usize, active: usize) -> Vec<bool> {
        let mut f = vec![false; passive];
        f.extend(vec![true; active]);
        f
    }

    #[test]
    fn active_window_precedes_activation() {
        let t = track_with_flags("m", &flags(100, 50));
        let out = extract_active(&t, 30).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].end_frame_index, 99);
        assert_eq!(out[0].h(), 30);
        assert_eq!(out[0].label, Label::Active);
        assert_eq!(out[0].boxes, t.normalized(70..100));
    }

    #[test]
    fn active_needs_full_history() {
        let t = track_with_flags("m", &flags(10, 5));
        assert!(extract_active(&t, 30).unwrap().is_empty());
    }

    /// Reference extractor: tries every window and keeps the ones that end
    /// right before a passive-to-active flip and contain only passive flags.
    fn brute_active(flags: &[bool], h: usize) -> Vec<usize> {
        let mut ends = Vec::new();
        for end in 0..flags.len() {
            if end + 1 < h || end + 1 >= flags.len() {
                continue;
            }
            let window = &flags[end + 1 - h..=end];
            if window.iter().all(|a| !a) && flags[end + 1] {
                ends.push(end);
            }
        }
        ends
    }

    #[test]
    fn two_activations_two_trajectories() {
        let mut f = flags(40, 10);
        f.extend(flags(35, 5));
        let t = track_with_flags("m", &f);
        let ends: Vec<u64> = extract_active(&t, 30).unwrap().iter().map(|x| x.end_frame_index).collect();
        let expected: Vec<u64> = brute_active(&f, 30).into_iter().map(|e| e as u64).collect();
        assert_eq!(expected, vec![39, 84]);
        assert_eq!(ends, expected);
    }

    #[test]
    fn active_offset_shifts_window() {
        let t = track_with_flags("m", &flags(100, 5));
        let out = extract_active_at(&t, Encoding::Window { h: 30 }, 20).unwrap();
        assert_eq!(out[0].end_frame_index, 79);
        assert!(extract_active_at(&t, Encoding::Window { h: 30 }, 71).unwrap().is_empty());
        assert_eq!(extract_active_at(&t, Encoding::Window { h: 30 }, 70).unwrap().len(), 1);
    }

    #[test]
    fn passive_extraction_cases() {
        let exact = track_with_flags("p", &[false; 30]);
        let got = extract_passive(&exact, 30, 1).unwrap().unwrap();
        assert_eq!(got.boxes, exact.normalized(0..30));
        assert_eq!(got.label, Label::Passive);

        let short = track_with_flags("p", &[false; 29]);
        assert!(extract_passive(&short, 30, 1).unwrap().is_none());

        let long = track_with_flags("p", &[false; 90]);
        let a = extract_passive(&long, 30, 42).unwrap();
        let b = extract_passive(&long, 30, 42).unwrap();
        assert_eq!(a, b);

        let mixed = track_with_flags("m", &flags(40, 5));
        assert!(extract_passive(&mixed, 30, 1).is_err());
    }

    #[test]
    fn passive_seeds_cover_all_windows() {
        let t = track_with_flags("p", &[false; 8]);
        let ends: BTreeSet<u64> =
            (0..400).map(|s| extract_passive(&t, 4, s).unwrap().unwrap().end_frame_index).collect();
        assert_eq!(ends, (3..8).collect());
    }

    #[test]
    fn sliding_window_counts() {
        let h = 5;
        assert_eq!(sliding_windows(&track_with_flags("a", &[false; 5]), h).unwrap().len(), 1);
        let w = sliding_windows(&track_with_flags("a", &[false; 7]), h).unwrap();
        assert_eq!(w.iter().map(|(e, _)| *e).collect::<Vec<_>>(), vec![4, 5, 6]);
        assert!(sliding_windows(&track_with_flags("a", &[false; 4]), h).unwrap().is_empty());
        assert!(sliding_windows(&track_with_flags("a", &[false; 4]), 1).is_err());
    }

    fn nb(xc: f64) -> NormBox {
        NormBox::from_center_size(xc, 0.0, 0.1, 0.1)
    }

    #[test]
    fn pyramid_constant_input() {
        let b = nb(0.2);
        let p = pyramid_encode(&[b; 4], 2).unwrap();
        assert_eq!(p.boxes.len(), 3);
        for o in &p.boxes {
            assert!((o.xc() - b.xc()).abs() < 1e-15 && (o.area() - b.area()).abs() < 1e-15);
        }
    }

    #[test]
    fn pyramid_four_levels_has_fifteen_boxes() {
        let prefix: Vec<_> = (0..8).map(|i| nb(i as f64 * 0.01)).collect();
        assert_eq!(pyramid_encode(&prefix, 4).unwrap().boxes.len(), 15);
        assert!(pyramid_encode(&prefix[..7], 4).is_err());
    }

    #[test]
    fn pyramid_hand_averaged() {
        let prefix: Vec<_> = [0.0, 0.1, 0.2, 0.3].iter().map(|&x| nb(x)).collect();
        let p = pyramid_encode(&prefix, 2).unwrap();
        assert!((p.boxes[0].xc() - 0.15).abs() < 1e-12);
        assert!((p.boxes[1].xc() - 0.05).abs() < 1e-12);
        assert!((p.boxes[2].xc() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pyramid_remainder_goes_first() {
        // 5 boxes into 2 segments: [0,1,2] and [3,4]
        let prefix: Vec<_> = (0..5).map(|i| nb(i as f64)).collect();
        let p = pyramid_encode(&prefix, 2).unwrap();
        assert!((p.boxes[1].xc() - 1.0).abs() < 1e-12);
        assert!((p.boxes[2].xc() - 3.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn active_matches_window_before_activation(f in prop::collection::vec(any::<bool>(), 2..80), h in 2usize..10) {
            let t = track_with_flags("r", &f);
            let act = extract_active(&t, h).unwrap();
            let windows = sliding_windows(&t, h).unwrap();
            let expected = brute_active(&f, h);
            prop_assert_eq!(act.len(), expected.len());
            for (traj, end) in act.iter().zip(expected) {
                prop_assert_eq!(traj.end_frame_index, end as u64);
                let w = windows.iter().find(|(e, _)| *e == end as u64).unwrap();
                prop_assert_eq!(&w.1.boxes, &traj.boxes);
                prop_assert!(t.frames[end + 1].active);
                prop_assert!(t.frames[end + 1 - h..=end].iter().all(|fr| !fr.active));
            }
        }

        #[test]
        fn pyramid_length(levels in 1u32..7, extra in 0usize..50) {
            let n = (1usize << (levels - 1)) + extra;
            let prefix: Vec<_> = (0..n).map(|i| nb(i as f64 * 1e-3)).collect();
            prop_assert_eq!(pyramid_encode(&prefix, levels).unwrap().boxes.len(), (1 << levels) - 1);
        }
    }
}
