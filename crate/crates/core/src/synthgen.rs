//! Seeded synthetic egocentric tracks and detections.
//!
//! Every object first moves the way passive objects do (jitter in place or a
//! lateral pass-by). Tracks that become active additionally approach the
//! camera over the last `h_signal` frames before activation: their area grows
//! geometrically and their center is pulled towards the frame center. The
//! active segment that follows stays large and still.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameSize, PixelBox};
use crate::seed;
use crate::tracker::Detection;
use crate::trackstore::{activation_points, classify_track, Dataset, ObjectTrack, TrackFrame, TrackKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    /// Area ratio between the activation frame and the start of the approach.
    pub scale_growth: f64,
    /// Fraction of the distance to the frame center covered during the approach.
    pub center_pull: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self { scale_growth: 3.0, center_pull: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub videos_per_subject: usize,
    pub tracks_per_video: usize,
    pub object_classes: Vec<String>,
    pub frame_rate: f64,
    /// Share of tracks that become active.
    pub active_fraction: f64,
    /// Frames before activation during which the approach happens.
    pub h_signal: usize,
    /// Per-frame center jitter, normalized units.
    pub center_sigma: f64,
    /// Per-frame log-scale jitter of the box sides.
    pub scale_sigma: f64,
    pub seed: u64,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Inclusive range of passive frames per track (before activation for
    /// tracks that become active).
    pub passive_frames: (usize, usize),
    /// Inclusive range of active frames for tracks that become active.
    pub active_frames: (usize, usize),
    /// Range of initial box widths, normalized units.
    pub base_width: (f64, f64),
    /// Share of objects that drift sideways instead of jittering in place.
    pub pass_by_fraction: f64,
    pub motion: MotionModel,
    /// Per-class replacements for `motion`.
    pub class_motion: BTreeMap<String, MotionModel>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_subjects: 5,
            videos_per_subject: 4,
            tracks_per_video: 20,
            object_classes: ["mug", "tap", "pan", "fridge", "tv"].map(String::from).to_vec(),
            frame_rate: 30.0,
            active_fraction: 0.3,
            h_signal: 30,
            center_sigma: 0.002,
            scale_sigma: 0.01,
            seed: 0,
            frame_width: 1280,
            frame_height: 720,
            passive_frames: (120, 240),
            active_frames: (30, 90),
            base_width: (0.06, 0.15),
            pass_by_fraction: 0.5,
            motion: MotionModel::default(),
            class_motion: BTreeMap::new(),
        }
    }
}

impl ScenarioConfig {
    /// Approaching objects grow but keep the center dynamics of passive ones.
    pub fn scale_only() -> Self {
        Self { motion: MotionModel { scale_growth: 3.0, center_pull: 0.0 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_subjects == 0 || self.videos_per_subject == 0 || self.tracks_per_video == 0 {
            return bad("subject, video and track counts must be at least 1".into());
        }
        if self.object_classes.is_empty() {
            return bad("at least one object class is required".into());
        }
        if !(self.active_fraction > 0.0 && self.active_fraction < 1.0) {
            return bad(format!("active_fraction {} outside (0, 1)", self.active_fraction));
        }
        if !(self.center_sigma >= 0.0 && self.scale_sigma >= 0.0)
            || !self.center_sigma.is_finite()
            || !self.scale_sigma.is_finite()
        {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.pass_by_fraction) {
            return bad(format!("pass_by_fraction {} outside [0, 1]", self.pass_by_fraction));
        }
        if self.h_signal < 1 {
            return bad("h_signal must be at least 1".into());
        }
        let (p0, p1) = self.passive_frames;
        if p0 > p1 || self.active_frames.0 > self.active_frames.1 || self.active_frames.0 == 0 {
            return bad("frame ranges must be non-empty and ordered".into());
        }
        let (w0, w1) = self.base_width;
        if !(w0 > 0.0 && w0 <= w1 && w1 < 1.0) {
            return bad(format!("base width range {:?} must satisfy 0 < min <= max < 1", self.base_width));
        }
        if p0 <= self.h_signal {
            return bad(format!("passive phase of {p0} frames cannot hold an approach of {} frames", self.h_signal));
        }
        FrameSize::new(f64::from(self.frame_width), f64::from(self.frame_height))?;
        for m in std::iter::once(&self.motion).chain(self.class_motion.values()) {
            if !(m.scale_growth >= 1.0 && m.scale_growth.is_finite()) || !(0.0..=1.0).contains(&m.center_pull) {
                return bad(format!("invalid motion model {m:?}"));
            }
        }
        Ok(())
    }

    fn motion_for(&self, class: &str) -> MotionModel {
        self.class_motion.get(class).copied().unwrap_or(self.motion)
    }
}

/// Deterministic allocation: track `k` becomes active iff
/// `floor((k + 1) p) > floor(k p)`, so the first `n` tracks contain exactly
/// `floor(n p)` active ones.
fn is_allocated_active(k: usize, p: f64) -> bool {
    ((k + 1) as f64 * p).floor() > (k as f64 * p).floor()
}

/// Triangle wave keeping `x` inside [-a, a].
fn reflect(x: f64, a: f64) -> f64 {
    let period = 4.0 * a;
    let y = (x + a).rem_euclid(period);
    if y <= 2.0 * a {
        y - a
    } else {
        3.0 * a - y
    }
}

const CENTER_RANGE: f64 = 0.3;

struct TrackSpec<'a> {
    track_id: String,
    subject_id: &'a str,
    video_id: &'a str,
    object_class: &'a str,
    becomes_active: bool,
}

fn gen_track(cfg: &ScenarioConfig, spec: TrackSpec<'_>, rng: &mut seed::Rng) -> ObjectTrack {
    let motion = cfg.motion_for(spec.object_class);
    let n_pass = rng.random_range(cfg.passive_frames.0..=cfg.passive_frames.1);
    let n_act = if spec.becomes_active { rng.random_range(cfg.active_frames.0..=cfg.active_frames.1) } else { 0 };
    let start = rng.random_range(0..300u64);
    let w0 = rng.random_range(cfg.base_width.0..=cfg.base_width.1);
    let h0 = w0 * rng.random_range(0.8..1.25);
    let x0 = rng.random_range(-CENTER_RANGE..CENTER_RANGE);
    let y0 = rng.random_range(-CENTER_RANGE..CENTER_RANGE);
    let vx = if rng.random_bool(cfg.pass_by_fraction) {
        let speed = rng.random_range(0.0015..0.004);
        if rng.random_bool(0.5) {
            speed
        } else {
            -speed
        }
    } else {
        0.0
    };
    let center_noise = Normal::new(0.0, cfg.center_sigma).expect("validated sigma");
    let scale_noise = Normal::new(0.0, cfg.scale_sigma).expect("validated sigma");
    let approach_start = n_pass - cfg.h_signal;
    let (fw, fh) = (f64::from(cfg.frame_width), f64::from(cfg.frame_height));

    let mut frames = Vec::with_capacity(n_pass + n_act);
    for t in 0..n_pass + n_act {
        // Progress through the approach: 0 before it, 1 at and after activation.
        let frac = if spec.becomes_active && t >= approach_start {
            ((t - approach_start + 1) as f64 / cfg.h_signal as f64).min(1.0)
        } else {
            0.0
        };
        let base_t = t.min(n_pass.saturating_sub(1)) as f64;
        let bx = reflect(x0 + vx * base_t, CENTER_RANGE);
        let pull = 1.0 - motion.center_pull * frac;
        let side = motion.scale_growth.powf(frac).sqrt() * scale_noise.sample(rng).exp();
        let xc = bx * pull + center_noise.sample(rng);
        let yc = y0 * pull + center_noise.sample(rng);
        let (w, h) = (w0 * side, h0 * side);
        let bbox = PixelBox {
            x1: ((xc - w / 2.0 + 0.5) * fw).clamp(0.0, fw),
            y1: ((yc - h / 2.0 + 0.5) * fh).clamp(0.0, fh),
            x2: ((xc + w / 2.0 + 0.5) * fw).clamp(0.0, fw),
            y2: ((yc + h / 2.0 + 0.5) * fh).clamp(0.0, fh),
        };
        frames.push(TrackFrame { frame_index: start + t as u64, bbox, active: t >= n_pass, annotated: true });
    }
    ObjectTrack {
        track_id: spec.track_id,
        subject_id: spec.subject_id.to_owned(),
        video_id: spec.video_id.to_owned(),
        object_class: spec.object_class.to_owned(),
        frame_width: cfg.frame_width,
        frame_height: cfg.frame_height,
        frames,
    }
}

/// Generates the dataset described by `cfg`. Videos are generated in
/// parallel from per-video seeds, so the output does not depend on the
/// number of threads.
pub fn gen_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n_videos = cfg.n_subjects * cfg.videos_per_subject;
    let videos: Vec<Vec<ObjectTrack>> = (0..n_videos)
        .into_par_iter()
        .map(|v| {
            let subject_id = format!("P{:02}", v / cfg.videos_per_subject + 1);
            let video_id = format!("{subject_id}_v{}", v % cfg.videos_per_subject + 1);
            let mut rng = seed::rng(seed::derive(cfg.seed, "video", v as u64));
            (0..cfg.tracks_per_video)
                .map(|j| {
                    let class_idx = rng.random_range(0..cfg.object_classes.len());
                    let spec = TrackSpec {
                        track_id: format!("{video_id}_t{:03}", j + 1),
                        subject_id: &subject_id,
                        video_id: &video_id,
                        object_class: &cfg.object_classes[class_idx],
                        becomes_active: is_allocated_active(v * cfg.tracks_per_video + j, cfg.active_fraction),
                    };
                    gen_track(cfg, spec, &mut rng)
                })
                .collect()
        })
        .collect();
    let mut ds = Dataset::new(videos.into_iter().flatten().collect())?;
    ds.frame_rate = cfg.frame_rate;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionNoise {
    /// Gaussian noise added to every box corner, pixels.
    pub sigma_px: f64,
    /// Mean number of spurious boxes per frame.
    pub fp_rate: f64,
    /// Probability of dropping a true box.
    pub fn_rate: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self { sigma_px: 0.0, fp_rate: 0.0, fn_rate: 0.0 }
    }
}

/// Simulated detector output for the boxes of `dataset`, sorted by video then
/// frame. True boxes get scores in [0.8, 1]; spurious ones in [0.5, 1].
pub fn gen_detections(dataset: &Dataset, noise: &DetectionNoise, rng_seed: u64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&noise.fn_rate) {
        return Err(Error::InvalidArgument(format!("fn_rate {} outside [0, 1]", noise.fn_rate)));
    }
    if !(noise.fp_rate >= 0.0 && noise.fp_rate.is_finite()) || !(noise.sigma_px >= 0.0 && noise.sigma_px.is_finite()) {
        return Err(Error::InvalidArgument("fp_rate and sigma_px must be finite and non-negative".into()));
    }
    let classes = dataset.classes();
    let mut by_video: BTreeMap<&str, Vec<&ObjectTrack>> = BTreeMap::new();
    for t in &dataset.tracks {
        by_video.entry(t.video_id.as_str()).or_default().push(t);
    }
    let by_video: Vec<(&str, Vec<&ObjectTrack>)> = by_video.into_iter().collect();
    let per_video: Vec<Vec<Detection>> = by_video
        .par_iter()
        .map(|(video, tracks)| gen_video_detections(video, tracks, &classes, noise, rng_seed))
        .collect();
    Ok(per_video.into_iter().flatten().collect())
}

fn gen_video_detections(
    video: &str,
    tracks: &[&ObjectTrack],
    classes: &[String],
    noise: &DetectionNoise,
    rng_seed: u64,
) -> Vec<Detection> {
    let mut rng = seed::rng(seed::derive(rng_seed, &format!("detections/{video}"), 0));
    let mut at_frame: BTreeMap<u64, Vec<(&ObjectTrack, &TrackFrame)>> = BTreeMap::new();
    for t in tracks {
        for f in &t.frames {
            at_frame.entry(f.frame_index).or_default().push((t, f));
        }
    }
    let frame = tracks[0].frame_size();
    let (Some(&first), Some(&last)) = (at_frame.keys().next(), at_frame.keys().next_back()) else {
        return Vec::new();
    };
    let corner_noise = Normal::new(0.0, noise.sigma_px).expect("validated sigma");
    let fp_count = (noise.fp_rate > 0.0).then(|| Poisson::new(noise.fp_rate).expect("validated rate"));
    let mut out = Vec::new();
    for f in first..=last {
        for (t, tf) in at_frame.get(&f).map(Vec::as_slice).unwrap_or_default() {
            if rng.random::<f64>() < noise.fn_rate {
                continue;
            }
            let mut b = tf.bbox;
            if noise.sigma_px > 0.0 {
                b = perturb(&b, frame, || corner_noise.sample(&mut rng));
            }
            out.push(Detection {
                video_id: video.to_owned(),
                frame_index: f,
                object_class: t.object_class.clone(),
                bbox: b,
                score: rng.random_range(0.8..=1.0),
            });
        }
        if let Some(p) = &fp_count {
            let k = p.sample(&mut rng) as usize;
            for _ in 0..k {
                let w = rng.random_range(40.0..200.0f64).min(frame.width);
                let h = rng.random_range(40.0..200.0f64).min(frame.height);
                let x1 = rng.random_range(0.0..=frame.width - w);
                let y1 = rng.random_range(0.0..=frame.height - h);
                let class = classes[rng.random_range(0..classes.len())].clone();
                out.push(Detection {
                    video_id: video.to_owned(),
                    frame_index: f,
                    object_class: class,
                    bbox: PixelBox { x1, y1, x2: x1 + w, y2: y1 + h },
                    score: rng.random_range(0.5..=1.0),
                });
            }
        }
    }
    out
}

fn perturb(b: &PixelBox, frame: FrameSize, mut noise: impl FnMut() -> f64) -> PixelBox {
    let mut x1 = (b.x1 + noise()).clamp(0.0, frame.width);
    let mut y1 = (b.y1 + noise()).clamp(0.0, frame.height);
    let mut x2 = (b.x2 + noise()).clamp(0.0, frame.width);
    let mut y2 = (b.y2 + noise()).clamp(0.0, frame.height);
    if x2 < x1 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y2 < y1 {
        std::mem::swap(&mut y1, &mut y2);
    }
    // Keep at least one pixel of extent.
    if x2 - x1 < 1.0 {
        x1 = (x2 - 1.0).max(0.0);
        x2 = x1 + 1.0;
    }
    if y2 - y1 < 1.0 {
        y1 = (y2 - 1.0).max(0.0);
        y2 = y1 + 1.0;
    }
    PixelBox { x1, y1, x2, y2 }
}

/// `n_objects` passive objects of distinct classes moving right at constant
/// speed in separate horizontal lanes of a 1280×720 frame. No two boxes ever
/// overlap.
pub fn gen_disjoint_movers(n_objects: usize, n_frames: usize, rng_seed: u64) -> Result<Dataset> {
    if n_objects == 0 || n_objects > 12 || n_frames == 0 || n_frames > 200 {
        return Err(Error::InvalidArgument("disjoint movers need 1..=12 objects and 1..=200 frames".into()));
    }
    let mut rng = seed::rng(seed::derive(rng_seed, "movers", 0));
    let lane = 720.0 / n_objects as f64;
    let size = (lane * 0.6).min(80.0);
    let tracks = (0..n_objects)
        .map(|i| {
            let x0 = rng.random_range(20.0..200.0);
            let vx = rng.random_range(1.0..4.0);
            let y1 = lane * i as f64 + (lane - size) / 2.0;
            ObjectTrack {
                track_id: format!("mover{i}"),
                subject_id: "S".into(),
                video_id: "movers".into(),
                object_class: format!("obj{i}"),
                frame_width: 1280,
                frame_height: 720,
                frames: (0..n_frames)
                    .map(|t| {
                        let x1 = x0 + vx * t as f64;
                        TrackFrame {
                            frame_index: t as u64,
                            bbox: PixelBox { x1, y1, x2: x1 + size, y2: y1 + size },
                            active: false,
                            annotated: true,
                        }
                    })
                    .collect(),
            }
        })
        .collect();
    Dataset::new(tracks)
}

/// Fraction of (video, frame) pairs showing at least one object that becomes
/// active within the next `horizon` frames.
pub fn next_active_frame_fraction(dataset: &Dataset, horizon: u64) -> f64 {
    let mut frames: HashMap<(&str, u64), bool> = HashMap::new();
    for t in &dataset.tracks {
        let activations: Vec<u64> = if classify_track(t) == TrackKind::Mixed {
            activation_points(t).iter().map(|&p| t.frames[p].frame_index).collect()
        } else {
            Vec::new()
        };
        for f in &t.frames {
            let soon = !f.active && activations.iter().any(|&a| a > f.frame_index && a - f.frame_index <= horizon);
            *frames.entry((t.video_id.as_str(), f.frame_index)).or_default() |= soon;
        }
    }
    if frames.is_empty() {
        return 0.0;
    }
    frames.values().filter(|&&v| v).count() as f64 / frames.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{describe, DescriptorVariant};
    use crate::trackstore::{parse_tracks, serialize_tracks};
    use crate::trajectories::{extract_active, sliding_windows};

    fn small() -> ScenarioConfig {
        ScenarioConfig { n_subjects: 2, videos_per_subject: 2, tracks_per_video: 10, ..ScenarioConfig::default() }
    }

    fn noiseless() -> ScenarioConfig {
        ScenarioConfig { center_sigma: 0.0, scale_sigma: 0.0, ..small() }
    }

    fn to_bytes(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        serialize_tracks(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = to_bytes(&gen_dataset(&small()).unwrap());
        let b = to_bytes(&gen_dataset(&small()).unwrap());
        assert_eq!(a, b);
        let other = to_bytes(&gen_dataset(&ScenarioConfig { seed: 1, ..small() }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn round_trips_through_parser() {
        let ds = gen_dataset(&small()).unwrap();
        let back = parse_tracks(&to_bytes(&ds)[..]).unwrap();
        assert_eq!(back.tracks, ds.tracks);
    }

    #[test]
    fn allocation_is_exact() {
        let cfg = ScenarioConfig {
            n_subjects: 1,
            videos_per_subject: 5,
            tracks_per_video: 20,
            active_fraction: 0.5,
            ..ScenarioConfig::default()
        };
        let ds = gen_dataset(&cfg).unwrap();
        let mixed = ds.tracks.iter().filter(|t| classify_track(t) == TrackKind::Mixed).count();
        assert_eq!(mixed, 50);
        assert!(ds.tracks.iter().all(|t| classify_track(t) != TrackKind::ActiveOnly));
    }

    #[test]
    fn noiseless_approach_grows_strictly() {
        let cfg = noiseless();
        let ds = gen_dataset(&cfg).unwrap();
        for t in ds.tracks.iter().filter(|t| classify_track(t) == TrackKind::Mixed) {
            let p = activation_points(t)[0];
            let areas: Vec<f64> = t.frames[p - cfg.h_signal - 1..p].iter().map(|f| f.bbox.area()).collect();
            assert!(areas.windows(2).all(|w| w[1] > w[0]), "{}", t.track_id);
        }
    }

    #[test]
    fn noiseless_scale_differences_separate_classes() {
        let h = 10;
        let ds = gen_dataset(&noiseless()).unwrap();
        for t in &ds.tracks {
            match classify_track(t) {
                TrackKind::Mixed => {
                    for traj in extract_active(t, h).unwrap() {
                        let v = describe(&traj, DescriptorVariant::Full).unwrap().values;
                        assert!(v[5 * h - 2..].iter().all(|&ds| ds > 0.0));
                    }
                }
                _ => {
                    for (_, traj) in sliding_windows(t, h).unwrap() {
                        let v = describe(&traj, DescriptorVariant::Full).unwrap().values;
                        assert!(v[5 * h - 2..].iter().all(|ds| ds.abs() < 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let short = ScenarioConfig { passive_frames: (20, 40), ..small() };
        assert!(gen_dataset(&short).is_err());
        assert!(gen_dataset(&ScenarioConfig { active_fraction: 1.0, ..small() }).is_err());
        assert!(gen_dataset(&ScenarioConfig { tracks_per_video: 0, ..small() }).is_err());
        assert!(gen_dataset(&ScenarioConfig { center_sigma: -1.0, ..small() }).is_err());
    }

    #[test]
    fn perfect_detections_copy_boxes() {
        let ds = gen_dataset(&small()).unwrap();
        let dets = gen_detections(&ds, &DetectionNoise::default(), 3).unwrap();
        assert_eq!(dets.len(), ds.n_frames());
        let boxes: std::collections::HashSet<(u64, u64, u64)> = ds
            .tracks
            .iter()
            .flat_map(|t| t.frames.iter().map(|f| (f.frame_index, f.bbox.x1.to_bits(), f.bbox.y2.to_bits())))
            .collect();
        for d in &dets {
            assert!(boxes.contains(&(d.frame_index, d.bbox.x1.to_bits(), d.bbox.y2.to_bits())));
            assert!((0.8..=1.0).contains(&d.score));
        }
    }

    #[test]
    fn full_dropout_is_empty() {
        let ds = gen_dataset(&small()).unwrap();
        let noise = DetectionNoise { fn_rate: 1.0, ..DetectionNoise::default() };
        assert!(gen_detections(&ds, &noise, 3).unwrap().is_empty());
    }

    #[test]
    fn noisy_detections_are_valid_and_deterministic() {
        let ds = gen_dataset(&small()).unwrap();
        let noise = DetectionNoise { sigma_px: 3.0, fp_rate: 0.5, fn_rate: 0.1 };
        let a = gen_detections(&ds, &noise, 9).unwrap();
        assert_eq!(a, gen_detections(&ds, &noise, 9).unwrap());
        let frame = ds.tracks[0].frame_size();
        assert!(a.iter().all(|d| d.bbox.validate().is_ok() && d.bbox.fits_in(frame)));
        assert!(a.windows(2).all(|w| (&w[0].video_id, w[0].frame_index) <= (&w[1].video_id, w[1].frame_index)));
    }

    #[test]
    fn movers_never_overlap() {
        let ds = gen_disjoint_movers(5, 150, 1).unwrap();
        for f in 0..150 {
            let boxes: Vec<_> = ds.tracks.iter().map(|t| t.frames[f].bbox).collect();
            for i in 0..5 {
                for j in i + 1..5 {
                    assert_eq!(crate::geometry::iou(&boxes[i], &boxes[j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn next_active_fraction_follows_active_share() {
        let lo = gen_dataset(&ScenarioConfig { active_fraction: 0.1, ..small() }).unwrap();
        let hi = gen_dataset(&ScenarioConfig { active_fraction: 0.6, ..small() }).unwrap();
        let (a, b) = (next_active_frame_fraction(&lo, 30), next_active_frame_fraction(&hi, 30));
        assert!(a < b, "{a} {b}");
        assert!(a > 0.0 && b <= 1.0);
    }

    #[test]
    fn reflect_stays_in_range() {
        for i in -1000..1000 {
            let y = reflect(i as f64 * 0.01, 0.3);
            assert!((-0.3..=0.3).contains(&y));
        }
        assert!((reflect(0.35, 0.3) - 0.25).abs() < 1e-12);
    }
}
