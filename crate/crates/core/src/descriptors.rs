//! Trajectory descriptors and the motion-magnitude statistic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormBox;
use crate::trajectories::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorVariant {
    /// Positions, scales, position differences, scale differences.
    Full,
    /// Displacements normalized by the total path length.
    Relative,
    /// Box centers only.
    Absolute,
    /// Centers then center differences.
    AbsoluteDiff,
    /// Centers then areas.
    AbsoluteScale,
}

impl DescriptorVariant {
    pub const ALL: [DescriptorVariant; 5] = [
        DescriptorVariant::Full,
        DescriptorVariant::Relative,
        DescriptorVariant::Absolute,
        DescriptorVariant::AbsoluteDiff,
        DescriptorVariant::AbsoluteScale,
    ];

    /// Descriptor length for a trajectory of `h` boxes.
    pub fn dimension(self, h: usize) -> usize {
        match self {
            DescriptorVariant::Full => 6 * h - 3,
            DescriptorVariant::Relative => 2 * (h - 1),
            DescriptorVariant::Absolute => 2 * h,
            DescriptorVariant::AbsoluteDiff => 4 * h - 2,
            DescriptorVariant::AbsoluteScale => 3 * h,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorVariant::Full => "full",
            DescriptorVariant::Relative => "relative",
            DescriptorVariant::Absolute => "absolute",
            DescriptorVariant::AbsoluteDiff => "absolute-diff",
            DescriptorVariant::AbsoluteScale => "absolute-scale",
        }
    }
}

impl fmt::Display for DescriptorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(Self::Full),
            "relative" => Ok(Self::Relative),
            "absolute" => Ok(Self::Absolute),
            "absolute-diff" | "absolutediff" => Ok(Self::AbsoluteDiff),
            "absolute-scale" | "absolutescale" => Ok(Self::AbsoluteScale),
            other => Err(Error::InvalidArgument(format!("unknown descriptor variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub variant: DescriptorVariant,
    pub h: usize,
}

pub fn describe(trajectory: &Trajectory, variant: DescriptorVariant) -> Result<FeatureVector> {
    describe_boxes(&trajectory.boxes, variant)
}

pub fn describe_boxes(boxes: &[NormBox], variant: DescriptorVariant) -> Result<FeatureVector> {
    let h = boxes.len();
    if h < 2 {
        return Err(Error::InvalidArgument(format!("descriptor needs at least 2 boxes, got {h}")));
    }
    let mut values = Vec::with_capacity(variant.dimension(h));
    describe_into(boxes, variant, &mut values);
    Ok(FeatureVector { values, variant, h })
}

/// Appends the descriptor of `boxes` to `out`. Caller guarantees `boxes.len() >= 2`.
pub(crate) fn describe_into(boxes: &[NormBox], variant: DescriptorVariant, out: &mut Vec<f64>) {
    let centers = |out: &mut Vec<f64>| {
        for b in boxes {
            out.push(b.xc());
            out.push(b.yc());
        }
    };
    let scales = |out: &mut Vec<f64>| out.extend(boxes.iter().map(NormBox::area));
    let center_diffs = |out: &mut Vec<f64>| {
        for w in boxes.windows(2) {
            out.push(w[1].xc() - w[0].xc());
            out.push(w[1].yc() - w[0].yc());
        }
    };
    match variant {
        DescriptorVariant::Full => {
            centers(out);
            scales(out);
            center_diffs(out);
            out.extend(boxes.windows(2).map(|w| w[1].area() - w[0].area()));
        }
        DescriptorVariant::Absolute => centers(out),
        DescriptorVariant::AbsoluteDiff => {
            centers(out);
            center_diffs(out);
        }
        DescriptorVariant::AbsoluteScale => {
            centers(out);
            scales(out);
        }
        DescriptorVariant::Relative => {
            let start = out.len();
            center_diffs(out);
            let total = path_length(boxes);
            if total > 0.0 {
                for v in &mut out[start..] {
                    *v /= total;
                }
            } else {
                for v in &mut out[start..] {
                    *v = 0.0;
                }
            }
        }
    }
}

fn path_length(boxes: &[NormBox]) -> f64 {
    boxes.windows(2).map(|w| (w[1].xc() - w[0].xc()).hypot(w[1].yc() - w[0].yc())).sum()
}

/// Sum of the lengths of the center displacement vectors.
pub fn motion_magnitude(trajectory: &Trajectory) -> f64 {
    path_length(&trajectory.boxes)
}

pub fn motion_magnitude_boxes(boxes: &[NormBox]) -> f64 {
    path_length(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectories::Label;
    use proptest::prelude::*;

    fn traj(boxes: Vec<NormBox>) -> Trajectory {
        Trajectory {
            boxes,
            label: Label::Unlabeled,
            source_track_id: "t".into(),
            end_frame_index: 0,
            object_class: "c".into(),
            subject_id: "s".into(),
            video_id: "v".into(),
        }
    }

    /// Two boxes with (xc, yc, s) = (0, 0, 0.25) and (0.1, 0, 0.25).
    fn two_box() -> Trajectory {
        traj(vec![NormBox::from_center_size(0.0, 0.0, 0.5, 0.5), NormBox::from_center_size(0.1, 0.0, 0.5, 0.5)])
    }

    #[test]
    fn full_two_box_fixture() {
        let fv = describe(&two_box(), DescriptorVariant::Full).unwrap();
        let expected = [0.0, 0.0, 0.1, 0.0, 0.25, 0.25, 0.1, 0.0, 0.0];
        assert_eq!(fv.values.len(), 9);
        for (a, b) in fv.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", fv.values);
        }
    }

    #[test]
    fn relative_two_box_fixture() {
        let fv = describe(&two_box(), DescriptorVariant::Relative).unwrap();
        assert_eq!(fv.values.len(), 2);
        assert!((fv.values[0] - 1.0).abs() < 1e-12);
        assert!(fv.values[1].abs() < 1e-12);
    }

    #[test]
    fn relative_static_is_zero() {
        let b = NormBox::from_center_size(0.1, 0.1, 0.2, 0.2);
        let fv = describe(&traj(vec![b; 5]), DescriptorVariant::Relative).unwrap();
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimensions_for_h30() {
        let t = traj(vec![NormBox::from_center_size(0.0, 0.0, 0.1, 0.1); 30]);
        let len = |v| describe(&t, v).unwrap().values.len();
        assert_eq!(len(DescriptorVariant::Full), 177);
        assert_eq!(len(DescriptorVariant::AbsoluteScale), 90);
        assert_eq!(len(DescriptorVariant::AbsoluteDiff), 118);
        assert_eq!(len(DescriptorVariant::Relative), 58);
        assert_eq!(len(DescriptorVariant::Absolute), 60);
    }

    #[test]
    fn rejects_single_box() {
        let t = traj(vec![NormBox::from_center_size(0.0, 0.0, 0.1, 0.1)]);
        assert!(describe(&t, DescriptorVariant::Full).is_err());
    }

    #[test]
    fn motion_magnitude_fixtures() {
        let b = NormBox::from_center_size(0.0, 0.0, 0.1, 0.1);
        assert_eq!(motion_magnitude(&traj(vec![b; 4])), 0.0);
        let t = traj(vec![b, NormBox::from_center_size(0.3, 0.4, 0.1, 0.1)]);
        assert!((motion_magnitude(&t) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in DescriptorVariant::ALL {
            assert_eq!(v.as_str().parse::<DescriptorVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<DescriptorVariant>().is_err());
    }

    fn arb_boxes(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<NormBox>> {
        prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3, 0.01f64..0.2, 0.01f64..0.2), len)
            .prop_map(|v| v.into_iter().map(|(x, y, w, h)| NormBox::from_center_size(x, y, w, h)).collect())
    }

    fn translate(boxes: &[NormBox], dx: f64, dy: f64) -> Vec<NormBox> {
        boxes.iter().map(|b| NormBox { x1: b.x1 + dx, y1: b.y1 + dy, x2: b.x2 + dx, y2: b.y2 + dy }).collect()
    }

    proptest! {
        #[test]
        fn dimension_formula_holds(h in 2usize..=120) {
            let t = traj(vec![NormBox::from_center_size(0.0, 0.0, 0.1, 0.1); h]);
            for v in DescriptorVariant::ALL {
                prop_assert_eq!(describe(&t, v).unwrap().values.len(), v.dimension(h));
            }
        }

        #[test]
        fn motion_magnitude_matches_accumulation(boxes in arb_boxes(10..11)) {
            let mut acc = 0.0;
            for j in 1..boxes.len() {
                let dx = boxes[j].xc() - boxes[j - 1].xc();
                let dy = boxes[j].yc() - boxes[j - 1].yc();
                acc += (dx * dx + dy * dy).sqrt();
            }
            prop_assert!((motion_magnitude(&traj(boxes)) - acc).abs() < 1e-12);
        }

        #[test]
        fn relative_is_translation_invariant_and_unit_length(
            boxes in arb_boxes(2..40), dx in -0.1f64..0.1, dy in -0.1f64..0.1,
        ) {
            let a = describe(&traj(boxes.clone()), DescriptorVariant::Relative).unwrap();
            let b = describe(&traj(translate(&boxes, dx, dy)), DescriptorVariant::Relative).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            let total: f64 = a.values.chunks(2).map(|c| c[0].hypot(c[1])).sum();
            if motion_magnitude(&traj(boxes)) > 1e-12 {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn full_translation_only_changes_positions(
            boxes in arb_boxes(2..40), dx in -0.1f64..0.1, dy in -0.1f64..0.1,
        ) {
            let h = boxes.len();
            let a = describe(&traj(boxes.clone()), DescriptorVariant::Full).unwrap().values;
            let b = describe(&traj(translate(&boxes, dx, dy)), DescriptorVariant::Full).unwrap().values;
            for (u, v) in a[2 * h..].iter().zip(&b[2 * h..]) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn motion_magnitude_translation_and_reversal(
            boxes in arb_boxes(2..40), dx in -0.1f64..0.1, dy in -0.1f64..0.1,
        ) {
            let m = motion_magnitude(&traj(boxes.clone()));
            let moved = motion_magnitude(&traj(translate(&boxes, dx, dy)));
            let mut rev = boxes.clone();
            rev.reverse();
            prop_assert!((m - moved).abs() < 1e-9);
            prop_assert!((m - motion_magnitude(&traj(rev))).abs() < 1e-12);
        }
    }
}
