//! Bounding boxes in pixel space and in normalized, centered frame space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box given by its top-left and bottom-right corners, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {self:?}")));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::InvalidBox(format!(
                "corners out of order: ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn fits_in(&self, frame: FrameSize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= frame.width && self.y2 <= frame.height
    }

    /// Box from center, area and aspect ratio (width / height).
    pub fn from_center_area_aspect(cx: f64, cy: f64, area: f64, aspect: f64) -> Self {
        let area = area.max(f64::MIN_POSITIVE);
        let aspect = aspect.max(f64::MIN_POSITIVE);
        let w = (area * aspect).sqrt();
        let h = area / w;
        Self { x1: cx - w / 2.0, y1: cy - h / 2.0, x2: cx + w / 2.0, y2: cy + h / 2.0 }
    }

    pub fn lerp(&self, other: &PixelBox, t: f64) -> PixelBox {
        let l = |a: f64, b: f64| a + (b - a) * t;
        PixelBox {
            x1: l(self.x1, other.x1),
            y1: l(self.y1, other.y1),
            x2: l(self.x2, other.x2),
            y2: l(self.y2, other.y2),
        }
    }
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Frame dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: f64,
    pub height: f64,
}

impl FrameSize {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidFrame { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Box in normalized frame coordinates, centered so that the frame center is
/// the origin and every in-frame coordinate lies in [-0.5, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl NormBox {
    pub fn xc(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn yc(&self) -> f64 {
        (self.y1 + self.y2) / 2.0
    }

    /// Area in normalized units (fraction of the frame).
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn from_center_size(xc: f64, yc: f64, w: f64, h: f64) -> Self {
        Self { x1: xc - w / 2.0, y1: yc - h / 2.0, x2: xc + w / 2.0, y2: yc + h / 2.0 }
    }

    pub fn to_pixels(&self, frame: FrameSize) -> PixelBox {
        PixelBox {
            x1: (self.x1 + 0.5) * frame.width,
            y1: (self.y1 + 0.5) * frame.height,
            x2: (self.x2 + 0.5) * frame.width,
            y2: (self.y2 + 0.5) * frame.height,
        }
    }
}

/// Divide by the frame dimensions, then shift so the frame center is the origin.
pub fn normalize_box(b: &PixelBox, frame: FrameSize) -> Result<NormBox> {
    FrameSize::new(frame.width, frame.height)?;
    Ok(NormBox {
        x1: b.x1 / frame.width - 0.5,
        y1: b.y1 / frame.height - 0.5,
        x2: b.x2 / frame.width - 0.5,
        y2: b.y2 / frame.height - 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hd() -> FrameSize {
        FrameSize::new(1280.0, 720.0).unwrap()
    }

    #[test]
    fn normalize_quarter_box() {
        let b = PixelBox::new(320.0, 180.0, 960.0, 540.0).unwrap();
        let n = normalize_box(&b, hd()).unwrap();
        assert_eq!((n.x1, n.y1, n.x2, n.y2), (-0.25, -0.25, 0.25, 0.25));
        assert_eq!(n.xc(), 0.0);
        assert_eq!(n.yc(), 0.0);
        assert_eq!(n.area(), 0.25);
    }

    #[test]
    fn normalize_full_frame() {
        let b = PixelBox::new(0.0, 0.0, 1280.0, 720.0).unwrap();
        let n = normalize_box(&b, hd()).unwrap();
        assert_eq!((n.x1, n.y1, n.x2, n.y2), (-0.5, -0.5, 0.5, 0.5));
        assert_eq!(n.area(), 1.0);
    }

    #[test]
    fn normalize_one_pixel_box() {
        // Independent arithmetic: center pixel (640.5, 360.5) over (1280, 720),
        // minus 0.5 gives 0.5/1280 and 0.5/720.
        let b = PixelBox::new(640.0, 360.0, 641.0, 361.0).unwrap();
        let n = normalize_box(&b, hd()).unwrap();
        assert!((n.xc() - 0.000_390_625).abs() < 1e-15);
        assert!((n.yc() - 0.5 / 720.0).abs() < 1e-15);
        assert!((n.yc() - 0.000_694_444_444_444_444_4).abs() < 1e-15);
        assert!((n.area() - 1.0 / (1280.0 * 720.0)).abs() < 1e-18);
    }

    #[test]
    fn normalize_rejects_bad_frame() {
        let b = PixelBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let bad = FrameSize { width: 0.0, height: 10.0 };
        assert!(matches!(normalize_box(&b, bad), Err(Error::InvalidFrame { .. })));
        assert!(FrameSize::new(-1.0, 5.0).is_err());
    }

    #[test]
    fn pixel_box_rejects_inverted_corners() {
        assert!(PixelBox::new(10.0, 0.0, 5.0, 4.0).is_err());
        assert!(PixelBox::new(0.0, 0.0, 5.0, f64::NAN).is_err());
    }

    #[test]
    fn iou_fixtures() {
        let a = PixelBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = PixelBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let c = PixelBox::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        // touching edges do not overlap
        let d = PixelBox::new(2.0, 0.0, 4.0, 2.0).unwrap();
        assert_eq!(iou(&a, &d), 0.0);
    }

    proptest! {
        #[test]
        fn normalize_is_invertible(
            x1 in 0.0f64..1000.0, y1 in 0.0f64..600.0,
            w in 0.5f64..280.0, h in 0.5f64..120.0,
            fw in 1280.0f64..4000.0, fh in 720.0f64..3000.0,
        ) {
            let frame = FrameSize::new(fw, fh).unwrap();
            let b = PixelBox::new(x1, y1, x1 + w, y1 + h).unwrap();
            let back = normalize_box(&b, frame).unwrap().to_pixels(frame);
            for (u, v) in [(b.x1, back.x1), (b.y1, back.y1), (b.x2, back.x2), (b.y2, back.y2)] {
                prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
            }
        }

        #[test]
        fn normalized_in_frame_box_is_in_range(
            x1 in 0.0f64..1000.0, y1 in 0.0f64..600.0,
            w in 0.5f64..280.0, h in 0.5f64..120.0,
        ) {
            let n = normalize_box(&PixelBox::new(x1, y1, x1 + w, y1 + h).unwrap(), hd()).unwrap();
            for v in [n.x1, n.y1, n.x2, n.y2] {
                prop_assert!((-0.5..=0.5).contains(&v));
            }
            prop_assert!(n.area() > 0.0);
        }

        #[test]
        fn iou_symmetric_and_bounded(
            a in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..50.0, 0.1f64..50.0),
            b in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..50.0, 0.1f64..50.0),
        ) {
            let pa = PixelBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3).unwrap();
            let pb = PixelBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3).unwrap();
            let v = iou(&pa, &pb);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&pb, &pa)).abs() < 1e-15);
        }
    }
}
