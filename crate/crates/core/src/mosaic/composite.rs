use image::RgbImage;

use super::homography::Homography;
use super::MosaicError;

/// Largest canvas side accepted by [`composite`].
pub const MAX_CANVAS_SIDE: i64 = 8192;
const EDGE_EPS: f64 = 1e-6;

/// Canvas bounds in reference pixel-index coordinates, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanvasBounds {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl CanvasBounds {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }
}

fn warped_corners(h: &Homography, w: u32, hgt: u32) -> Option<[(f64, f64); 4]> {
    let (w, hgt) = (w as f64 - 0.5, hgt as f64 - 0.5);
    Some([
        h.apply(-0.5, -0.5)?,
        h.apply(w, -0.5)?,
        h.apply(w, hgt)?,
        h.apply(-0.5, hgt)?,
    ])
}

fn corner_bounds(c: &[(f64, f64)]) -> CanvasBounds {
    let min_x = c.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = c.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = c.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = c.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    CanvasBounds {
        x0: (min_x - EDGE_EPS).ceil() as i64,
        y0: (min_y - EDGE_EPS).ceil() as i64,
        x1: (max_x + EDGE_EPS).floor() as i64,
        y1: (max_y + EDGE_EPS).floor() as i64,
    }
}

/// Union of the warped frame outlines; `None` entries are skipped.
pub fn canvas_bounds(frames: &[&RgbImage], homographies: &[Option<Homography>]) -> Option<CanvasBounds> {
    let mut out: Option<CanvasBounds> = None;
    for (img, h) in frames.iter().zip(homographies) {
        let Some(h) = h else { continue };
        let Some(c) = warped_corners(h, img.width(), img.height()) else {
            continue;
        };
        let b = corner_bounds(&c);
        out = Some(match out {
            None => b,
            Some(o) => CanvasBounds {
                x0: o.x0.min(b.x0),
                y0: o.y0.min(b.y0),
                x1: o.x1.max(b.x1),
                y1: o.y1.max(b.y1),
            },
        });
    }
    out
}

fn sample(img: &RgbImage, sx: f64, sy: f64) -> Option<[u8; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if sx < -0.5 - EDGE_EPS || sy < -0.5 - EDGE_EPS || sx > w - 0.5 + EDGE_EPS || sy > h - 0.5 + EDGE_EPS {
        return None;
    }
    let axis = |s: f64, n: u32| -> (u32, u32, f64) {
        let f = s.floor();
        if f < 0.0 {
            (0, 0, 0.0)
        } else if f as u32 >= n - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            (f as u32, f as u32 + 1, s - f)
        }
    };
    let (x0, x1, fx) = axis(sx, img.width());
    let (y0, y1, fy) = axis(sy, img.height());
    let (p00, p10, p01, p11) = (img.get_pixel(x0, y0), img.get_pixel(x1, y0), img.get_pixel(x0, y1), img.get_pixel(x1, y1));
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(out)
}

/// Warps each frame with its homography into the reference frame and paints
/// them in order, so later frames overwrite earlier ones. Unpainted canvas
/// pixels are black.
pub fn composite(
    frames: &[&RgbImage],
    homographies: &[Option<Homography>],
) -> Result<(RgbImage, CanvasBounds), MosaicError> {
    let bounds = canvas_bounds(frames, homographies).ok_or(MosaicError::NoFrames)?;
    let (cw, ch) = (bounds.width(), bounds.height());
    if cw <= 0 || ch <= 0 || cw > MAX_CANVAS_SIDE || ch > MAX_CANVAS_SIDE {
        return Err(MosaicError::CanvasTooLarge { width: cw, height: ch });
    }
    let mut canvas = RgbImage::new(cw as u32, ch as u32);
    for (img, h) in frames.iter().zip(homographies) {
        let Some(h) = h else { continue };
        let Some(c) = warped_corners(h, img.width(), img.height()) else {
            continue;
        };
        let b = corner_bounds(&c);
        let inv = h.inverse();
        for y in b.y0.max(bounds.y0)..=b.y1.min(bounds.y1) {
            for x in b.x0.max(bounds.x0)..=b.x1.min(bounds.x1) {
                let Some((sx, sy)) = inv.apply(x as f64, y as f64) else {
                    continue;
                };
                if let Some(px) = sample(img, sx, sy) {
                    canvas.put_pixel((x - bounds.x0) as u32, (y - bounds.y0) as u32, image::Rgb(px));
                }
            }
        }
    }
    Ok((canvas, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mosaic::homography::rotation_homography;

    fn noise(w: u32, h: u32, salt: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = (x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503) ^ salt).wrapping_mul(2246822519) >> 24;
            image::Rgb([v as u8, (v * 3) as u8, (v * 7) as u8])
        })
    }

    #[test]
    fn single_frame_is_identity() {
        let img = noise(97, 61, 1);
        let (out, b) = composite(&[&img], &[Some(Homography::identity())]).unwrap();
        assert_eq!((b.x0, b.y0), (0, 0));
        assert_eq!(out, img);
    }

    #[test]
    fn copies_of_one_frame_equal_the_frame() {
        let img = noise(50, 40, 2);
        let frames = [&img, &img, &img];
        let h = Some(Homography::identity());
        let (out, _) = composite(&frames, &[h, h, h]).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn latest_frame_wins() {
        let a = RgbImage::from_pixel(20, 20, image::Rgb([255, 0, 0]));
        let b = RgbImage::from_pixel(20, 20, image::Rgb([0, 0, 255]));
        let shift = Homography::new(nalgebra::Matrix3::new(1.0, 0.0, 10.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let (out, b_) = composite(&[&a, &b], &[Some(Homography::identity()), Some(shift)]).unwrap();
        assert_eq!((b_.width(), b_.height()), (30, 20));
        assert_eq!(out.get_pixel(5, 5).0, [255, 0, 0]);
        assert_eq!(out.get_pixel(15, 5).0, [0, 0, 255]);
        assert_eq!(out.get_pixel(25, 5).0, [0, 0, 255]);
    }

    #[test]
    fn failed_frames_are_skipped() {
        let a = noise(30, 30, 3);
        let (out, _) = composite(&[&a, &a], &[Some(Homography::identity()), None]).unwrap();
        assert_eq!(out, a);
        assert!(matches!(composite(&[&a], &[None]), Err(MosaicError::NoFrames)));
    }

    #[test]
    fn pan_width_matches_frustum_union() {
        let (w, h) = (320u32, 240u32);
        let f = (w as f64 / 2.0) / (60f64.to_radians() / 2.0).tan();
        let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
        // the second camera is turned 30° to the right of the reference
        let to_ref = rotation_homography(f, cx, cy, 30f64.to_radians(), 0.0);
        let img = noise(w, h, 4);
        let b = canvas_bounds(&[&img, &img], &[Some(Homography::identity()), Some(to_ref)]).unwrap();
        let analytic = (cx + 0.5) + f * (30f64.to_radians() + 30f64.to_radians()).tan();
        assert!(((b.width() as f64) - analytic).abs() / analytic < 0.05, "{} vs {analytic}", b.width());
    }
}
