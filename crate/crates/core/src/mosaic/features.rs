//! Difference-of-Gaussian keypoints with 4×4×8 gradient-histogram
//! descriptors, and brute-force ratio-test matching.

use std::f32::consts::PI;

pub const DESCRIPTOR_LEN: usize = 128;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const ORI_BINS: usize = 36;
/// Blur already present in a camera image.
const INPUT_SIGMA: f32 = 0.5;
const BORDER: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub max_features: usize,
    pub scales_per_octave: usize,
    pub sigma: f32,
    /// DoG contrast threshold for intensities in `[0, 1]`.
    pub contrast_threshold: f32,
    /// Principal curvature ratio above which edge responses are dropped.
    pub edge_ratio: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_features: 2000,
            scales_per_octave: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_ratio: 10.0,
        }
    }
}

/// Position in pixel-index coordinates (pixel centers at integers).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
    pub response: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: [f32; DESCRIPTOR_LEN],
}

/// Single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayF {
    pub fn from_rgb(img: &image::RgbImage) -> GrayF {
        let data = img
            .pixels()
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect();
        GrayF {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn half(&self) -> GrayF {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        GrayF { width: w, height: h, data }
    }

    fn blur(&self, sigma: f32) -> GrayF {
        let r = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f32 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0.0f32; self.data.len()];
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x + j as isize - r).clamp(0, w - 1);
                    acc += kv * row[xx as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for (j, kv) in k.iter().enumerate() {
                let yy = (y + j as isize - r).clamp(0, h - 1);
                let src = &tmp[(yy * w) as usize..((yy + 1) * w) as usize];
                let dst = &mut out[(y * w) as usize..((y + 1) * w) as usize];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
        GrayF {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    fn sub(&self, other: &GrayF) -> GrayF {
        GrayF {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Octave {
    gauss: Vec<GrayF>,
    dog: Vec<GrayF>,
}

fn build_pyramid(img: &GrayF, cfg: &FeatureConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave;
    let k = 2f32.powf(1.0 / s as f32);
    let min_dim = img.width.min(img.height);
    let n_oct = ((min_dim as f32).log2().floor() as isize - 3).max(1) as usize;
    let mut base = img.blur((cfg.sigma * cfg.sigma - INPUT_SIGMA * INPUT_SIGMA).max(0.01).sqrt());
    let mut out = Vec::with_capacity(n_oct);
    for _ in 0..n_oct {
        if base.width < 2 * BORDER + 3 || base.height < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = vec![base];
        for i in 1..s + 3 {
            let prev = cfg.sigma * k.powi(i as i32 - 1);
            let inc = ((prev * k).powi(2) - prev * prev).sqrt();
            let next = gauss[i - 1].blur(inc);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|p| p[1].sub(&p[0])).collect();
        base = gauss[s].half();
        out.push(Octave { gauss, dog });
    }
    out
}

fn is_extremum(dog: &[GrayF], s: usize, x: usize, y: usize) -> bool {
    let v = dog[s].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for img in &dog[s - 1..=s + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(img, &dog[s]) && xx == x && yy == y {
                    continue;
                }
                let n = img.at(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    true
}

/// Quadratic fit around a DoG extremum; returns refined `(x, y, s, value)`.
fn refine(dog: &[GrayF], mut x: usize, mut y: usize, mut s: usize, cfg: &FeatureConfig) -> Option<(f32, f32, f32, f32)> {
    let (w, h) = (dog[0].width, dog[0].height);
    for _ in 0..5 {
        let d = |ds: isize, dx: isize, dy: isize| {
            dog[(s as isize + ds) as usize].at((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
        };
        let g = nalgebra::Vector3::new(
            (d(0, 1, 0) - d(0, -1, 0)) / 2.0,
            (d(0, 0, 1) - d(0, 0, -1)) / 2.0,
            (d(1, 0, 0) - d(-1, 0, 0)) / 2.0,
        );
        let v = d(0, 0, 0);
        let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
        let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
        let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) / 4.0;
        let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) / 4.0;
        let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) / 4.0;
        let hm = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let off = -(hm.lu().solve(&g)?);
        if off.iter().all(|o| o.abs() < 0.5) {
            let value = v + 0.5 * g.dot(&off);
            if value.abs() * (cfg.scales_per_octave as f64) < cfg.contrast_threshold as f64 {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_ratio as f64;
            if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some((
                (x as f64 + off[0]) as f32,
                (y as f64 + off[1]) as f32,
                (s as f64 + off[2]) as f32,
                value as f32,
            ));
        }
        let step = |p: usize, o: f64| (p as isize + o.round() as isize).max(0) as usize;
        x = step(x, off[0]);
        y = step(y, off[1]);
        s = step(s, off[2]);
        if s < 1 || s > cfg.scales_per_octave || x < BORDER || y < BORDER || x >= w - BORDER || y >= h - BORDER {
            return None;
        }
    }
    None
}

fn gradient(img: &GrayF, x: usize, y: usize) -> (f32, f32) {
    let dx = img.at(x + 1, y) - img.at(x - 1, y);
    let dy = img.at(x, y + 1) - img.at(x, y - 1);
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

fn orientations(img: &GrayF, x: f32, y: f32, sigma: f32) -> Vec<f32> {
    let s = 1.5 * sigma;
    let r = (3.0 * s).round() as isize;
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0f32; ORI_BINS];
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= img.width as isize - 1 || py >= img.height as isize - 1 {
                continue;
            }
            let (m, a) = gradient(img, px as usize, py as usize);
            let wgt = (-((dx * dx + dy * dy) as f32) / (2.0 * s * s)).exp();
            let bin = ((a + PI) / (2.0 * PI) * ORI_BINS as f32).floor() as usize % ORI_BINS;
            hist[bin] += wgt * m;
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORI_BINS {
            hist[i] = (prev[(i + ORI_BINS - 1) % ORI_BINS] + prev[i] + prev[(i + 1) % ORI_BINS]) / 3.0;
        }
    }
    let peak = hist.iter().cloned().fold(0.0f32, f32::max);
    if peak <= 0.0 {
        return vec![0.0];
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = hist[(i + ORI_BINS - 1) % ORI_BINS];
        let rr = hist[(i + 1) % ORI_BINS];
        if hist[i] >= 0.8 * peak && hist[i] > l && hist[i] > rr {
            let off = 0.5 * (l - rr) / (l - 2.0 * hist[i] + rr);
            let bin = i as f32 + 0.5 + off;
            out.push(bin / ORI_BINS as f32 * 2.0 * PI - PI);
        }
    }
    if out.is_empty() {
        out.push(0.0);
    }
    out
}

fn describe(img: &GrayF, x: f32, y: f32, sigma: f32, ori: f32) -> [f32; DESCRIPTOR_LEN] {
    let d = DESC_WIDTH as f32;
    let hist_width = 3.0 * sigma;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) / 2.0).round() as isize;
    let (cos, sin) = (ori.cos(), ori.sin());
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0f32; DESCRIPTOR_LEN];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= img.width as isize - 1 || py >= img.height as isize - 1 {
                continue;
            }
            let (fx, fy) = (px as f32 - x, py as f32 - y);
            let rc = (cos * fx + sin * fy) / hist_width;
            let rr = (-sin * fx + cos * fy) / hist_width;
            let (cb, rb) = (rc + d / 2.0 - 0.5, rr + d / 2.0 - 0.5);
            if cb <= -1.0 || cb >= d || rb <= -1.0 || rb >= d {
                continue;
            }
            let (m, a) = gradient(img, px as usize, py as usize);
            let wgt = (-(rc * rc + rr * rr) / (2.0 * (0.5 * d).powi(2))).exp();
            let mut ob = (a - ori).rem_euclid(2.0 * PI) / (2.0 * PI) * DESC_BINS as f32;
            if ob >= DESC_BINS as f32 {
                ob -= DESC_BINS as f32;
            }
            let (r0, c0, o0) = (rb.floor(), cb.floor(), ob.floor());
            let (fr, fc, fo) = (rb - r0, cb - c0, ob - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - fr), (r0 as isize + 1, fr)] {
                if ri < 0 || ri >= DESC_WIDTH as isize {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - fc), (c0 as isize + 1, fc)] {
                    if ci < 0 || ci >= DESC_WIDTH as isize {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize % DESC_BINS, 1.0 - fo), ((o0 as usize + 1) % DESC_BINS, fo)] {
                        let idx = (ri as usize * DESC_WIDTH + ci as usize) * DESC_BINS + oi;
                        hist[idx] += m * wgt * wr * wc * wo;
                    }
                }
            }
        }
    }
    normalize(&mut hist);
    hist.iter_mut().for_each(|v| *v = v.min(0.2));
    normalize(&mut hist);
    hist
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Keypoints with descriptors, strongest first, at most `max_features`.
pub fn detect_and_describe(img: &image::RgbImage, cfg: &FeatureConfig) -> Vec<Feature> {
    detect_gray(&GrayF::from_rgb(img), cfg)
}

pub fn detect_gray(img: &GrayF, cfg: &FeatureConfig) -> Vec<Feature> {
    let s = cfg.scales_per_octave;
    let mut out = Vec::new();
    for (o, oct) in build_pyramid(img, cfg).iter().enumerate() {
        let (w, h) = (oct.dog[0].width, oct.dog[0].height);
        let factor = (1usize << o) as f32;
        let pre = 0.5 * cfg.contrast_threshold / s as f32;
        for si in 1..=s {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    if oct.dog[si].at(x, y).abs() <= pre || !is_extremum(&oct.dog, si, x, y) {
                        continue;
                    }
                    let Some((rx, ry, rs, value)) = refine(&oct.dog, x, y, si, cfg) else {
                        continue;
                    };
                    let sigma_oct = cfg.sigma * 2f32.powf(rs / s as f32);
                    let layer = &oct.gauss[(rs.round() as usize).clamp(0, s + 2)];
                    for ori in orientations(layer, rx, ry, sigma_oct) {
                        out.push(Feature {
                            keypoint: Keypoint {
                                x: rx * factor,
                                y: ry * factor,
                                scale: sigma_oct * factor,
                                orientation: ori,
                                response: value.abs(),
                            },
                            descriptor: describe(layer, rx, ry, sigma_oct, ori),
                        });
                    }
                }
            }
        }
    }
    out.retain(|f| {
        f.keypoint.x >= 0.0
            && f.keypoint.y >= 0.0
            && f.keypoint.x <= (img.width - 1) as f32
            && f.keypoint.y <= (img.height - 1) as f32
    });
    out.sort_by(|a, b| {
        b.keypoint
            .response
            .total_cmp(&a.keypoint.response)
            .then(a.keypoint.y.total_cmp(&b.keypoint.y))
            .then(a.keypoint.x.total_cmp(&b.keypoint.x))
            .then(a.keypoint.orientation.total_cmp(&b.keypoint.orientation))
    });
    out.truncate(cfg.max_features);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub distance: f32,
}

fn dist2(a: &[f32; DESCRIPTOR_LEN], b: &[f32; DESCRIPTOR_LEN]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each descriptor in `a`, its nearest neighbor in `b`, kept when
/// strictly closer than `ratio` times the second nearest.
pub fn match_descriptors(a: &[[f32; DESCRIPTOR_LEN]], b: &[[f32; DESCRIPTOR_LEN]], ratio: f32) -> Vec<Match> {
    if b.len() < 2 {
        return Vec::new();
    }
    let r2 = ratio * ratio;
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let (mut best, mut second, mut bi) = (f32::INFINITY, f32::INFINITY, 0);
        for (j, db) in b.iter().enumerate() {
            let d = dist2(da, db);
            if d < best {
                second = best;
                best = d;
                bi = j;
            } else if d < second {
                second = d;
            }
        }
        if best < r2 * second {
            out.push(Match {
                a: i,
                b: bi,
                distance: best.sqrt(),
            });
        }
    }
    out
}

pub fn match_features(a: &[Feature], b: &[Feature], ratio: f32) -> Vec<Match> {
    let da: Vec<_> = a.iter().map(|f| f.descriptor).collect();
    let db: Vec<_> = b.iter().map(|f| f.descriptor).collect();
    match_descriptors(&da, &db, ratio)
}
