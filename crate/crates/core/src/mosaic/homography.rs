//! Normalized DLT homography fitting inside a seeded RANSAC loop.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MosaicError;

pub const MIN_INLIERS: usize = 12;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub threshold_px: f64,
    pub confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 2000,
            threshold_px: 3.0,
            confidence: 0.99,
            min_inliers: MIN_INLIERS,
            seed: 0,
        }
    }
}

/// Projective map with `h33 = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = MosaicError;
    fn try_from(r: [[f64; 3]; 3]) -> Result<Self, MosaicError> {
        Homography::new(Matrix3::from_fn(|i, j| r[i][j]))
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.rows()
    }
}

impl Homography {
    pub fn identity() -> Homography {
        Homography(Matrix3::identity())
    }

    /// Normalizes so `h33 = 1` and rejects singular or ill-conditioned maps.
    pub fn new(m: Matrix3<f64>) -> Result<Homography, MosaicError> {
        if !m.iter().all(|v| v.is_finite()) || m[(2, 2)].abs() < 1e-12 {
            return Err(MosaicError::DegenerateConfiguration("h33 is zero".into()));
        }
        let m = m / m[(2, 2)];
        let sv = m.singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            return Err(MosaicError::DegenerateConfiguration(format!(
                "condition number {:.3e}",
                if lo > 0.0 { hi / lo } else { f64::INFINITY }
            )));
        }
        Ok(Homography(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z))
    }

    pub fn inverse(&self) -> Homography {
        Homography::new(self.0.try_inverse().expect("conditioned homographies are invertible"))
            .expect("inverse of a conditioned homography is conditioned")
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &Homography) -> Result<Homography, MosaicError> {
        Homography::new(self.0 * first.0)
    }

    /// Largest displacement between `self` and `other` at the corners of a
    /// `width × height` image.
    pub fn corner_error(&self, other: &Homography, width: f64, height: f64) -> f64 {
        [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
            .iter()
            .map(|&(x, y)| match (self.apply(x, y), other.apply(x, y)) {
                (Some(a), Some(b)) => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn frobenius_distance(&self, other: &Homography) -> f64 {
        (self.0 - other.0).norm()
    }
}

/// Point correspondence `src → dst`.
pub type Pair = ((f64, f64), (f64, f64));

#[derive(Clone, Debug, PartialEq)]
pub struct HomographyEstimate {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub iterations: usize,
}

fn transfer_error(h: &Homography, p: &Pair) -> f64 {
    match h.apply(p.0 .0, p.0 .1) {
        Some((x, y)) => ((x - p.1 .0).powi(2) + (y - p.1 .1).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

/// Similarity taking the points to zero mean and mean distance √2.
fn normalizer(pts: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let md = pts.iter().map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt()).sum::<f64>() / n;
    if md < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / md;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Whether all points lie (nearly) on one line.
fn collinear(pts: &[(f64, f64)]) -> bool {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
    let lo = tr / 2.0 - disc;
    tr <= 0.0 || lo <= 1e-10 * tr || det <= 0.0
}

fn any_three_collinear(pts: &[(f64, f64)]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let area = ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs();
                let scale = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2))
                    .max((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2));
                if area <= 1e-6 * scale.max(1e-12) {
                    return true;
                }
            }
        }
    }
    false
}

/// Direct linear transform on Hartley-normalized points.
pub fn fit_dlt(pairs: &[Pair]) -> Result<Homography, MosaicError> {
    if pairs.len() < 4 {
        return Err(MosaicError::DegenerateConfiguration(format!("{} pairs, need 4", pairs.len())));
    }
    let src: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(MosaicError::DegenerateConfiguration("points are collinear".into()));
    }
    let degenerate = || MosaicError::DegenerateConfiguration("coincident points".into());
    let ts = normalizer(&src).ok_or_else(degenerate)?;
    let td = normalizer(&dst).ok_or_else(degenerate)?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = ts * Vector3::new(s.0, s.1, 1.0);
        let d = td * Vector3::new(d.0, d.1, 1.0);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let k = svd.singular_values.argmin().0;
    let h = Matrix3::from_fn(|i, j| vt[(k, 3 * i + j)]);
    let td_inv = td.try_inverse().ok_or_else(degenerate)?;
    Homography::new(td_inv * h * ts)
}

/// Robust fit: RANSAC over minimal samples, then refits on the consensus
/// set until the inlier mask stops changing.
pub fn estimate_homography(pairs: &[Pair], cfg: &RansacConfig) -> Result<HomographyEstimate, MosaicError> {
    if pairs.len() < 4 {
        return Err(MosaicError::DegenerateConfiguration(format!("{} pairs, need 4", pairs.len())));
    }
    let src: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(MosaicError::DegenerateConfiguration("points are collinear".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = pairs.len();
    let mut best: Option<(usize, Homography)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let sample: Vec<Pair> = idx.iter().map(|i| pairs[i]).collect();
        let s: Vec<_> = sample.iter().map(|p| p.0).collect();
        let d: Vec<_> = sample.iter().map(|p| p.1).collect();
        if any_three_collinear(&s) || any_three_collinear(&d) {
            continue;
        }
        let Ok(h) = fit_dlt(&sample) else { continue };
        let count = pairs.iter().filter(|p| transfer_error(&h, p) < cfg.threshold_px).count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, h));
            let w = count as f64 / n as f64;
            let p_fail = 1.0 - w.powi(4);
            needed = if p_fail <= 0.0 {
                0
            } else if p_fail >= 1.0 {
                cfg.max_iterations
            } else {
                ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil().max(1.0) as usize
            };
        }
    }
    let Some((_, mut h)) = best else {
        return Err(MosaicError::DegenerateConfiguration("no non-degenerate sample".into()));
    };
    let mut mask: Vec<bool> = pairs.iter().map(|p| transfer_error(&h, p) < cfg.threshold_px).collect();
    for _ in 0..5 {
        let inl: Vec<Pair> = pairs.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
        if inl.len() < cfg.min_inliers.max(4) {
            break;
        }
        let Ok(refit) = fit_dlt(&inl) else { break };
        let next: Vec<bool> = pairs.iter().map(|p| transfer_error(&refit, p) < cfg.threshold_px).collect();
        let grew = next.iter().filter(|m| **m).count() >= inl.len();
        if !grew {
            break;
        }
        h = refit;
        let done = next == mask;
        mask = next;
        if done {
            break;
        }
    }
    let inlier_count = mask.iter().filter(|m| **m).count();
    if inlier_count < cfg.min_inliers {
        return Err(MosaicError::InsufficientInliers {
            found: inlier_count,
            required: cfg.min_inliers,
        });
    }
    Ok(HomographyEstimate {
        homography: h,
        inliers: mask,
        inlier_count,
        iterations: it,
    })
}

/// Homography of a pure camera rotation by `yaw` then `pitch` (radians),
/// for a pinhole with focal `f` and principal point `(cx, cy)`.
pub fn rotation_homography(f: f64, cx: f64, cy: f64, yaw: f64, pitch: f64) -> Homography {
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let r = nalgebra::Rotation3::from_euler_angles(pitch, yaw, 0.0);
    Homography::new(k * r.matrix() * k.try_inverse().expect("f > 0")).expect("rotation homography")
}
