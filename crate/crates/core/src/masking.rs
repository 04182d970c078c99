//! Motion residuals, motion-aware frame masking and temporal sampling.
//!
//! Frame indices are 0-based throughout: a sequence of `T` frames with
//! interval `k` has eligible frames `0..T-k`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posedata::{Point, PoseSequence};

/// Added before flooring `ratio * n` so products such as `0.29 * 100` that
/// land a hair under an integer still count that integer.
pub const FLOOR_SLACK: f64 = 1e-9;

pub fn ratio_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + FLOOR_SLACK).floor() as usize
}

/// Keeps confidences `>= eps_c`, zeroes the rest.
pub fn truncate_confidence(conf: &[f64], eps_c: f64) -> Vec<f64> {
    conf.iter().map(|&r| if r >= eps_c { r } else { 0.0 }).collect()
}

/// Frame-to-frame residuals over interval `k`, frame-major `T x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub residuals: Vec<Point>,
    /// `c_i * c_{i+k}` per joint; zero in the tail.
    pub paired_conf: Vec<f64>,
    pub interval: usize,
    pub frames: usize,
    pub joints: usize,
}

impl MotionField {
    /// Number of frames with a defined residual, `T - k`.
    pub fn eligible(&self) -> usize {
        self.frames - self.interval
    }

    pub fn residual(&self, frame: usize, joint: usize) -> Point {
        self.residuals[frame * self.joints + joint]
    }

    pub fn pair_conf(&self, frame: usize, joint: usize) -> f64 {
        self.paired_conf[frame * self.joints + joint]
    }
}

/// `m_i = x_{i+k} - x_i` for `i < T - k`, zero afterwards.
///
/// `coords` should already be part-normalized; `conf` is normally truncated.
pub fn motion_residuals(coords: &[Point], conf: &[f64], joints: usize, k: usize) -> Result<MotionField> {
    if joints == 0 || !coords.len().is_multiple_of(joints) || conf.len() != coords.len() {
        return Err(Error::Shape(format!(
            "{} coordinates and {} confidences for {joints} joints",
            coords.len(),
            conf.len()
        )));
    }
    let frames = coords.len() / joints;
    if k == 0 || k >= frames {
        return Err(Error::invalid(format!("interval {k} must lie in 1..{frames}")));
    }
    let mut residuals = vec![[0.0; 2]; coords.len()];
    let mut paired_conf = vec![0.0; coords.len()];
    for i in 0..frames - k {
        for j in 0..joints {
            let (a, b) = (i * joints + j, (i + k) * joints + j);
            residuals[a] = [coords[b][0] - coords[a][0], coords[b][1] - coords[a][1]];
            paired_conf[a] = conf[a] * conf[b];
        }
    }
    Ok(MotionField {
        residuals,
        paired_conf,
        interval: k,
        frames,
        joints,
    })
}

/// Denominator of the per-frame valid-motion ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiDenominator {
    /// Every joint counts.
    #[default]
    All,
    /// Only joints with nonzero paired confidence count.
    Valid,
}

impl std::str::FromStr for PiDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "valid" => Ok(Self::Valid),
            other => Err(Error::invalid(format!("pi denominator `{other}` is not `all` or `valid`"))),
        }
    }
}

/// `p_i` for each eligible frame: the share of joints whose
/// confidence-weighted residual norm reaches `eps_m`.
pub fn motion_ratios(field: &MotionField, eps_m: f64, denom: PiDenominator) -> Vec<f64> {
    (0..field.eligible())
        .map(|i| {
            let (mut moving, mut valid) = (0usize, 0usize);
            for j in 0..field.joints {
                let [dx, dy] = field.residual(i, j);
                let c = field.pair_conf(i, j);
                if dx.hypot(dy) * c >= eps_m {
                    moving += 1;
                }
                if c > 0.0 {
                    valid += 1;
                }
            }
            let n = match denom {
                PiDenominator::All => field.joints,
                PiDenominator::Valid => valid,
            };
            if n == 0 {
                0.0
            } else {
                moving as f64 / n as f64
            }
        })
        .collect()
}

/// Ascending eligible frames with `p_i >= delta`.
pub fn candidate_set(field: &MotionField, eps_m: f64, delta: f64, denom: PiDenominator) -> Vec<usize> {
    motion_ratios(field, eps_m, denom)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= delta)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub candidates: Vec<usize>,
    /// Ascending masked frames.
    pub masked: Vec<usize>,
    pub ratio: f64,
    /// Set when the candidate set was empty and `masked` was drawn uniformly
    /// from all eligible frames instead.
    pub fallback: bool,
}

impl MaskPlan {
    /// Frames of `0..frames` not in `masked`, ascending.
    pub fn visible(&self, frames: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(frames - self.masked.len());
        let mut m = self.masked.iter().peekable();
        for t in 0..frames {
            if m.peek() == Some(&&t) {
                m.next();
            } else {
                out.push(t);
            }
        }
        out
    }
}

fn random_subset<R: Rng + ?Sized>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Uniform subset of `candidates` of size `floor(alpha * |S|)`.
pub fn select_mask<R: Rng + ?Sized>(candidates: &[usize], alpha: f64, rng: &mut R) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("mask ratio {alpha} outside [0, 1]")));
    }
    let masked = random_subset(candidates, ratio_count(alpha, candidates.len()), rng);
    Ok(MaskPlan {
        candidates: candidates.to_vec(),
        masked,
        ratio: alpha,
        fallback: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSettings {
    pub k: usize,
    pub eps_c: f64,
    pub eps_m: f64,
    pub delta: f64,
    pub alpha: f64,
    pub pi_denominator: PiDenominator,
}

impl Default for MaskSettings {
    fn default() -> Self {
        Self {
            k: 3,
            eps_c: 0.4,
            eps_m: 5.0,
            delta: 0.5,
            alpha: 0.9,
            pi_denominator: PiDenominator::All,
        }
    }
}

impl MaskSettings {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.k == 0 {
            return Err(Error::invalid("interval k must be at least 1"));
        }
        if !unit(self.eps_c) || !unit(self.delta) || !unit(self.alpha) {
            return Err(Error::invalid("eps_c, delta and alpha must lie in [0, 1]"));
        }
        if !(self.eps_m >= 0.0) {
            return Err(Error::invalid("eps_m must be non-negative"));
        }
        Ok(())
    }
}

/// Full masking pass over part-normalized coordinates.
///
/// When the candidate set is empty, `floor(alpha * (T - k))` frames are
/// masked uniformly from the eligible range and `fallback` is set.
pub fn plan_mask<R: Rng + ?Sized>(
    coords: &[Point],
    conf: &[f64],
    joints: usize,
    settings: &MaskSettings,
    rng: &mut R,
) -> Result<(MotionField, MaskPlan)> {
    let field = motion_residuals(coords, &truncate_confidence(conf, settings.eps_c), joints, settings.k)?;
    let candidates = candidate_set(&field, settings.eps_m, settings.delta, settings.pi_denominator);
    let plan = if candidates.is_empty() {
        let pool: Vec<usize> = (0..field.eligible()).collect();
        MaskPlan {
            candidates,
            masked: random_subset(&pool, ratio_count(settings.alpha, pool.len()), rng),
            ratio: settings.alpha,
            fallback: true,
        }
    } else {
        select_mask(&candidates, settings.alpha, rng)?
    };
    Ok((field, plan))
}

/// Keeps `max(1, floor((1 - alpha_r) * T))` uniformly chosen frames in their
/// original order. Returns the subsequence and its source indices.
pub fn random_temporal_sample<R: Rng + ?Sized>(
    seq: &PoseSequence,
    alpha_r: f64,
    rng: &mut R,
) -> Result<(PoseSequence, Vec<usize>)> {
    if !(0.0..1.0).contains(&alpha_r) {
        return Err(Error::invalid(format!("temporal drop ratio {alpha_r} outside [0, 1)")));
    }
    let frames = seq.frames();
    let keep = ratio_count(1.0 - alpha_r, frames).clamp(1, frames);
    let mut idx = index::sample(rng, frames, keep).into_vec();
    idx.sort_unstable();
    Ok((seq.select_frames(&idx), idx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Random,
    Center,
}

/// Source indices for `n` equal temporal segments of `0..frames`.
///
/// Segment `i` spans `ceil(i*T/n) ..= ceil((i+1)*T/n) - 1`. Center mode takes
/// the lower midpoint, random mode a uniform frame of the segment. Segments
/// that contain no frame (only when `T < n`) reuse frame `floor(i*T/n)`.
pub fn segment_indices<R: Rng + ?Sized>(
    frames: usize,
    n: usize,
    mode: SampleMode,
    mut rng: Option<&mut R>,
) -> Result<Vec<usize>> {
    if n == 0 || frames == 0 {
        return Err(Error::invalid("segment sampling needs n >= 1 and a non-empty sequence"));
    }
    if mode == SampleMode::Random && rng.is_none() {
        return Err(Error::invalid("random segment sampling needs a generator"));
    }
    let ceil_div = |a: usize, b: usize| a.div_ceil(b);
    (0..n)
        .map(|i| {
            let start = ceil_div(i * frames, n);
            let end = ceil_div((i + 1) * frames, n);
            if start >= end {
                return Ok(i * frames / n);
            }
            let last = end - 1;
            Ok(match mode {
                SampleMode::Center => (start + last) / 2,
                SampleMode::Random => rng.as_deref_mut().expect("checked above").random_range(start..=last),
            })
        })
        .collect()
}

pub fn fixed_frame_sample<R: Rng + ?Sized>(
    seq: &PoseSequence,
    n: usize,
    mode: SampleMode,
    rng: Option<&mut R>,
) -> Result<(PoseSequence, Vec<usize>)> {
    let idx = segment_indices(seq.frames(), n, mode, rng)?;
    Ok((seq.select_frames(&idx), idx))
}
