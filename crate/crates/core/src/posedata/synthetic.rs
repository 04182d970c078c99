//! Synthetic labeled pose corpora and coordinate noise.
//!
//! Each class owns one smooth trajectory template per joint and coordinate: a
//! base position plus two low-frequency sinusoids. Samples replay the template
//! with a random temporal phase shift, Gaussian jitter and random confidences.
//! Templates depend only on the seed, so train and test splits drawn from the
//! same seed share classes while their samples differ.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, PoseSequence, Split, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::seeding::{hash_str, rng_for};

const TEMPLATE_STREAM: u64 = 0x7e3a;
const HARMONICS: usize = 2;
const COORD_LIMIT: f64 = 128.0;

/// Generator settings beyond the class/sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub seed: u64,
    /// Standard deviation of per-coordinate jitter, in pixels.
    pub jitter: f64,
    /// Zero every template amplitude and the jitter: each sequence repeats a
    /// single pose.
    pub static_motion: bool,
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, per_class: usize, frames: usize, seed: u64) -> Self {
        Self {
            num_classes,
            per_class,
            frames,
            seed,
            jitter: 2.0,
            static_motion: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("num_classes {} must be at least 2", self.num_classes)));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        if self.frames < 8 {
            return Err(Error::invalid(format!("frame count {} must be at least 8", self.frames)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

/// Per joint and coordinate: base position and harmonics.
struct Template {
    base: Vec<[f64; 2]>,
    waves: Vec<[[Wave; HARMONICS]; 2]>,
}

impl Template {
    fn draw(seed: u64, class: usize, moving: bool) -> Template {
        let mut rng = rng_for(seed, &[TEMPLATE_STREAM, class as u64]);
        let mut base = Vec::with_capacity(NUM_JOINTS);
        let mut waves = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..NUM_JOINTS {
            base.push([rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)]);
            let mut joint = [[Wave { amp: 0.0, freq: 0.0, phase: 0.0 }; HARMONICS]; 2];
            for axis in &mut joint {
                let amp = rng.random_range(10.0..40.0);
                for (h, w) in axis.iter_mut().enumerate() {
                    let order = (h + 1) as f64;
                    *w = Wave {
                        amp: if moving { amp / order } else { 0.0 },
                        freq: rng.random_range(0.5..2.0) * order,
                        phase: rng.random_range(0.0..TAU),
                    };
                }
            }
            waves.push(joint);
        }
        Template { base, waves }
    }

    fn at(&self, joint: usize, axis: usize, t: f64, frames: f64) -> f64 {
        self.waves[joint][axis].iter().fold(self.base[joint][axis], |acc, w| {
            acc + w.amp * (TAU * w.freq * t / frames + w.phase).sin()
        })
    }
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Test => 2,
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Training split with the default jitter.
pub fn gen_synthetic(num_classes: usize, per_class: usize, frames: usize, seed: u64) -> Result<Dataset> {
    gen_synthetic_split(&SyntheticSpec::new(num_classes, per_class, frames, seed), Split::Train)
}

pub fn gen_synthetic_split(spec: &SyntheticSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let frames = spec.frames;
    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| Error::invalid(e.to_string()))?;
    let mut sequences = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        let template = Template::draw(spec.seed, class, !spec.static_motion);
        for i in 0..spec.per_class {
            let mut rng = rng_for(spec.seed, &[split_tag(split), class as u64, i as u64]);
            let shift = rng.random_range(-(frames as f64) / 8.0..frames as f64 / 8.0);
            let mut coords = Vec::with_capacity(frames * NUM_JOINTS);
            let mut conf = Vec::with_capacity(frames * NUM_JOINTS);
            for t in 0..frames {
                let tt = t as f64 + shift;
                for j in 0..NUM_JOINTS {
                    let mut p = [0.0; 2];
                    for (axis, v) in p.iter_mut().enumerate() {
                        let noise = if spec.static_motion { 0.0 } else { jitter.sample(&mut rng) };
                        *v = (template.at(j, axis, tt, frames as f64) + noise).clamp(-COORD_LIMIT, COORD_LIMIT);
                    }
                    coords.push(p);
                    conf.push(rng.random_range(0.5..=1.0));
                }
            }
            let id = format!("{}-c{class:03}-{i:04}", split_name(split));
            sequences.push(PoseSequence::new(id, Some(class), coords, conf)?);
        }
    }
    Dataset::new(sequences, spec.num_classes, split)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate. The stream is keyed
/// by `seed` and the sequence id; `sigma == 0` returns an exact copy.
pub fn add_noise(seq: &PoseSequence, sigma: f64, seed: u64) -> Result<PoseSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma {sigma} must be finite and non-negative")));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(seed, &[hash_str(seq.id())]);
    let coords = seq
        .coords()
        .iter()
        .map(|p| [p[0] + normal.sample(&mut rng), p[1] + normal.sample(&mut rng)])
        .collect();
    seq.with_coords(coords)
}
