//! Pose sequences, body-part views and part normalization.
//!
//! A frame holds 49 joints in a fixed layout: joints 0-6 are the upper body
//! (neck, shoulders, elbows, wrists), 7-27 the left hand and 28-48 the right
//! hand, each hand starting at its wrist.

mod io;
mod synthetic;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_sequences, read_sequences, save_sequences, write_sequences};
pub use synthetic::{add_noise, gen_synthetic, gen_synthetic_split, SyntheticSpec};

pub const NUM_JOINTS: usize = 49;
pub const BODY_JOINTS: usize = 7;
pub const HAND_JOINTS: usize = 21;

/// Side length, in normalized units, of the box a part is scaled into.
pub const PART_SCALE: f64 = 128.0;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Body,
    LeftHand,
    RightHand,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Body, Part::LeftHand, Part::RightHand];

    pub fn joints(self) -> Range<usize> {
        match self {
            Part::Body => 0..BODY_JOINTS,
            Part::LeftHand => BODY_JOINTS..BODY_JOINTS + HAND_JOINTS,
            Part::RightHand => BODY_JOINTS + HAND_JOINTS..NUM_JOINTS,
        }
    }

    pub fn joint_count(self) -> usize {
        self.joints().len()
    }

    /// Global index of the part's anchor: the neck for the body, the wrist
    /// for each hand.
    pub fn anchor(self) -> usize {
        self.joints().start
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// `T` frames of 49 two-dimensional joints with per-joint confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    id: String,
    label: Option<usize>,
    coords: Vec<Point>,
    conf: Vec<f64>,
}

impl PoseSequence {
    /// Validates and builds a sequence; `coords` and `conf` are frame-major.
    pub fn new(id: impl Into<String>, label: Option<usize>, coords: Vec<Point>, conf: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if coords.is_empty() {
            return Err(Error::EmptySequence { id });
        }
        if !coords.len().is_multiple_of(NUM_JOINTS) || conf.len() != coords.len() {
            return Err(Error::JointCount {
                id,
                frame: coords.len() / NUM_JOINTS,
                found: coords.len() % NUM_JOINTS,
                expected: NUM_JOINTS,
            });
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id });
        }
        if let Some(i) = conf.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Confidence {
                id,
                frame: i / NUM_JOINTS,
                joint: i % NUM_JOINTS,
                value: conf[i],
            });
        }
        Ok(Self { id, label, coords, conf })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn frames(&self) -> usize {
        self.coords.len() / NUM_JOINTS
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn conf(&self) -> &[f64] {
        &self.conf
    }

    pub fn coord(&self, frame: usize, joint: usize) -> Point {
        self.coords[frame * NUM_JOINTS + joint]
    }

    pub fn confidence(&self, frame: usize, joint: usize) -> f64 {
        self.conf[frame * NUM_JOINTS + joint]
    }

    pub fn frame_coords(&self, frame: usize) -> &[Point] {
        &self.coords[frame * NUM_JOINTS..(frame + 1) * NUM_JOINTS]
    }

    /// New sequence built from the given source frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> PoseSequence {
        let mut coords = Vec::with_capacity(frames.len() * NUM_JOINTS);
        let mut conf = Vec::with_capacity(frames.len() * NUM_JOINTS);
        for &f in frames {
            coords.extend_from_slice(self.frame_coords(f));
            conf.extend_from_slice(&self.conf[f * NUM_JOINTS..(f + 1) * NUM_JOINTS]);
        }
        PoseSequence {
            id: self.id.clone(),
            label: self.label,
            coords,
            conf,
        }
    }

    /// Same confidences and metadata, replaced coordinates.
    pub fn with_coords(&self, coords: Vec<Point>) -> Result<PoseSequence> {
        PoseSequence::new(self.id.clone(), self.label, coords, self.conf.clone())
    }
}

/// Read-only view of one body part of a sequence.
#[derive(Clone, Copy, Debug)]
pub struct PartView<'a> {
    part: Part,
    seq: &'a PoseSequence,
}

impl<'a> PartView<'a> {
    pub fn part(&self) -> Part {
        self.part
    }

    pub fn frames(&self) -> usize {
        self.seq.frames()
    }

    pub fn joints(&self) -> usize {
        self.part.joint_count()
    }

    pub fn frame(&self, t: usize) -> &'a [Point] {
        &self.seq.frame_coords(t)[self.part.joints()]
    }

    /// Anchor joint coordinate at frame `t`.
    pub fn reference(&self, t: usize) -> Point {
        self.seq.coord(t, self.part.anchor())
    }

    pub fn conf(&self, t: usize) -> &'a [f64] {
        let base = t * NUM_JOINTS;
        &self.seq.conf()[base + self.part.joints().start..base + self.part.joints().end]
    }
}

pub fn split_parts(seq: &PoseSequence) -> (PartView<'_>, PartView<'_>, PartView<'_>) {
    (
        PartView { part: Part::Body, seq },
        PartView {
            part: Part::LeftHand,
            seq,
        },
        PartView {
            part: Part::RightHand,
            seq,
        },
    )
}

/// Concatenates body, left-hand and right-hand views back into a sequence.
pub fn reassemble(body: PartView<'_>, left: PartView<'_>, right: PartView<'_>) -> Result<PoseSequence> {
    let frames = body.frames();
    if left.frames() != frames || right.frames() != frames {
        return Err(Error::Shape("part views disagree on frame count".into()));
    }
    let mut coords = Vec::with_capacity(frames * NUM_JOINTS);
    let mut conf = Vec::with_capacity(frames * NUM_JOINTS);
    for t in 0..frames {
        for v in [body, left, right] {
            coords.extend_from_slice(v.frame(t));
            conf.extend_from_slice(v.conf(t));
        }
    }
    PoseSequence::new(body.seq.id.clone(), body.seq.label, coords, conf)
}

/// Per frame: subtract the anchor joint, divide by
/// `max(bbox width, bbox height, 1)` and multiply by [`PART_SCALE`].
///
/// Returns `T x n_p` points in `[-128, 128]`, frame-major.
pub fn normalize_part(view: &PartView<'_>) -> Vec<Point> {
    let mut out = Vec::with_capacity(view.frames() * view.joints());
    for t in 0..view.frames() {
        let pts = view.frame(t);
        let [ax, ay] = view.reference(t);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let s = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        let k = PART_SCALE / s;
        out.extend(pts.iter().map(|p| [(p[0] - ax) * k, (p[1] - ay) * k]));
    }
    out
}

/// All three parts normalized and laid back out in the 49-joint order.
pub fn normalize_sequence(seq: &PoseSequence) -> Vec<Point> {
    let (body, left, right) = split_parts(seq);
    let parts = [normalize_part(&body), normalize_part(&left), normalize_part(&right)];
    let mut out = Vec::with_capacity(seq.frames() * NUM_JOINTS);
    for t in 0..seq.frames() {
        for (p, v) in parts.iter().zip(Part::ALL) {
            out.extend_from_slice(&p[t * v.joint_count()..(t + 1) * v.joint_count()]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<PoseSequence>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(sequences: Vec<PoseSequence>, num_classes: usize, split: Split) -> Result<Self> {
        for s in &sequences {
            if let Some(label) = s.label {
                if label >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        id: s.id.clone(),
                        label,
                        num_classes,
                    });
                }
            }
        }
        Ok(Self {
            sequences,
            num_classes,
            split,
        })
    }

    /// Builds a dataset whose class count is one past the largest label.
    pub fn from_sequences(sequences: Vec<PoseSequence>, split: Split) -> Self {
        let num_classes = sequences.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1);
        Self {
            sequences,
            num_classes,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Errors unless every sequence is labeled.
    pub fn require_labels(&self) -> Result<()> {
        match self.sequences.iter().find(|s| s.label.is_none()) {
            Some(s) => Err(Error::MissingLabel { id: s.id.clone() }),
            None => Ok(()),
        }
    }
}
