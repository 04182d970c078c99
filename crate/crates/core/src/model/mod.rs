//! Frame-wise graph embedding, transformer encoder/decoder, projection heads
//! and the classifier.
//!
//! Parameters live in a [`ParamStore`] under the prefixes `embed.`,
//! `encoder.`, `decoder.`, `proj_q.`, `proj_k.` and `classifier.`. The model
//! itself only carries the configuration and the fixed skeleton graphs.

mod layers;
mod skeleton;

use masa_autograd::params::normal;
use masa_autograd::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posedata::{normalize_sequence, Part, Point, PoseSequence, NUM_JOINTS, PART_SCALE};
use crate::seeding::derive_seed;
use layers::{block, init_block, init_linear, init_norm, linear, norm};

pub use skeleton::{hand_edges, SkeletonGraph, BODY_EDGES};

/// Each predicted frame holds an `(x, y)` residual for every joint.
pub const PRED_WIDTH: usize = NUM_JOINTS * 2;

/// Predictions come out of the head in network units and are multiplied by
/// this to land in the pixel-like units of the residual targets.
pub const PRED_SCALE: f64 = PART_SCALE;

const EMBED_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_e: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub proj_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub max_t: usize,
    pub share_hand_weights: bool,
    pub num_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_e: 64,
            enc_layers: 2,
            dec_layers: 1,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 32,
            gcn_layers: 2,
            gcn_hidden: 16,
            max_t: 64,
            share_hand_weights: true,
            num_classes: None,
        }
    }
}

impl ModelConfig {
    /// The smallest sensible network, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_e: 16,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            mlp_ratio: 2,
            proj_dim: 8,
            gcn_layers: 1,
            gcn_hidden: 4,
            max_t: 16,
            ..Self::default()
        }
    }

    /// Width of each hand slice: a third of `d_e`, rounded.
    pub fn hand_width(&self) -> usize {
        (self.d_e as f64 / 3.0).round() as usize
    }

    pub fn body_width(&self) -> usize {
        self.d_e - 2 * self.hand_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_e < 3 || self.heads == 0 || !self.d_e.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_e {} must be at least 3 and divisible by heads {}",
                self.d_e, self.heads
            )));
        }
        if self.mlp_ratio == 0 || self.proj_dim == 0 || self.gcn_hidden == 0 || self.max_t == 0 {
            return Err(Error::invalid("model widths and max_t must be positive"));
        }
        if self.num_classes == Some(0) {
            return Err(Error::invalid("num_classes must be positive"));
        }
        Ok(())
    }
}

/// Which projection head to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Query,
    Key,
}

impl Head {
    pub fn prefix(self) -> &'static str {
        match self {
            Head::Query => "proj_q",
            Head::Key => "proj_k",
        }
    }
}

/// Part-normalized coordinates divided by 128, i.e. in `[-1, 1]`.
pub fn network_input(seq: &PoseSequence) -> Vec<Point> {
    normalize_sequence(seq)
        .into_iter()
        .map(|[x, y]| [x / PART_SCALE, y / PART_SCALE])
        .collect()
}

#[derive(Clone, Debug)]
pub struct Masa {
    config: ModelConfig,
    hand: SkeletonGraph,
    body: SkeletonGraph,
}

impl Masa {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            hand: SkeletonGraph::hand(),
            body: SkeletonGraph::body(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn part_prefix(&self, part: Part) -> &'static str {
        match part {
            Part::Body => "embed.body",
            _ if self.config.share_hand_weights => "embed.hand",
            Part::LeftHand => "embed.left_hand",
            Part::RightHand => "embed.right_hand",
        }
    }

    fn part_width(&self, part: Part) -> usize {
        match part {
            Part::Body => self.config.body_width(),
            _ => self.config.hand_width(),
        }
    }

    /// Embedding, encoder, decoder and query projection, drawn from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1417]));
        let mut store = ParamStore::new();

        let mut parts = vec![Part::Body, Part::LeftHand];
        if !c.share_hand_weights {
            parts.push(Part::RightHand);
        }
        for part in parts {
            let prefix = self.part_prefix(part);
            let mut width_in = 2;
            for l in 0..c.gcn_layers {
                init_linear(&mut store, &mut rng, &format!("{prefix}.gcn.{l}"), width_in, c.gcn_hidden)?;
                init_norm(&mut store, &format!("{prefix}.gcn.{l}.ln"), c.gcn_hidden)?;
                width_in = c.gcn_hidden;
            }
            let flat = part.joint_count() * width_in;
            init_linear(&mut store, &mut rng, &format!("{prefix}.out"), flat, self.part_width(part))?;
        }

        store.insert("encoder.pos", normal(&mut rng, &[c.max_t, c.d_e], EMBED_STD))?;
        for i in 0..c.enc_layers {
            init_block(&mut store, &mut rng, &format!("encoder.blocks.{i}"), c.d_e, c.mlp_ratio)?;
        }
        init_norm(&mut store, "encoder.norm", c.d_e)?;

        store.insert("decoder.mask_token", normal(&mut rng, &[1, c.d_e], EMBED_STD))?;
        store.insert("decoder.pos", normal(&mut rng, &[c.max_t, c.d_e], EMBED_STD))?;
        for i in 0..c.dec_layers {
            init_block(&mut store, &mut rng, &format!("decoder.blocks.{i}"), c.d_e, c.mlp_ratio)?;
        }
        init_norm(&mut store, "decoder.norm", c.d_e)?;
        init_linear(&mut store, &mut rng, "decoder.head.fc1", c.d_e, c.d_e)?;
        init_linear(&mut store, &mut rng, "decoder.head.fc2", c.d_e, PRED_WIDTH)?;

        init_linear(&mut store, &mut rng, "proj_q.fc1", c.d_e, c.d_e)?;
        init_linear(&mut store, &mut rng, "proj_q.fc2", c.d_e, c.proj_dim)?;
        Ok(store)
    }

    /// Fresh `classifier.*` parameters, replacing any present.
    pub fn init_classifier(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let classes = self
            .config
            .num_classes
            .ok_or_else(|| Error::invalid("num_classes is not set"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xc1a5]));
        let mut fresh = ParamStore::new();
        init_linear(&mut fresh, &mut rng, "classifier", self.config.d_e, classes)?;
        for (path, p) in fresh.iter() {
            if store.contains(path) {
                store.set_value(path, p.value.clone())?;
            } else {
                store.insert(path, p.value.clone())?;
            }
        }
        Ok(())
    }

    fn gcn_branch(&self, g: &mut Graph, store: &ParamStore, part: Part, coords: &[Point], frames: usize) -> Result<Var> {
        let n = part.joint_count();
        let mut data = Vec::with_capacity(frames * n * 2);
        for t in 0..frames {
            for p in &coords[t * NUM_JOINTS + part.joints().start..t * NUM_JOINTS + part.joints().end] {
                data.extend_from_slice(p);
            }
        }
        let adj = match part {
            Part::Body => &self.body.normalized,
            _ => &self.hand.normalized,
        };
        let prefix = self.part_prefix(part);
        let mut x = g.constant(Tensor::matrix(frames * n, 2, data)?);
        for l in 0..self.config.gcn_layers {
            x = g.aggregate(adj, x)?;
            x = linear(g, store, &format!("{prefix}.gcn.{l}"), x)?;
            x = norm(g, store, &format!("{prefix}.gcn.{l}.ln"), x)?;
            x = g.relu(x);
        }
        let width = g.shape(x)[1];
        let flat = g.reshape(x, &[frames, n * width])?;
        linear(g, store, &format!("{prefix}.out"), flat)
    }

    /// Per-frame embedding `[T, d_e]` laid out as `[left hand, right hand, body]`.
    ///
    /// `coords` are network inputs (see [`network_input`]), frame-major.
    pub fn embed_frames(&self, g: &mut Graph, store: &ParamStore, coords: &[Point]) -> Result<Var> {
        if coords.is_empty() || !coords.len().is_multiple_of(NUM_JOINTS) {
            return Err(Error::Shape(format!("{} points is not a whole number of frames", coords.len())));
        }
        let frames = coords.len() / NUM_JOINTS;
        let left = self.gcn_branch(g, store, Part::LeftHand, coords, frames)?;
        let right = self.gcn_branch(g, store, Part::RightHand, coords, frames)?;
        let body = self.gcn_branch(g, store, Part::Body, coords, frames)?;
        Ok(g.concat_cols(&[left, right, body])?)
    }

    /// Adds the positional rows of the given original frame indices and runs
    /// the encoder stack. Attention matrices go to `trace` when given.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Var,
        positions: &[usize],
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        if g.shape(frames).first() != Some(&positions.len()) {
            return Err(Error::Shape(format!(
                "{:?} frame features for {} positions",
                g.shape(frames),
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("encoder positions must be strictly increasing"));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.max_t) {
            return Err(Error::invalid(format!("position {p} beyond max_t {}", self.config.max_t)));
        }
        let table = g.param(store, "encoder.pos")?;
        let pos = g.gather_rows(table, positions)?;
        let mut x = g.add(frames, pos)?;
        for i in 0..self.config.enc_layers {
            x = block(g, store, &format!("encoder.blocks.{i}"), x, self.config.heads, trace.as_deref_mut())?;
        }
        norm(g, store, "encoder.norm", x)
    }

    /// Embeds and encodes the selected frames of `coords`, keeping their
    /// original indices as positions.
    pub fn encode_frames(&self, g: &mut Graph, store: &ParamStore, coords: &[Point], frames: &[usize]) -> Result<Var> {
        let mut picked = Vec::with_capacity(frames.len() * NUM_JOINTS);
        for &t in frames {
            picked.extend_from_slice(&coords[t * NUM_JOINTS..(t + 1) * NUM_JOINTS]);
        }
        let f = self.embed_frames(g, store, &picked)?;
        self.encode(g, store, f, frames, None)
    }

    /// Decoder input `[T, d_e]`: encoder rows at the visible frames, the mask
    /// token at masked frames, plus decoder position `t` on row `t`.
    pub fn assemble_decoder_input(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        encoded: Var,
        masked: &[usize],
        visible: &[usize],
        frames: usize,
    ) -> Result<Var> {
        if masked.len() + visible.len() != frames || g.shape(encoded).first() != Some(&visible.len()) {
            return Err(Error::Shape(format!(
                "{} masked + {} visible frames against T = {frames} and encoder rows {:?}",
                masked.len(),
                visible.len(),
                g.shape(encoded)
            )));
        }
        if frames > self.config.max_t {
            return Err(Error::invalid(format!("T = {frames} beyond max_t {}", self.config.max_t)));
        }
        let mut x = g.scatter_rows(encoded, visible, frames)?;
        if !masked.is_empty() {
            let token = g.param(store, "decoder.mask_token")?;
            let tokens = g.gather_rows(token, &vec![0; masked.len()])?;
            let placed = g.scatter_rows(tokens, masked, frames)?;
            x = g.add(x, placed)?;
        }
        let table = g.param(store, "decoder.pos")?;
        let pos = g.slice_rows(table, 0, frames)?;
        Ok(g.add(x, pos)?)
    }

    /// Motion predictions `[|M|, 98]` for the masked frames, in the order of
    /// `masked`. An empty mask yields a `[0, 98]` result.
    pub fn decode_predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        encoded: Var,
        masked: &[usize],
        visible: &[usize],
        frames: usize,
    ) -> Result<Var> {
        let mut x = self.assemble_decoder_input(g, store, encoded, masked, visible, frames)?;
        for i in 0..self.config.dec_layers {
            x = block(g, store, &format!("decoder.blocks.{i}"), x, self.config.heads, None)?;
        }
        let x = norm(g, store, "decoder.norm", x)?;
        let rows = g.gather_rows(x, masked)?;
        let h = linear(g, store, "decoder.head.fc1", rows)?;
        let h = g.gelu(h);
        let y = linear(g, store, "decoder.head.fc2", h)?;
        Ok(g.scale(y, PRED_SCALE))
    }

    /// Mean-pooled, two-layer projection to a unit row `[1, proj_dim]`.
    pub fn project_global(&self, g: &mut Graph, store: &ParamStore, encoded: Var, head: Head) -> Result<Var> {
        if g.shape(encoded).first().is_none_or(|&r| r == 0) {
            return Err(Error::invalid("projection of an empty sequence"));
        }
        let prefix = head.prefix();
        let pooled = g.mean_rows(encoded)?;
        let h = linear(g, store, &format!("{prefix}.fc1"), pooled)?;
        let h = g.relu(h);
        let z = linear(g, store, &format!("{prefix}.fc2"), h)?;
        Ok(g.l2_normalize(z))
    }

    /// Class logits `[1, num_classes]` from mean-pooled encoder output.
    pub fn classify(&self, g: &mut Graph, store: &ParamStore, encoded: Var) -> Result<Var> {
        if self.config.num_classes.is_none() {
            return Err(Error::invalid("num_classes is not set"));
        }
        let pooled = g.mean_rows(encoded)?;
        linear(g, store, "classifier", pooled)
    }
}
