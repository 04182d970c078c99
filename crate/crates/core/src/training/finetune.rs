//! Supervised fine-tuning of the embedding + encoder with a linear classifier,
//! and evaluation.

use masa_autograd::{finetune_lr, sgd_momentum_step, Gradients, Graph, OptimState, ParamStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::error::{Error, Result};
use crate::exec::{map_collect, Execution};
use crate::masking::{segment_indices, SampleMode};
use crate::model::{network_input, Masa, ModelConfig};
use crate::posedata::{Dataset, Point, PoseSequence, NUM_JOINTS};
use crate::seeding::{hash_str, rng_for};

const SHUFFLE_STREAM: u64 = 0xf1e5;
const SAMPLE_STREAM: u64 = 0xf5a3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_step: usize,
    pub lr_factor: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Frames sampled per sequence for training and evaluation.
    pub frames: usize,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    /// Desk-scale settings; the learning-rate recipe is the full-scale one.
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            ..Self::paper()
        }
    }
}

impl FinetuneConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 60,
            base_lr: 0.01,
            lr_step: 20,
            lr_factor: 0.1,
            momentum: 0.9,
            batch_size: 64,
            frames: 32,
            model: ModelConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.frames == 0 || self.lr_step == 0 {
            return Err(Error::invalid("batch_size, frames and lr_step must be positive"));
        }
        if self.frames > self.model.max_t {
            return Err(Error::invalid(format!(
                "{} sampled frames exceed max_t {}",
                self.frames, self.model.max_t
            )));
        }
        if !(self.base_lr >= 0.0) || !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning rate must be >= 0 and momentum in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub params: ParamStore,
    pub model: Masa,
    pub log: Vec<FinetuneRow>,
    pub metrics: Metrics,
}

fn sampled_input(input: &[Point], idx: &[usize]) -> Vec<Point> {
    idx.iter()
        .flat_map(|&t| input[t * NUM_JOINTS..(t + 1) * NUM_JOINTS].iter().copied())
        .collect()
}

fn logits_for(model: &Masa, params: &ParamStore, g: &mut Graph, seq: &PoseSequence, idx: &[usize]) -> Result<masa_autograd::Var> {
    let input = sampled_input(&network_input(seq), idx);
    let positions: Vec<usize> = (0..idx.len()).collect();
    let enc = model.encode_frames(g, params, &input, &positions)?;
    model.classify(g, params, enc)
}

/// Class logits for every sequence, sampling `frames` frames in center mode.
pub fn predict_logits(model: &Masa, params: &ParamStore, data: &Dataset, frames: usize, exec: Execution) -> Result<Vec<Vec<f64>>> {
    map_collect(exec, &data.sequences, |_, seq| {
        let idx = segment_indices::<rand_chacha::ChaCha8Rng>(seq.frames(), frames, SampleMode::Center, None)?;
        let mut g = Graph::no_grad();
        let logits = logits_for(model, params, &mut g, seq, &idx)?;
        Ok(g.value(logits).data().to_vec())
    })
    .into_iter()
    .collect()
}

pub fn evaluate(model: &Masa, params: &ParamStore, data: &Dataset, frames: usize, exec: Execution) -> Result<Metrics> {
    data.require_labels()?;
    let classes = model
        .config()
        .num_classes
        .ok_or_else(|| Error::invalid("num_classes is not set"))?;
    let logits = predict_logits(model, params, data, frames, exec)?;
    let labels: Vec<usize> = data.sequences.iter().map(|s| s.label().expect("checked")).collect();
    Metrics::from_logits(&logits, &labels, classes)
}

/// Copies `embed.*` and `encoder.*` from `init` into `params`, requiring
/// identical paths and shapes.
fn load_backbone(params: &mut ParamStore, init: &ParamStore) -> Result<()> {
    let backbone = |p: &str| p.starts_with("embed.") || p.starts_with("encoder.");
    let wanted: Vec<String> = params.paths().filter(|p| backbone(p)).map(String::from).collect();
    let offered = init.paths().filter(|p| backbone(p)).count();
    if offered != wanted.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {offered} backbone tensors, model expects {}",
            wanted.len()
        )));
    }
    for path in wanted {
        let value = init
            .value(&path)
            .map_err(|_| Error::Shape(format!("checkpoint lacks `{path}`")))?;
        params
            .set_value(&path, value.clone())
            .map_err(|_| Error::Shape(format!("checkpoint `{path}` has shape {:?}", value.shape())))?;
    }
    Ok(())
}

/// Trains embedding, encoder and a fresh classifier end to end with SGD and
/// step decay, then evaluates on `test`.
pub fn finetune(
    cfg: &FinetuneConfig,
    train: &Dataset,
    test: &Dataset,
    init: Option<&ParamStore>,
    exec: Execution,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    train.require_labels()?;
    test.require_labels()?;
    if train.is_empty() {
        return Err(Error::invalid("fine-tuning needs at least one training sequence"));
    }
    let classes = train.num_classes.max(test.num_classes);
    if let Some(c) = cfg.model.num_classes {
        if c < classes {
            return Err(Error::invalid(format!("num_classes {c} below the {classes} classes in the data")));
        }
    }
    let model = Masa::new(ModelConfig {
        num_classes: Some(cfg.model.num_classes.unwrap_or(classes)),
        ..cfg.model.clone()
    })?;
    let mut params = model.init_params(cfg.seed)?;
    if let Some(init) = init {
        load_backbone(&mut params, init)?;
    }
    model.init_classifier(&mut params, cfg.seed)?;
    // the decoder and projection heads play no part in classification
    params = params.subset(&["embed.", "encoder.", "classifier."]);

    let mut state = OptimState::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = finetune_lr(epoch, cfg.base_lr, cfg.lr_step, cfg.lr_factor);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let results: Vec<(Gradients, f64)> = map_collect(exec, chunk, |_, &i| {
                let seq = &train.sequences[i];
                let mut rng = rng_for(cfg.seed, &[SAMPLE_STREAM, epoch as u64, i as u64, hash_str(seq.id())]);
                let idx = segment_indices(seq.frames(), cfg.frames, SampleMode::Random, Some(&mut rng))?;
                let mut g = Graph::new();
                let logits = logits_for(&model, &params, &mut g, seq, &idx)?;
                let loss = g.cross_entropy(logits, seq.label().expect("checked"))?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Numerical(format!("epoch {epoch} sample `{}`: loss {value}", seq.id())));
                }
                g.backward(loss)?;
                Ok((g.param_grads(), value))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let n = results.len() as f64;
            params.zero_grad();
            for (grads, loss) in &results {
                params.accumulate_grads(grads, 1.0 / n)?;
                loss_sum += loss;
            }
            sgd_momentum_step(&mut params, &mut state, lr, cfg.momentum)?;
        }
        log.push(FinetuneRow {
            epoch,
            loss: loss_sum / train.len() as f64,
            lr,
        });
    }
    let metrics = evaluate(&model, &params, test, cfg.frames, exec)?;
    Ok(FinetuneOutcome {
        params,
        model,
        log,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::gen_synthetic;

    fn cfg() -> FinetuneConfig {
        FinetuneConfig {
            epochs: 2,
            frames: 8,
            model: ModelConfig::tiny(),
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn trains_and_reports() {
        let data = gen_synthetic(3, 2, 10, 0).unwrap();
        let out = finetune(&cfg(), &data, &data, None, Execution::Sequential).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.metrics.count, 6);
        assert!(out.params.paths().all(|p| !p.starts_with("decoder.")));
    }

    #[test]
    fn backbone_shapes_must_match() {
        let data = gen_synthetic(2, 1, 10, 0).unwrap();
        let other = Masa::new(ModelConfig {
            d_e: 24,
            ..ModelConfig::tiny()
        })
        .unwrap()
        .init_params(0)
        .unwrap();
        let err = finetune(&cfg(), &data, &data, Some(&other), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn unlabeled_data_rejected() {
        let data = gen_synthetic(2, 1, 10, 0).unwrap();
        let seq = data.sequences[0].clone();
        let bare = PoseSequence::new("u", None, seq.coords().to_vec(), seq.conf().to_vec()).unwrap();
        let unlabeled = Dataset::from_sequences(vec![bare], crate::posedata::Split::Train);
        assert!(finetune(&cfg(), &unlabeled, &data, None, Execution::Sequential).is_err());
    }
}
