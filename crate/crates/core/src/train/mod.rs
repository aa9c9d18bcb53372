//! Mini-batch training with periodic evaluation.

mod curve;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use curve::{CurvePoint, LearningCurve, CURVE_HEADER};

use crate::checkpoint::{Checkpoint, RngState};
use crate::data::{minibatch_iter, Dataset, MiniBatches};
use crate::error::{Error, Result};
use crate::kernels::softmax_cross_entropy;
use crate::model::ModelGraph;
use crate::optim::{find_non_finite, sgd_momentum_step, OptimizerState};
use crate::tensor::Tensor;

/// Stream of the ChaCha generator reserved for dropout masks; mini-batch
/// shuffles use streams numbered by dataset pass.
const DROPOUT_STREAM: u64 = u64::MAX;
const EVAL_BATCH: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub eval_every: u64,
    /// Iterations that make up one reported epoch.
    pub iterations_per_epoch: u64,
    pub dropout_conv_keep: f32,
    pub dropout_fc_keep: f32,
    pub seed: u64,
    /// Abort as soon as a parameter turns non-finite after an update.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 100,
            max_iterations: 10_000,
            eval_every: 1_000,
            iterations_per_epoch: 1_000,
            dropout_conv_keep: 1.0,
            dropout_fc_keep: 1.0,
            seed: 0,
            check_finite: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 || (self.max_iterations > 0 && self.eval_every > self.max_iterations) {
            return fail(format!(
                "eval_every must lie in 1..=max_iterations ({}), got {}",
                self.max_iterations, self.eval_every
            ));
        }
        if self.iterations_per_epoch == 0 {
            return fail("iterations_per_epoch must be at least 1".into());
        }
        for (name, p) in [("dropout_conv_keep", self.dropout_conv_keep), ("dropout_fc_keep", self.dropout_fc_keep)] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("{name} must lie in (0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Fraction of `test` whose highest logit (lowest class index on ties)
/// matches the label. Dropout is never applied.
pub fn evaluate(model: &ModelGraph, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::config("cannot evaluate on an empty test set"));
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < test.len() {
        let end = (start + EVAL_BATCH).min(test.len());
        let logits = model.predict(&test.images.slice_outer(start, end)?)?;
        let k = logits.dim(1);
        for (row, &label) in logits.data().chunks_exact(k).zip(&test.labels[start..end]) {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean loss of `model` on one batch, without dropout or updates.
pub fn batch_loss(model: &ModelGraph, images: &Tensor, labels: &[usize]) -> Result<f32> {
    let logits = model.predict(images)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// One forward/backward/update on a batch; returns the pre-update loss.
pub fn train_step(
    model: &mut ModelGraph,
    images: &Tensor,
    labels: &[usize],
    state: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<f32> {
    let (logits, tape) = model.forward_train(images, rng)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    let (grads, _) = model.backward(&tape, &grad)?;
    sgd_momentum_step(&mut model.params, &grads, state)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub curve: LearningCurve,
    /// State after the final iteration.
    pub checkpoint: Checkpoint,
}

pub fn train(model: ModelGraph, train_set: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, test_set, config, |_, _| Ok(()))
}

/// Like [`train`], calling `on_eval` with a full checkpoint and the new
/// curve point at every evaluation (including the initial one).
///
/// A non-finite loss or parameter aborts with [`Error::Numeric`], whose
/// message names the iteration of the last checkpoint handed to `on_eval`.
pub fn train_with(
    model: ModelGraph,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    mut on_eval: impl FnMut(&Checkpoint, &CurvePoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.input_shape[..] != train_set.images.shape()[1..] {
        return Err(Error::config(format!(
            "model input {:?} does not match dataset images {:?}",
            model.input_shape,
            &train_set.images.shape()[1..]
        )));
    }
    if config.batch_size > train_set.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training images",
            config.batch_size,
            train_set.len()
        )));
    }
    let started = Instant::now();
    let mut model = model.with_dropout(config.dropout_conv_keep, config.dropout_fc_keep)?;
    let mut state = OptimizerState::new(&model.params, config.learning_rate, config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(DROPOUT_STREAM);
    let per_pass = (train_set.len() / config.batch_size) as u64;
    let mut curve = LearningCurve::default();

    let snapshot = |model: &ModelGraph, state: &OptimizerState, iteration: u64, rng: &ChaCha8Rng| Checkpoint {
        arch: model.arch.clone(),
        params: model.params.clone(),
        optimizer: state.clone(),
        iteration,
        rng: RngState::capture(rng),
    };

    let mut batches: Option<MiniBatches<'_>> = None;
    let mut next_batch = |iteration: u64| -> Result<(Tensor, Vec<usize>)> {
        let pass = iteration / per_pass;
        if iteration.is_multiple_of(per_pass) || batches.is_none() {
            let mut it = minibatch_iter(train_set, config.batch_size, config.seed, pass)?;
            for _ in 0..iteration % per_pass {
                it.next();
            }
            batches = Some(it);
        }
        Ok(batches.as_mut().and_then(Iterator::next).expect("pass holds per_pass batches"))
    };

    let (x0, y0) = minibatch_iter(train_set, config.batch_size, config.seed, 0)?
        .next()
        .expect("batch size checked");
    let initial_loss = batch_loss(&model, &x0, &y0)?;
    let first = CurvePoint {
        iteration: 0,
        epoch: 0.0,
        test_accuracy: evaluate(&model, test_set)?,
        train_loss: initial_loss as f64,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    on_eval(&snapshot(&model, &state, 0, &rng), &first)?;
    curve.push(first)?;
    let mut last_good = 0;

    let mut loss_sum = 0.0f64;
    let mut loss_count = 0u64;
    for iteration in 0..config.max_iterations {
        let (x, y) = next_batch(iteration)?;
        let loss = train_step(&mut model, &x, &y, &mut state, &mut rng).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!(
                "{msg} at iteration {iteration}; last good checkpoint at iteration {last_good}"
            )),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss} at iteration {iteration}; last good checkpoint at iteration {last_good}"
            )));
        }
        if config.check_finite {
            if let Some(name) = find_non_finite(&model.params) {
                return Err(Error::Numeric(format!(
                    "parameter {name} became non-finite at iteration {iteration}; \
                     last good checkpoint at iteration {last_good}"
                )));
            }
        }
        loss_sum += loss as f64;
        loss_count += 1;

        let done = iteration + 1;
        if done % config.eval_every == 0 {
            let point = CurvePoint {
                iteration: done,
                epoch: done as f64 / config.iterations_per_epoch as f64,
                test_accuracy: evaluate(&model, test_set)?,
                train_loss: loss_sum / loss_count as f64,
                wall_clock_s: started.elapsed().as_secs_f64(),
            };
            on_eval(&snapshot(&model, &state, done, &rng), &point)?;
            curve.push(point)?;
            last_good = done;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }

    let checkpoint = snapshot(&model, &state, config.max_iterations, &rng);
    Ok(TrainOutcome { model, curve, checkpoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_blobs, SyntheticSpec};
    use crate::model::Layer;
    use crate::zoo::{build_shallow_cifar, init_random, Architecture};

    fn tiny_data() -> (Dataset, Dataset) {
        synthetic_blobs(&SyntheticSpec { train_per_class: 4, test_per_class: 2, ..Default::default() }).unwrap()
    }

    fn constant_model() -> ModelGraph {
        // every weight zero: all logits equal the (zero) bias
        ModelGraph::new(
            Architecture::Custom("const".into()),
            vec![3, 32, 32],
            vec![Layer::Flatten, Layer::Dense { name: "fc".into(), inputs: 3072, outputs: 10 }],
        )
        .unwrap()
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let (_, test) = tiny_data();
        assert_eq!(evaluate(&constant_model(), &test).unwrap(), 0.1);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn zero_iterations_yield_initial_point_only() {
        let (train_set, test) = tiny_data();
        let cfg = TrainConfig { max_iterations: 0, batch_size: 10, eval_every: 1, ..Default::default() };
        let model = init_random(build_shallow_cifar(2).unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        let out = train(model.clone(), &train_set, &test, &cfg).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve.points[0].iteration, 0);
        assert_eq!(out.model.params, model.params);
    }

    #[test]
    fn evaluation_does_not_mutate() {
        let (_, test) = tiny_data();
        let model = init_random(build_shallow_cifar(2).unwrap(), &mut ChaCha8Rng::seed_from_u64(1));
        let before = model.clone();
        evaluate(&model, &test).unwrap();
        assert!(before.params.iter().all(|(n, t)| t.bitwise_eq(&model.params[n])));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { eval_every: 20_000, ..Default::default() },
            TrainConfig { dropout_fc_keep: 0.0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn divergence_aborts_with_numeric_error() {
        let (train_set, test) = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            max_iterations: 20,
            eval_every: 5,
            batch_size: 10,
            ..Default::default()
        };
        let model = init_random(build_shallow_cifar(2).unwrap(), &mut ChaCha8Rng::seed_from_u64(2));
        let err = train(model, &train_set, &test, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        assert!(err.to_string().contains("last good checkpoint"), "{err}");
    }
}
