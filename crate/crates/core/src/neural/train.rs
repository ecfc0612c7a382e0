use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::network::{backward, bce_loss, forward, predict};
use super::params::{ModelParams, ModelShape, DEFAULT_HIDDEN, DEFAULT_PROJECTION};
use super::{Ablation, Real};
use crate::aggregate::{Call, CallSource};
use crate::corpus::{Answer, Dataset, Split};
use crate::encode::{SparseVector, TextEncoder};
use crate::error::{Error, Result};
use crate::windowing::{select_window, ForecastWindow, WindowMode};

/// Text vectors shared by the instances that reference them.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    dim: usize,
    vectors: Vec<SparseVector>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            vectors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, v: SparseVector) -> usize {
        self.vectors.push(v);
        self.vectors.len() - 1
    }

    pub fn get(&self, index: usize) -> &SparseVector {
        &self.vectors[index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub current: bool,
    pub prediction: f32,
    /// Index into the [`FeatureStore`]; `None` when justifications are off.
    pub justification: Option<usize>,
}

/// One (question, day) pair: the window as model input plus the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub question_id: String,
    pub day: u32,
    pub question: Option<usize>,
    pub steps: Vec<Step>,
    pub label: f32,
}

struct InstanceBuilder<'a> {
    dataset: &'a Dataset,
    encoder: &'a TextEncoder,
    ablation: Ablation,
    newest_first: bool,
    keys: Option<Vec<String>>,
    encoded: HashMap<usize, usize>,
}

impl<'a> InstanceBuilder<'a> {
    fn new(dataset: &'a Dataset, encoder: &'a TextEncoder, ablation: Ablation, newest_first: bool) -> Self {
        let keys = matches!(encoder, TextEncoder::External(_)).then(|| dataset.forecast_keys());
        InstanceBuilder {
            dataset,
            encoder,
            ablation,
            newest_first,
            keys,
            encoded: HashMap::new(),
        }
    }

    fn question(&self, id: &str, store: &mut FeatureStore) -> Result<Option<usize>> {
        if !self.ablation.use_question {
            return Ok(None);
        }
        let q = self
            .dataset
            .question(id)
            .ok_or_else(|| Error::UnknownQuestion(id.to_string()))?;
        Ok(Some(store.push(self.encoder.question(q)?)))
    }

    fn instance(
        &mut self,
        window: &ForecastWindow,
        question: Option<usize>,
        label: f32,
        store: &mut FeatureStore,
    ) -> Result<Instance> {
        let mut steps = Vec::with_capacity(window.len());
        for e in &window.entries {
            let justification = if self.ablation.use_justification {
                Some(match self.encoded.get(&e.record) {
                    Some(&i) => i,
                    None => {
                        let key = match &self.keys {
                            Some(keys) => keys[e.record].clone(),
                            None => self.dataset.forecast_key(e.record),
                        };
                        let v = self.encoder.forecast(self.dataset, e.record, &key)?;
                        let i = store.push(v);
                        self.encoded.insert(e.record, i);
                        i
                    }
                })
            } else {
                None
            };
            steps.push(Step {
                current: e.current,
                prediction: e.prediction as f32,
                justification,
            });
        }
        if self.newest_first {
            steps.reverse();
        }
        Ok(Instance {
            question_id: window.question_id.clone(),
            day: window.day,
            question,
            steps,
            label,
        })
    }
}

/// Instances for every day of every listed question whose window is not
/// empty, in question order then day order.
pub fn build_instances(
    dataset: &Dataset,
    question_ids: &[String],
    mode: WindowMode,
    encoder: &TextEncoder,
    ablation: Ablation,
    newest_first: bool,
    store: &mut FeatureStore,
) -> Result<Vec<Instance>> {
    let mut builder = InstanceBuilder::new(dataset, encoder, ablation, newest_first);
    let mut out = Vec::new();
    for id in question_ids {
        let q = dataset
            .question(id)
            .ok_or_else(|| Error::UnknownQuestion(id.clone()))?;
        let label = q.answer.label() as f32;
        let qv = builder.question(id, store)?;
        for day in 0..q.life() {
            let window = select_window(dataset, id, i64::from(day), mode)?;
            if window.is_empty() {
                continue;
            }
            out.push(builder.instance(&window, qv, label, store)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub mode: WindowMode,
    pub proj_dim: usize,
    pub hidden: usize,
    /// Feed each window newest forecast first instead of oldest first.
    pub newest_first: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            patience: 3,
            dropout: 0.5,
            max_epochs: 100,
            seed: 0,
            ablation: Ablation::FULL,
            mode: WindowMode::default(),
            proj_dim: DEFAULT_PROJECTION,
            hidden: DEFAULT_HIDDEN,
            newest_first: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and max epochs must be positive");
        }
        if self.proj_dim == 0 || self.hidden == 0 {
            return bad("layer sizes must be positive");
        }
        self.mode.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best validation loss and signals a stop after `patience`
/// epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if !(loss < best) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_instances: usize,
    pub val_instances: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub epochs: Vec<EpochLog>,
}

/// Mean loss over `batch`, writing the gradient of that mean into `grads`.
pub fn batch_gradient<T: Real>(
    params: &ModelParams<T>,
    store: &FeatureStore,
    batch: &[&Instance],
    mut dropout: Option<(&mut dyn RngCore, f64)>,
    grads: &mut ModelParams<T>,
) -> Result<f64> {
    grads.fill_zero();
    let weight = T::of(1.0 / batch.len() as f64);
    let mut loss = 0.0;
    for inst in batch {
        let drop = dropout.as_mut().map(|(rng, rate)| (&mut **rng as &mut dyn RngCore, *rate));
        let trace = forward(params, store, inst, drop)?;
        loss += bce_loss(trace.prob.as_f64(), f64::from(inst.label));
        backward(params, store, inst, &trace, weight, grads);
    }
    Ok(loss / batch.len() as f64)
}

/// Mean loss and call accuracy with dropout off.
pub fn evaluate_instances<T: Real>(
    params: &ModelParams<T>,
    store: &FeatureStore,
    instances: &[Instance],
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for inst in instances {
        let p = predict(params, store, inst)?;
        loss += bce_loss(p, f64::from(inst.label));
        if (p > 0.5) == (inst.label > 0.5) {
            correct += 1;
        }
    }
    let n = instances.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains on the split's training questions, selecting the epoch with the
/// lowest validation loss.
pub fn train(
    dataset: &Dataset,
    split: &Split,
    encoder: &TextEncoder,
    config: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainLog)> {
    config.validate()?;
    let shape = ModelShape {
        input_dim: encoder.dim(),
        proj_dim: config.proj_dim,
        hidden: config.hidden,
        ablation: config.ablation,
    };
    let mut store = FeatureStore::new(encoder.dim());
    let build = |ids: &[String], store: &mut FeatureStore| {
        build_instances(dataset, ids, config.mode, encoder, config.ablation, config.newest_first, store)
    };
    let train_set = build(&split.train, &mut store)?;
    let val_set = build(&split.validation, &mut store)?;
    if train_set.is_empty() {
        return Err(Error::NoTrainingInstances);
    }
    if val_set.is_empty() {
        return Err(Error::InvalidConfig("validation questions have no forecasts to call".into()));
    }

    let mut params = ModelParams::<f32>::init(shape, &mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut grads = ModelParams::zeros(shape);
    let mut best = params.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog {
        train_instances: train_set.len(),
        val_instances: val_set.len(),
        best_epoch: 0,
        stopped_early: false,
        epochs: Vec::new(),
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = batch_gradient(&params, &store, &batch, Some((&mut rng, config.dropout)), &mut grads)?;
            adam.step(&mut params, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_accuracy) = evaluate_instances(&params, &store, &val_set)?;
        let decision = stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best.clone_from(&params);
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy,
            improved: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            log.stopped_early = true;
            break;
        }
    }
    log.best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok((best, log))
}

/// A trained model calling questions one window at a time.
pub struct NeuralAggregator {
    pub params: ModelParams<f32>,
    pub encoder: TextEncoder,
    pub newest_first: bool,
}

impl NeuralAggregator {
    pub fn probability(&self, dataset: &Dataset, window: &ForecastWindow) -> Result<f64> {
        if window.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let question = dataset
            .question(&window.question_id)
            .ok_or_else(|| Error::UnknownQuestion(window.question_id.clone()))?;
        let mut store = FeatureStore::new(self.encoder.dim());
        let ablation = self.params.shape.ablation;
        let mut builder = InstanceBuilder::new(dataset, &self.encoder, ablation, self.newest_first);
        builder.keys = None;
        let qv = builder.question(&question.id, &mut store)?;
        let inst = builder.instance(window, qv, question.answer.label() as f32, &mut store)?;
        predict(&self.params, &store, &inst)
    }

    pub fn call(&self, dataset: &Dataset, window: &ForecastWindow) -> Result<Call> {
        let p = self.probability(dataset, window)?;
        Ok(Call {
            question_id: window.question_id.clone(),
            day: window.day,
            answer: Answer::from_bool(p > 0.5),
            score: p,
            source: CallSource::Model,
        })
    }
}
