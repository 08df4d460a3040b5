use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GnnError, GraphBatch, PredictorModel, DEFAULT_DROPOUT, DEFAULT_HEAD};
use crate::data::{Dataset, Label, Task};
use crate::molgraph::Molecule;
use crate::optim::Adam;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub head_sizes: Vec<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation score.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Settings used for the toxicity classification benchmark.
    pub fn tox21() -> Self {
        TrainConfig {
            hidden_size: 256,
            head_sizes: DEFAULT_HEAD.to_vec(),
            dropout: DEFAULT_DROPOUT,
            batch_size: 20,
            learning_rate: 1e-3,
            epochs: 200,
            patience: 30,
            seed: 0,
        }
    }

    /// Settings used for the solubility regression benchmark.
    pub fn esol() -> Self {
        TrainConfig {
            hidden_size: 32,
            learning_rate: 5e-4,
            ..Self::tox21()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { .. } => Self::tox21(),
            Task::Regression => Self::esol(),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::tox21()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Accuracy for classification, mean squared error for regression.
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: PredictorModel,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

const EVAL_CHUNK: usize = 256;

/// Evaluation-mode loss and metric over a whole dataset.
pub fn evaluate(model: &PredictorModel, data: &Dataset) -> Result<EvalMetrics, GnnError> {
    if data.is_empty() {
        return Err(GnnError::EmptyDataset("evaluation set"));
    }
    check_task(model.task(), data)?;
    let mut loss_sum = 0.0;
    let mut metric_sum = 0.0;
    for chunk in data.records().chunks(EVAL_CHUNK) {
        let mols: Vec<&Molecule> = chunk.iter().map(|r| &r.molecule).collect();
        let labels: Vec<Label> = chunk.iter().map(|r| r.label.clone()).collect();
        let batch = GraphBatch::new(&mols)?;
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let pass = model.forward(&mut tape, &params, &batch, None);
        let loss = model.loss(&mut tape, pass.output, &labels)?;
        loss_sum += tape.value(loss).get(0, 0) * chunk.len() as f64;
        let preds = model.outputs_to_predictions(tape.value(pass.output));
        for (p, l) in preds.iter().zip(&labels) {
            metric_sum += match l {
                Label::Class(c) => f64::from(u8::from(p.class() == Some(*c))),
                Label::Value(v) => (p.value().unwrap_or(f64::NAN) - v).powi(2),
            };
        }
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        loss: loss_sum / n,
        metric: metric_sum / n,
    })
}

fn check_task(task: Task, data: &Dataset) -> Result<(), GnnError> {
    if data.task() != task {
        return Err(GnnError::LabelTaskMismatch(format!(
            "dataset task {:?}, model task {:?}",
            data.task(),
            task
        )));
    }
    Ok(())
}

fn improves(task: Task, candidate: &EvalMetrics, best: &EvalMetrics) -> bool {
    match task {
        Task::Classification { .. } => {
            candidate.metric > best.metric
                || (candidate.metric == best.metric && candidate.loss < best.loss)
        }
        Task::Regression => candidate.metric < best.metric,
    }
}

/// Mini-batch Adam training with early stopping on the validation split.
pub fn train_predictor(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, GnnError> {
    if train.is_empty() {
        return Err(GnnError::EmptyDataset("training set"));
    }
    if val.is_empty() {
        return Err(GnnError::EmptyDataset("validation set"));
    }
    let task = train.task();
    check_task(task, val)?;
    for r in train.records().iter().chain(val.records()) {
        if !r.label.fits(task) {
            return Err(GnnError::LabelTaskMismatch(format!(
                "{:?} for {:?} ({})",
                r.label, task, r.smiles
            )));
        }
        if r.molecule.is_empty() {
            return Err(GnnError::EmptyMolecule);
        }
    }

    let mut model = PredictorModel::new(
        task,
        config.hidden_size,
        &config.head_sizes,
        config.dropout,
        config.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = config.batch_size.max(1);

    let mut best = (model.clone(), 0, evaluate(&model, val)?);
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let mols: Vec<&Molecule> = chunk
                .iter()
                .map(|&i| &train.records()[i].molecule)
                .collect();
            let labels: Vec<Label> = chunk
                .iter()
                .map(|&i| train.records()[i].label.clone())
                .collect();
            let batch = GraphBatch::new(&mols)?;
            let grads = {
                let mut tape = Tape::new();
                let params = model.bind(&mut tape);
                let pass = model.forward(&mut tape, &params, &batch, Some(&mut rng));
                let loss = model.loss(&mut tape, pass.output, &labels)?;
                let value = tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(GnnError::NonFiniteLoss { epoch });
                }
                loss_sum += value * chunk.len() as f64;
                let mut g = tape.backward(loss);
                params
                    .iter()
                    .zip(model.parameters())
                    .map(|(&v, p)| g.take_or_zeros(v, p.shape()))
                    .collect::<Vec<_>>()
            };
            adam.step(&mut model.parameters_mut(), &grads);
        }
        if !model.is_finite() {
            return Err(GnnError::NonFiniteLoss { epoch });
        }
        let eval = evaluate(&model, val)?;
        if !eval.loss.is_finite() {
            return Err(GnnError::NonFiniteLoss { epoch });
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: eval.loss,
            val_metric: eval.metric,
        });
        if improves(task, &eval, &best.2) {
            best = (model.clone(), epoch, eval);
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        history,
    })
}
