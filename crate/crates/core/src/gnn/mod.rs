//! Message-passing property predictor.
//!
//! Three GraphConv layers compute `h' = ReLU(W_self·h + W_neigh·Σ_{u∈N(v)} h_u + b)`.
//! Each layer's node states are pooled into `[max; mean]`, and the pooled
//! vectors are summed across layers to give the molecule embedding. A
//! feed-forward head with dropout maps the embedding to class logits
//! (softmax) or a scalar.

mod checkpoint;
mod train;

use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, Task};
use crate::molgraph::{free_valence, Element, Molecule};
use crate::tensor::{gradient_check, softmax_rows, Matrix, Segments, Tape, Var};

pub use checkpoint::{CheckpointError, CHECKPOINT_SCHEMA};
pub use train::{evaluate, train_predictor, EpochMetrics, EvalMetrics, TrainConfig, TrainOutcome};

/// Width of the per-atom feature vector: one-hot element, degree, sum of
/// bond orders, free valence.
pub const NODE_FEATURES: usize = Element::ALL.len() + 3;

pub const DEFAULT_HEAD: [usize; 3] = [128, 64, 32];
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error("cannot run the predictor on an empty molecule")]
    EmptyMolecule,
    #[error("readout over an empty graph")]
    EmptyGraph,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("labels do not match the task: {0}")]
    LabelTaskMismatch(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}

/// Node-feature matrix (`atoms × NODE_FEATURES`).
pub fn node_features(m: &Molecule) -> Matrix {
    let mut x = Matrix::zeros(m.atom_count(), NODE_FEATURES);
    for atom in m.atoms() {
        let row = x.row_mut(atom.index);
        row[atom.element.ordinal()] = 1.0;
        let base = Element::ALL.len();
        row[base] = m.degree(atom.index) as f64;
        row[base + 1] = f64::from(m.bond_order_sum(atom.index));
        row[base + 2] = f64::from(free_valence(m, atom.index).expect("atom in range"));
    }
    x
}

/// Several molecules packed as one disjoint graph.
pub struct GraphBatch {
    features: Matrix,
    neighbors: Rc<Vec<Vec<usize>>>,
    segments: Rc<Segments>,
}

impl GraphBatch {
    pub fn new(molecules: &[&Molecule]) -> Result<Self, GnnError> {
        if molecules.is_empty() {
            return Err(GnnError::EmptyGraph);
        }
        let total: usize = molecules.iter().map(|m| m.atom_count()).sum();
        let mut features = Matrix::zeros(total, NODE_FEATURES);
        let mut neighbors = Vec::with_capacity(total);
        let mut offsets = vec![0];
        let mut base = 0;
        for m in molecules {
            if m.is_empty() {
                return Err(GnnError::EmptyMolecule);
            }
            let x = node_features(m);
            for r in 0..m.atom_count() {
                features.row_mut(base + r).copy_from_slice(x.row(r));
                neighbors.push(m.neighbors(r).iter().map(|&(u, _)| base + u).collect());
            }
            base += m.atom_count();
            offsets.push(base);
        }
        Ok(GraphBatch {
            features,
            neighbors: Rc::new(neighbors),
            segments: Rc::new(Segments::new(offsets)),
        })
    }

    pub fn graph_count(&self) -> usize {
        self.segments.count()
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: Matrix::glorot(inputs, outputs, rng),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn apply(tape: &mut Tape<'_>, x: Var, weight: Var, bias: Var) -> Var {
        let y = tape.matmul(x, weight);
        tape.add_row(y, bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConvLayer {
    pub w_self: Matrix,
    pub w_neigh: Matrix,
    pub bias: Matrix,
}

impl GraphConvLayer {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        GraphConvLayer {
            w_self: Matrix::glorot(inputs, outputs, rng),
            w_neigh: Matrix::glorot(inputs, outputs, rng),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_self.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w_self.cols()
    }

    fn apply(
        tape: &mut Tape<'_>,
        h: Var,
        neighbors: &Rc<Vec<Vec<usize>>>,
        params: [Var; 3],
    ) -> Var {
        let own = tape.matmul(h, params[0]);
        let summed = tape.neighbor_sum(h, neighbors.clone());
        let from_neighbors = tape.matmul(summed, params[1]);
        let pre = tape.add(own, from_neighbors);
        let pre = tape.add_row(pre, params[2]);
        tape.relu(pre)
    }
}

/// One GraphConv update of node states `h` over the bonds of `m`.
pub fn conv_forward(layer: &GraphConvLayer, m: &Molecule, h: &Matrix) -> Result<Matrix, GnnError> {
    if h.rows() != m.atom_count() {
        return Err(GnnError::DimensionMismatch(format!(
            "{} state rows for {} atoms",
            h.rows(),
            m.atom_count()
        )));
    }
    if h.cols() != layer.inputs() {
        return Err(GnnError::DimensionMismatch(format!(
            "state width {} for layer input {}",
            h.cols(),
            layer.inputs()
        )));
    }
    let neighbors: Rc<Vec<Vec<usize>>> = Rc::new(
        (0..m.atom_count())
            .map(|v| m.neighbors(v).iter().map(|&(u, _)| u).collect())
            .collect(),
    );
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let params = [
        tape.param(&layer.w_self),
        tape.param(&layer.w_neigh),
        tape.param(&layer.bias),
    ];
    let out = GraphConvLayer::apply(&mut tape, hv, &neighbors, params);
    Ok(tape.value(out).clone())
}

/// Molecule-level vector fed to the prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn pool_layers(tape: &mut Tape<'_>, states: &[Var], segments: &Rc<Segments>) -> Var {
    let mut total: Option<Var> = None;
    for &h in states {
        let mx = tape.segment_max(h, segments);
        let mn = tape.segment_mean(h, segments.clone());
        let r = tape.concat_cols(mx, mn);
        total = Some(match total {
            Some(t) => tape.add(t, r),
            None => r,
        });
    }
    total.expect("at least one layer")
}

/// Sum over layers of `[max over nodes; mean over nodes]`.
pub fn readout(per_layer_states: &[Matrix]) -> Result<Embedding, GnnError> {
    let first = per_layer_states.first().ok_or(GnnError::EmptyGraph)?;
    if first.rows() == 0 {
        return Err(GnnError::EmptyGraph);
    }
    if per_layer_states.iter().any(|h| h.shape() != first.shape()) {
        return Err(GnnError::DimensionMismatch(
            "layer states differ in shape".into(),
        ));
    }
    let segments = Rc::new(Segments::single(first.rows()));
    let mut tape = Tape::new();
    let states: Vec<Var> = per_layer_states
        .iter()
        .map(|h| tape.constant(h.clone()))
        .collect();
    let out = pool_layers(&mut tape, &states, &segments);
    Ok(Embedding(tape.value(out).data().to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class {
        class: usize,
        probabilities: Vec<f64>,
    },
    Value {
        value: f64,
    },
}

impl Prediction {
    fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let class = argmax(&probabilities);
        Prediction::Class {
            class,
            probabilities,
        }
    }

    /// Predicted class, or `None` for a regression output.
    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Class { class, .. } => Some(*class),
            Prediction::Value { .. } => None,
        }
    }

    pub fn probability(&self, class: usize) -> Option<f64> {
        match self {
            Prediction::Class { probabilities, .. } => probabilities.get(class).copied(),
            Prediction::Value { .. } => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Prediction::Value { value } => Some(*value),
            Prediction::Class { .. } => None,
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct ForwardPass {
    pub embedding: Var,
    pub output: Var,
}

/// The trained (or freshly initialised) property predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    task: Task,
    hidden_size: usize,
    dropout: f64,
    convs: Vec<GraphConvLayer>,
    head: Vec<Dense>,
}

impl PredictorModel {
    /// Three GraphConv layers of width `hidden_size`, then a head with the
    /// given hidden widths and one output per class (or a single output for
    /// regression).
    pub fn new(
        task: Task,
        hidden_size: usize,
        head_sizes: &[usize],
        dropout: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut width = NODE_FEATURES;
        for _ in 0..3 {
            convs.push(GraphConvLayer::new(width, hidden_size, &mut rng));
            width = hidden_size;
        }
        let mut head = Vec::new();
        let mut width = 2 * hidden_size;
        for &h in head_sizes {
            head.push(Dense::new(width, h, &mut rng));
            width = h;
        }
        head.push(Dense::new(width, task.output_width(), &mut rng));
        PredictorModel {
            task,
            hidden_size,
            dropout,
            convs,
            head,
        }
    }

    pub(crate) fn from_parts(
        task: Task,
        hidden_size: usize,
        dropout: f64,
        convs: Vec<GraphConvLayer>,
        head: Vec<Dense>,
    ) -> Result<Self, GnnError> {
        let mismatch = |what: &str| Err(GnnError::DimensionMismatch(what.to_string()));
        if convs.is_empty() || head.is_empty() {
            return mismatch("model needs conv layers and a head");
        }
        let mut width = NODE_FEATURES;
        for c in &convs {
            if c.inputs() != width
                || c.outputs() != hidden_size
                || c.w_neigh.shape() != c.w_self.shape()
                || c.bias.shape() != (1, hidden_size)
            {
                return mismatch("conv layer shapes do not chain");
            }
            width = hidden_size;
        }
        let mut width = 2 * hidden_size;
        for d in &head {
            if d.inputs() != width || d.bias.shape() != (1, d.outputs()) {
                return mismatch("head layer shapes do not chain");
            }
            width = d.outputs();
        }
        if width != task.output_width() {
            return mismatch("head output does not match the task");
        }
        Ok(PredictorModel {
            task,
            hidden_size,
            dropout,
            convs,
            head,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn conv_layers(&self) -> &[GraphConvLayer] {
        &self.convs
    }

    pub fn head_layers(&self) -> &[Dense] {
        &self.head
    }

    pub fn embedding_width(&self) -> usize {
        2 * self.hidden_size
    }

    /// Parameters in a fixed order: per conv layer (`w_self`, `w_neigh`,
    /// `bias`), then per head layer (`weight`, `bias`).
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([&c.w_self, &c.w_neigh, &c.bias]);
        }
        for d in &self.head {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend([&mut c.w_self, &mut c.w_neigh, &mut c.bias]);
        }
        for d in &mut self.head {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }

    /// Forward pass over `params` (ordered as [`Self::parameters`]). Dropout
    /// is applied only when `dropout_rng` is given.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        batch: &GraphBatch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> ForwardPass {
        let mut h = tape.constant(batch.features.clone());
        let mut states = Vec::with_capacity(self.convs.len());
        for k in 0..self.convs.len() {
            let p = [params[3 * k], params[3 * k + 1], params[3 * k + 2]];
            h = GraphConvLayer::apply(tape, h, &batch.neighbors, p);
            states.push(h);
        }
        let embedding = pool_layers(tape, &states, &batch.segments);
        let base = 3 * self.convs.len();
        let mut x = embedding;
        let last = self.head.len() - 1;
        for k in 0..self.head.len() {
            x = Dense::apply(tape, x, params[base + 2 * k], params[base + 2 * k + 1]);
            if k < last {
                x = tape.relu(x);
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        let keep = 1.0 - self.dropout;
                        let (r, c) = tape.value(x).shape();
                        let mask = Matrix::from_vec(
                            r,
                            c,
                            (0..r * c)
                                .map(|_| {
                                    if rng.gen::<f64>() < keep {
                                        1.0 / keep
                                    } else {
                                        0.0
                                    }
                                })
                                .collect(),
                        );
                        x = tape.mask(x, mask);
                    }
                }
            }
        }
        ForwardPass {
            embedding,
            output: x,
        }
    }

    pub(crate) fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.param(p))
            .collect()
    }

    pub(crate) fn loss(
        &self,
        tape: &mut Tape<'_>,
        output: Var,
        labels: &[Label],
    ) -> Result<Var, GnnError> {
        match self.task {
            Task::Classification { n_classes } => {
                let classes = labels
                    .iter()
                    .map(|l| match l {
                        Label::Class(c) if *c < n_classes => Ok(*c),
                        other => Err(GnnError::LabelTaskMismatch(format!(
                            "{other:?} for {n_classes}-class task"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(tape.softmax_cross_entropy(output, &classes))
            }
            Task::Regression => {
                let values = labels
                    .iter()
                    .map(|l| match l {
                        Label::Value(v) => Ok(*v),
                        other => Err(GnnError::LabelTaskMismatch(format!(
                            "{other:?} for regression task"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(tape.mean_squared_error(output, &values))
            }
        }
    }

    fn outputs_to_predictions(&self, output: &Matrix) -> Vec<Prediction> {
        match self.task {
            Task::Classification { .. } => {
                let probs = softmax_rows(output);
                (0..probs.rows())
                    .map(|r| Prediction::from_probabilities(probs.row(r).to_vec()))
                    .collect()
            }
            Task::Regression => (0..output.rows())
                .map(|r| Prediction::Value {
                    value: output.get(r, 0),
                })
                .collect(),
        }
    }

    /// Evaluation-mode predictions and embeddings for a batch of molecules.
    pub fn predict_and_embed_batch(
        &self,
        molecules: &[&Molecule],
    ) -> Result<Vec<(Prediction, Embedding)>, GnnError> {
        let batch = GraphBatch::new(molecules)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let pass = self.forward(&mut tape, &params, &batch, None);
        let preds = self.outputs_to_predictions(tape.value(pass.output));
        let emb = tape.value(pass.embedding);
        Ok(preds
            .into_iter()
            .enumerate()
            .map(|(r, p)| (p, Embedding(emb.row(r).to_vec())))
            .collect())
    }

    pub fn predict_batch(&self, molecules: &[&Molecule]) -> Result<Vec<Prediction>, GnnError> {
        Ok(self
            .predict_and_embed_batch(molecules)?
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    }

    pub fn predict(&self, m: &Molecule) -> Result<Prediction, GnnError> {
        Ok(self.predict_and_embed(m)?.0)
    }

    pub fn embed(&self, m: &Molecule) -> Result<Embedding, GnnError> {
        Ok(self.predict_and_embed(m)?.1)
    }

    pub fn predict_and_embed(&self, m: &Molecule) -> Result<(Prediction, Embedding), GnnError> {
        let mut out = self.predict_and_embed_batch(&[m])?;
        Ok(out.pop().expect("one molecule in, one result out"))
    }

    /// Evaluation-mode loss of this model on one labelled molecule.
    pub fn loss_on(&self, m: &Molecule, label: &Label) -> Result<f64, GnnError> {
        let batch = GraphBatch::new(&[m])?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let pass = self.forward(&mut tape, &params, &batch, None);
        let loss = self.loss(&mut tape, pass.output, std::slice::from_ref(label))?;
        Ok(tape.value(loss).get(0, 0))
    }
}

/// Largest relative disagreement between the backpropagated gradient of the
/// loss on `(m, label)` and central finite differences with step `1e-4`,
/// across every model parameter. Runs in evaluation mode (no dropout).
pub fn grad_check(model: &PredictorModel, m: &Molecule, label: &Label) -> Result<f64, GnnError> {
    let batch = GraphBatch::new(&[m])?;
    // validate the label once outside the closure
    model.loss_on(m, label)?;
    let params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
    let labels = [label.clone()];
    Ok(gradient_check(&params, 1e-4, |tape, vars| {
        let pass = model.forward(tape, vars, &batch, None);
        model
            .loss(tape, pass.output, &labels)
            .expect("label validated above")
    }))
}
