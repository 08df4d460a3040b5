//! Q-network over molecule states, replay memory, and the double-DQN update.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RlError;
use crate::fingerprint::{Fingerprint, FingerprintConfig};
use crate::gnn::Dense;
use crate::molgraph::Molecule;
use crate::optim::Adam;
use crate::tensor::{Matrix, Tape, Var};

/// Q-network input for one state: fingerprint bits plus the fraction of the
/// episode's steps still remaining. Kept compact until a batch is built.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub fingerprint: Fingerprint,
    pub steps_fraction: f64,
}

impl StateFeatures {
    pub fn new(
        m: &Molecule,
        steps_remaining: usize,
        max_steps: usize,
        fp: FingerprintConfig,
    ) -> Result<Self, RlError> {
        Ok(StateFeatures {
            fingerprint: fp.fingerprint(m)?,
            steps_fraction: steps_remaining as f64 / max_steps.max(1) as f64,
        })
    }

    pub fn width(&self) -> usize {
        self.fingerprint.width() + 1
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = self.fingerprint.to_dense();
        v.push(self.steps_fraction);
        v
    }
}

/// Dense Q-network input: fingerprint bits as 0/1 followed by
/// `steps_remaining / max_steps`.
pub fn state_features(
    m: &Molecule,
    steps_remaining: usize,
    max_steps: usize,
    fp: FingerprintConfig,
) -> Result<Vec<f64>, RlError> {
    Ok(StateFeatures::new(m, steps_remaining, max_steps, fp)?.to_dense())
}

fn feature_matrix(rows: &[&StateFeatures]) -> Matrix {
    let width = rows.first().map_or(0, |f| f.width());
    let mut x = Matrix::zeros(rows.len(), width);
    for (r, f) in rows.iter().enumerate() {
        let row = x.row_mut(r);
        for b in f.fingerprint.ones() {
            row[b] = 1.0;
        }
        row[width - 1] = f.steps_fraction;
    }
    x
}

pub const DEFAULT_Q_HIDDEN: [usize; 3] = [1024, 512, 128];

/// Fully connected network with ReLU between layers and one linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

impl QNetwork {
    pub fn new(input_width: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = input_width;
        for &h in hidden.iter().chain([1].iter()) {
            layers.push(Dense::new(width, h, &mut rng));
            width = h;
        }
        QNetwork { layers }
    }

    /// Network from explicit layers; shapes must chain and end in width 1.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, RlError> {
        let bad = |msg: &str| Err(RlError::Config(format!("Q-network layers: {msg}")));
        if layers.is_empty() {
            return bad("no layers");
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return bad("widths do not chain");
            }
        }
        if layers.iter().any(|l| l.bias.shape() != (1, l.outputs())) {
            return bad("bias shape");
        }
        if layers.last().map(Dense::outputs) != Some(1) {
            return bad("output width must be 1");
        }
        Ok(QNetwork { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    fn forward_matrix(&self, x: &Matrix) -> Vec<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = h.matmul(&l.weight);
            for r in 0..y.rows() {
                for (v, b) in y.row_mut(r).iter_mut().zip(l.bias.row(0)) {
                    *v += b;
                    if k < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = y;
        }
        h.into_vec()
    }

    /// Q values of dense feature rows.
    pub fn q_values_dense(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        if rows.is_empty() {
            return Vec::new();
        }
        let x = Matrix::from_rows(rows);
        self.forward_matrix(&x)
    }

    pub fn q_values(&self, states: &[&StateFeatures]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        self.forward_matrix(&feature_matrix(states))
    }

    fn forward_tape(&self, tape: &mut Tape<'_>, params: &[Var], x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for k in 0..self.layers.len() {
            h = Dense::apply(tape, h, params[2 * k], params[2 * k + 1]);
            if k < last {
                h = tape.relu(h);
            }
        }
        h
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// One step of experience. `state` encodes the molecule the action led to;
/// `next` holds the encodings of every molecule reachable from there.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateFeatures,
    pub reward: f64,
    pub next: Vec<StateFeatures>,
    pub terminal: bool,
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Double-DQN regression target: the online network picks the best next
/// state, the target network values it. Terminal transitions, `γ = 0`, or an
/// empty successor set give the bare reward.
pub fn double_dqn_target(online: &QNetwork, target: &QNetwork, t: &Transition, gamma: f64) -> f64 {
    if t.terminal || gamma == 0.0 || t.next.is_empty() {
        return t.reward;
    }
    let next: Vec<&StateFeatures> = t.next.iter().collect();
    let pick = first_argmax(&online.q_values(&next));
    t.reward + gamma * target.q_values(&[next[pick]])[0]
}

/// One Adam step of the online network toward double-DQN targets; returns
/// the mean squared error before the update.
pub fn dqn_train_step(
    online: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    optimizer: &mut Adam,
) -> Result<f64, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| double_dqn_target(online, target, t, gamma))
        .collect();
    let states: Vec<&StateFeatures> = batch.iter().map(|t| &t.state).collect();
    let x = feature_matrix(&states);
    let (loss, grads) = {
        let mut tape = Tape::new();
        let params: Vec<Var> = online
            .layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .map(|p| tape.param(p))
            .collect();
        let xv = tape.constant(x);
        let q = online.forward_tape(&mut tape, &params, xv);
        let loss = tape.mean_squared_error(q, &targets);
        let value = tape.value(loss).get(0, 0);
        let mut g = tape.backward(loss);
        let shapes: Vec<(usize, usize)> = online
            .layers
            .iter()
            .flat_map(|l| [l.weight.shape(), l.bias.shape()])
            .collect();
        let grads: Vec<Matrix> = params
            .iter()
            .zip(shapes)
            .map(|(&v, s)| g.take_or_zeros(v, s))
            .collect();
        (value, grads)
    };
    if !loss.is_finite() {
        return Err(RlError::Diverged);
    }
    optimizer.step(&mut online.parameters_mut(), &grads);
    Ok(loss)
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Up to `size` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&Transition> {
        let n = size.min(self.items.len());
        let mut picked = index::sample(rng, self.items.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Online and target networks with their optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    optimizer: Adam,
    replay: ReplayBuffer,
    gamma: f64,
    batch_size: usize,
    sync_every: usize,
    updates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Copy the online weights into the target network every this many updates.
    pub target_sync: usize,
}

impl DqnLearner {
    pub fn new(online: QNetwork, cfg: LearnerConfig) -> Self {
        DqnLearner {
            target: online.clone(),
            online,
            optimizer: Adam::new(cfg.learning_rate),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            gamma: cfg.gamma,
            batch_size: cfg.batch_size.max(1),
            sync_every: cfg.target_sync.max(1),
            updates: 0,
        }
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One gradient step on a replay sample; `None` while memory is empty.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>, RlError> {
        if self.replay.is_empty() {
            return Ok(None);
        }
        let batch = self.replay.sample(self.batch_size, rng);
        let loss = dqn_train_step(
            &mut self.online,
            &self.target,
            &batch,
            self.gamma,
            &mut self.optimizer,
        )?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.sync_every) {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn tiny_fp() -> FingerprintConfig {
        FingerprintConfig {
            radius: 1,
            width: 8,
        }
    }

    fn features(bits: &[usize]) -> StateFeatures {
        StateFeatures {
            fingerprint: Fingerprint::from_bits(8, bits.iter().copied()).unwrap(),
            steps_fraction: 0.0,
        }
    }

    /// Single linear layer whose Q value is the weight of the one set bit.
    fn table(values: &[f64]) -> QNetwork {
        let mut w = Matrix::zeros(9, 1);
        for (i, v) in values.iter().enumerate() {
            w.set(i, 0, *v);
        }
        QNetwork::from_layers(vec![Dense {
            weight: w,
            bias: Matrix::zeros(1, 1),
        }])
        .unwrap()
    }

    #[test]
    fn feature_layout() {
        let m = parse_smiles("CCO").unwrap();
        let a = state_features(&m, 2, 4, tiny_fp()).unwrap();
        let b = state_features(&m, 1, 4, tiny_fp()).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a[8], 0.5);
        let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert_eq!(differing, 1);
        assert_eq!(a, state_features(&m, 2, 4, tiny_fp()).unwrap());
    }

    #[test]
    fn double_dqn_fixture() {
        let online = table(&[0.2, 0.9]);
        let target = table(&[0.5, 0.1]);
        let t = Transition {
            state: features(&[3]),
            reward: 1.0,
            next: vec![features(&[0]), features(&[1])],
            terminal: false,
        };
        assert!((double_dqn_target(&online, &target, &t, 0.5) - 1.05).abs() < 1e-12);
        // vanilla DQN would take the target network's own maximum
        let vanilla = 1.0
            + 0.5
                * target
                    .q_values(&[&t.next[0], &t.next[1]])
                    .into_iter()
                    .fold(f64::MIN, f64::max);
        assert!((vanilla - 1.25).abs() < 1e-12);
        assert_eq!(double_dqn_target(&online, &target, &t, 0.0), 1.0);
        let term = Transition {
            reward: 0.7,
            terminal: true,
            ..t
        };
        assert_eq!(double_dqn_target(&online, &target, &term, 0.9), 0.7);
    }

    #[test]
    fn train_step_fits_terminal_rewards() {
        let mut online = QNetwork::new(9, &[16, 8], 3);
        let target = online.clone();
        let data: Vec<Transition> = (0..8)
            .map(|b| Transition {
                state: features(&[b]),
                reward: b as f64 / 8.0,
                next: vec![],
                terminal: true,
            })
            .collect();
        let batch: Vec<&Transition> = data.iter().collect();
        let mut adam = Adam::new(1e-2);
        let first = dqn_train_step(&mut online, &target, &batch, 0.9, &mut adam).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = dqn_train_step(&mut online, &target, &batch, 0.9, &mut adam).unwrap();
        }
        assert!(last < first * 0.05, "{first} -> {last}");
        assert!(matches!(
            dqn_train_step(&mut online, &target, &[], 0.9, &mut adam),
            Err(RlError::EmptyBatch)
        ));
    }

    #[test]
    fn train_step_leaves_target_alone() {
        let mut online = QNetwork::new(9, &[4], 1);
        let target = QNetwork::new(9, &[4], 2);
        let before = target.clone();
        let t = Transition {
            state: features(&[1]),
            reward: 1.0,
            next: vec![features(&[2])],
            terminal: false,
        };
        dqn_train_step(&mut online, &target, &[&t], 0.9, &mut Adam::new(1e-3)).unwrap();
        assert_eq!(target, before);
    }

    #[test]
    fn replay_is_fifo_with_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for r in 0..5 {
            buf.push(Transition {
                state: features(&[]),
                reward: r as f64,
                next: vec![],
                terminal: true,
            });
        }
        assert_eq!(buf.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rewards: Vec<f64> = buf.sample(10, &mut rng).iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn learner_syncs_target() {
        let cfg = LearnerConfig {
            gamma: 0.9,
            learning_rate: 1e-3,
            replay_capacity: 10,
            batch_size: 2,
            target_sync: 3,
        };
        let mut learner = DqnLearner::new(QNetwork::new(9, &[4], 5), cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(learner.update(&mut rng).unwrap(), None);
        learner.remember(Transition {
            state: features(&[1]),
            reward: 1.0,
            next: vec![],
            terminal: true,
        });
        learner.update(&mut rng).unwrap();
        learner.update(&mut rng).unwrap();
        assert_ne!(learner.online, learner.target);
        learner.update(&mut rng).unwrap();
        assert_eq!(learner.online, learner.target);
    }
}
