//! The neural side: an embedding, T rounds of message passing over a
//! constraint graph, an output head producing per-position class logits, and
//! a reflection head producing one error-flag logit per position. Both heads
//! read the same final embeddings.
//!
//! One message-passing round: `m_v = mean_{u in N(v)} (W_msg h_u + b_msg)`,
//! then `h_v <- relu(W_upd [h_v ; m_v ; h_v0] + b_upd)` with a skip back to
//! the initial embedding `h_v0`. Neighbor means are a matmul against the
//! row-normalized adjacency matrix, recorded as a constant on the tape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{
    load_checkpoint, save_checkpoint, AutodiffError, ParameterSet, Tape, Tensor, ValueId,
};
use crate::graph::ConstraintGraph;
use crate::knowledge::{Assignment, GraphTask};
use crate::reflect::ReflectionVector;

/// Degree values are clamped to this vocabulary size for graph-task inputs.
const DEGREE_VOCAB: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {input} positions but graph has {graph} nodes")]
    SizeMismatch { input: usize, graph: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint config: {0}")]
    BadConfig(String),
    #[error("checkpoint parameter {name:?}: expected shape {want:?}, found {got:?}")]
    ParamShape { name: String, want: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint is missing parameter {0:?}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0:?}")]
    ExtraParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Sudoku { side: usize },
    Graph { task: GraphTask },
}

impl TaskKind {
    pub fn name(&self) -> String {
        match self {
            TaskKind::Sudoku { .. } => "sudoku".to_string(),
            TaskKind::Graph { task } => task.to_string(),
        }
    }
}

/// Architecture hyperparameters; serialized into the checkpoint header so
/// evaluation can rebuild the model and its graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub task: TaskKind,
    /// Input symbol vocabulary (board digits incl. blank, or degree buckets).
    pub vocab: usize,
    /// Output classes |Y|.
    pub classes: usize,
    /// Embedding width d.
    pub dim: usize,
    /// Message-passing rounds T.
    pub rounds: usize,
}

impl ModelConfig {
    pub fn sudoku(side: usize, dim: usize, rounds: usize) -> Self {
        assert!(side == 4 || side == 9);
        ModelConfig {
            task: TaskKind::Sudoku { side },
            vocab: side + 1,
            classes: side,
            dim,
            rounds,
        }
    }

    pub fn graph(task: GraphTask, dim: usize, rounds: usize) -> Self {
        ModelConfig { task: TaskKind::Graph { task }, vocab: DEGREE_VOCAB, classes: 2, dim, rounds }
    }

    /// Map a class index to its output symbol (digits are 1-based).
    pub fn symbol_of_class(&self, class: usize) -> u8 {
        match self.task {
            TaskKind::Sudoku { .. } => (class + 1) as u8,
            TaskKind::Graph { .. } => class as u8,
        }
    }

    pub fn class_of_symbol(&self, symbol: u8) -> usize {
        match self.task {
            TaskKind::Sudoku { .. } => symbol as usize - 1,
            TaskKind::Graph { .. } => symbol as usize,
        }
    }

    fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match self.task {
            TaskKind::Sudoku { side } => {
                m.insert("task".into(), "sudoku".into());
                m.insert("side".into(), side.to_string());
            }
            TaskKind::Graph { task } => {
                m.insert("task".into(), task.to_string());
            }
        }
        m.insert("vocab".into(), self.vocab.to_string());
        m.insert("classes".into(), self.classes.to_string());
        m.insert("d".into(), self.dim.to_string());
        m.insert("t".into(), self.rounds.to_string());
        m
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| ModelError::BadConfig(format!("missing key {k:?}")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::BadConfig(format!("bad value for {k:?}")))
        };
        let task = match get("task")?.as_str() {
            "sudoku" => TaskKind::Sudoku { side: num("side")? },
            "clique" => TaskKind::Graph { task: GraphTask::Clique },
            "mis" => TaskKind::Graph { task: GraphTask::Mis },
            other => return Err(ModelError::BadConfig(format!("unknown task {other:?}"))),
        };
        Ok(ModelConfig {
            task,
            vocab: num("vocab")?,
            classes: num("classes")?,
            dim: num("d")?,
            rounds: num("t")?,
        })
    }
}

/// Everything a forward pass produces, as plain values.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub n: usize,
    pub classes: usize,
    /// Row-major `n x classes`.
    pub cell_logits: Vec<f64>,
    /// Row-major `n x classes`, softmax of the logits.
    pub cell_probs: Vec<f64>,
    /// Per-position probability that the position is an error.
    pub flag_probs: Vec<f64>,
}

impl ForwardResult {
    pub fn prob(&self, position: usize, class: usize) -> f64 {
        self.cell_probs[position * self.classes + class]
    }

    /// Confidence = highest class probability at a position.
    pub fn max_prob(&self, position: usize) -> f64 {
        (0..self.classes)
            .map(|c| self.prob(position, c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `log f(y, r | x)` under per-position independence: the categorical
    /// log-likelihood of each decoded symbol plus the Bernoulli
    /// log-likelihood of each flag.
    pub fn joint_log_prob(
        &self,
        config: &ModelConfig,
        y: &Assignment,
        r: &ReflectionVector,
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let class = config.class_of_symbol(y.get(i).expect("decoded outputs are complete"));
            total += self.prob(i, class).ln();
            let p = self.flag_probs[i];
            total += if r.get(i) { p.ln() } else { (1.0 - p).ln() };
        }
        total
    }
}

/// Tape handles from a traced forward pass, for building losses.
pub struct Trace {
    pub tape: Tape,
    pub cell_logits: ValueId,
    /// `n x 1` raw reflection logits.
    pub flag_logits: ValueId,
    /// `n x 1` sigmoid of the above.
    pub flag_probs: ValueId,
    param_ids: BTreeMap<String, ValueId>,
}

impl Trace {
    /// Collect per-parameter gradients after a backward pass.
    pub fn parameter_gradients(
        &self,
        store: &crate::autodiff::GradStore,
    ) -> crate::autodiff::Gradients {
        let mut grads = crate::autodiff::Gradients::new();
        for (name, &id) in &self.param_ids {
            if let Some(g) = store.get(id) {
                grads.insert(name.clone(), g.to_vec());
            }
        }
        grads
    }

    pub fn param_id(&self, name: &str) -> Option<ValueId> {
        self.param_ids.get(name).copied()
    }
}

/// How [`ReflModel::decode`] turns probabilities into a concrete output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Highest-probability class per position (ties to the lowest symbol),
    /// flag iff flag probability >= 0.5.
    Argmax,
    /// Per-position categorical and Bernoulli draws from the given seed.
    Sample { seed: u64 },
}

pub struct ReflModel {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl ReflModel {
    /// Fresh model with weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`
    /// and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let d = config.dim;
        let weight = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::new(vec![rows, cols], data)
        };
        params.insert("embed", weight(&mut rng, config.vocab, d));
        for t in 0..config.rounds {
            params.insert(&format!("round{t:02}.w_msg"), weight(&mut rng, d, d));
            params.insert(&format!("round{t:02}.b_msg"), Tensor::zeros(vec![d]));
            params.insert(&format!("round{t:02}.w_upd"), weight(&mut rng, 3 * d, d));
            params.insert(&format!("round{t:02}.b_upd"), Tensor::zeros(vec![d]));
        }
        params.insert("head.w_out", weight(&mut rng, d, config.classes));
        params.insert("head.b_out", Tensor::zeros(vec![config.classes]));
        params.insert("head.w_flag", weight(&mut rng, d, 1));
        params.insert("head.b_flag", Tensor::zeros(vec![1]));
        ReflModel { config, params }
    }

    fn input_symbols(&self, x: &Assignment, graph: &ConstraintGraph) -> Vec<usize> {
        match self.config.task {
            TaskKind::Sudoku { .. } => x
                .cells()
                .iter()
                .map(|c| c.map_or(0, |d| d as usize))
                .collect(),
            TaskKind::Graph { .. } => (0..graph.node_count())
                .map(|v| graph.degree(v).min(self.config.vocab - 1))
                .collect(),
        }
    }

    /// Row-normalized adjacency: entry (v, u) = 1/deg(v) for u in N(v).
    /// Isolated nodes get an all-zero row (their aggregate message is zero).
    fn mean_adjacency(graph: &ConstraintGraph) -> Tensor {
        let n = graph.node_count();
        let mut data = vec![0.0; n * n];
        for v in 0..n {
            let deg = graph.degree(v);
            if deg == 0 {
                continue;
            }
            let w = 1.0 / deg as f64;
            for &u in graph.neighbors(v) {
                data[v * n + u] = w;
            }
        }
        Tensor::new(vec![n, n], data)
    }

    /// Run the model, recording the computation on a fresh tape.
    pub fn forward_traced(
        &self,
        x: &Assignment,
        graph: &ConstraintGraph,
    ) -> Result<(ForwardResult, Trace), ModelError> {
        let n = graph.node_count();
        if n == 0 {
            return Err(ModelError::EmptyGraph);
        }
        if x.len() != n {
            return Err(ModelError::SizeMismatch { input: x.len(), graph: n });
        }
        let mut tape = Tape::new();
        let mut param_ids = BTreeMap::new();
        for (name, tensor) in self.params.iter() {
            param_ids.insert(name.to_string(), tape.input(tensor.clone()));
        }
        let id = |m: &BTreeMap<String, ValueId>, k: &str| *m.get(k).expect("known parameter");

        let symbols = self.input_symbols(x, graph);
        let h0 = tape.embedding(id(&param_ids, "embed"), &symbols)?;
        let adj = tape.constant(Self::mean_adjacency(graph));
        let mut h = h0;
        for t in 0..self.config.rounds {
            let msg_lin = tape.matmul(h, id(&param_ids, &format!("round{t:02}.w_msg")))?;
            let msg = tape.add(msg_lin, id(&param_ids, &format!("round{t:02}.b_msg")))?;
            let agg = tape.matmul(adj, msg)?;
            let cat = tape.concat(&[h, agg, h0])?;
            let upd = tape.matmul(cat, id(&param_ids, &format!("round{t:02}.w_upd")))?;
            let upd = tape.add(upd, id(&param_ids, &format!("round{t:02}.b_upd")))?;
            h = tape.relu(upd)?;
        }
        let logits_lin = tape.matmul(h, id(&param_ids, "head.w_out"))?;
        let cell_logits = tape.add(logits_lin, id(&param_ids, "head.b_out"))?;
        let flag_lin = tape.matmul(h, id(&param_ids, "head.w_flag"))?;
        let flag_logits = tape.add(flag_lin, id(&param_ids, "head.b_flag"))?;
        let flag_probs = tape.sigmoid(flag_logits)?;
        let cell_probs = tape.softmax(cell_logits)?;

        let result = ForwardResult {
            n,
            classes: self.config.classes,
            cell_logits: tape.value(cell_logits).data.clone(),
            cell_probs: tape.value(cell_probs).data.clone(),
            flag_probs: tape.value(flag_probs).data.clone(),
        };
        let trace = Trace { tape, cell_logits, flag_logits, flag_probs, param_ids };
        Ok((result, trace))
    }

    pub fn forward(
        &self,
        x: &Assignment,
        graph: &ConstraintGraph,
    ) -> Result<ForwardResult, ModelError> {
        self.forward_traced(x, graph).map(|(fr, _)| fr)
    }

    /// Turn a [`ForwardResult`] into a concrete (output, reflection) pair.
    pub fn decode(&self, fr: &ForwardResult, mode: DecodeMode) -> (Assignment, ReflectionVector) {
        let mut cells = Vec::with_capacity(fr.n);
        let mut flags = Vec::with_capacity(fr.n);
        match mode {
            DecodeMode::Argmax => {
                for i in 0..fr.n {
                    let mut best = 0usize;
                    for c in 1..fr.classes {
                        if fr.prob(i, c) > fr.prob(i, best) {
                            best = c;
                        }
                    }
                    cells.push(Some(self.config.symbol_of_class(best)));
                }
                for i in 0..fr.n {
                    flags.push(fr.flag_probs[i] >= 0.5);
                }
            }
            DecodeMode::Sample { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in 0..fr.n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = fr.classes - 1;
                    for c in 0..fr.classes {
                        acc += fr.prob(i, c);
                        if u < acc {
                            chosen = c;
                            break;
                        }
                    }
                    cells.push(Some(self.config.symbol_of_class(chosen)));
                }
                for i in 0..fr.n {
                    flags.push(rng.random::<f64>() < fr.flag_probs[i]);
                }
            }
        }
        (
            Assignment::new(cells, vec![false; fr.n]),
            ReflectionVector::new(flags),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(path, &self.config.to_meta(), &self.params)?;
        Ok(())
    }

    /// Load and validate a checkpoint: the architecture is rebuilt from the
    /// header and every tensor must match the rebuilt shapes exactly.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (meta, tensors) = load_checkpoint(path)?;
        let config = ModelConfig::from_meta(&meta)?;
        let mut model = ReflModel::new(config, 0);
        let expected: Vec<String> = model.params.names().map(String::from).collect();
        for name in tensors.keys() {
            if !expected.iter().any(|e| e == name) {
                return Err(ModelError::ExtraParam(name.clone()));
            }
        }
        for name in &expected {
            let tensor = tensors
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            let want = model.params.get(name).expect("known").shape.clone();
            if tensor.shape != want {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    want,
                    got: tensor.shape.clone(),
                });
            }
            model.params.set_values(name, &tensor.data);
        }
        Ok(model)
    }

    /// The constraint graph this model's task implies, when it is fixed by
    /// the task itself (Sudoku). Graph tasks carry their own per-instance
    /// graph.
    pub fn task_graph(&self) -> Option<ConstraintGraph> {
        match self.config.task {
            TaskKind::Sudoku { side } => {
                Some(crate::graph::build_sudoku_graph(side).expect("valid side"))
            }
            TaskKind::Graph { .. } => None,
        }
    }
}
