//! Synthetic tasks and the training loop.

pub mod listops;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::GraphInstance;
use crate::gumbel::GumbelRng;
use crate::model::{HeadSpec, InputSpec, ModelInput};
use crate::par::Exec;
use crate::tensor::Array;

pub use train::{
    evaluate, seq_select_layer, seq_select_recipe, train, EvalResult, MetricsRecord, MetricsSink,
    Split, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Report the class of the token with the largest score channel.
    SeqSelect,
    /// Evaluate a nested MIN/MAX/MED expression.
    SeqListopsLite,
    /// Regress the mean node degree of a random graph.
    GraphDegree,
    /// Name the octant holding the densest cluster of a point cloud.
    CloudCentroid,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Tokens (seq-select), maximum tokens (listops), maximum nodes
    /// (graph-degree) or points (cloud-centroid).
    pub size: usize,
    /// Classes of seq-select tokens.
    pub vocab: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::SeqSelect,
            size: 256,
            vocab: 16,
            train: 4096,
            val: 512,
            test: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleInput {
    Sequence(Array<f64>),
    Graph(GraphInstance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: SampleInput,
    pub target: Target,
}

impl Sample {
    pub fn model_input(&self) -> ModelInput<'_> {
        match &self.input {
            SampleInput::Sequence(x) => ModelInput::Sequence(x),
            SampleInput::Graph(g) => ModelInput::Graph(g),
        }
    }

    pub fn num_tokens(&self) -> usize {
        match &self.input {
            SampleInput::Sequence(x) => x.rows(),
            SampleInput::Graph(g) => g.num_tokens(),
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let min = match self.kind {
            TaskKind::SeqSelect => 1,
            TaskKind::SeqListopsLite => 8,
            TaskKind::GraphDegree => 3,
            TaskKind::CloudCentroid => 8,
        };
        if self.size < min {
            return Err(Error::Config(format!(
                "size must be at least {min} for {:?}",
                self.kind
            )));
        }
        if self.kind == TaskKind::SeqSelect && self.vocab < 2 {
            return Err(Error::Config("vocab must be at least 2".into()));
        }
        if self.train == 0 || self.val == 0 {
            return Err(Error::Config(
                "train and val splits must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn input_spec(&self) -> InputSpec {
        match self.kind {
            TaskKind::SeqSelect => InputSpec::Sequence {
                features: self.vocab + 1,
                positional: false,
            },
            TaskKind::SeqListopsLite => InputSpec::Sequence {
                features: listops::VOCAB,
                positional: true,
            },
            TaskKind::GraphDegree => InputSpec::Graph {
                node_features: 1,
                edge_features: 0,
            },
            TaskKind::CloudCentroid => InputSpec::Sequence {
                features: 3,
                positional: false,
            },
        }
    }

    pub fn head_spec(&self) -> HeadSpec {
        HeadSpec::Pooled {
            outputs: self.num_classes().unwrap_or(1),
        }
    }

    /// `None` for regression tasks.
    pub fn num_classes(&self) -> Option<usize> {
        match self.kind {
            TaskKind::SeqSelect => Some(self.vocab),
            TaskKind::SeqListopsLite => Some(10),
            TaskKind::GraphDegree => None,
            TaskKind::CloudCentroid => Some(8),
        }
    }

    /// Hex digest identifying the generated data.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("task spec serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn generate_one(&self, rng: &mut GumbelRng) -> Sample {
        match self.kind {
            TaskKind::SeqSelect => gen_seq_select(rng, self.size, self.vocab),
            TaskKind::SeqListopsLite => gen_listops(rng, self.size),
            TaskKind::GraphDegree => gen_graph_degree(rng, self.size),
            TaskKind::CloudCentroid => gen_cloud(rng, self.size),
        }
    }

    /// Split `j`, sample `i` draws from stream `(j << 32) | i` of the task
    /// seed, so splits never share draws.
    pub fn generate_split(&self, split: Split, count: usize, exec: Exec) -> Vec<Sample> {
        let j = split as u64;
        exec.map(count, |i| {
            let mut rng = GumbelRng::with_stream(self.seed, (j << 32) | i as u64);
            self.generate_one(&mut rng)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn generate(spec: TaskSpec, exec: Exec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            train: spec.generate_split(Split::Train, spec.train, exec),
            val: spec.generate_split(Split::Val, spec.val, exec),
            test: spec.generate_split(Split::Test, spec.test, exec),
        })
    }

    pub fn cache_path(spec: &TaskSpec, dir: &Path) -> PathBuf {
        let kind = serde_json::to_value(spec.kind).expect("kind serializes");
        dir.join(format!(
            "{}-{}.json",
            kind.as_str().unwrap_or("task"),
            &spec.cache_key()[..16]
        ))
    }

    /// Reads the cached dataset for `spec`, generating and storing it first
    /// when absent.
    pub fn load_or_generate(spec: TaskSpec, dir: &Path, exec: Exec) -> Result<Self> {
        let path = Self::cache_path(&spec, dir);
        if path.exists() {
            let data: Dataset = serde_json::from_slice(&std::fs::read(&path)?)?;
            if data.spec == spec {
                return Ok(data);
            }
            log::warn!(
                "cache {} holds a different spec; regenerating",
                path.display()
            );
        }
        let data = Self::generate(spec, exec)?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, serde_json::to_vec(&data)?)?;
        Ok(data)
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Multiplier on the score channel of seq-select tokens.
pub const SEQ_SELECT_SCORE_SCALE: f64 = 4.0;

/// Tokens `[one-hot class | score]`; the label is the class of the
/// highest-scored token.
pub fn seq_select_instance(classes: &[usize], scores: &[f64], vocab: usize) -> Sample {
    let n = classes.len();
    let mut x = Array::zeros(&[n, vocab + 1]);
    for (t, (&c, &s)) in classes.iter().zip(scores).enumerate() {
        let row = x.row_mut(t);
        row[c] = 1.0;
        row[vocab] = SEQ_SELECT_SCORE_SCALE * s;
    }
    let best = (0..n).fold(0, |b, t| if scores[t] > scores[b] { t } else { b });
    Sample {
        input: SampleInput::Sequence(x),
        target: Target::Class(classes[best]),
    }
}

/// Distractor scores lie in `[0, 0.5)`, the planted token's in `[0.75, 1)`.
fn gen_seq_select(rng: &mut GumbelRng, n: usize, vocab: usize) -> Sample {
    let classes: Vec<usize> = (0..n).map(|_| rng.below(vocab)).collect();
    let mut scores: Vec<f64> = (0..n).map(|_| 0.5 * rng.uniform_open()).collect();
    let planted = rng.below(n);
    scores[planted] = 0.75 + 0.25 * rng.uniform_open();
    seq_select_instance(&classes, &scores, vocab)
}

pub fn listops_instance(expr: &listops::Expr) -> Sample {
    let tokens = expr.tokens();
    let mut x = Array::zeros(&[tokens.len(), listops::VOCAB]);
    for (t, tok) in tokens.iter().enumerate() {
        x.row_mut(t)[tok.id()] = 1.0;
    }
    Sample {
        input: SampleInput::Sequence(x),
        target: Target::Class(expr.eval() as usize),
    }
}

fn gen_listops(rng: &mut GumbelRng, max_len: usize) -> Sample {
    loop {
        let e = listops::Expr::random(rng, 3);
        if e.tokens().len() <= max_len.min(128) {
            return listops_instance(&e);
        }
    }
}

/// Undirected graph expanded to both directions; target is
/// `|E_directed| / |V|`.
pub fn degree_instance(num_nodes: usize, undirected: &[(usize, usize)]) -> Result<Sample> {
    let g = GraphInstance::new(
        Array::ones(&[num_nodes, 1]),
        undirected.to_vec(),
        Array::zeros(&[undirected.len(), 0]),
        None,
    )?
    .symmetrized();
    let target = g.num_edges() as f64 / num_nodes as f64;
    Ok(Sample {
        input: SampleInput::Graph(GraphInstance {
            target: Some(target),
            ..g
        }),
        target: Target::Value(target),
    })
}

pub fn cycle_graph(n: usize) -> Result<Sample> {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    degree_instance(n, &edges)
}

fn gen_graph_degree(rng: &mut GumbelRng, max_nodes: usize) -> Sample {
    let lo = (max_nodes / 2).max(3);
    let n = lo + rng.below(max_nodes - lo + 1);
    let p = 0.05 + 0.45 * rng.uniform_open();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    degree_instance(n, &edges).expect("generated edges are in range")
}

/// Octant index with bit 0, 1, 2 set for positive x, y, z.
pub fn octant(p: [f64; 3]) -> usize {
    (p[0] > 0.0) as usize | ((p[1] > 0.0) as usize) << 1 | ((p[2] > 0.0) as usize) << 2
}

/// A quarter of the points form a tight cluster inside one octant; the rest
/// are uniform in the cube `[-1, 1]^3`.
fn gen_cloud(rng: &mut GumbelRng, n: usize) -> Sample {
    let class = rng.below(8);
    let center: [f64; 3] = std::array::from_fn(|a| {
        (0.3 + 0.4 * rng.uniform_open()) * if class >> a & 1 == 1 { 1.0 } else { -1.0 }
    });
    let cluster = n / 4;
    let mut x = Array::zeros(&[n, 3]);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    for (t, &row) in order.iter().enumerate() {
        let r = x.row_mut(row);
        for a in 0..3 {
            r[a] = if t < cluster {
                (center[a] + 0.1 * rng.normal()).clamp(-1.0, 1.0)
            } else {
                2.0 * rng.uniform_open() - 1.0
            };
        }
    }
    Sample {
        input: SampleInput::Sequence(x),
        target: Target::Class(class),
    }
}
