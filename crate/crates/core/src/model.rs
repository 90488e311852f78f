//! Embedding, a stack of transformer layers, and a task head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{sinusoid_positions, AttentionConfig, TransformerLayer};
use crate::error::{Error, Result};
use crate::graph::{GraphBridge, GraphInstance};
use crate::nn::{Bound, ForwardCtx, Init, Linear, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{checkpoint, Array, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpec {
    /// `n x features` token rows, optionally with sinusoidal positions added.
    Sequence { features: usize, positional: bool },
    Graph {
        node_features: usize,
        edge_features: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadSpec {
    /// Mean-pool all tokens, then one affine map: `1 x outputs`.
    Pooled { outputs: usize },
    /// One affine map per token: `n x outputs`.
    PerToken { outputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_depth: usize,
    pub layer: AttentionConfig,
    pub input: InputSpec,
    pub head: HeadSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        let outputs = match self.head {
            HeadSpec::Pooled { outputs } | HeadSpec::PerToken { outputs } => outputs,
        };
        if outputs == 0 {
            return Err(Error::Config("head needs at least one output".into()));
        }
        if let InputSpec::Sequence { features: 0, .. } = self.input {
            return Err(Error::Config(
                "sequence input needs at least one feature".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Embedding {
    Sequence(Linear),
    Graph(GraphBridge),
}

/// One model input.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Sequence(&'a Array<f64>),
    Graph(&'a GraphInstance),
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore<T>,
    pub embed: Embedding,
    pub layers: Vec<TransformerLayer>,
    pub head: Linear,
    /// Residual scale shared by every layer and both branches.
    pub alpha: ParamId,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.layer.d_model;
        let mut store = ParamStore::new();
        let embed = match config.input {
            InputSpec::Sequence { features, .. } => {
                Embedding::Sequence(Linear::new(&mut store, seed, "embed", features, d))
            }
            InputSpec::Graph {
                node_features,
                edge_features,
            } => Embedding::Graph(GraphBridge::new(
                &mut store,
                seed,
                "graph",
                d,
                node_features,
                edge_features,
            )),
        };
        let layers = (0..config.n_depth)
            .map(|i| TransformerLayer::new(&mut store, seed, &format!("layers.{i}"), config.layer))
            .collect::<Result<Vec<_>>>()?;
        let outputs = match config.head {
            HeadSpec::Pooled { outputs } | HeadSpec::PerToken { outputs } => outputs,
        };
        let head = Linear::new(&mut store, seed, "head", d, outputs);
        let alpha = store.init(seed, "alpha", &[], Init::Zeros);
        Ok(Self {
            config,
            seed,
            store,
            embed,
            layers,
            head,
            alpha,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Token matrix entering the first layer.
    pub fn embed(
        &self,
        p: &Bound<T>,
        input: ModelInput<'_>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        match (&self.embed, input) {
            (Embedding::Sequence(lin), ModelInput::Sequence(x)) => {
                if x.ndim() != 2 || x.shape()[1] != lin.d_in || x.rows() == 0 {
                    return Err(Error::shape("embed", x.shape(), &[0, lin.d_in]));
                }
                let h = lin.forward(p, &Tensor::constant(x.cast::<T>()))?;
                match self.config.input {
                    InputSpec::Sequence {
                        positional: true, ..
                    } => h.add(&Tensor::constant(sinusoid_positions(x.rows(), lin.d_out))),
                    _ => Ok(h),
                }
            }
            (Embedding::Graph(bridge), ModelInput::Graph(g)) => {
                Ok(bridge.tokenize(p, g, ctx.pe_rng())?.tokens)
            }
            _ => Err(Error::Config("input kind does not match the model".into())),
        }
    }

    /// Output map applied to the final token matrix.
    pub fn apply_head(&self, p: &Bound<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        match self.config.head {
            HeadSpec::Pooled { .. } => {
                let d = h.shape()[1];
                self.head.forward(p, &h.mean_rows().reshape(&[1, d])?)
            }
            HeadSpec::PerToken { .. } => self.head.forward(p, h),
        }
    }

    /// Runs the first `depth` layers (all of them for `None`).
    pub fn forward_depth(
        &self,
        p: &Bound<T>,
        input: ModelInput<'_>,
        ctx: &mut ForwardCtx,
        depth: Option<usize>,
    ) -> Result<Tensor<T>> {
        let mut h = self.embed(p, input, ctx)?;
        let alpha = p.get(self.alpha);
        for layer in self.layers.iter().take(depth.unwrap_or(usize::MAX)) {
            h = layer.forward(p, alpha, &h, ctx)?;
        }
        self.apply_head(p, &h)
    }

    pub fn forward(
        &self,
        p: &Bound<T>,
        input: ModelInput<'_>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        self.forward_depth(p, input, ctx, None)
    }

    pub fn checkpoint_meta(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "model": serde_json::to_value(self.config)? }))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut meta = self.checkpoint_meta()?;
        meta["extra"] = extra;
        let named: Vec<(&str, &Array<T>)> = self.store.named().collect();
        checkpoint::save(path, self.seed, meta, &named)
    }

    /// Rebuilds the architecture from the header, then loads the weights.
    pub fn load(path: &Path) -> Result<(Self, checkpoint::CheckpointHeader)> {
        let (header, tensors) = checkpoint::load::<T>(path)?;
        let config: ModelConfig = serde_json::from_value(header.meta["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut model = Self::new(config, header.seed)?;
        model.store.load_named(tensors)?;
        Ok((model, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::gumbel::GumbelRng;

    fn config(depth: usize, kind: AttentionKind) -> ModelConfig {
        ModelConfig {
            n_depth: depth,
            layer: AttentionConfig {
                attention: kind,
                d_model: 8,
                n_heads: 2,
                k: 2,
                d_ffn: 16,
                ..Default::default()
            },
            input: InputSpec::Sequence {
                features: 3,
                positional: true,
            },
            head: HeadSpec::Pooled { outputs: 4 },
        }
    }

    fn seq(n: usize) -> Array<f64> {
        let mut rng = GumbelRng::new(n as u64);
        Array::from_fn(&[n, 3], |_| rng.normal())
    }

    #[test]
    fn zero_alpha_reduces_to_embedding_and_head() {
        for depth in [0, 1, 3] {
            let m = Model::<f32>::new(config(depth, AttentionKind::Samsa), 1).unwrap();
            let p = m.store.bind(false);
            let x = seq(10);
            let full = m
                .forward(&p, ModelInput::Sequence(&x), &mut ForwardCtx::train(2))
                .unwrap();
            let bare = m
                .forward_depth(
                    &p,
                    ModelInput::Sequence(&x),
                    &mut ForwardCtx::train(2),
                    Some(0),
                )
                .unwrap();
            assert_eq!(full.data(), bare.data());
            assert_eq!(full.shape(), &[1, 4]);
        }
    }

    #[test]
    fn per_token_head_shape() {
        let mut c = config(1, AttentionKind::Full);
        c.head = HeadSpec::PerToken { outputs: 5 };
        let m = Model::<f64>::new(c, 1).unwrap();
        let y = m
            .forward(
                &m.store.bind(false),
                ModelInput::Sequence(&seq(7)),
                &mut ForwardCtx::eval(0),
            )
            .unwrap();
        assert_eq!(y.shape(), &[7, 5]);
    }

    #[test]
    fn wrong_input_kind_rejected() {
        let m = Model::<f64>::new(config(1, AttentionKind::Samsa), 1).unwrap();
        let g =
            GraphInstance::new(Array::ones(&[2, 3]), vec![], Array::zeros(&[0, 0]), None).unwrap();
        let r = m.forward(
            &m.store.bind(false),
            ModelInput::Graph(&g),
            &mut ForwardCtx::eval(0),
        );
        assert!(r.is_err());
        let bad = Array::<f64>::ones(&[4, 2]);
        assert!(m
            .forward(
                &m.store.bind(false),
                ModelInput::Sequence(&bad),
                &mut ForwardCtx::eval(0)
            )
            .is_err());
    }

    #[test]
    fn graph_model_runs() {
        let mut c = config(2, AttentionKind::Samsa);
        c.input = InputSpec::Graph {
            node_features: 2,
            edge_features: 1,
        };
        c.head = HeadSpec::Pooled { outputs: 1 };
        let m = Model::<f32>::new(c, 3).unwrap();
        let g = GraphInstance::parse("3 2 2 1\n1 0\n0 1\n1 1\n0 1 1\n1 2 1\n").unwrap();
        let y = m
            .forward(
                &m.store.bind(false),
                ModelInput::Graph(&g),
                &mut ForwardCtx::eval(0),
            )
            .unwrap();
        assert_eq!(y.shape(), &[1, 1]);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = Model::<f64>::new(config(2, AttentionKind::Samsa), 9).unwrap();
        m.store.get_mut(m.alpha).data_mut()[0] = 0.5;
        m.save(&path, serde_json::json!({"step": 3})).unwrap();
        let (back, header) = Model::<f64>::load(&path).unwrap();
        assert_eq!(header.meta["extra"]["step"], 3);
        let x = seq(6);
        let run = |m: &Model<f64>| {
            m.forward(
                &m.store.bind(false),
                ModelInput::Sequence(&x),
                &mut ForwardCtx::eval(0),
            )
            .unwrap()
            .value()
            .clone()
        };
        assert_eq!(run(&m), run(&back));
    }
}
