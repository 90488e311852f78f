//! Graph-Bridge: nodes and edges of a graph become tokens of one matrix.
//!
//! Node `i` gets a random positional encoding `p_i = eps_i * sigma + phi(x_i)`
//! with `eps_i` standard normal; edge `(i, j)` gets `p_i - p_j`. Tokens are
//! `phi_V([p_i | x_i])` for nodes followed by `phi_E([p_ij | e_ij])` for edges.
//!
//! # Text format
//!
//! ```text
//! # comment lines and blank lines are ignored
//! 3 2 2 1          <- |V| |E| f g_e
//! 0.5 1.0          <- one row of f node features per node
//! 0.0 -1.0
//! 2.0 0.25
//! 0 1 0.7          <- src dst followed by g_e edge features
//! 1 2 -0.3
//! target 1.5       <- optional graph-level target
//! ```
//!
//! Edges are directed; [`GraphInstance::symmetrized`] adds missing reverse
//! edges for undirected inputs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gumbel::GumbelRng;
use crate::nn::{Bound, Init, Mlp, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{Array, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInstance {
    /// `|V| x f`.
    pub node_features: Array<f64>,
    pub edges: Vec<(usize, usize)>,
    /// `|E| x g_e`.
    pub edge_features: Array<f64>,
    pub target: Option<f64>,
}

impl GraphInstance {
    pub fn new(
        node_features: Array<f64>,
        edges: Vec<(usize, usize)>,
        edge_features: Array<f64>,
        target: Option<f64>,
    ) -> Result<Self> {
        if node_features.ndim() != 2
            || edge_features.ndim() != 2
            || edge_features.rows() != edges.len()
        {
            return Err(Error::shape(
                "graph_instance",
                node_features.shape(),
                edge_features.shape(),
            ));
        }
        let n = node_features.rows();
        if let Some(&(s, d)) = edges.iter().find(|(s, d)| *s >= n || *d >= n) {
            return Err(Error::IndexOutOfRange {
                op: "graph_instance",
                index: s.max(d),
                extent: n,
            });
        }
        Ok(Self {
            node_features,
            edges,
            edge_features,
            target,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.shape()[1]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.shape()[1]
    }

    pub fn num_tokens(&self) -> usize {
        self.num_nodes() + self.num_edges()
    }

    /// Adds `(j, i)` with the features of `(i, j)` wherever it is missing.
    pub fn symmetrized(&self) -> Self {
        let present: HashSet<(usize, usize)> = self.edges.iter().copied().collect();
        let mut edges = self.edges.clone();
        let mut feats = self.edge_features.data().to_vec();
        let g = self.edge_dim();
        let mut added = HashSet::new();
        for (e, &(s, d)) in self.edges.iter().enumerate() {
            if !present.contains(&(d, s)) && added.insert((d, s)) {
                edges.push((d, s));
                feats.extend_from_slice(self.edge_features.row(e));
            }
        }
        let rows = edges.len();
        Self {
            node_features: self.node_features.clone(),
            edges,
            edge_features: Array::new(vec![rows, g], feats).expect("consistent edge features"),
            target: self.target,
        }
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::Config("relabeling is not a permutation".into()));
            }
            inverse[p] = i;
        }
        if perm.len() != n {
            return Err(Error::Config("relabeling is not a permutation".into()));
        }
        let mut feats = Vec::with_capacity(self.node_features.numel());
        for &old in &inverse {
            feats.extend_from_slice(self.node_features.row(old));
        }
        Self::new(
            Array::new(self.node_features.shape().to_vec(), feats)?,
            self.edges
                .iter()
                .map(|&(s, d)| (perm[s], perm[d]))
                .collect(),
            self.edge_features.clone(),
            self.target,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, msg: String| Error::GraphParse { line, msg };
        let nums = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(line, format!("{t:?}: {e}")))
                })
                .collect()
        };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| err(0, "missing header".into()))?;
        let header: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| err(hl, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let [nv, ne, f, g] = header[..] else {
            return Err(err(hl, "header must be `|V| |E| f g_e`".into()));
        };
        let mut node = Vec::with_capacity(nv * f);
        for _ in 0..nv {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(hl, "missing node rows".into()))?;
            let row = nums(ln, l)?;
            if row.len() != f {
                return Err(err(
                    ln,
                    format!("expected {f} node features, found {}", row.len()),
                ));
            }
            node.extend(row);
        }
        let mut edges = Vec::with_capacity(ne);
        let mut efeat = Vec::with_capacity(ne * g);
        for _ in 0..ne {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(hl, "missing edge rows".into()))?;
            let mut toks = l.split_whitespace();
            let mut endpoint = || -> Result<usize> {
                let t = toks
                    .next()
                    .ok_or_else(|| err(ln, "missing edge endpoint".into()))?;
                let v: usize = t.parse().map_err(|e| err(ln, format!("{t:?}: {e}")))?;
                if v >= nv {
                    return Err(err(ln, format!("endpoint {v} out of range for {nv} nodes")));
                }
                Ok(v)
            };
            let (s, d) = (endpoint()?, endpoint()?);
            let row = nums(ln, &toks.collect::<Vec<_>>().join(" "))?;
            if row.len() != g {
                return Err(err(
                    ln,
                    format!("expected {g} edge features, found {}", row.len()),
                ));
            }
            edges.push((s, d));
            efeat.extend(row);
        }
        let mut target = None;
        if let Some((ln, l)) = lines.next() {
            let v = l
                .strip_prefix("target")
                .ok_or_else(|| err(ln, format!("unexpected line {l:?}")))?;
            target = Some(
                v.trim()
                    .parse()
                    .map_err(|e| err(ln, format!("target: {e}")))?,
            );
        }
        if let Some((ln, l)) = lines.next() {
            return Err(err(ln, format!("unexpected line {l:?}")));
        }
        Self::new(
            Array::new(vec![nv, f], node)?,
            edges,
            Array::new(vec![ne, g], efeat)?,
            target,
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.num_nodes(),
            self.num_edges(),
            self.node_dim(),
            self.edge_dim()
        );
        let join = |r: &[f64]| {
            r.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        for i in 0..self.num_nodes() {
            let _ = writeln!(s, "{}", join(self.node_features.row(i)));
        }
        for (e, (a, b)) in self.edges.iter().enumerate() {
            let feats = join(self.edge_features.row(e));
            let _ = writeln!(
                s,
                "{a} {b}{}{feats}",
                if feats.is_empty() { "" } else { " " }
            );
        }
        if let Some(t) = self.target {
            let _ = writeln!(s, "target {t}");
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Row `e` is `p[src_e] - p[dst_e]`.
pub fn edge_positional_encoding<T: Real>(
    p: &Tensor<T>,
    edges: &[(usize, usize)],
) -> Result<Tensor<T>> {
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    p.gather_rows(&src)?.sub(&p.gather_rows(&dst)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Node,
    Edge,
}

/// Token matrix of one graph: all node tokens, then all edge tokens.
#[derive(Debug, Clone)]
pub struct GraphTokens<T: Real> {
    pub tokens: Tensor<T>,
    pub num_nodes: usize,
    pub num_edges: usize,
}

impl<T: Real> GraphTokens<T> {
    pub fn kinds(&self) -> Vec<TokenKind> {
        let mut k = vec![TokenKind::Node; self.num_nodes];
        k.resize(self.num_nodes + self.num_edges, TokenKind::Edge);
        k
    }
}

/// Several graphs kept as separate token matrices, so attention never mixes
/// graphs.
#[derive(Debug, Clone)]
pub struct GraphTokenBatch<T: Real> {
    pub graphs: Vec<GraphTokens<T>>,
}

impl<T: Real> GraphTokenBatch<T> {
    /// Token ranges of each graph in the stacked order.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.graphs
            .iter()
            .map(|g| {
                let r = start..start + g.num_nodes + g.num_edges;
                start = r.end;
                r
            })
            .collect()
    }

    /// Mean over each graph's own tokens: `B x d`.
    pub fn pooled(&self, per_graph: &[Tensor<T>]) -> Result<Tensor<T>> {
        let rows = per_graph
            .iter()
            .map(|t| {
                let d = t.shape()[1];
                t.mean_rows().reshape(&[1, d])
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_rows(&rows.iter().collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GraphBridge {
    /// Per-dimension noise scale; the encoding variance is its square.
    pub sigma: ParamId,
    pub phi: Mlp,
    pub phi_node: Mlp,
    pub phi_edge: Mlp,
    pub d_model: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
}

impl GraphBridge {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        d_model: usize,
        node_dim: usize,
        edge_dim: usize,
    ) -> Self {
        let d = d_model;
        Self {
            sigma: store.init(seed, &format!("{name}.sigma"), &[d], Init::Constant(1.0)),
            phi: Mlp::new(store, seed, &format!("{name}.phi"), node_dim, d, d),
            phi_node: Mlp::new(store, seed, &format!("{name}.phi_node"), d + node_dim, d, d),
            phi_edge: Mlp::new(store, seed, &format!("{name}.phi_edge"), d + edge_dim, d, d),
            d_model,
            node_dim,
            edge_dim,
        }
    }

    /// Standard-normal draws for `num_nodes` encodings.
    pub fn draw_noise<T: Real>(&self, rng: &mut GumbelRng, num_nodes: usize) -> Array<T> {
        Array::from_fn(&[num_nodes, self.d_model], |_| T::of(rng.normal()))
    }

    /// `eps * sigma + phi(x)`; no noise term when `eps` is `None`.
    pub fn node_positional_encoding<T: Real>(
        &self,
        p: &Bound<T>,
        x: &Tensor<T>,
        eps: Option<&Array<T>>,
    ) -> Result<Tensor<T>> {
        if x.value().ndim() != 2 || x.shape()[1] != self.node_dim {
            return Err(Error::shape(
                "node_positional_encoding",
                x.shape(),
                &[0, self.node_dim],
            ));
        }
        let mean = self.phi.forward(p, x)?;
        match eps {
            Some(e) => Tensor::constant(e.clone())
                .mul(p.get(self.sigma))?
                .add(&mean),
            None => Ok(mean),
        }
    }

    pub fn tokenize<T: Real>(
        &self,
        p: &Bound<T>,
        graph: &GraphInstance,
        rng: Option<&mut GumbelRng>,
    ) -> Result<GraphTokens<T>> {
        let eps = rng.map(|r| self.draw_noise(r, graph.num_nodes()));
        self.tokenize_with_noise(p, graph, eps.as_ref())
    }

    pub fn tokenize_with_noise<T: Real>(
        &self,
        p: &Bound<T>,
        graph: &GraphInstance,
        eps: Option<&Array<T>>,
    ) -> Result<GraphTokens<T>> {
        if graph.node_dim() != self.node_dim || graph.edge_dim() != self.edge_dim {
            return Err(Error::shape(
                "graph_tokenize",
                &[graph.node_dim(), graph.edge_dim()],
                &[self.node_dim, self.edge_dim],
            ));
        }
        if graph.num_nodes() == 0 {
            return Err(Error::NotEnoughCandidates { k: 1, available: 0 });
        }
        let x = Tensor::constant(graph.node_features.cast::<T>());
        let pe = self.node_positional_encoding(p, &x, eps)?;
        let nodes = self
            .phi_node
            .forward(p, &Tensor::concat_cols(&[&pe, &x])?)?;
        let tokens = if graph.num_edges() == 0 {
            nodes
        } else {
            let edge_pe = edge_positional_encoding(&pe, &graph.edges)?;
            let e = Tensor::constant(graph.edge_features.cast::<T>());
            let edges = self
                .phi_edge
                .forward(p, &Tensor::concat_cols(&[&edge_pe, &e])?)?;
            Tensor::concat_rows(&[&nodes, &edges])?
        };
        Ok(GraphTokens {
            tokens,
            num_nodes: graph.num_nodes(),
            num_edges: graph.num_edges(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path_graph() -> GraphInstance {
        GraphInstance::parse("3 2 2 1\n0.5 1.0\n0 -1\n2 0.25\n0 1 0.7\n1 2 -0.3\ntarget 1.5\n")
            .unwrap()
    }

    fn bridge(d: usize, f: usize, g: usize) -> (ParamStore<f64>, GraphBridge) {
        let mut s = ParamStore::new();
        let b = GraphBridge::new(&mut s, 5, "graph", d, f, g);
        (s, b)
    }

    #[test]
    fn parse_roundtrip() {
        let g = path_graph();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.target, Some(1.5));
        assert_eq!(GraphInstance::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = GraphInstance::parse("2 1 1 0\n1\n2\n0 5\n").unwrap_err();
        assert!(matches!(e, Error::GraphParse { line: 4, .. }), "{e}");
        assert!(GraphInstance::parse("2 0 1 0\n1 2\n3\n").is_err());
        assert!(GraphInstance::parse("1 0 1\n1\n").is_err());
        assert!(GraphInstance::parse("1 0 1 0\n1\nextra\n").is_err());
    }

    #[test]
    fn symmetrize_adds_missing_reverse_edges() {
        let g = path_graph().symmetrized();
        assert_eq!(g.edges, vec![(0, 1), (1, 2), (1, 0), (2, 1)]);
        assert_eq!(g.edge_features.row(2), &[0.7]);
        assert_eq!(g.symmetrized(), g);
    }

    #[test]
    fn token_counts() {
        let (s, b) = bridge(4, 2, 1);
        let p = s.bind(false);
        let t = b
            .tokenize(&p, &path_graph(), Some(&mut GumbelRng::new(0)))
            .unwrap();
        assert_eq!(t.tokens.shape(), &[5, 4]);
        assert_eq!(
            t.kinds()[2..],
            [TokenKind::Node, TokenKind::Edge, TokenKind::Edge]
        );
        let lonely =
            GraphInstance::new(Array::ones(&[2, 2]), vec![], Array::zeros(&[0, 1]), None).unwrap();
        let t = b.tokenize(&p, &lonely, None).unwrap();
        assert_eq!(t.tokens.shape(), &[2, 4]);
        assert!(t.kinds().iter().all(|k| *k == TokenKind::Node));
    }

    #[test]
    fn dangling_edges_rejected() {
        let e = GraphInstance::new(
            Array::ones(&[2, 1]),
            vec![(0, 2)],
            Array::zeros(&[1, 0]),
            None,
        );
        assert!(matches!(e, Err(Error::IndexOutOfRange { index: 2, .. })));
        let p = Tensor::constant(Array::<f64>::ones(&[2, 3]));
        assert!(edge_positional_encoding(&p, &[(1, 2)]).is_err());
    }

    #[test]
    fn degenerate_parameters() {
        let (mut s, b) = bridge(3, 2, 0);
        s.get_mut(b.sigma).data_mut().fill(0.0);
        s.get_mut(b.phi.second.w).data_mut().fill(0.0);
        s.get_mut(b.phi.second.b).data_mut().fill(0.0);
        let p = s.bind(false);
        let x = Tensor::constant(Array::<f64>::from_fn(&[4, 2], |i| i as f64));
        let eps = b.draw_noise(&mut GumbelRng::new(1), 4);
        let pe = b.node_positional_encoding(&p, &x, Some(&eps)).unwrap();
        assert!(pe.data().iter().all(|v| *v == 0.0));

        let (mut s, b) = bridge(3, 2, 0);
        s.get_mut(b.sigma).data_mut().fill(0.0);
        let p = s.bind(false);
        let with = b.node_positional_encoding(&p, &x, Some(&eps)).unwrap();
        let without = b.node_positional_encoding(&p, &x, None).unwrap();
        assert_eq!(with.data(), without.data());
    }

    #[test]
    fn edge_encoding_examples() {
        let p = Tensor::constant(
            Array::<f64>::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap(),
        );
        let e = edge_positional_encoding(&p, &[(1, 1), (0, 1), (1, 0), (1, 2), (0, 2)]).unwrap();
        let v = e.value();
        assert_eq!(v.row(0), &[0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 3.0]);
        assert_eq!(v.row(2), &[-0.5, -3.0]);
        let summed: Vec<f64> = v.row(1).iter().zip(v.row(3)).map(|(a, b)| a + b).collect();
        assert_eq!(summed, v.row(4));
    }

    #[test]
    fn relabeling_permutes_tokens() {
        let (s, b) = bridge(4, 2, 1);
        let p = s.bind(false);
        let g = path_graph().symmetrized();
        let perm = [2, 0, 1];
        let gp = g.relabeled(&perm).unwrap();
        let eps = b.draw_noise::<f64>(&mut GumbelRng::new(3), 3);
        // Node i's draw moves with it to position perm[i].
        let mut eps_p = Array::zeros(&[3, 4]);
        for (i, &pi) in perm.iter().enumerate() {
            eps_p.row_mut(pi).copy_from_slice(eps.row(i));
        }
        let a = b.tokenize_with_noise(&p, &g, Some(&eps)).unwrap().tokens;
        let c = b.tokenize_with_noise(&p, &gp, Some(&eps_p)).unwrap().tokens;
        for (i, &pi) in perm.iter().enumerate().take(3) {
            assert!(a
                .value()
                .row(i)
                .iter()
                .zip(c.value().row(pi))
                .all(|(x, y)| (x - y).abs() < 1e-12));
        }
        // Edges keep their order, so edge tokens match row for row.
        for e in 3..7 {
            assert!(a
                .value()
                .row(e)
                .iter()
                .zip(c.value().row(e))
                .all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn noise_variance_matches_sigma_squared() {
        let (mut s, b) = bridge(3, 1, 0);
        s.get_mut(b.sigma)
            .data_mut()
            .copy_from_slice(&[0.5, 1.0, 2.0]);
        let p = s.bind(false);
        let n = 100_000;
        let x = Tensor::constant(Array::<f64>::zeros(&[n, 1]));
        let eps = b.draw_noise(&mut GumbelRng::new(9), n);
        let pe = b.node_positional_encoding(&p, &x, Some(&eps)).unwrap();
        let mean = b.node_positional_encoding(&p, &x, None).unwrap();
        let diff = pe.value().zip_map(mean.value(), |a, c| a - c);
        for (c, want) in [0.25, 1.0, 4.0].into_iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|r| diff.get2(r, c)).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                (var / want - 1.0).abs() < 0.02,
                "column {c}: {var} vs {want}"
            );
        }
    }

    #[test]
    fn gradients_reach_sigma_and_every_mlp() {
        let (s, b) = bridge(4, 2, 1);
        let p = s.bind(true);
        let eps = b.draw_noise(&mut GumbelRng::new(4), 3);
        let t = b
            .tokenize_with_noise(&p, &path_graph(), Some(&eps))
            .unwrap();
        t.tokens.mul(&t.tokens).unwrap().mean().backward().unwrap();
        for id in [
            b.sigma,
            b.phi.first.w,
            b.phi_node.first.w,
            b.phi_edge.second.w,
        ] {
            let g = p.get(id).grad().unwrap().clone();
            assert!(g.data().iter().any(|v| *v != 0.0), "{}", s.name(id));
        }
    }

    #[test]
    fn batch_segments_and_pooling() {
        let (s, b) = bridge(2, 2, 1);
        let p = s.bind(false);
        let g = path_graph();
        let single =
            GraphInstance::new(Array::ones(&[1, 2]), vec![], Array::zeros(&[0, 1]), None).unwrap();
        let batch = GraphTokenBatch {
            graphs: vec![
                b.tokenize(&p, &g, None).unwrap(),
                b.tokenize(&p, &single, None).unwrap(),
            ],
        };
        assert_eq!(batch.segments(), vec![0..5, 5..6]);
        let toks: Vec<Tensor<f64>> = batch.graphs.iter().map(|g| g.tokens.clone()).collect();
        let pooled = batch.pooled(&toks).unwrap();
        assert_eq!(pooled.shape(), &[2, 2]);
        assert_eq!(pooled.value().row(1), toks[1].data());
    }

    proptest! {
        #[test]
        fn antisymmetry(values in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let p = Tensor::constant(Array::new(vec![4, 3], values).unwrap());
            let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
            let rev: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
            let a = edge_positional_encoding(&p, &pairs).unwrap();
            let b = edge_positional_encoding(&p, &rev).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == -*y));
        }

        /// Exact on a dyadic grid where every subtraction is exact.
        #[test]
        fn telescoping_exact(grid in proptest::collection::vec(-(1i64 << 20)..(1i64 << 20), 15), path in proptest::collection::vec(0usize..5, 2..8)) {
            let p = Tensor::constant(Array::new(vec![5, 3], grid.iter().map(|&v| v as f64 / 1024.0).collect()).unwrap());
            let edges: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0], w[1])).collect();
            let e = edge_positional_encoding(&p, &edges).unwrap();
            let direct = edge_positional_encoding(&p, &[(path[0], *path.last().unwrap())]).unwrap();
            for c in 0..3 {
                let sum: f64 = (0..edges.len()).map(|r| e.value().get2(r, c)).sum();
                prop_assert_eq!(sum, direct.value().get2(0, c));
            }
        }

        #[test]
        fn telescoping_within_rounding(values in proptest::collection::vec(-10f32..10.0, 15), path in proptest::collection::vec(0usize..5, 2..8)) {
            let p = Tensor::constant(Array::new(vec![5, 3], values).unwrap());
            let edges: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0], w[1])).collect();
            let e = edge_positional_encoding(&p, &edges).unwrap();
            let direct = edge_positional_encoding(&p, &[(path[0], *path.last().unwrap())]).unwrap();
            for c in 0..3 {
                let sum: f32 = (0..edges.len()).map(|r| e.value().get2(r, c)).sum();
                let bound = 2.0 * edges.len() as f32 * 20.0 * f32::EPSILON;
                prop_assert!((sum - direct.value().get2(0, c)).abs() <= bound);
            }
        }
    }
}
