//! Hamiltonian graphs: qubits become nodes, interacting pairs become edges.
//!
//! Node features are a scheme-dependent base vector followed by the
//! one-local coefficients for the scheme's field axes. Edge features hold the
//! two-local coefficients selected by the scheme's edge layout.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::pauli::{Family, Hamiltonian, PauliAxis, PauliError};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("coupling {a}{b} on ({i}, {j}) is nonzero but absent from the edge layout")]
    UnrepresentableCoupling { i: usize, j: usize, a: PauliAxis, b: PauliAxis },
    #[error("field {a} on site {i} is nonzero but the scheme has no slot for it")]
    UnrepresentableField { i: usize, a: PauliAxis },
    #[error("edge layout has {0} components, at most 9 allowed")]
    LayoutTooLong(usize),
    #[error("scheme has {0} field slots, at most 3 allowed")]
    TooManyFields(usize),
    #[error("scheme needs {expected} nodes, Hamiltonian has {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("edge ({0}, {1}) invalid: need i < j < n")]
    BadEdge(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("{what}: expected {expected} values, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("cannot standardize an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

/// Base part of each node's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// `e_i`, dimension `n`.
    OneHot,
    /// The constant `1`, identical on every node.
    PermInvariant,
    /// Centered lattice coordinates `(x, y)` under row-major numbering.
    LatticeCoord { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureScheme {
    pub node: NodeKind,
    /// One-local axes appended to each node's base features.
    pub field_axes: Vec<PauliAxis>,
    /// Two-local axis pairs stored per edge, in column order.
    pub edge_layout: Vec<(PauliAxis, PauliAxis)>,
}

const XX_YY_ZZ: [(PauliAxis, PauliAxis); 3] = [
    (PauliAxis::X, PauliAxis::X),
    (PauliAxis::Y, PauliAxis::Y),
    (PauliAxis::Z, PauliAxis::Z),
];

impl FeatureScheme {
    pub fn one_hot() -> Self {
        Self {
            node: NodeKind::OneHot,
            field_axes: Vec::new(),
            edge_layout: XX_YY_ZZ.to_vec(),
        }
    }

    /// `o_i = (1, K^a ...)` for the given field axes.
    pub fn perm_invariant_field(field_axes: &[PauliAxis]) -> Self {
        Self {
            node: NodeKind::PermInvariant,
            field_axes: field_axes.to_vec(),
            edge_layout: XX_YY_ZZ.to_vec(),
        }
    }

    pub fn lattice_coord(rows: usize, cols: usize) -> Self {
        Self {
            node: NodeKind::LatticeCoord { rows, cols },
            field_axes: Vec::new(),
            edge_layout: XX_YY_ZZ.to_vec(),
        }
    }

    /// The pairing used by the benchmark experiments.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Xxz1d => Self::one_hot(),
            Family::XxzX1d => Self::perm_invariant_field(&[PauliAxis::X]),
            Family::XxzZ1d => Self::perm_invariant_field(&[PauliAxis::Z]),
            Family::Xxz2d33 | Family::Xyz2d33 => Self::lattice_coord(3, 3),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.edge_layout.len() > 9 {
            return Err(GraphError::LayoutTooLong(self.edge_layout.len()));
        }
        if self.field_axes.len() > 3 {
            return Err(GraphError::TooManyFields(self.field_axes.len()));
        }
        Ok(())
    }

    pub fn base_dim(&self, n: usize) -> usize {
        match self.node {
            NodeKind::OneHot => n,
            NodeKind::PermInvariant => 1,
            NodeKind::LatticeCoord { .. } => 2,
        }
    }

    /// `d_o + d_s`.
    pub fn node_dim(&self, n: usize) -> usize {
        self.base_dim(n) + self.field_axes.len()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_layout.len()
    }

    fn base_features<T: Real>(&self, n: usize, i: usize) -> Result<Vec<T>, GraphError> {
        Ok(match self.node {
            NodeKind::OneHot => (0..n).map(|k| if k == i { T::one() } else { T::zero() }).collect(),
            NodeKind::PermInvariant => vec![T::one()],
            NodeKind::LatticeCoord { rows, cols } => {
                if rows * cols != n {
                    return Err(GraphError::SizeMismatch {
                        expected: rows * cols,
                        got: n,
                    });
                }
                let (r, c) = (i / cols, i % cols);
                let x = c as f64 - (cols as f64 - 1.0) / 2.0;
                let y = r as f64 - (rows as f64 - 1.0) / 2.0;
                vec![T::lit(x), T::lit(y)]
            }
        })
    }
}

/// `G = (O, E)` with row-major feature storage.
#[derive(Debug, Clone, PartialEq)]
pub struct HGraph<T> {
    n: usize,
    node_dim: usize,
    edge_dim: usize,
    o: Vec<T>,
    edges: Vec<(usize, usize)>,
    e: Vec<T>,
}

impl<T: Real> HGraph<T> {
    pub fn new(
        n: usize,
        node_dim: usize,
        edge_dim: usize,
        o: Vec<T>,
        edges: Vec<(usize, usize)>,
        e: Vec<T>,
    ) -> Result<Self, GraphError> {
        if o.len() != n * node_dim {
            return Err(GraphError::Shape {
                what: "node features",
                expected: n * node_dim,
                got: o.len(),
            });
        }
        if e.len() != edges.len() * edge_dim {
            return Err(GraphError::Shape {
                what: "edge features",
                expected: edges.len() * edge_dim,
                got: e.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &edges {
            if i >= j || j >= n {
                return Err(GraphError::BadEdge(i, j));
            }
            if !seen.insert((i, j)) {
                return Err(GraphError::DuplicateEdge(i, j));
            }
        }
        Ok(Self {
            n,
            node_dim,
            edge_dim,
            o,
            edges,
            e,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-major `n x node_dim`.
    pub fn node_features(&self) -> &[T] {
        &self.o
    }

    /// Row-major `m x edge_dim`, aligned with [`HGraph::edges`].
    pub fn edge_features(&self) -> &[T] {
        &self.e
    }

    pub fn node_row(&self, i: usize) -> &[T] {
        &self.o[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn edge_row(&self, k: usize) -> &[T] {
        &self.e[k * self.edge_dim..(k + 1) * self.edge_dim]
    }

    /// Neighbor lists as `(neighbor, edge index)` pairs.
    pub fn neighbors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            adj[i].push((j, k));
            adj[j].push((i, k));
        }
        adj
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        self.neighbors()
            .iter()
            .enumerate()
            .filter(|(_, nb)| nb.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Autoencoder targets `(O, E)`, returned verbatim.
    pub fn reconstruct_targets(&self) -> (&[T], &[T]) {
        (&self.o, &self.e)
    }

    /// Same graph with replaced feature matrices.
    pub fn with_features(&self, o: Vec<T>, e: Vec<T>) -> Result<Self, GraphError> {
        Self::new(self.n, self.node_dim, self.edge_dim, o, self.edges.clone(), e)
    }

    /// Node relabeling `i -> perm[i]`; edges re-sorted ascending with their features.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::Shape {
                what: "permutation",
                expected: self.n,
                got: perm.len(),
            });
        }
        let mut o = vec![T::zero(); self.o.len()];
        for i in 0..self.n {
            o[perm[i] * self.node_dim..(perm[i] + 1) * self.node_dim].copy_from_slice(self.node_row(i));
        }
        let mut rows: Vec<((usize, usize), &[T])> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let (a, b) = (perm[i], perm[j]);
                ((a.min(b), a.max(b)), self.edge_row(k))
            })
            .collect();
        rows.sort_by_key(|r| r.0);
        let edges = rows.iter().map(|r| r.0).collect();
        let e = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
        Self::new(self.n, self.node_dim, self.edge_dim, o, edges, e)
    }
}

/// Builds the H-graph of `h` under `scheme`.
///
/// Fails instead of dropping any nonzero coefficient the scheme cannot hold.
pub fn encode<T: Real>(h: &Hamiltonian<T>, scheme: &FeatureScheme) -> Result<HGraph<T>, GraphError> {
    scheme.validate()?;
    let n = h.n();
    for (k, _) in h.two_local() {
        if !scheme.edge_layout.contains(&(k.a, k.b)) {
            return Err(GraphError::UnrepresentableCoupling {
                i: k.i,
                j: k.j,
                a: k.a,
                b: k.b,
            });
        }
    }
    for (&(i, a), _) in h.one_local() {
        if !scheme.field_axes.contains(&a) {
            return Err(GraphError::UnrepresentableField { i, a });
        }
    }
    let node_dim = scheme.node_dim(n);
    let mut o = Vec::with_capacity(n * node_dim);
    for i in 0..n {
        o.extend(scheme.base_features::<T>(n, i)?);
        o.extend(scheme.field_axes.iter().map(|&a| h.field(i, a)));
    }
    let edges = h.interacting_pairs();
    let mut e = Vec::with_capacity(edges.len() * scheme.edge_dim());
    for &(i, j) in &edges {
        e.extend(scheme.edge_layout.iter().map(|&(a, b)| h.coupling(i, a, j, b)));
    }
    HGraph::new(n, node_dim, scheme.edge_dim(), o, edges, e)
}

/// Inverse of [`encode`]: reads couplings and fields back out of the features.
pub fn decode<T: Real>(g: &HGraph<T>, scheme: &FeatureScheme) -> Result<Hamiltonian<T>, GraphError> {
    let base = scheme.base_dim(g.n());
    if g.node_dim() != scheme.node_dim(g.n()) || g.edge_dim() != scheme.edge_dim() {
        return Err(GraphError::Shape {
            what: "graph dimensions",
            expected: scheme.node_dim(g.n()) + scheme.edge_dim(),
            got: g.node_dim() + g.edge_dim(),
        });
    }
    let mut h = Hamiltonian::new(g.n())?;
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        for (&(a, b), &c) in scheme.edge_layout.iter().zip(g.edge_row(k)) {
            h.add_two_local(i, a, j, b, c)?;
        }
    }
    for i in 0..g.n() {
        for (&a, &c) in scheme.field_axes.iter().zip(&g.node_row(i)[base..]) {
            h.add_one_local(i, a, c)?;
        }
    }
    Ok(h)
}

#[derive(Serialize, Deserialize)]
struct GraphDoc<T> {
    n: usize,
    #[serde(rename = "O")]
    o: Vec<Vec<T>>,
    edges: Vec<(usize, usize)>,
    #[serde(rename = "E")]
    e: Vec<Vec<T>>,
    /// Only needed to keep the edge width when there are no edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_e: Option<usize>,
}

impl<T: Real> Serialize for HGraph<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphDoc {
            n: self.n,
            o: (0..self.n).map(|i| self.node_row(i).to_vec()).collect(),
            edges: self.edges.clone(),
            e: (0..self.m()).map(|k| self.edge_row(k).to_vec()).collect(),
            d_e: if self.edges.is_empty() { Some(self.edge_dim) } else { None },
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for HGraph<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = GraphDoc::<T>::deserialize(d)?;
        let node_dim = doc.o.first().map_or(0, Vec::len);
        let edge_dim = doc.e.first().map_or(doc.d_e.unwrap_or(0), Vec::len);
        if doc.o.len() != doc.n || doc.o.iter().any(|r| r.len() != node_dim) {
            return Err(D::Error::custom("ragged or missing node feature rows"));
        }
        if doc.e.iter().any(|r| r.len() != edge_dim) {
            return Err(D::Error::custom("ragged edge feature rows"));
        }
        HGraph::new(
            doc.n,
            node_dim,
            edge_dim,
            doc.o.into_iter().flatten().collect(),
            doc.edges,
            doc.e.into_iter().flatten().collect(),
        )
        .map_err(D::Error::custom)
    }
}

/// Per-column affine standardization of node and edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub node_mean: Vec<T>,
    pub node_scale: Vec<T>,
    pub edge_mean: Vec<T>,
    pub edge_scale: Vec<T>,
}

fn column_stats<T: Real>(rows: impl Iterator<Item = Vec<T>>, dim: usize) -> (Vec<T>, Vec<T>) {
    let rows: Vec<Vec<T>> = rows.collect();
    let count = T::from_usize(rows.len().max(1)).unwrap();
    let mean: Vec<T> = (0..dim).map(|c| rows.iter().map(|r| r[c]).sum::<T>() / count).collect();
    let scale = (0..dim)
        .map(|c| {
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<T>() / count;
            // Constant columns are only centered.
            if var > T::zero() {
                var.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    (mean, scale)
}

impl<T: Real> Standardizer<T> {
    pub fn fit(graphs: &[HGraph<T>]) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::EmptyDataset)?;
        let (nd, ed) = (first.node_dim(), first.edge_dim());
        let (node_mean, node_scale) = column_stats(
            graphs.iter().flat_map(|g| (0..g.n()).map(move |i| g.node_row(i).to_vec())),
            nd,
        );
        let (edge_mean, edge_scale) = column_stats(
            graphs.iter().flat_map(|g| (0..g.m()).map(move |k| g.edge_row(k).to_vec())),
            ed,
        );
        Ok(Self {
            node_mean,
            node_scale,
            edge_mean,
            edge_scale,
        })
    }

    pub fn apply(&self, g: &HGraph<T>) -> Result<HGraph<T>, GraphError> {
        let map = |v: &[T], mean: &[T], scale: &[T]| -> Vec<T> {
            v.iter()
                .enumerate()
                .map(|(k, &x)| (x - mean[k % mean.len()]) / scale[k % scale.len()])
                .collect()
        };
        if g.node_dim() != self.node_mean.len() || g.edge_dim() != self.edge_mean.len() {
            return Err(GraphError::Shape {
                what: "standardizer columns",
                expected: self.node_mean.len() + self.edge_mean.len(),
                got: g.node_dim() + g.edge_dim(),
            });
        }
        let o = if g.node_dim() == 0 {
            Vec::new()
        } else {
            map(g.node_features(), &self.node_mean, &self.node_scale)
        };
        let e = if g.edge_dim() == 0 {
            Vec::new()
        } else {
            map(g.edge_features(), &self.edge_mean, &self.edge_scale)
        };
        g.with_features(o, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_family, FamilySpec};

    fn build(family: Family, n: usize, params: &[(&str, f64)]) -> Hamiltonian<f64> {
        build_family(&FamilySpec::new(family, n, params)).unwrap()
    }

    #[test]
    fn xxz_ring_one_hot() {
        let g = encode(&build(Family::Xxz1d, 6, &[("Jzz", 2.0)]), &FeatureScheme::one_hot()).unwrap();
        assert_eq!(g.m(), 6);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(g.node_row(i)[j], if i == j { 1.0 } else { 0.0 });
            }
        }
        for k in 0..6 {
            assert_eq!(g.edge_row(k), &[1.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn perm_invariant_field_features() {
        let h = build(Family::XxzX1d, 4, &[("Jzz", 1.0), ("Kx", 0.5)]);
        let g = encode(&h, &FeatureScheme::for_family(Family::XxzX1d)).unwrap();
        for i in 0..4 {
            assert_eq!(g.node_row(i), &[1.0, 0.5]);
        }
        for k in 0..g.m() {
            assert_eq!(g.edge_row(k), &[1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn xxz_plus_z_puts_anisotropy_on_edges_and_field_on_nodes() {
        let h = build(Family::XxzZ1d, 4, &[("lambda", 0.7), ("Delta", -0.3)]);
        let g = encode(&h, &FeatureScheme::for_family(Family::XxzZ1d)).unwrap();
        assert_eq!(g.edge_row(0), &[1.0, 1.0, 0.7]);
        assert_eq!(g.node_row(2), &[1.0, -0.3]);
    }

    #[test]
    fn four_ring_by_hand() {
        let g = encode(&build(Family::Xxz1d, 4, &[("Jzz", -1.5)]), &FeatureScheme::one_hot()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        let (o, e) = g.reconstruct_targets();
        #[rustfmt::skip]
        let o_hand = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        assert_eq!(o, &o_hand);
        assert_eq!(e, &[1.0, 1.0, -1.5].repeat(4)[..]);
    }

    #[test]
    fn rejects_what_the_scheme_cannot_hold() {
        let h = build(Family::XxzX1d, 4, &[("Jzz", 1.0), ("Kx", 0.5)]);
        assert!(matches!(
            encode(&h, &FeatureScheme::one_hot()),
            Err(GraphError::UnrepresentableField { .. })
        ));
        let mut h = Hamiltonian::<f64>::new(3).unwrap();
        h.add_two_local(0, PauliAxis::X, 1, PauliAxis::Z, 1.0).unwrap();
        assert!(matches!(
            encode(&h, &FeatureScheme::one_hot()),
            Err(GraphError::UnrepresentableCoupling { .. })
        ));
        let h = build(Family::Xxz1d, 4, &[("Jzz", 1.0)]);
        assert!(matches!(
            encode(&h, &FeatureScheme::lattice_coord(3, 3)),
            Err(GraphError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn lattice_coordinates_row_major() {
        let h = build(Family::Xxz2d33, 9, &[("Jzz1", 1.0), ("Jzz2", 0.5)]);
        let g = encode(&h, &FeatureScheme::lattice_coord(3, 3)).unwrap();
        assert_eq!(g.node_row(0), &[-1.0, -1.0]);
        assert_eq!(g.node_row(5), &[1.0, 0.0]);
        assert_eq!(g.m(), 20);
    }

    #[test]
    fn empty_graph_has_no_edge_rows() {
        let g = encode(&Hamiltonian::<f64>::new(3).unwrap(), &FeatureScheme::one_hot()).unwrap();
        assert_eq!(g.m(), 0);
        assert!(g.reconstruct_targets().1.is_empty());
        assert_eq!(g.isolated_nodes(), vec![0, 1, 2]);
        let back: HGraph<f64> = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn json_shape() {
        let g = encode(&build(Family::XxzX1d, 3, &[("Jzz", 0.25), ("Kx", 2.0)]), &FeatureScheme::for_family(Family::XxzX1d)).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(
            s,
            r#"{"n":3,"O":[[1.0,2.0],[1.0,2.0],[1.0,2.0]],"edges":[[0,1],[0,2],[1,2]],"E":[[1.0,1.0,0.25],[1.0,1.0,0.25],[1.0,1.0,0.25]]}"#
        );
        let back: HGraph<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(matches!(
            HGraph::<f64>::new(2, 1, 1, vec![0.0, 0.0], vec![(1, 0)], vec![1.0]),
            Err(GraphError::BadEdge(1, 0))
        ));
        assert!(matches!(
            HGraph::<f64>::new(2, 1, 1, vec![0.0, 0.0], vec![(0, 1), (0, 1)], vec![1.0, 1.0]),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
        assert!(HGraph::<f64>::new(2, 1, 1, vec![0.0], vec![], vec![]).is_err());
    }

    #[test]
    fn standardizer_centers_columns() {
        let graphs: Vec<HGraph<f64>> = [-1.0, 1.0]
            .iter()
            .map(|&j| encode(&build(Family::Xxz1d, 3, &[("Jzz", j)]), &FeatureScheme::one_hot()).unwrap())
            .collect();
        let s = Standardizer::fit(&graphs).unwrap();
        assert_eq!(s.edge_mean, vec![1.0, 1.0, 0.0]);
        assert_eq!(s.edge_scale, vec![1.0, 1.0, 1.0]);
        let z = s.apply(&graphs[0]).unwrap();
        assert_eq!(z.edge_row(0), &[0.0, 0.0, -1.0]);
    }
}
