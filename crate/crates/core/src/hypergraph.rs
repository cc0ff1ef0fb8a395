//! Stock-to-stock relations plus implicit factor-to-stock links.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::data::csv_reader;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Undirected edges `(i, j)` with `i < j`, one sorted list per relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    pub names: Vec<String>,
    pub edges: Vec<Vec<(usize, usize)>>,
}

impl RelationSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Hypergraph {
    pub n_stocks: usize,
    pub n_factors: usize,
    pub include_factors: bool,
    pub relations: RelationSet,
    degrees: Vec<usize>,
    pairs: BTreeMap<(usize, usize), Vec<usize>>,
}

impl Hypergraph {
    /// `edges` are `(i, j, relation)` triples; each is symmetrized.
    pub fn new(
        n_stocks: usize,
        n_factors: usize,
        relation_names: Vec<String>,
        edges: &[(usize, usize, usize)],
        include_factors: bool,
    ) -> Result<Self> {
        let m = relation_names.len();
        let mut sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); m];
        for (k, &(i, j, r)) in edges.iter().enumerate() {
            if i >= n_stocks || j >= n_stocks || r >= m {
                return Err(Error::load(
                    "relations",
                    format!("edge {k} ({i},{j},{r}) out of range for N={n_stocks}, M={m}"),
                ));
            }
            if i == j {
                return Err(Error::load("relations", format!("edge {k}: self-loop on {i}")));
            }
            sets[r].insert((i.min(j), i.max(j)));
        }
        let mut degrees = vec![0; n_stocks];
        let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (r, set) in sets.iter().enumerate() {
            for &(i, j) in set {
                degrees[i] += 1;
                degrees[j] += 1;
                pairs.entry((i, j)).or_default().push(r);
            }
        }
        Ok(Hypergraph {
            n_stocks,
            n_factors,
            include_factors,
            relations: RelationSet {
                names: relation_names,
                edges: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            },
            degrees,
            pairs,
        })
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Width of a relation vector, `M + B`.
    pub fn relation_width(&self) -> usize {
        self.n_relations() + self.n_factors
    }

    pub fn n_vertices(&self) -> usize {
        self.n_stocks + self.n_factors
    }

    /// `d_j`: relation-weighted neighbor count of stock `j`.
    pub fn degree(&self, j: usize) -> usize {
        self.degrees[j]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Same relations, with or without the factor vertices.
    pub fn with_factors(&self, include: bool) -> Hypergraph {
        Hypergraph { include_factors: include, ..self.clone() }
    }

    /// `a_{i,j}` over `M + B` coordinates.
    pub fn relation_vector(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let nv = self.n_vertices();
        if i >= nv || j >= nv || i == j {
            return Err(Error::Usage(format!("vertex pair ({i},{j}) invalid")));
        }
        let m = self.n_relations();
        let mut a = vec![0.0; self.relation_width()];
        let (n, si, sj) = (self.n_stocks, i < self.n_stocks, j < self.n_stocks);
        if si && sj {
            if let Some(rs) = self.pairs.get(&(i.min(j), i.max(j))) {
                for &r in rs {
                    a[r] = 1.0;
                }
            }
        } else if self.include_factors && (si || sj) {
            let f = if si { j - n } else { i - n };
            a[m + f] = 1.0;
        }
        Ok(a)
    }

    /// Relation vectors for every (stock `i`, vertex `j`) pair as rows `i * (N+B) + j`;
    /// the diagonal rows are zero.
    pub fn relation_tensor(&self) -> Tensor {
        let (n, nv, w) = (self.n_stocks, self.n_vertices(), self.relation_width());
        let mut out = vec![0.0; n * nv * w];
        for i in 0..n {
            for j in 0..nv {
                if i != j {
                    let a = self.relation_vector(i, j).expect("valid pair");
                    out[(i * nv + j) * w..(i * nv + j + 1) * w].copy_from_slice(&a);
                }
            }
        }
        Tensor::from_vec(&[n * nv, w], out).expect("finite")
    }

    /// Row-normalized any-relation adjacency.
    pub fn collapse(&self) -> CollapsedAdjacency {
        let n = self.n_stocks;
        let mut adj = vec![0.0; n * n];
        for &(i, j) in self.pairs.keys() {
            adj[i * n + j] = 1.0;
            adj[j * n + i] = 1.0;
        }
        for row in adj.chunks_mut(n.max(1)) {
            let ni: f64 = row.iter().sum();
            if ni > 0.0 {
                row.iter_mut().for_each(|w| *w /= ni);
            }
        }
        CollapsedAdjacency { n, weights: adj }
    }
}

/// `w_{i,j} = a_{i,j} / n_i` with `a_{i,j} = 1` iff any relation links `i` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedAdjacency {
    pub n: usize,
    pub weights: Vec<f64>,
}

impl CollapsedAdjacency {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// `sum_j w_{i,j} x_j` for every `i`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// Reads `i,j,relation_id` rows.
pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, usize)>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::load(&shown, format!("row {}: {e}", k + 2)))?;
        let get = |c: usize| -> Result<usize> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::load(&shown, format!("row {}: bad integer in column {c}", k + 2)))
        };
        out.push((get(0)?, get(1)?, get(2)?));
    }
    Ok(out)
}

/// Reads `relation_id,name` rows; ids must be exactly `0..M`.
pub fn load_relation_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let mut named = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::load(&shown, format!("row {}: {e}", k + 2)))?;
        let id: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::load(&shown, format!("row {}: bad relation id", k + 2)))?;
        named.insert(id, rec.get(1).unwrap_or("").to_string());
    }
    if named.keys().enumerate().any(|(k, &id)| k != id) {
        return Err(Error::load(&shown, "relation ids must be 0..M without gaps"));
    }
    Ok(named.into_values().collect())
}

/// Loads the edge list and its companion `relations_meta.csv` (looked up next to it
/// when `meta` is `None`).
pub fn build_hypergraph(
    edges: impl AsRef<Path>,
    meta: Option<&Path>,
    n_stocks: usize,
    n_factors: usize,
    include_factors: bool,
) -> Result<Hypergraph> {
    let edges = edges.as_ref();
    let list = load_edges(edges)?;
    let default_meta = edges.with_file_name("relations_meta.csv");
    let meta = meta.unwrap_or(&default_meta);
    let names = if meta.exists() {
        load_relation_names(meta)?
    } else {
        let m = list.iter().map(|e| e.2 + 1).max().unwrap_or(0);
        (0..m).map(|r| format!("relation_{r}")).collect()
    };
    Hypergraph::new(n_stocks, n_factors, names, &list, include_factors)
}
