//! DAG representation, enumeration, causal orders and structural queries.
//!
//! Nodes are 0-based internally. The text format (`p=3; edges=1->2,2->3`)
//! and every `Display` impl use 1-based indices.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported node count for graph operations.
pub const MAX_NODES: usize = 12;

/// `(a, c, b)` for `a -> c <- b` with `a < b` non-adjacent.
pub type VStructure = (usize, usize, usize);
/// Largest node count for exhaustive enumeration of DAG space.
pub const MAX_ENUM_NODES: usize = 5;

/// Fixed-width bit-set of node indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(u16);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    pub fn from_bits(bits: u16) -> Self {
        NodeSet(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn full(p: usize) -> Self {
        NodeSet(((1u32 << p) - 1) as u16)
    }

    pub fn singleton(j: usize) -> Self {
        NodeSet(1 << j)
    }

    pub fn contains(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    pub fn insert(&mut self, j: usize) {
        self.0 |= 1 << j;
    }

    pub fn remove(&mut self, j: usize) {
        self.0 &= !(1 << j);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 | other.0)
    }

    pub fn intersection(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: NodeSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Members in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..16).filter(move |j| bits >> j & 1 == 1)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = NodeSet::EMPTY;
        for j in iter {
            s.insert(j);
        }
        s
    }
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

/// A directed acyclic graph on `p` nodes stored as per-node parent bit-sets.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dag {
    p: usize,
    parents: [NodeSet; MAX_NODES],
}

fn check_p(p: usize, max: usize) -> Result<()> {
    if p == 0 || p > max {
        return Err(Error::NodeCount { p, max });
    }
    Ok(())
}

impl Dag {
    /// The graph with no edges.
    pub fn empty(p: usize) -> Result<Dag> {
        check_p(p, MAX_NODES)?;
        Ok(Dag {
            p,
            parents: [NodeSet::EMPTY; MAX_NODES],
        })
    }

    /// Builds a DAG from `(from, to)` pairs (0-based).
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Dag> {
        let mut g = Dag::empty(p)?;
        for &(k, j) in edges {
            if k >= p {
                return Err(Error::NodeIndex { node: k, p });
            }
            if j >= p {
                return Err(Error::NodeIndex { node: j, p });
            }
            if k == j {
                return Err(Error::SelfLoop(k));
            }
            g.parents[j].insert(k);
        }
        if !g.is_acyclic() {
            return Err(Error::Cycle);
        }
        Ok(g)
    }

    /// Builds a DAG from per-node parent sets.
    pub fn from_parent_sets(parents: &[NodeSet]) -> Result<Dag> {
        let p = parents.len();
        let mut g = Dag::empty(p)?;
        let full = NodeSet::full(p);
        for (j, &pa) in parents.iter().enumerate() {
            if !pa.is_subset(full) {
                let bad = pa.iter().find(|&k| k >= p).unwrap_or(0);
                return Err(Error::NodeIndex { node: bad, p });
            }
            if pa.contains(j) {
                return Err(Error::SelfLoop(j));
            }
            g.parents[j] = pa;
        }
        if !g.is_acyclic() {
            return Err(Error::Cycle);
        }
        Ok(g)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn parents(&self, j: usize) -> NodeSet {
        self.parents[j]
    }

    pub fn parent_sets(&self) -> &[NodeSet] {
        &self.parents[..self.p]
    }

    pub fn children(&self, k: usize) -> NodeSet {
        (0..self.p)
            .filter(|&j| self.parents[j].contains(k))
            .collect()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].contains(from)
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// Edge count |γ|.
    pub fn edge_count(&self) -> usize {
        self.parent_sets().iter().map(|s| s.len()).sum()
    }

    /// All edges as `(from, to)`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = (0..self.p)
            .flat_map(|j| self.parents[j].iter().map(move |k| (k, j)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Proper ancestors of `j`.
    pub fn ancestors(&self, j: usize) -> NodeSet {
        let mut seen = NodeSet::EMPTY;
        let mut stack = self.parents[j].to_vec();
        while let Some(k) = stack.pop() {
            if !seen.contains(k) {
                seen.insert(k);
                stack.extend(self.parents[k].iter());
            }
        }
        seen
    }

    /// Proper descendants of `j`.
    pub fn descendants(&self, j: usize) -> NodeSet {
        let mut seen = NodeSet::EMPTY;
        let mut stack = self.children(j).to_vec();
        while let Some(k) = stack.pop() {
            if !seen.contains(k) {
                seen.insert(k);
                stack.extend(self.children(k).iter());
            }
        }
        seen
    }

    fn is_acyclic(&self) -> bool {
        kahn_order(self.p, &self.parents).is_some()
    }

    /// Causal order with ties broken by lowest node index.
    pub fn topological_order(&self) -> Result<CausalOrder> {
        let order = kahn_order(self.p, &self.parents).ok_or(Error::Cycle)?;
        Ok(CausalOrder { order })
    }

    /// True iff every edge of `sub` is an edge of `self`.
    pub fn is_supergraph(&self, sub: &Dag) -> Result<bool> {
        if self.p != sub.p {
            return Err(Error::Mismatch(self.p, sub.p));
        }
        Ok((0..self.p).all(|j| sub.parents[j].is_subset(self.parents[j])))
    }

    /// Undirected skeleton as pairs `(a, b)` with `a < b`, sorted.
    pub fn skeleton(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(k, j)| (k.min(j), k.max(j)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Unshielded colliders `a -> c <- b` stored as `(a, c, b)` with `a < b`, sorted.
    pub fn v_structures(&self) -> Vec<VStructure> {
        let mut out = Vec::new();
        for c in 0..self.p {
            let pa = self.parents[c].to_vec();
            for (i, &a) in pa.iter().enumerate() {
                for &b in &pa[i + 1..] {
                    if !self.is_adjacent(a, b) {
                        out.push((a, c, b));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Skeleton and v-structures together.
    pub fn skeleton_and_vstructures(&self) -> (Vec<(usize, usize)>, Vec<VStructure>) {
        (self.skeleton(), self.v_structures())
    }

    /// Text form `p=<p>; edges=k->j,...` with 1-based indices.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// CSV-safe label, e.g. `1->2;2->3` or `empty`.
    pub fn edge_label(&self) -> String {
        let edges = self.edges();
        if edges.is_empty() {
            return "empty".to_string();
        }
        edges
            .iter()
            .map(|(k, j)| format!("{}->{}", k + 1, j + 1))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn kahn_order(p: usize, parents: &[NodeSet; MAX_NODES]) -> Option<Vec<usize>> {
    let mut placed = NodeSet::EMPTY;
    let mut order = Vec::with_capacity(p);
    while order.len() < p {
        let next = (0..p).find(|&j| !placed.contains(j) && parents[j].is_subset(placed))?;
        placed.insert(next);
        order.push(next);
    }
    Some(order)
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self
            .edges()
            .iter()
            .map(|(k, j)| format!("{}->{}", k + 1, j + 1))
            .collect();
        write!(f, "p={}; edges={}", self.p, edges.join(","))
    }
}

impl fmt::Debug for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dag({self})")
    }
}

/// Parses a single `k->j` token (1-based) into a 0-based pair.
pub(crate) fn parse_arrow(tok: &str, sep: &str) -> Result<(usize, usize)> {
    let (a, b) = tok
        .split_once(sep)
        .ok_or_else(|| Error::Parse(format!("expected `a{sep}b`, got `{tok}`")))?;
    let a: usize = a
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad node index in `{tok}`")))?;
    let b: usize = b
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad node index in `{tok}`")))?;
    if a == 0 || b == 0 {
        return Err(Error::Parse(format!("node indices are 1-based in `{tok}`")));
    }
    Ok((a - 1, b - 1))
}

/// Splits `key=value; key=value` into an ordered map.
pub(crate) fn parse_fields(s: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for part in s.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected `key=value`, got `{part}`")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(f)
        .collect()
}

impl serde::Serialize for Dag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> serde::Deserialize<'de> for Dag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Dag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Dag> {
        let fields = parse_fields(s)?;
        let p: usize = fields
            .get("p")
            .ok_or_else(|| Error::Parse("missing `p=`".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad `p` value".into()))?;
        let edges = match fields.get("edges") {
            Some(v) => parse_list(v, |t| parse_arrow(t, "->"))?,
            None => Vec::new(),
        };
        Dag::from_edges(p, &edges)
    }
}

/// A permutation placing every parent before its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalOrder {
    order: Vec<usize>,
}

impl CausalOrder {
    /// Nodes listed from first to last in the order.
    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    /// Position σ(j) of node `j` (0-based).
    pub fn position(&self, j: usize) -> usize {
        self.order
            .iter()
            .position(|&x| x == j)
            .expect("node in order")
    }

    /// Checks the edge-order invariant against `g`.
    pub fn respects(&self, g: &Dag) -> bool {
        let mut pos = vec![0usize; g.p()];
        for (i, &j) in self.order.iter().enumerate() {
            pos[j] = i;
        }
        g.edges().iter().all(|&(k, j)| pos[k] < pos[j])
    }
}

/// Per-edge real coefficients, keyed by `(from, to)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeCoefficients {
    values: BTreeMap<(usize, usize), f64>,
}

impl EdgeCoefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[((usize, usize), f64)]) -> Self {
        EdgeCoefficients {
            values: pairs.iter().copied().collect(),
        }
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        self.values.insert((from, to), value);
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.values.get(&(from, to)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ensures coefficients sit exactly on the edges of `g`.
    pub fn validate_for(&self, g: &Dag) -> Result<()> {
        for &(k, j) in self.values.keys() {
            if k >= g.p() || j >= g.p() || !g.has_edge(k, j) {
                return Err(Error::NonEdgeCoefficient { from: k, to: j });
            }
        }
        for (k, j) in g.edges() {
            if !self.values.contains_key(&(k, j)) {
                return Err(Error::MissingCoefficient { from: k, to: j });
            }
        }
        Ok(())
    }

    /// Dense `p x p` matrix with entry `(to, from)` holding the coefficient.
    pub fn to_dense(&self, p: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; p]; p];
        for (&(k, j), &v) in &self.values {
            m[j][k] = v;
        }
        m
    }
}

/// Total causal effects `b_{j<-s}`; entry `(j, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalEffects {
    p: usize,
    values: Vec<f64>,
}

impl TotalEffects {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Effect of `source` on `target`.
    pub fn get(&self, target: usize, source: usize) -> f64 {
        self.values[target * self.p + source]
    }

    pub fn row(&self, target: usize) -> &[f64] {
        &self.values[target * self.p..(target + 1) * self.p]
    }
}

/// Total effects computed recursively over the causal order:
/// `b_{j<-s} = sum_{k in pa(j)} b_jk b_{k<-s}`, `b_{j<-j} = 1`.
pub fn total_effects(g: &Dag, coeffs: &EdgeCoefficients) -> Result<TotalEffects> {
    coeffs.validate_for(g)?;
    let p = g.p();
    let order = g.topological_order()?;
    let mut values = vec![0.0; p * p];
    for &j in order.as_slice() {
        values[j * p + j] = 1.0;
        for k in g.parents(j).iter() {
            let b_jk = coeffs.get(k, j).expect("validated");
            // rows of parents are already complete
            for s in 0..p {
                let v = values[k * p + s];
                if v != 0.0 {
                    values[j * p + s] += b_jk * v;
                }
            }
        }
    }
    Ok(TotalEffects { p, values })
}

/// All labeled DAGs on `p` nodes, in lexicographic order of the tuple of
/// parent bit-sets `(pa(1), ..., pa(p))`.
pub fn enumerate_dags(p: usize) -> Result<Vec<Dag>> {
    check_p(p, MAX_ENUM_NODES)?;
    // per-node choices: subsets of the other nodes, ascending by bit value
    let choices: Vec<Vec<NodeSet>> = (0..p)
        .map(|j| {
            (0u16..(1 << p))
                .filter(|bits| bits >> j & 1 == 0)
                .map(NodeSet)
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; p];
    let mut parents = [NodeSet::EMPTY; MAX_NODES];
    loop {
        for j in 0..p {
            parents[j] = choices[j][idx[j]];
        }
        if kahn_order(p, &parents).is_some() {
            out.push(Dag { p, parents });
        }
        // odometer with the last node varying fastest
        let mut pos = p;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < choices[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}
