//! Markov equivalence, CPDAG / restricted CPDAG construction and
//! distribution-equivalence classes.
//!
//! The CPDAG is built by orienting v-structures and closing under Meek's
//! rules R1-R4. The restricted CPDAG additionally fixes every edge touching a
//! node with non-Gaussian error to its orientation in the true DAG before the
//! closure, which is the same as imposing parental preservation on those nodes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{parse_arrow, parse_fields, parse_list, Dag, NodeSet, MAX_NODES};

/// Cap on undirected edges when enumerating consistent extensions.
pub const MAX_UNDIRECTED_FOR_EXTENSIONS: usize = 22;

/// Partially directed graph: directed pairs `(from, to)` plus undirected
/// pairs `(a, b)` with `a < b`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Pdag {
    p: usize,
    directed: BTreeSet<(usize, usize)>,
    undirected: BTreeSet<(usize, usize)>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Pdag {
    /// Fully undirected skeleton of `g`.
    fn skeleton_of(g: &Dag) -> Pdag {
        Pdag {
            p: g.p(),
            directed: BTreeSet::new(),
            undirected: g.skeleton().into_iter().collect(),
        }
    }

    /// Builds a PDAG from explicit edge lists (0-based).
    pub fn new(
        p: usize,
        directed: &[(usize, usize)],
        undirected: &[(usize, usize)],
    ) -> Result<Pdag> {
        if p == 0 || p > MAX_NODES {
            return Err(Error::NodeCount { p, max: MAX_NODES });
        }
        let mut out = Pdag {
            p,
            directed: BTreeSet::new(),
            undirected: BTreeSet::new(),
        };
        for &(a, b) in directed.iter().chain(undirected) {
            for n in [a, b] {
                if n >= p {
                    return Err(Error::NodeIndex { node: n, p });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
        }
        out.directed.extend(directed.iter().copied());
        for &(a, b) in undirected {
            let k = key(a, b);
            if out.directed.contains(&(a, b)) || out.directed.contains(&(b, a)) {
                return Err(Error::Parse(format!(
                    "pair {}-{} both directed and undirected",
                    a + 1,
                    b + 1
                )));
            }
            out.undirected.insert(k);
        }
        for &(a, b) in directed {
            if out.directed.contains(&(b, a)) {
                return Err(Error::Cycle);
            }
        }
        if out.directed_part_dag().is_err() {
            return Err(Error::Cycle);
        }
        Ok(out)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn directed(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    pub fn undirected(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
            || self.directed.contains(&(b, a))
            || self.undirected.contains(&key(a, b))
    }

    fn has_directed(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
    }

    fn has_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b))
    }

    fn orient(&mut self, a: usize, b: usize) {
        self.undirected.remove(&key(a, b));
        self.directed.insert((a, b));
    }

    /// DAG formed by the directed edges alone.
    pub fn directed_part_dag(&self) -> Result<Dag> {
        let edges: Vec<_> = self.directed.iter().copied().collect();
        Dag::from_edges(self.p, &edges)
    }

    /// True when no undirected edges remain.
    pub fn is_fully_directed(&self) -> bool {
        self.undirected.is_empty()
    }

    /// Unshielded colliders among the directed edges.
    fn directed_v_structures(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.p {
            let pa: Vec<usize> = (0..self.p).filter(|&a| self.has_directed(a, c)).collect();
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

    /// Applies Meek's rules R1-R4 until no rule fires. Orientations of edges
    /// touching `protected` nodes are refused and reported as a conflict.
    fn meek_closure(&mut self, protected: NodeSet) -> Result<()> {
        loop {
            let Some((a, b)) = self.next_meek_orientation() else {
                return Ok(());
            };
            if protected.contains(a) || protected.contains(b) {
                return Err(Error::OrientationConflict {
                    from: a,
                    to: b,
                    reason: "Meek rule would alter a preserved parent set",
                });
            }
            self.orient(a, b);
        }
    }

    fn next_meek_orientation(&self) -> Option<(usize, usize)> {
        let p = self.p;
        for &(u, v) in &self.undirected {
            for (a, b) in [(u, v), (v, u)] {
                // R1: c -> a - b, c and b non-adjacent
                if (0..p).any(|c| self.has_directed(c, a) && c != b && !self.is_adjacent(c, b)) {
                    return Some((a, b));
                }
                // R2: a -> c -> b with a - b
                if (0..p).any(|c| self.has_directed(a, c) && self.has_directed(c, b)) {
                    return Some((a, b));
                }
                // R3: a - c -> b, a - d -> b, c and d non-adjacent
                let mids: Vec<usize> = (0..p)
                    .filter(|&c| self.has_undirected(a, c) && self.has_directed(c, b))
                    .collect();
                for (i, &c) in mids.iter().enumerate() {
                    if mids[i + 1..].iter().any(|&d| !self.is_adjacent(c, d)) {
                        return Some((a, b));
                    }
                }
                // R4: a - c -> d -> b, c and b non-adjacent, a adjacent to d
                for c in (0..p).filter(|&c| c != b && self.has_undirected(a, c)) {
                    if self.is_adjacent(c, b) {
                        continue;
                    }
                    if (0..p).any(|d| {
                        self.has_directed(c, d) && self.has_directed(d, b) && self.is_adjacent(a, d)
                    }) {
                        return Some((a, b));
                    }
                }
            }
        }
        None
    }

    /// All DAGs obtained by orienting the undirected edges without creating
    /// cycles or v-structures beyond those already present among the directed
    /// edges.
    pub fn consistent_extensions(&self) -> Result<Vec<Dag>> {
        let und: Vec<(usize, usize)> = self.undirected.iter().copied().collect();
        if und.len() > MAX_UNDIRECTED_FOR_EXTENSIONS {
            return Err(Error::InvalidParameter(format!(
                "{} undirected edges exceed the extension limit of {}",
                und.len(),
                MAX_UNDIRECTED_FOR_EXTENSIONS
            )));
        }
        let target_v = self.directed_v_structures();
        let base: Vec<(usize, usize)> = self.directed.iter().copied().collect();
        let mut out = Vec::new();
        let mut edges = base.clone();
        for mask in 0u64..(1u64 << und.len()) {
            edges.truncate(base.len());
            for (i, &(a, b)) in und.iter().enumerate() {
                edges.push(if mask >> i & 1 == 0 { (a, b) } else { (b, a) });
            }
            if let Ok(g) = Dag::from_edges(self.p, &edges) {
                if g.v_structures() == target_v {
                    out.push(g);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Text form `p=<p>; directed=k->j,...; undirected=a-b,...` (1-based).
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Pdag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d: Vec<String> = self
            .directed
            .iter()
            .map(|(a, b)| format!("{}->{}", a + 1, b + 1))
            .collect();
        let u: Vec<String> = self
            .undirected
            .iter()
            .map(|(a, b)| format!("{}-{}", a + 1, b + 1))
            .collect();
        write!(
            f,
            "p={}; directed={}; undirected={}",
            self.p,
            d.join(","),
            u.join(",")
        )
    }
}

impl fmt::Debug for Pdag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pdag({self})")
    }
}

impl FromStr for Pdag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Pdag> {
        let fields = parse_fields(s)?;
        let p: usize = fields
            .get("p")
            .ok_or_else(|| Error::Parse("missing `p=`".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad `p` value".into()))?;
        let directed = match fields.get("directed") {
            Some(v) => parse_list(v, |t| parse_arrow(t, "->"))?,
            None => Vec::new(),
        };
        let undirected = match fields.get("undirected") {
            Some(v) => parse_list(v, |t| parse_arrow(t, "-"))?,
            None => Vec::new(),
        };
        Pdag::new(p, &directed, &undirected)
    }
}

impl From<&Dag> for Pdag {
    fn from(g: &Dag) -> Pdag {
        Pdag {
            p: g.p(),
            directed: g.edges().into_iter().collect(),
            undirected: BTreeSet::new(),
        }
    }
}

/// Same skeleton and same v-structures.
pub fn markov_equivalent(g1: &Dag, g2: &Dag) -> Result<bool> {
    if g1.p() != g2.p() {
        return Err(Error::Mismatch(g1.p(), g2.p()));
    }
    Ok(g1.skeleton_and_vstructures() == g2.skeleton_and_vstructures())
}

/// CPDAG of `g`: v-structures oriented, then Meek closure.
pub fn cpdag(g: &Dag) -> Pdag {
    let mut out = Pdag::skeleton_of(g);
    for (a, c, b) in g.v_structures() {
        out.orient(a, c);
        out.orient(b, c);
    }
    out.meek_closure(NodeSet::EMPTY)
        .expect("unrestricted closure cannot conflict");
    out
}

/// All DAGs Markov equivalent to `g` (including `g`), sorted.
pub fn markov_class(g: &Dag) -> Result<Vec<Dag>> {
    cpdag(g).consistent_extensions()
}

fn check_nodes(ng: NodeSet, p: usize) -> Result<()> {
    if let Some(bad) = ng.iter().find(|&j| j >= p) {
        return Err(Error::NodeIndex { node: bad, p });
    }
    Ok(())
}

/// Restricted CPDAG of `(gstar, ng)`:
/// (A) CPDAG, (B) orient undirected edges touching `ng` as in `gstar`,
/// (C) Meek closure that may not alter parent sets of nodes in `ng`.
pub fn res_cpdag(gstar: &Dag, ng: NodeSet) -> Result<Pdag> {
    check_nodes(ng, gstar.p())?;
    let mut out = cpdag(gstar);
    let touching: Vec<(usize, usize)> = out
        .undirected
        .iter()
        .copied()
        .filter(|&(a, b)| ng.contains(a) || ng.contains(b))
        .collect();
    for (a, b) in touching {
        if gstar.has_edge(a, b) {
            out.orient(a, b);
        } else {
            out.orient(b, a);
        }
    }
    out.meek_closure(ng)?;
    Ok(out)
}

/// Members of the Markov class of `gstar` whose parent sets agree with
/// `gstar` on every node of `ng`.
pub fn distribution_equivalence_class(gstar: &Dag, ng: NodeSet) -> Result<Vec<Dag>> {
    check_nodes(ng, gstar.p())?;
    Ok(markov_class(gstar)?
        .into_iter()
        .filter(|g| ng.iter().all(|j| g.parents(j) == gstar.parents(j)))
        .collect())
}

/// For every `j` in `ng`, `k` in the closed true ancestry of `j` and `l` a
/// true descendant of `j`: `l` must not be an ancestor of `k` in `g`.
pub fn ancestral_restriction_holds(g: &Dag, gstar: &Dag, ng: NodeSet) -> Result<bool> {
    if g.p() != gstar.p() {
        return Err(Error::Mismatch(g.p(), gstar.p()));
    }
    check_nodes(ng, g.p())?;
    for j in ng.iter() {
        let mut closed_an = gstar.ancestors(j);
        closed_an.insert(j);
        let de = gstar.descendants(j);
        for k in closed_an.iter() {
            if !g.ancestors(k).intersection(de).is_empty() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::enumerate_dags;

    fn dag(p: usize, edges: &[(usize, usize)]) -> Dag {
        let e: Vec<_> = edges.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
        Dag::from_edges(p, &e).unwrap()
    }

    fn nodes(v: &[usize]) -> NodeSet {
        v.iter().map(|j| j - 1).collect()
    }

    /// CPDAG straight from the definition: an edge stays directed iff every
    /// Markov-equivalent DAG orients it the same way.
    fn definitional_cpdag(g: &Dag, all: &[Dag]) -> Pdag {
        let class: Vec<&Dag> = all
            .iter()
            .filter(|h| markov_equivalent(g, h).unwrap())
            .collect();
        let mut directed = Vec::new();
        let mut undirected = Vec::new();
        for (a, b) in g.edges() {
            if class.iter().all(|h| h.has_edge(a, b)) {
                directed.push((a, b));
            } else {
                undirected.push((a, b));
            }
        }
        Pdag::new(g.p(), &directed, &undirected).unwrap()
    }

    #[test]
    fn markov_equivalence_examples() {
        let c1 = dag(3, &[(1, 2), (2, 3)]);
        let c2 = dag(3, &[(3, 2), (2, 1)]);
        let col = dag(3, &[(1, 2), (3, 2)]);
        assert!(markov_equivalent(&c1, &c2).unwrap());
        assert!(!markov_equivalent(&c1, &col).unwrap());
        let complete_a = dag(3, &[(1, 2), (2, 3), (1, 3)]);
        let complete_b = dag(3, &[(1, 3), (1, 2), (3, 2)]);
        assert!(markov_equivalent(&complete_a, &complete_b).unwrap());
        assert!(markov_equivalent(&c1, &Dag::empty(2).unwrap()).is_err());
    }

    #[test]
    fn markov_class_examples() {
        let chain = dag(3, &[(1, 2), (2, 3)]);
        let class = markov_class(&chain).unwrap();
        let mut expected = vec![chain, dag(3, &[(3, 2), (2, 1)]), dag(3, &[(2, 1), (2, 3)])];
        expected.sort();
        assert_eq!(class, expected);
        let col = dag(3, &[(1, 2), (3, 2)]);
        assert_eq!(markov_class(&col).unwrap(), vec![col]);
        let e = Dag::empty(3).unwrap();
        assert_eq!(markov_class(&e).unwrap(), vec![e]);
    }

    #[test]
    fn markov_class_matches_brute_force_p4() {
        let all = enumerate_dags(4).unwrap();
        for g in &all {
            let brute: Vec<Dag> = all
                .iter()
                .filter(|h| markov_equivalent(g, h).unwrap())
                .copied()
                .collect();
            assert_eq!(markov_class(g).unwrap(), brute, "{g}");
        }
    }

    #[test]
    fn cpdag_examples() {
        let chain = dag(3, &[(1, 2), (2, 3)]);
        let c = cpdag(&chain);
        assert!(c.directed().is_empty());
        assert_eq!(c.undirected().len(), 2);
        let col = dag(3, &[(1, 2), (3, 2)]);
        let c = cpdag(&col);
        assert!(c.is_fully_directed());
        assert_eq!(c.directed().len(), 2);
    }

    #[test]
    fn meek_cpdag_equals_definition_on_all_p4() {
        let all = enumerate_dags(4).unwrap();
        for g in &all {
            assert_eq!(cpdag(g), definitional_cpdag(g, &all), "{g}");
        }
    }

    #[test]
    fn res_cpdag_trivial_cases() {
        let all = enumerate_dags(3).unwrap();
        for g in &all {
            assert_eq!(res_cpdag(g, NodeSet::EMPTY).unwrap(), cpdag(g));
            let full = res_cpdag(g, NodeSet::full(3)).unwrap();
            assert_eq!(full, Pdag::from(g));
        }
        assert!(res_cpdag(&all[0], NodeSet::singleton(5)).is_err());
    }

    #[test]
    fn distribution_class_examples() {
        let chain = dag(3, &[(1, 2), (2, 3)]);
        assert_eq!(
            distribution_equivalence_class(&chain, nodes(&[1, 3])).unwrap(),
            vec![chain]
        );
        let complete_a = dag(3, &[(1, 2), (2, 3), (1, 3)]);
        let complete_b = dag(3, &[(1, 3), (1, 2), (3, 2)]);
        let mut expected = vec![complete_a, complete_b];
        expected.sort();
        assert_eq!(
            distribution_equivalence_class(&complete_a, nodes(&[1])).unwrap(),
            expected
        );
        assert_eq!(
            distribution_equivalence_class(&chain, NodeSet::EMPTY).unwrap(),
            markov_class(&chain).unwrap()
        );
    }

    #[test]
    fn ancestral_restriction_examples() {
        let chain = dag(3, &[(1, 2), (2, 3)]);
        assert!(ancestral_restriction_holds(&chain, &chain, nodes(&[2])).unwrap());
        let rev = dag(3, &[(3, 2), (2, 1)]);
        assert!(!ancestral_restriction_holds(&rev, &chain, nodes(&[2])).unwrap());
    }

    /// Every (gstar, ng) on p <= 4: the distribution class is exactly the set
    /// of parent-preserving extensions of the restricted CPDAG, the directed
    /// edges of the restricted CPDAG are exactly the class-invariant ones, and
    /// every member satisfies the ancestral restriction with |g| = |gstar|.
    #[test]
    fn res_cpdag_encodes_distribution_class_p3_p4() {
        for p in 3..=4 {
            let all = enumerate_dags(p).unwrap();
            for gstar in &all {
                for bits in 0u16..(1 << p) {
                    let ng = NodeSet::from_bits(bits);
                    let class = distribution_equivalence_class(gstar, ng).unwrap();
                    let rc = res_cpdag(gstar, ng).unwrap();
                    let ext: Vec<Dag> = rc
                        .consistent_extensions()
                        .unwrap()
                        .into_iter()
                        .filter(|g| ng.iter().all(|j| g.parents(j) == gstar.parents(j)))
                        .collect();
                    assert_eq!(ext, class, "{gstar} ng={ng}");
                    for (a, b) in gstar.edges() {
                        let invariant = class.iter().all(|g| g.has_edge(a, b));
                        assert_eq!(rc.directed().contains(&(a, b)), invariant);
                    }
                    for g in &class {
                        assert_eq!(g.edge_count(), gstar.edge_count());
                        assert!(ancestral_restriction_holds(g, gstar, ng).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn pdag_text_round_trip() {
        let g = dag(3, &[(1, 2), (3, 2)]);
        let c = cpdag(&dag(4, &[(1, 2), (2, 3), (4, 3)]));
        let text = c.to_text();
        assert_eq!(text.parse::<Pdag>().unwrap(), c);
        assert_eq!(
            Pdag::from(&g).to_text(),
            "p=3; directed=1->2,3->2; undirected="
        );
        assert!("p=3; directed=1->2; undirected=1-2"
            .parse::<Pdag>()
            .is_err());
    }
}
