//! Independent oracles for integration tests: brute-force graph enumeration,
//! definitional (C)PDAGs, breakpoint-scan LAD and 1-D quadrature marginals.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dagsel::{Dag, NodeSet};
use statrs::function::gamma::ln_gamma;

pub fn dag(p: usize, edges: &[(usize, usize)]) -> Dag {
    let e: Vec<_> = edges.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
    Dag::from_edges(p, &e).unwrap()
}

pub fn nodes(v: &[usize]) -> NodeSet {
    v.iter().map(|j| j - 1).collect()
}

fn acyclic(p: usize, edges: &[(usize, usize)]) -> bool {
    // repeatedly strip sinks
    let mut alive = vec![true; p];
    for _ in 0..p {
        let sink = (0..p).find(|&v| alive[v] && !edges.iter().any(|&(a, b)| a == v && alive[b]));
        match sink {
            Some(v) => alive[v] = false,
            None => return false,
        }
    }
    true
}

/// Every acyclic orientation pattern: each unordered pair is absent, `a->b`
/// or `b->a`; cycles are rejected by sink stripping.
pub fn brute_force_dags(p: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
        .collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut edges = Vec::new();
        for &(a, b) in &pairs {
            match c % 3 {
                1 => edges.push((a, b)),
                2 => edges.push((b, a)),
                _ => {}
            }
            c /= 3;
        }
        if acyclic(p, &edges) {
            out.push(Dag::from_edges(p, &edges).unwrap());
        }
    }
    out
}

pub type EdgeSet = BTreeSet<(usize, usize)>;
pub type VStructs = BTreeSet<(usize, usize, usize)>;

/// EdgeSet as ordered pairs `(min, max)`; v-structures `a -> c <- b`,
/// `a < b`, `a`, `b` non-adjacent.
pub fn skeleton_vstructs(g: &Dag) -> (EdgeSet, VStructs) {
    let p = g.p();
    let mut sk = BTreeSet::new();
    let mut vs = BTreeSet::new();
    for a in 0..p {
        for b in 0..p {
            if g.has_edge(a, b) {
                sk.insert((a.min(b), a.max(b)));
            }
        }
    }
    for c in 0..p {
        for a in 0..p {
            for b in a + 1..p {
                if g.has_edge(a, c) && g.has_edge(b, c) && !g.has_edge(a, b) && !g.has_edge(b, a) {
                    vs.insert((a, c, b));
                }
            }
        }
    }
    (sk, vs)
}

/// Directed and undirected edge sets (0-based, undirected as `(min, max)`)
/// of the pattern shared by `members`: an edge is directed iff all members
/// agree on its orientation.
pub fn common_pattern(members: &[Dag]) -> (EdgeSet, EdgeSet) {
    let first = &members[0];
    let mut directed = BTreeSet::new();
    let mut undirected = BTreeSet::new();
    for (a, b) in first.edges() {
        if members.iter().all(|h| h.has_edge(a, b)) {
            directed.insert((a, b));
        } else {
            undirected.insert((a.min(b), a.max(b)));
        }
    }
    (directed, undirected)
}

/// Markov class of `g` by brute force over all orientations of its skeleton.
pub fn brute_markov_class(g: &Dag) -> Vec<Dag> {
    let (sk, vs) = skeleton_vstructs(g);
    let sk: Vec<(usize, usize)> = sk.into_iter().collect();
    assert!(sk.len() <= 24, "skeleton too large for brute force");
    let mut out = Vec::new();
    for mask in 0u32..(1 << sk.len()) {
        let edges: Vec<(usize, usize)> = sk
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| if mask >> i & 1 == 0 { (a, b) } else { (b, a) })
            .collect();
        if !acyclic(g.p(), &edges) {
            continue;
        }
        let h = Dag::from_edges(g.p(), &edges).unwrap();
        if skeleton_vstructs(&h).1 == vs {
            out.push(h);
        }
    }
    out
}

/// Distribution-equivalence class from its definition: Markov-equivalent
/// DAGs that keep every non-Gaussian node's parent set.
pub fn brute_de_class(gstar: &Dag, ng: NodeSet) -> Vec<Dag> {
    brute_markov_class(gstar)
        .into_iter()
        .filter(|h| ng.iter().all(|j| h.parents(j) == gstar.parents(j)))
        .collect()
}

/// `min_b sum |y_i - b x_i|`: the optimum sits at a breakpoint `y_i / x_i`.
pub fn breakpoint_scan(y: &[f64], x: &[f64]) -> f64 {
    let obj = |b: f64| {
        y.iter()
            .zip(x)
            .map(|(yi, xi)| (yi - b * xi).abs())
            .sum::<f64>()
    };
    let mut best = obj(0.0);
    for (yi, xi) in y.iter().zip(x) {
        if *xi != 0.0 {
            best = best.min(obj(yi / xi));
        }
    }
    best
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log trapezoid integral of `exp(f)` over `[lo, hi]` with `k` intervals.
pub fn log_trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, k: usize) -> f64 {
    let h = (hi - lo) / k as f64;
    let vals: Vec<f64> = (0..=k)
        .map(|i| {
            let w = if i == 0 || i == k { 0.5f64.ln() } else { 0.0 };
            f(lo + i as f64 * h) + w
        })
        .collect();
    log_sum_exp(&vals) + h.ln()
}

/// Root-node `log int prod_i Laplace(x_i | 0, theta) IG(theta | a0, b0) dtheta`
/// by trapezoid quadrature in `u = log theta`.
pub fn quad_root_log_marginal(xs: &[f64], a0: f64, b0: f64) -> f64 {
    let n = xs.len() as f64;
    let s: f64 = xs.iter().map(|v| v.abs()).sum();
    let log_prior_const = a0 * b0.ln() - ln_gamma(a0);
    let f = |u: f64| {
        let th = u.exp();
        -n * (2.0 * th).ln() - s / th + log_prior_const - (a0 + 1.0) * u - b0 / th + u
    };
    let mode = ((s + b0) / (n + a0)).ln();
    log_trapezoid(f, mode - 12.0, mode + 12.0, 40_000)
}

/// One-parent family under `b ~ N(0, tau2)`, `theta ~ IG(a0, b0)`:
/// `theta` integrated in closed form, `b` by trapezoid quadrature.
pub fn quad_one_parent_log_marginal(y: &[f64], x: &[f64], tau2: f64, a0: f64, b0: f64) -> f64 {
    let n = y.len() as f64;
    let c = -n * std::f64::consts::LN_2 + a0 * b0.ln() - ln_gamma(a0) + ln_gamma(n + a0);
    let f = |b: f64| {
        let a: f64 = y.iter().zip(x).map(|(yi, xi)| (yi - b * xi).abs()).sum();
        c - (n + a0) * (a + b0).ln()
            - 0.5 * (2.0 * std::f64::consts::PI * tau2).ln()
            - b * b / (2.0 * tau2)
    };
    // centre on the LAD breakpoint, widen until the tails are negligible
    let mut centre = 0.0;
    let mut best = f64::INFINITY;
    for (yi, xi) in y.iter().zip(x) {
        if *xi != 0.0 {
            let b = yi / xi;
            let v: f64 = y.iter().zip(x).map(|(u, w)| (u - b * w).abs()).sum();
            if v < best {
                best = v;
                centre = b;
            }
        }
    }
    let peak = f(centre);
    let mut w = 0.1;
    while f(centre - w).max(f(centre + w)) > peak - 60.0 {
        w *= 1.5;
    }
    log_trapezoid(f, centre - w, centre + w, 200_000)
}
