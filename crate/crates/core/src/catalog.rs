//! Packaged SEMs used by the experiments, the oracle and the tests.

use crate::graph::{Dag, EdgeCoefficients, NodeSet};
use crate::scm::{MixingLaw, ScmSpec};

fn build(p: usize, edges: &[(usize, usize, f64)], noise: Vec<MixingLaw>) -> ScmSpec {
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&(k, j, _)| (k - 1, j - 1)).collect();
    let dag = Dag::from_edges(p, &pairs).expect("packaged dag");
    let coeffs = EdgeCoefficients::from_pairs(
        &edges
            .iter()
            .map(|&(k, j, b)| ((k - 1, j - 1), b))
            .collect::<Vec<_>>(),
    );
    ScmSpec::new(dag, coeffs, noise).expect("packaged spec")
}

fn uniform_mix() -> MixingLaw {
    MixingLaw::UniformOnLambda { lo: 0.2, hi: 0.4 }
}

/// Four nodes, `3 -> 2`, `3 -> 1`, node 4 isolated; non-Gaussian on {2, 3, 4}.
pub fn mixed_four() -> ScmSpec {
    build(
        4,
        &[(3, 2, 1.5), (3, 1, -3.2)],
        vec![
            MixingLaw::gaussian(2.8),
            MixingLaw::ExpOnSquare { mean: 2.0 },
            MixingLaw::student_t(2.0),
            MixingLaw::DiscreteOnSquare {
                values: vec![1.0, 4.0],
                probs: vec![0.75, 0.25],
            },
        ],
    )
}

/// Chain `1 -> 2 -> 3` with uniform-mixture, N(0, 0.25) and t3 errors.
pub fn study1() -> ScmSpec {
    build(
        3,
        &[(1, 2, 2.5), (2, 3, 1.8)],
        vec![
            uniform_mix(),
            MixingLaw::gaussian(0.25),
            MixingLaw::student_t(3.0),
        ],
    )
}

/// As [`study1`] but with `eps3 ~ N(0, 0.16)`; only node 1 is non-Gaussian.
pub fn study2() -> ScmSpec {
    build(
        3,
        &[(1, 2, 2.5), (2, 3, 1.8)],
        vec![
            uniform_mix(),
            MixingLaw::gaussian(0.25),
            MixingLaw::gaussian(0.16),
        ],
    )
}

/// Complete DAG `1 -> 2 -> 3`, `1 -> 3`; only node 1 is non-Gaussian.
pub fn study3() -> ScmSpec {
    build(
        3,
        &[(1, 2, 2.5), (2, 3, 1.8), (1, 3, 2.2)],
        vec![
            uniform_mix(),
            MixingLaw::gaussian(0.25),
            MixingLaw::gaussian(0.16),
        ],
    )
}

/// Chain with standard normal errors on nodes 2 and 3.
pub fn unit_chain() -> ScmSpec {
    build(
        3,
        &[(1, 2, 2.5), (2, 3, 1.8)],
        vec![
            uniform_mix(),
            MixingLaw::gaussian(1.0),
            MixingLaw::gaussian(1.0),
        ],
    )
}

/// Complete 3-node DAG with standard normal errors on nodes 2 and 3.
pub fn unit_complete() -> ScmSpec {
    build(
        3,
        &[(1, 2, 2.5), (2, 3, 1.8), (1, 3, 2.2)],
        vec![
            uniform_mix(),
            MixingLaw::gaussian(1.0),
            MixingLaw::gaussian(1.0),
        ],
    )
}

fn middle_nongaussian(edges: &[(usize, usize, f64)]) -> ScmSpec {
    build(
        3,
        edges,
        vec![
            MixingLaw::gaussian(1.0),
            MixingLaw::UniformOnLambda { lo: 0.5, hi: 1.5 },
            MixingLaw::gaussian(0.5),
        ],
    )
}

/// Three graphs with only the middle node non-Gaussian and unequal Gaussian
/// variances elsewhere: chain, collider, fork.
pub fn middle_nongaussian_specs() -> Vec<(&'static str, ScmSpec)> {
    vec![
        ("chain", middle_nongaussian(&[(1, 2, 1.2), (2, 3, 0.8)])),
        ("collider", middle_nongaussian(&[(1, 2, 1.2), (3, 2, 0.8)])),
        ("fork", middle_nongaussian(&[(2, 1, 1.2), (2, 3, 0.8)])),
    ]
}

/// The five 3-node specs checked by the identifiability oracle.
pub fn packaged() -> Vec<(&'static str, ScmSpec)> {
    vec![
        ("study1", study1()),
        ("study2", study2()),
        ("study3", study3()),
        ("unit_chain", unit_chain()),
        ("unit_complete", unit_complete()),
    ]
}

/// Looks up any packaged spec by name.
pub fn by_name(name: &str) -> Option<ScmSpec> {
    if name == "mixed_four" {
        return Some(mixed_four());
    }
    packaged()
        .into_iter()
        .chain(
            middle_nongaussian_specs()
                .into_iter()
                .map(|(n, s)| match n {
                    "chain" => ("middle_chain", s),
                    "collider" => ("middle_collider", s),
                    _ => ("middle_fork", s),
                }),
        )
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
}

pub const SPEC_NAMES: [&str; 9] = [
    "mixed_four",
    "study1",
    "study2",
    "study3",
    "unit_chain",
    "unit_complete",
    "middle_chain",
    "middle_collider",
    "middle_fork",
];

/// Twelve-node DAG used to illustrate the restricted CPDAG (1-based edges).
pub const TWELVE_NODE_EDGES: [(usize, usize); 18] = [
    (8, 4),
    (4, 3),
    (3, 2),
    (2, 1),
    (8, 7),
    (2, 6),
    (1, 5),
    (2, 5),
    (8, 9),
    (6, 7),
    (7, 9),
    (6, 9),
    (5, 12),
    (5, 11),
    (11, 10),
    (9, 10),
    (12, 11),
    (8, 6),
];

pub fn twelve_node_dag() -> Dag {
    let e: Vec<(usize, usize)> = TWELVE_NODE_EDGES
        .iter()
        .map(|&(k, j)| (k - 1, j - 1))
        .collect();
    Dag::from_edges(12, &e).expect("twelve-node dag")
}

/// Non-Gaussian nodes {1, 2, 3, 5, 10} of the twelve-node example (0-based).
pub fn twelve_node_ng() -> NodeSet {
    [0, 1, 2, 4, 9].into_iter().collect()
}

/// 1-based `(directed, undirected)` edge lists.
pub type EdgeLists = (Vec<(usize, usize)>, Vec<(usize, usize)>);

/// Reference restricted-CPDAG drawing for the twelve-node DAG.
pub fn twelve_node_reference_res_cpdag() -> EdgeLists {
    let directed = vec![
        (4, 3),
        (3, 2),
        (2, 1),
        (1, 5),
        (2, 5),
        (5, 12),
        (5, 11),
        (8, 7),
        (8, 9),
        (2, 6),
        (11, 10),
        (9, 10),
        (8, 6),
    ];
    let undirected = vec![(4, 8), (6, 7), (7, 9), (6, 9), (11, 12)];
    (directed, undirected)
}
