mod common;

use common::*;
use dagsel::bayes::{family_marginal, root_log_marginal_exact};
use dagsel::catalog::{twelve_node_dag, twelve_node_ng};
use dagsel::working::fit_node;
use dagsel::{res_cpdag, Dag, Dataset, EdgeCoefficients, MixingLaw, NodeSet, PriorSpec, ScmSpec};

#[test]
fn quadrature_reproduces_closed_form_root_marginal() {
    let prior = PriorSpec::default();
    for (seed, n) in [(1u64, 5usize), (2, 50), (3, 400)] {
        let spec = ScmSpec::new(
            Dag::empty(1).unwrap(),
            EdgeCoefficients::new(),
            vec![MixingLaw::student_t(3.0)],
        )
        .unwrap();
        let xs = spec.sample_dataset(n, seed).unwrap().column(0).to_vec();
        let quad = quad_root_log_marginal(&xs, prior.scale_shape, prior.scale_rate);
        let exact = root_log_marginal_exact(&xs, &prior);
        assert!((quad - exact).abs() < 1e-8, "n={n}: {quad} vs {exact}");
    }
}

#[test]
fn one_parent_importance_marginal_matches_quadrature() {
    let prior = PriorSpec::default();
    let tau2 = 100.0;
    for (seed, coef) in [(11u64, 0.8), (12, -1.5), (13, 0.0)] {
        // coef 0: independent columns, fitted with a superfluous parent
        let (g, c) = if coef == 0.0 {
            (Dag::empty(2).unwrap(), EdgeCoefficients::new())
        } else {
            (
                Dag::from_edges(2, &[(0, 1)]).unwrap(),
                EdgeCoefficients::from_pairs(&[((0, 1), coef)]),
            )
        };
        let spec = ScmSpec::new(
            g,
            c,
            vec![
                MixingLaw::gaussian(1.0),
                MixingLaw::ExpOnSquare { mean: 2.0 },
            ],
        )
        .unwrap();
        let data = spec.sample_dataset(50, seed).unwrap();
        let fit = fit_node(&data, 1, NodeSet::singleton(0)).unwrap();
        let est = family_marginal(&data, &fit, &prior, 100_000, seed).unwrap();
        let quad = quad_one_parent_log_marginal(data.column(1), data.column(0), tau2, 1.0, 1.0);
        let tol = (2.0 * est.mc_std_error).max(0.02);
        assert!(
            (est.log_m - quad).abs() <= tol,
            "seed {seed}: IS {} vs quad {quad} (tol {tol})",
            est.log_m
        );
    }
}

#[test]
fn twelve_node_res_cpdag_equals_de_class_pattern() {
    let g = twelve_node_dag();
    let ng = twelve_node_ng();
    let class = brute_de_class(&g, ng);
    let (d, u) = common_pattern(&class);
    let res = res_cpdag(&g, ng).unwrap();
    assert_eq!(res.directed(), &d);
    assert_eq!(res.undirected(), &u);
    // three free undirected edges, each alone in its chain component
    assert_eq!(u.len(), 3);
    assert_eq!(class.len(), 8);
}

#[test]
fn empty_data_is_rejected() {
    assert!(Dataset::from_columns(vec![]).is_err());
}
