use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lindtree_core::blockprod::{check_block_axioms, BlockAlgebra};
use lindtree_core::compile::{compile, CompileOptions};
use lindtree_core::logic::{parse_formula, satisfies, Formula, Interpretation};
use lindtree_core::preclone::{check_axioms, t_exists, t_mod, transformation_pgpair, AxiomMode, DEFAULT_BUDGET};
use lindtree_core::syntactic::syntactic_pgpair;
use lindtree_core::trees::enumerate_trees;
use lindtree_core::{RankedAlphabet, RankedTree, TreeAutomaton, TreeTuple};

fn sigma() -> &'static RankedAlphabet {
    static S: OnceLock<RankedAlphabet> = OnceLock::new();
    S.get_or_init(|| RankedAlphabet::parse("f/2 g/1 a/0 b/0").unwrap())
}

/// Trees of rank 0..=2 with at most four symbol nodes.
fn pool(rank: usize) -> &'static [RankedTree] {
    static P: OnceLock<Vec<Vec<RankedTree>>> = OnceLock::new();
    &P.get_or_init(|| (0..=2).map(|k| enumerate_trees(sigma(), k, 4)).collect())[rank]
}

fn tree(rank: usize) -> impl Strategy<Value = RankedTree> {
    (0..pool(rank).len()).prop_map(move |i| pool(rank)[i].clone())
}

fn any_tree() -> impl Strategy<Value = RankedTree> {
    (0usize..=2).prop_flat_map(tree)
}

/// A tuple of trees whose ranks sum to at most 2.
fn tuple(width: usize) -> impl Strategy<Value = TreeTuple> {
    proptest::collection::vec(0usize..=2, width)
        .prop_filter("total rank", |r| r.iter().sum::<usize>() <= 2)
        .prop_flat_map(|ranks| ranks.into_iter().map(tree).collect::<Vec<_>>())
        .prop_map(TreeTuple::oplus)
}

fn automaton(seed: u64, states: usize) -> TreeAutomaton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TreeAutomaton::random(sigma(), 0, states, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tree_units_are_neutral(t in any_tree()) {
        prop_assert_eq!(t.compose(&TreeTuple::units(t.rank())).unwrap(), t.clone());
        let wrapped = RankedTree::unit().compose(&TreeTuple::oplus(vec![t.clone()])).unwrap();
        prop_assert_eq!(wrapped, t);
    }

    #[test]
    fn tree_composition_is_associative(f in tree(2), g in tuple(2), h_seed in any::<u64>()) {
        let m = g.total_rank();
        let mut rng = ChaCha8Rng::seed_from_u64(h_seed);
        let h: Vec<RankedTree> = (0..m)
            .map(|_| {
                use rand::Rng;
                let p = pool(rng.gen_range(0..=1));
                p[rng.gen_range(0..p.len())].clone()
            })
            .collect();
        let h = TreeTuple::oplus(h);
        let lhs = f.compose(&g).unwrap().compose(&h).unwrap();
        let rhs = f.compose(&g.compose(&h).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn composition_adds_ranks_and_nodes(f in tree(2), g in tuple(2)) {
        let fg = f.compose(&g).unwrap();
        prop_assert_eq!(fg.rank(), g.total_rank());
        let inner: usize = (0..g.width()).map(|i| g.components[i].nv_count()).sum();
        prop_assert_eq!(fg.nv_count(), f.nv_count() + inner);
    }

    #[test]
    fn complement_flips_membership(seed in any::<u64>(), states in 1usize..=3, t in tree(0)) {
        let a = automaton(seed, states);
        prop_assert_eq!(a.complement().accepts(&t).unwrap(), !a.accepts(&t).unwrap());
    }

    #[test]
    fn boolean_operations_follow_membership(s1 in any::<u64>(), s2 in any::<u64>(), t in tree(0)) {
        let (a, b) = (automaton(s1, 2), automaton(s2, 3));
        let (x, y) = (a.accepts(&t).unwrap(), b.accepts(&t).unwrap());
        prop_assert_eq!(a.intersect(&b).unwrap().accepts(&t).unwrap(), x && y);
        prop_assert_eq!(a.union(&b).unwrap().accepts(&t).unwrap(), x || y);
    }

    #[test]
    fn minimization_keeps_the_language(seed in any::<u64>(), states in 1usize..=3, t in tree(0)) {
        let a = automaton(seed, states);
        let m = a.minimize();
        prop_assert!(m.state_count() <= a.state_count());
        prop_assert_eq!(m.accepts(&t).unwrap(), a.accepts(&t).unwrap());
    }

    #[test]
    fn transformation_morphism_is_a_homomorphism(seed in any::<u64>(), f in tree(2), g in tuple(2)) {
        let a = automaton(seed, 2);
        let tp = transformation_pgpair(&a, 2, DEFAULT_BUDGET).unwrap();
        let s = &tp.pgpair.preclone;
        let eval = |t: &RankedTree| tp.morphism.eval(t).unwrap();
        let args: Vec<_> = g.components.iter().map(eval).collect();
        prop_assert_eq!(eval(&f.compose(&g).unwrap()), s.compose(eval(&f), &args).unwrap());
    }

    #[test]
    fn syntactic_pgpair_recognizes_the_language(seed in any::<u64>(), t in tree(0)) {
        let a = automaton(seed, 2);
        let syn = syntactic_pgpair(&a, 2, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(syn.recognizes(&t).unwrap(), a.accepts(&t).unwrap());
    }

    #[test]
    fn negation_flips_satisfaction(t in tree(0), pick in 0usize..4) {
        let texts = ["exists x. P[a](x)", "forall x. (P[f](x) -> exists y. x<y & P[b](y))", "mod[2,1] x. P[g](x)", "exists x. root(x) & P[f](x)"];
        let phi = parse_formula(texts[pick], sigma(), 0).unwrap();
        let lambda = Interpretation::new();
        prop_assert_eq!(
            satisfies(&t, &lambda, &Formula::not(phi.clone())).unwrap(),
            !satisfies(&t, &lambda, &phi).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_preclone_axioms_hold(p in 2usize..=4, seed in any::<u64>()) {
        let report = check_axioms(&t_mod(p, 3).unwrap().preclone, AxiomMode::Sampled { count: 200, seed }).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations.first());
    }

    #[test]
    fn block_product_axioms_hold_on_random_triples(k in 0usize..=1, seed in any::<u64>()) {
        let te = t_exists(3).preclone;
        let alg = BlockAlgebra::new(&te, &te, k).unwrap();
        let report = check_block_axioms(&alg, &[], 50, seed).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations.first());
    }

    #[test]
    fn compiled_complement_flips_membership(t in tree(0), pick in 0usize..3) {
        let texts = ["exists x. P[a](x) & exists y. x<y", "mod[2,0] x. P[b](x)", "forall x. P[g](x) -> exists y. x<y & P[a](y)"];
        let phi = parse_formula(texts[pick], sigma(), 0).unwrap();
        let rec = compile(&phi, sigma(), &[], 0, &CompileOptions::for_rank(0)).unwrap();
        let lambda = Interpretation::new();
        prop_assert_eq!(rec.membership(&t, &lambda).unwrap(), satisfies(&t, &lambda, &phi).unwrap());
        prop_assert_eq!(rec.complement().membership(&t, &lambda).unwrap(), !satisfies(&t, &lambda, &phi).unwrap());
    }
}
