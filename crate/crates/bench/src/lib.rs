//! Fixtures shared by the benchmarks.

use lindtree_core::blockprod::{all_generators, BlockAlgebra, BlockElement};
use lindtree_core::logic::{parse_formula_file, FormulaFile};
use lindtree_core::preclone::{t_exists, DEFAULT_BUDGET};
use lindtree_core::{RankedAlphabet, TreeAutomaton};
use std::path::Path;

pub fn bool_alphabet() -> RankedAlphabet {
    RankedAlphabet::boolean([0, 2])
}

pub fn exists_automaton() -> TreeAutomaton {
    TreeAutomaton::builtin_exists(&bool_alphabet(), 0).expect("builtin")
}

/// A formula from the committed corpus.
pub fn corpus_formula(name: &str) -> FormulaFile {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/formulas");
    let text = std::fs::read_to_string(dir.join(name)).expect("corpus file");
    parse_formula_file(&text, &dir).expect("corpus formula")
}

/// `T_∃ □_k T_∃` at truncation 3 with its generators.
pub fn exists_block(k: usize) -> (BlockAlgebra, Vec<BlockElement>) {
    let te = t_exists(3);
    let alg = BlockAlgebra::new(&te.preclone, &te.preclone, k).expect("block algebra");
    let gens = all_generators(&alg, &te, &te, DEFAULT_BUDGET).expect("generators");
    (alg, gens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boolean_alphabet_has_four_letters() {
        assert_eq!(bool_alphabet().len(), 4);
    }
}
