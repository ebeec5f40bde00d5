//! Ranked trees, tree automata and finitary preclones, with a compiler from
//! Lindström-quantifier tree logics to preclone recognizers.

pub mod automata;
pub mod blockprod;
pub mod compile;
pub mod logic;
pub mod preclone;
pub mod syntactic;
pub mod trees;

pub use automata::{AutomatonError, State, TreeAutomaton};
pub use preclone::{Elem, ElementMap, FinitaryPreclone, Morphism, PgPair, PrecloneError};
pub use trees::{Label, NodeId, RankedAlphabet, RankedTree, Sym, TreeError, TreeTuple};
