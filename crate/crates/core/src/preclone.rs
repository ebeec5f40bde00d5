//! Rank-truncated finitary preclones.
//!
//! A [`FinitaryPreclone`] materializes the sorts of ranks `0..=R` of a
//! preclone (plus, possibly, sorts above `R` that hold only generators) and
//! composes elements whenever the result has rank at most `R`. Most
//! preclones here are built by [`generate`], which closes a set of
//! generators inside an ambient [`Algebra`].

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automata::{AutomatonError, State, TreeAutomaton};
use crate::trees::{Label, RankedAlphabet, RankedTree, Sym, TreeError};

/// Default element budget for closure computations.
pub const DEFAULT_BUDGET: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Elem {
    pub rank: u32,
    pub idx: u32,
}

impl Elem {
    pub fn new(rank: usize, idx: usize) -> Self {
        Elem {
            rank: rank as u32,
            idx: idx as u32,
        }
    }

    pub fn rank(self) -> usize {
        self.rank as usize
    }

    pub fn idx(self) -> usize {
        self.idx as usize
    }
}

impl fmt::Display for Elem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.rank, self.idx)
    }
}

impl std::str::FromStr for Elem {
    type Err = PrecloneError;

    fn from_str(tok: &str) -> Result<Self, PrecloneError> {
        parse_elem(tok, 0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrecloneError {
    #[error("composite of rank {rank} exceeds truncation {trunc}")]
    RankOverflow { rank: usize, trunc: usize },
    #[error("sort mismatch: {0}")]
    SortMismatch(String),
    #[error("closure exceeded the element budget of {0}")]
    BudgetExceeded(usize),
    #[error("not a congruence: {0}")]
    NotACongruence(String),
    #[error("truncations differ: {0} vs {1}")]
    TruncationMismatch(usize, usize),
    #[error("composite not present in the carrier: {0}")]
    NotClosed(String),
    #[error("dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Context(String),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Backend of a [`FinitaryPreclone`]. `compose` may assume its arguments
/// were validated by the wrapper.
pub trait PrecloneImpl: Send + Sync {
    fn truncation(&self) -> usize;
    /// Number of materialized sorts (ranks `0..sort_count`).
    fn sort_count(&self) -> usize;
    fn sort_size(&self, rank: usize) -> usize;
    fn unit(&self) -> Elem;
    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError>;
    fn describe(&self, e: Elem) -> String;
}

/// A shareable handle on a truncated preclone.
#[derive(Clone)]
pub struct FinitaryPreclone(Arc<dyn PrecloneImpl>);

impl fmt::Debug for FinitaryPreclone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FinitaryPreclone(trunc {}, sizes {:?})",
            self.truncation(),
            self.sort_sizes()
        )
    }
}

impl FinitaryPreclone {
    pub fn from_impl(inner: impl PrecloneImpl + 'static) -> Self {
        FinitaryPreclone(Arc::new(inner))
    }

    pub fn from_arc(inner: Arc<dyn PrecloneImpl>) -> Self {
        FinitaryPreclone(inner)
    }

    pub fn truncation(&self) -> usize {
        self.0.truncation()
    }

    pub fn sort_count(&self) -> usize {
        self.0.sort_count()
    }

    pub fn sort_size(&self, rank: usize) -> usize {
        if rank < self.sort_count() {
            self.0.sort_size(rank)
        } else {
            0
        }
    }

    /// Sizes of sorts `0..sort_count`.
    pub fn sort_sizes(&self) -> Vec<usize> {
        (0..self.sort_count()).map(|r| self.sort_size(r)).collect()
    }

    pub fn unit(&self) -> Elem {
        self.0.unit()
    }

    pub fn describe(&self, e: Elem) -> String {
        self.0.describe(e)
    }

    pub fn elements(&self, rank: usize) -> impl Iterator<Item = Elem> {
        (0..self.sort_size(rank)).map(move |i| Elem::new(rank, i))
    }

    /// All elements of all materialized sorts.
    pub fn all_elements(&self) -> Vec<Elem> {
        (0..self.sort_count()).flat_map(|r| self.elements(r)).collect()
    }

    pub fn contains(&self, e: Elem) -> bool {
        e.idx() < self.sort_size(e.rank())
    }

    pub fn ptr_eq(&self, other: &FinitaryPreclone) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// `f · (g_1 ⊕ ... ⊕ g_n)`.
    pub fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        if !self.contains(f) {
            return Err(PrecloneError::SortMismatch(format!("{f} is not an element")));
        }
        if g.len() != f.rank() {
            return Err(PrecloneError::SortMismatch(format!(
                "{f} has rank {} but the tuple has width {}",
                f.rank(),
                g.len()
            )));
        }
        if g.is_empty() {
            return Ok(f);
        }
        let trunc = self.truncation();
        let mut rank = 0;
        for &x in g {
            if !self.contains(x) {
                return Err(PrecloneError::SortMismatch(format!("{x} is not an element")));
            }
            if x.rank() > trunc {
                return Err(PrecloneError::RankOverflow { rank: x.rank(), trunc });
            }
            rank += x.rank();
        }
        if rank > trunc {
            return Err(PrecloneError::RankOverflow { rank, trunc });
        }
        self.0.compose(f, g)
    }

    /// The tuple `𝐧` of unit elements.
    pub fn units(&self, n: usize) -> Vec<Elem> {
        vec![self.unit(); n]
    }

    /// `u · (𝐤1 ⊕ x ⊕ 𝐤2)`.
    pub fn compose_padded(&self, u: Elem, k1: usize, x: Elem, k2: usize) -> Result<Elem, PrecloneError> {
        let mut g = self.units(k1);
        g.push(x);
        g.extend(self.units(k2));
        self.compose(u, &g)
    }

    /// Tuple composition `s · v`: each `s_i` consumes the next `rank(s_i)` entries of `v`.
    pub fn compose_tuple(&self, s: &[Elem], v: &[Elem]) -> Result<Vec<Elem>, PrecloneError> {
        let total: usize = s.iter().map(|e| e.rank()).sum();
        if total != v.len() {
            return Err(PrecloneError::SortMismatch(format!(
                "tuple of total rank {total} applied to {} arguments",
                v.len()
            )));
        }
        let mut out = Vec::with_capacity(s.len());
        let mut at = 0;
        for &x in s {
            out.push(self.compose(x, &v[at..at + x.rank()])?);
            at += x.rank();
        }
        Ok(out)
    }

    /// All tuples of the given width and total rank with entries of rank at most the truncation.
    pub fn tuples(&self, width: usize, total: usize) -> Vec<Vec<Elem>> {
        let max = self.truncation().min(self.sort_count().saturating_sub(1));
        let mut out = Vec::new();
        for ranks in rank_compositions(width, total, max) {
            let mut acc = Vec::with_capacity(width);
            self.product_of_sorts(&ranks, &mut acc, &mut out);
        }
        out
    }

    fn product_of_sorts(&self, ranks: &[usize], acc: &mut Vec<Elem>, out: &mut Vec<Vec<Elem>>) {
        match ranks.split_first() {
            None => out.push(acc.clone()),
            Some((&r, rest)) => {
                for e in self.elements(r) {
                    acc.push(e);
                    self.product_of_sorts(rest, acc, out);
                    acc.pop();
                }
            }
        }
    }

    /// Evaluates `t` with symbols interpreted by `image` and variables by the unit.
    pub fn eval_tree(&self, t: &RankedTree, image: &dyn Fn(Sym) -> Elem) -> Result<Elem, PrecloneError> {
        match t.label() {
            Label::Var(_) => Ok(self.unit()),
            Label::Sym(s) => {
                let kids = t
                    .children()
                    .iter()
                    .map(|c| self.eval_tree(c, image))
                    .collect::<Result<Vec<_>, _>>()?;
                self.compose(image(s), &kids)
            }
        }
    }
}

/// Sequences of `width` ranks, each at most `max`, summing to `total`.
pub fn rank_compositions(width: usize, total: usize, max: usize) -> Vec<Vec<usize>> {
    fn go(width: usize, total: usize, max: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if width == 0 {
            if total == 0 {
                out.push(acc.clone());
            }
            return;
        }
        for r in 0..=total.min(max) {
            acc.push(r);
            go(width - 1, total - r, max, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(width, total, max, &mut Vec::new(), &mut out);
    out
}

/// A preclone together with a distinguished generating set.
#[derive(Clone, Debug)]
pub struct PgPair {
    pub preclone: FinitaryPreclone,
    pub generators: Vec<Elem>,
}

impl PgPair {
    pub fn generators_of_rank(&self, n: usize) -> Vec<Elem> {
        self.generators.iter().copied().filter(|g| g.rank() == n).collect()
    }
}

/// A rank-preserving assignment of preclone elements to the letters of an alphabet.
#[derive(Clone, Debug)]
pub struct Morphism {
    pub target: FinitaryPreclone,
    pub images: Vec<Elem>,
}

impl Morphism {
    pub fn new(target: FinitaryPreclone, alphabet: &RankedAlphabet, images: Vec<Elem>) -> Result<Self, PrecloneError> {
        if images.len() != alphabet.len() {
            return Err(PrecloneError::SortMismatch("one image per letter is required".into()));
        }
        for s in alphabet.symbols() {
            let e = images[s.index()];
            if e.rank() != alphabet.arity(s) || !target.contains(e) {
                return Err(PrecloneError::SortMismatch(format!(
                    "image {e} of `{}` does not have rank {}",
                    alphabet.name(s),
                    alphabet.arity(s)
                )));
            }
        }
        Ok(Morphism { target, images })
    }

    pub fn image(&self, s: Sym) -> Elem {
        self.images[s.index()]
    }

    /// Homomorphic extension to trees.
    pub fn eval(&self, t: &RankedTree) -> Result<Elem, PrecloneError> {
        self.target.eval_tree(t, &|s| self.images[s.index()])
    }
}

/// Homomorphic evaluation of a tree under a letter morphism.
pub fn morphism_eval(phi: &Morphism, t: &RankedTree) -> Result<Elem, PrecloneError> {
    phi.eval(t)
}

/// A map between the carriers of two preclones, given per rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementMap {
    pub images: Vec<Vec<Elem>>,
}

impl ElementMap {
    pub fn apply(&self, e: Elem) -> Elem {
        self.images[e.rank()][e.idx()]
    }

    /// Checks `h(f·g) = h(f)·h(g)` on every composition instance of `source`.
    pub fn check_homomorphism(
        &self,
        source: &FinitaryPreclone,
        target: &FinitaryPreclone,
    ) -> Result<Option<String>, PrecloneError> {
        if self.apply(source.unit()) != target.unit() {
            return Ok(Some("unit not preserved".into()));
        }
        let mut witness = None;
        for_each_instance(source, |f, g| {
            if witness.is_some() {
                return Ok(());
            }
            let lhs = self.apply(source.compose(f, g)?);
            let hg: Vec<Elem> = g.iter().map(|&x| self.apply(x)).collect();
            let rhs = target.compose(self.apply(f), &hg)?;
            if lhs != rhs {
                witness = Some(format!("{f} · {g:?}: {lhs} vs {rhs}"));
            }
            Ok(())
        })?;
        Ok(witness)
    }
}

/// Calls `visit(f, g)` for every composable pair within truncation.
pub fn for_each_instance(
    s: &FinitaryPreclone,
    mut visit: impl FnMut(Elem, &[Elem]) -> Result<(), PrecloneError>,
) -> Result<(), PrecloneError> {
    let trunc = s.truncation();
    let mut cache: HashMap<usize, Vec<Vec<Elem>>> = HashMap::new();
    for n in 0..s.sort_count() {
        let tuples = cache
            .entry(n)
            .or_insert_with(|| (0..=trunc).flat_map(|m| s.tuples(n, m)).collect());
        for f in s.elements(n) {
            for g in tuples.iter() {
                visit(f, g)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ambient algebras and generated closures

/// An ambient preclone whose elements are explicit values.
pub trait Algebra: Send + Sync + 'static {
    type Value: Clone + Eq + Hash + Send + Sync + fmt::Debug;
    fn rank(&self, v: &Self::Value) -> usize;
    fn unit(&self) -> Self::Value;
    fn compose(&self, f: &Self::Value, g: &[Self::Value]) -> Result<Self::Value, PrecloneError>;
    fn describe(&self, v: &Self::Value) -> String;
}

/// The sub-preclone of an [`Algebra`] generated by a set of values, truncated at `R`.
pub struct Closure<A: Algebra> {
    alg: A,
    trunc: usize,
    sorts: Vec<Vec<A::Value>>,
    index: HashMap<A::Value, Elem>,
    generators: Vec<Elem>,
}

impl<A: Algebra> Closure<A> {
    pub fn algebra(&self) -> &A {
        &self.alg
    }

    pub fn value(&self, e: Elem) -> &A::Value {
        &self.sorts[e.rank()][e.idx()]
    }

    pub fn find(&self, v: &A::Value) -> Option<Elem> {
        self.index.get(v).copied()
    }

    pub fn generators(&self) -> &[Elem] {
        &self.generators
    }

    pub fn values(&self, rank: usize) -> &[A::Value] {
        self.sorts.get(rank).map(Vec::as_slice).unwrap_or(&[])
    }

    fn insert(&mut self, v: A::Value, budget: usize) -> Result<(Elem, bool), PrecloneError> {
        if let Some(&e) = self.index.get(&v) {
            return Ok((e, false));
        }
        if self.index.len() >= budget {
            return Err(PrecloneError::BudgetExceeded(budget));
        }
        let r = self.alg.rank(&v);
        if self.sorts.len() <= r {
            self.sorts.resize_with(r + 1, Vec::new);
        }
        let e = Elem::new(r, self.sorts[r].len());
        self.sorts[r].push(v.clone());
        self.index.insert(v, e);
        Ok((e, true))
    }
}

/// Closes `generators` under composition inside `alg`, keeping ranks up to `trunc`.
/// Generators of rank above `trunc` are kept in their own sorts but never
/// appear as arguments.
pub fn generate<A: Algebra>(
    alg: A,
    generators: Vec<A::Value>,
    trunc: usize,
    budget: usize,
) -> Result<Closure<A>, PrecloneError> {
    let mut c = Closure {
        trunc,
        sorts: vec![Vec::new(), Vec::new()],
        index: HashMap::new(),
        generators: Vec::new(),
        alg,
    };
    let unit = c.alg.unit();
    c.insert(unit, budget)?;
    for g in generators {
        let (e, _) = c.insert(g, budget)?;
        if !c.generators.contains(&e) {
            c.generators.push(e);
        }
    }
    let heads: Vec<Elem> = c.generators.iter().copied().filter(|g| g.rank() > 0).collect();
    let mut old_end = vec![0usize; c.sorts.len()];
    let mut cur_end: Vec<usize> = c.sorts.iter().map(Vec::len).collect();
    loop {
        let mut grew = false;
        for &a in &heads {
            let n = a.rank();
            let head = c.value(a).clone();
            for ranks in (0..=trunc).flat_map(|t| rank_compositions(n, t, trunc)) {
                for first_new in 0..n {
                    let ranges: Vec<(usize, usize)> = ranks
                        .iter()
                        .enumerate()
                        .map(|(i, &r)| {
                            let old = old_end.get(r).copied().unwrap_or(0);
                            let cur = cur_end.get(r).copied().unwrap_or(0);
                            match i.cmp(&first_new) {
                                std::cmp::Ordering::Less => (0, old),
                                std::cmp::Ordering::Equal => (old, cur),
                                std::cmp::Ordering::Greater => (0, cur),
                            }
                        })
                        .collect();
                    if ranges.iter().any(|(lo, hi)| lo >= hi) {
                        continue;
                    }
                    let mut pos: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                    loop {
                        let args: Vec<A::Value> =
                            pos.iter().zip(&ranks).map(|(&i, &r)| c.sorts[r][i].clone()).collect();
                        let v = c.alg.compose(&head, &args)?;
                        if c.insert(v, budget)?.1 {
                            grew = true;
                        }
                        if !advance(&mut pos, &ranges) {
                            break;
                        }
                    }
                }
            }
        }
        if !grew {
            break;
        }
        old_end = cur_end;
        cur_end = c.sorts.iter().map(Vec::len).collect();
        old_end.resize(cur_end.len(), 0);
    }
    Ok(c)
}

/// Odometer step over `ranges`; false once every position wrapped.
fn advance(pos: &mut [usize], ranges: &[(usize, usize)]) -> bool {
    for i in (0..pos.len()).rev() {
        pos[i] += 1;
        if pos[i] < ranges[i].1 {
            return true;
        }
        pos[i] = ranges[i].0;
    }
    false
}

impl<A: Algebra> PrecloneImpl for Closure<A> {
    fn truncation(&self) -> usize {
        self.trunc
    }

    fn sort_count(&self) -> usize {
        self.sorts.len()
    }

    fn sort_size(&self, rank: usize) -> usize {
        self.sorts[rank].len()
    }

    fn unit(&self) -> Elem {
        Elem::new(1, 0)
    }

    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        let args: Vec<A::Value> = g.iter().map(|&x| self.value(x).clone()).collect();
        let v = self.alg.compose(self.value(f), &args)?;
        self.find(&v)
            .ok_or_else(|| PrecloneError::NotClosed(self.alg.describe(&v)))
    }

    fn describe(&self, e: Elem) -> String {
        self.alg.describe(self.value(e))
    }
}

/// Wraps a closure as a [`FinitaryPreclone`] while keeping typed access to its values.
pub fn share<A: Algebra>(c: Closure<A>) -> (Arc<Closure<A>>, FinitaryPreclone) {
    let arc = Arc::new(c);
    let handle = FinitaryPreclone(arc.clone());
    (arc, handle)
}

/// A preclone viewed as an ambient algebra over its own elements.
impl Algebra for FinitaryPreclone {
    type Value = Elem;

    fn rank(&self, v: &Elem) -> usize {
        v.rank()
    }

    fn unit(&self) -> Elem {
        FinitaryPreclone::unit(self)
    }

    fn compose(&self, f: &Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        FinitaryPreclone::compose(self, *f, g)
    }

    fn describe(&self, v: &Elem) -> String {
        FinitaryPreclone::describe(self, *v)
    }
}

/// The sub-pg-pair of `s` generated by `b`, together with its embedding into `s`.
pub fn sub_pgpair_generated(
    s: &FinitaryPreclone,
    b: &[Elem],
    trunc: usize,
    budget: usize,
) -> Result<(PgPair, ElementMap), PrecloneError> {
    let c = generate(s.clone(), b.to_vec(), trunc, budget)?;
    let embed = ElementMap {
        images: (0..c.sorts.len()).map(|r| c.values(r).to_vec()).collect(),
    };
    let generators = c.generators.clone();
    let (_, pre) = share(c);
    Ok((
        PgPair {
            preclone: pre,
            generators,
        },
        embed,
    ))
}

// ---------------------------------------------------------------------------
// Built-in algebras

/// The functions `or_n` and `true_n` on Booleans.
#[derive(Clone, Copy, Debug, Default)]
pub struct OrAlgebra;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OrValue {
    pub rank: usize,
    pub constant_true: bool,
}

impl Algebra for OrAlgebra {
    type Value = OrValue;

    fn rank(&self, v: &OrValue) -> usize {
        v.rank
    }

    fn unit(&self) -> OrValue {
        OrValue {
            rank: 1,
            constant_true: false,
        }
    }

    fn compose(&self, f: &OrValue, g: &[OrValue]) -> Result<OrValue, PrecloneError> {
        let rank = g.iter().map(|x| x.rank).sum();
        Ok(OrValue {
            rank,
            constant_true: f.constant_true || g.iter().any(|x| x.constant_true),
        })
    }

    fn describe(&self, v: &OrValue) -> String {
        match (v.constant_true, v.rank) {
            (true, n) => format!("true_{n}"),
            (false, 0) => "false_0".into(),
            (false, n) => format!("or_{n}"),
        }
    }
}

/// The functions `f_{n,r}(x_1..x_n) = x_1 + ... + x_n + r mod p`.
#[derive(Clone, Copy, Debug)]
pub struct ModAlgebra {
    pub p: usize,
}

impl Algebra for ModAlgebra {
    type Value = (usize, usize);

    fn rank(&self, v: &(usize, usize)) -> usize {
        v.0
    }

    fn unit(&self) -> (usize, usize) {
        (1, 0)
    }

    fn compose(&self, f: &(usize, usize), g: &[(usize, usize)]) -> Result<(usize, usize), PrecloneError> {
        let rank = g.iter().map(|x| x.0).sum();
        let r = g.iter().fold(f.1, |acc, x| (acc + x.1) % self.p);
        Ok((rank, r))
    }

    fn describe(&self, v: &(usize, usize)) -> String {
        format!("f_{}_{}", v.0, v.1)
    }
}

/// The pg-pair `T_∃` generated by `or_2`, `true_0` and `false_0`.
pub fn t_exists(trunc: usize) -> PgPair {
    let gens = vec![
        OrValue {
            rank: 2,
            constant_true: false,
        },
        OrValue {
            rank: 0,
            constant_true: true,
        },
        OrValue {
            rank: 0,
            constant_true: false,
        },
    ];
    let c = generate(OrAlgebra, gens, trunc, DEFAULT_BUDGET).expect("T_exists is tiny");
    let generators = c.generators.clone();
    PgPair {
        preclone: share(c).1,
        generators,
    }
}

/// The pg-pair `T_p` generated by `f_{0,0}`, `f_{1,1}` and `f_{2,0}`.
pub fn t_mod(p: usize, trunc: usize) -> Result<PgPair, PrecloneError> {
    if p < 2 {
        return Err(PrecloneError::Context(format!("modulus must be at least 2, got {p}")));
    }
    let gens = vec![(0, 0), (1, 1 % p), (2, 0)];
    let c = generate(ModAlgebra { p }, gens, trunc, DEFAULT_BUDGET)?;
    let generators = c.generators.clone();
    Ok(PgPair {
        preclone: share(c).1,
        generators,
    })
}

/// The preclone `𝕋(Q)` of all transformations of `0..q`.
#[derive(Clone, Copy, Debug)]
pub struct TransformAlgebra {
    pub q: usize,
}

/// A total map `Q^arity → Q` stored row-major (first argument most significant).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transform {
    pub arity: usize,
    pub table: Vec<State>,
}

impl Transform {
    pub fn apply(&self, q: usize, args: &[State]) -> State {
        let i = args.iter().fold(0usize, |acc, &x| acc * q + x as usize);
        self.table[i]
    }
}

impl Algebra for TransformAlgebra {
    type Value = Transform;

    fn rank(&self, v: &Transform) -> usize {
        v.arity
    }

    fn unit(&self) -> Transform {
        Transform {
            arity: 1,
            table: (0..self.q as State).collect(),
        }
    }

    fn compose(&self, f: &Transform, g: &[Transform]) -> Result<Transform, PrecloneError> {
        let q = self.q;
        let m: usize = g.iter().map(|x| x.arity).sum();
        let size = q.pow(m as u32);
        // divisor and modulus to extract each block's index from a global index
        let mut blocks = Vec::with_capacity(g.len());
        let mut after = m;
        for x in g {
            after -= x.arity;
            blocks.push((q.pow(after as u32), q.pow(x.arity as u32)));
        }
        let mut table = Vec::with_capacity(size);
        for i in 0..size {
            let mut fi = 0usize;
            for (x, &(div, modulus)) in g.iter().zip(&blocks) {
                fi = fi * q + x.table[(i / div) % modulus] as usize;
            }
            table.push(f.table[fi]);
        }
        Ok(Transform { arity: m, table })
    }

    fn describe(&self, v: &Transform) -> String {
        let cells: Vec<String> = v.table.iter().map(|q| q.to_string()).collect();
        format!("T{}[{}]", v.arity, cells.join("."))
    }
}

/// The transformation pg-pair of an automaton and the letter morphism into it.
pub struct TransformationPgPair {
    pub closure: Arc<Closure<TransformAlgebra>>,
    pub pgpair: PgPair,
    pub morphism: Morphism,
    pub var_states: Vec<State>,
    pub finals: Vec<bool>,
}

impl TransformationPgPair {
    pub fn transform(&self, e: Elem) -> &Transform {
        self.closure.value(e)
    }

    /// State reached by a rank-`n` element on the variable states `v_1..v_n`.
    pub fn state_on_vars(&self, e: Elem) -> State {
        let q = self.closure.algebra().q;
        self.transform(e).apply(q, &self.var_states[..e.rank()])
    }

    /// The rank-`k` elements whose evaluation on the variable states is final.
    pub fn accepting(&self, k: usize) -> Vec<Elem> {
        self.pgpair
            .preclone
            .elements(k)
            .filter(|&e| self.finals[self.state_on_vars(e) as usize])
            .collect()
    }
}

/// The sub-preclone of `𝕋(Q)` generated by the letter transformations of `a`.
pub fn transformation_pgpair(
    a: &TreeAutomaton,
    trunc: usize,
    budget: usize,
) -> Result<TransformationPgPair, PrecloneError> {
    let q = a.state_count();
    let alphabet = a.alphabet();
    let letters: Vec<Transform> = alphabet
        .symbols()
        .map(|s| {
            let m = alphabet.arity(s);
            let mut table = Vec::with_capacity(q.pow(m as u32));
            crate::automata::for_each_tuple(q, m, |c| table.push(a.delta(s, c)));
            Transform { arity: m, table }
        })
        .collect();
    let c = generate(TransformAlgebra { q }, letters.clone(), trunc, budget)?;
    let images: Vec<Elem> = letters.iter().map(|t| c.find(t).expect("letter present")).collect();
    let generators = c.generators.clone();
    let (closure, pre) = share(c);
    let morphism = Morphism::new(pre.clone(), alphabet, images)?;
    Ok(TransformationPgPair {
        closure,
        pgpair: PgPair {
            preclone: pre,
            generators,
        },
        morphism,
        var_states: a.var_states().to_vec(),
        finals: a.finals().to_vec(),
    })
}

/// Transformation pg-pairs of `count` random rank-0 automata over `alphabet`,
/// drawn from `seed` with a state count in `states`. Automata whose truncated
/// transformation preclone has more than `max_elements` elements are redrawn.
pub fn random_transformation_pgpairs(
    alphabet: &RankedAlphabet,
    count: usize,
    states: std::ops::RangeInclusive<usize>,
    trunc: usize,
    max_elements: usize,
    seed: u64,
) -> Result<Vec<(TreeAutomaton, TransformationPgPair)>, PrecloneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(PrecloneError::BudgetExceeded(max_elements));
        }
        let q = rng.gen_range(states.clone());
        let a = TreeAutomaton::random(alphabet, 0, q, &mut rng)?;
        match transformation_pgpair(&a, trunc, max_elements) {
            Ok(tp) if tp.pgpair.preclone.sort_sizes().iter().sum::<usize>() <= max_elements => out.push((a, tp)),
            Ok(_) | Err(PrecloneError::BudgetExceeded(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Products, tables, quotients

/// Componentwise product of several preclones, as an ambient algebra.
#[derive(Clone, Debug)]
pub struct ProductAlgebra {
    pub factors: Vec<FinitaryPreclone>,
}

impl Algebra for ProductAlgebra {
    type Value = Vec<Elem>;

    fn rank(&self, v: &Vec<Elem>) -> usize {
        v.first().map(|e| e.rank()).unwrap_or(1)
    }

    fn unit(&self) -> Vec<Elem> {
        self.factors.iter().map(|f| f.unit()).collect()
    }

    fn compose(&self, f: &Vec<Elem>, g: &[Vec<Elem>]) -> Result<Vec<Elem>, PrecloneError> {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let gi: Vec<Elem> = g.iter().map(|x| x[i]).collect();
                s.compose(f[i], &gi)
            })
            .collect()
    }

    fn describe(&self, v: &Vec<Elem>) -> String {
        let parts: Vec<String> = v.iter().zip(&self.factors).map(|(e, s)| s.describe(*e)).collect();
        format!("<{}>", parts.join(","))
    }
}

/// The full direct product `S × T` with componentwise sorts.
pub struct ProductPreclone {
    s: FinitaryPreclone,
    t: FinitaryPreclone,
}

impl ProductPreclone {
    pub fn pair(&self, a: Elem, b: Elem) -> Elem {
        Elem::new(a.rank(), a.idx() * self.t.sort_size(a.rank()) + b.idx())
    }

    pub fn split(&self, e: Elem) -> (Elem, Elem) {
        let n = self.t.sort_size(e.rank());
        (Elem::new(e.rank(), e.idx() / n), Elem::new(e.rank(), e.idx() % n))
    }
}

impl PrecloneImpl for ProductPreclone {
    fn truncation(&self) -> usize {
        self.s.truncation()
    }

    fn sort_count(&self) -> usize {
        self.s.sort_count().min(self.t.sort_count())
    }

    fn sort_size(&self, rank: usize) -> usize {
        self.s.sort_size(rank) * self.t.sort_size(rank)
    }

    fn unit(&self) -> Elem {
        self.pair(self.s.unit(), self.t.unit())
    }

    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        let (fa, fb) = self.split(f);
        let (ga, gb): (Vec<Elem>, Vec<Elem>) = g.iter().map(|&x| self.split(x)).unzip();
        Ok(self.pair(self.s.compose(fa, &ga)?, self.t.compose(fb, &gb)?))
    }

    fn describe(&self, e: Elem) -> String {
        let (a, b) = self.split(e);
        format!("({},{})", self.s.describe(a), self.t.describe(b))
    }
}

/// The direct product of two preclones with equal truncation.
pub fn direct_product(
    s: &FinitaryPreclone,
    t: &FinitaryPreclone,
) -> Result<(FinitaryPreclone, Arc<ProductPreclone>), PrecloneError> {
    if s.truncation() != t.truncation() {
        return Err(PrecloneError::TruncationMismatch(s.truncation(), t.truncation()));
    }
    let p = Arc::new(ProductPreclone {
        s: s.clone(),
        t: t.clone(),
    });
    Ok((FinitaryPreclone(p.clone()), p))
}

/// The morphism `σ ↦ (φ(σ), ψ(σ))` into the product.
pub fn target_tupling(
    product: &(FinitaryPreclone, Arc<ProductPreclone>),
    alphabet: &RankedAlphabet,
    phi: &Morphism,
    psi: &Morphism,
) -> Result<Morphism, PrecloneError> {
    let images = alphabet
        .symbols()
        .map(|s| product.1.pair(phi.image(s), psi.image(s)))
        .collect();
    Morphism::new(product.0.clone(), alphabet, images)
}

/// A preclone given by an explicit composition table.
#[derive(Clone, Debug)]
pub struct TablePreclone {
    pub trunc: usize,
    pub names: Vec<Vec<String>>,
    pub unit: Elem,
    pub table: HashMap<(Elem, Vec<Elem>), Elem>,
}

impl TablePreclone {
    /// Records every composition instance of `s`.
    pub fn materialize(s: &FinitaryPreclone) -> Result<Self, PrecloneError> {
        let mut table = HashMap::new();
        for_each_instance(s, |f, g| {
            table.insert((f, g.to_vec()), s.compose(f, g)?);
            Ok(())
        })?;
        Ok(TablePreclone {
            trunc: s.truncation(),
            names: (0..s.sort_count())
                .map(|r| s.elements(r).map(|e| s.describe(e)).collect())
                .collect(),
            unit: s.unit(),
            table,
        })
    }
}

impl PrecloneImpl for TablePreclone {
    fn truncation(&self) -> usize {
        self.trunc
    }

    fn sort_count(&self) -> usize {
        self.names.len()
    }

    fn sort_size(&self, rank: usize) -> usize {
        self.names[rank].len()
    }

    fn unit(&self) -> Elem {
        self.unit
    }

    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        self.table
            .get(&(f, g.to_vec()))
            .copied()
            .ok_or_else(|| PrecloneError::NotClosed(format!("no table entry for {f} · {g:?}")))
    }

    fn describe(&self, e: Elem) -> String {
        self.names[e.rank()][e.idx()].clone()
    }
}

/// Per-rank partition of a preclone's sorts; `classes[n][i]` is the class of element `n.i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CongruenceClasses {
    pub classes: Vec<Vec<u32>>,
}

impl CongruenceClasses {
    /// Builds classes numbered by first occurrence from arbitrary per-element keys.
    pub fn from_keys<K: Eq + Hash>(keys: Vec<Vec<K>>) -> Self {
        let classes = keys
            .into_iter()
            .map(|sort| {
                let mut ids: HashMap<K, u32> = HashMap::new();
                sort.into_iter()
                    .map(|k| {
                        let n = ids.len() as u32;
                        *ids.entry(k).or_insert(n)
                    })
                    .collect()
            })
            .collect();
        CongruenceClasses { classes }
    }

    pub fn class_of(&self, e: Elem) -> u32 {
        self.classes[e.rank()][e.idx()]
    }

    pub fn class_count(&self, rank: usize) -> usize {
        self.classes
            .get(rank)
            .map(|c| c.iter().copied().max().map_or(0, |m| m as usize + 1))
            .unwrap_or(0)
    }

    pub fn same(&self, a: Elem, b: Elem) -> bool {
        a.rank == b.rank && self.class_of(a) == self.class_of(b)
    }
}

struct QuotientPreclone {
    base: FinitaryPreclone,
    classes: CongruenceClasses,
    reps: Vec<Vec<Elem>>,
}

impl PrecloneImpl for QuotientPreclone {
    fn truncation(&self) -> usize {
        self.base.truncation()
    }

    fn sort_count(&self) -> usize {
        self.reps.len()
    }

    fn sort_size(&self, rank: usize) -> usize {
        self.reps[rank].len()
    }

    fn unit(&self) -> Elem {
        Elem::new(1, self.classes.class_of(self.base.unit()) as usize)
    }

    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        let rep = |e: Elem| self.reps[e.rank()][e.idx()];
        let gs: Vec<Elem> = g.iter().map(|&x| rep(x)).collect();
        let h = self.base.compose(rep(f), &gs)?;
        Ok(Elem::new(h.rank(), self.classes.class_of(h) as usize))
    }

    fn describe(&self, e: Elem) -> String {
        format!("[{}]", self.base.describe(self.reps[e.rank()][e.idx()]))
    }
}

/// The quotient by a congruence, with the projection map. The congruence
/// property is checked on every composition instance.
pub fn quotient(
    s: &FinitaryPreclone,
    classes: &CongruenceClasses,
) -> Result<(FinitaryPreclone, ElementMap), PrecloneError> {
    if classes.classes.len() != s.sort_count()
        || (0..s.sort_count()).any(|r| classes.classes[r].len() != s.sort_size(r))
    {
        return Err(PrecloneError::SortMismatch("partition does not cover the sorts".into()));
    }
    let mut reps: Vec<Vec<Elem>> = Vec::new();
    for (r, sort) in classes.classes.iter().enumerate() {
        let mut rep = vec![None; classes.class_count(r)];
        for (i, &c) in sort.iter().enumerate() {
            rep[c as usize].get_or_insert(Elem::new(r, i));
        }
        reps.push(
            rep.into_iter()
                .map(|e| e.expect("classes are numbered densely"))
                .collect(),
        );
    }
    type Shape = (usize, u32, Vec<(usize, u32)>);
    let mut seen: HashMap<Shape, (Elem, Vec<Elem>, u32)> = HashMap::new();
    for_each_instance(s, |f, g| {
        let h = s.compose(f, g)?;
        let key = (
            f.rank(),
            classes.class_of(f),
            g.iter().map(|&x| (x.rank(), classes.class_of(x))).collect(),
        );
        let value = classes.class_of(h);
        match seen.get(&key) {
            Some((f0, g0, v0)) if *v0 != value => Err(PrecloneError::NotACongruence(format!(
                "{f0}·{g0:?} and {f}·{g:?} have related arguments but unrelated results"
            ))),
            Some(_) => Ok(()),
            None => {
                seen.insert(key, (f, g.to_vec(), value));
                Ok(())
            }
        }
    })?;
    let projection = ElementMap {
        images: classes
            .classes
            .iter()
            .enumerate()
            .map(|(r, sort)| sort.iter().map(|&c| Elem::new(r, c as usize)).collect())
            .collect(),
    };
    let q = QuotientPreclone {
        base: s.clone(),
        classes: classes.clone(),
        reps,
    };
    Ok((FinitaryPreclone::from_impl(q), projection))
}

// ---------------------------------------------------------------------------
// Axioms and isomorphism

/// How [`check_axioms`] selects instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxiomMode {
    Exhaustive,
    Sampled { count: usize, seed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AxiomReport {
    pub unit_checked: usize,
    pub assoc_checked: usize,
    pub violations: Vec<String>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn assoc_sides(s: &FinitaryPreclone, f: Elem, g: &[Elem], h: &[Elem]) -> Result<(Elem, Elem), PrecloneError> {
    let lhs = s.compose(s.compose(f, g)?, h)?;
    let inner = s.compose_tuple(g, h)?;
    let rhs = s.compose(f, &inner)?;
    Ok((lhs, rhs))
}

/// Checks the unit laws and associativity within truncation.
pub fn check_axioms(s: &FinitaryPreclone, mode: AxiomMode) -> Result<AxiomReport, PrecloneError> {
    let trunc = s.truncation();
    let mut report = AxiomReport::default();
    let unit = s.unit();
    for n in 0..=trunc.min(s.sort_count() - 1) {
        for f in s.elements(n) {
            report.unit_checked += 1;
            let left = s.compose(unit, &[f])?;
            let right = s.compose(f, &s.units(n))?;
            if left != f {
                report
                    .violations
                    .push(format!("unit law 1·f fails for f = {f} ({})", s.describe(f)));
            }
            if right != f {
                report
                    .violations
                    .push(format!("unit law f·n fails for f = {f} ({})", s.describe(f)));
            }
        }
    }
    let mut tuples_by_width: HashMap<usize, Vec<Vec<Elem>>> = HashMap::new();
    let mut tuples = |w: usize| -> Vec<Vec<Elem>> {
        tuples_by_width
            .entry(w)
            .or_insert_with(|| (0..=trunc).flat_map(|m| s.tuples(w, m)).collect())
            .clone()
    };
    let check = |f: Elem, g: &[Elem], h: &[Elem], report: &mut AxiomReport| -> Result<(), PrecloneError> {
        report.assoc_checked += 1;
        let (lhs, rhs) = assoc_sides(s, f, g, h)?;
        if lhs != rhs {
            report.violations.push(format!(
                "associativity fails: f = {f}, g = {g:?}, h = {h:?}: {lhs} vs {rhs}"
            ));
        }
        Ok(())
    };
    match mode {
        AxiomMode::Exhaustive => {
            for n in 0..s.sort_count() {
                let gs = tuples(n);
                for f in s.elements(n) {
                    for g in &gs {
                        let m: usize = g.iter().map(|e| e.rank()).sum();
                        let fg = s.compose(f, g)?;
                        for h in tuples(m) {
                            report.assoc_checked += 1;
                            let lhs = s.compose(fg, &h)?;
                            let rhs = s.compose(f, &s.compose_tuple(g, &h)?)?;
                            if lhs != rhs {
                                report.violations.push(format!(
                                    "associativity fails: f = {f}, g = {g:?}, h = {h:?}: {lhs} vs {rhs}"
                                ));
                            }
                        }
                    }
                }
            }
        }
        AxiomMode::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let all = s.all_elements();
            for _ in 0..count {
                let f = all[rng.gen_range(0..all.len())];
                let gs = tuples(f.rank());
                if gs.is_empty() {
                    continue;
                }
                let g = gs[rng.gen_range(0..gs.len())].clone();
                let m: usize = g.iter().map(|e| e.rank()).sum();
                let hs = tuples(m);
                let h = hs[rng.gen_range(0..hs.len())].clone();
                check(f, &g, &h, &mut report)?;
            }
        }
    }
    Ok(report)
}

/// Searches for a rank-preserving bijection respecting unit and
/// composition (within the common truncation). Returns the map from `s` to `t`.
pub fn find_isomorphism(s: &FinitaryPreclone, t: &FinitaryPreclone) -> Result<Option<ElementMap>, PrecloneError> {
    if s.truncation() != t.truncation() || s.sort_sizes() != t.sort_sizes() {
        return Ok(None);
    }
    let order: Vec<Elem> = s.all_elements();
    let position: HashMap<Elem, usize> = order.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    // instances bucketed by the last position among their participants
    let mut buckets: Vec<Vec<(Elem, Vec<Elem>, Elem)>> = vec![Vec::new(); order.len()];
    for_each_instance(s, |f, g| {
        let h = s.compose(f, g)?;
        let last = std::iter::once(f)
            .chain(g.iter().copied())
            .chain(std::iter::once(h))
            .map(|e| position[&e])
            .max()
            .unwrap();
        buckets[last].push((f, g.to_vec(), h));
        Ok(())
    })?;
    let mut images: HashMap<Elem, Elem> = HashMap::new();
    let mut used: std::collections::HashSet<Elem> = std::collections::HashSet::new();

    fn search(
        i: usize,
        order: &[Elem],
        buckets: &[Vec<(Elem, Vec<Elem>, Elem)>],
        s: &FinitaryPreclone,
        t: &FinitaryPreclone,
        images: &mut HashMap<Elem, Elem>,
        used: &mut std::collections::HashSet<Elem>,
    ) -> Result<bool, PrecloneError> {
        if i == order.len() {
            return Ok(true);
        }
        let e = order[i];
        let candidates: Vec<Elem> = if e == s.unit() {
            vec![t.unit()]
        } else {
            t.elements(e.rank()).filter(|c| *c != t.unit()).collect()
        };
        for c in candidates {
            if used.contains(&c) {
                continue;
            }
            images.insert(e, c);
            used.insert(c);
            let mut ok = true;
            for (f, g, h) in &buckets[i] {
                let tg: Vec<Elem> = g.iter().map(|x| images[x]).collect();
                if t.compose(images[f], &tg)? != images[h] {
                    ok = false;
                    break;
                }
            }
            if ok && search(i + 1, order, buckets, s, t, images, used)? {
                return Ok(true);
            }
            images.remove(&e);
            used.remove(&c);
        }
        Ok(false)
    }

    if search(0, &order, &buckets, s, t, &mut images, &mut used)? {
        let map = ElementMap {
            images: (0..s.sort_count())
                .map(|r| s.elements(r).map(|e| images[&e]).collect())
                .collect(),
        };
        Ok(Some(map))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Dump format

/// Writes the preclone dump: sorts with stable indices, unit, generators and
/// every composition instance as `n: f (g1 .. gn) -> h`.
pub fn dump(s: &FinitaryPreclone, generators: &[Elem]) -> Result<String, PrecloneError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "trunc {}", s.truncation());
    let _ = writeln!(out, "unit {}", s.unit());
    for r in 0..s.sort_count() {
        let _ = writeln!(out, "rank {} size {}", r, s.sort_size(r));
        for e in s.elements(r) {
            let _ = writeln!(out, "{} {}", e, s.describe(e).replace(char::is_whitespace, "_"));
        }
    }
    for g in generators {
        let _ = writeln!(out, "gen {g}");
    }
    for_each_instance(s, |f, g| {
        let h = s.compose(f, g)?;
        let args: Vec<String> = g.iter().map(Elem::to_string).collect();
        let _ = writeln!(out, "{}: {} ({}) -> {}", f.rank(), f, args.join(" "), h);
        Ok(())
    })?;
    Ok(out)
}

fn parse_elem(tok: &str, line: usize) -> Result<Elem, PrecloneError> {
    let err = || PrecloneError::Parse {
        line,
        msg: format!("bad element `{tok}`"),
    };
    let (r, i) = tok.split_once('.').ok_or_else(err)?;
    Ok(Elem::new(r.parse().map_err(|_| err())?, i.parse().map_err(|_| err())?))
}

/// Reads a dump back as a table-backed pg-pair.
pub fn parse_dump(text: &str) -> Result<PgPair, PrecloneError> {
    let mut trunc = None;
    let mut unit = None;
    let mut names: Vec<Vec<String>> = Vec::new();
    let mut generators = Vec::new();
    let mut table = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| PrecloneError::Parse {
            line: ln,
            msg: msg.to_string(),
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            "trunc" if words.len() == 2 => trunc = Some(words[1].parse().map_err(|_| err("bad truncation"))?),
            "unit" if words.len() == 2 => unit = Some(parse_elem(words[1], ln)?),
            "rank" if words.len() == 4 => {
                let r: usize = words[1].parse().map_err(|_| err("bad rank"))?;
                if r != names.len() {
                    return Err(err("ranks must be listed in order"));
                }
                names.push(Vec::new());
            }
            "gen" if words.len() == 2 => generators.push(parse_elem(words[1], ln)?),
            w if w.ends_with(':') => {
                let arrow = words.iter().position(|&x| x == "->").ok_or_else(|| err("missing ->"))?;
                let f = parse_elem(words[1], ln)?;
                let inner = words[2..arrow].join(" ");
                let inner = inner
                    .strip_prefix('(')
                    .and_then(|x| x.strip_suffix(')'))
                    .ok_or_else(|| err("expected (g1 .. gn)"))?;
                let g = inner
                    .split_whitespace()
                    .map(|t| parse_elem(t, ln))
                    .collect::<Result<Vec<_>, _>>()?;
                let h = parse_elem(words.get(arrow + 1).ok_or_else(|| err("missing result"))?, ln)?;
                table.insert((f, g), h);
            }
            _ if words.len() == 2 && words[0].contains('.') => {
                let e = parse_elem(words[0], ln)?;
                if e.rank() + 1 != names.len() || e.idx() != names[e.rank()].len() {
                    return Err(err("elements must be listed in order under their rank"));
                }
                names[e.rank()].push(words[1].to_string());
            }
            _ => return Err(err("unrecognized line")),
        }
    }
    let trunc = trunc.ok_or(PrecloneError::Parse {
        line: 0,
        msg: "missing trunc".into(),
    })?;
    let unit = unit.unwrap_or(Elem::new(1, 0));
    let pre = FinitaryPreclone::from_impl(TablePreclone {
        trunc,
        names,
        unit,
        table,
    });
    if !pre.contains(unit) || generators.iter().any(|&g| !pre.contains(g)) {
        return Err(PrecloneError::Parse {
            line: 0,
            msg: "unit or generator out of range".into(),
        });
    }
    Ok(PgPair {
        preclone: pre,
        generators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{enumerate_trees, parse_tree};

    fn find(s: &FinitaryPreclone, name: &str) -> Elem {
        s.all_elements()
            .into_iter()
            .find(|&e| s.describe(e) == name)
            .unwrap_or_else(|| panic!("no element {name}"))
    }

    #[test]
    fn t_exists_structure() {
        let pg = t_exists(3);
        let s = &pg.preclone;
        assert_eq!(s.sort_sizes(), vec![2, 2, 2, 2]);
        let (t0, f0) = (find(s, "true_0"), find(s, "false_0"));
        assert_eq!(s.compose(find(s, "or_2"), &[t0, f0]).unwrap(), t0);
        assert_eq!(s.compose(find(s, "or_1"), &[f0]).unwrap(), f0);
        assert_eq!(s.compose(find(s, "true_2"), &[f0, f0]).unwrap(), t0);
        assert_eq!(s.unit(), find(s, "or_1"));
        // rank-1 sort: or_1 is the identity, true_1 absorbs
        let t1 = find(s, "true_1");
        assert_eq!(s.compose(t1, &[s.unit()]).unwrap(), t1);
        assert_eq!(s.compose(s.unit(), &[t1]).unwrap(), t1);
        assert_eq!(s.compose(t1, &[t1]).unwrap(), t1);
        assert!(matches!(
            s.compose(find(s, "or_2"), &[find(s, "or_2"), find(s, "or_2")]),
            Err(PrecloneError::RankOverflow { rank: 4, trunc: 3 })
        ));
    }

    #[test]
    fn t_mod_structure() {
        for p in [2, 3] {
            let pg = t_mod(p, 3).unwrap();
            let s = &pg.preclone;
            assert_eq!(s.sort_sizes(), vec![p; 4]);
            let inc = find(s, &format!("f_1_{}", 1 % p));
            assert_eq!(s.compose(inc, &[inc]).unwrap(), find(s, &format!("f_1_{}", 2 % p)));
            let c1 = find(s, "f_0_1");
            assert_eq!(
                s.compose(find(s, "f_2_0"), &[c1, c1]).unwrap(),
                find(s, &format!("f_0_{}", 2 % p))
            );
        }
        assert!(t_mod(1, 3).is_err());
    }

    #[test]
    fn axioms_hold_and_fail_on_corruption() {
        for pg in [t_exists(3), t_mod(2, 3).unwrap()] {
            let r = check_axioms(&pg.preclone, AxiomMode::Exhaustive).unwrap();
            assert!(r.passed(), "{:?}", r.violations);
            assert!(r.assoc_checked > 0);
        }
        let s = t_exists(2).preclone;
        let mut table = TablePreclone::materialize(&s).unwrap();
        let or2 = find(&s, "or_2");
        let (t0, f0) = (find(&s, "true_0"), find(&s, "false_0"));
        table.table.insert((or2, vec![t0, f0]), f0);
        let bad = FinitaryPreclone::from_impl(table);
        let r = check_axioms(&bad, AxiomMode::Exhaustive).unwrap();
        assert!(!r.passed());
        let sampled = check_axioms(&s, AxiomMode::Sampled { count: 200, seed: 7 }).unwrap();
        assert!(sampled.passed());
    }

    #[test]
    fn transformation_of_exists_is_t_exists() {
        let d = RankedAlphabet::boolean([0, 2]);
        let aut = TreeAutomaton::builtin_exists(&d, 0).unwrap();
        let tp = transformation_pgpair(&aut, 3, DEFAULT_BUDGET).unwrap();
        let iso = find_isomorphism(&tp.pgpair.preclone, &t_exists(3).preclone).unwrap();
        assert!(iso.is_some());
        for t in enumerate_trees(&d, 0, 5) {
            let e = tp.morphism.eval(&t).unwrap();
            assert_eq!(tp.state_on_vars(e), aut.run(&t).unwrap());
        }
        assert!(find_isomorphism(&tp.pgpair.preclone, &t_mod(2, 3).unwrap().preclone)
            .unwrap()
            .is_none());
    }

    #[test]
    fn word_automaton_gives_transition_monoid() {
        // letters a, b acting on {0,1,2}: a = cycle, b = reset to 0
        let sigma = RankedAlphabet::parse("a/1 b/1 e/0").unwrap();
        let a = sigma.lookup("a").unwrap();
        let aut = TreeAutomaton::from_fn(sigma, 0, 3, vec![], vec![true, false, false], |s, c| {
            if s == a {
                (c[0] + 1) % 3
            } else {
                0
            }
        })
        .unwrap();
        let tp = transformation_pgpair(&aut, 1, DEFAULT_BUDGET).unwrap();
        // monoid generated by the 3-cycle and a constant: 3 rotations + 3 constants
        assert_eq!(tp.pgpair.preclone.sort_size(1), 6);
    }

    #[test]
    fn morphism_examples() {
        let d = RankedAlphabet::boolean([0, 2]);
        let s = t_exists(3).preclone;
        let images = d
            .symbols()
            .map(|x| {
                let name = match d.name(x) {
                    "0_0" => "false_0",
                    "1_0" => "true_0",
                    "0_2" => "or_2",
                    _ => "true_2",
                };
                find(&s, name)
            })
            .collect();
        let phi = Morphism::new(s.clone(), &d, images).unwrap();
        assert_eq!(phi.eval(&RankedTree::unit()).unwrap(), s.unit());
        let t = parse_tree("0_2(1_0,0_0)", &d, 0).unwrap();
        assert_eq!(morphism_eval(&phi, &t).unwrap(), find(&s, "true_0"));
    }

    #[test]
    fn products_and_generation() {
        let t2 = t_mod(2, 3).unwrap().preclone;
        let (prod, handle) = direct_product(&t2, &t2).unwrap();
        assert_eq!(prod.sort_sizes(), vec![4; 4]);
        assert_eq!(prod.unit(), handle.pair(t2.unit(), t2.unit()));
        assert!(check_axioms(&prod, AxiomMode::Sampled { count: 300, seed: 1 })
            .unwrap()
            .passed());
        assert!(direct_product(&t2, &t_mod(2, 2).unwrap().preclone).is_err());

        let (empty, _) = sub_pgpair_generated(&t2, &[], 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(empty.preclone.sort_sizes(), vec![0, 1]);
        let gens = t_exists(3);
        let (regen, embed) = sub_pgpair_generated(&gens.preclone, &gens.generators, 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(regen.preclone.sort_sizes(), vec![2, 2, 2, 2]);
        assert!(embed
            .check_homomorphism(&regen.preclone, &gens.preclone)
            .unwrap()
            .is_none());
    }

    #[test]
    fn quotients() {
        let s = t_mod(3, 2).unwrap().preclone;
        let identity = CongruenceClasses::from_keys(
            (0..s.sort_count())
                .map(|r| s.elements(r).map(|e| e.idx()).collect())
                .collect(),
        );
        let (q, proj) = quotient(&s, &identity).unwrap();
        assert!(find_isomorphism(&q, &s).unwrap().is_some());
        assert!(proj.check_homomorphism(&s, &q).unwrap().is_none());
        let total = CongruenceClasses::from_keys(
            (0..s.sort_count())
                .map(|r| s.elements(r).map(|_| 0).collect())
                .collect(),
        );
        let (q, _) = quotient(&s, &total).unwrap();
        assert_eq!(q.sort_sizes(), vec![1, 1, 1]);
        assert!(check_axioms(&q, AxiomMode::Exhaustive).unwrap().passed());
        // merging f_0_0 with f_0_1 only at rank 0 is not compatible with f_1_1
        let mut keys: Vec<Vec<usize>> = (0..s.sort_count())
            .map(|r| s.elements(r).map(|e| e.idx()).collect())
            .collect();
        keys[0] = s.elements(0).map(|e| usize::from(s.describe(e) == "f_0_2")).collect();
        let bad = CongruenceClasses::from_keys(keys);
        assert!(matches!(quotient(&s, &bad), Err(PrecloneError::NotACongruence(_))));
    }

    #[test]
    fn dump_roundtrip() {
        let pg = t_exists(2);
        let text = dump(&pg.preclone, &pg.generators).unwrap();
        let back = parse_dump(&text).unwrap();
        assert_eq!(back.generators, pg.generators);
        assert_eq!(dump(&back.preclone, &back.generators).unwrap(), text);
        assert!(find_isomorphism(&back.preclone, &pg.preclone).unwrap().is_some());
    }
}
