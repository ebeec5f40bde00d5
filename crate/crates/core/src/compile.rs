//! Compilation of formulas into preclone recognizers.
//!
//! Atomic formulas become small automata over the structure alphabet `Σ_Y`,
//! negation flips the accepting set, disjunction and conjunction go through
//! direct products, and each Lindström quantifier becomes a block product of
//! the syntactic pg-pair of its language with a recognizer of its family.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::automata::{for_each_tuple, AutomatonError, State, TreeAutomaton};
use crate::blockprod::{block_product_pg_truncated, second_projection, BlockAlgebra, BlockProduct, GeneratorSelection};
use crate::logic::{
    for_each_assignment, mk_structure, satisfies_indexed, ExtendedAlphabet, Formula, Interpretation, Language,
    LogicError, Quantifier, TreeView,
};
use crate::preclone::{
    direct_product, generate, parse_dump, share, target_tupling, Elem, FinitaryPreclone, Morphism, PgPair,
    PrecloneError, ProductAlgebra, DEFAULT_BUDGET,
};
use crate::syntactic::{plug, syntactic_pgpair_multi, Context, SyntacticMulti};
use crate::trees::{enumerate_trees, RankedAlphabet, RankedTree, Sym};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Preclone(#[from] PrecloneError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("family is not deterministic: {0}")]
    Determinism(String),
    #[error("free variable `{0}` is not among the structure variables")]
    FreeVariable(String),
    #[error("truncation {trunc} is below rank+1 = {}", rank + 1)]
    Truncation { trunc: usize, rank: usize },
    #[error("tree has rank {found}, the recognizer expects rank {expected}")]
    RankMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct CompileOptions {
    /// Truncation of the syntactic and family pg-pairs; at least `k+1`.
    pub trunc: usize,
    pub budget: usize,
}

impl CompileOptions {
    pub fn for_rank(k: usize) -> Self {
        CompileOptions {
            trunc: k + 1,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// How the top level of a recognizer was obtained.
#[derive(Clone, Debug)]
pub enum Construction {
    Atomic,
    Complement(Box<Construction>),
    Product,
    Quantifier(Arc<QuantifierParts>),
    /// Syntactic pg-pair of another recognizer's language.
    Normalized,
    /// Read back from files.
    Loaded,
}

/// The ingredients of a quantifier recognizer `(S,A) □_k (T,B)`.
pub struct QuantifierParts {
    pub block: BlockProduct,
    /// `(S, A)` with `α` and `α(K)`.
    pub left: SyntacticMulti,
    /// `(T, B)` with `τ` over `Σ_{Y∪{x}}` and one accepting set per family member.
    pub right: SyntacticMulti,
    /// Family members in the order of `right.accepting`.
    pub members: Vec<Sym>,
    pub inner: ExtendedAlphabet,
    /// For each letter `(σ,Z)` of `Σ_Y`, the letter `(σ,Z)` of `Σ_{Y∪{x}}`.
    pub lift: Vec<Sym>,
}

impl std::fmt::Debug for QuantifierParts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QuantifierParts({:?})", self.block.algebra())
    }
}

/// A pg-pair, a letter morphism from `Σ_Y` and the accepting elements of sort `k`.
#[derive(Clone, Debug)]
pub struct CompiledRecognizer {
    pub pgpair: PgPair,
    pub morphism: Morphism,
    pub accepting: Vec<Elem>,
    pub rank: usize,
    pub ext: ExtendedAlphabet,
    pub construction: Construction,
}

impl CompiledRecognizer {
    pub fn vars(&self) -> &[String] {
        &self.ext.vars
    }

    /// Membership of an already encoded structure over `Σ_Y`.
    pub fn accepts_structure(&self, z: &RankedTree) -> Result<bool, CompileError> {
        if z.rank() != self.rank {
            return Err(CompileError::RankMismatch {
                expected: self.rank,
                found: z.rank(),
            });
        }
        Ok(self.accepting.contains(&self.morphism.eval(z)?))
    }

    /// `(t, λ) ∈ L_φ` as decided by the recognizer.
    pub fn membership(&self, t: &RankedTree, lambda: &Interpretation) -> Result<bool, CompileError> {
        self.accepts_structure(&mk_structure(&self.ext, t, lambda)?)
    }

    pub fn complement(&self) -> Self {
        let accepting = self
            .pgpair
            .preclone
            .elements(self.rank)
            .filter(|e| !self.accepting.contains(e))
            .collect();
        CompiledRecognizer {
            accepting,
            construction: Construction::Complement(Box::new(self.construction.clone())),
            ..self.clone()
        }
    }

    /// The automaton whose states are the elements of rank at most `k` (plus a sink).
    pub fn to_automaton(&self) -> Result<TreeAutomaton, CompileError> {
        let sets = [self.accepting.iter().copied().collect::<HashSet<Elem>>()];
        Ok(element_automaton(
            &self.pgpair.preclone,
            &self.morphism,
            &self.ext.alphabet,
            self.rank,
            &sets,
        )?
        .0)
    }

    /// The syntactic pg-pair of the recognized language (on all of `Σ_Y M_k`).
    pub fn normalized(&self, opts: &CompileOptions) -> Result<Self, CompileError> {
        if matches!(self.construction, Construction::Normalized) && self.pgpair.preclone.truncation() == opts.trunc {
            return Ok(self.clone());
        }
        let a = self.to_automaton()?;
        from_automaton(&a, &self.ext, opts, Construction::Normalized)
    }

    /// `second(γ(σ,Z)) = τ(σ,Z)` for every letter, for quantifier recognizers.
    pub fn check_projection(&self) -> Option<String> {
        let Construction::Quantifier(parts) = &self.construction else {
            return None;
        };
        let second = second_projection(&parts.block);
        for s in self.ext.alphabet.symbols() {
            let lhs = second.apply(self.morphism.image(s));
            let rhs = parts.right.morphism.image(parts.lift[s.index()]);
            if lhs != rhs {
                return Some(format!("letter {}: {lhs} vs {rhs}", self.ext.alphabet.name(s)));
            }
        }
        None
    }

    /// One `letter element` line per letter of `Σ_Y`.
    pub fn generator_map_text(&self) -> String {
        let mut out = String::new();
        for s in self.ext.alphabet.symbols() {
            out.push_str(&format!("{} {}\n", self.ext.alphabet.name(s), self.morphism.image(s)));
        }
        out
    }

    pub fn accepting_text(&self) -> String {
        let items: Vec<String> = self.accepting.iter().map(Elem::to_string).collect();
        format!("rank {}\naccept {}\n", self.rank, items.join(" "))
    }
}

/// Rebuilds a recognizer from the dump, generator map and accepting sets
/// written by [`CompiledRecognizer::generator_map_text`] and friends.
pub fn load_recognizer(
    dump_text: &str,
    map_text: &str,
    accepting_text: &str,
    sigma: &RankedAlphabet,
    vars: &[String],
) -> Result<CompiledRecognizer, CompileError> {
    let bad = |msg: String| CompileError::Preclone(PrecloneError::Parse { line: 0, msg });
    let pgpair = parse_dump(dump_text)?;
    let ext = ExtendedAlphabet::new(sigma, vars)?;
    let mut images: Vec<Option<Elem>> = vec![None; ext.alphabet.len()];
    for line in map_text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (letter, elem) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("malformed map line `{line}`")))?;
        let s = ext
            .alphabet
            .lookup(letter)
            .ok_or_else(|| bad(format!("unknown letter `{letter}`")))?;
        images[s.index()] = Some(elem.trim().parse()?);
    }
    let images = images
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.ok_or_else(|| bad(format!("no image for `{}`", ext.alphabet.name(Sym(i as u32))))))
        .collect::<Result<Vec<_>, _>>()?;
    let morphism = Morphism::new(pgpair.preclone.clone(), &ext.alphabet, images)?;
    let mut rank = None;
    let mut accepting = Vec::new();
    for line in accepting_text.lines().map(str::trim) {
        match line.split_once(' ').unwrap_or((line, "")) {
            ("rank", r) => rank = Some(r.trim().parse::<usize>().map_err(|_| bad(format!("bad rank `{r}`")))?),
            ("accept", items) => {
                for tok in items.split_whitespace() {
                    accepting.push(tok.parse()?);
                }
            }
            ("", _) => {}
            _ => return Err(bad(format!("malformed accepting line `{line}`"))),
        }
    }
    Ok(CompiledRecognizer {
        pgpair,
        morphism,
        accepting,
        rank: rank.ok_or_else(|| bad("missing rank line".into()))?,
        ext,
        construction: Construction::Loaded,
    })
}

/// Compiles `phi` over `Σ_Y` for trees of rank `k`.
pub fn compile(
    phi: &Formula,
    sigma: &RankedAlphabet,
    vars: &[String],
    k: usize,
    opts: &CompileOptions,
) -> Result<CompiledRecognizer, CompileError> {
    if opts.trunc < k + 1 {
        return Err(CompileError::Truncation {
            trunc: opts.trunc,
            rank: k,
        });
    }
    if let Some(v) = phi.free_vars().into_iter().find(|v| !vars.contains(v)) {
        return Err(CompileError::FreeVariable(v));
    }
    let ext = ExtendedAlphabet::new(sigma, vars)?;
    Compiler { k, opts: *opts }.compile(phi, &ext)
}

struct Compiler {
    k: usize,
    opts: CompileOptions,
}

impl Compiler {
    fn compile(&self, phi: &Formula, ext: &ExtendedAlphabet) -> Result<CompiledRecognizer, CompileError> {
        match phi {
            Formula::Not(a) => Ok(self.compile(a, ext)?.complement()),
            Formula::Or(a, b) => self.product(a, b, ext, |x, y| x || y),
            Formula::And(a, b) => self.product(a, b, ext, |x, y| x && y),
            Formula::Quant(q) => self.quantifier(q, ext),
            atom => compile_atomic(atom, ext, self.k, &self.opts),
        }
    }

    fn product(
        &self,
        a: &Formula,
        b: &Formula,
        ext: &ExtendedAlphabet,
        op: fn(bool, bool) -> bool,
    ) -> Result<CompiledRecognizer, CompileError> {
        let ra = self.compile(a, ext)?.normalized(&self.opts)?;
        let rb = self.compile(b, ext)?.normalized(&self.opts)?;
        let product = direct_product(&ra.pgpair.preclone, &rb.pgpair.preclone)?;
        let morphism = target_tupling(&product, &ext.alphabet, &ra.morphism, &rb.morphism)?;
        let (pre, parts) = &product;
        let accepting = pre
            .elements(self.k)
            .filter(|&e| {
                let (x, y) = parts.split(e);
                op(ra.accepting.contains(&x), rb.accepting.contains(&y))
            })
            .collect();
        let generators = morphism.images.clone();
        Ok(CompiledRecognizer {
            pgpair: PgPair {
                preclone: pre.clone(),
                generators,
            },
            morphism,
            accepting,
            rank: self.k,
            ext: ext.clone(),
            construction: Construction::Product,
        })
    }

    fn language_automaton(&self, language: &Language) -> Result<TreeAutomaton, CompileError> {
        match language {
            Language::Automaton(a) => Ok((**a).clone()),
            Language::Defined { alphabet, sentence } => {
                let ext = ExtendedAlphabet::new(alphabet, &[])?;
                let rec = self.compile(sentence, &ext)?;
                let a = rec.to_automaton()?;
                // the structure alphabet without variables is the alphabet itself
                let trans: Vec<Vec<State>> = alphabet
                    .symbols()
                    .map(|s| {
                        let mut table = Vec::new();
                        for_each_tuple(a.state_count(), alphabet.arity(s), |c| table.push(a.delta(s, c)));
                        table
                    })
                    .collect();
                Ok(TreeAutomaton::new(
                    alphabet.clone(),
                    a.rank(),
                    a.state_count(),
                    a.var_states().to_vec(),
                    trans,
                    a.finals().to_vec(),
                )?)
            }
        }
    }

    fn quantifier(&self, q: &Quantifier, ext: &ExtendedAlphabet) -> Result<CompiledRecognizer, CompileError> {
        let k = self.k;
        let opts = &self.opts;
        let sigma = &ext.base;
        let delta = q.language.alphabet().clone();
        let lang = self.language_automaton(&q.language)?;
        if lang.rank() != k {
            return Err(CompileError::RankMismatch {
                expected: k,
                found: lang.rank(),
            });
        }
        let left = syntactic_pgpair_multi(&lang, &[lang.finals().to_vec()], opts.trunc, opts.budget)?;
        let alpha_k: HashSet<Elem> = left.accepting[0].iter().copied().collect();

        let mut inner_vars = ext.vars.clone();
        inner_vars.push(q.var.clone());
        let inner = ExtendedAlphabet::new(sigma, &inner_vars)?;
        let x_bit = inner.var_bit(&q.var).expect("bound variable present");

        // recognizer of the whole family, one accepting set per member
        let members: Vec<Sym> = delta
            .symbols()
            .filter(|&d| !sigma.of_arity(delta.arity(d)).is_empty())
            .collect();
        let recs = members
            .iter()
            .map(|&d| self.compile(&q.family[d.index()], &inner)?.normalized(opts))
            .collect::<Result<Vec<_>, _>>()?;
        let right = tuple_family(&recs, &inner, k, opts)?;
        let tau = &right.morphism;
        let t = &right.pgpair.preclone;
        let tau_sets: Vec<HashSet<Elem>> = right.accepting.iter().map(|p| p.iter().copied().collect()).collect();

        // letter correspondences between Σ_Y and Σ_{Y∪{x}}
        let to_inner = |mask: usize| -> usize {
            (0..ext.vars.len()).filter(|b| mask >> b & 1 == 1).fold(0, |m, b| {
                m | 1 << inner.var_bit(&ext.vars[b]).expect("outer variable present")
            })
        };
        let lift: Vec<Sym> = ext
            .alphabet
            .symbols()
            .map(|s| {
                let (base, mask) = ext.decode(s);
                inner.encode(base, to_inner(mask))
            })
            .collect();
        let full_y = to_inner((1usize << ext.vars.len()) - 1);

        let images = realizable_images(t, tau, &inner, x_bit, k)?;
        let alg = BlockAlgebra::with_truncation(&left.pgpair.preclone, t, k, k)?;
        let mut gens = Vec::with_capacity(ext.alphabet.len());
        for s in ext.alphabet.symbols() {
            let n = ext.alphabet.arity(s);
            let plain = lift[s.index()];
            let (base, z) = inner.decode(plain);
            let marked = tau.image(inner.encode(base, z | 1 << x_bit));
            let default =
                left.pgpair.generators_of_rank(n).into_iter().min().ok_or_else(|| {
                    PrecloneError::Context(format!("the quantifier alphabet has no letter of rank {n}"))
                })?;
            let candidates: Vec<usize> = (0..members.len()).filter(|&i| delta.arity(members[i]) == n).collect();
            let elem = alg.element(tau.image(plain), |c| {
                if !realizable(&images, c, z, full_y) {
                    return Ok(default);
                }
                let w = plug(t, marked, c)?;
                let hits: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&i| tau_sets[i].contains(&w))
                    .collect();
                match hits.as_slice() {
                    [i] => Ok(left.morphism.image(members[*i])),
                    _ => Err(PrecloneError::Context(format!(
                        "letter {} in context {}: members {:?} hold",
                        ext.alphabet.name(s),
                        c.display(),
                        hits.iter().map(|&i| delta.name(members[i])).collect::<Vec<_>>()
                    ))),
                }
            });
            gens.push(elem.map_err(|e| match e {
                PrecloneError::Context(msg) => CompileError::Determinism(msg),
                other => other.into(),
            })?);
        }
        let block = block_product_pg_truncated(
            &left.pgpair,
            &right.pgpair,
            k,
            GeneratorSelection::Subset(gens.clone()),
            k,
            opts.budget,
        )?;
        let letter_images = gens
            .iter()
            .map(|g| block.closure.find(g).expect("generator present"))
            .collect();
        let morphism = Morphism::new(block.pgpair.preclone.clone(), &ext.alphabet, letter_images)?;
        let identity = block.algebra().context_index(k, &Context::identity(t, k))?;
        let accepting = block
            .pgpair
            .preclone
            .elements(k)
            .filter(|&e| alpha_k.contains(&block.value(e).first_at(identity)))
            .collect();
        let pgpair = block.pgpair.clone();
        Ok(CompiledRecognizer {
            pgpair,
            morphism,
            accepting,
            rank: k,
            ext: ext.clone(),
            construction: Construction::Quantifier(Arc::new(QuantifierParts {
                block,
                left,
                right,
                members,
                inner,
                lift,
            })),
        })
    }
}

/// Recognizer of a single atomic formula.
pub fn compile_atomic(
    phi: &Formula,
    ext: &ExtendedAlphabet,
    k: usize,
    opts: &CompileOptions,
) -> Result<CompiledRecognizer, CompileError> {
    let a = atomic_automaton(phi, ext, k)?;
    from_automaton(&a, ext, opts, Construction::Atomic)
}

fn from_automaton(
    a: &TreeAutomaton,
    ext: &ExtendedAlphabet,
    opts: &CompileOptions,
    construction: Construction,
) -> Result<CompiledRecognizer, CompileError> {
    let mut syn = syntactic_pgpair_multi(a, &[a.finals().to_vec()], opts.trunc, opts.budget)?;
    Ok(CompiledRecognizer {
        pgpair: syn.pgpair,
        morphism: syn.morphism,
        accepting: syn.accepting.pop().unwrap_or_default(),
        rank: a.rank(),
        ext: ext.clone(),
        construction,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum AtomState {
    Var(usize),
    Node {
        b_here: bool,
        has_b: bool,
        nvars: usize,
        offsets: u64,
        sat: bool,
    },
}

impl AtomState {
    fn sat(&self) -> bool {
        matches!(self, AtomState::Node { sat: true, .. })
    }
}

/// A bottom-up automaton over `Σ_Y` accepting exactly the Y-structures
/// satisfying the atomic formula `phi` (other trees may be accepted too).
pub fn atomic_automaton(phi: &Formula, ext: &ExtendedAlphabet, k: usize) -> Result<TreeAutomaton, CompileError> {
    let bit = |v: &String| ext.var_bit(v).ok_or_else(|| CompileError::FreeVariable(v.clone()));
    let alphabet = ext.alphabet.clone();
    let constant = |value: bool| TreeAutomaton::from_fn(alphabet.clone(), k, 1, vec![0; k], vec![value], |_, _| 0);
    let (a, b) = match phi {
        Formula::True => return Ok(constant(true)?),
        Formula::False => return Ok(constant(false)?),
        Formula::Label { var, .. } | Formula::Root(var) | Formula::Max { var, .. } => (bit(var)?, None),
        Formula::Left { var, .. } | Formula::Right { var, .. } => (bit(var)?, None),
        Formula::Less(x, y) => (bit(x)?, Some(bit(y)?)),
        Formula::Succ { parent, child, .. } => (bit(parent)?, Some(bit(child)?)),
        other => {
            return Err(LogicError::Invalid(format!("not an atomic formula: {}", other.display(&ext.base))).into());
        }
    };
    let b = b.unwrap_or(usize::MAX);
    let cap = k + 1;
    let window = (1u64 << (cap + 1)) - 1;
    let step = |s: Sym, kids: &[AtomState]| -> AtomState {
        let (base, mask) = ext.decode(s);
        let a_here = mask >> a & 1 == 1;
        let b_here = b != usize::MAX && mask >> b & 1 == 1;
        let below_sat = kids.iter().any(AtomState::sat);
        let mut state = AtomState::Node {
            b_here: false,
            has_b: false,
            nvars: 0,
            offsets: 0,
            sat: false,
        };
        let AtomState::Node {
            b_here: sb,
            has_b,
            nvars,
            offsets,
            sat,
        } = &mut state
        else {
            unreachable!()
        };
        match phi {
            Formula::Label { sym, .. } => *sat = below_sat || (a_here && base == *sym),
            Formula::Root(_) => *sat = a_here,
            Formula::Less(..) => {
                let below = kids.iter().any(|c| matches!(c, AtomState::Node { has_b: true, .. }));
                *has_b = b_here || below;
                *sat = below_sat || (a_here && below);
            }
            Formula::Succ { i, .. } => {
                *sb = b_here;
                let child = matches!(kids.get(i - 1), Some(AtomState::Node { b_here: true, .. }));
                *sat = below_sat || (a_here && child);
            }
            Formula::Max { i, j, .. } => {
                *sat = below_sat || (a_here && kids.get(i - 1) == Some(&AtomState::Var(*j)));
            }
            _ => {
                let mut prefix = 0usize;
                for c in kids {
                    match c {
                        AtomState::Var(_) => prefix += 1,
                        AtomState::Node { nvars, offsets: o, .. } => {
                            if prefix <= cap {
                                *offsets |= (o << prefix) & window;
                            }
                            prefix += nvars;
                        }
                    }
                }
                *nvars = prefix.min(cap);
                if a_here {
                    *offsets |= match phi {
                        Formula::Left { .. } => 1,
                        _ => 1u64 << *nvars,
                    };
                }
            }
        }
        state
    };
    let final_of = |q: &AtomState| match (phi, q) {
        (Formula::Left { j, .. }, AtomState::Node { offsets, .. }) => offsets >> j & 1 == 1,
        (Formula::Right { j, .. }, AtomState::Node { offsets, .. }) => *j <= k && offsets >> (j - 1) & 1 == 1,
        (Formula::Left { .. } | Formula::Right { .. }, _) => false,
        (_, q) => q.sat(),
    };
    let vars = (1..=k)
        .map(|j| AtomState::Var(if matches!(phi, Formula::Max { .. }) { j } else { 0 }))
        .collect();
    let (aut, _) = TreeAutomaton::explore(alphabet, vars, step, final_of);
    Ok(aut)
}

/// The automaton with one state per element of rank at most `k` reachable from
/// the letters, plus a sink for overflowing ranks. Returns per-state membership
/// in each of `sets`; finals are taken from the first set.
pub fn element_automaton(
    pre: &FinitaryPreclone,
    morphism: &Morphism,
    alphabet: &RankedAlphabet,
    k: usize,
    sets: &[HashSet<Elem>],
) -> Result<(TreeAutomaton, Vec<Vec<bool>>), PrecloneError> {
    let mut values: Vec<Option<Elem>> = vec![None];
    let mut index: HashMap<Option<Elem>, State> = HashMap::from([(None, 0)]);
    let mut trans: HashMap<(Sym, Vec<State>), State> = HashMap::new();
    if k > 0 {
        values.push(Some(pre.unit()));
        index.insert(Some(pre.unit()), 1);
    }
    let var_state: State = if k > 0 { 1 } else { 0 };
    let mut old = 0usize;
    loop {
        let cur = values.len();
        for s in alphabet.symbols() {
            let m = alphabet.arity(s);
            let image = morphism.image(s);
            let mut visit = |kids: &[State],
                             values: &mut Vec<Option<Elem>>,
                             index: &mut HashMap<Option<Elem>, State>|
             -> Result<(), PrecloneError> {
                let args: Option<Vec<Elem>> = kids.iter().map(|&q| values[q as usize]).collect();
                let next = match args {
                    Some(args) if args.iter().map(|e| e.rank()).sum::<usize>() <= k => Some(pre.compose(image, &args)?),
                    _ => None,
                };
                let n = values.len() as State;
                let q = *index.entry(next).or_insert_with(|| {
                    values.push(next);
                    n
                });
                trans.insert((s, kids.to_vec()), q);
                Ok(())
            };
            if m == 0 {
                if old == 0 {
                    visit(&[], &mut values, &mut index)?;
                }
                continue;
            }
            // tuples over 0..cur with at least one entry in old..cur
            for first_new in 0..m {
                let ranges: Vec<(usize, usize)> = (0..m)
                    .map(|i| match i.cmp(&first_new) {
                        std::cmp::Ordering::Less => (0, old),
                        std::cmp::Ordering::Equal => (old, cur),
                        std::cmp::Ordering::Greater => (0, cur),
                    })
                    .collect();
                if ranges.iter().any(|(lo, hi)| lo >= hi) {
                    continue;
                }
                let mut pos: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                loop {
                    let kids: Vec<State> = pos.iter().map(|&p| p as State).collect();
                    visit(&kids, &mut values, &mut index)?;
                    let mut i = m;
                    let mut done = true;
                    while i > 0 {
                        i -= 1;
                        pos[i] += 1;
                        if pos[i] < ranges[i].1 {
                            done = false;
                            break;
                        }
                        pos[i] = ranges[i].0;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
        if values.len() == cur {
            break;
        }
        old = cur;
    }
    let marks: Vec<Vec<bool>> = values
        .iter()
        .map(|v| {
            sets.iter()
                .map(|p| v.is_some_and(|e| e.rank() == k && p.contains(&e)))
                .collect()
        })
        .collect();
    let finals = marks.iter().map(|m| m.first().copied().unwrap_or(false)).collect();
    let aut = TreeAutomaton::from_fn(alphabet.clone(), k, values.len(), vec![var_state; k], finals, |s, c| {
        trans[&(s, c.to_vec())]
    })
    .map_err(|e| PrecloneError::Context(e.to_string()))?;
    Ok((aut, marks))
}

/// A pg-pair recognizing every family member's language at once.
fn tuple_family(
    recs: &[CompiledRecognizer],
    inner: &ExtendedAlphabet,
    k: usize,
    opts: &CompileOptions,
) -> Result<SyntacticMulti, CompileError> {
    let alg = ProductAlgebra {
        factors: recs.iter().map(|r| r.pgpair.preclone.clone()).collect(),
    };
    let letters: Vec<Vec<Elem>> = inner
        .alphabet
        .symbols()
        .map(|s| recs.iter().map(|r| r.morphism.image(s)).collect())
        .collect();
    let closure = generate(alg, letters.clone(), k, opts.budget)?;
    let images: Vec<Elem> = letters
        .iter()
        .map(|v| closure.find(v).expect("letter present"))
        .collect();
    let (closure, pre) = share(closure);
    let morphism = Morphism::new(pre.clone(), &inner.alphabet, images)?;
    let sets: Vec<HashSet<Elem>> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            pre.elements(k)
                .filter(|&e| r.accepting.contains(&closure.value(e)[i]))
                .collect()
        })
        .collect();
    let (aut, marks) = element_automaton(&pre, &morphism, &inner.alphabet, k, &sets)?;
    let per_set: Vec<Vec<bool>> = (0..sets.len()).map(|i| marks.iter().map(|m| m[i]).collect()).collect();
    Ok(syntactic_pgpair_multi(&aut, &per_set, opts.trunc, opts.budget)?)
}

/// For each element of rank at most `k+1`, the variable sets `W ⊆ Y` (as inner
/// masks) such that it is the image of a tree containing each variable of `W`
/// exactly once, no other variable, and no `x`.
fn realizable_images(
    t: &FinitaryPreclone,
    tau: &Morphism,
    inner: &ExtendedAlphabet,
    x_bit: usize,
    k: usize,
) -> Result<HashMap<Elem, Vec<usize>>, PrecloneError> {
    let limit = k + 1;
    let mut items: Vec<(Elem, usize)> = vec![(t.unit(), 0)];
    let mut seen: HashSet<(Elem, usize)> = items.iter().copied().collect();
    let letters: Vec<(Elem, usize, usize)> = inner
        .alphabet
        .symbols()
        .filter_map(|s| {
            let (_, mask) = inner.decode(s);
            (mask >> x_bit & 1 == 0).then(|| (tau.image(s), mask, inner.alphabet.arity(s)))
        })
        .collect();
    for &(e, mask, m) in &letters {
        if m == 0 && seen.insert((e, mask)) {
            items.push((e, mask));
        }
    }
    let mut old = 0;
    loop {
        let cur = items.len();
        let mut fresh = Vec::new();
        for &(head, z, m) in &letters {
            if m == 0 {
                continue;
            }
            for first_new in 0..m {
                let mut chosen: Vec<(Elem, usize)> = Vec::with_capacity(m);
                extend_args(
                    &items,
                    old,
                    cur,
                    first_new,
                    m,
                    z,
                    0,
                    limit,
                    &mut chosen,
                    &mut |args, mask| {
                        let elems: Vec<Elem> = args.iter().map(|a| a.0).collect();
                        let e = t.compose(head, &elems)?;
                        fresh.push((e, mask));
                        Ok(())
                    },
                )?;
            }
        }
        for item in fresh {
            if seen.insert(item) {
                items.push(item);
            }
        }
        if items.len() == cur {
            break;
        }
        old = cur;
    }
    let mut out: HashMap<Elem, Vec<usize>> = HashMap::new();
    for (e, mask) in items {
        out.entry(e).or_default().push(mask);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn extend_args(
    items: &[(Elem, usize)],
    old: usize,
    cur: usize,
    first_new: usize,
    m: usize,
    mask: usize,
    rank: usize,
    limit: usize,
    chosen: &mut Vec<(Elem, usize)>,
    emit: &mut impl FnMut(&[(Elem, usize)], usize) -> Result<(), PrecloneError>,
) -> Result<(), PrecloneError> {
    let i = chosen.len();
    if i == m {
        return emit(chosen, mask);
    }
    let (lo, hi) = match i.cmp(&first_new) {
        std::cmp::Ordering::Less => (0, old),
        std::cmp::Ordering::Equal => (old, cur),
        std::cmp::Ordering::Greater => (0, cur),
    };
    for &(e, w) in &items[lo..hi] {
        if w & mask != 0 || rank + e.rank() > limit {
            continue;
        }
        chosen.push((e, w));
        extend_args(
            items,
            old,
            cur,
            first_new,
            m,
            mask | w,
            rank + e.rank(),
            limit,
            chosen,
            emit,
        )?;
        chosen.pop();
    }
    Ok(())
}

/// Whether `c` is the image of a context which, with a node carrying exactly
/// `z` and `x` plugged in, yields a valid `(Y∪{x})`-structure.
fn realizable(images: &HashMap<Elem, Vec<usize>>, c: &Context, z: usize, full: usize) -> bool {
    fn go(parts: &[&Vec<usize>], used: usize, full: usize) -> bool {
        match parts.split_first() {
            None => used == full,
            Some((first, rest)) => first.iter().any(|&w| w & used == 0 && go(rest, used | w, full)),
        }
    }
    let mut parts = Vec::with_capacity(c.v.len() + 1);
    for e in std::iter::once(&c.u).chain(&c.v) {
        match images.get(e) {
            Some(masks) => parts.push(masks),
            None => return false,
        }
    }
    go(&parts, z, full)
}

/// A disagreement between the semantics and a recognizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub tree: String,
    pub assignment: Vec<(String, String)>,
    pub semantic: bool,
    pub recognizer: bool,
}

#[derive(Clone, Debug, Default)]
pub struct EquivalenceReport {
    pub trees: usize,
    pub structures: usize,
    pub accepted: usize,
    pub mismatches: Vec<Mismatch>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares `satisfies` with recognizer membership on every Y-structure of
/// rank `k` with at most `max_nv` symbol nodes.
pub fn check_equivalence(
    phi: &Formula,
    rec: &CompiledRecognizer,
    max_nv: usize,
) -> Result<EquivalenceReport, CompileError> {
    let sigma = &rec.ext.base;
    let vars = rec.ext.vars.clone();
    let mut report = EquivalenceReport::default();
    for t in enumerate_trees(sigma, rec.rank, max_nv) {
        report.trees += 1;
        let view = TreeView::new(&t);
        let mut failure: Option<CompileError> = None;
        for_each_assignment(&vars, view.len(), |lambda| {
            let semantic = satisfies_indexed(&t, &view, lambda, phi)?;
            let interp: Interpretation = lambda
                .iter()
                .map(|(v, i)| (v.clone(), view.node_id(*i).clone()))
                .collect();
            let recognized = match rec.membership(&t, &interp) {
                Ok(b) => b,
                Err(e) => {
                    failure = Some(e);
                    return Ok(false);
                }
            };
            report.structures += 1;
            report.accepted += usize::from(recognized);
            if semantic != recognized {
                report.mismatches.push(Mismatch {
                    tree: t.display(sigma).to_string(),
                    assignment: interp.iter().map(|(v, n)| (v.clone(), n.to_string())).collect(),
                    semantic,
                    recognizer: recognized,
                });
            }
            Ok(true)
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(report)
}
