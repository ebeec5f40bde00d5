//! First-order tree logic with Lindström quantifiers.
//!
//! Formulas of rank `k` over an alphabet `Σ` are interpreted on trees of
//! `ΣM_k` with first-order variables ranging over non-variable nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::automata::{AutomatonError, TreeAutomaton};
use crate::trees::{enumerate_trees, Label, NodeId, RankedAlphabet, RankedTree, Sym, TreeError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("free variable `{0}` is not interpreted")]
    Unbound(String),
    #[error("family is not deterministic at node {node}: satisfied {satisfied:?}")]
    Determinism { node: String, satisfied: Vec<String> },
    #[error("variable capture: {0}")]
    Capture(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A language `K ⊆ ΔM_k` used by a quantifier.
#[derive(Clone, Debug)]
pub enum Language {
    Automaton(Arc<TreeAutomaton>),
    /// The language of a sentence over `alphabet`.
    Defined {
        alphabet: RankedAlphabet,
        sentence: Box<Formula>,
    },
}

impl Language {
    pub fn alphabet(&self) -> &RankedAlphabet {
        match self {
            Language::Automaton(a) => a.alphabet(),
            Language::Defined { alphabet, .. } => alphabet,
        }
    }

    pub fn contains(&self, t: &RankedTree) -> Result<bool, LogicError> {
        match self {
            Language::Automaton(a) => Ok(a.accepts(t)?),
            Language::Defined { sentence, .. } => satisfies(t, &Interpretation::new(), sentence),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Quantifier {
    pub language_name: String,
    pub language: Language,
    pub var: String,
    /// `family[δ.index()]` is `φ_δ`.
    pub family: Vec<Formula>,
}

#[derive(Clone, Debug)]
pub enum Formula {
    True,
    False,
    /// `P_σ(x)`.
    Label {
        sym: Sym,
        var: String,
    },
    /// `x < y`: `y` is a proper descendant of `x`.
    Less(String, String),
    /// `Succ_i(x, y)`: `y` is the `i`-th child of `x`.
    Succ {
        i: usize,
        parent: String,
        child: String,
    },
    Root(String),
    /// `max_{i,j}(x)`: the `i`-th child of `x` is the variable leaf `v_j`.
    Max {
        i: usize,
        j: usize,
        var: String,
    },
    /// `left_j(x)`: the highest variable left of the subtree at `x` is `v_j`.
    Left {
        j: usize,
        var: String,
    },
    /// `right_j(x)`: the lowest variable right of the subtree at `x` is `v_j`.
    Right {
        j: usize,
        var: String,
    },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Quant(Box<Quantifier>),
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn conjunction(parts: impl IntoIterator<Item = Formula>) -> Formula {
        parts.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }

    pub fn disjunction(parts: impl IntoIterator<Item = Formula>) -> Formula {
        parts.into_iter().reduce(Formula::or).unwrap_or(Formula::False)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        let mut add = |v: &String| {
            if !bound.contains(v) {
                out.insert(v.clone());
            }
        };
        match self {
            Formula::True | Formula::False => {}
            Formula::Label { var, .. }
            | Formula::Root(var)
            | Formula::Max { var, .. }
            | Formula::Left { var, .. }
            | Formula::Right { var, .. } => add(var),
            Formula::Less(a, b) => {
                add(a);
                add(b);
            }
            Formula::Succ { parent, child, .. } => {
                add(parent);
                add(child);
            }
            Formula::Not(a) => a.collect_free(bound, out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Quant(q) => {
                bound.push(q.var.clone());
                for f in &q.family {
                    f.collect_free(bound, out);
                }
                bound.pop();
            }
        }
    }

    /// Variables bound anywhere in the formula.
    pub fn bound_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Quant(q) = f {
                out.insert(q.var.clone());
            }
        });
        out
    }

    /// Pre-order traversal, descending into quantifier families.
    pub fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Not(a) => a.visit(f),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Formula::Quant(q) => q.family.iter().for_each(|g| g.visit(f)),
            _ => {}
        }
    }

    /// Counts quantifiers (including those inside families).
    pub fn quantifier_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |f| n += usize::from(matches!(f, Formula::Quant(_))));
        n
    }

    /// Concrete syntax accepted by [`parse_formula`], given the alphabet of `P[..]` atoms.
    pub fn display(&self, sigma: &RankedAlphabet) -> String {
        let mut out = String::new();
        self.write(sigma, &mut out);
        out
    }

    fn write(&self, sigma: &RankedAlphabet, out: &mut String) {
        match self {
            Formula::True => out.push_str("true"),
            Formula::False => out.push_str("false"),
            Formula::Label { sym, var } => {
                let _ = write!(out, "P[{}]({var})", sigma.name(*sym));
            }
            Formula::Less(a, b) => {
                let _ = write!(out, "{a}<{b}");
            }
            Formula::Succ { i, parent, child } => {
                let _ = write!(out, "succ_{i}({parent},{child})");
            }
            Formula::Root(v) => {
                let _ = write!(out, "root({v})");
            }
            Formula::Max { i, j, var } => {
                let _ = write!(out, "max[{i},{j}]({var})");
            }
            Formula::Left { j, var } => {
                let _ = write!(out, "left[{j}]({var})");
            }
            Formula::Right { j, var } => {
                let _ = write!(out, "right[{j}]({var})");
            }
            Formula::Not(a) => {
                out.push('!');
                a.write_atomic(sigma, out);
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let op = if matches!(self, Formula::And(..)) { " & " } else { " | " };
                a.write_atomic(sigma, out);
                out.push_str(op);
                b.write_atomic(sigma, out);
            }
            Formula::Quant(q) => {
                let delta = q.language.alphabet();
                let _ = write!(out, "Q[{}] {} {{ ", q.language_name, q.var);
                for (i, d) in delta.symbols().enumerate() {
                    if i > 0 {
                        out.push_str("; ");
                    }
                    let _ = write!(out, "{}: ", delta.name(d));
                    q.family[d.index()].write(sigma, out);
                }
                out.push_str(" }");
            }
        }
    }

    fn write_atomic(&self, sigma: &RankedAlphabet, out: &mut String) {
        if matches!(self, Formula::And(..) | Formula::Or(..)) {
            out.push('(');
            self.write(sigma, out);
            out.push(')');
        } else {
            self.write(sigma, out);
        }
    }
}

static FRESH: AtomicUsize = AtomicUsize::new(0);

/// A variable name that cannot clash with user variables (which start with a letter).
pub fn fresh_var(base: &str) -> String {
    let mut base = base.trim_start_matches('_');
    if let Some((stem, n)) = base.rsplit_once('_') {
        if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
            base = stem;
        }
    }
    format!("_{base}_{}", FRESH.fetch_add(1, Ordering::Relaxed))
}

/// Maps variable names to non-variable nodes.
pub type Interpretation = BTreeMap<String, NodeId>;

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Clone, Copy, Debug)]
enum Child {
    Node(usize),
    Var(usize),
}

#[derive(Clone, Debug)]
struct NodeInfo {
    id: NodeId,
    sym: Sym,
    parent: Option<usize>,
    children: Vec<Child>,
    vars_left: usize,
    vars_inside: usize,
}

/// A tree indexed by its non-variable nodes in preorder.
#[derive(Clone, Debug)]
pub struct TreeView {
    rank: usize,
    nodes: Vec<NodeInfo>,
}

impl TreeView {
    pub fn new(t: &RankedTree) -> Self {
        let mut nodes = Vec::new();
        let mut seen_vars = 0;
        fn go(t: &RankedTree, id: NodeId, parent: Option<usize>, seen: &mut usize, nodes: &mut Vec<NodeInfo>) -> Child {
            match t.label() {
                Label::Var(j) => {
                    *seen += 1;
                    Child::Var(j)
                }
                Label::Sym(sym) => {
                    let me = nodes.len();
                    nodes.push(NodeInfo {
                        id: id.clone(),
                        sym,
                        parent,
                        children: Vec::new(),
                        vars_left: *seen,
                        vars_inside: 0,
                    });
                    let before = *seen;
                    let kids = t
                        .children()
                        .iter()
                        .enumerate()
                        .map(|(i, c)| go(c, id.child(i), Some(me), seen, nodes))
                        .collect();
                    nodes[me].children = kids;
                    nodes[me].vars_inside = *seen - before;
                    Child::Node(me)
                }
            }
        }
        go(t, NodeId::root(), None, &mut seen_vars, &mut nodes);
        TreeView { rank: seen_vars, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_id(&self, i: usize) -> &NodeId {
        &self.nodes[i].id
    }

    pub fn arity(&self, i: usize) -> usize {
        self.nodes[i].children.len()
    }

    pub fn sym(&self, i: usize) -> Sym {
        self.nodes[i].sym
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| &n.id == id)
    }

    fn is_proper_ancestor(&self, a: usize, b: usize) -> bool {
        let mut cur = self.nodes[b].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.nodes[p].parent;
        }
        false
    }

    /// The tree with node `i` relabelled by `labels[i]`.
    fn relabelled(&self, t: &RankedTree, labels: &[Sym]) -> RankedTree {
        fn go(t: &RankedTree, labels: &[Sym], next: &mut usize) -> RankedTree {
            match t.label() {
                Label::Var(j) => RankedTree::var(j),
                Label::Sym(_) => {
                    let me = *next;
                    *next += 1;
                    let kids = t.children().iter().map(|c| go(c, labels, next)).collect();
                    RankedTree::node(labels[me], kids)
                }
            }
        }
        go(t, labels, &mut 0)
    }
}

struct Env<'a> {
    tree: &'a RankedTree,
    view: &'a TreeView,
    vars: Vec<(String, usize)>,
}

impl Env<'_> {
    fn lookup(&self, v: &str) -> Result<usize, LogicError> {
        self.vars
            .iter()
            .rev()
            .find(|(n, _)| n == v)
            .map(|(_, i)| *i)
            .ok_or_else(|| LogicError::Unbound(v.to_string()))
    }

    fn eval(&mut self, f: &Formula) -> Result<bool, LogicError> {
        let view = self.view;
        Ok(match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Label { sym, var } => view.nodes[self.lookup(var)?].sym == *sym,
            Formula::Less(a, b) => {
                let (a, b) = (self.lookup(a)?, self.lookup(b)?);
                view.is_proper_ancestor(a, b)
            }
            Formula::Succ { i, parent, child } => {
                let (p, c) = (self.lookup(parent)?, self.lookup(child)?);
                matches!(view.nodes[p].children.get(i - 1), Some(Child::Node(x)) if *x == c)
            }
            Formula::Root(v) => self.lookup(v)? == 0,
            Formula::Max { i, j, var } => {
                let x = self.lookup(var)?;
                matches!(view.nodes[x].children.get(i - 1), Some(Child::Var(v)) if v == j)
            }
            Formula::Left { j, var } => view.nodes[self.lookup(var)?].vars_left == *j,
            Formula::Right { j, var } => {
                let n = &view.nodes[self.lookup(var)?];
                *j <= view.rank && n.vars_left + n.vars_inside + 1 == *j
            }
            Formula::Not(a) => !self.eval(a)?,
            Formula::And(a, b) => self.eval(a)? && self.eval(b)?,
            Formula::Or(a, b) => self.eval(a)? || self.eval(b)?,
            Formula::Quant(q) => {
                let labels = self.characteristic_labels(q)?;
                let bar = view.relabelled(self.tree, &labels);
                q.language.contains(&bar)?
            }
        })
    }

    fn characteristic_labels(&mut self, q: &Quantifier) -> Result<Vec<Sym>, LogicError> {
        let delta = q.language.alphabet();
        let mut labels = Vec::with_capacity(self.view.len());
        for v in 0..self.view.len() {
            let n = self.view.arity(v);
            self.vars.push((q.var.clone(), v));
            let mut hits = Vec::new();
            for d in delta.of_arity(n) {
                if self.eval(&q.family[d.index()])? {
                    hits.push(d);
                }
            }
            self.vars.pop();
            if hits.len() != 1 {
                return Err(LogicError::Determinism {
                    node: self.view.nodes[v].id.to_string(),
                    satisfied: hits.iter().map(|&d| delta.name(d).to_string()).collect(),
                });
            }
            labels.push(hits[0]);
        }
        Ok(labels)
    }
}

fn env_for<'a>(t: &'a RankedTree, view: &'a TreeView, lambda: &Interpretation) -> Result<Env<'a>, LogicError> {
    let mut vars = Vec::new();
    for (name, id) in lambda {
        let i = view
            .index_of(id)
            .ok_or_else(|| LogicError::Invalid(format!("`{name}` is mapped to {id}, which is not a symbol node")))?;
        vars.push((name.clone(), i));
    }
    Ok(Env { tree: t, view, vars })
}

/// `(t, λ) ⊨ φ`.
pub fn satisfies(t: &RankedTree, lambda: &Interpretation, phi: &Formula) -> Result<bool, LogicError> {
    let view = TreeView::new(t);
    env_for(t, &view, lambda)?.eval(phi)
}

/// Satisfaction with the interpretation given as preorder node indices of `view`.
pub fn satisfies_indexed(
    t: &RankedTree,
    view: &TreeView,
    lambda: &[(String, usize)],
    phi: &Formula,
) -> Result<bool, LogicError> {
    Env {
        tree: t,
        view,
        vars: lambda.to_vec(),
    }
    .eval(phi)
}

/// The characteristic tree `t̄_λ` of a quantifier's family.
pub fn characteristic_tree(t: &RankedTree, lambda: &Interpretation, q: &Quantifier) -> Result<RankedTree, LogicError> {
    let view = TreeView::new(t);
    let labels = env_for(t, &view, lambda)?.characteristic_labels(q)?;
    Ok(view.relabelled(t, &labels))
}

/// Calls `visit` with every map from `vars` to node indices `0..nodes`.
pub fn for_each_assignment(
    vars: &[String],
    nodes: usize,
    mut visit: impl FnMut(&[(String, usize)]) -> Result<bool, LogicError>,
) -> Result<(), LogicError> {
    if nodes == 0 && !vars.is_empty() {
        return Ok(());
    }
    let mut current: Vec<(String, usize)> = vars.iter().map(|v| (v.clone(), 0)).collect();
    loop {
        if !visit(&current)? {
            return Ok(());
        }
        let mut i = current.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            current[i].1 += 1;
            if current[i].1 < nodes {
                break;
            }
            current[i].1 = 0;
        }
    }
}

/// Exhaustively checks that exactly one `φ_δ` holds at every node, for all
/// trees with at most `max_nv` symbol nodes. Returns the first violation.
pub fn check_deterministic(
    family: &[Formula],
    delta: &RankedAlphabet,
    x: &str,
    sigma: &RankedAlphabet,
    k: usize,
    max_nv: usize,
) -> Result<Option<String>, LogicError> {
    let mut others: BTreeSet<String> = BTreeSet::new();
    for f in family {
        others.extend(f.free_vars());
    }
    others.remove(x);
    let others: Vec<String> = others.into_iter().collect();
    for t in enumerate_trees(sigma, k, max_nv) {
        let view = TreeView::new(&t);
        if view.is_empty() {
            continue;
        }
        let mut witness = None;
        for_each_assignment(&others, view.len(), |lambda| {
            for v in 0..view.len() {
                let letters = delta.of_arity(view.arity(v));
                if letters.is_empty() {
                    continue;
                }
                let mut env = lambda.to_vec();
                env.push((x.to_string(), v));
                let mut hits = Vec::new();
                for d in letters {
                    if satisfies_indexed(&t, &view, &env, &family[d.index()])? {
                        hits.push(delta.name(d).to_string());
                    }
                }
                if hits.len() != 1 {
                    witness = Some(format!(
                        "tree {} with {lambda:?}, {x} at {}: satisfied {hits:?}",
                        t.display(sigma),
                        view.node_id(v)
                    ));
                    return Ok(false);
                }
            }
            Ok(true)
        })?;
        if witness.is_some() {
            return Ok(witness);
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Z-structures

/// The alphabet `Σ_Z` with letters `(σ, Z')`, named `σ` for `Z' = ∅` and `σ@z1.z2` otherwise.
#[derive(Clone, Debug)]
pub struct ExtendedAlphabet {
    pub base: RankedAlphabet,
    pub vars: Vec<String>,
    pub alphabet: RankedAlphabet,
}

impl ExtendedAlphabet {
    pub fn new(base: &RankedAlphabet, vars: &[String]) -> Result<Self, LogicError> {
        let mut vars = vars.to_vec();
        vars.sort();
        vars.dedup();
        if vars.len() > 16 {
            return Err(LogicError::Invalid("too many structure variables".into()));
        }
        let mut entries = Vec::new();
        for s in base.symbols() {
            for mask in 0..(1usize << vars.len()) {
                entries.push((Self::letter_name(base.name(s), &vars, mask), base.arity(s)));
            }
        }
        Ok(ExtendedAlphabet {
            base: base.clone(),
            alphabet: RankedAlphabet::new(entries)?,
            vars,
        })
    }

    fn letter_name(sigma: &str, vars: &[String], mask: usize) -> String {
        if mask == 0 {
            return sigma.to_string();
        }
        let names: Vec<&str> = (0..vars.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| vars[i].as_str())
            .collect();
        format!("{sigma}@{}", names.join("."))
    }

    pub fn encode(&self, s: Sym, mask: usize) -> Sym {
        Sym((s.index() * (1 << self.vars.len()) + mask) as u32)
    }

    pub fn decode(&self, s: Sym) -> (Sym, usize) {
        let w = 1 << self.vars.len();
        (Sym((s.index() / w) as u32), s.index() % w)
    }

    pub fn var_bit(&self, v: &str) -> Option<usize> {
        self.vars.iter().position(|x| x == v)
    }
}

/// `str(t, λ)`.
pub fn mk_structure(ext: &ExtendedAlphabet, t: &RankedTree, lambda: &Interpretation) -> Result<RankedTree, LogicError> {
    let mut masks: HashMap<NodeId, usize> = HashMap::new();
    for (v, id) in lambda {
        let bit = ext.var_bit(v).ok_or_else(|| LogicError::Unbound(v.clone()))?;
        match t.subtree(id).map(RankedTree::label) {
            Some(Label::Sym(_)) => *masks.entry(id.clone()).or_default() |= 1 << bit,
            _ => return Err(LogicError::Invalid(format!("`{v}` is not mapped to a symbol node"))),
        }
    }
    if lambda.len() != ext.vars.len() {
        return Err(LogicError::Invalid(
            "interpretation must cover every structure variable".into(),
        ));
    }
    fn go(t: &RankedTree, id: NodeId, ext: &ExtendedAlphabet, masks: &HashMap<NodeId, usize>) -> RankedTree {
        match t.label() {
            Label::Var(j) => RankedTree::var(j),
            Label::Sym(s) => {
                let mask = masks.get(&id).copied().unwrap_or(0);
                let kids = t
                    .children()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| go(c, id.child(i), ext, masks))
                    .collect();
                RankedTree::node(ext.encode(s, mask), kids)
            }
        }
    }
    Ok(go(t, NodeId::root(), ext, &masks))
}

/// Inverse of [`mk_structure`]; fails unless every variable occurs exactly once.
pub fn destructure(ext: &ExtendedAlphabet, z: &RankedTree) -> Result<(RankedTree, Interpretation), LogicError> {
    let mut lambda = Interpretation::new();
    let mut counts = vec![0usize; ext.vars.len()];
    fn go(
        t: &RankedTree,
        id: NodeId,
        ext: &ExtendedAlphabet,
        counts: &mut [usize],
        lambda: &mut Interpretation,
    ) -> RankedTree {
        match t.label() {
            Label::Var(j) => RankedTree::var(j),
            Label::Sym(s) => {
                let (base, mask) = ext.decode(s);
                for (b, count) in counts.iter_mut().enumerate() {
                    if mask >> b & 1 == 1 {
                        *count += 1;
                        lambda.insert(ext.vars[b].clone(), id.clone());
                    }
                }
                let kids = t
                    .children()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| go(c, id.child(i), ext, counts, lambda))
                    .collect();
                RankedTree::node(base, kids)
            }
        }
    }
    let t = go(z, NodeId::root(), ext, &mut counts, &mut lambda);
    if let Some(b) = counts.iter().position(|&c| c != 1) {
        return Err(LogicError::Invalid(format!(
            "variable `{}` occurs {} times in the structure",
            ext.vars[b], counts[b]
        )));
    }
    Ok((t, lambda))
}

// ---------------------------------------------------------------------------
// Rewritings

/// `χ[q/p]`: replaces free occurrences of `p` by `q`, renaming binders of `q` on the way.
pub fn substitute_var(chi: &Formula, q: &str, p: &str) -> Formula {
    if p == q {
        return chi.clone();
    }
    let r = |v: &String| if v == p { q.to_string() } else { v.clone() };
    match chi {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Label { sym, var } => Formula::Label { sym: *sym, var: r(var) },
        Formula::Less(a, b) => Formula::Less(r(a), r(b)),
        Formula::Succ { i, parent, child } => Formula::Succ {
            i: *i,
            parent: r(parent),
            child: r(child),
        },
        Formula::Root(v) => Formula::Root(r(v)),
        Formula::Max { i, j, var } => Formula::Max {
            i: *i,
            j: *j,
            var: r(var),
        },
        Formula::Left { j, var } => Formula::Left { j: *j, var: r(var) },
        Formula::Right { j, var } => Formula::Right { j: *j, var: r(var) },
        Formula::Not(a) => Formula::not(substitute_var(a, q, p)),
        Formula::And(a, b) => Formula::and(substitute_var(a, q, p), substitute_var(b, q, p)),
        Formula::Or(a, b) => Formula::or(substitute_var(a, q, p), substitute_var(b, q, p)),
        Formula::Quant(quant) => {
            if quant.var == p {
                return chi.clone();
            }
            let mut quant = (**quant).clone();
            if quant.var == q {
                let fresh = fresh_var(q);
                quant.family = quant.family.iter().map(|f| substitute_var(f, &fresh, q)).collect();
                quant.var = fresh;
            }
            quant.family = quant.family.iter().map(|f| substitute_var(f, q, p)).collect();
            Formula::Quant(Box::new(quant))
        }
    }
}

/// `χ̃`: replaces each `P_δ(z)` of `χ` (a formula over `Δ`) by `φ_δ[z/x]`,
/// conjoined with "`z` has arity `|δ|`" so that a family member cannot fire at a
/// node of another rank.
pub fn tilde_substitute(
    chi: &Formula,
    delta: &RankedAlphabet,
    family: &[Formula],
    x: &str,
    sigma: &RankedAlphabet,
) -> Result<Formula, LogicError> {
    let free_chi = chi.free_vars();
    if free_chi.contains(x) {
        return Err(LogicError::Capture(format!("`{x}` is free in the outer formula")));
    }
    for f in family {
        for v in f.free_vars() {
            if v != x && free_chi.contains(&v) {
                return Err(LogicError::Capture(format!(
                    "`{v}` is free in both the family and the outer formula"
                )));
            }
        }
    }
    let guarded: Vec<Formula> = delta
        .symbols()
        .map(|d| {
            let m = delta.arity(d);
            let letters = sigma.of_arity(m);
            if letters.len() == sigma.len() {
                family[d.index()].clone()
            } else {
                let arity = Formula::disjunction(letters.into_iter().map(|s| Formula::Label {
                    sym: s,
                    var: x.to_string(),
                }));
                Formula::and(family[d.index()].clone(), arity)
            }
        })
        .collect();
    Ok(tilde(chi, &guarded, x))
}

fn tilde(chi: &Formula, family: &[Formula], x: &str) -> Formula {
    match chi {
        Formula::Label { sym, var } => substitute_var(&family[sym.index()], var, x),
        Formula::Not(a) => Formula::not(tilde(a, family, x)),
        Formula::And(a, b) => Formula::and(tilde(a, family, x), tilde(b, family, x)),
        Formula::Or(a, b) => Formula::or(tilde(a, family, x), tilde(b, family, x)),
        Formula::Quant(q) => {
            let mut q = (**q).clone();
            q.family = q.family.iter().map(|f| tilde(f, family, x)).collect();
            Formula::Quant(Box::new(q))
        }
        other => other.clone(),
    }
}

/// The formula `φ'` over `Σ'` with `(t,λ) ⊨ φ' ⟺ (h(t),λ) ⊨ φ`, where
/// `h[σ'.index()]` is the image of `σ'`.
pub fn inverse_literal_image(phi: &Formula, h: &[Sym], sigma_prime: &RankedAlphabet) -> Formula {
    match phi {
        Formula::Label { sym, var } => Formula::disjunction(
            sigma_prime
                .symbols()
                .filter(|s| h[s.index()] == *sym)
                .map(|s| Formula::Label {
                    sym: s,
                    var: var.clone(),
                }),
        ),
        Formula::Not(a) => Formula::not(inverse_literal_image(a, h, sigma_prime)),
        Formula::And(a, b) => Formula::and(
            inverse_literal_image(a, h, sigma_prime),
            inverse_literal_image(b, h, sigma_prime),
        ),
        Formula::Or(a, b) => Formula::or(
            inverse_literal_image(a, h, sigma_prime),
            inverse_literal_image(b, h, sigma_prime),
        ),
        Formula::Quant(q) => {
            let mut q = (**q).clone();
            q.family = q
                .family
                .iter()
                .map(|f| inverse_literal_image(f, h, sigma_prime))
                .collect();
            Formula::Quant(Box::new(q))
        }
        other => other.clone(),
    }
}

/// The Boolean family `φ_{1_n} = φ`, `φ_{0_n} = ¬φ` over `delta`.
pub fn boolean_family(delta: &RankedAlphabet, phi: &Formula) -> Vec<Formula> {
    delta
        .symbols()
        .map(|d| match delta.boolean_value(d) {
            Some(true) => phi.clone(),
            _ => Formula::not(phi.clone()),
        })
        .collect()
}

/// `∃ x. φ` as a quantifier over `K_k(∃)`.
pub fn desugar_exists(sigma: &RankedAlphabet, k: usize, x: &str, phi: Formula) -> Result<Formula, LogicError> {
    let delta = RankedAlphabet::boolean(sigma.ranks());
    let lang = TreeAutomaton::builtin_exists(&delta, k)?;
    Ok(Formula::Quant(Box::new(Quantifier {
        language_name: "exists".into(),
        family: boolean_family(&delta, &phi),
        language: Language::Automaton(Arc::new(lang)),
        var: x.to_string(),
    })))
}

/// `∃^r_p x. φ` as a quantifier over `K_k(∃^r_p)`.
pub fn desugar_mod(
    sigma: &RankedAlphabet,
    k: usize,
    p: usize,
    r: usize,
    x: &str,
    phi: Formula,
) -> Result<Formula, LogicError> {
    let delta = RankedAlphabet::boolean(sigma.ranks());
    let lang = TreeAutomaton::builtin_mod(&delta, k, p, r)?;
    Ok(Formula::Quant(Box::new(Quantifier {
        language_name: format!("mod_{p}_{r}"),
        family: boolean_family(&delta, &phi),
        language: Language::Automaton(Arc::new(lang)),
        var: x.to_string(),
    })))
}

// ---------------------------------------------------------------------------
// Exhaustive checks of the rewritings

/// Outcome of an exhaustive comparison: (tree, assignment) pairs checked and witnesses.
#[derive(Clone, Debug, Default)]
pub struct ExhaustiveReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

impl ExhaustiveReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn header_error(line: usize, msg: impl Into<String>) -> LogicError {
    LogicError::Parse {
        line,
        col: 1,
        msg: msg.into(),
    }
}

/// A formula `χ` over the Boolean alphabet of `Σ`'s ranks and a deterministic
/// family over `Σ` binding `quantifier.var`.
#[derive(Clone, Debug)]
pub struct TildeCase {
    pub sigma: RankedAlphabet,
    pub rank: usize,
    pub chi: Formula,
    pub quantifier: Quantifier,
}

impl TildeCase {
    /// Reads `symbols ...`, `rank k`, `chi <formula>` and `family x { δ: φ; ... }`
    /// (the family may span the remaining lines).
    pub fn parse(text: &str) -> Result<Self, LogicError> {
        let mut sigma = None;
        let mut rank = None;
        let mut chi_text = None;
        let mut family_text = None;
        let mut lines = text.lines().enumerate();
        while let Some((i, raw)) = lines.next() {
            let line = raw.trim();
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match head {
                "" => {}
                h if h.starts_with('#') => {}
                "symbols" => sigma = Some(RankedAlphabet::parse(rest)?),
                "rank" => {
                    rank = Some(
                        rest.trim()
                            .parse::<usize>()
                            .map_err(|_| header_error(i + 1, "bad rank"))?,
                    )
                }
                "chi" => chi_text = Some(rest.to_string()),
                "family" => {
                    let mut body = rest.to_string();
                    for (_, more) in lines.by_ref() {
                        body.push('\n');
                        body.push_str(more);
                    }
                    family_text = Some(body);
                }
                _ => return Err(header_error(i + 1, format!("unknown directive `{head}`"))),
            }
        }
        let sigma = sigma.ok_or_else(|| header_error(1, "missing symbols"))?;
        let rank = rank.ok_or_else(|| header_error(1, "missing rank"))?;
        let delta = RankedAlphabet::boolean(sigma.ranks());
        let chi = parse_formula(&chi_text.ok_or_else(|| header_error(1, "missing chi"))?, &delta, rank)?;
        let mut env = LanguageEnv::default();
        env.languages.insert(
            "family".into(),
            Language::Defined {
                alphabet: delta,
                sentence: Box::new(Formula::True),
            },
        );
        let body = family_text.ok_or_else(|| header_error(1, "missing family"))?;
        let Formula::Quant(q) = parse_formula_with(&format!("Q[family] {body}"), &sigma, rank, &env)? else {
            return Err(header_error(1, "malformed family"));
        };
        Ok(TildeCase {
            sigma,
            rank,
            chi,
            quantifier: *q,
        })
    }

    pub fn tilde(&self) -> Result<Formula, LogicError> {
        tilde_substitute(
            &self.chi,
            self.quantifier.language.alphabet(),
            &self.quantifier.family,
            &self.quantifier.var,
            &self.sigma,
        )
    }

    /// Compares `(t,λ) ⊨ χ̃` with `(t̄_λ,λ) ⊨ χ` for every tree with at most
    /// `max_nv` symbol nodes and every `λ` over the free variables of `χ̃`.
    pub fn check(&self, max_nv: usize) -> Result<ExhaustiveReport, LogicError> {
        let tilde = self.tilde()?;
        let vars: Vec<String> = tilde.free_vars().union(&self.chi.free_vars()).cloned().collect();
        let mut report = ExhaustiveReport::default();
        for t in enumerate_trees(&self.sigma, self.rank, max_nv) {
            let view = TreeView::new(&t);
            for_each_assignment(&vars, view.len(), |lambda| {
                let lhs = satisfies_indexed(&t, &view, lambda, &tilde)?;
                let interp: Interpretation = lambda
                    .iter()
                    .map(|(v, i)| (v.clone(), view.node_id(*i).clone()))
                    .collect();
                let bar = characteristic_tree(&t, &interp, &self.quantifier)?;
                let rhs = satisfies_indexed(&bar, &TreeView::new(&bar), lambda, &self.chi)?;
                report.checked += 1;
                if lhs != rhs {
                    report.mismatches.push(format!(
                        "{} with {lambda:?}: substituted {lhs}, characteristic tree {rhs}",
                        t.display(&self.sigma)
                    ));
                }
                Ok(true)
            })?;
        }
        Ok(report)
    }
}

/// A literal morphism `h: Σ' → Σ` and formulas over `Σ`.
#[derive(Clone, Debug)]
pub struct LiteralCase {
    pub source: RankedAlphabet,
    pub target: RankedAlphabet,
    /// `h[σ'.index()]`.
    pub map: Vec<Sym>,
    pub rank: usize,
    pub formulas: Vec<Formula>,
}

impl LiteralCase {
    /// Reads `source ...`, `target ...`, `map σ' σ` per source letter, `rank k`
    /// and one `formula <φ>` line per formula.
    pub fn parse(text: &str) -> Result<Self, LogicError> {
        let mut source = None;
        let mut target = None;
        let mut pairs = Vec::new();
        let mut rank = None;
        let mut formulas = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match head {
                "" => {}
                h if h.starts_with('#') => {}
                "source" => source = Some(RankedAlphabet::parse(rest)?),
                "target" => target = Some(RankedAlphabet::parse(rest)?),
                "map" => pairs.push((ln, rest.split_whitespace().map(String::from).collect::<Vec<_>>())),
                "rank" => rank = Some(rest.trim().parse::<usize>().map_err(|_| header_error(ln, "bad rank"))?),
                "formula" => formulas.push((ln, rest.to_string())),
                _ => return Err(header_error(ln, format!("unknown directive `{head}`"))),
            }
        }
        let source = source.ok_or_else(|| header_error(1, "missing source"))?;
        let target = target.ok_or_else(|| header_error(1, "missing target"))?;
        let rank = rank.ok_or_else(|| header_error(1, "missing rank"))?;
        let mut map: Vec<Option<Sym>> = vec![None; source.len()];
        for (ln, words) in pairs {
            let [from, to] = words.as_slice() else {
                return Err(header_error(ln, "expected `map <source letter> <target letter>`"));
            };
            let a = source
                .lookup(from)
                .ok_or_else(|| header_error(ln, format!("unknown source letter `{from}`")))?;
            let b = target
                .lookup(to)
                .ok_or_else(|| header_error(ln, format!("unknown target letter `{to}`")))?;
            if source.arity(a) != target.arity(b) {
                return Err(header_error(ln, format!("`{from}` and `{to}` have different arities")));
            }
            map[a.index()] = Some(b);
        }
        let map = map
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.ok_or_else(|| header_error(1, format!("no image for `{}`", source.name(Sym(i as u32))))))
            .collect::<Result<Vec<_>, _>>()?;
        let formulas = formulas
            .into_iter()
            .map(|(ln, f)| {
                parse_formula(&f, &target, rank).map_err(|e| match e {
                    LogicError::Parse { col, msg, .. } => LogicError::Parse { line: ln, col, msg },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LiteralCase {
            source,
            target,
            map,
            rank,
            formulas,
        })
    }

    pub fn apply(&self, t: &RankedTree) -> RankedTree {
        t.map_symbols(&|s| self.map[s.index()])
    }

    /// Compares `(t,λ) ⊨ φ'` with `(h(t),λ) ⊨ φ` for every tree over the source
    /// alphabet with at most `max_nv` symbol nodes.
    pub fn check(&self, phi: &Formula, max_nv: usize) -> Result<ExhaustiveReport, LogicError> {
        let pulled = inverse_literal_image(phi, &self.map, &self.source);
        let vars: Vec<String> = phi.free_vars().into_iter().collect();
        let mut report = ExhaustiveReport::default();
        for t in enumerate_trees(&self.source, self.rank, max_nv) {
            let view = TreeView::new(&t);
            let image = self.apply(&t);
            let image_view = TreeView::new(&image);
            for_each_assignment(&vars, view.len(), |lambda| {
                let lhs = satisfies_indexed(&t, &view, lambda, &pulled)?;
                let rhs = satisfies_indexed(&image, &image_view, lambda, phi)?;
                report.checked += 1;
                if lhs != rhs {
                    report.mismatches.push(format!(
                        "{} with {lambda:?}: pulled back {lhs}, image {rhs}",
                        t.display(&self.source)
                    ));
                }
                Ok(true)
            })?;
        }
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// Languages available to `Q[name]`.
#[derive(Clone, Debug, Default)]
pub struct LanguageEnv {
    pub languages: BTreeMap<String, Language>,
}

impl LanguageEnv {
    /// Resolves a name, falling back to the builtins `exists`, `path`,
    /// `forall_next` and `mod_p_r` over the Boolean alphabet of `Σ`'s ranks.
    pub fn resolve(&self, name: &str, sigma: &RankedAlphabet, k: usize) -> Result<Language, LogicError> {
        if let Some(l) = self.languages.get(name) {
            return Ok(l.clone());
        }
        builtin_language(name, sigma, k)
    }
}

/// Builtin quantifier languages over `Δ_bool`.
pub fn builtin_language(name: &str, sigma: &RankedAlphabet, k: usize) -> Result<Language, LogicError> {
    let delta = RankedAlphabet::boolean(sigma.ranks());
    let a = match name {
        "exists" => TreeAutomaton::builtin_exists(&delta, k)?,
        "path" => TreeAutomaton::builtin_path(&delta, k)?,
        "forall_next" => TreeAutomaton::builtin_forall_next(&delta, k)?,
        _ => {
            let parts: Vec<&str> = name.split('_').collect();
            match parts.as_slice() {
                ["mod", p, r] => {
                    let p = p
                        .parse()
                        .map_err(|_| LogicError::Invalid(format!("bad modulus in `{name}`")))?;
                    let r = r
                        .parse()
                        .map_err(|_| LogicError::Invalid(format!("bad residue in `{name}`")))?;
                    TreeAutomaton::builtin_mod(&delta, k, p, r)?
                }
                _ => return Err(LogicError::Invalid(format!("unknown language `{name}`"))),
            }
        }
    };
    Ok(Language::Automaton(Arc::new(a)))
}

const KEYWORDS: &[&str] = &[
    "true", "false", "exists", "forall", "mod", "Q", "P", "root", "max", "left", "right",
];

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    offset: usize,
    full: &'a str,
    sigma: &'a RankedAlphabet,
    k: usize,
    env: &'a LanguageEnv,
    scope: Vec<(String, String)>,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: impl Into<String>) -> LogicError {
        let at = self.offset + self.pos;
        let before = &self.full[..at.min(self.full.len())];
        let line = before.matches('\n').count() + 1;
        let col = before
            .rfind('\n')
            .map_or(before.chars().count(), |i| before[i + 1..].chars().count())
            + 1;
        LogicError::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn peek_str(&mut self, s: &str) -> bool {
        self.skip_ws();
        self.rest().starts_with(s)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.peek_str(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), LogicError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| !(c.is_ascii_alphanumeric() || c == '_' || (i == 0 && c == '_')))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 || rest.as_bytes()[0].is_ascii_digit() {
            return None;
        }
        self.pos += len;
        Some(&rest[..len])
    }

    fn number(&mut self) -> Result<usize, LogicError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected a number"));
        }
        self.pos += len;
        rest[..len].parse().map_err(|_| self.error("number out of range"))
    }

    fn raw_until(&mut self, end: char) -> Result<&'a str, LogicError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest.find(end).ok_or_else(|| self.error(format!("expected `{end}`")))?;
        self.pos += len;
        Ok(rest[..len].trim())
    }

    fn user_var(&mut self) -> Result<String, LogicError> {
        let save = self.pos;
        match self.ident() {
            Some(v) if v.starts_with(|c: char| c.is_ascii_alphabetic()) && !KEYWORDS.contains(&v) => Ok(v.to_string()),
            _ => {
                self.pos = save;
                Err(self.error("expected a variable name starting with a letter"))
            }
        }
    }

    fn var_ref(&mut self) -> Result<String, LogicError> {
        let v = self.user_var()?;
        Ok(self
            .scope
            .iter()
            .rev()
            .find(|(user, _)| *user == v)
            .map_or(v, |(_, fresh)| fresh.clone()))
    }

    fn paren_var(&mut self) -> Result<String, LogicError> {
        self.expect("(")?;
        let v = self.var_ref()?;
        self.expect(")")?;
        Ok(v)
    }

    fn check_j(&self, j: usize) -> Result<(), LogicError> {
        if j == 0 || j > self.k {
            return Err(self.error(format!("variable index {j} is outside 1..={}", self.k)));
        }
        Ok(())
    }

    fn check_i(&self, i: usize) -> Result<(), LogicError> {
        if i == 0 || i > self.sigma.max_arity() {
            return Err(self.error(format!("successor index {i} is outside 1..={}", self.sigma.max_arity())));
        }
        Ok(())
    }

    fn formula(&mut self) -> Result<Formula, LogicError> {
        let lhs = self.disjunction()?;
        if self.eat("->") {
            let rhs = self.formula()?;
            return Ok(Formula::or(Formula::not(lhs), rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, LogicError> {
        let mut f = self.conjunction()?;
        while self.eat("|") {
            f = Formula::or(f, self.conjunction()?);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<Formula, LogicError> {
        let mut f = self.unary()?;
        while self.eat("&") {
            f = Formula::and(f, self.unary()?);
        }
        Ok(f)
    }

    fn bind(&mut self) -> Result<(String, String), LogicError> {
        let v = self.user_var()?;
        let fresh = fresh_var(&v);
        Ok((v, fresh))
    }

    fn scoped<T>(
        &mut self,
        binding: (String, String),
        f: impl FnOnce(&mut Self) -> Result<T, LogicError>,
    ) -> Result<T, LogicError> {
        self.scope.push(binding);
        let r = f(self);
        self.scope.pop();
        r
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        if self.eat("!") {
            return Ok(Formula::not(self.unary()?));
        }
        if self.eat("(") {
            let f = self.formula()?;
            self.expect(")")?;
            return Ok(f);
        }
        let save = self.pos;
        let word = self.ident().ok_or_else(|| self.error("expected a formula"))?;
        match word {
            "true" => Ok(Formula::True),
            "false" => Ok(Formula::False),
            "exists" | "forall" => {
                let b = self.bind()?;
                let x = b.1.clone();
                self.expect(".")?;
                let body = self.scoped(b, |p| p.formula())?;
                if word == "exists" {
                    desugar_exists(self.sigma, self.k, &x, body)
                } else {
                    Ok(Formula::not(desugar_exists(
                        self.sigma,
                        self.k,
                        &x,
                        Formula::not(body),
                    )?))
                }
            }
            "mod" => {
                self.expect("[")?;
                let p = self.number()?;
                self.expect(",")?;
                let r = self.number()?;
                self.expect("]")?;
                if p < 2 || r >= p {
                    return Err(self.error(format!("mod[{p},{r}] needs p >= 2 and r < p")));
                }
                let b = self.bind()?;
                let x = b.1.clone();
                self.expect(".")?;
                let body = self.scoped(b, |p| p.formula())?;
                desugar_mod(self.sigma, self.k, p, r, &x, body)
            }
            "Q" if self.peek_str("[") => self.quantifier(),
            "P" if self.peek_str("[") => {
                self.expect("[")?;
                let name = self.raw_until(']')?;
                self.expect("]")?;
                let sym = self
                    .sigma
                    .lookup(name)
                    .ok_or_else(|| self.error(format!("unknown symbol `{name}`")))?;
                Ok(Formula::Label {
                    sym,
                    var: self.paren_var()?,
                })
            }
            "root" if self.peek_str("(") => Ok(Formula::Root(self.paren_var()?)),
            "max" if self.peek_str("[") => {
                self.expect("[")?;
                let i = self.number()?;
                self.expect(",")?;
                let j = self.number()?;
                self.expect("]")?;
                self.check_i(i)?;
                self.check_j(j)?;
                Ok(Formula::Max {
                    i,
                    j,
                    var: self.paren_var()?,
                })
            }
            "left" | "right" if self.peek_str("[") => {
                self.expect("[")?;
                let j = self.number()?;
                self.expect("]")?;
                let var = self.paren_var()?;
                let left = word == "left";
                let sugar = if left { 0 } else { self.k + 1 };
                if j == sugar {
                    return Ok(Formula::conjunction((1..=self.k).map(|j| {
                        Formula::not(if left {
                            Formula::Left { j, var: var.clone() }
                        } else {
                            Formula::Right { j, var: var.clone() }
                        })
                    })));
                }
                self.check_j(j)?;
                Ok(if left {
                    Formula::Left { j, var }
                } else {
                    Formula::Right { j, var }
                })
            }
            w if w.starts_with("succ_") => {
                let i: usize = w[5..].parse().map_err(|_| self.error("expected succ_i"))?;
                self.check_i(i)?;
                self.expect("(")?;
                let parent = self.var_ref()?;
                self.expect(",")?;
                let child = self.var_ref()?;
                self.expect(")")?;
                Ok(Formula::Succ { i, parent, child })
            }
            _ => {
                self.pos = save;
                let a = self.var_ref()?;
                self.expect("<")?;
                let b = self.var_ref()?;
                Ok(Formula::Less(a, b))
            }
        }
    }

    fn quantifier(&mut self) -> Result<Formula, LogicError> {
        self.expect("[")?;
        let name = self.raw_until(']')?.to_string();
        self.expect("]")?;
        let language = self
            .env
            .resolve(&name, self.sigma, self.k)
            .map_err(|e| self.error(e.to_string()))?;
        let delta = language.alphabet().clone();
        let b = self.bind()?;
        let x = b.1.clone();
        self.expect("{")?;
        let entries = self.scoped(b, |p| {
            let mut entries: Vec<(String, Formula, usize)> = Vec::new();
            loop {
                if p.peek_str("}") {
                    break;
                }
                let at = p.pos;
                let key = p.raw_until(':')?.to_string();
                p.expect(":")?;
                let f = p.formula()?;
                entries.push((key, f, at));
                if !p.eat(";") {
                    break;
                }
            }
            p.expect("}")?;
            Ok(entries)
        })?;
        let mut family: Vec<Option<Formula>> = vec![None; delta.len()];
        for (key, f, at) in entries {
            let targets: Vec<Sym> = if key == "1" {
                if !delta.is_boolean() {
                    return Err(LogicError::Invalid(format!(
                        "key `1` needs a Boolean alphabet in Q[{name}]"
                    )));
                }
                delta
                    .symbols()
                    .filter(|&d| delta.boolean_value(d) == Some(true))
                    .collect()
            } else {
                vec![delta
                    .lookup(&key)
                    .ok_or_else(|| self.error_at(at, format!("`{key}` is not a letter of the alphabet of {name}")))?]
            };
            for d in targets {
                if family[d.index()].is_some() {
                    return Err(self.error_at(at, format!("duplicate entry for `{}`", delta.name(d))));
                }
                family[d.index()] = Some(f.clone());
            }
        }
        // Boolean shorthand: 0_n defaults to the negation of 1_n
        if delta.is_boolean() {
            for d in delta.symbols() {
                if family[d.index()].is_none() && delta.boolean_value(d) == Some(false) {
                    let one = delta.boolean_letter(true, delta.arity(d)).expect("boolean alphabet");
                    if let Some(f) = &family[one.index()] {
                        family[d.index()] = Some(Formula::not(f.clone()));
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(delta.len());
        for d in delta.symbols() {
            let needed = !self.sigma.of_arity(delta.arity(d)).is_empty();
            match family[d.index()].take() {
                Some(f) => out.push(f),
                None if !needed => out.push(Formula::False),
                None => return Err(self.error(format!("missing entry for `{}` in Q[{name}]", delta.name(d)))),
            }
        }
        for n in self.sigma.ranks() {
            if delta.of_arity(n).is_empty() {
                return Err(self.error(format!("the alphabet of {name} has no letter of rank {n}")));
            }
        }
        Ok(Formula::Quant(Box::new(Quantifier {
            language_name: name,
            language,
            var: x,
            family: out,
        })))
    }

    fn error_at(&self, pos: usize, msg: String) -> LogicError {
        let p = Parser {
            pos,
            scope: Vec::new(),
            ..*self
        };
        p.error(msg)
    }
}

fn parse_in(
    full: &str,
    offset: usize,
    sigma: &RankedAlphabet,
    k: usize,
    env: &LanguageEnv,
) -> Result<Formula, LogicError> {
    let text = &full[offset..];
    let mut p = Parser {
        text,
        pos: 0,
        offset,
        full,
        sigma,
        k,
        env,
        scope: Vec::new(),
    };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(f)
}

/// Parses a formula of rank `k` over `sigma`, resolving `Q[name]` in `env`.
pub fn parse_formula_with(
    text: &str,
    sigma: &RankedAlphabet,
    k: usize,
    env: &LanguageEnv,
) -> Result<Formula, LogicError> {
    parse_in(text, 0, sigma, k, env)
}

/// Parses a formula using only the builtin languages.
pub fn parse_formula(text: &str, sigma: &RankedAlphabet, k: usize) -> Result<Formula, LogicError> {
    parse_formula_with(text, sigma, k, &LanguageEnv::default())
}

/// A formula file: header lines followed by the formula.
#[derive(Clone, Debug)]
pub struct FormulaFile {
    pub alphabet: RankedAlphabet,
    pub rank: usize,
    pub env: LanguageEnv,
    pub formula: Formula,
}

impl FormulaFile {
    pub fn free_vars(&self) -> Vec<String> {
        self.formula.free_vars().into_iter().collect()
    }
}

/// Parses the header lines `alphabet <path>` or `symbols f/2 a/0 ...`, `rank k`,
/// `lang NAME <path>`, `lang NAME builtin exists|path|forall_next|mod p r`,
/// `lang NAME define <sentence over the Boolean alphabet>`; the remaining
/// lines are the formula. Relative paths are resolved against `base`.
pub fn parse_formula_file(text: &str, base: &Path) -> Result<FormulaFile, LogicError> {
    let mut alphabet = None;
    let mut rank = None;
    let mut env = LanguageEnv::default();
    let mut offset = 0;
    let perr = |line: usize, msg: String| LogicError::Parse { line, col: 1, msg };
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        let ln = i + 1;
        match words.first().copied() {
            None => {}
            Some(w) if w.starts_with('#') => {}
            Some("alphabet") if words.len() == 2 => {
                let path = base.join(words[1]);
                let content =
                    std::fs::read_to_string(&path).map_err(|e| perr(ln, format!("{}: {e}", path.display())))?;
                alphabet = Some(RankedAlphabet::parse(&content)?);
            }
            Some("symbols") => alphabet = Some(RankedAlphabet::parse(&words[1..].join(" "))?),
            Some("rank") if words.len() == 2 => {
                rank = Some(words[1].parse().map_err(|_| perr(ln, "bad rank".into()))?);
            }
            Some("lang") if words.len() >= 3 => {
                let sigma = alphabet
                    .as_ref()
                    .ok_or_else(|| perr(ln, "alphabet must precede lang".into()))?;
                let k = rank.ok_or_else(|| perr(ln, "rank must precede lang".into()))?;
                let name = words[1].to_string();
                let lang = match words[2] {
                    "builtin" => match words.get(3..).unwrap_or(&[]) {
                        ["mod", p, r] => builtin_language(&format!("mod_{p}_{r}"), sigma, k)?,
                        [b] => builtin_language(b, sigma, k)?,
                        _ => return Err(perr(ln, "unknown builtin".into())),
                    },
                    "define" => {
                        let delta = RankedAlphabet::boolean(sigma.ranks());
                        let start = offset + raw.find("define").expect("present") + "define".len();
                        let end = offset + raw.trim_end().len();
                        let sentence = parse_in(&text[..end], start, &delta, k, &env)?;
                        if !sentence.free_vars().is_empty() {
                            return Err(perr(ln, "a defined language needs a sentence".into()));
                        }
                        Language::Defined {
                            alphabet: delta,
                            sentence: Box::new(sentence),
                        }
                    }
                    path if words.len() == 3 => {
                        let path = base.join(path);
                        let content =
                            std::fs::read_to_string(&path).map_err(|e| perr(ln, format!("{}: {e}", path.display())))?;
                        let a = TreeAutomaton::parse(&content)?;
                        if a.rank() != k {
                            return Err(perr(
                                ln,
                                format!("language `{name}` has rank {} but the formula has rank {k}", a.rank()),
                            ));
                        }
                        Language::Automaton(Arc::new(a))
                    }
                    _ => return Err(perr(ln, "malformed lang line".into())),
                };
                env.languages.insert(name, lang);
            }
            Some(_) => break,
        }
        offset += raw.len();
    }
    let alphabet = alphabet.ok_or_else(|| perr(1, "missing alphabet header".into()))?;
    let rank = rank.ok_or_else(|| perr(1, "missing rank header".into()))?;
    let formula = parse_in(text, offset, &alphabet, rank, &env)?;
    Ok(FormulaFile {
        alphabet,
        rank,
        env,
        formula,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::parse_tree;

    fn sigma_ex() -> RankedAlphabet {
        RankedAlphabet::parse("f/2 a/0 b/0").unwrap()
    }

    fn sentence(t: &str, alpha: &RankedAlphabet, k: usize, phi: &str) -> bool {
        let t = parse_tree(t, alpha, k).unwrap();
        satisfies(&t, &Interpretation::new(), &parse_formula(phi, alpha, k).unwrap()).unwrap()
    }

    #[test]
    fn exists_examples() {
        let d = RankedAlphabet::boolean([0, 2]);
        assert!(sentence("0_2(1_0,0_0)", &d, 0, "exists x. P[1_0](x)"));
        assert!(!sentence("0_2(0_0,0_0)", &d, 0, "exists x. P[1_0](x)"));
        assert!(sentence("0_2(0_0,0_0)", &d, 0, "forall x. !P[1_0](x)"));
        assert!(sentence("1_2(1_0,0_0)", &d, 0, "mod[2,0] x. P[1_0](x) | P[1_2](x)"));
        assert!(!sentence("1_2(1_0,0_0)", &d, 0, "mod[2,1] x. P[1_0](x) | P[1_2](x)"));
    }

    #[test]
    fn atoms() {
        let s = sigma_ex();
        let t = parse_tree("f(a,f(v1,b))", &s, 1).unwrap();
        let at = |pairs: &[(&str, &str)]| -> Interpretation {
            pairs
                .iter()
                .map(|(v, n)| {
                    let id = if *n == "root" {
                        NodeId::root()
                    } else {
                        NodeId(n.split('.').map(|x| x.parse::<usize>().unwrap() - 1).collect())
                    };
                    (v.to_string(), id)
                })
                .collect()
        };
        let check =
            |phi: &str, lam: &[(&str, &str)]| satisfies(&t, &at(lam), &parse_formula(phi, &s, 1).unwrap()).unwrap();
        assert!(check("root(x)", &[("x", "root")]));
        assert!(!check("root(x)", &[("x", "1")]));
        assert!(check("x<y", &[("x", "root"), ("y", "2.2")]));
        assert!(!check("x<y", &[("x", "2"), ("y", "2")]));
        assert!(check("succ_2(x,y)", &[("x", "root"), ("y", "2")]));
        assert!(!check("succ_1(x,y)", &[("x", "root"), ("y", "2")]));
        assert!(check("max[1,1](x)", &[("x", "2")]));
        assert!(check("P[b](x) & left[1](x)", &[("x", "2.2")]));
        assert!(check("right[1](x)", &[("x", "1")]));
        assert!(check("left[0](x) & right[2](x)", &[("x", "root")]));
        assert!(check("left[0](x)", &[("x", "1")]));
        assert!(!check("left[0](x)", &[("x", "2.2")]));
        assert!(parse_formula("left[2](x)", &s, 1).is_err());
        assert!(parse_formula("max[3,1](x)", &s, 1).is_err());
        assert!(parse_formula("P[c](x)", &s, 1).is_err());
    }

    #[test]
    fn left0_is_conjunction() {
        let s = sigma_ex();
        let f = parse_formula("left[0](x)", &s, 2).unwrap();
        assert_eq!(f.display(&s), "!left[1](x) & !left[2](x)");
        let f = parse_formula("P[f](x) & !root(x)", &s, 0).unwrap();
        assert!(matches!(f, Formula::And(_, ref b) if matches!(**b, Formula::Not(_))));
    }

    #[test]
    fn characteristic_trees() {
        let s = sigma_ex();
        let t = parse_tree("f(a,b)", &s, 0).unwrap();
        let d = RankedAlphabet::boolean([0, 2]);
        let q = |body: &str| match parse_formula(&format!("Q[exists] x {{ 1: {body} }}"), &s, 0).unwrap() {
            Formula::Quant(q) => *q,
            _ => unreachable!(),
        };
        let bar = characteristic_tree(&t, &Interpretation::new(), &q("root(x)")).unwrap();
        assert_eq!(bar, parse_tree("1_2(0_0,0_0)", &d, 0).unwrap());
        let bar = characteristic_tree(&t, &Interpretation::new(), &q("P[a](x)")).unwrap();
        assert_eq!(bar, parse_tree("0_2(1_0,0_0)", &d, 0).unwrap());
    }

    #[test]
    fn determinism_checks() {
        let s = sigma_ex();
        let d = RankedAlphabet::boolean([0, 2]);
        let phi = parse_formula("P[a](x)", &s, 0).unwrap();
        let good = boolean_family(&d, &phi);
        assert!(check_deterministic(&good, &d, "x", &s, 0, 3).unwrap().is_none());
        let bad = vec![phi.clone(); d.len()];
        assert!(check_deterministic(&bad, &d, "x", &s, 0, 3).unwrap().is_some());
        let t = parse_tree("f(a,b)", &s, 0).unwrap();
        let q = Formula::Quant(Box::new(Quantifier {
            language_name: "exists".into(),
            language: builtin_language("exists", &s, 0).unwrap(),
            var: "x".into(),
            family: bad,
        }));
        assert!(matches!(
            satisfies(&t, &Interpretation::new(), &q),
            Err(LogicError::Determinism { .. })
        ));
    }

    #[test]
    fn structures_roundtrip() {
        let s = sigma_ex();
        let ext = ExtendedAlphabet::new(&s, &["x".into(), "y".into()]).unwrap();
        let t = parse_tree("f(a,f(b,a))", &s, 0).unwrap();
        let lambda: Interpretation = [("x".to_string(), NodeId(vec![1])), ("y".to_string(), NodeId(vec![1]))].into();
        let z = mk_structure(&ext, &t, &lambda).unwrap();
        assert_eq!(z.display(&ext.alphabet).to_string(), "f(a,f@x.y(b,a))");
        assert_eq!(destructure(&ext, &z).unwrap(), (t.clone(), lambda));
        let bad = z.map_symbols(&|s| ext.encode(ext.decode(s).0, 0));
        assert!(destructure(&ext, &bad).is_err());
        let none = ExtendedAlphabet::new(&s, &[]).unwrap();
        assert_eq!(mk_structure(&none, &t, &Interpretation::new()).unwrap(), t);
    }

    #[test]
    fn substitution_avoids_capture() {
        let s = sigma_ex();
        let chi = Formula::Quant(Box::new(Quantifier {
            language_name: "exists".into(),
            language: builtin_language("exists", &s, 0).unwrap(),
            var: "q".into(),
            family: boolean_family(&RankedAlphabet::boolean([0, 2]), &Formula::Less("p".into(), "q".into())),
        }));
        let out = substitute_var(&chi, "q", "p");
        assert_eq!(out.free_vars(), ["q".to_string()].into());
        let t = parse_tree("f(a,f(b,a))", &s, 0).unwrap();
        for node in [vec![], vec![0], vec![1]] {
            let before: Interpretation = [("p".to_string(), NodeId(node.clone()))].into();
            let after: Interpretation = [("q".to_string(), NodeId(node))].into();
            assert_eq!(
                satisfies(&t, &before, &chi).unwrap(),
                satisfies(&t, &after, &out).unwrap()
            );
        }
        let p = Formula::Label {
            sym: s.lookup("a").unwrap(),
            var: "p".into(),
        };
        assert!(matches!(substitute_var(&p, "q", "p"), Formula::Label { ref var, .. } if var == "q"));
        assert!(matches!(substitute_var(&p, "q", "r"), Formula::Label { ref var, .. } if var == "p"));
    }

    #[test]
    fn tilde_and_inverse_images() {
        let s = sigma_ex();
        let d = RankedAlphabet::boolean([0, 2]);
        let family = boolean_family(&d, &parse_formula("P[a](x)", &s, 0).unwrap());
        let chi = parse_formula("exists z. P[1_0](z)", &d, 0).unwrap();
        let flat = tilde_substitute(&chi, &d, &family, "x", &s).unwrap();
        for t in enumerate_trees(&s, 0, 3) {
            let direct = satisfies(&t, &Interpretation::new(), &flat).unwrap();
            assert_eq!(direct, t.display(&s).to_string().contains('a'));
        }
        assert!(tilde_substitute(&Formula::Root("x".into()), &d, &family, "x", &s).is_err());

        let s2 = RankedAlphabet::parse("g/2 c/0 d/0 e/0").unwrap();
        let h: Vec<Sym> = ["f", "a", "a", "b"].iter().map(|n| s.lookup(n).unwrap()).collect();
        let phi = parse_formula("exists x. P[a](x) & !root(x)", &s, 0).unwrap();
        let back = inverse_literal_image(&phi, &h, &s2);
        for t in enumerate_trees(&s2, 0, 3) {
            let image = t.map_symbols(&|x| h[x.index()]);
            assert_eq!(
                satisfies(&t, &Interpretation::new(), &back).unwrap(),
                satisfies(&image, &Interpretation::new(), &phi).unwrap()
            );
        }
    }

    #[test]
    fn formula_files() {
        let text = "symbols f/2 a/0 b/0\nrank 0\nlang K define exists z. P[1_2](z)\n# comment\nQ[K] x {\n  1: P[a](x) | root(x)\n}\n";
        let file = parse_formula_file(text, Path::new(".")).unwrap();
        let t = parse_tree("f(b,b)", &file.alphabet, 0).unwrap();
        assert!(satisfies(&t, &Interpretation::new(), &file.formula).unwrap());
        let err = parse_formula_file("symbols a/0\nrank 0\nP[a](x) &", Path::new(".")).unwrap_err();
        assert!(matches!(err, LogicError::Parse { line: 3, .. }), "{err:?}");
        let err = parse_formula("Q[exists] x { 1_0: true; 1_0: false }", &sigma_ex(), 0).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
