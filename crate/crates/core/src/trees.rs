//! Ranked alphabets and the free preclone: trees with ordered variable
//! leaves, tuples of trees, substitution, factorization and enumeration.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol `{name}` has arity {expected} but was given {found} children")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("frontier variables {found:?} are not v1..v{rank} in order")]
    Frontier { found: Vec<usize>, rank: usize },
    #[error("tuple of width {width} cannot be substituted into a tree of rank {rank}")]
    WidthMismatch { width: usize, rank: usize },
    #[error("path {0:?} does not address a symbol-labelled node")]
    NotInNv(Vec<usize>),
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
}

/// Index of a symbol inside its alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(pub u32);

impl Sym {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A finite set of symbols, each with a fixed arity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedAlphabet {
    names: Vec<String>,
    arities: Vec<usize>,
    index: HashMap<String, Sym>,
}

fn valid_symbol_name(name: &str) -> bool {
    !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | ',' | '/' | '#'))
        && !is_var_token(name)
}

fn is_var_token(s: &str) -> bool {
    s.len() > 1 && s.starts_with('v') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

impl RankedAlphabet {
    pub fn new<I, S>(symbols: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut names = Vec::new();
        let mut arities = Vec::new();
        let mut index = HashMap::new();
        for (name, arity) in symbols {
            let name = name.into();
            if !valid_symbol_name(&name) {
                return Err(TreeError::Alphabet(format!("bad symbol name `{name}`")));
            }
            let sym = Sym(names.len() as u32);
            if index.insert(name.clone(), sym).is_some() {
                return Err(TreeError::Alphabet(format!("duplicate symbol `{name}`")));
            }
            names.push(name);
            arities.push(arity);
        }
        if names.is_empty() {
            return Err(TreeError::Alphabet("alphabet is empty".into()));
        }
        Ok(RankedAlphabet { names, arities, index })
    }

    /// Parses `name/arity` entries, one per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for item in line.split_whitespace() {
                let (name, arity) = item
                    .rsplit_once('/')
                    .ok_or_else(|| TreeError::Alphabet(format!("expected name/arity, got `{item}`")))?;
                let arity: usize = arity
                    .parse()
                    .map_err(|_| TreeError::Alphabet(format!("bad arity in `{item}`")))?;
                entries.push((name.to_string(), arity));
            }
        }
        Self::new(entries)
    }

    /// The Boolean alphabet with letters `0_n` and `1_n` for each listed rank.
    pub fn boolean<I: IntoIterator<Item = usize>>(ranks: I) -> Self {
        let ranks: BTreeSet<usize> = ranks.into_iter().collect();
        let mut entries = Vec::new();
        for n in ranks {
            entries.push((format!("0_{n}"), n));
            entries.push((format!("1_{n}"), n));
        }
        Self::new(entries).expect("boolean alphabet needs at least one rank")
    }

    pub fn to_text(&self) -> String {
        self.symbols()
            .map(|s| format!("{}/{}\n", self.name(s), self.arity(s)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn symbols(&self) -> impl Iterator<Item = Sym> + '_ {
        (0..self.names.len() as u32).map(Sym)
    }

    pub fn name(&self, s: Sym) -> &str {
        &self.names[s.index()]
    }

    pub fn arity(&self, s: Sym) -> usize {
        self.arities[s.index()]
    }

    pub fn lookup(&self, name: &str) -> Option<Sym> {
        self.index.get(name).copied()
    }

    pub fn max_arity(&self) -> usize {
        self.arities.iter().copied().max().unwrap_or(0)
    }

    pub fn of_arity(&self, n: usize) -> Vec<Sym> {
        self.symbols().filter(|&s| self.arity(s) == n).collect()
    }

    /// The set of arities that occur.
    pub fn ranks(&self) -> BTreeSet<usize> {
        self.arities.iter().copied().collect()
    }

    /// For a Boolean alphabet, the bit carried by a letter.
    pub fn boolean_value(&self, s: Sym) -> Option<bool> {
        let name = self.name(s);
        let (bit, n) = name.split_once('_')?;
        if n.parse::<usize>().ok()? != self.arity(s) {
            return None;
        }
        match bit {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        }
    }

    /// True when every occurring rank carries exactly the letters `0_n` and `1_n`.
    pub fn is_boolean(&self) -> bool {
        self.ranks().into_iter().all(|n| {
            let letters = self.of_arity(n);
            letters.len() == 2
                && letters
                    .iter()
                    .filter(|&&s| self.boolean_value(s) == Some(false))
                    .count()
                    == 1
                && letters.iter().filter(|&&s| self.boolean_value(s) == Some(true)).count() == 1
        })
    }

    /// The letter `0_n` or `1_n` of a Boolean alphabet.
    pub fn boolean_letter(&self, bit: bool, n: usize) -> Option<Sym> {
        self.lookup(&format!("{}_{n}", u8::from(bit)))
    }
}

/// Node label: an alphabet symbol or a variable `v_j` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sym(Sym),
    Var(usize),
}

/// Address of a node: child indices (0-based) from the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub Vec<usize>);

impl NodeId {
    pub fn root() -> Self {
        NodeId(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut p = self.0.clone();
        p.push(i);
        NodeId(p)
    }

    pub fn is_ancestor_of(&self, other: &NodeId) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        let parts: Vec<String> = self.0.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// A finite tree over a ranked alphabet whose variable leaves read
/// `v1, v2, ..., vn` from left to right.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RankedTree {
    label: Label,
    children: Vec<RankedTree>,
}

/// Result of cutting a tree at a node: `t = context · (k1 ⊕ sub ⊕ k2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Factorization {
    pub context: RankedTree,
    pub k1: usize,
    pub sub: RankedTree,
    pub k2: usize,
}

impl RankedTree {
    /// The unit tree: a single leaf `v1`.
    pub fn unit() -> Self {
        Self::var(1)
    }

    pub fn var(j: usize) -> Self {
        RankedTree {
            label: Label::Var(j),
            children: Vec::new(),
        }
    }

    /// Builds a node without validating arities or variable numbering.
    pub fn node(sym: Sym, children: Vec<RankedTree>) -> Self {
        RankedTree {
            label: Label::Sym(sym),
            children,
        }
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn children(&self) -> &[RankedTree] {
        &self.children
    }

    pub fn is_var(&self) -> bool {
        matches!(self.label, Label::Var(_))
    }

    pub fn rank(&self) -> usize {
        match self.label {
            Label::Var(_) => 1,
            Label::Sym(_) => self.children.iter().map(RankedTree::rank).sum(),
        }
    }

    /// Number of symbol-labelled nodes.
    pub fn nv_count(&self) -> usize {
        match self.label {
            Label::Var(_) => 0,
            Label::Sym(_) => 1 + self.children.iter().map(RankedTree::nv_count).sum::<usize>(),
        }
    }

    /// Variable indices in frontier order.
    pub fn frontier_vars(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self.label {
            Label::Var(j) => out.push(j),
            Label::Sym(_) => self.children.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    /// Renumbers variable leaves `v1, v2, ...` left to right.
    pub fn renumbered(mut self) -> Self {
        let mut next = 1;
        self.renumber(&mut next);
        self
    }

    fn renumber(&mut self, next: &mut usize) {
        match self.label {
            Label::Var(_) => {
                self.label = Label::Var(*next);
                *next += 1;
            }
            Label::Sym(_) => self.children.iter_mut().for_each(|c| c.renumber(next)),
        }
    }

    /// Checks arities against `alphabet` and the frontier against `v1..vk`.
    pub fn validate(&self, alphabet: &RankedAlphabet, k: usize) -> Result<(), TreeError> {
        self.check_arities(alphabet)?;
        let found = self.frontier_vars();
        if found.len() != k || found.iter().enumerate().any(|(i, &j)| j != i + 1) {
            return Err(TreeError::Frontier { found, rank: k });
        }
        Ok(())
    }

    fn check_arities(&self, alphabet: &RankedAlphabet) -> Result<(), TreeError> {
        match self.label {
            Label::Var(_) => Ok(()),
            Label::Sym(s) => {
                if s.index() >= alphabet.len() {
                    return Err(TreeError::UnknownSymbol(format!("#{}", s.0)));
                }
                if alphabet.arity(s) != self.children.len() {
                    return Err(TreeError::ArityMismatch {
                        name: alphabet.name(s).to_string(),
                        expected: alphabet.arity(s),
                        found: self.children.len(),
                    });
                }
                self.children.iter().try_for_each(|c| c.check_arities(alphabet))
            }
        }
    }

    /// Substitutes `g_i` for the leaf `v_i` and renumbers the variables.
    pub fn compose(&self, g: &TreeTuple) -> Result<RankedTree, TreeError> {
        let rank = self.rank();
        if g.width() != rank {
            return Err(TreeError::WidthMismatch { width: g.width(), rank });
        }
        let mut offsets = Vec::with_capacity(rank);
        let mut acc = 0;
        for c in &g.components {
            offsets.push(acc);
            acc += c.rank();
        }
        Ok(self.substitute(&g.components, &offsets))
    }

    fn substitute(&self, g: &[RankedTree], offsets: &[usize]) -> RankedTree {
        match self.label {
            Label::Var(i) => g[i - 1].shifted(offsets[i - 1]),
            Label::Sym(_) => RankedTree {
                label: self.label,
                children: self.children.iter().map(|c| c.substitute(g, offsets)).collect(),
            },
        }
    }

    fn shifted(&self, by: usize) -> RankedTree {
        match self.label {
            Label::Var(j) => RankedTree::var(j + by),
            Label::Sym(_) => RankedTree {
                label: self.label,
                children: self.children.iter().map(|c| c.shifted(by)).collect(),
            },
        }
    }

    /// Symbol-labelled nodes in preorder.
    pub fn nv_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_nv(&mut NodeId::root(), &mut out);
        out
    }

    fn collect_nv(&self, path: &mut NodeId, out: &mut Vec<NodeId>) {
        if let Label::Sym(_) = self.label {
            out.push(path.clone());
            for (i, c) in self.children.iter().enumerate() {
                path.0.push(i);
                c.collect_nv(path, out);
                path.0.pop();
            }
        }
    }

    pub fn subtree(&self, x: &NodeId) -> Option<&RankedTree> {
        let mut cur = self;
        for &i in &x.0 {
            cur = cur.children.get(i)?;
        }
        Some(cur)
    }

    /// Number of variable leaves strictly to the left of the subtree at `x`.
    pub fn vars_left_of(&self, x: &NodeId) -> usize {
        let mut cur = self;
        let mut count = 0;
        for &i in &x.0 {
            count += cur.children[..i].iter().map(RankedTree::rank).sum::<usize>();
            cur = &cur.children[i];
        }
        count
    }

    /// Writes `t = r · (k1 ⊕ s ⊕ k2)` where `s` is the subtree at `x`.
    pub fn factor_at(&self, x: &NodeId) -> Result<Factorization, TreeError> {
        let sub = match self.subtree(x) {
            Some(s) if !s.is_var() => s.clone(),
            _ => return Err(TreeError::NotInNv(x.0.clone())),
        };
        let k1 = self.vars_left_of(x);
        let k2 = self.rank() - k1 - sub.rank();
        let context = self.replaced_at(x, RankedTree::var(0)).renumbered();
        Ok(Factorization {
            context,
            k1,
            sub: sub.renumbered(),
            k2,
        })
    }

    /// Copy of the tree with the subtree at `x` replaced (no renumbering).
    pub fn replaced_at(&self, x: &NodeId, by: RankedTree) -> RankedTree {
        fn go(t: &RankedTree, path: &[usize], by: RankedTree) -> RankedTree {
            match path.split_first() {
                None => by,
                Some((&i, rest)) => {
                    let mut out = t.clone();
                    out.children[i] = go(&t.children[i], rest, by);
                    out
                }
            }
        }
        go(self, &x.0, by)
    }

    /// Applies a letter-to-letter map to every symbol.
    pub fn map_symbols(&self, h: &impl Fn(Sym) -> Sym) -> RankedTree {
        RankedTree {
            label: match self.label {
                Label::Sym(s) => Label::Sym(h(s)),
                v => v,
            },
            children: self.children.iter().map(|c| c.map_symbols(h)).collect(),
        }
    }

    pub fn display<'a>(&'a self, alphabet: &'a RankedAlphabet) -> TreeDisplay<'a> {
        TreeDisplay { tree: self, alphabet }
    }
}

pub struct TreeDisplay<'a> {
    tree: &'a RankedTree,
    alphabet: &'a RankedAlphabet,
}

impl fmt::Display for TreeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tree.label {
            Label::Var(j) => write!(f, "v{j}"),
            Label::Sym(s) => {
                write!(f, "{}", self.alphabet.name(s))?;
                if !self.tree.children.is_empty() {
                    write!(f, "(")?;
                    for (i, c) in self.tree.children.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}", c.display(self.alphabet))?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

/// An ordered tuple `g_1 ⊕ ... ⊕ g_n` of trees.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TreeTuple {
    pub components: Vec<RankedTree>,
}

impl TreeTuple {
    pub fn oplus(trees: Vec<RankedTree>) -> Self {
        TreeTuple { components: trees }
    }

    /// The empty tuple.
    pub fn empty() -> Self {
        TreeTuple::default()
    }

    /// The tuple of `n` unit trees.
    pub fn units(n: usize) -> Self {
        TreeTuple {
            components: vec![RankedTree::unit(); n],
        }
    }

    pub fn width(&self) -> usize {
        self.components.len()
    }

    pub fn total_rank(&self) -> usize {
        self.components.iter().map(RankedTree::rank).sum()
    }

    /// Concatenation of tuples.
    pub fn concat(parts: impl IntoIterator<Item = TreeTuple>) -> Self {
        TreeTuple {
            components: parts.into_iter().flat_map(|p| p.components).collect(),
        }
    }

    /// `self · h`: each component consumes the next block of `h`.
    pub fn compose(&self, h: &TreeTuple) -> Result<TreeTuple, TreeError> {
        if h.width() != self.total_rank() {
            return Err(TreeError::WidthMismatch {
                width: h.width(),
                rank: self.total_rank(),
            });
        }
        let mut out = Vec::with_capacity(self.width());
        let mut at = 0;
        for g in &self.components {
            let r = g.rank();
            let block = TreeTuple::oplus(h.components[at..at + r].to_vec());
            out.push(g.compose(&block)?);
            at += r;
        }
        Ok(TreeTuple::oplus(out))
    }
}

/// Parses a term `symbol | symbol(tree, ...) | v<digits>` and checks it has rank `k`.
pub fn parse_tree(text: &str, alphabet: &RankedAlphabet, k: usize) -> Result<RankedTree, TreeError> {
    let tree = parse_tree_unchecked(text, alphabet)?;
    tree.validate(alphabet, k)?;
    Ok(tree)
}

/// Parses a term and checks arities, without constraining the frontier.
pub fn parse_tree_unchecked(text: &str, alphabet: &RankedAlphabet) -> Result<RankedTree, TreeError> {
    let mut p = TermParser {
        src: text.as_bytes(),
        pos: 0,
        alphabet,
    };
    let tree = p.tree()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(tree)
}

struct TermParser<'a> {
    src: &'a [u8],
    pos: usize,
    alphabet: &'a RankedAlphabet,
}

impl TermParser<'_> {
    fn error(&self, msg: &str) -> TreeError {
        TreeError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn name(&mut self) -> Result<String, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_whitespace() || matches!(c, b'(' | b')' | b',') {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a symbol or variable"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn tree(&mut self) -> Result<RankedTree, TreeError> {
        let start = self.pos;
        let name = self.name()?;
        if is_var_token(&name) {
            let j: usize = name[1..].parse().map_err(|_| self.error("bad variable index"))?;
            if j == 0 {
                return Err(TreeError::Syntax {
                    pos: start,
                    msg: "variables are numbered from v1".into(),
                });
            }
            return Ok(RankedTree::var(j));
        }
        let sym = self
            .alphabet
            .lookup(&name)
            .ok_or_else(|| TreeError::UnknownSymbol(name.clone()))?;
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.tree()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.error("expected `,` or `)`")),
                }
            }
        }
        if children.len() != self.alphabet.arity(sym) {
            return Err(TreeError::ArityMismatch {
                name,
                expected: self.alphabet.arity(sym),
                found: children.len(),
            });
        }
        Ok(RankedTree::node(sym, children))
    }
}

/// Every tree of rank `k` with at most `max_nv` symbol nodes, ordered by
/// node count and then by printed form.
pub fn enumerate_trees(alphabet: &RankedAlphabet, k: usize, max_nv: usize) -> Vec<RankedTree> {
    // shapes[n][r]: trees with exactly n symbol nodes and r variable leaves.
    let mut shapes: Vec<Vec<Vec<RankedTree>>> = vec![vec![Vec::new(); k + 1]; max_nv + 1];
    if k >= 1 {
        shapes[0][1].push(RankedTree::var(0));
    }
    for n in 1..=max_nv {
        for sym in alphabet.symbols() {
            let m = alphabet.arity(sym);
            for r in 0..=k {
                let mut out = Vec::new();
                fill_children(&shapes, m, n - 1, r, &mut Vec::new(), &mut |kids| {
                    out.push(RankedTree::node(sym, kids.to_vec()));
                });
                shapes[n][r].extend(out);
            }
        }
    }
    let mut result: Vec<(usize, String, RankedTree)> = Vec::new();
    for (n, by_rank) in shapes.into_iter().enumerate() {
        for t in by_rank.into_iter().nth(k).unwrap_or_default() {
            let t = t.renumbered();
            let text = t.display(alphabet).to_string();
            result.push((n, text, t));
        }
    }
    result.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    result.into_iter().map(|(_, _, t)| t).collect()
}

fn fill_children(
    shapes: &[Vec<Vec<RankedTree>>],
    slots: usize,
    nodes: usize,
    vars: usize,
    acc: &mut Vec<RankedTree>,
    emit: &mut dyn FnMut(&[RankedTree]),
) {
    if slots == 0 {
        if nodes == 0 && vars == 0 {
            emit(acc);
        }
        return;
    }
    for n in 0..=nodes {
        for r in 0..=vars {
            for t in &shapes[n][r] {
                acc.push(t.clone());
                fill_children(shapes, slots - 1, nodes - n, vars - r, acc, emit);
                acc.pop();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma() -> RankedAlphabet {
        RankedAlphabet::parse("f/2\na/0\nb/0\n").unwrap()
    }

    fn t(s: &str, k: usize) -> RankedTree {
        parse_tree(s, &sigma(), k).unwrap()
    }

    #[test]
    fn parse_and_print() {
        let a = sigma();
        let tree = t("f(a, b)", 0);
        assert_eq!(tree.nv_count(), 3);
        assert_eq!(tree.display(&a).to_string(), "f(a,b)");
        assert_eq!(t("v1", 1), RankedTree::unit());
    }

    #[test]
    fn parse_errors() {
        let a = sigma();
        assert!(matches!(parse_tree("f(v2,v1)", &a, 2), Err(TreeError::Frontier { .. })));
        assert!(matches!(
            parse_tree("f(a)", &a, 0),
            Err(TreeError::ArityMismatch { .. })
        ));
        assert!(matches!(parse_tree("g(a)", &a, 0), Err(TreeError::UnknownSymbol(_))));
        assert!(matches!(parse_tree("f(a,b", &a, 0), Err(TreeError::Syntax { .. })));
        assert!(parse_tree("f(a,b)", &a, 1).is_err());
    }

    #[test]
    fn composition_examples() {
        let fab = t("f(a,b)", 0);
        let unit = RankedTree::unit();
        assert_eq!(unit.compose(&TreeTuple::oplus(vec![fab.clone()])).unwrap(), fab);
        let f = t("f(v1,v2)", 2);
        let ab = TreeTuple::oplus(vec![t("a", 0), t("b", 0)]);
        assert_eq!(f.compose(&ab).unwrap(), fab);
        let g = TreeTuple::oplus(vec![f.clone(), RankedTree::unit()]);
        assert_eq!(f.compose(&g).unwrap(), t("f(f(v1,v2),v3)", 3));
        assert!(f.compose(&TreeTuple::units(3)).is_err());
    }

    #[test]
    fn tuples() {
        let tup = TreeTuple::oplus(vec![t("a", 0), t("b", 0)]);
        assert_eq!((tup.width(), tup.total_rank()), (2, 0));
        let three = TreeTuple::units(3);
        assert_eq!((three.width(), three.total_rank()), (3, 3));
        assert_eq!(TreeTuple::empty().width(), 0);
    }

    #[test]
    fn factorization_examples() {
        let fab = t("f(a,b)", 0);
        let root = fab.factor_at(&NodeId::root()).unwrap();
        assert_eq!(root.context, RankedTree::unit());
        assert_eq!((root.k1, root.k2), (0, 0));
        assert_eq!(root.sub, fab);
        let left = fab.factor_at(&NodeId(vec![0])).unwrap();
        assert_eq!(left.context, t("f(v1,b)", 1));
        assert_eq!(left.sub, t("a", 0));

        let tree = t("f(v1,f(a,v2))", 2);
        let fx = tree.factor_at(&NodeId(vec![1])).unwrap();
        assert_eq!(fx.context, t("f(v1,v2)", 2));
        assert_eq!((fx.k1, fx.k2), (1, 0));
        assert_eq!(fx.sub, t("f(a,v1)", 1));
        assert!(tree.factor_at(&NodeId(vec![0])).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let a = sigma();
        let one: Vec<String> = enumerate_trees(&a, 0, 1)
            .iter()
            .map(|t| t.display(&a).to_string())
            .collect();
        assert_eq!(one, vec!["a", "b"]);
        let three: Vec<String> = enumerate_trees(&a, 0, 3)
            .iter()
            .map(|t| t.display(&a).to_string())
            .collect();
        assert_eq!(three, vec!["a", "b", "f(a,a)", "f(a,b)", "f(b,a)", "f(b,b)"]);
        assert_eq!(enumerate_trees(&a, 1, 0), vec![RankedTree::unit()]);
        for tree in enumerate_trees(&a, 2, 4) {
            tree.validate(&a, 2).unwrap();
        }
    }

    #[test]
    fn boolean_alphabet() {
        let d = RankedAlphabet::boolean([0, 2]);
        assert!(d.is_boolean());
        assert_eq!(d.len(), 4);
        assert!(!sigma().is_boolean());
        assert_eq!(d.boolean_value(d.lookup("1_2").unwrap()), Some(true));
    }
}
