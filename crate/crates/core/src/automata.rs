//! Deterministic complete bottom-up tree automata for rank-k languages.
//!
//! A rank-k automaton runs over trees with variable leaves `v1..vk`; each
//! variable has its own starting state.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use thiserror::Error;

use crate::trees::{enumerate_trees, Label, RankedAlphabet, RankedTree, Sym, TreeError, TreeTuple};

pub type State = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("automata have different alphabets")]
    AlphabetMismatch,
    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("alphabet is not Boolean (needs exactly 0_n and 1_n for each rank)")]
    NotBoolean,
    #[error("invalid modulus p={p}, r={r}")]
    BadModulus { p: usize, r: usize },
    #[error("invalid quotient: k1={k1}, k2={k2}, context rank {u_rank}, language rank {k}")]
    QuotientArithmetic {
        k1: usize,
        k2: usize,
        u_rank: usize,
        k: usize,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed automaton: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A deterministic complete bottom-up automaton over `alphabet` plus
/// `rank` variable leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeAutomaton {
    alphabet: RankedAlphabet,
    rank: usize,
    states: usize,
    var_states: Vec<State>,
    /// Per symbol, the table over `states^arity` (first child most significant).
    trans: Vec<Vec<State>>,
    finals: Vec<bool>,
}

fn tuple_index(states: usize, children: &[State]) -> usize {
    children.iter().fold(0, |acc, &q| acc * states + q as usize)
}

/// Iterates over all tuples in `0..base` of the given length, lexicographically.
pub(crate) fn for_each_tuple(base: usize, len: usize, mut f: impl FnMut(&[State])) {
    if len > 0 && base == 0 {
        return;
    }
    let mut cur = vec![0 as State; len];
    loop {
        f(&cur);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            cur[i] += 1;
            if (cur[i] as usize) < base {
                break;
            }
            cur[i] = 0;
        }
    }
}

impl TreeAutomaton {
    pub fn new(
        alphabet: RankedAlphabet,
        rank: usize,
        states: usize,
        var_states: Vec<State>,
        trans: Vec<Vec<State>>,
        finals: Vec<bool>,
    ) -> Result<Self, AutomatonError> {
        let bad = |m: &str| Err(AutomatonError::Malformed(m.to_string()));
        if states == 0 {
            return bad("an automaton needs at least one state");
        }
        if var_states.len() != rank {
            return bad("one variable state is needed per variable");
        }
        if trans.len() != alphabet.len() || finals.len() != states {
            return bad("table sizes do not match the alphabet or state count");
        }
        for s in alphabet.symbols() {
            if trans[s.index()].len() != states.pow(alphabet.arity(s) as u32) {
                return bad("transition table is not complete");
            }
        }
        let in_range = |q: &State| (*q as usize) < states;
        if !var_states.iter().all(in_range) || !trans.iter().flatten().all(in_range) {
            return bad("state out of range");
        }
        Ok(TreeAutomaton {
            alphabet,
            rank,
            states,
            var_states,
            trans,
            finals,
        })
    }

    /// Builds the automaton from a transition function over a fixed state count.
    pub fn from_fn(
        alphabet: RankedAlphabet,
        rank: usize,
        states: usize,
        var_states: Vec<State>,
        finals: Vec<bool>,
        delta: impl Fn(Sym, &[State]) -> State,
    ) -> Result<Self, AutomatonError> {
        let trans = alphabet
            .symbols()
            .map(|s| {
                let mut table = Vec::with_capacity(states.pow(alphabet.arity(s) as u32));
                for_each_tuple(states, alphabet.arity(s), |c| table.push(delta(s, c)));
                table
            })
            .collect();
        Self::new(alphabet, rank, states, var_states, trans, finals)
    }

    /// A uniformly random complete automaton with `states` states.
    pub fn random(
        alphabet: &RankedAlphabet,
        rank: usize,
        states: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self, AutomatonError> {
        if states == 0 {
            return Err(AutomatonError::Malformed(
                "an automaton needs at least one state".into(),
            ));
        }
        let var_states = (0..rank).map(|_| rng.gen_range(0..states) as State).collect();
        let finals = (0..states).map(|_| rng.gen_bool(0.5)).collect();
        let trans = alphabet
            .symbols()
            .map(|s| {
                (0..states.pow(alphabet.arity(s) as u32))
                    .map(|_| rng.gen_range(0..states) as State)
                    .collect()
            })
            .collect();
        Self::new(alphabet.clone(), rank, states, var_states, trans, finals)
    }

    /// Builds the automaton whose states are the values reachable from the
    /// variable states under `step`. Returns the automaton and its states.
    pub fn explore<S: Clone + Eq + Hash>(
        alphabet: RankedAlphabet,
        var_states: Vec<S>,
        step: impl Fn(Sym, &[S]) -> S,
        is_final: impl Fn(&S) -> bool,
    ) -> (Self, Vec<S>) {
        let rank = var_states.len();
        let mut values: Vec<S> = Vec::new();
        let mut index: HashMap<S, State> = HashMap::new();
        let intern = |v: S, values: &mut Vec<S>, index: &mut HashMap<S, State>| -> State {
            if let Some(&q) = index.get(&v) {
                return q;
            }
            let q = values.len() as State;
            values.push(v.clone());
            index.insert(v, q);
            q
        };
        let var_ids: Vec<State> = var_states
            .into_iter()
            .map(|v| intern(v, &mut values, &mut index))
            .collect();
        loop {
            let before = values.len();
            for s in alphabet.symbols() {
                let n = values.len();
                let mut fresh = Vec::new();
                for_each_tuple(n, alphabet.arity(s), |c| {
                    let kids: Vec<S> = c.iter().map(|&q| values[q as usize].clone()).collect();
                    fresh.push(step(s, &kids));
                });
                for v in fresh {
                    intern(v, &mut values, &mut index);
                }
            }
            if values.len() == before {
                break;
            }
        }
        if values.is_empty() {
            // Rank 0 without constants: no tree exists, one dead state suffices.
            let aut = Self::from_fn(alphabet, 0, 1, Vec::new(), vec![false], |_, _| 0)
                .expect("single-state automaton is complete");
            return (aut, Vec::new());
        }
        let n = values.len();
        let finals = values.iter().map(&is_final).collect();
        let aut = Self::from_fn(alphabet, rank, n, var_ids, finals, |s, c| {
            let kids: Vec<S> = c.iter().map(|&q| values[q as usize].clone()).collect();
            index[&step(s, &kids)]
        })
        .expect("explored automaton is complete");
        (aut, values)
    }

    pub fn alphabet(&self) -> &RankedAlphabet {
        &self.alphabet
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn var_state(&self, j: usize) -> State {
        self.var_states[j - 1]
    }

    pub fn var_states(&self) -> &[State] {
        &self.var_states
    }

    pub fn is_final(&self, q: State) -> bool {
        self.finals[q as usize]
    }

    pub fn finals(&self) -> &[bool] {
        &self.finals
    }

    pub fn delta(&self, s: Sym, children: &[State]) -> State {
        self.trans[s.index()][tuple_index(self.states, children)]
    }

    /// Same automaton with a different rank and variable states.
    pub fn with_vars(&self, var_states: Vec<State>) -> Self {
        TreeAutomaton {
            rank: var_states.len(),
            var_states,
            ..self.clone()
        }
    }

    /// Same transitions with a different final set.
    pub fn with_finals(&self, finals: Vec<bool>) -> Self {
        assert_eq!(finals.len(), self.states);
        TreeAutomaton { finals, ..self.clone() }
    }

    /// Evaluates `t` with variable `v_j` mapped to `vars(j)`.
    pub fn run_with(&self, t: &RankedTree, vars: &dyn Fn(usize) -> State) -> Result<State, AutomatonError> {
        match t.label() {
            Label::Var(j) => Ok(vars(j)),
            Label::Sym(s) => {
                if s.index() >= self.alphabet.len() || self.alphabet.arity(s) != t.children().len() {
                    return Err(AutomatonError::AlphabetMismatch);
                }
                let kids = t
                    .children()
                    .iter()
                    .map(|c| self.run_with(c, vars))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(self.delta(s, &kids))
            }
        }
    }

    pub fn run(&self, t: &RankedTree) -> Result<State, AutomatonError> {
        let found = t.rank();
        if found != self.rank || t.frontier_vars().iter().enumerate().any(|(i, &j)| j != i + 1) {
            return Err(AutomatonError::RankMismatch {
                expected: self.rank,
                found,
            });
        }
        self.run_with(t, &|j| self.var_states[j - 1])
    }

    pub fn accepts(&self, t: &RankedTree) -> Result<bool, AutomatonError> {
        Ok(self.is_final(self.run(t)?))
    }

    pub fn complement(&self) -> Self {
        self.with_finals(self.finals.iter().map(|f| !f).collect())
    }

    fn product(&self, other: &Self, keep: impl Fn(bool, bool) -> bool) -> Result<Self, AutomatonError> {
        if self.alphabet != other.alphabet {
            return Err(AutomatonError::AlphabetMismatch);
        }
        if self.rank != other.rank {
            return Err(AutomatonError::RankMismatch {
                expected: self.rank,
                found: other.rank,
            });
        }
        let nb = other.states;
        let pair = |p: State, q: State| p * nb as State + q;
        let vars = self
            .var_states
            .iter()
            .zip(&other.var_states)
            .map(|(&p, &q)| pair(p, q))
            .collect();
        let finals = (0..self.states * nb)
            .map(|i| keep(self.finals[i / nb], other.finals[i % nb]))
            .collect();
        Self::from_fn(
            self.alphabet.clone(),
            self.rank,
            self.states * nb,
            vars,
            finals,
            |s, c| {
                let left: Vec<State> = c.iter().map(|&x| x / nb as State).collect();
                let right: Vec<State> = c.iter().map(|&x| x % nb as State).collect();
                pair(self.delta(s, &left), other.delta(s, &right))
            },
        )
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, AutomatonError> {
        self.product(other, |a, b| a && b)
    }

    pub fn union(&self, other: &Self) -> Result<Self, AutomatonError> {
        self.product(other, |a, b| a || b)
    }

    /// States reachable from the variable states and constants, in discovery order.
    pub fn reachable(&self) -> Vec<State> {
        let mut seen = vec![false; self.states];
        let mut order = Vec::new();
        for &q in &self.var_states {
            if !seen[q as usize] {
                seen[q as usize] = true;
                order.push(q);
            }
        }
        loop {
            let before = order.len();
            for s in self.alphabet.symbols() {
                let m = self.alphabet.arity(s);
                let snapshot = order.clone();
                for_each_tuple(snapshot.len(), m, |c| {
                    let kids: Vec<State> = c.iter().map(|&i| snapshot[i as usize]).collect();
                    let q = self.delta(s, &kids);
                    if !seen[q as usize] {
                        seen[q as usize] = true;
                        order.push(q);
                    }
                });
            }
            if order.len() == before {
                return order;
            }
        }
    }

    /// Merges reachable states that no one-hole context separates, starting
    /// from the partition given by `colors`. Returns the quotient automaton
    /// (finals taken from representatives) and the old-to-new state map.
    pub fn merge_by_colors<C: Clone + Eq + Hash>(&self, colors: &[C]) -> (Self, Vec<Option<State>>) {
        let reach = self.reachable();
        if reach.is_empty() {
            return (self.clone(), (0..self.states as State).map(Some).collect());
        }
        let mut class: Vec<usize> = vec![usize::MAX; self.states];
        {
            let mut ids: HashMap<C, usize> = HashMap::new();
            for &q in &reach {
                let n = ids.len();
                class[q as usize] = *ids.entry(colors[q as usize].clone()).or_insert(n);
            }
        }
        let mut count = reach.iter().map(|&q| class[q as usize]).max().unwrap() + 1;
        loop {
            let mut sigs: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut next = vec![usize::MAX; self.states];
            for &q in &reach {
                let mut sig = vec![class[q as usize]];
                for s in self.alphabet.symbols() {
                    let m = self.alphabet.arity(s);
                    for pos in 0..m {
                        for_each_tuple(reach.len(), m.saturating_sub(1), |c| {
                            let mut kids: Vec<State> = c.iter().map(|&i| reach[i as usize]).collect();
                            kids.insert(pos, q);
                            sig.push(class[self.delta(s, &kids) as usize]);
                        });
                    }
                }
                let n = sigs.len();
                next[q as usize] = *sigs.entry(sig).or_insert(n);
            }
            let new_count = sigs.len();
            class = next;
            if new_count == count {
                break;
            }
            count = new_count;
        }
        let map: Vec<Option<State>> = (0..self.states)
            .map(|q| (class[q] != usize::MAX).then_some(class[q] as State))
            .collect();
        let mut rep = vec![0 as State; count];
        for &q in reach.iter().rev() {
            rep[class[q as usize]] = q;
        }
        let vars = self.var_states.iter().map(|&q| map[q as usize].unwrap()).collect();
        let finals = rep.iter().map(|&q| self.finals[q as usize]).collect();
        let aut = Self::from_fn(self.alphabet.clone(), self.rank, count, vars, finals, |s, c| {
            let kids: Vec<State> = c.iter().map(|&x| rep[x as usize]).collect();
            map[self.delta(s, &kids) as usize].unwrap()
        })
        .expect("quotient automaton is complete");
        (aut, map)
    }

    /// The minimal automaton of the same language (all states reachable).
    pub fn minimize(&self) -> Self {
        self.merge_by_colors(&self.finals).0
    }

    /// Automaton for `{f : u·(k1 ⊕ f ⊕ k2) ∈ L}`.
    pub fn left_quotient(&self, u: &RankedTree, k1: usize, k2: usize) -> Result<Self, AutomatonError> {
        let k = self.rank;
        let u_rank = u.rank();
        if k1 + k2 > k || u_rank != k1 + 1 + k2 {
            return Err(AutomatonError::QuotientArithmetic { k1, k2, u_rank, k });
        }
        u.validate(&self.alphabet, u_rank)?;
        let ell = k - k1 - k2;
        let vars: Vec<State> = (1..=ell).map(|j| self.var_state(k1 + j)).collect();
        let mut finals = Vec::with_capacity(self.states);
        for q in 0..self.states as State {
            let end = self.run_with(u, &|j| {
                if j <= k1 {
                    self.var_state(j)
                } else if j == k1 + 1 {
                    q
                } else {
                    self.var_state(j - 1 + ell)
                }
            })?;
            finals.push(self.is_final(end));
        }
        Ok(self.with_vars(vars).with_finals(finals))
    }

    /// Automaton for `{f : f·v ∈ L}`.
    pub fn right_quotient(&self, v: &TreeTuple) -> Result<Self, AutomatonError> {
        if v.total_rank() != self.rank {
            return Err(AutomatonError::RankMismatch {
                expected: self.rank,
                found: v.total_rank(),
            });
        }
        let mut vars = Vec::with_capacity(v.width());
        let mut offset = 0;
        for c in &v.components {
            c.validate(&self.alphabet, c.rank())?;
            vars.push(self.run_with(c, &|j| self.var_state(offset + j))?);
            offset += c.rank();
        }
        Ok(self.with_vars(vars))
    }

    /// Trees containing at least one node labelled `1_n`.
    pub fn builtin_exists(delta: &RankedAlphabet, k: usize) -> Result<Self, AutomatonError> {
        Self::counter(delta, k, 2, |count, one| (count + one).min(1), |c| c == 1)
    }

    /// Trees whose number of `1`-labelled nodes is `r` modulo `p`.
    pub fn builtin_mod(delta: &RankedAlphabet, k: usize, p: usize, r: usize) -> Result<Self, AutomatonError> {
        if p < 2 || r >= p {
            return Err(AutomatonError::BadModulus { p, r });
        }
        Self::counter(delta, k, p, |count, one| (count + one) % p, |c| c == r)
    }

    fn counter(
        delta: &RankedAlphabet,
        k: usize,
        states: usize,
        add: impl Fn(usize, usize) -> usize,
        accept: impl Fn(usize) -> bool,
    ) -> Result<Self, AutomatonError> {
        if !delta.is_boolean() {
            return Err(AutomatonError::NotBoolean);
        }
        let finals = (0..states).map(accept).collect();
        Self::from_fn(delta.clone(), k, states, vec![0; k], finals, |s, c| {
            let bit = usize::from(delta.boolean_value(s) == Some(true));
            let below = c.iter().fold(0, |acc, &q| add(acc, q as usize));
            add(below, bit) as State
        })
    }

    /// Trees with a root-to-leaf path of `1`-labelled nodes; a variable leaf
    /// ends a path without constraining it.
    pub fn builtin_path(delta: &RankedAlphabet, k: usize) -> Result<Self, AutomatonError> {
        if !delta.is_boolean() {
            return Err(AutomatonError::NotBoolean);
        }
        Self::from_fn(delta.clone(), k, 2, vec![1; k], vec![false, true], |s, c| {
            let one = delta.boolean_value(s) == Some(true);
            State::from(one && (c.is_empty() || c.contains(&1)))
        })
    }

    /// Trees whose root's symbol-labelled children are all labelled `1_n`.
    /// A single node satisfies this vacuously.
    pub fn builtin_forall_next(delta: &RankedAlphabet, k: usize) -> Result<Self, AutomatonError> {
        if !delta.is_boolean() {
            return Err(AutomatonError::NotBoolean);
        }
        // state = 2 * kind + ok, kind: 0 = labelled 0, 1 = labelled 1, 2 = variable
        let var = 2 * 2 + 1;
        let finals = (0..6).map(|q| q % 2 == 1).collect();
        Self::from_fn(delta.clone(), k, 6, vec![var; k], finals, |s, c| {
            let kind = State::from(delta.boolean_value(s) == Some(true));
            let ok = c.iter().all(|&q| q / 2 != 0);
            2 * kind + State::from(ok)
        })
    }

    /// Parses the line format `rank k`, `states n`, `finals ...`, `var j q`,
    /// `trans σ q1 ... qm -> q`. The alphabet is read off the `trans` lines.
    pub fn parse(text: &str) -> Result<Self, AutomatonError> {
        let mut rank = None;
        let mut states = None;
        let mut finals_list: Option<Vec<State>> = None;
        let mut vars: Vec<(usize, State, usize)> = Vec::new();
        let mut names: Vec<(String, usize)> = Vec::new();
        let mut entries: Vec<(usize, Vec<State>, State, usize)> = Vec::new();
        let err = |line: usize, msg: String| AutomatonError::Parse { line, msg };
        let num = |line: usize, s: &str| -> Result<usize, AutomatonError> {
            s.parse()
                .map_err(|_| err(line, format!("expected a number, got `{s}`")))
        };
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[0] {
                "rank" if words.len() == 2 => rank = Some(num(ln, words[1])?),
                "states" if words.len() == 2 => states = Some(num(ln, words[1])?),
                "finals" => {
                    finals_list = Some(
                        words[1..]
                            .iter()
                            .map(|w| num(ln, w).map(|q| q as State))
                            .collect::<Result<_, _>>()?,
                    )
                }
                "var" if words.len() == 3 => vars.push((num(ln, words[1])?, num(ln, words[2])? as State, ln)),
                "trans" if words.len() >= 4 && words[words.len() - 2] == "->" => {
                    let name = words[1].to_string();
                    let kids: Vec<State> = words[2..words.len() - 2]
                        .iter()
                        .map(|w| num(ln, w).map(|q| q as State))
                        .collect::<Result<_, _>>()?;
                    let target = num(ln, words[words.len() - 1])? as State;
                    let sym = match names.iter().position(|(n, _)| *n == name) {
                        Some(p) => {
                            if names[p].1 != kids.len() {
                                return Err(err(ln, format!("symbol `{name}` used with two arities")));
                            }
                            p
                        }
                        None => {
                            names.push((name, kids.len()));
                            names.len() - 1
                        }
                    };
                    entries.push((sym, kids, target, ln));
                }
                _ => return Err(err(ln, format!("unrecognized line `{line}`"))),
            }
        }
        let rank = rank.ok_or_else(|| err(0, "missing `rank` line".into()))?;
        let states = states.ok_or_else(|| err(0, "missing `states` line".into()))?;
        let alphabet = RankedAlphabet::new(names.clone()).map_err(|e| err(0, e.to_string()))?;
        let mut var_states = vec![None; rank];
        for (j, q, ln) in vars {
            if j == 0 || j > rank || var_states[j - 1].is_some() {
                return Err(err(ln, format!("bad or repeated variable v{j}")));
            }
            var_states[j - 1] = Some(q);
        }
        let var_states = var_states
            .into_iter()
            .enumerate()
            .map(|(j, q)| q.ok_or_else(|| err(0, format!("missing `var {}` line", j + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut trans: Vec<Vec<Option<State>>> = names.iter().map(|(_, m)| vec![None; states.pow(*m as u32)]).collect();
        for (sym, kids, target, ln) in entries {
            if kids.iter().any(|&q| q as usize >= states) {
                return Err(err(ln, "state out of range".into()));
            }
            let slot = &mut trans[sym][tuple_index(states, &kids)];
            if slot.is_some() {
                return Err(err(ln, "duplicate transition".into()));
            }
            *slot = Some(target);
        }
        let trans = trans
            .into_iter()
            .map(|t| t.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err(0, "transition table is not complete".into()))?;
        let mut finals = vec![false; states];
        for q in finals_list.unwrap_or_default() {
            *finals
                .get_mut(q as usize)
                .ok_or_else(|| err(0, format!("final state {q} out of range")))? = true;
        }
        Self::new(alphabet, rank, states, var_states, trans, finals)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rank {}", self.rank);
        let _ = writeln!(out, "states {}", self.states);
        out.push_str("finals");
        for q in 0..self.states {
            if self.finals[q] {
                let _ = write!(out, " {q}");
            }
        }
        out.push('\n');
        for (j, q) in self.var_states.iter().enumerate() {
            let _ = writeln!(out, "var {} {}", j + 1, q);
        }
        for s in self.alphabet.symbols() {
            let name = self.alphabet.name(s);
            for_each_tuple(self.states, self.alphabet.arity(s), |c| {
                let _ = write!(out, "trans {name}");
                for q in c {
                    let _ = write!(out, " {q}");
                }
                let _ = writeln!(out, " -> {}", self.delta(s, c));
            });
        }
        out
    }
}

/// A quotient instance: a language `L`, an outer context `u` with gaps `k1`, `k2`,
/// and a tuple `v` of total rank `k-k1-k2`.
#[derive(Clone, Debug)]
pub struct QuotientCase {
    pub language: TreeAutomaton,
    pub u: RankedTree,
    pub k1: usize,
    pub k2: usize,
    pub v: TreeTuple,
}

/// Outcome of an exhaustive comparison: trees checked and textual witnesses.
#[derive(Clone, Debug, Default)]
pub struct QuotientReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

impl QuotientReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl QuotientCase {
    /// Reads `symbols ...`, `rank k`, `automaton builtin exists|path|forall_next|mod p r`
    /// or `automaton <path>`, then `u <tree>`, `k1 n`, `k2 n` and `v <tree> ; <tree> ...`
    /// (an empty `v` line is the empty tuple).
    pub fn parse(text: &str, base: &std::path::Path) -> Result<Self, AutomatonError> {
        let err = |line: usize, msg: String| AutomatonError::Parse { line, msg };
        let mut alphabet = None;
        let mut rank = None;
        let mut language = None;
        let (mut u, mut k1, mut k2, mut v) = (None, 0, 0, None);
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(ln, format!("bad number `{s}`")));
            match head {
                "" => {}
                h if h.starts_with('#') => {}
                "symbols" => alphabet = Some(RankedAlphabet::parse(rest)?),
                "rank" => rank = Some(num(rest)?),
                "automaton" => {
                    let words: Vec<&str> = rest.split_whitespace().collect();
                    let a = if words.first() == Some(&"builtin") {
                        let delta = alphabet
                            .as_ref()
                            .ok_or_else(|| err(ln, "symbols must precede automaton".into()))?;
                        let k = rank.ok_or_else(|| err(ln, "rank must precede automaton".into()))?;
                        match &words[1..] {
                            ["exists"] => TreeAutomaton::builtin_exists(delta, k)?,
                            ["path"] => TreeAutomaton::builtin_path(delta, k)?,
                            ["forall_next"] => TreeAutomaton::builtin_forall_next(delta, k)?,
                            ["mod", p, r] => TreeAutomaton::builtin_mod(delta, k, num(p)?, num(r)?)?,
                            _ => return Err(err(ln, "unknown builtin".into())),
                        }
                    } else {
                        let path = base.join(rest);
                        let content =
                            std::fs::read_to_string(&path).map_err(|e| err(ln, format!("{}: {e}", path.display())))?;
                        let a = TreeAutomaton::parse(&content)?;
                        alphabet = Some(a.alphabet().clone());
                        rank = Some(a.rank());
                        a
                    };
                    language = Some(a);
                }
                "u" | "v" => {
                    let a = language
                        .as_ref()
                        .ok_or_else(|| err(ln, "automaton must precede u and v".into()))?;
                    if head == "u" {
                        u = Some(crate::trees::parse_tree_unchecked(rest, a.alphabet())?.renumbered());
                    } else {
                        let parts = rest
                            .split(';')
                            .map(str::trim)
                            .filter(|p| !p.is_empty())
                            .map(|p| crate::trees::parse_tree_unchecked(p, a.alphabet()).map(RankedTree::renumbered))
                            .collect::<Result<Vec<_>, _>>()?;
                        v = Some(TreeTuple::oplus(parts));
                    }
                }
                "k1" => k1 = num(rest)?,
                "k2" => k2 = num(rest)?,
                _ => return Err(err(ln, format!("unknown directive `{head}`"))),
            }
        }
        Ok(QuotientCase {
            language: language.ok_or_else(|| err(0, "missing automaton".into()))?,
            u: u.ok_or_else(|| err(0, "missing u".into()))?,
            k1,
            k2,
            v: v.unwrap_or_default(),
        })
    }

    /// `u·(k1 ⊕ g ⊕ k2)`.
    pub fn wrap(&self, g: &RankedTree) -> Result<RankedTree, AutomatonError> {
        let args = TreeTuple::concat([
            TreeTuple::units(self.k1),
            TreeTuple::oplus(vec![g.clone()]),
            TreeTuple::units(self.k2),
        ]);
        Ok(self.u.compose(&args)?)
    }

    /// Checks, for every tree with at most `max_nv` symbol nodes of the relevant rank:
    /// the left quotient `u⁻¹L` against `u·(k1 ⊕ f ⊕ k2) ∈ L`; the right quotient of `L`
    /// by `k1 ⊕ v ⊕ k2` against `f·(k1 ⊕ v ⊕ k2) ∈ L`; the right quotient of `u⁻¹L` by
    /// `v` against `f·v ∈ u⁻¹L`; and that plugging `f` into the context `(u,k1,v,k2)`
    /// lands in `L` exactly when `f` lies in the double quotient.
    pub fn check(&self, max_nv: usize) -> Result<QuotientReport, AutomatonError> {
        let l = &self.language;
        let alphabet = l.alphabet();
        let mut report = QuotientReport::default();
        let record = |report: &mut QuotientReport, what: &str, f: &RankedTree, got: bool, want: bool| {
            report.checked += 1;
            if got != want {
                report.mismatches.push(format!(
                    "{what}: {} quotient says {got}, definition says {want}",
                    f.display(alphabet)
                ));
            }
        };
        let left = l.left_quotient(&self.u, self.k1, self.k2)?;
        for f in enumerate_trees(alphabet, left.rank(), max_nv) {
            let want = l.accepts(&self.wrap(&f)?)?;
            record(&mut report, "left", &f, left.accepts(&f)?, want);
        }
        let padded = TreeTuple::concat([TreeTuple::units(self.k1), self.v.clone(), TreeTuple::units(self.k2)]);
        let right = l.right_quotient(&padded)?;
        for f in enumerate_trees(alphabet, padded.width(), max_nv) {
            let want = l.accepts(&f.compose(&padded)?)?;
            record(&mut report, "right", &f, right.accepts(&f)?, want);
        }
        let double = left.right_quotient(&self.v)?;
        for f in enumerate_trees(alphabet, self.v.width(), max_nv) {
            let fv = f.compose(&self.v)?;
            record(&mut report, "double", &f, double.accepts(&f)?, left.accepts(&fv)?);
            let plugged = l.accepts(&self.wrap(&fv)?)?;
            record(&mut report, "context", &f, double.accepts(&f)?, plugged);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{enumerate_trees, parse_tree};

    fn bool_alpha() -> RankedAlphabet {
        RankedAlphabet::boolean([0, 2])
    }

    fn tr(s: &str, k: usize) -> RankedTree {
        parse_tree(s, &bool_alpha(), k).unwrap()
    }

    #[test]
    fn run_max_automaton() {
        let sigma = RankedAlphabet::parse("f/2 a/0 b/0").unwrap();
        let f = sigma.lookup("f").unwrap();
        let b = sigma.lookup("b").unwrap();
        let aut = TreeAutomaton::from_fn(sigma.clone(), 1, 2, vec![0], vec![false, true], |s, c| {
            if s == f {
                c[0].max(c[1])
            } else {
                State::from(s == b)
            }
        })
        .unwrap();
        let fab = RankedTree::node(
            f,
            vec![
                RankedTree::node(sigma.lookup("a").unwrap(), vec![]),
                RankedTree::node(b, vec![]),
            ],
        );
        assert_eq!(aut.run_with(&fab, &|_| 0).unwrap(), 1);
        assert_eq!(aut.run(&RankedTree::unit()).unwrap(), 0);
        assert!(aut.run(&fab).is_err());
    }

    #[test]
    fn builtin_examples() {
        let d = bool_alpha();
        let ex = TreeAutomaton::builtin_exists(&d, 0).unwrap();
        assert!(ex.accepts(&tr("1_2(0_0,0_0)", 0)).unwrap());
        assert!(!ex.accepts(&tr("0_2(0_0,0_0)", 0)).unwrap());
        assert!(ex.accepts(&tr("1_0", 0)).unwrap());
        let ex1 = TreeAutomaton::builtin_exists(&d, 1).unwrap();
        assert!(!ex1.accepts(&RankedTree::unit()).unwrap());

        let m21 = TreeAutomaton::builtin_mod(&d, 0, 2, 1).unwrap();
        assert!(!m21.accepts(&tr("1_2(1_0,0_0)", 0)).unwrap());
        assert!(m21.accepts(&tr("1_0", 0)).unwrap());
        let m20 = TreeAutomaton::builtin_mod(&d, 0, 2, 0).unwrap();
        assert!(m20.accepts(&tr("0_0", 0)).unwrap());
        assert!(TreeAutomaton::builtin_mod(&d, 0, 2, 2).is_err());
        assert!(TreeAutomaton::builtin_mod(&d, 0, 1, 0).is_err());

        let path = TreeAutomaton::builtin_path(&d, 0).unwrap();
        assert!(path.accepts(&tr("1_2(0_0,1_0)", 0)).unwrap());
        assert!(!path.accepts(&tr("0_2(1_0,1_0)", 0)).unwrap());
        assert!(path.accepts(&tr("1_0", 0)).unwrap());

        let next = TreeAutomaton::builtin_forall_next(&d, 0).unwrap();
        assert!(next.accepts(&tr("0_2(1_0,1_0)", 0)).unwrap());
        assert!(!next.accepts(&tr("0_2(1_0,0_0)", 0)).unwrap());
        assert!(next.accepts(&tr("1_0", 0)).unwrap());

        let sigma = RankedAlphabet::parse("f/2 a/0").unwrap();
        assert_eq!(
            TreeAutomaton::builtin_exists(&sigma, 0),
            Err(AutomatonError::NotBoolean)
        );
    }

    #[test]
    fn boolean_operations_match_sets() {
        let d = bool_alpha();
        for k in 0..=1 {
            let a = TreeAutomaton::builtin_mod(&d, k, 2, 1).unwrap();
            let b = TreeAutomaton::builtin_path(&d, k).unwrap();
            let u = a.union(&b).unwrap();
            let i = a.intersect(&b).unwrap();
            let empty = a.intersect(&a.complement()).unwrap();
            for t in enumerate_trees(&d, k, 4) {
                let (x, y) = (a.accepts(&t).unwrap(), b.accepts(&t).unwrap());
                assert_eq!(u.accepts(&t).unwrap(), x || y);
                assert_eq!(i.accepts(&t).unwrap(), x && y);
                assert!(!empty.accepts(&t).unwrap());
                assert_eq!(a.complement().complement().accepts(&t).unwrap(), x);
            }
        }
    }

    #[test]
    fn minimization() {
        let d = bool_alpha();
        let ex = TreeAutomaton::builtin_exists(&d, 0).unwrap();
        let big = ex.intersect(&ex).unwrap().union(&ex).unwrap();
        let m = big.minimize();
        assert_eq!(m.state_count(), 2);
        assert_eq!(m.minimize().state_count(), 2);
        for t in enumerate_trees(&d, 0, 5) {
            assert_eq!(m.accepts(&t).unwrap(), ex.accepts(&t).unwrap());
        }
        let next = TreeAutomaton::builtin_forall_next(&d, 1).unwrap();
        let mn = next.minimize();
        assert!(mn.state_count() <= next.state_count());
        for t in enumerate_trees(&d, 1, 4) {
            assert_eq!(mn.accepts(&t).unwrap(), next.accepts(&t).unwrap());
        }
    }

    #[test]
    fn quotient_examples() {
        let d = bool_alpha();
        let ex = TreeAutomaton::builtin_exists(&d, 0).unwrap();
        let all = ex.left_quotient(&tr("0_2(v1,1_0)", 1), 0, 0).unwrap();
        let same = ex.left_quotient(&tr("0_2(v1,0_0)", 1), 0, 0).unwrap();
        let id = ex.left_quotient(&RankedTree::unit(), 0, 0).unwrap();
        for t in enumerate_trees(&d, 0, 5) {
            assert!(all.accepts(&t).unwrap());
            assert_eq!(same.accepts(&t).unwrap(), ex.accepts(&t).unwrap());
            assert_eq!(id.accepts(&t).unwrap(), ex.accepts(&t).unwrap());
        }
        let right = ex.right_quotient(&TreeTuple::oplus(vec![tr("1_0", 0)])).unwrap();
        assert_eq!(right.rank(), 1);
        for t in enumerate_trees(&d, 1, 4) {
            assert!(right.accepts(&t).unwrap());
        }
        assert!(ex.left_quotient(&tr("0_2(v1,v2)", 2), 0, 0).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let d = bool_alpha();
        let next = TreeAutomaton::builtin_forall_next(&d, 2).unwrap();
        let text = next.to_text();
        let back = TreeAutomaton::parse(&text).unwrap();
        assert_eq!(back, next);
        assert_eq!(back.to_text(), text);
        assert!(TreeAutomaton::parse("rank 0\nstates 1\ntrans a -> 3\n").is_err());
        assert!(TreeAutomaton::parse("rank 0\nstates 2\ntrans f 0 0 -> 1\n").is_err());
    }
}
