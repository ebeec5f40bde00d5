//! Contexts, L-contexts and the syntactic congruence of a rank-k tree language.

use std::collections::HashSet;

use crate::automata::TreeAutomaton;
use crate::preclone::{
    quotient, transformation_pgpair, CongruenceClasses, Elem, FinitaryPreclone, Morphism, PgPair, PrecloneError,
};
use crate::trees::RankedTree;

/// An `n`-ary context `(u, k1, v, k2)` in sort `k`: `u` has rank `k1+1+k2`,
/// `v` has width `n` and total rank `k-k1-k2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    pub u: Elem,
    pub k1: usize,
    pub v: Vec<Elem>,
    pub k2: usize,
}

impl Context {
    /// The unit context `(𝟏, 0, 𝐤, 0)` for `n = k`.
    pub fn identity(s: &FinitaryPreclone, k: usize) -> Self {
        Context {
            u: s.unit(),
            k1: 0,
            v: s.units(k),
            k2: 0,
        }
    }

    pub fn display(&self) -> String {
        let v: Vec<String> = self.v.iter().map(Elem::to_string).collect();
        format!("({}, {}, [{}], {})", self.u, self.k1, v.join(" "), self.k2)
    }
}

/// All contexts of `I_{k,n}` over the sorts of `s`, ordered by `(k1, k2, u, v)`.
pub fn enumerate_contexts(s: &FinitaryPreclone, k: usize, n: usize) -> Vec<Context> {
    let mut out = Vec::new();
    for k1 in 0..=k {
        for k2 in 0..=(k - k1) {
            let rest = k - k1 - k2;
            if n == 0 && rest != 0 {
                continue;
            }
            let vs = s.tuples(n, rest);
            for u in s.elements(k1 + 1 + k2) {
                for v in &vs {
                    out.push(Context {
                        u,
                        k1,
                        v: v.clone(),
                        k2,
                    });
                }
            }
        }
    }
    out
}

/// `u · (𝐤1 ⊕ f·v ⊕ 𝐤2)`, the element of sort `k` obtained by plugging `f` into `c`.
pub fn plug(s: &FinitaryPreclone, f: Elem, c: &Context) -> Result<Elem, PrecloneError> {
    if c.v.len() != f.rank() {
        return Err(PrecloneError::SortMismatch(format!(
            "context of arity {} applied to an element of rank {}",
            c.v.len(),
            f.rank()
        )));
    }
    let x = s.compose(f, &c.v)?;
    s.compose_padded(c.u, c.k1, x, c.k2)
}

/// Whether `c` is an L-context of `f`, where L is given by its image `p` in sort `k`.
pub fn is_l_context(s: &FinitaryPreclone, p: &HashSet<Elem>, f: Elem, c: &Context) -> Result<bool, PrecloneError> {
    Ok(p.contains(&plug(s, f, c)?))
}

/// Groups elements of each sort by their set of L-contexts; the result is
/// checked to be a congruence.
pub fn syntactic_congruence(s: &FinitaryPreclone, p: &[Elem], k: usize) -> Result<CongruenceClasses, PrecloneError> {
    syntactic_congruence_multi(s, &[p.to_vec()], k)
}

/// The intersection of the syntactic congruences of several languages of rank `k`,
/// each given by its image in sort `k`.
pub fn syntactic_congruence_multi(
    s: &FinitaryPreclone,
    sets: &[Vec<Elem>],
    k: usize,
) -> Result<CongruenceClasses, PrecloneError> {
    let accepted: Vec<HashSet<Elem>> = sets.iter().map(|p| p.iter().copied().collect()).collect();
    let mut keys = Vec::with_capacity(s.sort_count());
    for n in 0..s.sort_count() {
        let contexts = enumerate_contexts(s, k, n);
        let mut sort_keys = Vec::with_capacity(s.sort_size(n));
        for f in s.elements(n) {
            let mut bits = Vec::with_capacity(contexts.len() * accepted.len());
            for c in &contexts {
                let h = plug(s, f, c)?;
                bits.extend(accepted.iter().map(|p| p.contains(&h)));
            }
            sort_keys.push(bits);
        }
        keys.push(sort_keys);
    }
    let classes = CongruenceClasses::from_keys(keys);
    quotient(s, &classes)?;
    Ok(classes)
}

/// The syntactic pg-pair of a language together with its recognizing morphism.
#[derive(Clone, Debug)]
pub struct SyntacticPgPair {
    pub pgpair: PgPair,
    pub morphism: Morphism,
    /// Classes of sort `k` contained in the language.
    pub accepting: Vec<Elem>,
    pub classes: CongruenceClasses,
    pub rank: usize,
}

impl SyntacticPgPair {
    pub fn recognizes(&self, t: &RankedTree) -> Result<bool, PrecloneError> {
        if t.rank() != self.rank {
            return Ok(false);
        }
        Ok(self.accepting.contains(&self.morphism.eval(t)?))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.pgpair.preclone.sort_sizes()
    }
}

/// Minimize, take the transformation preclone, and divide by the syntactic congruence.
pub fn syntactic_pgpair(a: &TreeAutomaton, trunc: usize, budget: usize) -> Result<SyntacticPgPair, PrecloneError> {
    if trunc < a.alphabet().max_arity() {
        return Err(PrecloneError::Context(format!(
            "truncation {trunc} is below the maximal arity {}",
            a.alphabet().max_arity()
        )));
    }
    let multi = syntactic_pgpair_multi(a, &[a.finals().to_vec()], trunc, budget)?;
    let SyntacticMulti {
        pgpair,
        morphism,
        mut accepting,
        classes,
        rank,
    } = multi;
    Ok(SyntacticPgPair {
        pgpair,
        morphism,
        accepting: accepting.pop().unwrap_or_default(),
        classes,
        rank,
    })
}

/// A pg-pair recognizing several languages of the same rank at once.
#[derive(Clone, Debug)]
pub struct SyntacticMulti {
    pub pgpair: PgPair,
    pub morphism: Morphism,
    /// Per language, the classes of sort `k` it contains.
    pub accepting: Vec<Vec<Elem>>,
    pub classes: CongruenceClasses,
    pub rank: usize,
}

/// The quotient of the transformation pg-pair of `a` by the intersection of the
/// syntactic congruences of the languages `{t : run(t) ∈ sets[i]}`. Letters of
/// arity above `trunc` stay as generators in their own sorts.
pub fn syntactic_pgpair_multi(
    a: &TreeAutomaton,
    sets: &[Vec<bool>],
    trunc: usize,
    budget: usize,
) -> Result<SyntacticMulti, PrecloneError> {
    let k = a.rank();
    if trunc < k + 1 {
        return Err(PrecloneError::Context(format!(
            "truncation {trunc} is below rank+1 = {}",
            k + 1
        )));
    }
    let colors: Vec<Vec<bool>> = (0..a.state_count())
        .map(|q| sets.iter().map(|s| s[q]).collect())
        .collect();
    let (minimal, map) = a.merge_by_colors(&colors);
    let mut merged = vec![vec![false; sets.len()]; minimal.state_count()];
    for (q, m) in map.iter().enumerate() {
        if let Some(m) = m {
            merged[*m as usize] = colors[q].clone();
        }
    }
    let tp = transformation_pgpair(&minimal, trunc, budget)?;
    let s = &tp.pgpair.preclone;
    let images: Vec<Vec<Elem>> = (0..sets.len())
        .map(|i| {
            s.elements(k)
                .filter(|&e| merged[tp.state_on_vars(e) as usize][i])
                .collect()
        })
        .collect();
    let classes = syntactic_congruence_multi(s, &images, k)?;
    let (q, projection) = quotient(s, &classes)?;
    let mut gens = Vec::new();
    for &g in &tp.pgpair.generators {
        let c = projection.apply(g);
        if !gens.contains(&c) {
            gens.push(c);
        }
    }
    let letters = tp.morphism.images.iter().map(|&e| projection.apply(e)).collect();
    let morphism = Morphism::new(q.clone(), a.alphabet(), letters)?;
    let accepting = images
        .iter()
        .map(|p| {
            let mut acc: Vec<Elem> = p.iter().map(|&e| projection.apply(e)).collect();
            acc.sort();
            acc.dedup();
            acc
        })
        .collect();
    Ok(SyntacticMulti {
        pgpair: PgPair {
            preclone: q,
            generators: gens,
        },
        morphism,
        accepting,
        classes,
        rank: k,
    })
}
