//! Block products `S □_k T` of truncated preclones.
//!
//! Elements are pairs `(F, f)` where `F` is a table from the `n`-ary contexts
//! of `T` in sort `k` (in [`enumerate_contexts`] order) to `S_n`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::preclone::{
    generate, rank_compositions, share, Algebra, Closure, Elem, ElementMap, FinitaryPreclone, Morphism, PgPair,
    PrecloneError, PrecloneImpl,
};
use crate::syntactic::{enumerate_contexts, Context};
use crate::trees::{Label, RankedAlphabet, RankedTree, Sym};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockElement {
    pub rank: usize,
    /// `table[j]` is the index in `S_rank` of `F` at the `j`-th context.
    pub table: Vec<u32>,
    pub second: Elem,
}

impl BlockElement {
    pub fn first_at(&self, j: usize) -> Elem {
        Elem::new(self.rank, self.table[j] as usize)
    }
}

/// The full block product `S □_k T` as an ambient algebra.
#[derive(Clone)]
pub struct BlockAlgebra {
    s: FinitaryPreclone,
    t: FinitaryPreclone,
    k: usize,
    trunc: usize,
    contexts: Vec<Vec<Context>>,
    index: Vec<HashMap<Context, usize>>,
}

impl std::fmt::Debug for BlockAlgebra {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let counts: Vec<usize> = self.contexts.iter().map(Vec::len).collect();
        write!(
            f,
            "BlockAlgebra(k {}, trunc {}, contexts {:?})",
            self.k, self.trunc, counts
        )
    }
}

impl BlockAlgebra {
    /// Requires `T` to have truncation at least `k+1` so every context shape is present.
    pub fn new(s: &FinitaryPreclone, t: &FinitaryPreclone, k: usize) -> Result<Self, PrecloneError> {
        Self::with_truncation(s, t, k, s.truncation().min(t.truncation()))
    }

    /// Like [`BlockAlgebra::new`] but keeping only ranks up to `trunc`. Contexts are
    /// still built for every sort of the factors so that generators of higher
    /// rank can act as heads.
    pub fn with_truncation(
        s: &FinitaryPreclone,
        t: &FinitaryPreclone,
        k: usize,
        trunc: usize,
    ) -> Result<Self, PrecloneError> {
        if t.truncation() < k + 1 {
            return Err(PrecloneError::Context(format!(
                "right factor truncation {} is below k+1 = {}",
                t.truncation(),
                k + 1
            )));
        }
        if trunc > s.truncation().min(t.truncation()) {
            return Err(PrecloneError::TruncationMismatch(
                trunc,
                s.truncation().min(t.truncation()),
            ));
        }
        let top = trunc
            .max(s.sort_count().saturating_sub(1))
            .max(t.sort_count().saturating_sub(1));
        let contexts: Vec<Vec<Context>> = (0..=top).map(|n| enumerate_contexts(t, k, n)).collect();
        let index = contexts
            .iter()
            .map(|cs| cs.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect())
            .collect();
        Ok(BlockAlgebra {
            s: s.clone(),
            t: t.clone(),
            k,
            trunc,
            contexts,
            index,
        })
    }

    pub fn left(&self) -> &FinitaryPreclone {
        &self.s
    }

    pub fn right(&self) -> &FinitaryPreclone {
        &self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn truncation(&self) -> usize {
        self.trunc
    }

    pub fn contexts(&self, n: usize) -> &[Context] {
        self.contexts.get(n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn context_index(&self, n: usize, c: &Context) -> Result<usize, PrecloneError> {
        self.index
            .get(n)
            .and_then(|m| m.get(c))
            .copied()
            .ok_or_else(|| PrecloneError::Context(format!("{} is not a context in I_{{{},{n}}}", c.display(), self.k)))
    }

    /// Builds `(F, f)` from a function on contexts.
    pub fn element(
        &self,
        second: Elem,
        mut first: impl FnMut(&Context) -> Result<Elem, PrecloneError>,
    ) -> Result<BlockElement, PrecloneError> {
        let n = second.rank();
        let mut table = Vec::with_capacity(self.contexts(n).len());
        for c in self.contexts(n) {
            let e = first(c)?;
            if e.rank() != n || !self.s.contains(e) {
                return Err(PrecloneError::SortMismatch(format!("{e} is not in S_{n}")));
            }
            table.push(e.idx);
        }
        Ok(BlockElement { rank: n, table, second })
    }

    /// A uniformly random element of rank `n` of the full product.
    pub fn random_element(&self, n: usize, rng: &mut impl Rng) -> BlockElement {
        let sn = self.s.sort_size(n) as u32;
        BlockElement {
            rank: n,
            table: self.contexts(n).iter().map(|_| rng.gen_range(0..sn)).collect(),
            second: Elem::new(n, rng.gen_range(0..self.t.sort_size(n))),
        }
    }

    /// A random tuple of the given width whose ranks sum to at most the truncation.
    pub fn random_tuple(&self, width: usize, rng: &mut impl Rng) -> Vec<BlockElement> {
        let shapes: Vec<Vec<usize>> = (0..=self.trunc)
            .flat_map(|m| rank_compositions(width, m, self.trunc))
            .filter(|ranks| {
                ranks
                    .iter()
                    .all(|&r| self.s.sort_size(r) > 0 && self.t.sort_size(r) > 0)
            })
            .collect();
        let ranks = &shapes[rng.gen_range(0..shapes.len())];
        ranks.iter().map(|&r| self.random_element(r, rng)).collect()
    }

    pub fn apply_first(&self, x: &BlockElement, c: &Context) -> Result<Elem, PrecloneError> {
        Ok(x.first_at(self.context_index(x.rank, c)?))
    }

    /// Number of elements of rank `n` of the full product, if it fits in a `u64`.
    pub fn carrier_size(&self, n: usize) -> Option<u64> {
        let base = self.s.sort_size(n) as u64;
        let mut size = self.t.sort_size(n) as u64;
        for _ in self.contexts(n) {
            size = size.checked_mul(base)?;
        }
        Some(size)
    }

    /// Decodes the `idx`-th element of rank `n` (second component least significant).
    pub fn decode(&self, n: usize, mut idx: u64) -> BlockElement {
        let tn = self.t.sort_size(n) as u64;
        let sn = self.s.sort_size(n) as u64;
        let second = Elem::new(n, (idx % tn) as usize);
        idx /= tn;
        let mut table = vec![0u32; self.contexts(n).len()];
        for cell in table.iter_mut().rev() {
            *cell = (idx % sn) as u32;
            idx /= sn;
        }
        BlockElement { rank: n, table, second }
    }

    pub fn encode(&self, x: &BlockElement) -> u64 {
        let sn = self.s.sort_size(x.rank) as u64;
        let tn = self.t.sort_size(x.rank) as u64;
        x.table.iter().fold(0u64, |acc, &c| acc * sn + c as u64) * tn + x.second.idx as u64
    }
}

/// `(F,f) · ((G_1,g_1) ⊕ ... ⊕ (G_n,g_n))`.
pub fn bp_compose(alg: &BlockAlgebra, f: &BlockElement, g: &[BlockElement]) -> Result<BlockElement, PrecloneError> {
    let n = f.rank;
    if g.len() != n {
        return Err(PrecloneError::SortMismatch(format!(
            "rank {n} element applied to {} arguments",
            g.len()
        )));
    }
    let m: usize = g.iter().map(|x| x.rank).sum();
    if m > alg.trunc {
        return Err(PrecloneError::RankOverflow {
            rank: m,
            trunc: alg.trunc,
        });
    }
    let t = &alg.t;
    let gs: Vec<Elem> = g.iter().map(|x| x.second).collect();
    let second = t.compose(f.second, &gs)?;
    let mut table = Vec::with_capacity(alg.contexts(m).len());
    for ctx in alg.contexts(m) {
        // split v into blocks of widths m_i
        let mut blocks = Vec::with_capacity(n);
        let mut at = 0;
        for x in g {
            blocks.push(&ctx.v[at..at + x.rank]);
            at += x.rank;
        }
        let ells: Vec<usize> = blocks.iter().map(|b| b.iter().map(|e| e.rank()).sum()).collect();
        let w = blocks
            .iter()
            .zip(&gs)
            .map(|(b, &gi)| t.compose(gi, b))
            .collect::<Result<Vec<Elem>, _>>()?;
        let outer = alg.apply_first(
            f,
            &Context {
                u: ctx.u,
                k1: ctx.k1,
                v: w.clone(),
                k2: ctx.k2,
            },
        )?;
        let mut args = Vec::with_capacity(n);
        for i in 0..n {
            let p1 = ctx.k1 + ells[..i].iter().sum::<usize>();
            let p2 = ells[i + 1..].iter().sum::<usize>() + ctx.k2;
            let mut holes = w.clone();
            holes[i] = t.unit();
            let describe = |e: PrecloneError| {
                PrecloneError::Context(format!(
                    "context {} argument {}: p1 = {p1}, p2 = {p2}, l = {}: {e}",
                    ctx.display(),
                    i + 1,
                    ells[i]
                ))
            };
            let inner = t.compose(f.second, &holes).map_err(describe)?;
            let c = t.compose_padded(ctx.u, ctx.k1, inner, ctx.k2).map_err(describe)?;
            debug_assert_eq!(c.rank(), p1 + 1 + p2);
            let ci = Context {
                u: c,
                k1: p1,
                v: blocks[i].to_vec(),
                k2: p2,
            };
            args.push(alg.apply_first(&g[i], &ci).map_err(describe)?);
        }
        table.push(alg.s.compose(outer, &args)?.idx);
    }
    Ok(BlockElement { rank: m, table, second })
}

impl Algebra for BlockAlgebra {
    type Value = BlockElement;

    fn rank(&self, v: &BlockElement) -> usize {
        v.rank
    }

    fn unit(&self) -> BlockElement {
        BlockElement {
            rank: 1,
            table: vec![self.s.unit().idx; self.contexts(1).len()],
            second: self.t.unit(),
        }
    }

    fn compose(&self, f: &BlockElement, g: &[BlockElement]) -> Result<BlockElement, PrecloneError> {
        bp_compose(self, f, g)
    }

    fn describe(&self, v: &BlockElement) -> String {
        let cells: Vec<String> = v.table.iter().map(|c| c.to_string()).collect();
        format!("F[{}]/{}", cells.join("."), self.t.describe(v.second))
    }
}

/// Which generators to close under composition.
#[derive(Clone, Debug)]
pub enum GeneratorSelection {
    /// All pairs `(F, b)` with `F` valued in the generators of `S` and `b` a generator of `T`.
    All,
    Subset(Vec<BlockElement>),
}

/// A generated block product with typed access to its elements.
pub struct BlockProduct {
    pub closure: Arc<Closure<BlockAlgebra>>,
    pub pgpair: PgPair,
}

impl BlockProduct {
    pub fn algebra(&self) -> &BlockAlgebra {
        self.closure.algebra()
    }

    pub fn value(&self, e: Elem) -> &BlockElement {
        self.closure.value(e)
    }
}

/// The pg-pair `(S,A) □_k (T,B)` restricted to the selected generators.
pub fn block_product_pg(
    s: &PgPair,
    t: &PgPair,
    k: usize,
    selection: GeneratorSelection,
    budget: usize,
) -> Result<BlockProduct, PrecloneError> {
    let trunc = s.preclone.truncation().min(t.preclone.truncation());
    block_product_pg_truncated(s, t, k, selection, trunc, budget)
}

/// [`block_product_pg`] with the carrier kept only up to rank `trunc`.
pub fn block_product_pg_truncated(
    s: &PgPair,
    t: &PgPair,
    k: usize,
    selection: GeneratorSelection,
    trunc: usize,
    budget: usize,
) -> Result<BlockProduct, PrecloneError> {
    let alg = BlockAlgebra::with_truncation(&s.preclone, &t.preclone, k, trunc)?;
    let gens = match selection {
        GeneratorSelection::Subset(list) => list,
        GeneratorSelection::All => all_generators(&alg, s, t, budget)?,
    };
    for g in &gens {
        if g.rank >= alg.contexts.len() || g.table.len() != alg.contexts(g.rank).len() || !alg.t.contains(g.second) {
            return Err(PrecloneError::SortMismatch(format!(
                "malformed generator {}",
                alg.describe(g)
            )));
        }
    }
    let c = generate(alg, gens, trunc, budget)?;
    let generators = c.generators().to_vec();
    let (closure, pre) = share(c);
    Ok(BlockProduct {
        closure,
        pgpair: PgPair {
            preclone: pre,
            generators,
        },
    })
}

/// Every pair `(F, b)` with `b ∈ B_n` and `F(c) ∈ A_n` for all contexts `c`.
pub fn all_generators(
    alg: &BlockAlgebra,
    s: &PgPair,
    t: &PgPair,
    budget: usize,
) -> Result<Vec<BlockElement>, PrecloneError> {
    let mut out = Vec::new();
    for &b in &t.generators {
        let n = b.rank();
        if n >= alg.contexts.len() {
            continue;
        }
        let a = s.generators_of_rank(n);
        let width = alg.contexts(n).len();
        let count = (a.len() as u128).checked_pow(width as u32).unwrap_or(u128::MAX);
        if count.saturating_add(out.len() as u128) > budget as u128 {
            return Err(PrecloneError::BudgetExceeded(budget));
        }
        let mut choice = vec![0usize; width];
        loop {
            if width > 0 && a.is_empty() {
                break;
            }
            out.push(BlockElement {
                rank: n,
                table: choice.iter().map(|&i| a[i].idx).collect(),
                second: b,
            });
            let mut i = width;
            while i > 0 {
                i -= 1;
                choice[i] += 1;
                if choice[i] < a.len() {
                    break;
                }
                choice[i] = 0;
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if width == 0 || i == usize::MAX {
                break;
            }
        }
    }
    Ok(out)
}

/// The projection `(F, f) ↦ f`.
pub fn second_projection(bp: &BlockProduct) -> ElementMap {
    let pre = &bp.pgpair.preclone;
    ElementMap {
        images: (0..pre.sort_count())
            .map(|n| pre.elements(n).map(|e| bp.value(e).second).collect())
            .collect(),
    }
}

/// Counts and witnesses of an identity check.
#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations.push(what());
        }
    }
}

/// Unit laws `1·x = x` and `x·n = x` on `generators`, and associativity on
/// `samples` random composable triples of the full product drawn from `seed`.
pub fn check_block_axioms(
    alg: &BlockAlgebra,
    generators: &[BlockElement],
    samples: usize,
    seed: u64,
) -> Result<CheckReport, PrecloneError> {
    let mut report = CheckReport::default();
    let unit = alg.unit();
    for x in generators {
        let left = bp_compose(alg, &unit, std::slice::from_ref(x))?;
        report.record(left == *x, || format!("1·x != x for {}", alg.describe(x)));
        let right = bp_compose(alg, x, &vec![unit.clone(); x.rank])?;
        report.record(right == *x, || format!("x·n != x for {}", alg.describe(x)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads: Vec<usize> = (0..=alg.trunc)
        .filter(|&n| alg.s.sort_size(n) > 0 && alg.t.sort_size(n) > 0)
        .collect();
    for _ in 0..samples {
        let n = heads[rng.gen_range(0..heads.len())];
        let f = alg.random_element(n, &mut rng);
        let g = alg.random_tuple(n, &mut rng);
        let m: usize = g.iter().map(|x| x.rank).sum();
        let h = alg.random_tuple(m, &mut rng);
        let lhs = bp_compose(alg, &bp_compose(alg, &f, &g)?, &h)?;
        let mut inner = Vec::with_capacity(g.len());
        let mut at = 0;
        for gi in &g {
            inner.push(bp_compose(alg, gi, &h[at..at + gi.rank])?);
            at += gi.rank;
        }
        let rhs = bp_compose(alg, &f, &inner)?;
        report.record(lhs == rhs, || {
            format!(
                "associativity fails for f = {}, ranks {:?} / {:?}",
                alg.describe(&f),
                g.iter().map(|x| x.rank).collect::<Vec<_>>(),
                h.iter().map(|x| x.rank).collect::<Vec<_>>()
            )
        });
    }
    Ok(report)
}

/// `S □_k^{T'} T`: elements of `S □_k T'` whose second component lies in the
/// sub-preclone `T`, given with its embedding into `T'`.
pub struct RestrictedBlockProduct {
    pub ambient: BlockAlgebra,
    pub sub: FinitaryPreclone,
    pub embed: ElementMap,
    /// Second components allowed per rank, as elements of `T'`.
    allowed: Vec<Vec<Elem>>,
}

impl RestrictedBlockProduct {
    pub fn new(
        s: &FinitaryPreclone,
        sub: &FinitaryPreclone,
        ambient: &FinitaryPreclone,
        embed: ElementMap,
        k: usize,
    ) -> Result<Self, PrecloneError> {
        let alg = BlockAlgebra::new(s, ambient, k)?;
        let allowed = (0..=alg.trunc)
            .map(|n| sub.elements(n).map(|e| embed.apply(e)).collect())
            .collect();
        Ok(RestrictedBlockProduct {
            ambient: alg,
            sub: sub.clone(),
            embed,
            allowed,
        })
    }

    /// `|S_n|^{|I'_{k,n}|} · |T_n|`, if it fits.
    pub fn carrier_size(&self, n: usize) -> Option<u64> {
        let sn = self.ambient.s.sort_size(n) as u64;
        let mut size = self.sub.sort_size(n) as u64;
        for _ in self.ambient.contexts(n) {
            size = size.checked_mul(sn)?;
        }
        Some(size)
    }

    pub fn contains(&self, x: &BlockElement) -> bool {
        self.allowed.get(x.rank).is_some_and(|a| a.contains(&x.second))
            && x.table.len() == self.ambient.contexts(x.rank).len()
    }

    /// The `idx`-th element of rank `n`.
    pub fn element(&self, n: usize, idx: u64) -> BlockElement {
        let tn = self.sub.sort_size(n) as u64;
        let mut x = self.ambient.decode(n, 0);
        let sn = self.ambient.s.sort_size(n) as u64;
        x.second = self.allowed[n][(idx % tn) as usize];
        let mut rest = idx / tn;
        for cell in x.table.iter_mut().rev() {
            *cell = (rest % sn) as u32;
            rest /= sn;
        }
        x
    }

    pub fn compose(&self, f: &BlockElement, g: &[BlockElement]) -> Result<BlockElement, PrecloneError> {
        bp_compose(&self.ambient, f, g)
    }

    /// The whole carrier as a preclone, when every sort up to the truncation fits the budget.
    pub fn materialize(self: &Arc<Self>, budget: usize) -> Result<FinitaryPreclone, PrecloneError> {
        let mut sizes = Vec::new();
        let mut total = 0u64;
        for n in 0..=self.ambient.trunc {
            let size = self.carrier_size(n).ok_or(PrecloneError::BudgetExceeded(budget))?;
            total = total.saturating_add(size);
            if total > budget as u64 {
                return Err(PrecloneError::BudgetExceeded(budget));
            }
            sizes.push(size as usize);
        }
        Ok(FinitaryPreclone::from_impl(RestrictedCarrier {
            product: self.clone(),
            sizes,
        }))
    }
}

struct RestrictedCarrier {
    product: Arc<RestrictedBlockProduct>,
    sizes: Vec<usize>,
}

impl RestrictedCarrier {
    fn index_of(&self, x: &BlockElement) -> usize {
        let p = &self.product;
        let sn = p.ambient.s.sort_size(x.rank) as u64;
        let tn = p.sub.sort_size(x.rank) as u64;
        let second = p.allowed[x.rank]
            .iter()
            .position(|&e| e == x.second)
            .expect("closed carrier") as u64;
        (x.table.iter().fold(0u64, |acc, &c| acc * sn + c as u64) * tn + second) as usize
    }
}

impl PrecloneImpl for RestrictedCarrier {
    fn truncation(&self) -> usize {
        self.product.ambient.trunc
    }

    fn sort_count(&self) -> usize {
        self.sizes.len()
    }

    fn sort_size(&self, rank: usize) -> usize {
        self.sizes[rank]
    }

    fn unit(&self) -> Elem {
        Elem::new(1, self.index_of(&self.product.ambient.unit()))
    }

    fn compose(&self, f: Elem, g: &[Elem]) -> Result<Elem, PrecloneError> {
        let p = &self.product;
        let fv = p.element(f.rank(), f.idx as u64);
        let gv: Vec<BlockElement> = g.iter().map(|e| p.element(e.rank(), e.idx as u64)).collect();
        let h = p.compose(&fv, &gv)?;
        Ok(Elem::new(h.rank, self.index_of(&h)))
    }

    fn describe(&self, e: Elem) -> String {
        let p = &self.product;
        p.ambient.describe(&p.element(e.rank(), e.idx as u64))
    }
}

/// The map `α^C : S □_k^{T'} T → S □_n T` for a context `C ∈ I'_{k,n}`.
pub struct AlphaC<'a> {
    pub source: &'a RestrictedBlockProduct,
    pub target: BlockAlgebra,
    pub context: Context,
}

/// Builds `α^C`; the target is `S □_n T`.
pub fn alpha_c(source: &RestrictedBlockProduct, c: Context) -> Result<AlphaC<'_>, PrecloneError> {
    let n = c.v.len();
    source.ambient.context_index(n, &c)?;
    let target = BlockAlgebra::new(&source.ambient.s, &source.sub, n)?;
    Ok(AlphaC {
        source,
        target,
        context: c,
    })
}

impl AlphaC<'_> {
    /// `(F, f) ↦ (F^C, f)`.
    pub fn apply(&self, x: &BlockElement) -> Result<BlockElement, PrecloneError> {
        let tp = &self.source.ambient.t;
        let embed = &self.source.embed;
        let c = &self.context;
        let n = c.v.len();
        let second = self
            .source
            .sub
            .elements(x.rank)
            .find(|&e| embed.apply(e) == x.second)
            .ok_or_else(|| PrecloneError::SortMismatch("second component outside the sub-preclone".into()))?;
        self.target.element(second, |d| {
            let (p1, p2) = (d.k1, d.k2);
            let v1 = &c.v[..p1];
            let mid = &c.v[p1..n - p2];
            let v2 = &c.v[n - p2..];
            let q1: usize = v1.iter().map(|e| e.rank()).sum();
            let q2: usize = v2.iter().map(|e| e.rank()).sum();
            let mut holes = v1.to_vec();
            holes.push(tp.unit());
            holes.extend_from_slice(v2);
            let inner = tp.compose(embed.apply(d.u), &holes)?;
            let u = tp.compose_padded(c.u, c.k1, inner, c.k2)?;
            let s: Vec<Elem> = d.v.iter().map(|&e| embed.apply(e)).collect();
            let sv = tp.compose_tuple(&s, mid)?;
            let ctx = Context {
                u,
                k1: c.k1 + q1,
                v: sv,
                k2: q2 + c.k2,
            };
            self.source.ambient.apply_first(x, &ctx)
        })
    }
}

impl RestrictedBlockProduct {
    /// A random element of rank `n` with its second component in the sub-preclone.
    pub fn random_element(&self, n: usize, rng: &mut impl Rng) -> BlockElement {
        let mut x = self.ambient.random_element(n, rng);
        x.second = self.allowed[n][rng.gen_range(0..self.allowed[n].len())];
        x
    }
}

/// For every context `C ∈ I'_{k,n}` with `n+1` within the truncation of `T`:
/// `F^C(1,0,n,0) = F(C)` for each element of `elements` of rank `n`; then
/// `α^C(x·y) = α^C(x)·α^C(y)` on `composites` random composites drawn from `seed`.
pub fn check_alpha_c_lemma(
    source: &RestrictedBlockProduct,
    elements: &[BlockElement],
    composites: usize,
    seed: u64,
) -> Result<CheckReport, PrecloneError> {
    let mut report = CheckReport::default();
    let amb = &source.ambient;
    let top = source.sub.truncation().saturating_sub(1).min(amb.trunc);
    let mut maps = Vec::new();
    for n in 0..=top {
        for c in amb.contexts(n) {
            maps.push(alpha_c(source, c.clone())?);
        }
    }
    for a in &maps {
        let n = a.context.v.len();
        let id = Context::identity(&source.sub, n);
        for x in elements.iter().filter(|x| x.rank == n) {
            let lhs = a.target.apply_first(&a.apply(x)?, &id)?;
            let rhs = amb.apply_first(x, &a.context)?;
            report.record(lhs == rhs, || {
                format!(
                    "F^C(1,0,n,0) = {lhs} but F(C) = {rhs} for C = {}, x = {}",
                    a.context.display(),
                    amb.describe(x)
                )
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..composites {
        let a = &maps[rng.gen_range(0..maps.len())];
        let m = rng.gen_range(0..=amb.trunc);
        let x = source.random_element(m, &mut rng);
        let shape = amb.random_tuple(m, &mut rng);
        let ys: Vec<BlockElement> = shape.iter().map(|y| source.random_element(y.rank, &mut rng)).collect();
        let lhs = a.apply(&bp_compose(amb, &x, &ys)?)?;
        let images = ys.iter().map(|y| a.apply(y)).collect::<Result<Vec<_>, _>>()?;
        let rhs = bp_compose(&a.target, &a.apply(&x)?, &images)?;
        report.record(lhs == rhs, || {
            format!(
                "α^C is not multiplicative for C = {} at x = {}",
                a.context.display(),
                amb.describe(&x)
            )
        });
    }
    Ok(report)
}

/// A generator map `σ ↦ (F_σ, b_σ)` into a block product.
pub struct GammaMap {
    pub algebra: BlockAlgebra,
    pub images: Vec<BlockElement>,
}

impl GammaMap {
    /// `τ(σ) = b_σ`.
    pub fn tau(&self, alphabet: &RankedAlphabet) -> Result<Morphism, PrecloneError> {
        Morphism::new(
            self.algebra.t.clone(),
            alphabet,
            self.images.iter().map(|x| x.second).collect(),
        )
    }

    /// Homomorphic evaluation in the block algebra.
    pub fn eval(&self, t: &RankedTree) -> Result<BlockElement, PrecloneError> {
        match t.label() {
            Label::Var(_) => Ok(self.algebra.unit()),
            Label::Sym(s) => {
                let kids = t
                    .children()
                    .iter()
                    .map(|c| self.eval(c))
                    .collect::<Result<Vec<_>, _>>()?;
                bp_compose(&self.algebra, &self.images[s.index()], &kids)
            }
        }
    }
}

/// The alphabet of `S` elements of ranks up to `max_rank`, named `r.i`, and the
/// morphism interpreting each letter as itself.
pub fn element_alphabet(s: &FinitaryPreclone, max_rank: usize) -> Result<(RankedAlphabet, Morphism), PrecloneError> {
    let mut names = Vec::new();
    let mut images = Vec::new();
    for n in 0..=max_rank.min(s.sort_count().saturating_sub(1)) {
        for e in s.elements(n) {
            names.push((format!("e{}_{}", e.rank, e.idx), n));
            images.push(e);
        }
    }
    let alphabet = RankedAlphabet::new(names)?;
    let alpha = Morphism::new(s.clone(), &alphabet, images)?;
    Ok((alphabet, alpha))
}

/// Relabels each non-variable node of `t` by `F_σ(C)` for the context `C`
/// that `D` induces at that node. Letters index into `element_alphabet(S, maxArity)`.
pub fn relabel(
    t: &RankedTree,
    d: &Context,
    gamma: &GammaMap,
    tau: &Morphism,
    letters: &RankedAlphabet,
) -> Result<RankedTree, PrecloneError> {
    let alg = &gamma.algebra;
    let tp = &alg.t;
    let n = t.rank();
    if d.v.len() != n {
        return Err(PrecloneError::SortMismatch(format!(
            "context of arity {} for a tree of rank {n}",
            d.v.len()
        )));
    }
    let mut out = t.clone();
    for x in t.nv_nodes() {
        let fac = t.factor_at(&x)?;
        let g = &fac.sub;
        let r1 = fac.k1;
        let r2 = g.rank();
        let v1 = &d.v[..r1];
        let v2 = &d.v[r1..r1 + r2];
        let v3 = &d.v[r1 + r2..];
        let p1: usize = v1.iter().map(|e| e.rank()).sum();
        let p3: usize = v3.iter().map(|e| e.rank()).sum();
        let mut holes = v1.to_vec();
        holes.push(tp.unit());
        holes.extend_from_slice(v3);
        let tf = tau.eval(&fac.context)?;
        let c = tp.compose_padded(d.u, d.k1, tp.compose(tf, &holes)?, d.k2)?;
        let Label::Sym(sigma) = g.label() else {
            unreachable!("nv_nodes returns symbol nodes")
        };
        let th = g
            .children()
            .iter()
            .map(|h| tau.eval(&h.clone().renumbered()))
            .collect::<Result<Vec<Elem>, _>>()?;
        let ctx = Context {
            u: c,
            k1: d.k1 + p1,
            v: tp.compose_tuple(&th, v2)?,
            k2: p3 + d.k2,
        };
        let label = alg.apply_first(&gamma.images[sigma.index()], &ctx)?;
        let name = format!("e{}_{}", label.rank, label.idx);
        let sym: Sym = letters
            .lookup(&name)
            .ok_or_else(|| PrecloneError::Context(format!("no letter for {label}")))?;
        out = out.replaced_at(&x, relabel_root(out.subtree(&x).expect("node exists"), sym));
    }
    Ok(out)
}

fn relabel_root(t: &RankedTree, sym: Sym) -> RankedTree {
    RankedTree::node(sym, t.children().to_vec())
}

/// `(Q_t(D), α(t̄_D))`; the two coincide when the construction is sound.
pub fn eval_two_ways(gamma: &GammaMap, t: &RankedTree, d: &Context) -> Result<(Elem, Elem), PrecloneError> {
    let alg = &gamma.algebra;
    let alphabet_size = gamma.images.iter().map(|x| x.rank).max().unwrap_or(0);
    let (letters, alpha) = element_alphabet(&alg.s, alphabet_size)?;
    let sigma = RankedAlphabet::new(gamma.images.iter().enumerate().map(|(i, x)| (format!("g{i}"), x.rank)))?;
    let tau = gamma.tau(&sigma)?;
    let q = gamma.eval(t)?;
    let lhs = alg.apply_first(&q, d)?;
    let rhs = alpha.eval(&relabel(t, d, gamma, &tau, &letters)?)?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preclone::{check_axioms, t_exists, AxiomMode, DEFAULT_BUDGET};
    use crate::trees::{enumerate_trees, parse_tree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_element(alg: &BlockAlgebra, n: usize, rng: &mut ChaCha8Rng) -> BlockElement {
        alg.random_element(n, rng)
    }

    #[test]
    fn context_counts_for_exists() {
        let t = t_exists(3).preclone;
        let alg = BlockAlgebra::new(&t, &t, 0).unwrap();
        assert_eq!(alg.contexts(1).len(), 4);
        assert_eq!(alg.carrier_size(1), Some(2u64.pow(4) * 2));
        let alg = BlockAlgebra::new(&t, &t, 1).unwrap();
        assert_eq!(alg.contexts(0).len(), 4);
        assert_eq!(alg.contexts(1).len(), 12);
        assert!(BlockAlgebra::new(&t, &t_exists(1).preclone, 1).is_err());
    }

    #[test]
    fn unit_laws_and_associativity() {
        let t = t_exists(3).preclone;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [0, 1] {
            let alg = BlockAlgebra::new(&t, &t, k).unwrap();
            let unit = alg.unit();
            for _ in 0..50 {
                let n = rng.gen_range(0..=2);
                let x = random_element(&alg, n, &mut rng);
                assert_eq!(bp_compose(&alg, &unit, std::slice::from_ref(&x)).unwrap(), x);
                assert_eq!(bp_compose(&alg, &x, &vec![unit.clone(); n]).unwrap(), x);
                let ys: Vec<BlockElement> = (0..n).map(|_| random_element(&alg, 1, &mut rng)).collect();
                let zs: Vec<BlockElement> = (0..n)
                    .map(|_| random_element(&alg, rng.gen_range(0..=1), &mut rng))
                    .collect();
                let lhs = bp_compose(&alg, &bp_compose(&alg, &x, &ys).unwrap(), &zs).unwrap();
                let inner: Vec<BlockElement> = ys
                    .iter()
                    .zip(&zs)
                    .map(|(y, z)| bp_compose(&alg, y, std::slice::from_ref(z)).unwrap())
                    .collect();
                assert_eq!(lhs, bp_compose(&alg, &x, &inner).unwrap());
            }
        }
    }

    #[test]
    fn generated_products() {
        let te = t_exists(2);
        let bp = block_product_pg(&te, &te, 0, GeneratorSelection::All, DEFAULT_BUDGET).unwrap();
        let pre = &bp.pgpair.preclone;
        assert!(check_axioms(pre, AxiomMode::Sampled { count: 300, seed: 5 })
            .unwrap()
            .passed());
        let proj = second_projection(&bp);
        assert!(proj.check_homomorphism(pre, &te.preclone).unwrap().is_none());
        assert_eq!(proj.apply(pre.unit()), te.preclone.unit());
        for &g in &bp.pgpair.generators {
            assert!(te.generators.contains(&bp.value(g).second));
        }
        let only_unit = block_product_pg(&te, &te, 0, GeneratorSelection::Subset(vec![]), DEFAULT_BUDGET).unwrap();
        assert_eq!(only_unit.pgpair.preclone.sort_sizes(), vec![0, 1]);
    }

    #[test]
    fn restricted_product_materializes() {
        let t = t_exists(1).preclone;
        let id = ElementMap {
            images: (0..t.sort_count()).map(|n| t.elements(n).collect()).collect(),
        };
        let r = Arc::new(RestrictedBlockProduct::new(&t, &t, &t_exists(1).preclone, id, 0).unwrap());
        assert_eq!(r.carrier_size(0), Some(2u64.pow(2) * 2));
        assert_eq!(r.carrier_size(1), Some(2u64.pow(4) * 2));
        let pre = r.materialize(1000).unwrap();
        assert!(check_axioms(&pre, AxiomMode::Exhaustive).unwrap().passed());
    }

    #[test]
    fn alpha_c_identity_context() {
        let t = t_exists(3).preclone;
        let id = ElementMap {
            images: (0..t.sort_count()).map(|n| t.elements(n).collect()).collect(),
        };
        let r = RestrictedBlockProduct::new(&t, &t, &t, id, 1).unwrap();
        let c = Context::identity(&t, 1);
        let a = alpha_c(&r, c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_element(&r.ambient, 1, &mut rng);
            let y = a.apply(&x).unwrap();
            assert_eq!(y, x);
            assert_eq!(
                a.target.apply_first(&y, &Context::identity(&t, 1)).unwrap(),
                r.ambient.apply_first(&x, &c).unwrap()
            );
        }
    }

    #[test]
    fn two_way_evaluation() {
        let t = t_exists(3).preclone;
        let alg = BlockAlgebra::new(&t, &t, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let images: Vec<BlockElement> = [0, 0, 2, 2]
            .iter()
            .map(|&n| random_element(&alg, n, &mut rng))
            .collect();
        let gamma = GammaMap { algebra: alg, images };
        let sigma = RankedAlphabet::new([("g0", 0), ("g1", 0), ("g2", 2), ("g3", 2)]).unwrap();
        let single = parse_tree("g1", &sigma, 0).unwrap();
        let d = gamma.algebra.contexts(0)[1].clone();
        let (l, r) = eval_two_ways(&gamma, &single, &d).unwrap();
        assert_eq!(l, r);
        assert_eq!(l, gamma.algebra.apply_first(&gamma.images[1], &d).unwrap());
        for tree in enumerate_trees(&sigma, 0, 3) {
            for d in gamma.algebra.contexts(0).to_vec() {
                let (l, r) = eval_two_ways(&gamma, &tree, &d).unwrap();
                assert_eq!(l, r, "{}", tree.display(&sigma));
            }
        }
    }
}
