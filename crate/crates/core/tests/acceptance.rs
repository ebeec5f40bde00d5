//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lindtree_core::automata::QuotientCase;
use lindtree_core::blockprod::{
    all_generators, block_product_pg, check_alpha_c_lemma, check_block_axioms, eval_two_ways, BlockAlgebra,
    BlockElement, GammaMap, GeneratorSelection, RestrictedBlockProduct,
};
use lindtree_core::compile::{check_equivalence, compile, CompileOptions};
use lindtree_core::logic::{parse_formula_file, LiteralCase, TildeCase};
use lindtree_core::preclone::{
    check_axioms, find_isomorphism, random_transformation_pgpairs, t_exists, t_mod, AxiomMode, ElementMap,
    DEFAULT_BUDGET,
};
use lindtree_core::syntactic::{syntactic_pgpair, Context};
use lindtree_core::trees::enumerate_trees;
use lindtree_core::{Elem, FinitaryPreclone, PgPair, RankedAlphabet, TreeAutomaton};

type Outcome = Result<String, String>;

fn corpus(dir: &str, ext: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(dir);
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    out
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn name(path: &Path) -> String {
    path.file_name().unwrap().to_string_lossy().into_owned()
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let spent = start.elapsed();
    if spent > limit {
        Err(format!("{detail}; took {spent:.2?}, limit {limit:?}"))
    } else {
        Ok(detail)
    }
}

fn named(s: &FinitaryPreclone, label: &str) -> Elem {
    s.all_elements()
        .into_iter()
        .find(|&e| s.describe(e) == label)
        .unwrap_or_else(|| panic!("no element {label}"))
}

fn bool_alphabet() -> RankedAlphabet {
    RankedAlphabet::boolean([0, 2])
}

fn preclone_axioms() -> Outcome {
    let start = Instant::now();
    let mut cases: Vec<(String, PgPair)> = vec![
        ("t_exists(3)".into(), t_exists(3)),
        ("t_mod(2,3)".into(), t_mod(2, 3).map_err(|e| e.to_string())?),
        ("t_mod(3,3)".into(), t_mod(3, 3).map_err(|e| e.to_string())?),
    ];
    let sigma = RankedAlphabet::parse("f/2 a/0 b/0").map_err(|e| e.to_string())?;
    let random = random_transformation_pgpairs(&sigma, 5, 2..=3, 3, 24, 2024).map_err(|e| e.to_string())?;
    for (i, (a, tp)) in random.into_iter().enumerate() {
        cases.push((format!("random automaton {i} ({} states)", a.state_count()), tp.pgpair));
    }
    let mut checked = 0;
    for (label, p) in &cases {
        let report = check_axioms(&p.preclone, AxiomMode::Exhaustive).map_err(|e| format!("{label}: {e}"))?;
        if let Some(v) = report.violations.first() {
            return Err(format!("{label}: {v}"));
        }
        checked += report.unit_checked + report.assoc_checked;
    }
    within(
        Duration::from_secs(10),
        start,
        format!("{} preclones, {checked} instances, 0 violations", cases.len()),
    )
}

fn syntactic_exists() -> Outcome {
    let start = Instant::now();
    let a = TreeAutomaton::builtin_exists(&bool_alphabet(), 0).map_err(|e| e.to_string())?;
    let syn = syntactic_pgpair(&a, 3, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
    let sizes = syn.class_counts();
    if sizes != vec![2, 2, 2, 2] {
        return Err(format!("sort sizes {sizes:?}"));
    }
    match find_isomorphism(&syn.pgpair.preclone, &t_exists(3).preclone).map_err(|e| e.to_string())? {
        Some(_) => within(
            Duration::from_secs(5),
            start,
            format!("sort sizes {sizes:?}, isomorphic to t_exists(3)"),
        ),
        None => Err("no isomorphism".into()),
    }
}

fn syntactic_mod() -> Outcome {
    let start = Instant::now();
    let mut found = Vec::new();
    for (p, r) in [(2, 0), (2, 1), (3, 1)] {
        let a = TreeAutomaton::builtin_mod(&bool_alphabet(), 0, p, r).map_err(|e| e.to_string())?;
        let syn = syntactic_pgpair(&a, 3, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
        let sizes = syn.class_counts();
        if sizes != vec![p; 4] {
            return Err(format!("(p,r) = ({p},{r}): sort sizes {sizes:?}"));
        }
        let target = t_mod(p, 3).map_err(|e| e.to_string())?;
        if find_isomorphism(&syn.pgpair.preclone, &target.preclone)
            .map_err(|e| e.to_string())?
            .is_none()
        {
            return Err(format!("(p,r) = ({p},{r}): not isomorphic to t_mod({p},3)"));
        }
        found.push(format!("({p},{r})"));
    }
    within(
        Duration::from_secs(10),
        start,
        format!("{} isomorphic to t_mod(p,3)", found.join(" ")),
    )
}

fn compiled_corpus() -> Outcome {
    let start = Instant::now();
    let paths = corpus("formulas", "fo");
    if paths.len() < 25 {
        return Err(format!("only {} corpus formulas", paths.len()));
    }
    let mut structures = 0;
    for path in &paths {
        let file =
            parse_formula_file(&read(path)?, path.parent().unwrap()).map_err(|e| format!("{}: {e}", name(path)))?;
        let vars = file.free_vars();
        let rec = compile(
            &file.formula,
            &file.alphabet,
            &vars,
            file.rank,
            &CompileOptions::for_rank(file.rank),
        )
        .map_err(|e| format!("{}: {e}", name(path)))?;
        let report = check_equivalence(&file.formula, &rec, 4).map_err(|e| format!("{}: {e}", name(path)))?;
        if let Some(m) = report.mismatches.first() {
            return Err(format!(
                "{}: {} mismatches, first {m:?}",
                name(path),
                report.mismatches.len()
            ));
        }
        structures += report.structures;
    }
    within(
        Duration::from_secs(120),
        start,
        format!("{} formulas, {structures} structures, 0 mismatches", paths.len()),
    )
}

fn block_product_axioms() -> Outcome {
    let start = Instant::now();
    let te = t_exists(3);
    let mut parts = Vec::new();
    for k in [0, 1] {
        let alg = BlockAlgebra::new(&te.preclone, &te.preclone, k).map_err(|e| e.to_string())?;
        let gens = all_generators(&alg, &te, &te, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
        let report = check_block_axioms(&alg, &gens, 1000, 17 + k as u64).map_err(|e| e.to_string())?;
        if let Some(v) = report.violations.first() {
            return Err(format!("k = {k}: {v}"));
        }
        parts.push(format!("k={k}: {} generators, {} checks", gens.len(), report.checked));
    }
    within(Duration::from_secs(30), start, parts.join("; "))
}

/// Three generator maps written out by hand, each with the letters it acts on.
fn gamma_maps() -> Result<Vec<(String, GammaMap, usize)>, String> {
    let te = t_exists(3).preclone;
    let tm = t_mod(2, 3).map_err(|e| e.to_string())?.preclone;
    let err = |e: lindtree_core::PrecloneError| e.to_string();
    let mut out = Vec::new();

    // constant tables: every letter acts like its T-image
    let alg = BlockAlgebra::new(&te, &te, 0).map_err(err)?;
    let images = vec![
        alg.element(named(&te, "true_0"), |_| Ok(named(&te, "true_0")))
            .map_err(err)?,
        alg.element(named(&te, "false_0"), |_| Ok(named(&te, "false_0")))
            .map_err(err)?,
        alg.element(named(&te, "or_2"), |_| Ok(named(&te, "or_2")))
            .map_err(err)?,
    ];
    out.push(("constant".into(), GammaMap { algebra: alg, images }, 0));

    // tables reading the context: leaves look at u, the binary letter at v
    let alg = BlockAlgebra::new(&te, &te, 0).map_err(err)?;
    let true1 = named(&te, "true_1");
    let true0 = named(&te, "true_0");
    let images = vec![
        alg.element(true0, |c| {
            Ok(named(&te, if c.u == true1 { "true_0" } else { "false_0" }))
        })
        .map_err(err)?,
        alg.element(named(&te, "false_0"), |c| {
            Ok(named(&te, if c.u == true1 { "false_0" } else { "true_0" }))
        })
        .map_err(err)?,
        alg.element(named(&te, "or_2"), |c: &Context| {
            Ok(named(&te, if c.v.contains(&true0) { "true_2" } else { "or_2" }))
        })
        .map_err(err)?,
    ];
    out.push(("context-reading".into(), GammaMap { algebra: alg, images }, 0));

    // parity on the left, existence on the right, k = 1 with a unary letter
    let alg = BlockAlgebra::new(&tm, &te, 1).map_err(err)?;
    let images = vec![
        alg.element(true0, |c| Ok(named(&tm, if c.k1 == 0 { "f_0_1" } else { "f_0_0" })))
            .map_err(err)?,
        alg.element(named(&te, "false_0"), |_| Ok(named(&tm, "f_0_0")))
            .map_err(err)?,
        alg.element(named(&te, "or_1"), |c| {
            Ok(named(&tm, if c.u.rank() == 2 { "f_1_1" } else { "f_1_0" }))
        })
        .map_err(err)?,
        alg.element(named(&te, "or_2"), |c| {
            let ones = c.v.iter().filter(|&&e| te.describe(e).starts_with("true")).count();
            Ok(named(&tm, if ones % 2 == 1 { "f_2_1" } else { "f_2_0" }))
        })
        .map_err(err)?,
    ];
    out.push(("parity over existence".into(), GammaMap { algebra: alg, images }, 1));
    Ok(out)
}

fn relabeling_evaluation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    for (label, gamma, k) in gamma_maps()? {
        let sigma = RankedAlphabet::new(gamma.images.iter().enumerate().map(|(i, x)| (format!("g{i}"), x.rank)))
            .map_err(|e| e.to_string())?;
        let pool = enumerate_trees(&sigma, k, 4);
        for _ in 0..200 {
            let t = &pool[rng.gen_range(0..pool.len())];
            for d in gamma.algebra.contexts(t.rank()).to_vec() {
                let (lhs, rhs) = eval_two_ways(&gamma, t, &d).map_err(|e| format!("{label}: {e}"))?;
                checked += 1;
                if lhs != rhs {
                    return Err(format!(
                        "{label}: {} at {}: {lhs} vs {rhs}",
                        t.display(&sigma),
                        d.display()
                    ));
                }
            }
        }
    }
    Ok(format!(
        "3 maps, 600 trees, {checked} (tree, context) pairs, 0 mismatches"
    ))
}

fn alpha_c_lemma() -> Outcome {
    let te = t_exists(3);
    let t = te.preclone.clone();
    let id = ElementMap {
        images: (0..t.sort_count()).map(|n| t.elements(n).collect()).collect(),
    };
    let source = RestrictedBlockProduct::new(&t, &t, &t, id, 1).map_err(|e| e.to_string())?;
    let bp = block_product_pg(&te, &te, 1, GeneratorSelection::All, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
    let mut elements: Vec<BlockElement> = bp
        .pgpair
        .preclone
        .all_elements()
        .into_iter()
        .map(|e| bp.value(e).clone())
        .collect();
    let generated = elements.len();
    for n in 0..=1 {
        let size = source.carrier_size(n).ok_or("carrier too large")?;
        elements.extend((0..size).map(|i| source.element(n, i)));
    }
    let report = check_alpha_c_lemma(&source, &elements, 100, 77).map_err(|e| e.to_string())?;
    if let Some(v) = report.violations.first() {
        return Err(v.clone());
    }
    Ok(format!(
        "{generated} generated elements plus the full carrier of ranks 0-1, {} checks, 0 violations",
        report.checked
    ))
}

fn tilde_corpus() -> Outcome {
    let paths = corpus("tilde", "tl");
    if paths.len() < 10 {
        return Err(format!("only {} pairs", paths.len()));
    }
    let mut checked = 0;
    for path in &paths {
        let case = TildeCase::parse(&read(path)?).map_err(|e| format!("{}: {e}", name(path)))?;
        let report = case.check(3).map_err(|e| format!("{}: {e}", name(path)))?;
        if let Some(m) = report.mismatches.first() {
            return Err(format!("{}: {m}", name(path)));
        }
        checked += report.checked;
    }
    Ok(format!(
        "{} pairs, {checked} (tree, assignment) pairs, 0 mismatches",
        paths.len()
    ))
}

fn quotient_corpus() -> Outcome {
    let paths = corpus("quotient", "quo");
    if paths.len() < 10 {
        return Err(format!("only {} instances", paths.len()));
    }
    let mut checked = 0;
    for path in &paths {
        let case =
            QuotientCase::parse(&read(path)?, path.parent().unwrap()).map_err(|e| format!("{}: {e}", name(path)))?;
        let report = case.check(3).map_err(|e| format!("{}: {e}", name(path)))?;
        if let Some(m) = report.mismatches.first() {
            return Err(format!("{}: {m}", name(path)));
        }
        checked += report.checked;
    }
    Ok(format!(
        "{} instances, {checked} comparisons, 0 mismatches",
        paths.len()
    ))
}

fn literal_corpus() -> Outcome {
    let paths = corpus("literal", "lit");
    if paths.len() < 2 {
        return Err(format!("only {} morphisms", paths.len()));
    }
    let mut checked = 0;
    let mut formulas = 0;
    for path in &paths {
        let case = LiteralCase::parse(&read(path)?).map_err(|e| format!("{}: {e}", name(path)))?;
        if case.formulas.len() < 5 {
            return Err(format!("{}: only {} formulas", name(path), case.formulas.len()));
        }
        for phi in &case.formulas {
            let report = case.check(phi, 3).map_err(|e| format!("{}: {e}", name(path)))?;
            if let Some(m) = report.mismatches.first() {
                return Err(format!("{}: {m}", name(path)));
            }
            checked += report.checked;
            formulas += 1;
        }
    }
    Ok(format!(
        "{} morphisms, {formulas} formulas, {checked} comparisons, 0 mismatches",
        paths.len()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("preclone axioms", preclone_axioms),
        ("syntactic preclone of exists", syntactic_exists),
        ("syntactic preclones of mod", syntactic_mod),
        ("compiled corpus equivalence", compiled_corpus),
        ("block product axioms", block_product_axioms),
        ("relabeling evaluation", relabeling_evaluation),
        ("context morphisms", alpha_c_lemma),
        ("tilde flattening", tilde_corpus),
        ("quotients and contexts", quotient_corpus),
        ("inverse literal morphisms", literal_corpus),
    ];
    let mut failed = 0;
    for (i, (label, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let spent = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {label}: {detail} [{spent:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {label}: {detail} [{spent:.2?}]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
