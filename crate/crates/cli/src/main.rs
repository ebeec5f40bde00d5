use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use lindtree_core::blockprod::{block_product_pg, check_block_axioms, BlockAlgebra, BlockElement, GeneratorSelection};
use lindtree_core::compile::{check_equivalence, compile, load_recognizer, CompileOptions, CompiledRecognizer};
use lindtree_core::logic::{parse_formula_file, satisfies, FormulaFile, Interpretation};
use lindtree_core::preclone::{
    check_axioms, dump, parse_dump, random_transformation_pgpairs, t_exists, t_mod, AxiomMode, DEFAULT_BUDGET,
};
use lindtree_core::syntactic::syntactic_pgpair;
use lindtree_core::trees::{enumerate_trees, parse_tree};
use lindtree_core::{Elem, NodeId, PgPair, RankedAlphabet, TreeAutomaton};

#[derive(Parser)]
#[command(
    name = "lindtree",
    version,
    about = "Preclones, tree automata and Lindström-quantifier logic on ranked trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide a formula on one tree; prints SAT or UNSAT.
    Eval { tree: PathBuf, formula: PathBuf },
    /// Compile a formula into a recognizer directory.
    Compile {
        formula: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a recognizer with the semantics on every small structure.
    CheckEquiv {
        formula: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_nv: usize,
        #[command(flatten)]
        build: BuildArgs,
        /// Use a recognizer written by `compile` instead of compiling.
        #[arg(long)]
        recognizer: Option<PathBuf>,
        /// Number of witnesses printed on failure.
        #[arg(long, default_value_t = 5)]
        witnesses: usize,
    },
    /// Syntactic pg-pair of an automaton file or `builtin:NAME`.
    Syntactic {
        automaton: String,
        /// Rank of the builtin language.
        #[arg(long, default_value_t = 0)]
        rank: usize,
        #[arg(long, default_value_t = 3)]
        trunc: usize,
        /// Alphabet of a builtin; defaults to the Boolean letters of ranks 0 and 2.
        #[arg(long)]
        symbols: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Write the dump here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generated block product of two dumped pg-pairs.
    Blockprod {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        k: usize,
        /// Lines `b F1 F2 ...`: a right element and its table over the contexts in order.
        #[arg(long)]
        generators: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Random associativity triples checked in the full product.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every tree of a rank with a bounded number of symbol nodes.
    Enumerate {
        #[arg(long)]
        symbols: String,
        #[arg(long, default_value_t = 0)]
        rank: usize,
        #[arg(long)]
        max_nv: usize,
    },
    /// Check the preclone axioms.
    Axioms(AxiomArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Truncation; defaults to rank+1.
    #[arg(long)]
    trunc: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
}

#[derive(Args)]
struct AxiomArgs {
    /// `exists`, `mod:P` or a dump file.
    targets: Vec<String>,
    #[arg(long, default_value_t = 3)]
    trunc: usize,
    /// Also check transformation preclones of this many random automata.
    #[arg(long, default_value_t = 0)]
    random: usize,
    #[arg(long, default_value = "f/2 a/0 b/0")]
    symbols: String,
    #[arg(long, default_value_t = 2)]
    min_states: usize,
    #[arg(long, default_value_t = 3)]
    max_states: usize,
    /// Random automata with larger preclones are redrawn.
    #[arg(long, default_value_t = 24)]
    max_elements: usize,
    /// Check this many sampled instances instead of all of them.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = String::new();
    let result = run(cli.command, &mut out);
    print!("{out}");
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn formula_file(path: &Path) -> Result<FormulaFile> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_formula_file(&read(path)?, base).with_context(|| format!("in {}", path.display()))
}

/// Returns whether the command succeeded; `Err` is reserved for bad input.
fn run(command: Command, out: &mut String) -> Result<bool> {
    match command {
        Command::Eval { tree, formula } => eval(&tree, &formula, out),
        Command::Compile {
            formula,
            build,
            out: dir,
        } => {
            let file = formula_file(&formula)?;
            let rec = build_recognizer(&file, &build)?;
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write(&dir.join("preclone.txt"), &recognizer_dump(&rec)?)?;
            write(&dir.join("generators.txt"), &rec.generator_map_text())?;
            write(&dir.join("accepting.txt"), &rec.accepting_text())?;
            writeln!(out, "sizes {}", join(rec.pgpair.preclone.sort_sizes()))?;
            writeln!(out, "accepting {}", rec.accepting.len())?;
            Ok(true)
        }
        Command::CheckEquiv {
            formula,
            max_nv,
            build,
            recognizer,
            witnesses,
        } => {
            if max_nv == 0 {
                bail!("--max-nv must be at least 1");
            }
            let file = formula_file(&formula)?;
            let rec = match recognizer {
                Some(dir) => load_recognizer(
                    &read(&dir.join("preclone.txt"))?,
                    &read(&dir.join("generators.txt"))?,
                    &read(&dir.join("accepting.txt"))?,
                    &file.alphabet,
                    &file.free_vars(),
                )?,
                None => build_recognizer(&file, &build)?,
            };
            let report = check_equivalence(&file.formula, &rec, max_nv)?;
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            writeln!(
                out,
                "{verdict} trees {} structures {} accepted {} mismatches {}",
                report.trees,
                report.structures,
                report.accepted,
                report.mismatches.len()
            )?;
            for m in report.mismatches.iter().take(witnesses) {
                let lambda: Vec<String> = m.assignment.iter().map(|(v, n)| format!("{v}={n}")).collect();
                writeln!(
                    out,
                    "witness {} [{}] semantics {} recognizer {}",
                    m.tree,
                    lambda.join(" "),
                    m.semantic,
                    m.recognizer
                )?;
            }
            Ok(report.passed())
        }
        Command::Syntactic {
            automaton,
            rank,
            trunc,
            symbols,
            budget,
            out: path,
        } => {
            let a = load_automaton(&automaton, rank, symbols.as_deref())?;
            let syn = syntactic_pgpair(&a, trunc, budget)?;
            let mut gens: Vec<Elem> = a.alphabet().symbols().map(|s| syn.morphism.image(s)).collect();
            gens.sort();
            gens.dedup();
            let text = dump(&syn.pgpair.preclone, &gens)?;
            match path {
                Some(p) => write(&p, &text)?,
                None => out.push_str(&text),
            }
            writeln!(out, "accepting {}", join(&syn.accepting))?;
            writeln!(out, "classes {}", join(syn.class_counts()))?;
            Ok(true)
        }
        Command::Blockprod {
            left,
            right,
            k,
            generators,
            budget,
            samples,
            seed,
            out: path,
        } => {
            let s = parse_dump(&read(&left)?).with_context(|| format!("in {}", left.display()))?;
            let t = parse_dump(&read(&right)?).with_context(|| format!("in {}", right.display()))?;
            let alg = BlockAlgebra::new(&s.preclone, &t.preclone, k)?;
            let selection = match &generators {
                Some(p) => GeneratorSelection::Subset(read_block_generators(&alg, &read(p)?)?),
                None => GeneratorSelection::All,
            };
            blockprod(&s, &t, &alg, k, selection, budget, samples, seed, path.as_deref(), out)
        }
        Command::Enumerate { symbols, rank, max_nv } => {
            let sigma = RankedAlphabet::parse(&symbols)?;
            for t in enumerate_trees(&sigma, rank, max_nv) {
                writeln!(out, "{}", t.display(&sigma))?;
            }
            Ok(true)
        }
        Command::Axioms(args) => axioms(&args, out),
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn build_recognizer(file: &FormulaFile, build: &BuildArgs) -> Result<CompiledRecognizer> {
    let opts = CompileOptions {
        trunc: build.trunc.unwrap_or(file.rank + 1),
        budget: build.budget,
    };
    Ok(compile(
        &file.formula,
        &file.alphabet,
        &file.free_vars(),
        file.rank,
        &opts,
    )?)
}

fn recognizer_dump(rec: &CompiledRecognizer) -> Result<String> {
    let mut gens: Vec<Elem> = rec.ext.alphabet.symbols().map(|s| rec.morphism.image(s)).collect();
    gens.sort();
    gens.dedup();
    Ok(dump(&rec.pgpair.preclone, &gens)?)
}

/// A node address written `root` or as 1-based child indices `2.1`.
fn parse_node(text: &str) -> Result<NodeId> {
    if text == "root" {
        return Ok(NodeId::root());
    }
    let path = text
        .split('.')
        .map(|p| match p.parse::<usize>() {
            Ok(i) if i >= 1 => Ok(i - 1),
            _ => Err(anyhow!("bad node address `{text}`")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeId(path))
}

fn eval(tree: &Path, formula: &Path, out: &mut String) -> Result<bool> {
    let file = formula_file(formula)?;
    let text = read(tree)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let first = lines.next().ok_or_else(|| anyhow!("{}: no tree", tree.display()))?;
    let t = parse_tree(first, &file.alphabet, file.rank).with_context(|| format!("in {}", tree.display()))?;
    let mut lambda = Interpretation::new();
    for line in lines {
        let (var, node) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}: expected `var = node`, got `{line}`", tree.display()))?;
        let id = parse_node(node.trim())?;
        if t.subtree(&id).is_none_or(|s| s.is_var()) {
            bail!("{}: `{}` is not a symbol node", tree.display(), node.trim());
        }
        lambda.insert(var.trim().to_string(), id);
    }
    for v in file.free_vars() {
        if !lambda.contains_key(&v) {
            bail!("free variable `{v}` has no node");
        }
    }
    let sat = satisfies(&t, &lambda, &file.formula)?;
    writeln!(out, "{}", if sat { "SAT" } else { "UNSAT" })?;
    Ok(sat)
}

fn load_automaton(source: &str, rank: usize, symbols: Option<&str>) -> Result<TreeAutomaton> {
    let Some(name) = source.strip_prefix("builtin:") else {
        return Ok(TreeAutomaton::parse(&read(Path::new(source))?)?);
    };
    let delta = match symbols {
        Some(s) => RankedAlphabet::parse(s)?,
        None => RankedAlphabet::boolean([0, 2]),
    };
    let parts: Vec<&str> = name.split([':', '_']).collect();
    Ok(match parts.as_slice() {
        ["exists"] => TreeAutomaton::builtin_exists(&delta, rank)?,
        ["path"] => TreeAutomaton::builtin_path(&delta, rank)?,
        ["forall", "next"] | ["forall_next"] => TreeAutomaton::builtin_forall_next(&delta, rank)?,
        ["mod", p, r] => TreeAutomaton::builtin_mod(&delta, rank, p.parse()?, r.parse()?)?,
        _ => bail!("unknown builtin `{name}`; expected exists, path, forall_next or mod:P:R"),
    })
}

fn read_block_generators(alg: &BlockAlgebra, text: &str) -> Result<Vec<BlockElement>> {
    let mut gens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let second: Elem = words.next().expect("nonempty").parse()?;
        let table = words.map(str::parse::<Elem>).collect::<Result<Vec<_>, _>>()?;
        let contexts = alg.contexts(second.rank());
        if table.len() != contexts.len() {
            bail!(
                "generator line {}: {} table entries for {} contexts",
                i + 1,
                table.len(),
                contexts.len()
            );
        }
        let mut cells = table.into_iter();
        gens.push(alg.element(second, |_| Ok(cells.next().expect("length checked")))?);
    }
    Ok(gens)
}

#[allow(clippy::too_many_arguments)]
fn blockprod(
    s: &PgPair,
    t: &PgPair,
    alg: &BlockAlgebra,
    k: usize,
    selection: GeneratorSelection,
    budget: usize,
    samples: usize,
    seed: u64,
    path: Option<&Path>,
    out: &mut String,
) -> Result<bool> {
    let gens = match &selection {
        GeneratorSelection::Subset(g) => g.clone(),
        GeneratorSelection::All => Vec::new(),
    };
    let bp = block_product_pg(s, t, k, selection, budget)?;
    let text = dump(&bp.pgpair.preclone, &bp.pgpair.generators)?;
    match path {
        Some(p) => write(p, &text)?,
        None => out.push_str(&text),
    }
    for n in 0..bp.pgpair.preclone.sort_count() {
        let carrier = alg.carrier_size(n).map_or("overflow".to_string(), |c| c.to_string());
        writeln!(
            out,
            "rank {n} generated {} contexts {} carrier {carrier}",
            bp.pgpair.preclone.sort_size(n),
            alg.contexts(n).len()
        )?;
    }
    if samples == 0 {
        return Ok(true);
    }
    let gens = if gens.is_empty() {
        bp.pgpair.generators.iter().map(|&e| bp.value(e).clone()).collect()
    } else {
        gens
    };
    let report = check_block_axioms(alg, &gens, samples, seed)?;
    writeln!(
        out,
        "seed {seed} checks {} violations {}",
        report.checked,
        report.violations.len()
    )?;
    for v in report.violations.iter().take(5) {
        writeln!(out, "violation {v}")?;
    }
    Ok(report.passed())
}

fn axioms(args: &AxiomArgs, out: &mut String) -> Result<bool> {
    let mut cases: Vec<(String, PgPair)> = Vec::new();
    for target in &args.targets {
        let p = match target.split_once(':') {
            _ if target == "exists" => t_exists(args.trunc),
            Some(("mod", p)) => t_mod(
                p.parse().with_context(|| format!("bad modulus in `{target}`"))?,
                args.trunc,
            )?,
            _ => parse_dump(&read(Path::new(target))?).with_context(|| format!("in {target}"))?,
        };
        cases.push((target.clone(), p));
    }
    if args.random > 0 {
        if args.min_states == 0 || args.min_states > args.max_states {
            bail!("state range {}..={} is empty", args.min_states, args.max_states);
        }
        let sigma = RankedAlphabet::parse(&args.symbols)?;
        let drawn = random_transformation_pgpairs(
            &sigma,
            args.random,
            args.min_states..=args.max_states,
            args.trunc,
            args.max_elements,
            args.seed,
        )?;
        for (i, (a, tp)) in drawn.into_iter().enumerate() {
            cases.push((format!("random:{i}:{}-states", a.state_count()), tp.pgpair));
        }
    }
    if cases.is_empty() {
        bail!("nothing to check; name a target or pass --random");
    }
    let mode = match args.samples {
        Some(count) => AxiomMode::Sampled { count, seed: args.seed },
        None => AxiomMode::Exhaustive,
    };
    writeln!(out, "seed {}", args.seed)?;
    let mut ok = true;
    for (label, p) in &cases {
        let report = check_axioms(&p.preclone, mode)?;
        ok &= report.passed();
        writeln!(
            out,
            "{label} sizes {} unit {} assoc {} violations {}",
            join(p.preclone.sort_sizes()),
            report.unit_checked,
            report.assoc_checked,
            report.violations.len()
        )?;
        for v in report.violations.iter().take(5) {
            writeln!(out, "violation {v}")?;
        }
    }
    Ok(ok)
}
