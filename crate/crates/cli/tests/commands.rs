use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lindtree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindtree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn corpus(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const UNARY: &str = "0_0/0 1_0/0 0_1/1 1_1/1";

const BOOL_EXISTS: &str = "symbols 0_2/2 1_2/2 0_0/0 1_0/0\nrank 0\nexists x. P[1_0](x)\n";

fn eval(tree: &str, formula: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let t = file(dir.path(), "tree.txt", tree);
    let f = file(dir.path(), "formula.fo", formula);
    lindtree(&["eval", t.to_str().unwrap(), f.to_str().unwrap()])
}

#[test]
fn eval_reports_sat_and_unsat() {
    let sat = eval("0_2(1_0,0_0)\n", BOOL_EXISTS);
    assert_eq!(stdout(&sat), "SAT\n");
    assert_eq!(sat.status.code(), Some(0));
    let unsat = eval("0_2(0_0,0_0)\n", BOOL_EXISTS);
    assert_eq!(stdout(&unsat), "UNSAT\n");
    assert_eq!(unsat.status.code(), Some(1));
}

#[test]
fn eval_reads_free_variable_nodes() {
    // `x<y`: x is a proper ancestor of y
    let formula = "symbols f/2 a/0 b/0\nrank 0\nP[f](x) & x<y\n";
    assert_eq!(stdout(&eval("f(f(a,b),b)\nx = 1\ny = 1.2\n", formula)), "SAT\n");
    assert_eq!(stdout(&eval("f(f(a,b),b)\nx = root\ny = 2\n", formula)), "SAT\n");
    assert_eq!(stdout(&eval("f(f(a,b),b)\nx = 1\ny = 2\n", formula)), "UNSAT\n");
    assert_eq!(stdout(&eval("f(f(a,b),b)\nx = 1.1\ny = 1.2\n", formula)), "UNSAT\n");
}

#[test]
fn eval_rejects_bad_input() {
    assert_eq!(eval("0_2(1_0\n", BOOL_EXISTS).status.code(), Some(2));
    assert_eq!(
        eval("0_2(1_0,0_0)\n", "symbols 0_0/0\nrank 0\nexists x.\n")
            .status
            .code(),
        Some(2)
    );
    let formula = "symbols f/2 a/0 b/0\nrank 0\nP[a](x)\n";
    assert_eq!(eval("f(a,b)\n", formula).status.code(), Some(2));
    assert_eq!(eval("f(a,b)\nx = 3\n", formula).status.code(), Some(2));
}

#[test]
fn enumerate_lists_small_trees() {
    let o = lindtree(&["enumerate", "--symbols", "f/2 a/0 b/0", "--rank", "0", "--max-nv", "3"]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines, ["a", "b", "f(a,a)", "f(a,b)", "f(b,a)", "f(b,b)"]);
}

#[test]
fn syntactic_class_counts() {
    let last = |args: &[&str]| stdout(&lindtree(args)).lines().last().unwrap().to_string();
    assert_eq!(
        last(&["syntactic", "builtin:exists", "--trunc", "3"]),
        "classes 2 2 2 2"
    );
    assert_eq!(
        last(&["syntactic", "builtin:mod:2:1", "--trunc", "3"]),
        "classes 2 2 2 2"
    );
    assert_eq!(
        last(&["syntactic", "builtin:mod:3:0", "--trunc", "3"]),
        "classes 3 3 3 3"
    );

    let dir = tempfile::tempdir().unwrap();
    let empty = file(
        dir.path(),
        "empty.aut",
        "rank 0\nstates 1\nfinals\ntrans 0_0 -> 0\ntrans 1_0 -> 0\ntrans 0_2 0 0 -> 0\ntrans 1_2 0 0 -> 0\n",
    );
    assert_eq!(
        last(&["syntactic", empty.to_str().unwrap(), "--trunc", "3"]),
        "classes 1 1 1 1"
    );
}

#[test]
fn syntactic_dump_feeds_blockprod() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("exists.txt");
    let o = lindtree(&[
        "syntactic",
        "builtin:exists",
        "--symbols",
        UNARY,
        "--trunc",
        "3",
        "--out",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let d = dump.to_str().unwrap();
    let args = ["blockprod", d, d, "--k", "0", "--samples", "200", "--seed", "5"];
    let first = lindtree(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    assert!(text.contains("rank 0 generated"));
    assert!(text.contains("seed 5 checks"));
    assert!(text.contains("violations 0"));
    assert_eq!(text, stdout(&lindtree(&args)));
}

#[test]
fn blockprod_reads_generator_subset() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("exists.txt");
    lindtree(&[
        "syntactic",
        "builtin:exists",
        "--symbols",
        UNARY,
        "--trunc",
        "3",
        "--out",
        dump.to_str().unwrap(),
    ]);
    let d = dump.to_str().unwrap();
    // at k = 0 a constant sees one context per element u of rank 1
    let gens = file(dir.path(), "gens.txt", "0.0 0.0 0.1\n1.1 1.1 1.1 1.0 1.0\n");
    let o = lindtree(&["blockprod", d, d, "--k", "0", "--generators", gens.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = file(dir.path(), "bad.txt", "0.0 0.0\n");
    let o = lindtree(&["blockprod", d, d, "--k", "0", "--generators", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn axioms_embed_seed_and_pass() {
    let args = ["axioms", "exists", "mod:2", "--random", "2", "--seed", "11"];
    let o = lindtree(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("seed 11\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with("violations 0")));
    assert_eq!(text, stdout(&lindtree(&args)));
}

#[test]
fn compile_then_check_saved_recognizer() {
    let dir = tempfile::tempdir().unwrap();
    let formula = corpus("formulas/12_mod2.fo");
    let out = dir.path().join("rec");
    let o = lindtree(&["compile", &formula, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["preclone.txt", "generators.txt", "accepting.txt"] {
        assert!(out.join(f).exists());
    }
    let o = lindtree(&[
        "check-equiv",
        &formula,
        "--max-nv",
        "3",
        "--recognizer",
        out.to_str().unwrap(),
    ]);
    assert!(stdout(&o).starts_with("PASS"), "{}", stdout(&o));
    assert_eq!(o.status.code(), Some(0));

    // accept nothing: every satisfying structure becomes a witness
    let rank = fs::read_to_string(out.join("accepting.txt"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    fs::write(out.join("accepting.txt"), format!("{rank}\naccept\n")).unwrap();
    let o = lindtree(&[
        "check-equiv",
        &formula,
        "--max-nv",
        "3",
        "--recognizer",
        out.to_str().unwrap(),
    ]);
    let text = stdout(&o);
    assert!(text.starts_with("FAIL"), "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("witness "));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_equiv_compiles_corpus_formula() {
    let o = lindtree(&[
        "check-equiv",
        &corpus("formulas/25_defined_language.fo"),
        "--max-nv",
        "3",
    ]);
    assert!(stdout(&o).starts_with("PASS"), "{}", stdout(&o));
}
