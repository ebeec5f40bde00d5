use std::path::{Path, PathBuf};
use std::time::Instant;

use lindtree_core::compile::{check_equivalence, compile, CompileOptions};
use lindtree_core::logic::parse_formula_file;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/formulas")
}

#[test]
fn corpus_formulas_compile_to_equivalent_recognizers() {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "fo"))
        .collect();
    paths.sort();
    assert!(paths.len() >= 25);
    for path in paths {
        let start = Instant::now();
        let text = std::fs::read_to_string(&path).unwrap();
        let file = parse_formula_file(&text, path.parent().unwrap()).unwrap();
        let vars = file.free_vars();
        let rec = compile(
            &file.formula,
            &file.alphabet,
            &vars,
            file.rank,
            &CompileOptions::for_rank(file.rank),
        )
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let report = check_equivalence(&file.formula, &rec, 4).unwrap();
        eprintln!(
            "{}: sizes {:?}, {} structures, {} accepted, {:?}",
            path.file_name().unwrap().to_string_lossy(),
            rec.pgpair.preclone.sort_sizes(),
            report.structures,
            report.accepted,
            start.elapsed()
        );
        assert!(report.passed(), "{}: {:?}", path.display(), report.mismatches.first());
    }
}
