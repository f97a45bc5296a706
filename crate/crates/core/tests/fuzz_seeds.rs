//! The checked-in fuzz corpus seeds must stay valid inputs.

use std::path::PathBuf;

use selfadj::bcalg::{validate, BoundaryCondition};
use selfadj::cli::ProblemConfig;
use selfadj::expr::Table;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds_parse() {
    for (p, bytes) in seeds("config_toml") {
        let cfg = ProblemConfig::from_toml(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.interval().unwrap();
    }
}

#[test]
fn bc_seeds_parse_and_validate() {
    for (p, bytes) in seeds("bc_json") {
        let bc: BoundaryCondition = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(validate(&bc, 2).is_ok(), "{}", p.display());
    }
}

#[test]
fn table_seeds_parse() {
    for (p, bytes) in seeds("table_csv") {
        Table::from_csv_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
