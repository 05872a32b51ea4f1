//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_whole_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/adaptive_mm.h")).unwrap();
    for name in [
        "amm_last_error",
        "amm_catalog_load",
        "amm_catalog_save",
        "amm_catalog_build_reference",
        "amm_catalog_build_from_calibration",
        "amm_catalog_free",
        "amm_catalog_n_steps",
        "amm_catalog_scenario_count",
        "amm_catalog_lag",
        "amm_quote",
        "typedef struct AmmCatalog AmmCatalog",
        "AMM_STATUS_VERIFICATION = 9",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_and_quotes() {
    let lib = target_dir().join("libadaptive_mm_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("quote");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = Command::new("cc")
        .arg(format!("{manifest}/tests/c/quote.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let fields: Vec<&str> = lines.next().unwrap().split(' ').collect();
    assert_eq!(&fields[..2], ["30", "27"]);
    let (ask, bid): (f64, f64) = (fields[2].parse().unwrap(), fields[3].parse().unwrap());
    assert!(ask > 13_000.0 && bid < 13_000.0);
    assert_eq!(lines.next(), Some("3 1"));
}
