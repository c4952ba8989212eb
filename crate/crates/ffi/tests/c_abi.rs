use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // test binaries live in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok()?;
    Some(cc)
}

#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libxtsformer_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

#[test]
fn header_compiles_as_cpp() {
    let Ok(out) = Command::new("c++").arg("--version").output() else {
        return;
    };
    assert!(out.status.success());
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let check = Command::new("c++")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c++"])
        .arg(root.join("include/xtsformer.h"))
        .output()
        .unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));
}
