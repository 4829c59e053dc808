//! Drives the `o3dsg` binary end to end on the synthetic fixture.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const QUICK: [&str; 3] = ["train.epochs=30", "model.node_points=64", "model.edge_points=128"];

fn o3dsg(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_o3dsg"));
    cmd.args(args);
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("run o3dsg")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Generates the fixture and returns its pipeline config.
fn fixture(dir: &Path) -> PathBuf {
    let cfg = dir.join("gen.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out_dir = format!("fixture.out_dir={}", dir.join("fx").display());
    let text = ok(o3dsg(&["gen-fixture", "--config", cfg.to_str().unwrap()], &[&out_dir]));
    assert!(text.contains("4 training scenes, 4 held-out scenes"), "{text}");
    dir.join("fx/pipeline.json")
}

fn run_pipeline(config: &Path) -> String {
    let c = config.to_str().unwrap();
    for stage in ["select-frames", "extract", "train", "infer"] {
        ok(o3dsg(&[stage, "--config", c], &QUICK));
    }
    ok(o3dsg(&["eval", "--config", c], &QUICK))
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let summary = run_pipeline(&config);
    assert!(summary.contains("objects: R@1=1.0000"), "{summary}");
    let report = dir.path().join("fx/work/report.json");
    let first = std::fs::read(&report).unwrap();

    // A second run from scratch gives the same report.
    std::fs::remove_dir_all(dir.path().join("fx/work")).unwrap();
    run_pipeline(&config);
    assert_eq!(std::fs::read(&report).unwrap(), first);

    // REPL: classification of a known node, then an error that does not end the session.
    let mut child = Command::new(env!("CARGO_BIN_EXE_o3dsg"))
        .args(["repl", "--config", config.to_str().unwrap()])
        .args(QUICK.iter().flat_map(|s| ["--set", s]))
        .args(["--set", "repl.scene=heldout_0"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"classify 3 1\nclassify 99\nfrobnicate\nrelate 2 1\nattr 1 materials\nlocalize \"chair\" \"standing on\" \"table\"\nquit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let text = ok(out);
    let lines: Vec<&str> = text.lines().collect();
    let gt: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fx/heldout_0/gt.json")).unwrap()).unwrap();
    let class_3 = gt["objects"]["3"].as_str().expect("gt label of node 3");
    assert!(lines[0].starts_with(&format!("{class_3}\t")), "{text}");
    assert!(lines[1].starts_with("error\t"), "{text}");
    assert!(lines[2].starts_with("error\t") && lines[2].contains("frobnicate"), "{text}");
    assert!(lines[3].starts_with("phrase\t"), "{text}");
    assert!(lines.iter().any(|l| l.starts_with("wood\t") || l.starts_with("fabric\t") || l.starts_with("metal\t")), "{text}");
    assert!(lines.last().unwrap().contains(',') && lines.last().unwrap().contains('\t'), "{text}");
}

#[test]
fn missing_checkpoint_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let c = config.to_str().unwrap();
    ok(o3dsg(&["select-frames", "--config", c], &[]));
    ok(o3dsg(&["extract", "--config", c], &[]));
    let out = o3dsg(&["infer", "--config", c], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.o3ck"), "{err}");
}

#[test]
fn bad_config_exits_1_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"selection": {"t_vis": 1.5}}"#).unwrap();
    let out = o3dsg(&["select-frames", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection.t_vis"));

    std::fs::write(&cfg, r#"{"selection": {"t_vsi": 0.3}}"#).unwrap();
    let out = o3dsg(&["select-frames", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(&cfg, "{}").unwrap();
    let out = o3dsg(&["train", "--config", cfg.to_str().unwrap()], &["model.d_obj=0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.d_obj"));

    let out = o3dsg(&["train", "--config", dir.path().join("absent.json").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = o3dsg(&["no-such-command"], &[]);
    assert_eq!(out.status.code(), Some(1));
}
