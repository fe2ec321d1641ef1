use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mads_cli::{parse_args, Invocation};

fn params(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../params").join(name)
}

fn mads(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mads-hpo"))
        .args(args)
        .output()
        .unwrap()
}

fn objectives(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn argument_forms() {
    assert_eq!(parse_args(["-v"]), Ok(Invocation::Version));
    assert_eq!(parse_args(["-i"]), Ok(Invocation::Info));
    assert_eq!(parse_args(["-h"]), Ok(Invocation::Help));
    assert_eq!(parse_args(["-u"]), Ok(Invocation::Usage));
    assert_eq!(parse_args(["-n", "p.txt"]), Ok(Invocation::Neighbors("p.txt".into())));
    assert_eq!(parse_args(["p.txt"]), Ok(Invocation::Run("p.txt".into())));
    for bad in [&[][..], &["-x"], &["-n"], &["a", "b"], &["-v", "extra"]] {
        assert!(parse_args(bad.iter().copied()).is_err(), "{bad:?}");
    }
}

#[test]
fn informational_flags_exit_cleanly() {
    let v = mads(&["-v"]);
    assert_eq!(v.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&v.stdout).trim(),
        format!("mads-hpo {}", env!("CARGO_PKG_VERSION"))
    );
    let h = mads(&["-h"]);
    assert_eq!(h.status.code(), Some(0));
    let help = String::from_utf8_lossy(&h.stdout);
    assert!(help.contains("NUM_CON_LAYERS") && help.contains("REMAINING_HPS"));
    assert_eq!(mads(&["-i"]).status.code(), Some(0));
    assert_eq!(mads(&["-u"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [&[][..], &["-z"], &["-n"]] {
        let out = mads(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Neighbors"));
    }
}

#[test]
fn runtime_errors_exit_with_two() {
    assert_eq!(mads(&["/nonexistent/params.txt"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "DATASET MNIST\nMAX_BB_EVAL ten\nKERNELS 3 5 1\n").unwrap();
    let out = mads(&[bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("line 3"), "{err}");
}

#[test]
fn neighbors_of_the_fully_connected_example() {
    let out = mads(&["-n", params("mnist_fc_optim.txt").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split(' ').collect()).collect();
    let tags: Vec<&str> = lines.iter().map(|l| l[0]).collect();
    assert_eq!(tags, ["ConvAdd", "ConvSub", "FcAdd", "FcSub", "OptimizerCycle"]);
    // Two conv groups of five values follow the conv header.
    let fc_block = |l: &[&str]| -> Vec<f64> {
        let n: usize = l[1].parse().unwrap();
        let at = 2 + 5 * n;
        let m: usize = l[at].parse().unwrap();
        l[at + 1..at + 1 + m].iter().map(|v| v.parse().unwrap()).collect()
    };
    assert_eq!(fc_block(&lines[2]), vec![500.0; 11]);
    assert_eq!(fc_block(&lines[3]), vec![500.0; 9]);
    assert_eq!(fc_block(&lines[4]), vec![500.0; 10]);
}

#[test]
fn sphere_run_writes_history_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(params("cifar10_default.txt"))
        .unwrap()
        .replace("CIFAR10", "SPHERE");
    let file = dir.path().join("sphere.txt");
    let out_dir = dir.path().join("run");
    fs::write(&file, format!("{text}\nOUTPUT_DIR {}\n", out_dir.display())).unwrap();
    let out = mads(&[file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let history = fs::read_to_string(out_dir.join("history.txt")).unwrap();
    assert_eq!(history.lines().count(), 100);
    assert!(history.lines().all(|l| l.split(' ').count() == 23));
    let stats = fs::read_to_string(out_dir.join("stats.txt")).unwrap();
    assert!(stats.lines().all(|l| history.lines().any(|h| h == l)));
    let best = objectives(&out_dir.join("stats.txt"));
    assert!(best.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(
        *best.last().unwrap(),
        objectives(&out_dir.join("history.txt"))
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    );
    assert!(out_dir.join("run_info.txt").exists());
    assert!(!out_dir.join("epochs").exists());
}

#[cfg(unix)]
#[test]
fn constant_external_blackbox_improves_once() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("constant.sh");
    fs::write(&script, "#!/bin/sh\necho 4.5\n").unwrap();
    let file = dir.path().join("custom.txt");
    let out_dir = dir.path().join("run");
    fs::write(
        &file,
        format!(
            "DATASET CUSTOM\nNUMBER_OF_CLASSES 4\nMAX_BB_EVAL 12\nEXTERNAL_COMMAND sh {}\nOUTPUT_DIR {}\n",
            script.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let out = mads(&[file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(objectives(&out_dir.join("history.txt")), vec![4.5; 12]);
    assert_eq!(objectives(&out_dir.join("stats.txt")), vec![4.5]);
}

#[cfg(unix)]
#[test]
fn failing_initial_evaluation_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("custom.txt");
    fs::write(
        &file,
        format!(
            "DATASET CUSTOM\nNUMBER_OF_CLASSES 4\nMAX_BB_EVAL 5\nEXTERNAL_COMMAND false\nOUTPUT_DIR {}\n",
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    assert_eq!(mads(&[file.to_str().unwrap()]).status.code(), Some(2));
}
