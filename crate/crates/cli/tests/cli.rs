use std::path::Path;
use std::process::{Command, Output};

use kicknext_core::LaminarInstance;

fn kicknext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kicknext"))
        .args(args)
        .output()
        .expect("run cli")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen_uniform(dir: &Path) -> String {
    let path = dir.join("u.json");
    let path = path.to_str().unwrap().to_string();
    let out = kicknext(&[
        "gen", "--family", "uniform", "--n", "5", "--k", "2", "--seed", "1", "-o", &path,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

#[test]
fn gen_then_opt_reports_top_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_uniform(dir.path());
    let inst = LaminarInstance::load(&path).unwrap();
    let mut weights: Vec<f64> = inst.elements().iter().map(|e| e.weight).collect();
    weights.sort_by(|a, b| b.total_cmp(a));

    let out = kicknext(&["opt", &path]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "node,element_id,weight");
    assert_eq!(rows.len(), 3);
    let reported: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(reported, weights[..2]);
}

#[test]
fn verify_passes_on_generated_instance() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_uniform(dir.path());
    let out = kicknext(&["verify", &path, "--p", "0.08", "--trials", "20000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.starts_with("check_name,instance,p,value,bound_or_reference,std_err,pass\n"));
    assert!(!text.lines().any(|l| l.ends_with(",false")));
    for name in [
        "g_lemma",
        "weighted_lemma",
        "telescoping",
        "brank_dominance",
        "qualifying_exact",
        "ratio_vs_guarantee",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "missing {name}");
    }
}

#[test]
fn theory_single_and_grid() {
    let out = kicknext(&["theory", "--p", "0.08"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("p,alpha,c,ratio_lower_bound\n0.08,"));
    assert_eq!(text.lines().count(), 2);

    let out = kicknext(&[
        "theory", "--p-min", "0.05", "--p-max", "0.1", "--step", "0.01",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1 + 6);
}

#[test]
fn theory_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = kicknext(&["theory", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(
        std::fs::read_to_string(csv).unwrap(),
        stdout(&kicknext(&["theory", "--p", "0.08"]))
    );
}

#[test]
fn usage_and_validation_errors_exit_2() {
    assert_eq!(kicknext(&["theory", "--p", "0.7"]).status.code(), Some(2));
    assert_eq!(
        kicknext(&["theory", "--p", "0.1", "--step", "0.01"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(kicknext(&["theory", "--bogus"]).status.code(), Some(2));
    assert_eq!(kicknext(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        kicknext(&["opt", "/nonexistent/instance.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        kicknext(&["gen", "--family", "uniform", "--n", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        kicknext(&["gen", "--family", "uniform", "--n", "5", "--k", "6"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        kicknext(&[
            "gen",
            "--family",
            "chain",
            "--n",
            "5",
            "--depth",
            "2",
            "--weights",
            "zipf"
        ])
        .status
        .code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": \"x\", \"elements\": [").unwrap();
    let out = kicknext(&["opt", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn exact_needs_small_instances() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_uniform(dir.path());
    let out = kicknext(&["exact", &path, "--p", "0.08"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("instance,p,padding,exact_ratio,expected_weight,opt_weight\n"));

    let big = dir.path().join("big.json");
    let out = kicknext(&[
        "gen",
        "--family",
        "uniform",
        "--n",
        "9",
        "--k",
        "2",
        "-o",
        big.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        kicknext(&["exact", big.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("tree.json");
    let inst = inst.to_str().unwrap();
    let gen = |out: &str| {
        kicknext(&[
            "gen",
            "--family",
            "random-tree",
            "--n",
            "12",
            "--seed",
            "7",
            "--weights",
            "near_ties",
            "-o",
            out,
        ])
    };
    assert!(gen(inst).status.success());
    let again = dir.path().join("tree2.json");
    assert!(gen(again.to_str().unwrap()).status.success());
    assert_eq!(std::fs::read(inst).unwrap(), std::fs::read(&again).unwrap());

    let trace = |seed: &str| {
        stdout(&kicknext(&[
            "run", inst, "--p", "0.4", "--seed", seed, "--trace",
        ]))
    };
    assert_eq!(trace("3"), trace("3"));
    assert!(trace("3").starts_with("step,element_id,node_id,action,evicted_id,evicted_virtual\n"));

    let mc = |jobs: &str, name: &str| {
        let csv = dir.path().join(name);
        let out = kicknext(&[
            "montecarlo",
            inst,
            "--p",
            "0.08",
            "--trials",
            "20000",
            "--seed",
            "5",
            "--jobs",
            jobs,
            "--csv",
            csv.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        (stdout(&out), std::fs::read(csv).unwrap())
    };
    let (s1, c1) = mc("1", "a.csv");
    let (s4, c4) = mc("4", "b.csv");
    assert_eq!(s1, s4);
    assert_eq!(c1, c4);
    assert!(String::from_utf8(c1)
        .unwrap()
        .starts_with("check_name,instance,p,value,bound_or_reference,std_err,pass\n"));
}

#[test]
fn run_reports_a_feasible_solution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let path = path.to_str().unwrap();
    let out = kicknext(&[
        "gen",
        "--family",
        "partition",
        "--n",
        "10",
        "--parts",
        "3",
        "--part-capacity",
        "2",
        "-o",
        path,
    ]);
    assert!(out.status.success());
    let inst = LaminarInstance::load(path).unwrap();
    for seed in 0..20 {
        for padding in [true, false] {
            let mut args = vec!["run", path, "--p", "0.5", "--seed"];
            let s = seed.to_string();
            args.push(&s);
            if !padding {
                args.push("--no-padding");
            }
            let out = kicknext(&args);
            assert!(out.status.success());
            let ids: Vec<kicknext_core::ElementId> = stdout(&out)
                .lines()
                .skip(1)
                .map(|l| kicknext_core::ElementId(l.split(',').next().unwrap().parse().unwrap()))
                .collect();
            assert!(kicknext_core::matroid::is_independent(&inst, &ids).unwrap());
        }
    }
}
