use std::fs;
use std::process::{Command, Output};

fn ftgmres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftgmres")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_poisson_writes_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p100.mtx");
    let o = ftgmres(&["gen-poisson", "100", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let dims = text.lines().find(|l| !l.starts_with('%')).unwrap();
    assert_eq!(dims.split_whitespace().collect::<Vec<_>>(), ["10000", "10000", "49600"]);

    let small = dir.path().join("p2.mtx");
    assert!(ftgmres(&["gen-poisson", "2", small.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(&small).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('%')).count(), 1 + 12);
}

#[test]
fn gen_poisson_zero_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftgmres(&["gen-poisson", "0", dir.path().join("x.mtx").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn gen_poisson_unwritable_path() {
    let o = ftgmres(&["gen-poisson", "3", "/nonexistent-dir/x.mtx"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn info_on_poisson_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.mtx");
    assert!(ftgmres(&["gen-poisson", "100", path.to_str().unwrap()]).status.success());
    let o = ftgmres(&["info", "--matrix", path.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("nnz        49600"), "{out}");
    assert!(out.contains("frobenius  446.766158"), "{out}");
    let two: f64 = out
        .lines()
        .find(|l| l.starts_with("two-norm"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!((7.9..=8.0).contains(&two), "{two}");
}

#[test]
fn info_on_identity_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eye.mtx");
    fs::write(&path, "%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 1\n2 2 1\n3 3 1\n").unwrap();
    let out = stdout(&ftgmres(&["info", "--matrix", path.to_str().unwrap()]));
    assert!(out.contains("frobenius  1.732051"), "{out}");
    assert!(out.contains("two-norm   1.000000"), "{out}");
}

#[test]
fn info_surfaces_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mtx");
    fs::write(&path, "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1\n").unwrap();
    let o = ftgmres(&["info", "--matrix", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn ftgmres_default_solve_converges() {
    let o = ftgmres(&["solve", "--poisson", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("status     converged"), "{out}");
    assert!(out.contains("outer iterations 10"), "{out}");
}

#[test]
fn gmres_on_identity_takes_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eye.mtx");
    fs::write(&path, "%%MatrixMarket matrix coordinate real general\n4 4 4\n1 1 1\n2 2 1\n3 3 1\n4 4 1\n").unwrap();
    let o = ftgmres(&["solve", "--solver", "gmres", "--matrix", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("iterations 1\n"));
}

#[test]
fn max_iters_exit_code() {
    let o = ftgmres(&["solve", "--poisson", "30", "--outer-max", "1", "--inner-iters", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("max-iters"));
}

#[test]
fn halt_exit_code() {
    let o = ftgmres(&[
        "solve", "--poisson", "20", "--fault-class", "1", "--target-solve", "1", "--target-iter", "2",
        "--detector", "on", "--detector-action", "halt",
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).contains("detected"));
}

#[test]
fn usage_errors() {
    assert_eq!(ftgmres(&["solve", "--poisson", "3", "--bogus"]).status.code(), Some(4));
    assert_eq!(ftgmres(&["solve"]).status.code(), Some(4));
    assert_eq!(ftgmres(&["solve", "--poisson", "3", "--fault-class", "4"]).status.code(), Some(4));
    assert_eq!(ftgmres(&["solve", "--poisson", "3", "--detector", "both"]).status.code(), Some(4));
    assert_eq!(ftgmres(&["solve", "--poisson", "3", "--sweep"]).status.code(), Some(4));
    assert_eq!(ftgmres(&["--help"]).status.code(), Some(0));
}

#[test]
fn solve_writes_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let o = ftgmres(&["solve", "--poisson", "10", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("matrix_id,detector,action"));
    assert!(lines[1].starts_with("poisson10,off,abort,none,none,0,0,false"));
}

#[test]
fn sweep_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            "--poisson".into(),
            "8".into(),
            "--inner-iters".into(),
            "4".into(),
            "--fault-class".into(),
            "1,2".into(),
            "--mgs-pos".into(),
            "first,last".into(),
            "--detector".into(),
            "both".into(),
            "--jobs".into(),
            "2".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    let run = |out: &std::path::Path| {
        let a = args(out.to_str().unwrap());
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let o = ftgmres(&a);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out).unwrap()
    };
    let first = run(&dir.path().join("a.csv"));
    let second = run(&dir.path().join("b.csv"));
    assert_eq!(first, second);

    let lines: Vec<&str> = first.lines().collect();
    // header + 2 baseline rows + detectors(2) x classes(2) x positions(2) x solves x 4 iterations
    assert_eq!((lines.len() - 3) % 32, 0);
    assert!(lines[1].contains(",none,none,0,0,false,"));
    assert!(lines[2].contains(",none,none,0,0,false,"));

    // cut the file mid-row and let the sweep finish it
    let partial = dir.path().join("c.csv");
    let keep: String = lines[..20].iter().map(|l| format!("{l}\n")).collect::<String>() + &lines[20][..5];
    fs::write(&partial, keep).unwrap();
    let resumed = run(&partial);
    let resumed_rows: Vec<&str> = resumed.lines().filter(|l| l.split(',').count() == 14).collect();
    assert_eq!(resumed_rows, lines);
}
