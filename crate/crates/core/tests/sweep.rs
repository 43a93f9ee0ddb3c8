use ftgmres_core::experiment::{run_sweep, run_sweep_to_csv, SolverSettings, SweepPlan, CSV_COLUMNS};
use ftgmres_core::*;

fn small_plan() -> (SparseMatrix, SweepPlan) {
    let a = gen_poisson(12).unwrap();
    let settings = SolverSettings { inner_iters: 6, ..SolverSettings::default() };
    let mut plan = SweepPlan::new("poisson12", settings);
    plan.detectors = vec![false, true];
    plan.margin = 2;
    (a, plan)
}

#[test]
fn csv_is_identical_across_job_counts() {
    let (a, plan) = small_plan();
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    let four = dir.path().join("four.csv");
    run_sweep_to_csv(&a, &plan, 1, &one).unwrap();
    run_sweep_to_csv(&a, &plan, 4, &four).unwrap();
    let text = std::fs::read_to_string(&one).unwrap();
    assert_eq!(text, std::fs::read_to_string(&four).unwrap());
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
}

#[test]
fn baseline_rows_come_first_and_are_clean() {
    let (a, plan) = small_plan();
    let out = run_sweep(&a, &plan, 1).unwrap();
    assert!(out.baseline.fault_fired.is_none());
    assert!(out.baseline.detector_events.is_empty());
    for (row, det) in out.rows.iter().zip([false, true]) {
        assert_eq!(row.detector, det);
        assert!(row.fault_class.is_none());
        assert!(!row.fired);
        assert_eq!(row.delta, 0);
    }
    let base = out.baseline.outer_iterations;
    let expected = 2 * 3 * 2 * (base + plan.margin) * plan.settings.inner_iters;
    assert_eq!(out.rows.len(), 2 + expected);
    // sites past the end of a run never fire
    assert!(out.rows.iter().any(|r| r.fault_class.is_some() && !r.fired));
}

#[test]
fn large_faults_with_detector_are_detected_unless_below_bound() {
    let (a, plan) = small_plan();
    let bound = DetectorConfig::for_matrix(&a, DetectorAction::AbortInner).bound;
    let out = run_sweep(&a, &plan, 1).unwrap();
    for r in out.fired().filter(|r| r.detector && r.fault_class == Some(FaultClass::Class1)) {
        let injected = r.injected_h.unwrap();
        assert!(r.detected || injected.abs() <= bound, "{r:?}");
    }
    for r in out.fired().filter(|r| !r.detector) {
        assert!(!r.detected);
    }
}

#[test]
fn resume_reproduces_the_full_file() {
    let (a, plan) = small_plan();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.csv");
    run_sweep_to_csv(&a, &plan, 1, &full).unwrap();
    let text = std::fs::read_to_string(&full).unwrap();

    let cut = dir.path().join("cut.csv");
    let keep = text.len() * 2 / 3;
    std::fs::write(&cut, &text[..keep]).unwrap();
    run_sweep_to_csv(&a, &plan, 2, &cut).unwrap();
    assert_eq!(std::fs::read_to_string(&cut).unwrap(), text);

    // a different plan does not resume onto this file
    let mut other = plan.clone();
    other.settings.inner_iters = 3;
    std::fs::write(&cut, &text[..keep]).unwrap();
    assert!(run_sweep_to_csv(&a, &other, 1, &cut).is_err());
}
