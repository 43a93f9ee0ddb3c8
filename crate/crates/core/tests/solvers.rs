use ftgmres_core::flexible::fgmres_solve_with_state;
use ftgmres_core::gmres::gmres_solve_with_state;
use ftgmres_core::sdc::Entry;
use ftgmres_core::sparse::{gen_random_dense, gen_random_sparse};
use ftgmres_core::vector::norm2;
use ftgmres_core::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn dense_of(a: &SparseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a.get(i, j))
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.spmv(x).unwrap();
    norm2(&ax.iter().zip(b).map(|(p, q)| q - p).collect::<Vec<_>>())
}

fn inner_cfg(a: &SparseMatrix) -> GmresConfig {
    GmresConfig::for_matrix(a, 25, 0.0)
}

fn outer_cfg(a: &SparseMatrix) -> GmresConfig {
    GmresConfig::for_matrix(a, 100, 1e-8).with_policy(LsqPolicy::rank_revealing())
}

#[test]
fn full_gmres_matches_lu_on_random_dense() {
    for seed in 0..10 {
        let n = 15;
        let a = gen_random_dense(n, 100 + seed).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let oracle = dense_of(&a).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let out = gmres_solve(&a, &b, &vec![0.0; n], &GmresConfig::for_matrix(&a, n, 0.0), None).unwrap();
        let err = (DVector::from_vec(out.x) - &oracle).norm() / oracle.norm();
        assert!(err < 1e-10, "seed {seed}: {err}");
    }
}

#[test]
fn poisson_two_norm_against_eigen_oracle() {
    // odd grid: for even n the all-ones start is orthogonal to the top eigenvector
    let a = gen_poisson(11).unwrap();
    let eig = SymmetricEigen::new(dense_of(&a)).eigenvalues;
    let lmax = eig.iter().copied().fold(f64::MIN, f64::max);
    let est = a.two_norm_estimate(2000, 1e-14);
    assert!(est.value <= lmax * (1.0 + 1e-12));
    assert!((est.value - lmax).abs() / lmax < 1e-3, "{} vs {lmax}", est.value);
    let closed = 4.0 + 4.0 * (std::f64::consts::PI / 12.0).cos();
    assert!((lmax - closed).abs() < 1e-10);
}

#[test]
fn detector_does_not_change_fault_free_runs() {
    let a = gen_poisson(30).unwrap();
    let b = vec![1.0; a.nrows()];
    let x0 = vec![0.0; a.nrows()];
    let plain = inner_cfg(&a);
    for action in [DetectorAction::ReportOnly, DetectorAction::AbortInner, DetectorAction::Halt] {
        let watched = plain.with_detector(DetectorConfig::for_matrix(&a, action));
        let p = gmres_solve(&a, &b, &x0, &plain, None).unwrap();
        let w = gmres_solve(&a, &b, &x0, &watched, None).unwrap();
        assert!(w.detector_events.is_empty());
        assert_eq!(p.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), w.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(p.residual_history, w.residual_history);

        let pf = ftgmres_solve(&a, &b, &x0, &plain, &outer_cfg(&a), None).unwrap();
        let wf = ftgmres_solve(&a, &b, &x0, &watched, &outer_cfg(&a), None).unwrap();
        assert_eq!(pf.x, wf.x);
        assert_eq!(pf.outer_iterations, wf.outer_iterations);
    }
}

#[test]
fn gmres_on_identity_is_one_step() {
    let a = SparseMatrix::identity(5);
    let b = [1.0, -2.0, 3.0, 0.5, 0.0];
    let out = gmres_solve(&a, &b, &[0.0; 5], &GmresConfig::for_matrix(&a, 5, 0.0), None).unwrap();
    assert_eq!(out.iterations, 1);
    assert_eq!(out.status, GmresStatus::HappyBreakdown);
    for (x, y) in out.x.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn arnoldi_relation_holds() {
    let a = gen_random_sparse(200, 5, 3).unwrap();
    let b: Vec<f64> = (0..200).map(|i| 1.0 + (i % 3) as f64).collect();
    let (_, st) = gmres_solve_with_state(&a, &b, &[0.0; 200], &inner_cfg(&a), None).unwrap();
    let k = st.hessenberg.ncols();
    let q = DMatrix::from_fn(200, k + 1, |i, j| st.basis_q[j][i]);
    let qtq = q.transpose() * &q;
    assert!((qtq - DMatrix::identity(k + 1, k + 1)).norm() < 1e-10);
    let aq = dense_of(&a) * q.columns(0, k);
    let rel = (aq - &q * st.hessenberg.h_matrix()).norm() / a.frobenius_norm();
    assert!(rel < 1e-12, "{rel}");
}

#[test]
fn class1_fault_is_caught_and_inner_solve_rolls_back() {
    let a = gen_poisson(20).unwrap();
    let b = vec![1.0; a.nrows()];
    let cfg = inner_cfg(&a).with_detector(DetectorConfig::for_matrix(&a, DetectorAction::AbortInner));
    let spec = FaultSpec {
        target_inner_solve: 1,
        target_inner_iteration: 4,
        mgs_position: MgsPosition::Last,
        fault_class: FaultClass::Class1,
    };
    let mut inj = FaultInjector::new(spec);
    let out = gmres_solve(&a, &b, &vec![0.0; a.nrows()], &cfg, Some(&mut inj)).unwrap();
    assert_eq!(out.status, GmresStatus::DetectorAbort);
    assert_eq!(out.iterations, 3);
    assert_eq!(out.detector_events.len(), 1);
    let ev = out.detector_events[0];
    assert_eq!(ev.location.iteration, 4);
    assert_eq!(ev.location.entry, Entry::Projection(4));
    assert_eq!(ev.observed, inj.fired().unwrap().injected);

    // the rolled-back iterate equals a clean 3-step solve
    let clean = gmres_solve(&a, &b, &vec![0.0; a.nrows()], &GmresConfig { max_iters: 3, ..inner_cfg(&a) }, None).unwrap();
    assert_eq!(out.x, clean.x);
}

#[test]
fn report_only_keeps_going_with_the_faulty_value() {
    let a = gen_poisson(20).unwrap();
    let b = vec![1.0; a.nrows()];
    let cfg = inner_cfg(&a).with_detector(DetectorConfig::for_matrix(&a, DetectorAction::ReportOnly));
    let spec = FaultSpec {
        target_inner_solve: 1,
        target_inner_iteration: 2,
        mgs_position: MgsPosition::First,
        fault_class: FaultClass::Class1,
    };
    let mut inj = FaultInjector::new(spec);
    let out = gmres_solve(&a, &b, &vec![0.0; a.nrows()], &cfg, Some(&mut inj)).unwrap();
    assert!(!out.detector_events.is_empty());
    assert_eq!(out.detector_events[0].location.iteration, 2);
    assert!(out.x.iter().all(|v| v.is_finite()));
}

#[test]
fn small_faults_pass_the_detector() {
    let a = gen_poisson(20).unwrap();
    let b = vec![1.0; a.nrows()];
    let cfg = inner_cfg(&a).with_detector(DetectorConfig::for_matrix(&a, DetectorAction::AbortInner));
    for class in [FaultClass::Class2, FaultClass::Class3] {
        let spec = FaultSpec {
            target_inner_solve: 1,
            target_inner_iteration: 5,
            mgs_position: MgsPosition::First,
            fault_class: class,
        };
        let mut inj = FaultInjector::new(spec);
        let out = gmres_solve(&a, &b, &vec![0.0; a.nrows()], &cfg, Some(&mut inj)).unwrap();
        assert!(inj.fired().is_some());
        assert!(out.detector_events.is_empty());
        assert_eq!(out.iterations, 25);
    }
}

#[test]
fn ftgmres_rolls_through_a_large_fault() {
    let a = gen_poisson(30).unwrap();
    let n = a.nrows();
    let b = vec![1.0; n];
    let base = ftgmres_solve(&a, &b, &vec![0.0; n], &inner_cfg(&a), &outer_cfg(&a), None).unwrap();
    assert_eq!(base.trichotomy, Some(Trichotomy::ConvergedToTolerance));
    let spec = FaultSpec {
        target_inner_solve: 2,
        target_inner_iteration: 1,
        mgs_position: MgsPosition::First,
        fault_class: FaultClass::Class1,
    };
    let mut inj = FaultInjector::new(spec);
    let rep = ftgmres_solve(&a, &b, &vec![0.0; n], &inner_cfg(&a), &outer_cfg(&a), Some(&mut inj)).unwrap();
    assert!(rep.fault_fired.is_some());
    assert_eq!(rep.trichotomy, Some(Trichotomy::ConvergedToTolerance));
    assert!(residual(&a, &rep.x, &b) <= 1e-8 * norm2(&b) * (1.0 + 1e-6));
}

#[test]
fn injector_targets_only_its_inner_solve() {
    let a = gen_poisson(15).unwrap();
    let n = a.nrows();
    let b = vec![1.0; n];
    let cfg = inner_cfg(&a).with_detector(DetectorConfig::for_matrix(&a, DetectorAction::ReportOnly));
    let spec = FaultSpec {
        target_inner_solve: 2,
        target_inner_iteration: 2,
        mgs_position: MgsPosition::First,
        fault_class: FaultClass::Class1,
    };
    let mut inj = FaultInjector::new(spec);
    let rep = ftgmres_solve(&a, &b, &vec![0.0; n], &cfg, &outer_cfg(&a), Some(&mut inj)).unwrap();
    let fired = rep.fault_fired.unwrap();
    assert_eq!(fired.location.solve, 2);
    assert_eq!(fired.location.iteration, 2);
    assert!(rep.detector_events.iter().all(|e| e.location.solve == 2));
}

#[test]
fn halt_stops_everything() {
    let a = gen_poisson(15).unwrap();
    let n = a.nrows();
    let b = vec![1.0; n];
    let cfg = inner_cfg(&a).with_detector(DetectorConfig::for_matrix(&a, DetectorAction::Halt));
    let spec = FaultSpec {
        target_inner_solve: 2,
        target_inner_iteration: 3,
        mgs_position: MgsPosition::Last,
        fault_class: FaultClass::Class1,
    };
    let mut inj = FaultInjector::new(spec);
    let rep = ftgmres_solve(&a, &b, &vec![0.0; n], &cfg, &outer_cfg(&a), Some(&mut inj)).unwrap();
    assert_eq!(rep.status, GmresStatus::DetectorAbort);
    assert_eq!(rep.trichotomy, None);
    assert_eq!(rep.inner_iterations.len(), 2);
}

#[test]
fn flexible_update_uses_preconditioned_basis() {
    // inner "solver" = a fixed diagonal scaling, so Z differs from Q
    let a = gen_random_sparse(80, 4, 11).unwrap();
    let n = a.nrows();
    let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
    let diag: Vec<f64> = (0..n).map(|i| 1.0 / a.get(i, i)).collect();
    let mut inner = |_: usize, q: &[f64]| q.iter().zip(&diag).map(|(v, d)| v * d).collect::<Vec<f64>>();
    let cfg = GmresConfig::for_matrix(&a, 40, 1e-10).with_policy(LsqPolicy::rank_revealing());
    let (run, state) = fgmres_solve_with_state(&a, &b, &vec![0.0; n], &mut inner, &cfg).unwrap();
    assert_eq!(run.trichotomy, Some(Trichotomy::ConvergedToTolerance));
    assert!(residual(&a, &run.outcome.x, &b) <= 1e-10 * norm2(&b) * (1.0 + 1e-6));

    // the same coefficients applied to Q give a clearly worse answer
    let (y, _) = state.hessenberg.solve_update(&LsqPolicy::rank_revealing()).unwrap();
    let via_z = state.reconstruct_solution(&y);
    assert_eq!(via_z, run.outcome.x);
    let via_q = vector::combine(&state.x0, &state.basis_q[..y.len()], &y);
    assert!(residual(&a, &via_q, &b) > 1e-3 * norm2(&b));
}

#[test]
fn outer_explicit_and_implicit_residuals_agree() {
    let a = gen_poisson(40).unwrap();
    let n = a.nrows();
    let b = vec![1.0; n];
    let rep = ftgmres_solve(&a, &b, &vec![0.0; n], &inner_cfg(&a), &outer_cfg(&a), None).unwrap();
    assert_eq!(rep.residual_history.len(), rep.explicit_residual_history.len());
    for (imp, exp) in rep.residual_history.iter().zip(&rep.explicit_residual_history) {
        assert!((imp - exp).abs() <= 1e-8 * norm2(&b), "{imp} vs {exp}");
    }
}

#[test]
fn symmetric_matrix_market_file_expands() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sym.mtx");
    std::fs::write(
        &path,
        "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2.0\n2 1 -1.0\n3 2 -1.0\n3 3 2.0\n",
    )
    .unwrap();
    let a = read_matrix_market(&path).unwrap();
    assert_eq!(a.nnz(), 6);
    assert_eq!(a.get(0, 1), -1.0);
    assert_eq!(a.get(1, 0), -1.0);
    assert_eq!(a.get(1, 2), -1.0);

    let out = dir.path().join("round.mtx");
    write_matrix_market(&a, &out).unwrap();
    assert_eq!(read_matrix_market(&out).unwrap(), a);
}
