use bqp::pas::apg_pas_solve;
use bqp::ppa::estimate_min_eigenvalue;
use bqp::problems::{
    checksum, gen_deblur, gen_pde, gen_random_ncbqp, gen_random_nnls, gen_saddle, psnr, regenerate, KernelSpec,
    PdeParams, ProblemKind,
};
use bqp::{kkt_residual, ApgParams, BqpProblem, PasParams};
use proptest::prelude::*;

fn solve(p: &BqpProblem) -> Vec<f64> {
    let x0 = p.project(&vec![0.0; p.dim()]);
    apg_pas_solve(p, &x0, &ApgParams::for_problem(p), &PasParams::default()).unwrap().z
}

fn assert_symmetric(p: &BqpProblem) {
    let h = p.h();
    for i in 0..p.dim() {
        for j in 0..i {
            assert_eq!(h.get(i, j), h.get(j, i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn nnls_without_regularization_recovers_the_planted_point(seed in any::<u64>(), dense in any::<bool>()) {
        let density = if dense { 1.0 } else { 0.4 };
        let inst = gen_random_nnls(50, 20, density, seed, 0.0).unwrap();
        let x = solve(&inst.problem);
        let bnorm = inst.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(inst.residual(&x) <= 1e-8 * bnorm.max(1e-300));
    }

    #[test]
    fn manifests_regenerate_bit_for_bit(seed in any::<u64>(), n in 2usize..40) {
        let inst = gen_random_nnls(2 * n, n, 0.5, seed, 1e-3).unwrap();
        prop_assert_eq!(regenerate(&inst.manifest).unwrap(), inst.problem);
        let (p, m) = gen_random_ncbqp(n, 0.2, 0.0, seed).unwrap();
        prop_assert_eq!(&checksum(&regenerate(&m).unwrap()), &m.checksum);
        prop_assert_eq!(checksum(&p), m.checksum);
    }
}

#[test]
fn regularized_nnls_meets_kkt() {
    let inst = gen_random_nnls(50, 20, 1.0, 9, 1e-2).unwrap();
    let x = solve(&inst.problem);
    let k = kkt_residual(&inst.problem, &x);
    assert!(k.g_inf <= 1e-9 && k.sign_violation <= 1e-9, "{k:?}");
    assert!(x.iter().all(|&v| v >= 0.0));
}

#[test]
fn strictly_convex_families_are_positive_definite() {
    let mut problems = vec![gen_random_nnls(40, 30, 0.3, 1, 1e-3).unwrap().problem];
    problems.push(gen_deblur(16, KernelSpec { sigma: 1.5, radius: 3 }, 0.0, 1e-3, 2).unwrap().problem);
    problems.push(gen_random_ncbqp(30, 0.3, 50.0, 3).unwrap().0);
    for kind in [ProblemKind::ObstacleA, ProblemKind::ObstacleB, ProblemKind::Torsion, ProblemKind::Journal] {
        problems.push(gen_pde(kind, 8, 9, PdeParams::default()).unwrap().0);
    }
    for p in &problems {
        assert_symmetric(p);
        assert!(estimate_min_eigenvalue(p.h(), 1e-10) > 0.0);
    }
}

#[test]
fn unshifted_random_problem_is_indefinite() {
    let (p, _) = gen_random_ncbqp(60, 0.2, 0.0, 4).unwrap();
    assert_symmetric(&p);
    assert!(estimate_min_eigenvalue(p.h(), 1e-10) < 0.0);
}

#[test]
fn deblurring_improves_on_the_observation() {
    let inst = gen_deblur(32, KernelSpec { sigma: 1.5, radius: 3 }, 1e-3, 1e-3, 5).unwrap();
    let x = solve(&inst.problem);
    let before = psnr(&inst.y, &inst.x_true);
    let after = psnr(&x, &inst.x_true);
    assert!(after > before, "psnr {after} vs observation {before}");
    assert!(kkt_residual(&inst.problem, &x).max() <= 1e-9);
}

#[test]
fn grid_problems_have_one_unknown_per_interior_node() {
    for kind in [ProblemKind::ObstacleA, ProblemKind::ObstacleB, ProblemKind::Torsion, ProblemKind::Journal] {
        let (p, m) = gen_pde(kind, 12, 7, PdeParams::default()).unwrap();
        assert_eq!(p.dim(), 84);
        assert_eq!(regenerate(&m).unwrap(), p);
        let x = solve(&p);
        assert!(kkt_residual(&p, &x).max() <= 1e-9, "{kind:?}");
    }
}

#[test]
fn saddle_fixture_regenerates() {
    let (p, m) = gen_saddle();
    assert_eq!(p.dim(), 2);
    assert_eq!(regenerate(&m).unwrap(), p);
}
