//! Cross-module checks against closed-form oracles.

use gibbsdiff::bridge::{self, KernelMethod};
use gibbsdiff::fk::{self, PathFunctional};
use gibbsdiff::measure::normal_pdf;
use gibbsdiff::oracle;
use gibbsdiff::reversal;
use gibbsdiff::value;
use gibbsdiff::{Axis, DiffusionModel, FieldGrid, GridMeasure, Hamiltonian, TimeGrid};

#[test]
fn pde_and_monte_carlo_values_agree_off_the_origin() {
    let m = DiffusionModel::brownian(1, 1.0);
    let h = Hamiltonian::quadratic_terminal(1.0);
    let grid = FieldGrid::uniform_1d(-6.0, 6.0, 401, 1.0, 400).unwrap();
    let (_, v) = value::solve_value_pde(&m, &h, &grid).unwrap();
    let time = TimeGrid::new(0.0, 1.0, 50).unwrap();
    for (z, s) in [(0.5, 0.0), (-1.0, 0.4), (1.5, 0.8)] {
        let mc = value::estimate_value_mc(&m, &h, &[z], s, &time, 40_000, 17).unwrap();
        let pde = v.eval(&[z], s);
        assert!((mc.value - pde).abs() < 3.0 * mc.std_error + 5e-3, "{z} {s}: {mc:?} vs {pde}");
        assert!((pde - oracle::quadratic_value(z, s, 1.0)).abs() < 5e-3);
    }
}

#[test]
fn pde_control_drives_reference_to_tilted_law() {
    let m = DiffusionModel::brownian(1, 1.0);
    let h = Hamiltonian::quadratic_terminal(1.0);
    let grid = FieldGrid::uniform_1d(-6.0, 6.0, 401, 1.0, 400).unwrap();
    let (_, v) = value::solve_value_pde(&m, &h, &grid).unwrap();
    let u = value::optimal_control(&v);
    let time = TimeGrid::new(0.0, 1.0, 400).unwrap();
    let r = fk::fk_controlled(&m, &u, &PathFunctional::terminal_moment(0, 2), &[0.0], &time, 40_000, 5).unwrap();
    assert!((r.estimate - 0.5).abs() < 3.0 * r.std_error + 2e-3, "{r:?}");
}

#[test]
fn kolmogorov_kernel_drives_a_bridge() {
    let a = Axis::new(-6.0, 7.0, 261).unwrap();
    let pts = gibbsdiff::measure::grid_points(std::slice::from_ref(&a));
    let bm = DiffusionModel::brownian(1, 1.0);
    let closed = bridge::build_kernel(&bm, &pts, std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
    let solved = bridge::build_kernel(&bm, &pts, std::slice::from_ref(&a), 1.0, KernelMethod::KolmogorovSolve { n_steps: 200 }).unwrap();
    let mu = GridMeasure::probability_from_density(vec![a.clone()], |x| normal_pdf(x[0], 0.0, 0.25)).unwrap();
    let mu_prime = GridMeasure::probability_from_density(vec![a.clone()], |x| normal_pdf(x[0], 1.0, 0.25)).unwrap();
    let s1 = bridge::fortet_iteration(&closed, &mu, &mu_prime, 1e-10, 500).unwrap();
    let s2 = bridge::fortet_iteration(&solved, &mu, &mu_prime, 1e-10, 500).unwrap();
    let e1 = bridge::control_effort(&s1, &closed, &mu, &mu_prime);
    let e2 = bridge::control_effort(&s2, &solved, &mu, &mu_prime);
    assert!((e1.effort - e2.effort).abs() < 1e-2, "{e1:?} {e2:?}");
}

#[test]
fn reversal_entropy_matches_gaussian_formula() {
    let m = DiffusionModel::brownian(1, 1.0);
    let grid = FieldGrid::uniform_1d(-8.0, 8.0, 801, 1.0, 2000).unwrap();
    let p0 = reversal::density_on_grid(&grid, |x| normal_pdf(x[0], 0.0, 1.0));
    let ev = reversal::solve_forward_kolmogorov(&m, &p0, &grid).unwrap();
    let h = reversal::reversal_free_energy(&ev);
    assert!((h - oracle::gaussian_entropy(2.0)).abs() < 1e-4, "{h}");
}
