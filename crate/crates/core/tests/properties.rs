use approx::assert_relative_eq;
use proptest::collection::vec;
use proptest::prelude::*;

use fhn_kinetic::diagnostics::{dissipation, nonlocal_dissipation_double_sum, relative_entropy, time_derivative};
use fhn_kinetic::fhn::FhnParams;
use fhn_kinetic::grid::{build_kernel, DiscreteKernel, KernelSpec, SpatialGrid};
use fhn_kinetic::harness::fit::fit_loglog;
use fhn_kinetic::hydro::MacroFields;
use fhn_kinetic::kinetic::{deposit_moments, kinetic_step, relax_exact, KineticModel, ParticleCloud};

const CELLS: usize = 32;

fn kernel(shape: u8, ell: f64) -> DiscreteKernel {
    let grid = SpatialGrid::uniform_1d(8.0, CELLS).unwrap();
    let spec = match shape {
        0 => KernelSpec::gaussian(1.3, ell),
        1 => KernelSpec::exponential(0.7, ell),
        _ => KernelSpec::tophat(2.0, ell),
    };
    build_kernel(&grid, &spec).unwrap()
}

fn field(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    vec(lo..hi, CELLS)
}

fn cloud(grid: &SpatialGrid, v: &[f64], w: &[f64], weight: &[f64]) -> ParticleCloud {
    let cells: Vec<usize> = (0..v.len()).map(|i| i % grid.num_cells()).collect();
    ParticleCloud::new(grid, cells, v.to_vec(), w.to_vec(), weight.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonlocal_dissipation_two_ways(shape in 0u8..3, ell in 0.3f64..2.0, rho in field(0.0, 2.0), v in field(-3.0, 3.0)) {
        let k = kernel(shape, ell);
        let l = k.nonlocal_operator(&rho, &v).unwrap();
        let vol = k.grid().cell_volume();
        let via_operator: f64 = (0..CELLS).map(|c| rho[c] * v[c] * l[c]).sum::<f64>() * vol;
        let double = nonlocal_dissipation_double_sum(&k, &rho, &v);
        prop_assert!(double <= 1e-12);
        prop_assert!((via_operator - double).abs() <= 1e-10 * double.abs() + 1e-14);
    }

    #[test]
    fn nonlocal_operator_conserves_and_kills_constants(
        shape in 0u8..3, ell in 0.3f64..2.0, rho in field(0.0, 2.0), v in field(-3.0, 3.0), c in -5.0f64..5.0
    ) {
        let k = kernel(shape, ell);
        prop_assert!(k.nonlocal_operator(&rho, &vec![c; CELLS]).unwrap().iter().all(|x| *x == 0.0));
        let l = k.nonlocal_operator(&rho, &v).unwrap();
        let total: f64 = rho.iter().zip(&l).map(|(r, x)| r * x).sum();
        let scale: f64 = rho.iter().zip(&l).map(|(r, x)| (r * x).abs()).sum();
        prop_assert!(total.abs() <= 1e-10 * scale + 1e-14);
    }

    #[test]
    fn nonlocal_operator_is_linear_in_v(
        rho in field(0.0, 2.0), a in field(-2.0, 2.0), b in field(-2.0, 2.0), s in -3.0f64..3.0
    ) {
        let k = kernel(0, 1.0);
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let lhs = k.nonlocal_operator(&rho, &combo).unwrap();
        let la = k.nonlocal_operator(&rho, &a).unwrap();
        let lb = k.nonlocal_operator(&rho, &b).unwrap();
        for c in 0..CELLS {
            prop_assert!((lhs[c] - la[c] - s * lb[c]).abs() <= 1e-10 * (1.0 + la[c].abs() + (s * lb[c]).abs()));
        }
    }

    #[test]
    fn relative_entropy_is_nonnegative_and_vanishes_on_the_diagonal(
        rho in field(0.0, 2.0), v1 in field(-2.0, 2.0), w1 in field(-2.0, 2.0), v2 in field(-2.0, 2.0), w2 in field(-2.0, 2.0)
    ) {
        let grid = SpatialGrid::uniform_1d(8.0, CELLS).unwrap();
        let p = FhnParams::default();
        let z1 = MacroFields::new(rho.clone(), v1, w1, p).unwrap();
        let z2 = MacroFields::new(rho, v2, w2, p).unwrap();
        prop_assert!(relative_entropy(&z1, &z2, &grid) >= 0.0);
        prop_assert_eq!(relative_entropy(&z1, &z1, &grid), 0.0);
    }

    #[test]
    fn kinetic_steps_conserve_cell_mass(
        v in vec(-1.5f64..1.5, 64), w in vec(-1.0f64..1.0, 64), weight in vec(0.01f64..1.0, 64), eps in 0.01f64..1.0
    ) {
        let grid = SpatialGrid::uniform_1d(8.0, CELLS).unwrap();
        let c0 = cloud(&grid, &v, &w, &weight);
        let model = KineticModel::new(kernel(0, 1.0), FhnParams::default(), &c0, 50.0).unwrap();
        let mut c = c0.clone();
        for k in 0..5 {
            c = kinetic_step(&c, &model, 0.01, eps, k as f64 * 0.01).unwrap();
        }
        prop_assert_eq!(deposit_moments(&c, &grid).rho, deposit_moments(&c0, &grid).rho);
    }

    #[test]
    fn relaxation_keeps_means_and_shrinks_dissipation(
        v in vec(-2.0f64..2.0, 64), w in vec(-1.0f64..1.0, 64), weight in vec(0.01f64..1.0, 64), dt in 0.001f64..0.5
    ) {
        let grid = SpatialGrid::uniform_1d(8.0, CELLS).unwrap();
        let c0 = cloud(&grid, &v, &w, &weight);
        let m0 = deposit_moments(&c0, &grid);
        let c1 = relax_exact(&c0, &m0, dt, 0.1).unwrap();
        let m1 = deposit_moments(&c1, &grid);
        for c in 0..CELLS {
            prop_assert!((m1.v_mean[c] - m0.v_mean[c]).abs() <= 1e-12 * (1.0 + m0.v_mean[c].abs()));
        }
        for p in [1, 2] {
            let d0 = dissipation(&c0, &m0, p).unwrap();
            let d1 = dissipation(&c1, &m1, p).unwrap();
            prop_assert!(d1 >= -1e-12 && d1 <= d0 + 1e-12);
        }
    }

    #[test]
    fn loglog_fit_recovers_power_laws(slope in -2.0f64..2.0, scale in 0.01f64..100.0) {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|e: &f64| scale * e.powf(slope)).collect();
        let f = fit_loglog(&x, &y).unwrap();
        prop_assert!((f.slope - slope).abs() <= 1e-10);
        prop_assert!((f.predict(0.03) / (scale * 0.03f64.powf(slope)) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn time_derivative_is_exact_on_quadratics(
        gaps in vec(0.01f64..0.3, 3..12), a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0
    ) {
        let mut t = vec![0.0];
        for g in &gaps {
            t.push(t.last().unwrap() + g);
        }
        let y: Vec<f64> = t.iter().map(|s| a * s * s + b * s + c).collect();
        let d = time_derivative(&t, &y).unwrap();
        for (s, dv) in t.iter().zip(d) {
            prop_assert!((dv - (2.0 * a * s + b)).abs() <= 1e-8 * (1.0 + (2.0 * a * s + b).abs()));
        }
    }
}

#[test]
fn fft_and_direct_convolutions_agree() {
    let grid = SpatialGrid::new(&[6.0, 6.0], &[20, 20]).unwrap();
    let k = build_kernel(&grid, &KernelSpec::gaussian(1.0, 0.8)).unwrap();
    let f: Vec<f64> = (0..400).map(|c| ((c * 7 % 13) as f64).sin()).collect();
    let fast = k.convolve(&f).unwrap();
    let slow = k.convolve_direct(&f);
    for (a, b) in fast.iter().zip(&slow) {
        assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-10);
    }
}
