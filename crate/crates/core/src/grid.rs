//! Periodic spatial grid, the lateral connectivity kernel and the nonlocal
//! operator built from it.
//!
//! The box is `[-L/2, L/2)` along each axis, split into uniform cells. The
//! kernel is sampled at cell-centre offsets after summing periodic images, so
//! the discrete convolution
//!
//! ```text
//! (Psi * f)(x_c) = cell_volume * sum_{c'} Psi(x_c - x_{c'}) f_{c'}
//! ```
//!
//! is an exact circular convolution. Grids up to [`DIRECT_LIMIT`] cells are
//! summed directly in a fixed order; larger grids go through an FFT.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{FhnError, Result};

/// Largest cell count handled by direct O(M^2) summation.
pub const DIRECT_LIMIT: usize = 256;

/// A point of the spatial domain; the second coordinate is 0 in 1D.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    box_length: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
    cell_volume: f64,
}

impl SpatialGrid {
    pub fn new(box_length: &[f64], cells_per_axis: &[usize]) -> Result<Self> {
        let dim = box_length.len();
        if !(1..=2).contains(&dim) {
            return Err(FhnError::InvalidInput(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if cells_per_axis.len() != dim {
            return Err(FhnError::SizeMismatch { expected: dim, found: cells_per_axis.len() });
        }
        let mut bl = [1.0; 2];
        let mut n = [1usize; 2];
        let mut h = [1.0; 2];
        for k in 0..dim {
            if !(box_length[k].is_finite() && box_length[k] > 0.0) {
                return Err(FhnError::InvalidInput(format!(
                    "box length along axis {k} must be positive, got {}",
                    box_length[k]
                )));
            }
            if cells_per_axis[k] == 0 {
                return Err(FhnError::InvalidInput(format!("axis {k} has zero cells")));
            }
            bl[k] = box_length[k];
            n[k] = cells_per_axis[k];
            h[k] = bl[k] / n[k] as f64;
        }
        let cell_volume = h[..dim].iter().product();
        Ok(Self { dim, box_length: bl, cells: n, spacing: h, cell_volume })
    }

    pub fn uniform_1d(box_length: f64, cells: usize) -> Result<Self> {
        Self::new(&[box_length], &[cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn box_length(&self, axis: usize) -> f64 {
        self.box_length[axis]
    }

    pub fn cells_per_axis(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Flat index, axis 0 fastest.
    #[inline]
    pub fn index(&self, i0: usize, i1: usize) -> usize {
        i0 + self.cells[0] * i1
    }

    #[inline]
    pub fn multi_index(&self, c: usize) -> (usize, usize) {
        (c % self.cells[0], c / self.cells[0])
    }

    /// Flat index of the periodic offset `c - c2`.
    #[inline]
    pub fn offset_index(&self, c: usize, c2: usize) -> usize {
        let (i0, i1) = self.multi_index(c);
        let (j0, j1) = self.multi_index(c2);
        let o0 = (i0 + self.cells[0] - j0) % self.cells[0];
        let o1 = (i1 + self.cells[1] - j1) % self.cells[1];
        self.index(o0, o1)
    }

    pub fn center(&self, c: usize) -> Point {
        let (i0, i1) = self.multi_index(c);
        let mut x = [0.0; 2];
        for (k, i) in [i0, i1].into_iter().enumerate().take(self.dim) {
            x[k] = -0.5 * self.box_length[k] + (i as f64 + 0.5) * self.spacing[k];
        }
        x
    }

    /// Cell containing `x`, or `None` outside `[-L/2, L/2)`.
    pub fn locate(&self, x: &Point) -> Option<usize> {
        let mut idx = [0usize; 2];
        for k in 0..self.dim {
            let half = 0.5 * self.box_length[k];
            if !(x[k] >= -half && x[k] < half) {
                return None;
            }
            let i = ((x[k] + half) / self.spacing[k]).floor() as usize;
            idx[k] = i.min(self.cells[k] - 1);
        }
        Some(self.index(idx[0], idx[1]))
    }

    /// Minimal-image displacement `a - b` on the periodic box.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let mut d = [0.0; 2];
        for k in 0..self.dim {
            let l = self.box_length[k];
            let raw = a[k] - b[k];
            d[k] = raw - l * (raw / l).round();
        }
        d
    }

    /// Signed minimal-image offset, in cells, of the flat offset index `o`.
    fn signed_offset(&self, o: usize) -> [i64; 2] {
        let (o0, o1) = self.multi_index(o);
        let wrap = |i: usize, n: usize| -> i64 {
            let i = i as i64;
            let n = n as i64;
            if 2 * i > n {
                i - n
            } else {
                i
            }
        };
        [wrap(o0, self.cells[0]), wrap(o1, self.cells[1])]
    }

    /// Sum over cells in flat order.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        field.iter().sum::<f64>() * self.cell_volume
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Gaussian,
    Exponential,
    Tophat,
    Zero,
}

/// Pointwise definition of the radial kernel `Psi(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShape,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub length_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { shape: KernelShape::Gaussian, amplitude: 1.0, length_scale: 1.0 }
    }
}

impl KernelSpec {
    pub fn zero() -> Self {
        Self { shape: KernelShape::Zero, amplitude: 0.0, length_scale: 1.0 }
    }

    pub fn gaussian(amplitude: f64, length_scale: f64) -> Self {
        Self { shape: KernelShape::Gaussian, amplitude, length_scale }
    }

    pub fn exponential(amplitude: f64, length_scale: f64) -> Self {
        Self { shape: KernelShape::Exponential, amplitude, length_scale }
    }

    pub fn tophat(amplitude: f64, length_scale: f64) -> Self {
        Self { shape: KernelShape::Tophat, amplitude, length_scale }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            problems.push(format!("kernel.amplitude: must be finite and >= 0, got {}", self.amplitude));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            problems.push(format!("kernel.length_scale: must be positive, got {}", self.length_scale));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FhnError::ConfigInvalid(problems))
        }
    }

    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        let l = self.length_scale;
        match self.shape {
            KernelShape::Gaussian => self.amplitude * (-0.5 * (r / l) * (r / l)).exp(),
            KernelShape::Exponential => self.amplitude * (-r / l).exp(),
            KernelShape::Tophat => {
                if r < l {
                    self.amplitude
                } else {
                    0.0
                }
            }
            KernelShape::Zero => 0.0,
        }
    }

    /// Radius beyond which the kernel is below 1e-20 of its peak (or exactly zero).
    fn cutoff(&self) -> f64 {
        match self.shape {
            KernelShape::Gaussian => 9.6 * self.length_scale,
            KernelShape::Exponential => 46.1 * self.length_scale,
            KernelShape::Tophat => self.length_scale,
            KernelShape::Zero => 0.0,
        }
    }

    /// Periodised value `sum_k Psi(|d + k L|)` at a displacement. Depends only
    /// on the per-axis magnitudes of the minimal-image displacement, so the
    /// result is bit-identical for `d` and `-d`.
    pub fn periodic_value(&self, grid: &SpatialGrid, d: &Point) -> f64 {
        if self.shape == KernelShape::Zero {
            return 0.0;
        }
        let dim = grid.dim();
        let mut a = [0.0; 2];
        let mut kmax = [0i64; 2];
        for k in 0..dim {
            let l = grid.box_length(k);
            let raw = d[k] - l * (d[k] / l).round();
            a[k] = raw.abs();
            kmax[k] = ((self.cutoff() + 0.5 * l) / l).ceil() as i64;
        }
        let mut sum = 0.0;
        for k1 in -kmax[1]..=kmax[1] {
            let y = a[1] + k1 as f64 * grid.box_length(1);
            for k0 in -kmax[0]..=kmax[0] {
                let x = a[0] + k0 as f64 * grid.box_length(0);
                let r = if dim == 1 { x.abs() } else { (x * x + y * y).sqrt() };
                sum += self.radial(r);
            }
        }
        sum
    }
}

/// Kernel sampled on the cell offsets of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    grid: SpatialGrid,
    samples: Vec<f64>,
    l1_norm: f64,
    spectrum: Option<Arc<Vec<Complex64>>>,
}

/// Samples the periodised kernel at every cell-centre offset.
pub fn build_kernel(grid: &SpatialGrid, spec: &KernelSpec) -> Result<DiscreteKernel> {
    spec.validate()?;
    if spec.shape != KernelShape::Zero && spec.length_scale < grid.min_spacing() {
        return Err(FhnError::UnderResolvedKernel {
            length_scale: spec.length_scale,
            spacing: grid.min_spacing(),
        });
    }
    let m = grid.num_cells();
    let samples: Vec<f64> = (0..m)
        .map(|o| {
            let s = grid.signed_offset(o);
            let d = [s[0].unsigned_abs() as f64 * grid.spacing(0), s[1].unsigned_abs() as f64 * grid.spacing(1)];
            spec.periodic_value(grid, &d)
        })
        .collect();
    DiscreteKernel::from_samples(grid.clone(), samples)
}

impl DiscreteKernel {
    /// Kernel from raw offset samples (flat offset index). Samples must be
    /// nonnegative and even under the periodic wrap.
    pub fn from_samples(grid: SpatialGrid, samples: Vec<f64>) -> Result<Self> {
        let m = grid.num_cells();
        if samples.len() != m {
            return Err(FhnError::SizeMismatch { expected: m, found: samples.len() });
        }
        for (o, &s) in samples.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(FhnError::InvalidInput(format!("kernel sample {o} is {s}")));
            }
            let mirror = grid.offset_index(0, o);
            if samples[mirror] != s {
                return Err(FhnError::InvalidInput(format!("kernel is not even: offsets {o} and {mirror} differ")));
            }
        }
        let l1_norm = samples.iter().sum::<f64>() * grid.cell_volume();
        let spectrum = if m > DIRECT_LIMIT {
            let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
            fft_nd(&grid, &mut buf, false);
            Some(Arc::new(buf))
        } else {
            None
        };
        Ok(Self { grid, samples, l1_norm, spectrum })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Kernel value between cells `c` and `c2`.
    #[inline]
    pub fn between(&self, c: usize, c2: usize) -> f64 {
        self.samples[self.grid.offset_index(c, c2)]
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    fn check_len(&self, field: &[f64]) -> Result<()> {
        let m = self.grid.num_cells();
        if field.len() != m {
            return Err(FhnError::SizeMismatch { expected: m, found: field.len() });
        }
        Ok(())
    }

    /// Periodic discrete convolution `(Psi * f)(x_c)` with weight `cell_volume`.
    pub fn convolve(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.check_len(field)?;
        Ok(match &self.spectrum {
            None => self.convolve_direct(field),
            Some(spec) => self.convolve_fft(spec, field),
        })
    }

    /// Direct summation regardless of grid size.
    pub fn convolve_direct(&self, field: &[f64]) -> Vec<f64> {
        let m = self.grid.num_cells();
        let vol = self.grid.cell_volume();
        (0..m)
            .map(|c| {
                let mut acc = 0.0;
                for (c2, &f) in field.iter().enumerate() {
                    acc += self.between(c, c2) * f;
                }
                acc * vol
            })
            .collect()
    }

    fn convolve_fft(&self, spectrum: &[Complex64], field: &[f64]) -> Vec<f64> {
        let m = self.grid.num_cells();
        let mut buf: Vec<Complex64> = field.iter().map(|&f| Complex64::new(f, 0.0)).collect();
        fft_nd(&self.grid, &mut buf, false);
        for (b, s) in buf.iter_mut().zip(spectrum) {
            *b *= s;
        }
        fft_nd(&self.grid, &mut buf, true);
        let scale = self.grid.cell_volume() / m as f64;
        buf.iter().map(|z| z.re * scale).collect()
    }

    /// `L_rho(V) = -(Psi * rho) V + Psi * (rho V)`.
    ///
    /// On directly summed grids this is evaluated as
    /// `cell_volume * sum_{c'} Psi(x_c - x_{c'}) rho_{c'} (V_{c'} - V_c)`,
    /// which vanishes exactly on constant `V`.
    pub fn nonlocal_operator(&self, rho: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rho)?;
        self.check_len(v)?;
        if let Some((cell, &value)) = rho.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
            return Err(FhnError::NegativeDensity { cell, value });
        }
        let m = self.grid.num_cells();
        if self.spectrum.is_none() {
            let vol = self.grid.cell_volume();
            Ok((0..m)
                .map(|c| {
                    let vc = v[c];
                    let mut acc = 0.0;
                    for c2 in 0..m {
                        acc += self.between(c, c2) * rho[c2] * (v[c2] - vc);
                    }
                    acc * vol
                })
                .collect())
        } else {
            let psi_rho = self.convolve(rho)?;
            let rho_v: Vec<f64> = rho.iter().zip(v).map(|(r, x)| r * x).collect();
            let psi_rho_v = self.convolve(&rho_v)?;
            Ok((0..m).map(|c| psi_rho_v[c] - psi_rho[c] * v[c]).collect())
        }
    }
}

/// In-place multidimensional FFT (unnormalised in both directions).
fn fft_nd(grid: &SpatialGrid, data: &mut [Complex64], inverse: bool) {
    let n0 = grid.cells_per_axis(0);
    let n1 = grid.cells_per_axis(1);
    let mut planner = FftPlanner::<f64>::new();
    let f0 = if inverse { planner.plan_fft_inverse(n0) } else { planner.plan_fft_forward(n0) };
    for row in data.chunks_exact_mut(n0) {
        f0.process(row);
    }
    if n1 > 1 {
        let f1 = if inverse { planner.plan_fft_inverse(n1) } else { planner.plan_fft_forward(n1) };
        let mut col = vec![Complex64::new(0.0, 0.0); n1];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                col[i1] = data[i0 + n0 * i1];
            }
            f1.process(&mut col);
            for i1 in 0..n1 {
                data[i0 + n0 * i1] = col[i1];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ones_kernel(cells: usize, cell_volume: f64) -> DiscreteKernel {
        let grid = SpatialGrid::uniform_1d(cell_volume * cells as f64, cells).unwrap();
        DiscreteKernel::from_samples(grid, vec![1.0; cells]).unwrap()
    }

    #[test]
    fn grid_indexing_is_bijective() {
        let g = SpatialGrid::new(&[2.0, 3.0], &[4, 5]).unwrap();
        let mut seen = vec![false; g.num_cells()];
        for i1 in 0..5 {
            for i0 in 0..4 {
                let c = g.index(i0, i1);
                assert_eq!(g.multi_index(c), (i0, i1));
                assert!(!seen[c]);
                seen[c] = true;
                assert_eq!(g.locate(&g.center(c)), Some(c));
            }
        }
        assert_relative_eq!(g.cell_volume(), 0.5 * 0.6, max_relative = 1e-15);
    }

    #[test]
    fn locate_rejects_points_outside_box() {
        let g = SpatialGrid::uniform_1d(2.0, 4).unwrap();
        assert_eq!(g.locate(&[1.0, 0.0]), None);
        assert_eq!(g.locate(&[-1.0, 0.0]), Some(0));
        assert_eq!(g.locate(&[f64::NAN, 0.0]), None);
    }

    #[test]
    fn zero_kernel_has_zero_samples() {
        let g = SpatialGrid::new(&[3.0, 3.0], &[6, 6]).unwrap();
        let k = build_kernel(&g, &KernelSpec::zero()).unwrap();
        assert!(k.samples().iter().all(|&s| s == 0.0));
        assert_eq!(k.l1_norm(), 0.0);
        let out = k.convolve(&vec![2.5; 36]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
        let l = k.nonlocal_operator(&vec![1.0; 36], &(0..36).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_cell_tophat() {
        let g = SpatialGrid::uniform_1d(2.0, 1).unwrap();
        let k = build_kernel(&g, &KernelSpec::tophat(1.0, 2.0)).unwrap();
        assert_eq!(k.samples(), &[1.0]);
        assert_eq!(k.l1_norm(), g.cell_volume());
    }

    #[test]
    fn rejects_under_resolved_kernel() {
        let g = SpatialGrid::uniform_1d(8.0, 64).unwrap();
        let err = build_kernel(&g, &KernelSpec::gaussian(1.0, 0.1)).unwrap_err();
        assert!(matches!(err, FhnError::UnderResolvedKernel { .. }));
    }

    #[test]
    fn gaussian_l1_norm_matches_quadrature() {
        // oracle: composite Simpson on [-40, 40] with 400k panels
        let oracle = {
            let (a, b, n) = (-40.0f64, 40.0f64, 400_000usize);
            let h = (b - a) / n as f64;
            let f = |x: f64| (-0.5 * x * x).exp();
            let mut s = f(a) + f(b);
            for i in 1..n {
                let x = a + i as f64 * h;
                s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
            }
            s * h / 3.0
        };
        assert!((oracle - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        let g = SpatialGrid::uniform_1d(8.0, 64).unwrap();
        let k = build_kernel(&g, &KernelSpec::gaussian(1.0, 1.0)).unwrap();
        assert!((k.l1_norm() - oracle).abs() < 1e-6, "{}", k.l1_norm());
    }

    #[test]
    fn kernel_samples_are_bit_symmetric() {
        for spec in [KernelSpec::gaussian(1.3, 0.7), KernelSpec::exponential(0.4, 1.1), KernelSpec::tophat(2.0, 1.0)] {
            for g in [SpatialGrid::uniform_1d(8.0, 63).unwrap(), SpatialGrid::new(&[4.0, 6.0], &[8, 12]).unwrap()] {
                let k = build_kernel(&g, &spec).unwrap();
                for o in 0..g.num_cells() {
                    assert_eq!(k.samples()[o].to_bits(), k.samples()[g.offset_index(0, o)].to_bits());
                }
            }
        }
    }

    #[test]
    fn two_cell_convolution_example() {
        let k = ones_kernel(2, 0.5);
        assert_eq!(k.convolve(&[1.0, 3.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn constant_field_convolves_to_l1_norm_multiple() {
        let g = SpatialGrid::uniform_1d(8.0, 32).unwrap();
        let k = build_kernel(&g, &KernelSpec::exponential(1.0, 0.5)).unwrap();
        for x in k.convolve(&vec![3.0; 32]).unwrap() {
            assert_relative_eq!(x, 3.0 * k.l1_norm(), max_relative = 1e-13);
        }
    }

    #[test]
    fn two_cell_nonlocal_operator_example() {
        let k = ones_kernel(2, 1.0);
        assert_eq!(k.nonlocal_operator(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), vec![2.0, -2.0]);
    }

    #[test]
    fn nonlocal_operator_annihilates_constants_exactly() {
        let g = SpatialGrid::uniform_1d(8.0, 64).unwrap();
        let k = build_kernel(&g, &KernelSpec::gaussian(1.0, 1.0)).unwrap();
        let rho: Vec<f64> = (0..64).map(|c| (-(g.center(c)[0]).powi(2)).exp()).collect();
        assert!(k.nonlocal_operator(&rho, &vec![0.731; 64]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn size_mismatch_and_negative_density_are_errors() {
        let k = ones_kernel(2, 1.0);
        assert!(matches!(k.convolve(&[1.0]), Err(FhnError::SizeMismatch { .. })));
        assert!(matches!(
            k.nonlocal_operator(&[1.0, -1.0], &[0.0, 0.0]),
            Err(FhnError::NegativeDensity { cell: 1, .. })
        ));
    }

    #[test]
    fn fft_and_direct_agree_on_large_grids() {
        for g in [SpatialGrid::uniform_1d(16.0, 512).unwrap(), SpatialGrid::new(&[8.0, 8.0], &[24, 20]).unwrap()] {
            let k = build_kernel(&g, &KernelSpec::gaussian(0.8, 1.0)).unwrap();
            assert!(k.spectrum.is_some());
            let f: Vec<f64> = (0..g.num_cells()).map(|c| ((c * 7919) % 97) as f64 / 97.0 - 0.3).collect();
            let fast = k.convolve(&f).unwrap();
            let slow = k.convolve_direct(&f);
            let scale = slow.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-10 * scale.max(1.0), "{a} vs {b}");
            }
        }
    }
}
