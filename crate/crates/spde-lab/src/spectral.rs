//! Dirichlet Laplacian eigenbasis on `(0,1)^d` and fractional-power norms.
//!
//! The operator is `A = kappa * Laplace` with Dirichlet boundary conditions.
//! Its eigenpairs are
//!
//! ```text
//!     lambda_i = kappa * pi^2 * (i_1^2 + ... + i_d^2),
//!     e_i(x)   = 2^{d/2} * sin(i_1 pi x_1) * ... * sin(i_d pi x_d),
//! ```
//!
//! indexed by multi-indices `i` with every component >= 1. Fractional-power
//! spaces `V_r = D((-A)^r)` carry the norm `(sum lambda_i^{2r} a_i^2)^{1/2}`;
//! the shift parameter in `(eta - A)^r` is fixed to zero since the spectrum
//! is bounded away from the origin.

use crate::error::{Error, Result};
use crate::transform::{dst_all_axes, embed, restrict};
use std::f64::consts::PI;

/// Diffusion operator specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSpec {
    pub d: usize,
    pub kappa: f64,
    pub eta: f64,
}

impl OperatorSpec {
    pub fn new(d: usize, kappa: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "diffusion coefficient must be positive and finite, got {kappa}"
            )));
        }
        Ok(Self { d, kappa, eta: 0.0 })
    }

    /// `lambda_i = kappa pi^2 (i_1^2 + ... + i_d^2)`; every component must be >= 1.
    pub fn eigenvalue(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.d {
            return Err(Error::InvalidIndex(format!(
                "expected {} components, got {}",
                self.d,
                index.len()
            )));
        }
        if index.iter().any(|&i| i == 0) {
            return Err(Error::InvalidIndex(
                "multi-index components must be >= 1".into(),
            ));
        }
        let sum_sq: f64 = index.iter().map(|&i| (i * i) as f64).sum();
        Ok(self.kappa * PI * PI * sum_sq)
    }

    /// `e_i(x) = 2^{d/2} prod_m sin(i_m pi x_m)` for `x` strictly inside the cube.
    pub fn eigenfunction_eval(&self, index: &[usize], x: &[f64]) -> Result<f64> {
        if index.len() != self.d || x.len() != self.d {
            return Err(Error::InvalidIndex(format!(
                "expected {} components in index and point",
                self.d
            )));
        }
        if index.iter().any(|&i| i == 0) {
            return Err(Error::InvalidIndex(
                "multi-index components must be >= 1".into(),
            ));
        }
        if x.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "evaluation point must lie strictly inside (0,1)^{}, got {x:?}",
                self.d
            )));
        }
        let mut v = 2f64.powf(self.d as f64 / 2.0);
        for (&i, &c) in index.iter().zip(x) {
            v *= (i as f64 * PI * c).sin();
        }
        Ok(v)
    }

    /// Flat table of eigenvalues over `{1..n}^d` in row-major order
    /// (last component varies fastest).
    pub fn eigenvalue_table(&self, n_modes: usize) -> Vec<f64> {
        let count = n_modes.pow(self.d as u32);
        let mut idx = vec![1usize; self.d];
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let sum_sq: usize = idx.iter().map(|&i| i * i).sum();
            out.push(self.kappa * PI * PI * sum_sq as f64);
            for axis in (0..self.d).rev() {
                idx[axis] += 1;
                if idx[axis] <= n_modes {
                    break;
                }
                idx[axis] = 1;
            }
        }
        out
    }
}

/// Galerkin element of `span{e_i : i in {1..N}^d}`, stored as row-major
/// coefficients against the orthonormal eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub op: OperatorSpec,
    pub n_modes: usize,
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(op: OperatorSpec, n_modes: usize) -> Self {
        Self {
            op,
            n_modes,
            coeffs: vec![0.0; n_modes.pow(op.d as u32)],
        }
    }

    pub fn from_coeffs(op: OperatorSpec, n_modes: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != n_modes.pow(op.d as u32) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coefficients for N={} in d={}, got {}",
                n_modes.pow(op.d as u32),
                n_modes,
                op.d,
                coeffs.len()
            )));
        }
        Ok(Self {
            op,
            n_modes,
            coeffs,
        })
    }

    /// The basis element `e_index` inside an `N`-mode Galerkin space.
    pub fn basis(op: OperatorSpec, n_modes: usize, index: &[usize]) -> Result<Self> {
        if index.len() != op.d {
            return Err(Error::InvalidIndex(format!(
                "expected {} components, got {}",
                op.d,
                index.len()
            )));
        }
        if index.iter().any(|&i| i == 0 || i > n_modes) {
            return Err(Error::InvalidIndex(format!(
                "index {index:?} outside {{1..{n_modes}}}^{}",
                op.d
            )));
        }
        let mut field = Self::zeros(op, n_modes);
        let mut flat = 0;
        for &i in index {
            flat = flat * n_modes + (i - 1);
        }
        field.coeffs[flat] = 1.0;
        Ok(field)
    }

    /// `V_r` norm `(sum_i lambda_i^{2r} a_i^2)^{1/2}` for `r >= 0`.
    pub fn fractional_norm(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "fractional order must be nonnegative");
        if r == 0.0 {
            return self.h_norm();
        }
        let table = self.op.eigenvalue_table(self.n_modes);
        self.coeffs
            .iter()
            .zip(&table)
            .map(|(&a, &l)| l.powf(2.0 * r) * a * a)
            .sum::<f64>()
            .sqrt()
    }

    /// Plain `L^2 = H` norm (Parseval).
    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|&a| a * a).sum::<f64>().sqrt()
    }

    /// Applies the analytic semigroup: coefficients scale by `exp(-lambda_i t)`.
    pub fn semigroup(&self, t: f64) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "semigroup time must be nonnegative, got {t}"
            )));
        }
        let table = self.op.eigenvalue_table(self.n_modes);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&table)
            .map(|(&a, &l)| a * (-l * t).exp())
            .collect();
        Ok(SpectralField {
            op: self.op,
            n_modes: self.n_modes,
            coeffs,
        })
    }

    /// Galerkin truncation `Pi_n` onto the leading `n^d` modes.
    pub fn truncate(&self, n: usize) -> SpectralField {
        if n >= self.n_modes {
            return self.clone();
        }
        SpectralField {
            op: self.op,
            n_modes: n,
            coeffs: restrict(&self.coeffs, self.n_modes, n, self.op.d),
        }
    }
}

/// Nodal values on the uniform interior grid `x_k = k/(M+1)`, `k = 1..=M`
/// per dimension, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub d: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(d: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m.pow(d as u32) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} nodal values, got {}",
                m.pow(d as u32),
                values.len()
            )));
        }
        Ok(Self { d, m, values })
    }

    /// Grid spacing `1/(M+1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.m + 1) as f64
    }

    /// Coordinate of one-dimensional node index `k in 0..M`.
    pub fn coord(m: usize, k: usize) -> f64 {
        (k + 1) as f64 / (m + 1) as f64
    }
}

/// Evaluates a spectral field on the `M^d` interior grid.
///
/// Modes above `M` (possible when `M < N`) cannot be represented on the grid
/// and are dropped, i.e. coarse grids sample the truncation `Pi_M v`.
pub fn from_spectral(v: &SpectralField, m: usize) -> Result<GridField> {
    if m == 0 {
        return Err(Error::InvalidParameter(
            "grid needs at least one interior node".into(),
        ));
    }
    let d = v.op.d;
    let n_eff = v.n_modes.min(m);
    let coeffs = if n_eff < v.n_modes {
        restrict(&v.coeffs, v.n_modes, n_eff, d)
    } else {
        v.coeffs.clone()
    };
    let mut values = embed(&coeffs, n_eff, m, d);
    dst_all_axes(&mut values, m, d);
    let scale = 2f64.powf(d as f64 / 2.0);
    for slot in values.iter_mut() {
        *slot *= scale;
    }
    GridField::new(d, m, values)
}

/// Quadrature analysis of nodal values: coefficient `i` approximates
/// `<e_i, g>` by `(M+1)^{-d} sum_k g(x_k) e_i(x_k)`, which is exact for
/// sine polynomials of degree up to `M`. Returns all `M^d` coefficients.
pub fn to_spectral(g: &GridField, op: &OperatorSpec) -> Result<SpectralField> {
    if op.d != g.d {
        return Err(Error::ShapeMismatch(format!(
            "operator dimension {} does not match grid dimension {}",
            op.d, g.d
        )));
    }
    let mut coeffs = g.values.clone();
    dst_all_axes(&mut coeffs, g.m, g.d);
    let scale = (2f64.sqrt() / (g.m + 1) as f64).powi(g.d as i32);
    for slot in coeffs.iter_mut() {
        *slot *= scale;
    }
    SpectralField::from_coeffs(*op, g.m, coeffs)
}

/// Outcome of scanning the two smoothing estimates of the analytic semigroup,
///
/// ```text
///     (t lambda)^r  exp(-lambda t)      <= (r/e)^r   (sharp)
///     (t lambda)^{-r} |exp(-lambda t)-1| <= 1
/// ```
///
/// over a grid of `(t, lambda)` pairs.
#[derive(Debug, Clone)]
pub struct SemigroupBoundReport {
    pub r: f64,
    pub max_power_bound: f64,
    pub max_difference_bound: f64,
    /// The sharp constant `(r/e)^r` for the first estimate.
    pub reference: f64,
    pub pass: bool,
}

const BOUND_SLACK: f64 = 1e-12;

pub fn semigroup_bound_check(
    r: f64,
    t_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<SemigroupBoundReport> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!(
            "smoothing order must lie in [0,1], got {r}"
        )));
    }
    if t_grid.iter().any(|&t| !(t >= 0.0))
        || lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite())
    {
        return Err(Error::InvalidParameter(
            "need t >= 0 and lambda > 0 on the scan grid".into(),
        ));
    }
    let reference = if r == 0.0 { 1.0 } else { (r / std::f64::consts::E).powf(r) };
    let mut max_power: f64 = 0.0;
    let mut max_diff: f64 = 0.0;
    for &t in t_grid {
        for &l in lambda_grid {
            let x = t * l;
            let (power, diff) = if x == 0.0 {
                (if r == 0.0 { 1.0 } else { 0.0 }, 0.0)
            } else {
                // -expm1(-x) = 1 - exp(-x) without cancellation near x = 0.
                (x.powf(r) * (-x).exp(), x.powf(-r) * (-(-x).exp_m1()))
            };
            max_power = max_power.max(power);
            max_diff = max_diff.max(diff);
        }
    }
    Ok(SemigroupBoundReport {
        r,
        max_power_bound: max_power,
        max_difference_bound: max_diff,
        reference,
        pass: max_power <= reference + BOUND_SLACK && max_diff <= 1.0 + BOUND_SLACK,
    })
}
