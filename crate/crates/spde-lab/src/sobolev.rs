//! Sobolev-Slobodeckij and Hoelder norms on grid functions, with the
//! empirical checks tying them to the spectral `V_r` scale: the norm
//! equivalence constant, the multiplication inequality, and the Nemytskii
//! composition bound.
//!
//! All double integrals are quadratures over distinct interior node pairs
//! with cell weight `(M+1)^{-d}` per factor; the diagonal is excluded, which
//! is consistent because the `|g(x) - g(y)|^2` numerator vanishes there and
//! the kernel singularity is integrable against it.

use crate::coefficients::NemytskiiPair;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Domain};
use crate::spectral::{from_spectral, GridField, OperatorSpec, SpectralField};

/// Quadrature `L^2` norm over the interior nodes (weight `(M+1)^{-d}`).
fn l2_quadrature_sq(g: &GridField) -> f64 {
    let w = 1.0 / ((g.m + 1) as f64).powi(g.d as i32);
    g.values.iter().map(|&v| v * v).sum::<f64>() * w
}

/// Sobolev-Slobodeckij `W^{r,2}` norm of nodal values, `r` in (0,1):
/// `(||g||_{L^2}^2 + sum_{x != y} |g(x)-g(y)|^2 / ||x-y||^{d+2r} w^2)^{1/2}`.
pub fn slobodeckij_norm(g: &GridField, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Slobodeckij order must lie in (0,1), got {r}"
        )));
    }
    let m = g.m;
    let h = 1.0 / (m + 1) as f64;
    let cell = h.powi(g.d as i32);
    let semi = match g.d {
        1 => {
            // Lag table: every ordered pair at lag l shares the kernel value.
            let kernel: Vec<f64> = (0..m)
                .map(|l| {
                    if l == 0 {
                        0.0
                    } else {
                        (l as f64 * h).powf(-(1.0 + 2.0 * r))
                    }
                })
                .collect();
            let mut sum = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    let diff = g.values[i] - g.values[j];
                    sum += diff * diff * kernel[j - i];
                }
            }
            2.0 * sum
        }
        2 => {
            let kernel: Vec<Vec<f64>> = (0..m)
                .map(|dr| {
                    (0..m)
                        .map(|dc| {
                            if dr == 0 && dc == 0 {
                                0.0
                            } else {
                                let dist_sq = ((dr * dr + dc * dc) as f64) * h * h;
                                dist_sq.powf(-(1.0 + r))
                            }
                        })
                        .collect()
                })
                .collect();
            let mut sum = 0.0;
            for a1 in 0..m {
                for a2 in 0..m {
                    let ga = g.values[a1 * m + a2];
                    for b1 in a1..m {
                        let row = &kernel[b1 - a1];
                        let start = if b1 == a1 { a2 + 1 } else { 0 };
                        for b2 in start..m {
                            let diff = ga - g.values[b1 * m + b2];
                            sum += diff * diff * row[a2.abs_diff(b2)];
                        }
                    }
                }
            }
            2.0 * sum
        }
        d => {
            return Err(Error::Unsupported(format!(
                "Slobodeckij quadrature implemented for d <= 2, got d = {d}"
            )))
        }
    };
    Ok((l2_quadrature_sq(g) + semi * cell * cell).sqrt())
}

/// Hoelder `C^delta` norm of nodal values, `delta` in (0,1]:
/// sup norm plus the largest difference quotient over node pairs. This is a
/// lower bound of the true norm that converges from below as the grid
/// refines.
pub fn holder_norm(g: &GridField, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hoelder exponent must lie in (0,1], got {delta}"
        )));
    }
    let m = g.m;
    let h = 1.0 / (m + 1) as f64;
    let sup = g.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let semi = match g.d {
        1 => {
            let quotient: Vec<f64> = (0..m)
                .map(|l| {
                    if l == 0 {
                        0.0
                    } else {
                        (l as f64 * h).powf(-delta)
                    }
                })
                .collect();
            let mut best = 0.0f64;
            for i in 0..m {
                for j in (i + 1)..m {
                    let diff = (g.values[i] - g.values[j]).abs();
                    best = best.max(diff * quotient[j - i]);
                }
            }
            best
        }
        2 => {
            let quotient: Vec<Vec<f64>> = (0..m)
                .map(|dr| {
                    (0..m)
                        .map(|dc| {
                            if dr == 0 && dc == 0 {
                                0.0
                            } else {
                                (((dr * dr + dc * dc) as f64).sqrt() * h).powf(-delta)
                            }
                        })
                        .collect()
                })
                .collect();
            let mut best = 0.0f64;
            for a1 in 0..m {
                for a2 in 0..m {
                    let ga = g.values[a1 * m + a2];
                    for b1 in a1..m {
                        let row = &quotient[b1 - a1];
                        let start = if b1 == a1 { a2 + 1 } else { 0 };
                        for b2 in start..m {
                            let diff = (ga - g.values[b1 * m + b2]).abs();
                            best = best.max(diff * row[a2.abs_diff(b2)]);
                        }
                    }
                }
            }
            best
        }
        d => {
            return Err(Error::Unsupported(format!(
                "Hoelder quadrature implemented for d <= 2, got d = {d}"
            )))
        }
    };
    Ok(sup + semi)
}

/// Empirical two-sided equivalence constant between `W^{2r,2}` and `V_r`:
/// the largest of `W/V` and `V/W` over random band-limited fields.
///
/// Valid for `r` in (0, 1/2) away from the critical value 1/4 where the
/// characterization of `V_r` changes. Samples are keyed by index, so
/// enlarging `sample_count` refines the same ensemble.
pub fn equivalence_constant_estimate(
    op: &OperatorSpec,
    r: f64,
    n_modes: usize,
    m: usize,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(r > 0.0 && r < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "equivalence holds for r in (0, 1/2), got {r}"
        )));
    }
    if r == 0.25 {
        return Err(Error::InvalidParameter(
            "r = 1/4 is the critical case of the space characterization".into(),
        ));
    }
    if n_modes == 0 || m < n_modes || sample_count == 0 {
        return Err(Error::InvalidParameter(
            "need n_modes >= 1, m >= n_modes and at least one sample".into(),
        ));
    }
    let table = op.eigenvalue_table(n_modes);
    let mut c_hat = 1.0f64;
    for sample in 0..sample_count {
        let coeffs: Vec<f64> = table
            .iter()
            .enumerate()
            .map(|(flat, &lambda)| {
                lambda.powf(-r - 0.51)
                    * standard_normal(seed, Domain::FieldSampler, sample as u64, flat as u64, 1)
            })
            .collect();
        let v = SpectralField::from_coeffs(*op, n_modes, coeffs)?;
        let spectral = v.fractional_norm(r);
        let grid = from_spectral(&v, m)?;
        let sobolev = slobodeckij_norm(&grid, 2.0 * r)?;
        if spectral == 0.0 || sobolev == 0.0 {
            continue;
        }
        c_hat = c_hat.max(sobolev / spectral).max(spectral / sobolev);
    }
    Ok(c_hat)
}

/// Two sides of the multiplication inequality
/// `||v w||_{W^{r,2}} <= (3d)^{d/2} / sqrt(delta - r) ||v||_{W^{r,2}} ||w||_{C^delta}`.
#[derive(Debug, Clone, Copy)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn multiplication_inequality_check(
    v: &GridField,
    w: &GridField,
    r: f64,
    delta: f64,
) -> Result<InequalityReport> {
    if v.d != w.d || v.m != w.m {
        return Err(Error::ShapeMismatch(format!(
            "factor grids differ: {}^{} vs {}^{}",
            v.m, v.d, w.m, w.d
        )));
    }
    if !(r > 0.0 && r < delta && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < r < delta <= 1, got r = {r}, delta = {delta}"
        )));
    }
    let product = GridField::new(
        v.d,
        v.m,
        v.values
            .iter()
            .zip(&w.values)
            .map(|(&a, &b)| a * b)
            .collect(),
    )?;
    let lhs = slobodeckij_norm(&product, r)?;
    let d = v.d as f64;
    let constant = (3.0 * d).powf(d / 2.0) / (delta - r).sqrt();
    let rhs = constant * slobodeckij_norm(v, r)? * holder_norm(w, delta)?;
    Ok(InequalityReport {
        lhs,
        rhs,
        pass: lhs <= rhs,
    })
}

/// Two sides of the composition bound
/// `||b(., v)||_{W^{r,2}} <= q (3d)^d / (1 - r) (1 + ||v||_{W^{r,2}})`.
pub fn composition_bound_check(
    pair: &NemytskiiPair,
    v: &GridField,
    r: f64,
) -> Result<InequalityReport> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "composition bound requires r in (0,1), got {r}"
        )));
    }
    let composed = pair.multiplier(v);
    let lhs = slobodeckij_norm(&composed, r)?;
    let d = v.d as f64;
    let rhs = pair.q * (3.0 * d).powf(d) / (1.0 - r) * (1.0 + slobodeckij_norm(v, r)?);
    Ok(InequalityReport {
        lhs,
        rhs,
        pass: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn line_grid(m: usize, f: impl Fn(f64) -> f64) -> GridField {
        let values = (0..m).map(|k| f(GridField::coord(m, k))).collect();
        GridField::new(1, m, values).unwrap()
    }

    #[test]
    fn slobodeckij_of_constants() {
        // The interior quadrature of 1 is M/(M+1); it converges to 1 and the
        // difference term vanishes identically.
        let ones = line_grid(128, |_| 1.0);
        let norm = slobodeckij_norm(&ones, 0.3).unwrap();
        assert_relative_eq!(norm, (128.0f64 / 129.0).sqrt(), epsilon = 1e-14);

        let zeros = line_grid(64, |_| 0.0);
        assert_eq!(slobodeckij_norm(&zeros, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn slobodeckij_of_identity_converges_with_order_half() {
        // ||x||_{W^{0.25,2}}^2 = 1/3 + 2/((2-2r)(3-2r)) = 13/15.
        let exact = (13.0f64 / 15.0).sqrt();
        let mut errors = Vec::new();
        for &m in &[64usize, 128, 256, 512] {
            let g = line_grid(m, |x| x);
            let val = slobodeckij_norm(&g, 0.25).unwrap();
            assert!(val < exact, "quadrature approaches from below");
            errors.push(exact - val);
        }
        for pair in errors.windows(2) {
            assert!(pair[1] < pair[0], "monotone approach: {errors:?}");
            assert!(
                pair[1] / pair[0] < 2f64.powf(-0.5) * 1.15,
                "empirical order below 1/2: {errors:?}"
            );
        }
        assert!(errors[3] / exact < 0.01, "within 1% at M = 512");
    }

    #[test]
    fn slobodeckij_rejects_bad_orders_and_dimensions() {
        let g = line_grid(16, |x| x);
        assert!(slobodeckij_norm(&g, 0.0).is_err());
        assert!(slobodeckij_norm(&g, 1.0).is_err());
        assert!(slobodeckij_norm(&g, -0.2).is_err());
        let cube = GridField::new(3, 4, vec![0.0; 64]).unwrap();
        assert!(slobodeckij_norm(&cube, 0.3).is_err());
    }

    #[test]
    fn slobodeckij_two_dimensional_matches_separable_reference() {
        // g = 1 on the square: difference term zero, L^2 part (M/(M+1))^2.
        let m = 24;
        let ones = GridField::new(2, m, vec![1.0; m * m]).unwrap();
        let norm = slobodeckij_norm(&ones, 0.3).unwrap();
        assert_relative_eq!(norm, m as f64 / (m + 1) as f64, epsilon = 1e-13);

        // Symmetry: transposing the grid leaves the norm invariant.
        let g = GridField::new(
            2,
            m,
            (0..m * m)
                .map(|f| {
                    let (i, j) = (f / m, f % m);
                    (i as f64 + 1.0).sin() * (3.0 * (j as f64 + 1.0)).cos()
                })
                .collect(),
        )
        .unwrap();
        let gt = GridField::new(
            2,
            m,
            (0..m * m)
                .map(|f| {
                    let (i, j) = (f / m, f % m);
                    g.values[j * m + i]
                })
                .collect(),
        )
        .unwrap();
        assert_relative_eq!(
            slobodeckij_norm(&g, 0.35).unwrap(),
            slobodeckij_norm(&gt, 0.35).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn holder_norm_reference_values() {
        let c = line_grid(64, |_| -2.5);
        assert_relative_eq!(holder_norm(&c, 0.5).unwrap(), 2.5, epsilon = 1e-14);

        // g(x) = x at delta = 1: sup M/(M+1), difference quotient exactly 1.
        let lin = line_grid(512, |x| x);
        assert_relative_eq!(
            holder_norm(&lin, 1.0).unwrap(),
            2.0,
            max_relative = 2e-3
        );

        // sqrt(2) cos(pi x) at delta = 1: sup sqrt(2), steepest secant at the
        // midpoint approaches sqrt(2) pi.
        let cosine = line_grid(512, |x| 2f64.sqrt() * (PI * x).cos());
        assert_relative_eq!(
            holder_norm(&cosine, 1.0).unwrap(),
            2f64.sqrt() * (1.0 + PI),
            max_relative = 1e-4
        );

        assert!(holder_norm(&lin, 0.0).is_err());
        assert!(holder_norm(&lin, 1.0001).is_err());
    }

    #[test]
    fn holder_norm_bound_dominates_grid_estimate_for_noise_modes() {
        // The analytic C^delta bounds from the noise model must dominate the
        // empirical grid norms of the same functions.
        let spec = crate::noise::CovarianceSpectrum::new(
            crate::noise::NoiseKind::Cosine,
            1,
            1.0,
            2.0,
            8,
        )
        .unwrap();
        for j in [0usize, 1, 3, 7] {
            for &delta in &[0.3, 0.7, 1.0] {
                let grid = GridField::new(1, 257, spec.basis_grid(&[j], 257).unwrap()).unwrap();
                let empirical = holder_norm(&grid, delta).unwrap();
                let bound = crate::noise::holder_norm_bound(&spec, &[j], delta).unwrap();
                assert!(
                    empirical <= bound,
                    "mode {j}, delta {delta}: grid norm {empirical} above bound {bound}"
                );
            }
        }
    }

    #[test]
    fn equivalence_estimate_is_finite_and_stable() {
        let op = OperatorSpec::new(1, 1.0).unwrap();
        for &r in &[0.1, 0.2, 0.35, 0.45] {
            let c = equivalence_constant_estimate(&op, r, 24, 96, 20, 13).unwrap();
            assert!(c >= 1.0 && c.is_finite());
            // Nested refinement: more samples on a finer grid stay close.
            let c2 = equivalence_constant_estimate(&op, r, 24, 192, 40, 13).unwrap();
            assert!(
                (c2 - c).abs() / c < 0.10,
                "r = {r}: estimate drifted {c} -> {c2}"
            );
        }
        assert!(equivalence_constant_estimate(&op, 0.25, 16, 64, 5, 1).is_err());
        assert!(equivalence_constant_estimate(&op, 0.6, 16, 64, 5, 1).is_err());
        assert!(equivalence_constant_estimate(&op, 0.2, 16, 8, 5, 1).is_err());
    }

    #[test]
    fn smooth_non_dirichlet_function_splits_the_scales() {
        // cos(pi x) has a finite W^{0.8,2} norm but its V_{0.4} partial sums
        // diverge: the sine coefficients decay like 1/k, so the spectral sum
        // at r = 0.4 grows like N^{0.6}. This is the boundary obstruction.
        let op = OperatorSpec::new(1, 1.0).unwrap();
        let sine_coeff = |k: usize| {
            if k % 2 == 0 {
                // <e_k, cos(pi .)> for even k.
                4.0 * k as f64 / (PI * ((k * k) as f64 - 1.0))
            } else {
                0.0
            }
        };
        let partial = |n: usize| -> f64 {
            (1..=n)
                .map(|k| {
                    let c = sine_coeff(k);
                    let lambda = op.eigenvalue(&[k]).unwrap();
                    c * c * lambda.powf(0.8)
                })
                .sum()
        };
        let (s1, s2, s3) = (partial(256), partial(512), partial(1024));
        assert!(s2 / s1 > 1.35 && s3 / s2 > 1.35, "divergent tail: {s1} {s2} {s3}");

        let coarse = slobodeckij_norm(&line_grid(256, |x| (PI * x).cos()), 0.8).unwrap();
        let fine = slobodeckij_norm(&line_grid(512, |x| (PI * x).cos()), 0.8).unwrap();
        assert!(
            (fine - coarse).abs() / coarse < 0.02,
            "W^{{0.8,2}} norm should stabilize: {coarse} vs {fine}"
        );
    }

    #[test]
    fn multiplication_inequality_reference_cases() {
        let m = 128;
        let v = line_grid(m, |x| x);
        let ones = line_grid(m, |_| 1.0);

        // w = 1 has unit Hoelder norm; the constant exceeds one.
        let report = multiplication_inequality_check(&v, &ones, 0.3, 0.9).unwrap();
        assert!(report.pass);
        assert_relative_eq!(
            report.lhs,
            slobodeckij_norm(&v, 0.3).unwrap(),
            epsilon = 1e-13
        );

        let zeros = line_grid(m, |_| 0.0);
        let trivial = multiplication_inequality_check(&zeros, &zeros, 0.2, 0.8).unwrap();
        assert!(trivial.pass && trivial.lhs == 0.0);

        let w = line_grid(m, |x| (PI * x).cos());
        let report = multiplication_inequality_check(&v, &w, 0.3, 0.9).unwrap();
        assert!(report.pass, "lhs {} vs rhs {}", report.lhs, report.rhs);
        assert!(report.lhs > 0.0 && report.rhs.is_finite());

        assert!(multiplication_inequality_check(&v, &w, 0.9, 0.9).is_err());
        assert!(multiplication_inequality_check(&v, &w, 0.95, 0.9).is_err());
    }

    #[test]
    fn composition_bound_reference_cases() {
        let m = 128;
        let v = line_grid(m, |x| (3.0 * PI * x).sin() * 0.8);

        let null = NemytskiiPair::custom("null", None, Expr::parse("0").unwrap(), 0.0, 0.0)
            .unwrap();
        let report = composition_bound_check(&null, &v, 0.4).unwrap();
        assert!(report.pass && report.lhs == 0.0);

        let ident = NemytskiiPair::linear_state();
        let report = composition_bound_check(&ident, &v, 0.4).unwrap();
        assert!(report.pass);
        assert_relative_eq!(
            report.lhs,
            slobodeckij_norm(&v, 0.4).unwrap(),
            epsilon = 1e-13
        );

        let report = composition_bound_check(&NemytskiiPair::nonlinear(), &v, 0.45).unwrap();
        assert!(report.pass, "lhs {} vs rhs {}", report.lhs, report.rhs);

        assert!(composition_bound_check(&ident, &v, 0.0).is_err());
        assert!(composition_bound_check(&ident, &v, 1.0).is_err());
    }
}
