//! Critical-exponent estimation from moment series.
//!
//! Membership of the solution in `V_gamma` is probed through its only
//! finite-dimensional observable: the growth of `E ||Pi_N X_t||^2_{V_gamma}`
//! as the Galerkin truncation `N` increases. Below the critical exponent the
//! partial sums saturate; above it they grow polynomially. The estimated
//! threshold is the smallest grid exponent whose last-octave slope exceeds a
//! tolerance. Temporal regularity is estimated by a log–log fit of increment
//! moments against the lag.

use crate::error::{Error, Result};
use crate::noise::{CovarianceSpectrum, NoiseKind};
use crate::simulator::{ou_oracle_moment, AdditiveKind};
use crate::spectral::OperatorSpec;

/// Default threshold on the last-octave slope of `log` moments vs `log N`.
pub const DEFAULT_SLOPE_TOL: f64 = 0.05;

/// Moments of one norm order across Galerkin truncations.
#[derive(Debug, Clone)]
pub struct GammaSeries {
    pub gamma: f64,
    /// `(N, E ||Pi_N X||^2_{V_gamma})`, strictly increasing in `N`.
    pub points: Vec<(usize, f64)>,
}

/// Fitted growth of one gamma series.
#[derive(Debug, Clone)]
pub struct GammaSlopeRow {
    pub gamma: f64,
    /// Least-squares slope of `ln` moment against `ln N` over all points.
    pub slope: f64,
    pub std_error: f64,
    /// Slope between the two largest truncations; the divergence statistic.
    pub last_octave_slope: f64,
    pub flagged: bool,
}

/// Outcome of a truncation scan over a gamma grid.
#[derive(Debug, Clone)]
pub struct SpatialScanReport {
    pub slope_tol: f64,
    pub rows: Vec<GammaSlopeRow>,
    /// Smallest flagged grid exponent; `None` when nothing diverges on the
    /// grid or the flag profile is inconsistent.
    pub estimated_gamma_star: Option<f64>,
    /// Largest unflagged exponent below the estimate, when one exists.
    pub bracket: Option<(f64, f64)>,
    /// Divergence flags were not monotone across the grid.
    pub inconclusive: bool,
}

fn log_points(points: &[(usize, f64)]) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .map(|&(n, v)| {
            if n == 0 {
                return Err(Error::Data("truncation level must be positive".into()));
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Data(format!(
                    "moment at N={n} must be positive and finite, got {v}"
                )));
            }
            Ok(((n as f64).ln(), v.ln()))
        })
        .collect()
}

/// Least-squares line through `(x, y)`: `(slope, slope standard error)`.
fn ols_slope(xy: &[(f64, f64)]) -> (f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if xy.len() == 2 {
        return (slope, 0.0);
    }
    let rss: f64 = xy
        .iter()
        .map(|p| {
            let fit = my + slope * (p.0 - mx);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

/// Scans a gamma grid for the onset of truncation divergence.
///
/// Requires at least four truncation levels per series and a gamma grid in
/// strictly increasing order. The estimate is the smallest flagged exponent;
/// a flag profile that turns back off above a flagged exponent is reported
/// as inconclusive instead.
pub fn spatial_scan(series: &[GammaSeries], slope_tol: f64) -> Result<SpatialScanReport> {
    if series.is_empty() {
        return Err(Error::Data("no gamma series supplied".into()));
    }
    if !(slope_tol > 0.0) || !slope_tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "slope tolerance must be positive, got {slope_tol}"
        )));
    }
    for pair in series.windows(2) {
        if !(pair[1].gamma > pair[0].gamma) {
            return Err(Error::Data(
                "gamma grid must be strictly increasing".into(),
            ));
        }
    }
    let mut rows = Vec::with_capacity(series.len());
    for entry in series {
        if entry.points.len() < 4 {
            return Err(Error::Data(format!(
                "need at least 4 truncation levels, got {} for gamma={}",
                entry.points.len(),
                entry.gamma
            )));
        }
        if entry.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Data(
                "truncation levels must be strictly increasing".into(),
            ));
        }
        let xy = log_points(&entry.points)?;
        let (slope, std_error) = ols_slope(&xy);
        let (xa, ya) = xy[xy.len() - 2];
        let (xb, yb) = xy[xy.len() - 1];
        let last_octave_slope = (yb - ya) / (xb - xa);
        rows.push(GammaSlopeRow {
            gamma: entry.gamma,
            slope,
            std_error,
            last_octave_slope,
            flagged: last_octave_slope > slope_tol,
        });
    }
    let first_flagged = rows.iter().position(|r| r.flagged);
    let inconclusive = match first_flagged {
        Some(i) => rows[i..].iter().any(|r| !r.flagged),
        None => false,
    };
    let estimated_gamma_star = match (first_flagged, inconclusive) {
        (Some(i), false) => Some(rows[i].gamma),
        _ => None,
    };
    let bracket = match (first_flagged, inconclusive) {
        (Some(i), false) if i > 0 => Some((rows[i - 1].gamma, rows[i].gamma)),
        _ => None,
    };
    Ok(SpatialScanReport {
        slope_tol,
        rows,
        estimated_gamma_star,
        bracket,
        inconclusive,
    })
}

/// Builds the oracle truncation series for one gamma.
///
/// When `couple_noise` is set the noise truncation follows the state
/// truncation (`J = N`), which is how the scans probe the underlying
/// infinite series; otherwise the template's `J` is kept fixed.
pub fn oracle_scan_series(
    template: &CovarianceSpectrum,
    op: &OperatorSpec,
    kind: AdditiveKind,
    gamma: f64,
    t: f64,
    n_list: &[usize],
    couple_noise: bool,
) -> Result<GammaSeries> {
    let points = n_list
        .iter()
        .map(|&n| {
            let spectrum = if couple_noise {
                CovarianceSpectrum::new(template.kind, template.d, template.nu, template.rho, n)?
            } else {
                template.clone()
            };
            let oracle = ou_oracle_moment(&spectrum, op, gamma, t, kind, n)?;
            Ok((n, oracle.value))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GammaSeries { gamma, points })
}

/// Log–log least-squares fit of increment moments against the lag.
#[derive(Debug, Clone)]
pub struct TemporalFitReport {
    /// Estimated Hölder exponent (the raw slope divided by `p`).
    pub beta_hat: f64,
    pub std_error: f64,
    /// Moment order of the data that was fitted.
    pub p: f64,
    /// `(h, moment)` pairs that survived the resolution floor.
    pub used: Vec<(f64, f64)>,
    /// Fit residuals in `ln` moment units, aligned with `used`.
    pub residuals: Vec<f64>,
}

/// Fits `E ||X_{t+h} - X_t||^p_{V_r} ~ h^{p beta}` over dyadic lags.
///
/// Lags below `8 * dt_floor` are discarded before fitting, since near the
/// step size the scheme cannot resolve the increment; pass zero to keep all
/// lags (exact series data).
pub fn temporal_fit(points: &[(f64, f64)], p: f64, dt_floor: f64) -> Result<TemporalFitReport> {
    if points.len() < 5 {
        return Err(Error::Data(format!(
            "need at least 5 lags for a temporal fit, got {}",
            points.len()
        )));
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "moment order must be positive, got {p}"
        )));
    }
    if !(dt_floor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution floor must be nonnegative, got {dt_floor}"
        )));
    }
    for &(h, v) in points {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Data(format!("lags must be positive, got {h}")));
        }
        if v.is_nan() || v < 0.0 {
            return Err(Error::Data(format!(
                "increment moment at h={h} must be nonnegative, got {v}"
            )));
        }
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(h, _)| h >= 8.0 * dt_floor)
        .copied()
        .collect();
    if used.len() < 3 {
        return Err(Error::Data(format!(
            "resolution floor {dt_floor} leaves only {} usable lags",
            used.len()
        )));
    }
    let xy = used
        .iter()
        .map(|&(h, v)| {
            if !(v > 0.0) {
                return Err(Error::Data(format!(
                    "increment moment at h={h} must be positive for a log fit"
                )));
            }
            Ok((h.ln(), v.ln()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (slope, std_error) = ols_slope(&xy);
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / xy.len() as f64;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64;
    let residuals = xy
        .iter()
        .map(|&(x, y)| y - (my + slope * (x - mx)))
        .collect();
    Ok(TemporalFitReport {
        beta_hat: slope / p,
        std_error: std_error / p,
        p,
        used,
        residuals,
    })
}

/// Critical spatial exponent claimed by the regularity theory.
///
/// For eigenbasis noise the threshold is `(rho - d + 2)/4`. For the cosine
/// basis the diffusion assumption holds for `alpha` up to
/// `min(alpha_cap, delta_max/2)` with `delta_max = min(1, (rho-1)/2)` the
/// admissible Hölder order of the basis, and `alpha_cap` improving from 1/4
/// to 1/2 when the coefficient respects the boundary; the solution then
/// gains another 1/2. Values are capped at 1, the range the theory covers.
pub fn predicted_gamma_star(
    kind: NoiseKind,
    d: usize,
    rho: f64,
    boundary_compatible: bool,
) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    match kind {
        NoiseKind::Cosine => {
            if d != 1 {
                return Err(Error::Unsupported(
                    "cosine noise is one-dimensional".into(),
                ));
            }
            if rho <= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "cosine noise needs rho > 1 for a trace-class covariance, got {rho}"
                )));
            }
            let delta_max = (0.5 * (rho - 1.0)).min(1.0);
            let alpha_cap: f64 = if boundary_compatible { 0.5 } else { 0.25 };
            Ok(0.5 + alpha_cap.min(0.5 * delta_max))
        }
        NoiseKind::Commutative => {
            if rho <= d as f64 {
                return Err(Error::InvalidParameter(format!(
                    "eigenbasis noise needs rho > d for a trace-class covariance, got rho={rho}, d={d}"
                )));
            }
            Ok(((rho - d as f64 + 2.0) / 4.0).min(1.0))
        }
    }
}

/// One temporal exponent compared against its predicted value.
#[derive(Debug, Clone)]
pub struct TemporalExponent {
    pub r: f64,
    pub beta_hat: f64,
    pub std_error: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub within: bool,
    pub max_abs_residual: f64,
}

/// Inputs for one preset's verdict.
#[derive(Debug, Clone)]
pub struct ThresholdEntry {
    pub preset: String,
    pub predicted_gamma_star: f64,
    pub scan: Option<SpatialScanReport>,
    /// `(r, fit)` pairs from increment data.
    pub temporal: Vec<(f64, TemporalFitReport)>,
    /// Acceptance window for the estimated spatial threshold.
    pub gamma_window: (f64, f64),
    /// Tolerance on each temporal exponent.
    pub exponent_tol: f64,
}

/// Comparison of predicted against estimated regularity for one preset.
#[derive(Debug, Clone)]
pub struct RegularityVerdict {
    pub preset: String,
    pub predicted_gamma_star: f64,
    pub estimated_gamma_star: Option<f64>,
    pub slopes: Vec<GammaSlopeRow>,
    pub temporal: Vec<TemporalExponent>,
    /// All requested inputs were present and conclusive.
    pub complete: bool,
    pub pass: bool,
}

/// Assembles verdicts from completed scans and fits.
///
/// The temporal exponent expected at order `r` is `min(gamma* - r, 1/2)`
/// with the preset's predicted threshold. A missing or inconclusive scan
/// yields an incomplete, failing verdict rather than an error.
pub fn threshold_table(entries: &[ThresholdEntry]) -> Vec<RegularityVerdict> {
    entries
        .iter()
        .map(|entry| {
            let (estimated, slopes, scan_ok) = match &entry.scan {
                Some(scan) => (
                    scan.estimated_gamma_star,
                    scan.rows.clone(),
                    !scan.inconclusive,
                ),
                None => (None, Vec::new(), false),
            };
            let temporal: Vec<TemporalExponent> = entry
                .temporal
                .iter()
                .map(|(r, fit)| {
                    let expected = (entry.predicted_gamma_star - r).min(0.5);
                    let within = (fit.beta_hat - expected).abs() <= entry.exponent_tol;
                    let max_abs_residual = fit
                        .residuals
                        .iter()
                        .fold(0.0f64, |acc, &e| acc.max(e.abs()));
                    TemporalExponent {
                        r: *r,
                        beta_hat: fit.beta_hat,
                        std_error: fit.std_error,
                        expected,
                        tolerance: entry.exponent_tol,
                        within,
                        max_abs_residual,
                    }
                })
                .collect();
            let complete = scan_ok && estimated.is_some();
            let gamma_ok = estimated
                .map(|g| g >= entry.gamma_window.0 && g <= entry.gamma_window.1)
                .unwrap_or(false);
            let temporal_ok = temporal.iter().all(|t| t.within);
            RegularityVerdict {
                preset: entry.preset.clone(),
                predicted_gamma_star: entry.predicted_gamma_star,
                estimated_gamma_star: estimated,
                slopes,
                temporal,
                complete,
                pass: complete && gamma_ok && temporal_ok,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CovarianceSpectrum;
    use crate::simulator::ou_oracle_time_increment;
    use approx::assert_relative_eq;

    fn power_series(gamma: f64, exponent: f64, scale: f64) -> GammaSeries {
        GammaSeries {
            gamma,
            points: (6..=12)
                .map(|k| {
                    let n = 1usize << k;
                    (n, scale * (n as f64).powf(exponent))
                })
                .collect(),
        }
    }

    #[test]
    fn scan_recovers_exact_power_laws() {
        let series = vec![
            power_series(0.5, 0.0, 2.0),
            power_series(0.6, 0.001, 1.0),
            power_series(0.7, 0.4, 0.3),
            power_series(0.8, 0.8, 0.1),
        ];
        let report = spatial_scan(&series, DEFAULT_SLOPE_TOL).unwrap();
        assert!(!report.inconclusive);
        assert_eq!(report.estimated_gamma_star, Some(0.7));
        assert_eq!(report.bracket, Some((0.6, 0.7)));
        let flags: Vec<bool> = report.rows.iter().map(|r| r.flagged).collect();
        assert_eq!(flags, vec![false, false, true, true]);
        assert_relative_eq!(report.rows[2].slope, 0.4, max_relative = 1e-10);
        assert_relative_eq!(report.rows[2].last_octave_slope, 0.4, max_relative = 1e-10);
        assert!(report.rows[2].std_error < 1e-10);
    }

    #[test]
    fn scan_reports_non_monotone_flags_as_inconclusive() {
        let series = vec![
            power_series(0.5, 0.4, 1.0),
            power_series(0.6, 0.0, 1.0),
            power_series(0.7, 0.5, 1.0),
        ];
        let report = spatial_scan(&series, DEFAULT_SLOPE_TOL).unwrap();
        assert!(report.inconclusive);
        assert_eq!(report.estimated_gamma_star, None);
        assert_eq!(report.bracket, None);
    }

    #[test]
    fn scan_is_scale_invariant() {
        let base = vec![power_series(0.5, 0.02, 1.0), power_series(0.7, 0.3, 1.0)];
        let scaled: Vec<GammaSeries> = base
            .iter()
            .map(|s| GammaSeries {
                gamma: s.gamma,
                points: s.points.iter().map(|&(n, v)| (n, 17.0 * v)).collect(),
            })
            .collect();
        let a = spatial_scan(&base, DEFAULT_SLOPE_TOL).unwrap();
        let b = spatial_scan(&scaled, DEFAULT_SLOPE_TOL).unwrap();
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_relative_eq!(ra.slope, rb.slope, max_relative = 1e-12);
            assert_relative_eq!(
                ra.last_octave_slope,
                rb.last_octave_slope,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn scan_rejects_degenerate_inputs() {
        assert!(spatial_scan(&[], DEFAULT_SLOPE_TOL).is_err());
        let short = GammaSeries {
            gamma: 0.5,
            points: vec![(64, 1.0), (128, 1.0), (256, 1.0)],
        };
        assert!(spatial_scan(&[short], DEFAULT_SLOPE_TOL).is_err());
        let negative = GammaSeries {
            gamma: 0.5,
            points: vec![(64, 1.0), (128, -1.0), (256, 1.0), (512, 1.0)],
        };
        assert!(spatial_scan(&[negative], DEFAULT_SLOPE_TOL).is_err());
        let unordered = vec![power_series(0.7, 0.0, 1.0), power_series(0.5, 0.0, 1.0)];
        assert!(spatial_scan(&unordered, DEFAULT_SLOPE_TOL).is_err());
    }

    #[test]
    fn oracle_scan_finds_commutative_threshold() {
        // rho = 2 in one dimension: the series threshold is 3/4.
        let template =
            CovarianceSpectrum::new(NoiseKind::Commutative, 1, 1.0, 2.0, 64).unwrap();
        let op = OperatorSpec::new(1, 1.0).unwrap();
        let n_list: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
        let grid = [0.6, 0.65, 0.7, 0.75, 0.8, 0.85];
        let series: Vec<GammaSeries> = grid
            .iter()
            .map(|&g| {
                oracle_scan_series(
                    &template,
                    &op,
                    AdditiveKind::Commutative,
                    g,
                    f64::INFINITY,
                    &n_list,
                    true,
                )
                .unwrap()
            })
            .collect();
        let report = spatial_scan(&series, DEFAULT_SLOPE_TOL).unwrap();
        assert!(!report.inconclusive);
        assert_eq!(report.estimated_gamma_star, Some(0.75));
        assert_eq!(report.bracket, Some((0.7, 0.75)));
        // Above threshold the partial sums grow like N^{4 gamma - 3}.
        let top = report.rows.last().unwrap();
        assert!((top.last_octave_slope - 0.4).abs() < 0.1, "{top:?}");
    }

    #[test]
    fn temporal_fit_recovers_exact_exponents() {
        let points: Vec<(f64, f64)> = (2..=8)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 3.0 * h.powf(1.0))
            })
            .collect();
        let fit = temporal_fit(&points, 2.0, 0.0).unwrap();
        assert_relative_eq!(fit.beta_hat, 0.5, max_relative = 1e-12);
        assert!(fit.std_error < 1e-12);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-12));
        let fit4 = temporal_fit(&points, 4.0, 0.0).unwrap();
        assert_relative_eq!(fit4.beta_hat, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn temporal_fit_applies_resolution_floor() {
        let points: Vec<(f64, f64)> = (1..=8)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, h)
            })
            .collect();
        let fit = temporal_fit(&points, 2.0, 2f64.powi(-6)).unwrap();
        // 8 * 2^-6 = 2^-3 keeps only h in {2^-1, 2^-2, 2^-3}.
        assert_eq!(fit.used.len(), 3);
        assert!(fit.used.iter().all(|&(h, _)| h >= 0.125));
        assert!(temporal_fit(&points, 2.0, 2f64.powi(-4)).is_err());
    }

    #[test]
    fn temporal_fit_rejects_bad_data() {
        let short = [(0.5, 1.0), (0.25, 0.5), (0.125, 0.25), (0.0625, 0.125)];
        assert!(temporal_fit(&short, 2.0, 0.0).is_err());
        let negative: Vec<(f64, f64)> = (1..=6).map(|k| (2f64.powi(-k), -1.0)).collect();
        assert!(temporal_fit(&negative, 2.0, 0.0).is_err());
        let nan: Vec<(f64, f64)> = (1..=6)
            .map(|k| (2f64.powi(-k), if k == 3 { f64::NAN } else { 1.0 }))
            .collect();
        assert!(temporal_fit(&nan, 2.0, 0.0).is_err());
    }

    #[test]
    fn oracle_increments_fit_the_predicted_exponents() {
        // Commutative rho = 2: spatial supremum 3/4, so the exponent at
        // order r is min(3/4 - r, 1/2).
        let spectrum =
            CovarianceSpectrum::new(NoiseKind::Commutative, 1, 1.0, 2.0, 4096).unwrap();
        let op = OperatorSpec::new(1, 1.0).unwrap();
        // Lags small enough that even the lowest mode is far from saturated
        // (lambda_1 h << 1), where the Brownian-increment scaling is clean.
        let data = |r: f64| -> Vec<(f64, f64)> {
            (10..=18)
                .map(|k| {
                    let h = 2f64.powi(-k);
                    let inc = ou_oracle_time_increment(
                        &spectrum,
                        &op,
                        r,
                        0.25,
                        h,
                        AdditiveKind::Commutative,
                        4096,
                    )
                    .unwrap();
                    (h, inc.value)
                })
                .collect()
        };
        let fit0 = temporal_fit(&data(0.0), 2.0, 0.0).unwrap();
        assert!(
            (fit0.beta_hat - 0.5).abs() <= 0.02,
            "r=0 exponent {}",
            fit0.beta_hat
        );
        let fit_half = temporal_fit(&data(0.5), 2.0, 0.0).unwrap();
        assert!(
            (fit_half.beta_hat - 0.25).abs() <= 0.05,
            "r=0.5 exponent {}",
            fit_half.beta_hat
        );
    }

    #[test]
    fn deterministic_heat_flow_has_smooth_increments() {
        // ||(e^{Ah} - I) e^{At} e_1||_{V_r}^2 is quadratic in small h, so the
        // fitted exponent leaves the noise-dominated range entirely.
        let op = OperatorSpec::new(1, 1.0).unwrap();
        let lambda = op.eigenvalue(&[1]).unwrap();
        let t = 0.25;
        let points: Vec<(f64, f64)> = (4..=10)
            .map(|k| {
                let h = 2f64.powi(-k);
                let diff = (1.0 - (-lambda * h).exp()) * (-lambda * t).exp();
                (h, lambda.powf(2.0 * 0.25) * diff * diff)
            })
            .collect();
        let fit = temporal_fit(&points, 2.0, 0.0).unwrap();
        assert!(fit.beta_hat >= 0.9, "smooth path fitted {}", fit.beta_hat);
    }

    #[test]
    fn predicted_thresholds_match_the_worked_cases() {
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Cosine, 1, 2.0, false).unwrap(),
            0.75
        );
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Cosine, 1, 3.0, false).unwrap(),
            0.75
        );
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Cosine, 1, 3.0, true).unwrap(),
            1.0
        );
        // At rho = 2 the Hölder budget, not the boundary, is binding.
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Cosine, 1, 2.0, true).unwrap(),
            0.75
        );
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Commutative, 1, 2.0, false).unwrap(),
            0.75
        );
        assert_relative_eq!(
            predicted_gamma_star(NoiseKind::Commutative, 2, 3.0, false).unwrap(),
            0.75
        );
        assert!(predicted_gamma_star(NoiseKind::Cosine, 1, 0.5, false).is_err());
        assert!(predicted_gamma_star(NoiseKind::Commutative, 2, 1.5, false).is_err());
        assert!(predicted_gamma_star(NoiseKind::Cosine, 2, 3.0, false).is_err());
    }

    #[test]
    fn threshold_table_assembles_verdicts() {
        let scan = spatial_scan(
            &[
                power_series(0.7, 0.0, 1.0),
                power_series(0.75, 0.2, 1.0),
                power_series(0.8, 0.4, 1.0),
                power_series(0.85, 0.6, 1.0),
            ],
            DEFAULT_SLOPE_TOL,
        )
        .unwrap();
        let fit = temporal_fit(
            &(2..=8)
                .map(|k| {
                    let h = 2f64.powi(-k);
                    (h, h.powf(1.0))
                })
                .collect::<Vec<_>>(),
            2.0,
            0.0,
        )
        .unwrap();
        let entries = vec![
            ThresholdEntry {
                preset: "good".into(),
                predicted_gamma_star: 0.75,
                scan: Some(scan.clone()),
                temporal: vec![(0.0, fit.clone())],
                gamma_window: (0.7, 0.8),
                exponent_tol: 0.05,
            },
            ThresholdEntry {
                preset: "missing-scan".into(),
                predicted_gamma_star: 0.75,
                scan: None,
                temporal: vec![(0.0, fit.clone())],
                gamma_window: (0.7, 0.8),
                exponent_tol: 0.05,
            },
            ThresholdEntry {
                preset: "wrong-window".into(),
                predicted_gamma_star: 1.0,
                scan: Some(scan),
                temporal: vec![],
                gamma_window: (0.93, 1.05),
                exponent_tol: 0.05,
            },
        ];
        let verdicts = threshold_table(&entries);
        assert!(verdicts[0].pass);
        assert!(verdicts[0].complete);
        assert_eq!(verdicts[0].estimated_gamma_star, Some(0.75));
        assert_relative_eq!(verdicts[0].temporal[0].beta_hat, 0.5);
        assert_relative_eq!(verdicts[0].temporal[0].expected, 0.5);
        assert!(!verdicts[1].pass);
        assert!(!verdicts[1].complete);
        assert!(!verdicts[2].pass);
        assert!(verdicts[2].complete);
    }
}
