//! Exponential time stepping for the Galerkin system, ensemble moment
//! estimation, and exact series oracles for the additive special cases.
//!
//! The state lives in `span{e_i : i in {1..N}^d}` and is advanced by an
//! exponential Euler step in which the linear part is solved exactly:
//!
//! ```text
//!     X_{n+1} = e^{A dt} (X_n + dt Pi_N F(X_n)) + G(dt) Pi_N B(X_n) dW_n,
//!     G(dt)   = diag( sqrt((1 - e^{-2 lambda_i dt}) / (2 lambda_i dt)) ).
//! ```
//!
//! The diagonal gain `G` replaces the semigroup factor in front of the noise
//! so that each mode receives exactly the variance of the stochastic
//! convolution over one step; for the additive presets the grid-time law of
//! the scheme is then the law of the Ornstein–Uhlenbeck mode system at every
//! step size, which is what makes direct oracle comparisons meaningful.
//! `G -> 1` as `dt -> 0`, so the scheme stays within the exponential Euler
//! family. Nonlinearities are evaluated pseudospectrally on a grid with
//! `M = 2 max(N, J) + 1` interior nodes per axis.
//!
//! Trajectories are pure functions of `(config, trajectory index)`: every
//! Wiener increment is drawn from the counter RNG keyed by trajectory and
//! step, so ensembles are reproducible bit for bit under any scheduling.

use crate::coefficients::{hs_norm_b, NemytskiiPair};
use crate::error::{Error, Result};
use crate::noise::{sample_increment, CovarianceSpectrum, NoiseKind, WienerIncrement};
use crate::spectral::{from_spectral, to_spectral, GridField, OperatorSpec, SpectralField};
use crate::transform::{embed, SineTransform};
use rayon::prelude::*;
use std::f64::consts::SQRT_2;

/// Full description of one ensemble run.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub op: OperatorSpec,
    pub spectrum: CovarianceSpectrum,
    pub pair: NemytskiiPair,
    /// Deterministic initial value; embedded or truncated to `n_modes`.
    pub initial: SpectralField,
    pub t_final: f64,
    pub n_steps: usize,
    pub n_modes: usize,
    pub n_traj: usize,
    /// Moment order for the ensemble tables; `p = 2` is always included.
    pub p: f64,
    pub seed: u64,
    /// Output times; each must lie on the step grid inside `[0, T]`.
    pub checkpoints: Vec<f64>,
}

impl SimulationConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.op.d != self.spectrum.d {
            return Err(Error::ShapeMismatch(format!(
                "operator dimension {} does not match noise dimension {}",
                self.op.d, self.spectrum.d
            )));
        }
        if self.initial.op != self.op {
            return Err(Error::ShapeMismatch(
                "initial value was built against a different operator".into(),
            ));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {}",
                self.t_final
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("need at least one step".into()));
        }
        if self.n_modes == 0 {
            return Err(Error::InvalidParameter("need at least one mode".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter(
                "need at least one trajectory".into(),
            ));
        }
        if !(self.p >= 2.0) || !self.p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "moment order must satisfy p >= 2, got {}",
                self.p
            )));
        }
        self.checkpoint_steps().map(|_| ())
    }

    /// Maps each checkpoint to its step index, rejecting off-grid times.
    pub fn checkpoint_steps(&self) -> Result<Vec<usize>> {
        let dt = self.dt();
        self.checkpoints
            .iter()
            .map(|&t| {
                if !(0.0..=self.t_final * (1.0 + 1e-12)).contains(&t) {
                    return Err(Error::InvalidParameter(format!(
                        "checkpoint {t} lies outside [0, {}]",
                        self.t_final
                    )));
                }
                let k = (t / dt).round();
                if (k * dt - t).abs() > 1e-9 * self.t_final.max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "checkpoint {t} is not on the step grid (dt = {dt})"
                    )));
                }
                Ok((k as usize).min(self.n_steps))
            })
            .collect()
    }
}

/// Precomputed per-mode factors and grid geometry for one configuration.
pub struct Stepper<'a> {
    cfg: &'a SimulationConfig,
    dt: f64,
    /// `e^{-lambda_i dt}` in row-major mode order.
    decay: Vec<f64>,
    /// `sqrt((1 - e^{-2 lambda_i dt})/(2 lambda_i dt))`.
    gain: Vec<f64>,
    /// Interior nodes per axis of the collocation grid.
    m: usize,
}

/// One path, recorded at the configured checkpoints.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(time, state)` aligned with `config.checkpoints`.
    pub checkpoints: Vec<(f64, SpectralField)>,
    pub diverged: bool,
    /// Step at which a non-finite coefficient first appeared.
    pub diverged_at_step: Option<usize>,
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &'a SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.dt();
        let table = cfg.op.eigenvalue_table(cfg.n_modes);
        let decay = table.iter().map(|&l| (-l * dt).exp()).collect();
        let gain = table
            .iter()
            .map(|&l| {
                let x = 2.0 * l * dt;
                if x < 1e-12 {
                    1.0
                } else {
                    (-(-x).exp_m1() / x).sqrt()
                }
            })
            .collect();
        // Oversampled grid; large enough to hold every retained noise mode.
        let j_axis = cfg.spectrum.n_noise;
        let m = 2 * cfg.n_modes.max(j_axis) + 1;
        Ok(Self {
            cfg,
            dt,
            decay,
            gain,
            m,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Interior nodes per axis of the collocation grid.
    pub fn grid_nodes(&self) -> usize {
        self.m
    }

    /// Synthesizes the noise increment as a nodal field on the grid.
    fn noise_field(&self, dw: &WienerIncrement) -> Result<GridField> {
        let spectrum = &self.cfg.spectrum;
        if dw.xi.len() != spectrum.mode_count() {
            return Err(Error::ShapeMismatch(format!(
                "increment has {} coordinates, noise model has {}",
                dw.xi.len(),
                spectrum.mode_count()
            )));
        }
        match spectrum.kind {
            NoiseKind::Commutative => {
                let field =
                    SpectralField::from_coeffs(self.cfg.op, spectrum.n_noise, dw.xi.clone())?;
                from_spectral(&field, self.m)
            }
            NoiseKind::Cosine => {
                // dW(x) = sum_j xi_j sqrt(2) cos(j pi x); the j = 0 slot of the
                // synthesis is unused because mu_0 = 0.
                let mut coeffs = vec![0.0; spectrum.n_noise + 1];
                for (j, &x) in dw.xi.iter().enumerate() {
                    coeffs[j + 1] = SQRT_2 * x;
                }
                let transform = SineTransform::new(self.m);
                let mut scratch = transform.scratch();
                let mut values = vec![0.0; self.m];
                transform.cosine_eval_into(&coeffs, &mut values, &mut scratch);
                GridField::new(1, self.m, values)
            }
        }
    }

    /// Advances one step with a caller-supplied increment.
    ///
    /// The increment's `dt` must match the stepper's; coupled-refinement
    /// studies aggregate fine increments before calling this.
    pub fn step_with_increment(
        &self,
        state: &SpectralField,
        dw: &WienerIncrement,
    ) -> Result<SpectralField> {
        let n = self.cfg.n_modes;
        if state.n_modes != n {
            return Err(Error::ShapeMismatch(format!(
                "state truncation {} does not match configuration {n}",
                state.n_modes
            )));
        }
        if (dw.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidParameter(format!(
                "increment step {} does not match scheme step {}",
                dw.dt, self.dt
            )));
        }
        let grid = from_spectral(state, self.m)?;
        let drift = self.cfg.pair.apply_f(&grid);
        let noise = self.noise_field(dw)?;
        let forced = self.cfg.pair.apply_b(&grid, &noise)?;
        let f_hat = to_spectral(&drift, &self.cfg.op)?.truncate(n);
        let b_hat = to_spectral(&forced, &self.cfg.op)?.truncate(n);
        let coeffs = state
            .coeffs
            .iter()
            .zip(f_hat.coeffs.iter())
            .zip(b_hat.coeffs.iter())
            .zip(self.decay.iter().zip(self.gain.iter()))
            .map(|(((&a, &f), &b), (&e, &g))| e * (a + self.dt * f) + g * b)
            .collect();
        SpectralField::from_coeffs(self.cfg.op, n, coeffs)
    }

    /// Advances one step, drawing the increment for `(trajectory, step)`.
    pub fn step(&self, state: &SpectralField, trajectory: u64, step: u64) -> Result<SpectralField> {
        let dw = sample_increment(&self.cfg.spectrum, self.dt, self.cfg.seed, trajectory, step)?;
        self.step_with_increment(state, &dw)
    }

    /// Runs one full path and records the configured checkpoints.
    ///
    /// Bit-reproducible in `(config, trajectory)`. A non-finite coefficient
    /// flags the path as diverged; remaining checkpoints repeat the broken
    /// state so the caller can still see where it failed.
    pub fn trajectory(&self, trajectory: u64) -> Result<Trajectory> {
        let steps = self.cfg.checkpoint_steps()?;
        let mut state = fit_modes(&self.cfg.initial, self.cfg.n_modes);
        let mut recorded: Vec<Option<(f64, SpectralField)>> = vec![None; steps.len()];
        let mut diverged_at = None;
        let record = |n: usize, state: &SpectralField, recorded: &mut Vec<_>| {
            for (slot, &target) in recorded.iter_mut().zip(steps.iter()) {
                if target == n {
                    *slot = Some((n as f64 * self.dt, state.clone()));
                }
            }
        };
        record(0, &state, &mut recorded);
        for n in 0..self.cfg.n_steps {
            state = self.step(&state, trajectory, n as u64)?;
            if !state.coeffs.iter().all(|a| a.is_finite()) {
                diverged_at = Some(n + 1);
                break;
            }
            record(n + 1, &state, &mut recorded);
        }
        let checkpoints = recorded
            .into_iter()
            .zip(self.cfg.checkpoints.iter())
            .map(|(slot, &t)| slot.unwrap_or((t, state.clone())))
            .collect();
        Ok(Trajectory {
            checkpoints,
            diverged: diverged_at.is_some(),
            diverged_at_step: diverged_at,
        })
    }
}

/// Embeds or truncates a field to the requested per-axis mode count.
fn fit_modes(field: &SpectralField, n_modes: usize) -> SpectralField {
    if field.n_modes == n_modes {
        return field.clone();
    }
    if field.n_modes > n_modes {
        return field.truncate(n_modes);
    }
    let coeffs = embed(&field.coeffs, field.n_modes, n_modes, field.op.d);
    SpectralField {
        op: field.op,
        n_modes,
        coeffs,
    }
}

/// Runs a single path under `config`.
pub fn simulate_trajectory(config: &SimulationConfig, trajectory: u64) -> Result<Trajectory> {
    Stepper::new(config)?.trajectory(trajectory)
}

/// One estimated moment `E ||X_t||^p_{V_r}` with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub r: f64,
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Trajectories that contributed (diverged paths excluded).
    pub n_traj: usize,
}

/// Ensemble moment estimates over checkpoints, orders, and norms.
#[derive(Debug, Clone)]
pub struct MomentTable {
    /// Sorted by `(t, r, p)`.
    pub rows: Vec<MomentRow>,
    pub n_modes: usize,
    pub j_modes: usize,
    pub dt: f64,
    /// Number of diverged (excluded) trajectories.
    pub diverged: usize,
}

/// Accumulates rows from per-trajectory observation vectors.
///
/// `observe` maps a surviving trajectory to one value per `(key, r)` pair in
/// row-major order; reduction walks trajectories in index order, so the
/// result is independent of how the parallel map was scheduled.
fn ensemble_table<F>(
    config: &SimulationConfig,
    keys: &[f64],
    r_list: &[f64],
    observe: F,
) -> Result<MomentTable>
where
    F: Fn(&Stepper, &Trajectory) -> Result<Vec<f64>> + Sync,
{
    let stepper = Stepper::new(config)?;
    for &r in r_list {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "norm order must be nonnegative, got {r}"
            )));
        }
    }
    let per_traj: Vec<Option<Vec<f64>>> = (0..config.n_traj)
        .into_par_iter()
        .map(|traj| {
            let path = stepper.trajectory(traj as u64)?;
            if path.diverged {
                return Ok(None);
            }
            observe(&stepper, &path).map(Some)
        })
        .collect::<Result<_>>()?;
    let survivors: Vec<&Vec<f64>> = per_traj.iter().flatten().collect();
    let diverged = config.n_traj - survivors.len();
    if survivors.is_empty() {
        return Err(Error::AllTrajectoriesDiverged(config.n_traj));
    }
    let mut p_list = vec![2.0];
    if config.p != 2.0 {
        p_list.push(config.p);
    }
    let mut rows = Vec::with_capacity(keys.len() * r_list.len() * p_list.len());
    for (ki, &key) in keys.iter().enumerate() {
        for (ri, &r) in r_list.iter().enumerate() {
            let slot = ki * r_list.len() + ri;
            for &p in &p_list {
                let values: Vec<f64> = survivors.iter().map(|v| v[slot].powf(p)).collect();
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let std_error = if n > 1 {
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (n - 1) as f64;
                    (var / n as f64).sqrt()
                } else {
                    0.0
                };
                rows.push(MomentRow {
                    t: key,
                    r,
                    p,
                    estimate: mean,
                    std_error,
                    n_traj: n,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.t, a.r, a.p)
            .partial_cmp(&(b.t, b.r, b.p))
            .expect("moment keys are finite")
    });
    Ok(MomentTable {
        rows,
        n_modes: config.n_modes,
        j_modes: config.spectrum.n_noise,
        dt: config.dt(),
        diverged,
    })
}

/// Monte Carlo estimates of `E ||X_t||^p_{V_r}` at every checkpoint.
///
/// Orders `p = 2` and `config.p` are reported for each `r`.
pub fn ensemble_moments(config: &SimulationConfig, r_list: &[f64]) -> Result<MomentTable> {
    ensemble_table(config, &config.checkpoints, r_list, |_, path| {
        Ok(path
            .checkpoints
            .iter()
            .flat_map(|(_, state)| r_list.iter().map(|&r| state.fractional_norm(r)))
            .collect())
    })
}

/// Monte Carlo estimates of `E ||X_{t+h} - X_t||^p_{V_r}` for dyadic lags.
///
/// The returned rows use the lag `h` in the time column. The base point and
/// every `base_t + h` must lie on the step grid; `config.checkpoints` is
/// ignored.
pub fn ensemble_increment_moments(
    config: &SimulationConfig,
    r_list: &[f64],
    base_t: f64,
    h_list: &[f64],
) -> Result<MomentTable> {
    if h_list.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::InvalidParameter(
            "increment lags must be positive".into(),
        ));
    }
    let mut inner = config.clone();
    inner.checkpoints = std::iter::once(base_t)
        .chain(h_list.iter().map(|&h| base_t + h))
        .collect();
    ensemble_table(&inner, h_list, r_list, |_, path| {
        let (_, base) = &path.checkpoints[0];
        let mut out = Vec::with_capacity(h_list.len() * r_list.len());
        for (_, state) in &path.checkpoints[1..] {
            let diff = SpectralField::from_coeffs(
                state.op,
                state.n_modes,
                state
                    .coeffs
                    .iter()
                    .zip(base.coeffs.iter())
                    .map(|(a, b)| a - b)
                    .collect(),
            )?;
            out.extend(r_list.iter().map(|&r| diff.fractional_norm(r)));
        }
        Ok(out)
    })
}

/// Monte Carlo estimates of `E ||B(X_t)||^p_{HS(U_0, V_alpha)}`.
///
/// The Hilbert–Schmidt norm is evaluated by the same quadrature as the
/// diffusion term itself, against the retained noise modes.
pub fn ensemble_hs_moments(config: &SimulationConfig, alpha_list: &[f64]) -> Result<MomentTable> {
    ensemble_table(config, &config.checkpoints, alpha_list, |stepper, path| {
        let mut out = Vec::with_capacity(path.checkpoints.len() * alpha_list.len());
        for (_, state) in &path.checkpoints {
            let grid = from_spectral(state, stepper.grid_nodes())?;
            for &alpha in alpha_list {
                out.push(hs_norm_b(
                    &config.pair,
                    &grid,
                    &config.spectrum,
                    &config.op,
                    alpha,
                    config.n_modes,
                )?);
            }
        }
        Ok(out)
    })
}

/// Additive model whose stochastic convolution the oracles evaluate.
///
/// Each case has `f = 0` and a state-independent diffusion, so the Galerkin
/// modes are independent Ornstein–Uhlenbeck processes whose second moments
/// are elementary series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdditiveKind {
    /// `b = 1` against noise expanded in the eigenbasis itself.
    Commutative,
    /// `b = 1` against the cosine basis (one-dimensional).
    CosineConstant,
    /// `b(x) = sin(pi x)` against the cosine basis (one-dimensional).
    CosineBoundarySine,
}

/// Exact series value for one oracle moment, with truncation diagnostics.
#[derive(Debug, Clone)]
pub struct OracleValue {
    /// Norm order: `gamma` for moments, `r` for increments.
    pub order: f64,
    pub t: f64,
    /// Lag; zero for plain moments.
    pub h: f64,
    /// Galerkin truncation the value was summed over.
    pub n_modes: usize,
    pub value: f64,
    /// Bound on the mass of the discarded modes (for the same noise
    /// truncation); infinite when the mode series itself diverges.
    pub tail_bound: f64,
    /// Whether the untruncated (`J -> infinity`, `N -> infinity`) series
    /// converges for this order.
    pub series_convergent: bool,
    /// Empirical slope of `log` partial sums over the last octave of modes;
    /// near zero for convergent series.
    pub growth_rate: f64,
}

/// Per-mode effective weights `W_k` with their eigenvalues, so that
/// `E ||O_t||^2_{V_g} = sum_k W_k lambda_k^{2g} (1 - e^{-2 lambda_k t})/(2 lambda_k)`.
fn oracle_weights(
    spectrum: &CovarianceSpectrum,
    op: &OperatorSpec,
    kind: AdditiveKind,
    k_max: usize,
) -> Result<Vec<(f64, f64)>> {
    match kind {
        AdditiveKind::Commutative => {
            if spectrum.kind != NoiseKind::Commutative {
                return Err(Error::Unsupported(
                    "commutative oracle needs eigenbasis noise".into(),
                ));
            }
            if op.d != spectrum.d {
                return Err(Error::ShapeMismatch(format!(
                    "operator dimension {} does not match noise dimension {}",
                    op.d, spectrum.d
                )));
            }
            let table = op.eigenvalue_table(k_max);
            let j = spectrum.n_noise;
            let mut idx = vec![1usize; op.d];
            let mut out = Vec::with_capacity(table.len());
            for &lambda in &table {
                let w = if idx.iter().all(|&c| c <= j) {
                    spectrum.nu * (idx.iter().sum::<usize>() as f64).powf(-spectrum.rho)
                } else {
                    0.0
                };
                out.push((lambda, w));
                for axis in (0..op.d).rev() {
                    idx[axis] += 1;
                    if idx[axis] <= k_max {
                        break;
                    }
                    idx[axis] = 1;
                }
            }
            Ok(out)
        }
        AdditiveKind::CosineConstant | AdditiveKind::CosineBoundarySine => {
            if spectrum.kind != NoiseKind::Cosine || op.d != 1 {
                return Err(Error::Unsupported(
                    "cosine oracles are one-dimensional".into(),
                ));
            }
            let j_max = spectrum.n_noise;
            let mu: Vec<f64> = spectrum.mu_table();
            let out = (1..=k_max)
                .map(|k| {
                    let lambda = op.kappa * std::f64::consts::PI.powi(2) * (k * k) as f64;
                    let w = match kind {
                        AdditiveKind::CosineConstant => {
                            // <e_k, g_j> = 4k / (pi (k^2 - j^2)) for k + j odd;
                            // the j = 0 row carries mu_0 = 0 and is skipped.
                            (1..=j_max)
                                .filter(|j| (k + j) % 2 == 1)
                                .map(|j| {
                                    let c = 4.0 * k as f64
                                        / (std::f64::consts::PI
                                            * ((k * k) as f64 - (j * j) as f64));
                                    mu[j - 1] * c * c
                                })
                                .sum()
                        }
                        AdditiveKind::CosineBoundarySine => {
                            // sin(pi x) g_j = (e_{j+1} - e_{j-1})/2 for j >= 2,
                            // e_2/2 for j = 1, so mode k couples to j = k -+ 1.
                            let mut w = 0.0;
                            if k >= 2 && k - 1 <= j_max {
                                w += mu[k - 2] / 4.0;
                            }
                            if k + 1 <= j_max {
                                w += mu[k] / 4.0;
                            }
                            w
                        }
                        AdditiveKind::Commutative => unreachable!(),
                    };
                    (lambda, w)
                })
                .collect();
            Ok(out)
        }
    }
}

/// `(1 - e^{-2 lambda t}) / (2 lambda)`, with `t = infinity` allowed.
fn ou_variance_factor(lambda: f64, t: f64) -> f64 {
    if t.is_infinite() {
        1.0 / (2.0 * lambda)
    } else {
        -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
    }
}

/// Whether the untruncated mode series converges at this order.
fn series_converges(spectrum: &CovarianceSpectrum, kind: AdditiveKind, order: f64) -> bool {
    let rho = spectrum.rho;
    let d = spectrum.d as f64;
    // The k-th term scales like k^{4g - 2} times the weight tail; thresholds
    // follow from summing over shells.
    match kind {
        AdditiveKind::Commutative => 4.0 * order < rho - d + 2.0,
        AdditiveKind::CosineConstant => 4.0 * order < (rho + 1.0).min(3.0),
        AdditiveKind::CosineBoundarySine => 4.0 * order < rho + 1.0,
    }
}

/// Bound on `sum_{k > k_max} W_k lambda_k^{2 order - 1} / 2` for the given
/// noise truncation. Infinite when that series diverges.
fn oracle_tail_mass(
    spectrum: &CovarianceSpectrum,
    op: &OperatorSpec,
    kind: AdditiveKind,
    order: f64,
    k_max: usize,
) -> Result<f64> {
    let j = spectrum.n_noise;
    match kind {
        AdditiveKind::Commutative => {
            // The convolution is band-limited to the retained noise cube.
            if k_max >= j {
                return Ok(0.0);
            }
            let weights = oracle_weights(spectrum, op, kind, j)?;
            let inner = oracle_weights(spectrum, op, kind, k_max)?;
            let total: f64 = weights
                .iter()
                .map(|&(l, w)| 0.5 * w * l.powf(2.0 * order - 1.0))
                .sum();
            let kept: f64 = inner
                .iter()
                .map(|&(l, w)| 0.5 * w * l.powf(2.0 * order - 1.0))
                .sum();
            Ok((total - kept).max(0.0))
        }
        AdditiveKind::CosineBoundarySine => {
            if k_max >= j + 1 {
                return Ok(0.0);
            }
            let weights = oracle_weights(spectrum, op, kind, j + 1)?;
            Ok(weights
                .iter()
                .skip(k_max)
                .map(|&(l, w)| 0.5 * w * l.powf(2.0 * order - 1.0))
                .sum())
        }
        AdditiveKind::CosineConstant => {
            // Beyond k >= 2J every coupling satisfies
            // <e_k, g_j>^2 <= 256 / (9 pi^2 k^2), so the tail is controlled by
            // the truncated trace; between k_max and 2J the terms are summed
            // exactly.
            if 4.0 * order >= 3.0 {
                return Ok(f64::INFINITY);
            }
            let split = k_max.max(2 * j);
            let weights = oracle_weights(spectrum, op, kind, split)?;
            let explicit: f64 = weights
                .iter()
                .skip(k_max)
                .map(|&(l, w)| 0.5 * w * l.powf(2.0 * order - 1.0))
                .sum();
            let trace: f64 = spectrum.mu_table().iter().sum();
            let c = 256.0 * trace / (9.0 * std::f64::consts::PI.powi(2));
            let kp2 = op.kappa * std::f64::consts::PI.powi(2);
            // sum_{k > split} c k^{-2} (kp2 k^2)^{2 order - 1} / 2
            //   <= (c/2) kp2^{2 order - 1} split^{4 order - 3} / (3 - 4 order).
            let analytic = 0.5 * c * kp2.powf(2.0 * order - 1.0)
                * (split as f64).powf(4.0 * order - 3.0)
                / (3.0 - 4.0 * order);
            Ok(explicit + analytic)
        }
    }
}

/// Empirical last-octave slope of the partial sums `S_K` in `log K`.
fn partial_sum_growth(terms: &[f64]) -> f64 {
    let k = terms.len();
    if k < 4 {
        return 0.0;
    }
    let half: f64 = terms.iter().take(k / 2).sum();
    let full: f64 = terms.iter().sum();
    if !(half > 0.0) || !(full > 0.0) {
        return 0.0;
    }
    (full.ln() - half.ln()) / (k as f64 / (k / 2) as f64).ln()
}

fn validate_oracle_inputs(order: f64, t: f64, n_modes: usize) -> Result<()> {
    if !(order >= 0.0) || !order.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "norm order must be nonnegative, got {order}"
        )));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    if n_modes == 0 {
        return Err(Error::InvalidParameter("need at least one mode".into()));
    }
    Ok(())
}

/// Exact `E ||Pi_N O_t||^2_{V_gamma}` for the stochastic convolution of an
/// additive model, by direct mode summation.
///
/// `t = infinity` gives the stationary value. The `tail_bound` controls the
/// modes beyond `n_modes` under the same noise truncation, so Monte Carlo
/// ensembles at truncation `n_modes` are compared against `value` directly.
pub fn ou_oracle_moment(
    spectrum: &CovarianceSpectrum,
    op: &OperatorSpec,
    gamma: f64,
    t: f64,
    kind: AdditiveKind,
    n_modes: usize,
) -> Result<OracleValue> {
    validate_oracle_inputs(gamma, t, n_modes)?;
    let weights = oracle_weights(spectrum, op, kind, n_modes)?;
    let terms: Vec<f64> = weights
        .iter()
        .map(|&(l, w)| w * l.powf(2.0 * gamma) * ou_variance_factor(l, t))
        .collect();
    Ok(OracleValue {
        order: gamma,
        t,
        h: 0.0,
        n_modes,
        value: terms.iter().sum(),
        tail_bound: oracle_tail_mass(spectrum, op, kind, gamma, n_modes)?,
        series_convergent: series_converges(spectrum, kind, gamma),
        growth_rate: partial_sum_growth(&terms),
    })
}

/// Exact `E ||Pi_N (O_{t+h} - O_t)||^2_{V_r}` for an additive model.
///
/// Mode-wise the increment of an Ornstein–Uhlenbeck process splits into the
/// decayed past and the fresh convolution, giving
/// `W_k lambda_k^{2r} [(1-e^{-lambda h})^2 (1-e^{-2 lambda t})/(2 lambda) + (1-e^{-2 lambda h})/(2 lambda)]`.
pub fn ou_oracle_time_increment(
    spectrum: &CovarianceSpectrum,
    op: &OperatorSpec,
    r: f64,
    t: f64,
    h: f64,
    kind: AdditiveKind,
    n_modes: usize,
) -> Result<OracleValue> {
    validate_oracle_inputs(r, t, n_modes)?;
    if h.is_nan() || h.is_infinite() || h < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lag must be finite and nonnegative, got {h}"
        )));
    }
    let weights = oracle_weights(spectrum, op, kind, n_modes)?;
    let terms: Vec<f64> = weights
        .iter()
        .map(|&(l, w)| {
            let past = (-(-l * h).exp_m1()).powi(2) * ou_variance_factor(l, t);
            let fresh = ou_variance_factor(l, h);
            w * l.powf(2.0 * r) * (past + fresh)
        })
        .collect();
    // The increment bracket is at most twice the stationary factor.
    let tail = 2.0 * oracle_tail_mass(spectrum, op, kind, r, n_modes)?;
    Ok(OracleValue {
        order: r,
        t,
        h,
        n_modes,
        value: terms.iter().sum(),
        tail_bound: tail,
        series_convergent: series_converges(spectrum, kind, r),
        growth_rate: partial_sum_growth(&terms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::NemytskiiPair;
    use crate::expr::Expr;
    use crate::noise::NoiseKind;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn op1() -> OperatorSpec {
        OperatorSpec::new(1, 1.0).unwrap()
    }

    fn commutative(j: usize, rho: f64) -> CovarianceSpectrum {
        CovarianceSpectrum::new(NoiseKind::Commutative, 1, 1.0, rho, j).unwrap()
    }

    fn cosine(j: usize, rho: f64) -> CovarianceSpectrum {
        CovarianceSpectrum::new(NoiseKind::Cosine, 1, 1.0, rho, j).unwrap()
    }

    fn silent_pair() -> NemytskiiPair {
        NemytskiiPair::custom("silent", None, Expr::parse("0").unwrap(), 0.0, 0.0).unwrap()
    }

    fn base_config(pair: NemytskiiPair, spectrum: CovarianceSpectrum) -> SimulationConfig {
        let op = op1();
        SimulationConfig {
            op,
            spectrum,
            pair,
            initial: SpectralField::zeros(op, 8),
            t_final: 0.5,
            n_steps: 64,
            n_modes: 8,
            n_traj: 4,
            p: 2.0,
            seed: 1234,
            checkpoints: vec![0.25, 0.5],
        }
    }

    #[test]
    fn pure_semigroup_decay_is_exact() {
        let op = op1();
        let mut cfg = base_config(silent_pair(), commutative(4, 2.0));
        cfg.initial = SpectralField::basis(op, 8, &[1]).unwrap();
        let stepper = Stepper::new(&cfg).unwrap();
        let mut state = cfg.initial.clone();
        for n in 0..cfg.n_steps {
            state = stepper.step(&state, 0, n as u64).unwrap();
        }
        let lambda = op.eigenvalue(&[1]).unwrap();
        assert_relative_eq!(
            state.coeffs[0],
            (-lambda * cfg.t_final).exp(),
            max_relative = 1e-12
        );
        for &a in &state.coeffs[1..] {
            assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn one_step_constant_drift_matches_projected_formula() {
        let c = 1.5;
        let pair = NemytskiiPair::custom(
            "const-drift",
            Some(Expr::parse("1.5").unwrap()),
            Expr::parse("0").unwrap(),
            0.0,
            0.0,
        )
        .unwrap();
        let cfg = base_config(pair, commutative(4, 2.0));
        let stepper = Stepper::new(&cfg).unwrap();
        let state = stepper
            .step_with_increment(
                &cfg.initial,
                &sample_increment(&cfg.spectrum, cfg.dt(), cfg.seed, 0, 0).unwrap(),
            )
            .unwrap();
        let dt = cfg.dt();
        let m = stepper.grid_nodes();
        for (k, &a) in state.coeffs.iter().enumerate() {
            let k1 = k + 1;
            let lambda = cfg.op.eigenvalue(&[k1]).unwrap();
            if k1 % 2 == 0 {
                // Even sine modes of a constant vanish by symmetry.
                assert!(a.abs() < 1e-13);
            } else {
                // The grid projection of the constant has the closed form
                // sum_i sin(k pi i/(M+1)) = cot(k pi / (2(M+1))) for odd k.
                let theta = k1 as f64 * PI / (2.0 * (m + 1) as f64);
                let quad = c * 2f64.sqrt() / (m + 1) as f64 / theta.tan();
                assert_relative_eq!(a, dt * (-lambda * dt).exp() * quad, max_relative = 1e-12);
            }
        }
        // Lowest mode is within grid-aliasing distance of the continuum
        // projection 2 sqrt(2) c / pi.
        let lambda1 = cfg.op.eigenvalue(&[1]).unwrap();
        let continuum = dt * (-lambda1 * dt).exp() * 2.0 * 2f64.sqrt() * c / PI;
        assert_relative_eq!(state.coeffs[0], continuum, max_relative = 0.01);
    }

    #[test]
    fn trajectories_are_reproducible_and_distinct() {
        let cfg = base_config(NemytskiiPair::additive_one(), commutative(8, 2.0));
        let a = simulate_trajectory(&cfg, 3).unwrap();
        let b = simulate_trajectory(&cfg, 3).unwrap();
        let c = simulate_trajectory(&cfg, 4).unwrap();
        for ((_, sa), (_, sb)) in a.checkpoints.iter().zip(b.checkpoints.iter()) {
            assert_eq!(sa.coeffs, sb.coeffs);
        }
        assert_ne!(a.checkpoints[0].1.coeffs, c.checkpoints[0].1.coeffs);
        assert!(!a.diverged);
    }

    #[test]
    fn noise_free_path_matches_dense_reference() {
        // Same scheme evaluated with dense O(N M) transforms instead of the
        // FFT path; agreement isolates the transform plumbing.
        let pair = NemytskiiPair::custom(
            "drift-only",
            Some(Expr::parse("y / (1 + y*y)").unwrap()),
            Expr::parse("0").unwrap(),
            0.0,
            1.0,
        )
        .unwrap();
        let op = op1();
        let mut cfg = base_config(pair, commutative(4, 2.0));
        cfg.n_steps = 32;
        cfg.initial = SpectralField::from_coeffs(
            op,
            8,
            (1..=8).map(|k| 1.0 / (k * k) as f64).collect(),
        )
        .unwrap();
        let stepper = Stepper::new(&cfg).unwrap();
        let mut state = fit_modes(&cfg.initial, cfg.n_modes);
        for n in 0..cfg.n_steps {
            state = stepper.step(&state, 0, n as u64).unwrap();
        }

        let n = cfg.n_modes;
        let m = stepper.grid_nodes();
        let dt = cfg.dt();
        let mut dense = cfg.initial.coeffs.clone();
        for _ in 0..cfg.n_steps {
            let nodes: Vec<f64> = (1..=m)
                .map(|i| {
                    let x = i as f64 / (m + 1) as f64;
                    let v: f64 = dense
                        .iter()
                        .enumerate()
                        .map(|(k, &a)| a * 2f64.sqrt() * ((k + 1) as f64 * PI * x).sin())
                        .sum();
                    let y = v;
                    y / (1.0 + y * y)
                })
                .collect();
            dense = (1..=n)
                .map(|k| {
                    let lambda = op.eigenvalue(&[k]).unwrap();
                    let quad: f64 = nodes
                        .iter()
                        .enumerate()
                        .map(|(i, &f)| {
                            let x = (i + 1) as f64 / (m + 1) as f64;
                            f * 2f64.sqrt() * (k as f64 * PI * x).sin()
                        })
                        .sum::<f64>()
                        / (m + 1) as f64;
                    (-lambda * dt).exp() * (dense[k - 1] + dt * quad)
                })
                .collect();
        }
        for (a, b) in state.coeffs.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12, "fft {a} vs dense {b}");
        }
    }

    #[test]
    fn coupled_refinement_self_converges_at_additive_rate() {
        let op = op1();
        let mut cfg = base_config(NemytskiiPair::additive_one(), commutative(16, 2.0));
        cfg.n_modes = 16;
        cfg.initial = SpectralField::zeros(op, 16);
        cfg.t_final = 0.25;
        cfg.checkpoints = vec![];

        // Finest level: 1024 steps; increments drawn once and aggregated.
        let fine_steps = 1024usize;
        let dt_fine = cfg.t_final / fine_steps as f64;
        let fine: Vec<WienerIncrement> = (0..fine_steps)
            .map(|n| sample_increment(&cfg.spectrum, dt_fine, cfg.seed, 0, n as u64).unwrap())
            .collect();

        let run_level = |steps: usize| -> SpectralField {
            let mut level_cfg = cfg.clone();
            level_cfg.n_steps = steps;
            let stepper = Stepper::new(&level_cfg).unwrap();
            let group = fine_steps / steps;
            let dt = level_cfg.dt();
            let mut state = level_cfg.initial.clone();
            for n in 0..steps {
                let mut xi = vec![0.0; cfg.spectrum.mode_count()];
                for sub in 0..group {
                    for (acc, &x) in xi.iter_mut().zip(fine[n * group + sub].xi.iter()) {
                        *acc += x;
                    }
                }
                state = stepper
                    .step_with_increment(&state, &WienerIncrement { xi, dt })
                    .unwrap();
            }
            state
        };

        let reference = run_level(fine_steps);
        let errors: Vec<f64> = [64usize, 128, 256, 512]
            .iter()
            .map(|&steps| {
                let state = run_level(steps);
                SpectralField::from_coeffs(
                    op,
                    16,
                    state
                        .coeffs
                        .iter()
                        .zip(reference.coeffs.iter())
                        .map(|(a, b)| a - b)
                        .collect(),
                )
                .unwrap()
                .h_norm()
            })
            .collect();
        for window in errors.windows(2) {
            assert!(
                window[0] > window[1],
                "strong error must shrink: {errors:?}"
            );
        }
        let ratio = (errors[0] / errors[3]).powf(1.0 / 3.0);
        assert!(
            ratio > 2f64.powf(0.4),
            "mean refinement ratio {ratio} below the additive rate; errors {errors:?}"
        );
    }

    #[test]
    fn deterministic_ensemble_has_zero_variance() {
        let op = op1();
        let mut cfg = base_config(silent_pair(), commutative(4, 2.0));
        cfg.initial = SpectralField::basis(op, 8, &[2]).unwrap();
        cfg.n_traj = 3;
        let table = ensemble_moments(&cfg, &[0.0, 0.5]).unwrap();
        assert_eq!(table.diverged, 0);
        let lambda = op.eigenvalue(&[2]).unwrap();
        for row in &table.rows {
            assert_eq!(row.std_error, 0.0);
            assert_eq!(row.n_traj, 3);
            let norm = lambda.powf(row.r) * (-lambda * row.t).exp();
            assert_relative_eq!(row.estimate, norm.powf(row.p), max_relative = 1e-10);
        }
    }

    #[test]
    fn jensen_holds_on_shared_ensemble() {
        let mut cfg = base_config(NemytskiiPair::nonlinear(), cosine(8, 2.0));
        cfg.n_traj = 64;
        cfg.p = 4.0;
        cfg.t_final = 0.25;
        cfg.checkpoints = vec![0.125, 0.25];
        let table = ensemble_moments(&cfg, &[0.0, 0.25]).unwrap();
        assert_eq!(table.diverged, 0);
        for pair in table.rows.chunks(2) {
            let (p2, p4) = (&pair[0], &pair[1]);
            assert_eq!(p2.p, 2.0);
            assert_eq!(p4.p, 4.0);
            assert!(
                p2.estimate * p2.estimate <= p4.estimate * (1.0 + 1e-12),
                "Jensen violated at t={} r={}",
                p2.t,
                p2.r
            );
        }
    }

    #[test]
    fn ensemble_agrees_with_oracle_on_small_additive_run() {
        let op = op1();
        let mut cfg = base_config(NemytskiiPair::additive_one(), commutative(16, 2.0));
        cfg.n_modes = 16;
        cfg.initial = SpectralField::zeros(op, 16);
        cfg.t_final = 0.25;
        cfg.n_steps = 32;
        cfg.n_traj = 256;
        cfg.checkpoints = vec![0.125, 0.25];
        let table = ensemble_moments(&cfg, &[0.0, 0.25]).unwrap();
        for row in table.rows.iter().filter(|row| row.p == 2.0) {
            let oracle = ou_oracle_moment(
                &cfg.spectrum,
                &op,
                row.r,
                row.t,
                AdditiveKind::Commutative,
                cfg.n_modes,
            )
            .unwrap();
            assert_eq!(oracle.tail_bound, 0.0);
            assert!(
                (row.estimate - oracle.value).abs() <= 3.0 * row.std_error,
                "t={} r={}: {} vs oracle {} (se {})",
                row.t,
                row.r,
                row.estimate,
                oracle.value,
                row.std_error
            );
        }
    }

    #[test]
    fn increment_ensemble_agrees_with_oracle() {
        let op = op1();
        let mut cfg = base_config(NemytskiiPair::additive_one(), commutative(16, 2.0));
        cfg.n_modes = 16;
        cfg.initial = SpectralField::zeros(op, 16);
        cfg.t_final = 0.5;
        cfg.n_steps = 64;
        cfg.n_traj = 256;
        let h_list = [1.0 / 32.0, 1.0 / 16.0];
        let table = ensemble_increment_moments(&cfg, &[0.0], 0.25, &h_list).unwrap();
        for row in table.rows.iter().filter(|row| row.p == 2.0) {
            let oracle = ou_oracle_time_increment(
                &cfg.spectrum,
                &op,
                row.r,
                0.25,
                row.t,
                AdditiveKind::Commutative,
                cfg.n_modes,
            )
            .unwrap();
            assert!(
                (row.estimate - oracle.value).abs() <= 3.0 * row.std_error,
                "h={} r={}: {} vs oracle {} (se {})",
                row.t,
                row.r,
                row.estimate,
                oracle.value,
                row.std_error
            );
        }
    }

    #[test]
    fn hs_ensemble_is_finite_on_nonlinear_preset() {
        let mut cfg = base_config(NemytskiiPair::nonlinear(), cosine(8, 2.0));
        cfg.n_traj = 16;
        cfg.t_final = 0.25;
        cfg.n_steps = 32;
        cfg.checkpoints = vec![0.25];
        let table = ensemble_hs_moments(&cfg, &[0.0, 0.1]).unwrap();
        assert_eq!(table.diverged, 0);
        for row in &table.rows {
            assert!(row.estimate.is_finite() && row.estimate > 0.0);
        }
    }

    #[test]
    fn cubic_drift_from_large_state_diverges_and_is_reported() {
        let op = op1();
        let pair = NemytskiiPair::custom(
            "cubic",
            Some(Expr::parse("y*y*y").unwrap()),
            Expr::parse("0").unwrap(),
            0.0,
            0.0,
        )
        .unwrap();
        let mut cfg = base_config(pair, commutative(4, 2.0));
        cfg.initial =
            SpectralField::from_coeffs(op, 8, vec![40.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
                .unwrap();
        cfg.n_traj = 2;
        let path = simulate_trajectory(&cfg, 0).unwrap();
        assert!(path.diverged);
        assert!(path.diverged_at_step.is_some());
        match ensemble_moments(&cfg, &[0.0]) {
            Err(Error::AllTrajectoriesDiverged(n)) => assert_eq!(n, 2),
            other => panic!("expected all-diverged error, got {other:?}"),
        }
    }

    #[test]
    fn stationary_commutative_oracle_hits_zeta_value() {
        // gamma = 0, rho = 2, nu = kappa = 1:
        // sum_j j^{-2} / (2 pi^2 j^2) = zeta(4)/(2 pi^2) = pi^2/180.
        let spectrum = commutative(4096, 2.0);
        let oracle = ou_oracle_moment(
            &spectrum,
            &op1(),
            0.0,
            f64::INFINITY,
            AdditiveKind::Commutative,
            4096,
        )
        .unwrap();
        assert_relative_eq!(oracle.value, PI * PI / 180.0, max_relative = 1e-9);
        assert!(oracle.series_convergent);
        assert!(oracle.growth_rate.abs() < 1e-3);
    }

    #[test]
    fn oracle_degenerate_arguments_vanish() {
        let spectrum = commutative(32, 2.0);
        let op = op1();
        let at_zero =
            ou_oracle_moment(&spectrum, &op, 0.3, 0.0, AdditiveKind::Commutative, 32).unwrap();
        assert_eq!(at_zero.value, 0.0);
        let no_lag =
            ou_oracle_time_increment(&spectrum, &op, 0.3, 0.5, 0.0, AdditiveKind::Commutative, 32)
                .unwrap();
        assert_eq!(no_lag.value, 0.0);
        // From t = 0 the increment over h is the plain moment at h.
        let inc =
            ou_oracle_time_increment(&spectrum, &op, 0.2, 0.0, 0.125, AdditiveKind::Commutative, 32)
                .unwrap();
        let moment =
            ou_oracle_moment(&spectrum, &op, 0.2, 0.125, AdditiveKind::Commutative, 32).unwrap();
        assert_relative_eq!(inc.value, moment.value, max_relative = 1e-13);
    }

    #[test]
    fn oracle_increment_grows_with_lag() {
        let spectrum = commutative(64, 2.0);
        let op = op1();
        let values: Vec<f64> = (1..=6)
            .map(|k| {
                ou_oracle_time_increment(
                    &spectrum,
                    &op,
                    0.25,
                    0.5,
                    2f64.powi(-7 + k),
                    AdditiveKind::Commutative,
                    64,
                )
                .unwrap()
                .value
            })
            .collect();
        for window in values.windows(2) {
            assert!(window[0] < window[1], "not monotone: {values:?}");
        }
    }

    #[test]
    fn cosine_constant_oracle_flags_divergence_above_threshold() {
        let spectrum = cosine(128, 3.0);
        let op = op1();
        // Above min(3, rho+1)/4 = 3/4 the partial sums grow like N^{4g-3}.
        let diverging =
            ou_oracle_moment(&spectrum, &op, 0.85, f64::INFINITY, AdditiveKind::CosineConstant, 2048)
                .unwrap();
        assert!(!diverging.series_convergent);
        assert!(diverging.tail_bound.is_infinite());
        assert!(
            (diverging.growth_rate - 0.4).abs() < 0.1,
            "expected growth near 4*0.85-3, got {}",
            diverging.growth_rate
        );
        let converging =
            ou_oracle_moment(&spectrum, &op, 0.5, f64::INFINITY, AdditiveKind::CosineConstant, 2048)
                .unwrap();
        assert!(converging.series_convergent);
        assert!(converging.tail_bound.is_finite());
        assert!(converging.tail_bound < 1e-2 * converging.value);
        assert!(converging.growth_rate.abs() < 0.05);
    }

    #[test]
    fn boundary_sine_oracle_is_band_limited() {
        let spectrum = cosine(32, 3.0);
        let op = op1();
        let inner = ou_oracle_moment(
            &spectrum,
            &op,
            0.5,
            f64::INFINITY,
            AdditiveKind::CosineBoundarySine,
            33,
        )
        .unwrap();
        assert_eq!(inner.tail_bound, 0.0);
        let wider = ou_oracle_moment(
            &spectrum,
            &op,
            0.5,
            f64::INFINITY,
            AdditiveKind::CosineBoundarySine,
            512,
        )
        .unwrap();
        assert_relative_eq!(inner.value, wider.value, max_relative = 1e-14);
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let good = base_config(NemytskiiPair::additive_one(), commutative(4, 2.0));
        let mut bad = good.clone();
        bad.p = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.t_final = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.checkpoints = vec![0.3];
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.checkpoints = vec![0.75];
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.spectrum = CovarianceSpectrum::new(NoiseKind::Commutative, 2, 1.0, 3.0, 4).unwrap();
        assert!(bad.validate().is_err());
    }
}
