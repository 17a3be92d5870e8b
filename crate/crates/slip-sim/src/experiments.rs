//! Gait-level analyses built on the executor: apex return map, fixed-point
//! search, linearized stability, and a noise robustness sweep.

use crate::gait::{GaitError, GaitExecutor, GaitSetup};
use crate::log::StepRecord;
use crate::model::FlightState;

/// Sup-norm tolerance for consecutive apex states at a fixed point.
pub const LIMIT_CYCLE_TOLERANCE: f64 = 1e-8;
/// Iteration cap for the fixed-point search.
pub const LIMIT_CYCLE_MAX_ITERS: usize = 200;
/// Default perturbation for return-map differencing.
pub const RETURN_MAP_DELTA: f64 = 1e-5;

/// Applies the apex-to-apex map once: flight from an apex state (x reset to
/// zero, exactly zero vertical velocity), stance, and ascent to the next
/// apex. Noise is forced off so the map is a deterministic function.
pub fn apex_return(setup: &GaitSetup, apex: (f64, f64)) -> Result<(f64, f64), GaitError> {
    let mut quiet = *setup;
    quiet.noise.touchdown_fraction = 0.0;
    quiet.noise.liftoff_fraction = 0.0;
    quiet.sample_every = u32::MAX;
    let mut ex = GaitExecutor::new(quiet)?;
    ex.run_cycle_to_apex(apex)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycleResult {
    /// Apex state (height, forward velocity) the iteration settled on.
    pub apex: (f64, f64),
    pub iterations: usize,
    pub converged: bool,
    /// Apex state after each map application, starting with the seed state.
    pub history: Vec<(f64, f64)>,
    /// Offset of the settled apex height from the commanded one. The
    /// controller tracks a stance-time reference, so the commanded apex is
    /// approached but not met exactly; the bias is reported, not bounded.
    pub commanded_apex_error: f64,
    /// Offset of the settled apex velocity from the commanded one.
    pub commanded_velocity_error: f64,
}

/// Iterates the apex map from `initial` until two consecutive apex states
/// agree to `LIMIT_CYCLE_TOLERANCE` in sup norm.
pub fn find_limit_cycle(
    setup: &GaitSetup,
    initial: (f64, f64),
) -> Result<LimitCycleResult, GaitError> {
    let mut history = Vec::with_capacity(32);
    history.push(initial);
    let mut current = initial;
    for iteration in 1..=LIMIT_CYCLE_MAX_ITERS {
        let next = apex_return(setup, current)?;
        history.push(next);
        let diff = (next.0 - current.0).abs().max((next.1 - current.1).abs());
        current = next;
        if diff < LIMIT_CYCLE_TOLERANCE {
            return Ok(LimitCycleResult {
                apex: current,
                iterations: iteration,
                converged: true,
                history,
                commanded_apex_error: current.0 - setup.command.desired_apex,
                commanded_velocity_error: current.1 - setup.command.desired_velocity,
            });
        }
    }
    Ok(LimitCycleResult {
        apex: current,
        iterations: LIMIT_CYCLE_MAX_ITERS,
        converged: false,
        history,
        commanded_apex_error: current.0 - setup.command.desired_apex,
        commanded_velocity_error: current.1 - setup.command.desired_velocity,
    })
}

/// Central-difference Jacobian of a planar map.
pub fn fd_jacobian<E>(
    mut map: impl FnMut((f64, f64)) -> Result<(f64, f64), E>,
    point: (f64, f64),
    delta: f64,
) -> Result<[[f64; 2]; 2], E> {
    debug_assert!(delta > 0.0 && delta.is_finite());
    let fy_hi = map((point.0 + delta, point.1))?;
    let fy_lo = map((point.0 - delta, point.1))?;
    let fv_hi = map((point.0, point.1 + delta))?;
    let fv_lo = map((point.0, point.1 - delta))?;
    let inv = 1.0 / (2.0 * delta);
    Ok([
        [(fy_hi.0 - fy_lo.0) * inv, (fv_hi.0 - fv_lo.0) * inv],
        [(fy_hi.1 - fy_lo.1) * inv, (fv_hi.1 - fv_lo.1) * inv],
    ])
}

/// Eigenvalue magnitudes of a 2x2 matrix, largest first, from the trace and
/// determinant. A negative discriminant means a complex pair with common
/// modulus sqrt(det).
pub fn eigenvalue_magnitudes_2x2(j: &[[f64; 2]; 2]) -> [f64; 2] {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let a = 0.5 * (tr + s);
        let b = 0.5 * (tr - s);
        let (hi, lo) = if a.abs() >= b.abs() {
            (a.abs(), b.abs())
        } else {
            (b.abs(), a.abs())
        };
        [hi, lo]
    } else {
        let m = det.sqrt();
        [m, m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMapAnalysis {
    pub fixed_point: (f64, f64),
    pub delta: f64,
    pub jacobian: [[f64; 2]; 2],
    /// Magnitudes of the Jacobian eigenvalues, largest first.
    pub eigenvalue_magnitudes: [f64; 2],
    /// True when both magnitudes are strictly below one.
    pub stable: bool,
    /// Half-delta confirmation differencing.
    pub confirm_delta: f64,
    pub confirm_jacobian: [[f64; 2]; 2],
    /// Largest entrywise disagreement between the two Jacobians.
    pub max_entry_disagreement: f64,
}

/// Differences the apex map around a fixed point at `delta` and again at
/// `delta / 2` to confirm the entries are step-size converged.
pub fn analyze_return_map(
    setup: &GaitSetup,
    fixed_point: (f64, f64),
    delta: f64,
) -> Result<ReturnMapAnalysis, GaitError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(GaitError::Setup(format!(
            "return-map delta must be positive and finite, got {delta}"
        )));
    }
    let map = |p: (f64, f64)| apex_return(setup, p);
    let jacobian = fd_jacobian(map, fixed_point, delta)?;
    let confirm_delta = 0.5 * delta;
    let confirm_jacobian = fd_jacobian(map, fixed_point, confirm_delta)?;
    let mut max_entry_disagreement = 0.0f64;
    for i in 0..2 {
        for k in 0..2 {
            max_entry_disagreement =
                max_entry_disagreement.max((jacobian[i][k] - confirm_jacobian[i][k]).abs());
        }
    }
    let eigenvalue_magnitudes = eigenvalue_magnitudes_2x2(&jacobian);
    Ok(ReturnMapAnalysis {
        fixed_point,
        delta,
        jacobian,
        eigenvalue_magnitudes,
        stable: eigenvalue_magnitudes[0] < 1.0 && eigenvalue_magnitudes[1] < 1.0,
        confirm_delta,
        confirm_jacobian,
        max_entry_disagreement,
    })
}

/// One (noise level, seed) run of the robustness sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCell {
    pub level: f64,
    pub seed: u64,
    pub completed_steps: usize,
    pub success: bool,
    pub failure: Option<String>,
    /// True when every stance with tracking data ended with a smaller output
    /// error than it started with.
    pub all_stances_contracted: bool,
    pub max_liftoff_e2: f64,
    /// Largest sup-norm apex deviation from the unperturbed fixed point.
    pub max_apex_deviation: f64,
    /// First cycle whose apex deviation fell inside the band, if any.
    pub cycles_to_band: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    /// Fixed point of the unperturbed gait; runs start here.
    pub reference_apex: (f64, f64),
    pub levels: Vec<f64>,
    pub seeds_per_level: u32,
    pub base_seed: u64,
    pub steps_per_run: usize,
    pub band: f64,
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    /// Fraction of runs at a level that completed every step.
    pub fn success_rate(&self, level: f64) -> f64 {
        let cells: Vec<_> = self.cells.iter().filter(|c| c.level == level).collect();
        if cells.is_empty() {
            return 0.0;
        }
        cells.iter().filter(|c| c.success).count() as f64 / cells.len() as f64
    }
}

fn cell_from_log(
    level: f64,
    seed: u64,
    steps: &[StepRecord],
    failure: Option<String>,
    n_steps: usize,
    reference_apex: (f64, f64),
    band: f64,
) -> RobustnessCell {
    let mut all_contracted = true;
    let mut max_liftoff_e2 = 0.0f64;
    let mut max_dev = 0.0f64;
    let mut cycles_to_band = None;
    for step in steps {
        if let (Some(td), Some(lo)) = (step.e2_touchdown, step.e2_liftoff) {
            if lo >= td {
                all_contracted = false;
            }
            max_liftoff_e2 = max_liftoff_e2.max(lo);
        }
        let dev = (step.apex.height - reference_apex.0)
            .abs()
            .max((step.apex.vx - reference_apex.1).abs());
        max_dev = max_dev.max(dev);
        if cycles_to_band.is_none() && dev <= band {
            cycles_to_band = Some(step.index);
        }
    }
    RobustnessCell {
        level,
        seed,
        completed_steps: steps.len(),
        success: failure.is_none() && steps.len() == n_steps,
        failure,
        all_stances_contracted: all_contracted,
        max_liftoff_e2,
        max_apex_deviation: max_dev,
        cycles_to_band,
    }
}

/// Sweeps touchdown-listener noise over `levels`, running `seeds_per_level`
/// independent runs of `n_steps` cycles at each level. Seeds are the base
/// seed plus the run index, so the set is reproducible. Each run starts at
/// the unperturbed gait's fixed point.
pub fn robustness_sweep(
    setup: &GaitSetup,
    levels: &[f64],
    seeds_per_level: u32,
    n_steps: usize,
    band: f64,
) -> Result<RobustnessReport, GaitError> {
    for &level in levels {
        if !level.is_finite() || !(0.0..=0.5).contains(&level) {
            return Err(GaitError::Setup(format!(
                "noise level must lie in [0, 0.5], got {level}"
            )));
        }
    }
    if seeds_per_level == 0 || n_steps == 0 {
        return Err(GaitError::Setup(
            "robustness sweep needs at least one seed and one step".into(),
        ));
    }
    if !(band > 0.0) || !band.is_finite() {
        return Err(GaitError::Setup(format!(
            "apex band must be positive and finite, got {band}"
        )));
    }

    let cycle = find_limit_cycle(setup, (setup.command.desired_apex, setup.command.desired_velocity))?;
    if !cycle.converged {
        return Err(GaitError::Setup(format!(
            "no fixed point within {LIMIT_CYCLE_MAX_ITERS} iterations; last apex ({}, {})",
            cycle.apex.0, cycle.apex.1
        )));
    }
    let reference_apex = cycle.apex;
    let start = FlightState {
        x: 0.0,
        vx: reference_apex.1,
        y: reference_apex.0,
        vy: 0.0,
    };

    let mut cells = Vec::with_capacity(levels.len() * seeds_per_level as usize);
    for &level in levels {
        for i in 0..seeds_per_level {
            let seed = setup.noise.seed.wrapping_add(u64::from(i));
            let mut run_setup = *setup;
            run_setup.noise.touchdown_fraction = level;
            run_setup.noise.seed = seed;
            run_setup.sample_every = u32::MAX;
            let mut ex = GaitExecutor::new(run_setup)?;
            let log = ex.run_gait(start, n_steps);
            let failure = log.failure.as_ref().map(|f| f.reason.to_string());
            cells.push(cell_from_log(
                level,
                seed,
                &log.steps,
                failure,
                n_steps,
                reference_apex,
                band,
            ));
        }
    }

    Ok(RobustnessReport {
        reference_apex,
        levels: levels.to_vec(),
        seeds_per_level,
        base_seed: setup.noise.seed,
        steps_per_run: n_steps,
        band,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{ControllerConfig, NoiseConfig, RunLimits, ServoConfig};
    use crate::integrate::IntegratorConfig;
    use crate::model::ModelParams;
    use crate::reference::GaitCommand;
    use approx::assert_abs_diff_eq;
    use std::convert::Infallible;

    fn test_setup() -> GaitSetup {
        let params = ModelParams::new(6.0, 2200.0, 0.25, 5.0, 9.81).unwrap();
        let attack = 1.95;
        GaitSetup {
            params,
            command: GaitCommand {
                desired_velocity: 0.6,
                desired_apex: 0.32,
                attack_angle: attack,
            },
            servo: ServoConfig {
                attack_angle: attack,
                time_constant: 0.0,
                velocity_gain: 0.0,
            },
            noise: NoiseConfig::exact(11),
            controller: ControllerConfig::default(),
            integrator: IntegratorConfig::default(),
            limits: RunLimits::default(),
            sample_every: u32::MAX,
        }
    }

    #[test]
    fn jacobian_of_identity_is_identity() {
        let j = fd_jacobian::<Infallible>(|p| Ok(p), (0.3, 0.7), 1e-4).unwrap();
        // (0.3 + 1e-4) - (0.3 - 1e-4) is not exactly 2e-4 in floating point,
        // so the diagonal recovers 1 only to rounding accuracy.
        assert_abs_diff_eq!(j[0][0], 1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(j[0][1], 0.0, epsilon = 1e-11);
        assert_abs_diff_eq!(j[1][0], 0.0, epsilon = 1e-11);
        assert_abs_diff_eq!(j[1][1], 1.0, epsilon = 1e-11);
    }

    #[test]
    fn jacobian_recovers_linear_map_entries() {
        let j = fd_jacobian::<Infallible>(
            |(y, v)| Ok((2.0 * y + 0.5 * v, -1.0 * y + 3.0 * v)),
            (0.4, -0.2),
            1e-5,
        )
        .unwrap();
        assert_abs_diff_eq!(j[0][0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[0][1], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(j[1][0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[1][1], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn central_difference_error_scales_with_delta_squared() {
        // For y^3 the central difference carries an exact +delta^2 bias.
        let at = |delta: f64| {
            fd_jacobian::<Infallible>(|(y, v)| Ok((y * y * y, v)), (1.0, 0.0), delta).unwrap()[0][0]
        };
        assert_abs_diff_eq!(at(1e-3) - 3.0, 1e-6, epsilon = 1e-9);
        assert_abs_diff_eq!(at(2e-3) - 3.0, 4e-6, epsilon = 1e-9);
    }

    #[test]
    fn eigenvalue_magnitudes_match_closed_forms() {
        // Real spectrum: triangular matrix shows its diagonal.
        let real = eigenvalue_magnitudes_2x2(&[[0.5, 0.2], [0.0, -0.8]]);
        assert_abs_diff_eq!(real[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(real[1], 0.5, epsilon = 1e-15);
        // Rotation scaled by 0.9: complex pair of modulus 0.9.
        let c = 0.9 * std::f64::consts::FRAC_1_SQRT_2;
        let complex = eigenvalue_magnitudes_2x2(&[[c, -c], [c, c]]);
        assert_abs_diff_eq!(complex[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(complex[1], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn apex_map_is_deterministic_even_with_noise_in_setup() {
        let mut setup = test_setup();
        setup.noise.touchdown_fraction = 0.2;
        let a = apex_return(&setup, (0.32, 0.6)).unwrap();
        let b = apex_return(&setup, (0.32, 0.6)).unwrap();
        assert_eq!(a, b);
        // And it matches the zero-noise map: the map forces noise off.
        let mut quiet = setup;
        quiet.noise.touchdown_fraction = 0.0;
        let c = apex_return(&quiet, (0.32, 0.6)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn limit_cycle_search_converges_and_is_a_fixed_point() {
        let setup = test_setup();
        let cycle = find_limit_cycle(
            &setup,
            (setup.command.desired_apex, setup.command.desired_velocity),
        )
        .unwrap();
        assert!(cycle.converged, "no convergence in {} iterations", cycle.iterations);
        assert!(cycle.iterations < LIMIT_CYCLE_MAX_ITERS);
        let image = apex_return(&setup, cycle.apex).unwrap();
        let diff = (image.0 - cycle.apex.0)
            .abs()
            .max((image.1 - cycle.apex.1).abs());
        assert!(diff < 10.0 * LIMIT_CYCLE_TOLERANCE, "residual {diff}");
        assert_eq!(cycle.history.len(), cycle.iterations + 1);
    }

    #[test]
    fn return_map_is_contractive_at_the_fixed_point() {
        let setup = test_setup();
        let cycle = find_limit_cycle(
            &setup,
            (setup.command.desired_apex, setup.command.desired_velocity),
        )
        .unwrap();
        assert!(cycle.converged);
        let analysis = analyze_return_map(&setup, cycle.apex, RETURN_MAP_DELTA).unwrap();
        assert!(
            analysis.stable,
            "eigenvalue magnitudes {:?}",
            analysis.eigenvalue_magnitudes
        );
        assert!(
            analysis.max_entry_disagreement < 1e-3,
            "differencing not converged: {}",
            analysis.max_entry_disagreement
        );
    }

    #[test]
    fn robustness_sweep_is_deterministic_and_structured() {
        let setup = test_setup();
        let levels = [0.0, 0.08];
        let a = robustness_sweep(&setup, &levels, 2, 4, 1e-3).unwrap();
        let b = robustness_sweep(&setup, &levels, 2, 4, 1e-3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 4);
        // Zero noise from the fixed point: success with negligible deviation.
        for cell in a.cells.iter().filter(|c| c.level == 0.0) {
            assert!(cell.success);
            assert!(cell.max_apex_deviation < 1e-5, "deviation {}", cell.max_apex_deviation);
            assert_eq!(cell.cycles_to_band, Some(0));
        }
        assert_abs_diff_eq!(a.success_rate(0.0), 1.0, epsilon = 0.0);
        // Cells carry distinct seeds per run index.
        let seeds: Vec<u64> = a.cells.iter().map(|c| c.seed).collect();
        assert_eq!(seeds[0] + 1, seeds[1]);
    }

    #[test]
    fn robustness_sweep_rejects_bad_levels() {
        let setup = test_setup();
        assert!(robustness_sweep(&setup, &[0.6], 1, 1, 1e-3).is_err());
        assert!(robustness_sweep(&setup, &[-0.1], 1, 1, 1e-3).is_err());
        assert!(robustness_sweep(&setup, &[0.1], 0, 1, 1e-3).is_err());
    }
}
