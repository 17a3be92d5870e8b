//! Strict flat-key configuration files.
//!
//! The format is a flat TOML table: every key sits at the top level, every
//! physical quantity carries its unit in the key name, unknown keys are
//! rejected, and all problems in a file are reported together. The parsed
//! result can be echoed back as an equivalent file; artifacts embed that
//! echo so each output records the exact configuration that produced it.

use std::fmt;
use std::path::Path;

use slip_sim::control::{build_plant, observer_gains, tracking_gains};
use slip_sim::gait::{
    ControllerConfig, GaitExecutor, GaitSetup, NoiseConfig, NoiseDistribution, RunLimits,
    ServoConfig,
};
use slip_sim::integrate::IntegratorConfig;
use slip_sim::model::ModelParams;
use slip_sim::reference::GaitCommand;

use crate::output::fmt17;

/// Everything a command needs: the simulation setup plus run length and the
/// artifact file names used inside the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setup: GaitSetup,
    pub n_steps: usize,
    pub trajectory_csv: String,
    pub step_summary: String,
}

/// All problems found in a configuration file, one message per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

struct Extractor {
    map: toml::Table,
    issues: Vec<String>,
}

impl Extractor {
    fn new(map: toml::Table) -> Self {
        Extractor {
            map,
            issues: Vec::new(),
        }
    }

    /// `None` means the problem is already reported; callers substitute a
    /// placeholder and no further message mentions the key.
    fn require_f64(&mut self, key: &str) -> Option<f64> {
        match self.map.remove(key) {
            Some(toml::Value::Float(v)) => Some(v),
            Some(toml::Value::Integer(v)) => Some(v as f64),
            Some(other) => {
                self.issues
                    .push(format!("{key}: expected a number, got {}", other.type_str()));
                None
            }
            None => {
                self.issues.push(format!("missing required key `{key}`"));
                None
            }
        }
    }

    fn optional_f64(&mut self, key: &str, default: f64) -> f64 {
        match self.map.remove(key) {
            Some(toml::Value::Float(v)) => v,
            Some(toml::Value::Integer(v)) => v as f64,
            Some(other) => {
                self.issues
                    .push(format!("{key}: expected a number, got {}", other.type_str()));
                default
            }
            None => default,
        }
    }

    fn require_bool(&mut self, key: &str) -> Option<bool> {
        match self.map.remove(key) {
            Some(toml::Value::Boolean(v)) => Some(v),
            Some(other) => {
                self.issues.push(format!(
                    "{key}: expected true or false, got {}",
                    other.type_str()
                ));
                None
            }
            None => {
                self.issues.push(format!("missing required key `{key}`"));
                None
            }
        }
    }

    fn require_i64(&mut self, key: &str) -> Option<i64> {
        match self.map.remove(key) {
            Some(toml::Value::Integer(v)) => Some(v),
            Some(other) => {
                self.issues.push(format!(
                    "{key}: expected an integer, got {}",
                    other.type_str()
                ));
                None
            }
            None => {
                self.issues.push(format!("missing required key `{key}`"));
                None
            }
        }
    }

    fn optional_i64(&mut self, key: &str, default: i64) -> i64 {
        match self.map.remove(key) {
            Some(toml::Value::Integer(v)) => v,
            Some(other) => {
                self.issues.push(format!(
                    "{key}: expected an integer, got {}",
                    other.type_str()
                ));
                default
            }
            None => default,
        }
    }

    fn optional_string(&mut self, key: &str, default: &str) -> String {
        match self.map.remove(key) {
            Some(toml::Value::String(v)) => v,
            Some(other) => {
                self.issues.push(format!(
                    "{key}: expected a string, got {}",
                    other.type_str()
                ));
                default.to_string()
            }
            None => default.to_string(),
        }
    }

    /// Range check for a count; `None` inputs are already reported.
    fn ranged(&mut self, key: &str, value: Option<i64>, lo: i64, hi: i64) -> i64 {
        match value {
            Some(v) if (lo..=hi).contains(&v) => v,
            Some(v) => {
                self.issues
                    .push(format!("{key}: must lie in [{lo}, {hi}], got {v}"));
                lo
            }
            None => lo,
        }
    }
}

/// Parses a configuration file. Every problem in the file is reported, not
/// just the first one.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        issues: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_str(&text)
}

/// Parses configuration text; see [`parse_config`].
pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let map: toml::Table = text.parse().map_err(|e| ConfigError {
        issues: vec![format!("invalid syntax: {e}")],
    })?;
    let mut ex = Extractor::new(map);

    let mass = ex.require_f64("mass_kg");
    let stiffness = ex.require_f64("stiffness_n_per_m");
    let rest_length = ex.require_f64("rest_length_m");
    let damping = ex.require_f64("damping_n_s_per_m");
    let gravity = ex.require_f64("gravity_m_per_s2");

    let desired_velocity = ex.require_f64("desired_velocity_m_per_s");
    let desired_apex = ex.require_f64("desired_apex_m");
    let attack_angle = ex.require_f64("attack_angle_rad");

    let servo_time_constant = ex.require_f64("servo_time_constant_s");
    let servo_velocity_gain = ex.require_f64("servo_velocity_gain_rad_s_per_m");

    let touchdown_noise = ex.require_f64("touchdown_noise_fraction");
    let liftoff_noise = ex.require_f64("liftoff_noise_fraction");
    // TOML integers are signed; the full 64-bit seed range is expressed by
    // reinterpreting the bits, so negative values are legal here.
    let seed = ex.require_i64("noise_seed").map(|v| v as u64);

    let controller_enabled = ex.require_bool("controller_enabled");
    let eta1 = ex.require_f64("controller_eta1_per_s");
    let eta2 = ex.require_f64("controller_eta2_per_s");
    let saturation = ex.require_f64("controller_saturation_m_per_s");
    let poles = [
        ex.require_f64("observer_pole1_per_s"),
        ex.require_f64("observer_pole2_per_s"),
        ex.require_f64("observer_pole3_per_s"),
        ex.require_f64("observer_pole4_per_s"),
    ];

    let n_steps_raw = ex.require_i64("n_steps");

    let step_size = ex.optional_f64("integrator_step_s", 1e-4);
    let event_tolerance = ex.optional_f64("event_tolerance_s", 1e-9);
    let max_bisection_raw = ex.optional_i64("max_bisection_iters", 60);
    let max_flight_time = ex.optional_f64("max_flight_time_s", 10.0);
    let max_stance_time = ex.optional_f64("max_stance_time_s", 2.0);
    let sample_every_raw = ex.optional_i64("sample_every", 10);
    let trajectory_csv = ex.optional_string("trajectory_csv", "trajectory.csv");
    let step_summary = ex.optional_string("step_summary", "steps.txt");

    let n_steps = ex.ranged("n_steps", n_steps_raw, 1, 1_000_000) as usize;
    let max_bisection_iters =
        ex.ranged("max_bisection_iters", Some(max_bisection_raw), 1, 10_000) as u32;
    let sample_every =
        ex.ranged("sample_every", Some(sample_every_raw), 1, i64::from(u32::MAX)) as u32;

    for (key, name) in [
        ("trajectory_csv", &trajectory_csv),
        ("step_summary", &step_summary),
    ] {
        if name.is_empty() || Path::new(name).is_absolute() {
            ex.issues.push(format!(
                "{key}: must be a non-empty relative file name, got `{name}`"
            ));
        }
    }

    let unknown: Vec<String> = ex.map.keys().cloned().collect();
    for key in unknown {
        ex.issues.push(format!("unknown key `{key}`"));
    }

    let mut issues = ex.issues;
    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }

    // All keys present and well typed from here on; unwrap the placeholders
    // and check the physical invariants, still collecting every violation.
    let (mass, stiffness, rest_length, damping, gravity) = (
        mass.unwrap(),
        stiffness.unwrap(),
        rest_length.unwrap(),
        damping.unwrap(),
        gravity.unwrap(),
    );
    let attack_angle = attack_angle.unwrap();
    let (eta1, eta2, saturation) = (eta1.unwrap(), eta2.unwrap(), saturation.unwrap());
    let poles = [
        poles[0].unwrap(),
        poles[1].unwrap(),
        poles[2].unwrap(),
        poles[3].unwrap(),
    ];
    let controller_enabled = controller_enabled.unwrap();

    let params = match ModelParams::new(mass, stiffness, rest_length, damping, gravity) {
        Ok(p) => Some(p),
        Err(e) => {
            issues.push(format!(
                "model keys (mass_kg, stiffness_n_per_m, rest_length_m, damping_n_s_per_m, gravity_m_per_s2): {e}"
            ));
            None
        }
    };

    let command = GaitCommand {
        desired_velocity: desired_velocity.unwrap(),
        desired_apex: desired_apex.unwrap(),
        attack_angle,
    };
    if let Some(p) = &params {
        if let Err(e) = command.validate(p) {
            issues.push(format!(
                "gait keys (desired_velocity_m_per_s, desired_apex_m, attack_angle_rad): {e}"
            ));
        }
    }

    let servo = ServoConfig {
        attack_angle,
        time_constant: servo_time_constant.unwrap(),
        velocity_gain: servo_velocity_gain.unwrap(),
    };
    if let Err(e) = servo.validate() {
        issues.push(format!(
            "servo keys (attack_angle_rad, servo_time_constant_s, servo_velocity_gain_rad_s_per_m): {e}"
        ));
    }

    let noise = NoiseConfig {
        touchdown_fraction: touchdown_noise.unwrap(),
        liftoff_fraction: liftoff_noise.unwrap(),
        seed: seed.unwrap(),
        distribution: NoiseDistribution::UniformSymmetric,
    };
    if let Err(e) = noise.validate() {
        issues.push(format!(
            "noise keys (touchdown_noise_fraction, liftoff_noise_fraction): {e}"
        ));
    }

    if controller_enabled {
        if let Err(e) = tracking_gains(eta1, eta2) {
            issues.push(format!(
                "controller keys (controller_eta1_per_s, controller_eta2_per_s): {e}"
            ));
        }
        if let Err(e) = observer_gains(&build_plant(), &poles) {
            issues.push(format!("observer_pole*_per_s: {e}"));
        }
    }
    if !saturation.is_finite() || saturation < 0.0 {
        issues.push(format!(
            "controller_saturation_m_per_s: must be finite and non-negative, got {saturation}"
        ));
    }

    let integrator = match IntegratorConfig::new(step_size, event_tolerance, max_bisection_iters) {
        Ok(i) => Some(i),
        Err(e) => {
            issues.push(format!(
                "integrator keys (integrator_step_s, event_tolerance_s, max_bisection_iters): {e}"
            ));
            None
        }
    };

    for (key, value) in [
        ("max_flight_time_s", max_flight_time),
        ("max_stance_time_s", max_stance_time),
    ] {
        if !value.is_finite() || value <= 0.0 {
            issues.push(format!("{key}: must be positive and finite, got {value}"));
        }
    }

    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }

    let setup = GaitSetup {
        params: params.expect("validated above"),
        command,
        servo,
        noise,
        controller: ControllerConfig {
            enabled: controller_enabled,
            eta1,
            eta2,
            observer_poles: poles,
            saturation,
        },
        integrator: integrator.expect("validated above"),
        limits: RunLimits {
            max_flight_time,
            max_stance_time,
        },
        sample_every,
    };

    // Executor construction re-checks everything the run itself relies on,
    // catching any cross-field constraint the per-key checks missed.
    if let Err(e) = GaitExecutor::new(setup) {
        return Err(ConfigError {
            issues: vec![format!("configuration rejected: {e}")],
        });
    }

    Ok(RunConfig {
        setup,
        n_steps,
        trajectory_csv,
        step_summary,
    })
}

fn push_float(out: &mut String, key: &str, v: f64) {
    out.push_str(key);
    out.push_str(" = ");
    out.push_str(&fmt17(v));
    out.push('\n');
}

/// Renders the effective configuration as a file equivalent to the one it
/// was parsed from: parsing the echo reproduces the same `RunConfig`.
pub fn echo_toml(cfg: &RunConfig) -> String {
    let s = &cfg.setup;
    let mut out = String::new();
    push_float(&mut out, "mass_kg", s.params.mass);
    push_float(&mut out, "stiffness_n_per_m", s.params.stiffness);
    push_float(&mut out, "rest_length_m", s.params.rest_length);
    push_float(&mut out, "damping_n_s_per_m", s.params.damping);
    push_float(&mut out, "gravity_m_per_s2", s.params.gravity);
    push_float(&mut out, "desired_velocity_m_per_s", s.command.desired_velocity);
    push_float(&mut out, "desired_apex_m", s.command.desired_apex);
    push_float(&mut out, "attack_angle_rad", s.command.attack_angle);
    push_float(&mut out, "servo_time_constant_s", s.servo.time_constant);
    push_float(&mut out, "servo_velocity_gain_rad_s_per_m", s.servo.velocity_gain);
    push_float(&mut out, "touchdown_noise_fraction", s.noise.touchdown_fraction);
    push_float(&mut out, "liftoff_noise_fraction", s.noise.liftoff_fraction);
    out.push_str(&format!("noise_seed = {}\n", s.noise.seed as i64));
    out.push_str(&format!("controller_enabled = {}\n", s.controller.enabled));
    push_float(&mut out, "controller_eta1_per_s", s.controller.eta1);
    push_float(&mut out, "controller_eta2_per_s", s.controller.eta2);
    push_float(&mut out, "controller_saturation_m_per_s", s.controller.saturation);
    push_float(&mut out, "observer_pole1_per_s", s.controller.observer_poles[0]);
    push_float(&mut out, "observer_pole2_per_s", s.controller.observer_poles[1]);
    push_float(&mut out, "observer_pole3_per_s", s.controller.observer_poles[2]);
    push_float(&mut out, "observer_pole4_per_s", s.controller.observer_poles[3]);
    out.push_str(&format!("n_steps = {}\n", cfg.n_steps));
    push_float(&mut out, "integrator_step_s", s.integrator.step_size);
    push_float(&mut out, "event_tolerance_s", s.integrator.event_tolerance);
    out.push_str(&format!(
        "max_bisection_iters = {}\n",
        s.integrator.max_bisection_iters
    ));
    push_float(&mut out, "max_flight_time_s", s.limits.max_flight_time);
    push_float(&mut out, "max_stance_time_s", s.limits.max_stance_time);
    out.push_str(&format!("sample_every = {}\n", s.sample_every));
    out.push_str(&format!("trajectory_csv = {:?}\n", cfg.trajectory_csv));
    out.push_str(&format!("step_summary = {:?}\n", cfg.step_summary));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_config() -> String {
        r#"
mass_kg = 6.0
stiffness_n_per_m = 2200.0
rest_length_m = 0.25
damping_n_s_per_m = 5.0
gravity_m_per_s2 = 9.81
desired_velocity_m_per_s = 0.6
desired_apex_m = 0.32
attack_angle_rad = 1.95
servo_time_constant_s = 0.0
servo_velocity_gain_rad_s_per_m = 0.0
touchdown_noise_fraction = 0.0
liftoff_noise_fraction = 0.0
noise_seed = 5
controller_enabled = true
controller_eta1_per_s = -20.0
controller_eta2_per_s = -20.0
controller_saturation_m_per_s = 2.0
observer_pole1_per_s = -160.0
observer_pole2_per_s = -160.0
observer_pole3_per_s = -160.0
observer_pole4_per_s = -160.0
n_steps = 10
"#
        .to_string()
    }

    #[test]
    fn full_config_parses_and_defaults_fill_in() {
        let cfg = parse_str(&full_config()).unwrap();
        assert_eq!(cfg.n_steps, 10);
        assert_eq!(cfg.setup.integrator.step_size, 1e-4);
        assert_eq!(cfg.setup.sample_every, 10);
        assert_eq!(cfg.trajectory_csv, "trajectory.csv");
        assert_eq!(cfg.setup.noise.seed, 5);
    }

    #[test]
    fn empty_file_lists_every_required_key() {
        let err = parse_str("").unwrap_err();
        let text = err.to_string();
        for key in [
            "mass_kg",
            "stiffness_n_per_m",
            "rest_length_m",
            "damping_n_s_per_m",
            "gravity_m_per_s2",
            "desired_velocity_m_per_s",
            "desired_apex_m",
            "attack_angle_rad",
            "servo_time_constant_s",
            "servo_velocity_gain_rad_s_per_m",
            "touchdown_noise_fraction",
            "liftoff_noise_fraction",
            "noise_seed",
            "controller_enabled",
            "controller_eta1_per_s",
            "controller_eta2_per_s",
            "controller_saturation_m_per_s",
            "observer_pole1_per_s",
            "observer_pole2_per_s",
            "observer_pole3_per_s",
            "observer_pole4_per_s",
            "n_steps",
        ] {
            assert!(
                text.contains(&format!("missing required key `{key}`")),
                "missing-key list omits {key}:\n{text}"
            );
        }
        assert_eq!(err.issues.len(), 22);
    }

    #[test]
    fn negative_mass_names_the_violated_invariant() {
        let text = full_config().replace("mass_kg = 6.0", "mass_kg = -1.0");
        let err = parse_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mass_kg"), "{msg}");
        assert!(msg.contains("> 0"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = format!("{}\nwingspan_m = 1.0\n", full_config());
        let err = parse_str(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key `wingspan_m`"));
    }

    #[test]
    fn echo_round_trips_to_the_identical_config() {
        let cfg = parse_str(&full_config()).unwrap();
        let echoed = echo_toml(&cfg);
        let again = parse_str(&echoed).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn negative_seed_round_trips_through_bit_reinterpretation() {
        let text = full_config().replace("noise_seed = 5", "noise_seed = -1");
        let cfg = parse_str(&text).unwrap();
        assert_eq!(cfg.setup.noise.seed, u64::MAX);
        let again = parse_str(&echo_toml(&cfg)).unwrap();
        assert_eq!(again.setup.noise.seed, u64::MAX);
    }

    #[test]
    fn wrong_value_types_report_per_key() {
        let text = full_config().replace("n_steps = 10", "n_steps = \"ten\"");
        let err = parse_str(&text).unwrap_err();
        assert!(err.to_string().contains("n_steps: expected an integer"));
    }

    #[test]
    fn infeasible_geometry_is_a_config_error() {
        // Apex below the touchdown height leaves the plan no drop to work with.
        let text = full_config().replace("desired_apex_m = 0.32", "desired_apex_m = 0.10");
        let err = parse_str(&text).unwrap_err();
        assert!(!err.issues.is_empty());
    }
}
