//! Adaptive parallel position-force controller.
//!
//! The command is a 6-dim task-space increment
//!
//! ```text
//! delta = S (Kp_x x_e + Kd_x xdot_e) + a_x + (1 - S)(Kp_f F_e + Ki_f int F_e dt)
//! ```
//!
//! with `F_e = F_g - F_ext`. Only `Kp_x`, `Kp_f` and `S` are chosen by the
//! policy; `Kd_x = 2 sqrt(Kp_x)` (critical damping) and `Ki_f = 0.01 Kp_f`.

use alloc::format;

use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::geom::{exp_rotation, Pose, Vec3, Vec6};

/// Number of policy-controlled controller parameters.
pub const PARAM_ACTION_DIM: usize = 18;
/// Integral gain as a fraction of the force proportional gain.
pub const INTEGRAL_RATIO: f64 = 0.01;
const ACTION_TOL: f64 = 1e-6;

/// `[base - range, base + range]` for one 6-vector of parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ParamGroup {
    pub base: [f64; 6],
    pub range: [f64; 6],
}

impl ParamGroup {
    pub fn uniform(base: f64, range: f64) -> Self {
        Self {
            base: [base; 6],
            range: [range; 6],
        }
    }

    /// Translation and rotation entries with separate values.
    pub fn split(base: [f64; 2], range: [f64; 2]) -> Self {
        Self {
            base: [base[0], base[0], base[0], base[1], base[1], base[1]],
            range: [range[0], range[0], range[0], range[1], range[1], range[1]],
        }
    }

    fn map(&self, a: &[f64]) -> Vec6 {
        Vec6::from_fn(|i, _| self.base[i] + a[i] * self.range[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ParamRanges {
    /// Position proportional gain, per inner step.
    pub kp_x: ParamGroup,
    /// Force proportional gain, m/N (translation) and rad/(N m) (rotation).
    pub kp_f: ParamGroup,
    /// Selection matrix diagonal.
    pub selection: ParamGroup,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            kp_x: ParamGroup::uniform(15.0, 10.0),
            kp_f: ParamGroup::split([0.02, 0.2], [0.018, 0.18]),
            selection: ParamGroup::uniform(0.5, 0.5),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("kp_x", &self.kp_x),
            ("kp_f", &self.kp_f),
            ("selection", &self.selection),
        ] {
            for i in 0..6 {
                let (b, r) = (g.base[i], g.range[i]);
                if !b.is_finite() || !r.is_finite() || r < 0.0 {
                    return Err(Error::Config(format!(
                        "{name}[{i}]: range must be finite and >= 0"
                    )));
                }
                if name != "selection" && b - r < 0.0 {
                    return Err(Error::Config(format!(
                        "{name}[{i}]: base - range must be >= 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gains and selection of the parallel controller.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerParams {
    pub kp_x: Vec6,
    pub kd_x: Vec6,
    pub kp_f: Vec6,
    pub ki_f: Vec6,
    pub selection: Vec6,
}

impl ControllerParams {
    /// Build from the independent gains, deriving the dependent ones.
    pub fn from_gains(kp_x: Vec6, kp_f: Vec6, selection: Vec6) -> Self {
        Self {
            kd_x: kp_x.map(|k| 2.0 * Float::sqrt(k)),
            ki_f: kp_f * INTEGRAL_RATIO,
            kp_x,
            kp_f,
            selection: selection.map(|s| s.clamp(0.0, 1.0)),
        }
    }
}

/// Map 18 policy outputs in [-1, 1] onto `[Kp_x, Kp_f, S]`.
pub fn map_action_to_params(a_p: &[f64], ranges: &ParamRanges) -> Result<ControllerParams> {
    if a_p.len() != PARAM_ACTION_DIM {
        return Err(Error::InvalidAction(format!(
            "expected {PARAM_ACTION_DIM} parameter actions, got {}",
            a_p.len()
        )));
    }
    let mut a = [0.0; PARAM_ACTION_DIM];
    for (i, (&v, slot)) in a_p.iter().zip(a.iter_mut()).enumerate() {
        if !v.is_finite() || v.abs() > 1.0 + ACTION_TOL {
            return Err(Error::InvalidAction(format!(
                "a_p[{i}] = {v} outside [-1, 1]"
            )));
        }
        *slot = v.clamp(-1.0, 1.0);
    }
    Ok(ControllerParams::from_gains(
        ranges.kp_x.map(&a[0..6]),
        ranges.kp_f.map(&a[6..12]),
        ranges.selection.map(&a[12..18]),
    ))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ControllerConfig {
    /// Anti-windup bound on each component of the force-error integral.
    pub integral_bound: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            integral_bound: 10.0,
        }
    }
}

/// Accumulator of the PI force branch plus the last pose error seen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerState {
    pub force_error_integral: Vec6,
    pub last_pose_error: Option<Vec6>,
}

impl ControllerState {
    /// Per-step change of the pose error; zero on the first call after a reset.
    pub fn error_increment(&self, x_e: &Vec6) -> Vec6 {
        self.last_pose_error
            .map_or(Vec6::zeros(), |last| x_e - last)
    }
}

/// The three additive terms of the parallel control law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlTerms {
    /// `S (Kp_x x_e + Kd_x xdot_e)`.
    pub position: Vec6,
    /// `(1 - S)(Kp_f F_e + Ki_f int F_e dt)`.
    pub force: Vec6,
    pub policy: Vec6,
}

impl ControlTerms {
    pub fn total(&self) -> Vec6 {
        residual_command(&self.position, &self.force, &self.policy)
    }
}

fn all_finite(v: &Vec6) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Evaluate the parallel control law and advance the force integral.
///
/// The integral term uses the accumulator value from before this step.
#[allow(clippy::too_many_arguments)]
pub fn parallel_control(
    x_e: &Vec6,
    xdot_e: &Vec6,
    f_e: &Vec6,
    params: &ControllerParams,
    a_x: &Vec6,
    state: &ControllerState,
    dt: f64,
    cfg: &ControllerConfig,
) -> Result<(ControlTerms, ControllerState)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt must be positive"));
    }
    if ![x_e, xdot_e, f_e, a_x, &state.force_error_integral]
        .into_iter()
        .all(all_finite)
    {
        return Err(invalid("non-finite controller input"));
    }
    let s = &params.selection;
    let pd = params.kp_x.component_mul(x_e) + params.kd_x.component_mul(xdot_e);
    let pi =
        params.kp_f.component_mul(f_e) + params.ki_f.component_mul(&state.force_error_integral);
    let terms = ControlTerms {
        position: s.component_mul(&pd),
        force: s.map(|v| 1.0 - v).component_mul(&pi),
        policy: *a_x,
    };
    let bound = cfg.integral_bound;
    let next = ControllerState {
        force_error_integral: (state.force_error_integral + f_e * dt)
            .map(|v| v.clamp(-bound, bound)),
        last_pose_error: Some(*x_e),
    };
    Ok((terms, next))
}

/// Residual composition: hand-designed reference term plus force response plus
/// the policy's position action.
pub fn residual_command(x_ref_pd: &Vec6, x_f: &Vec6, a_x: &Vec6) -> Vec6 {
    (x_ref_pd + x_f) + a_x
}

/// Per-step clamp on the commanded increment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CommandLimits {
    /// Meters.
    pub max_translation: f64,
    /// Radians.
    pub max_rotation: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        Self {
            max_translation: 0.005,
            max_rotation: 1f64.to_radians(),
        }
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Turn a 6-dim increment into the commanded pose.
pub fn apply_command(x: &Pose, delta: &Vec6, limits: &CommandLimits) -> Pose {
    let dp = clamp_norm(
        Vec3::new(delta[0], delta[1], delta[2]),
        limits.max_translation,
    );
    let dtheta = clamp_norm(Vec3::new(delta[3], delta[4], delta[5]), limits.max_rotation);
    if !dp.iter().chain(dtheta.iter()).all(|c| c.is_finite()) {
        return *x;
    }
    let mut out = *x;
    out.p += dp;
    if dtheta != Vec3::zeros() {
        out.set_q(exp_rotation(&dtheta) * x.q());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose_error;
    use proptest::prelude::*;

    fn v6(a: [f64; 6]) -> Vec6 {
        Vec6::from(a)
    }

    fn run(params: &ControllerParams, x_e: Vec6, xd: Vec6, f_e: Vec6, a_x: Vec6) -> Vec6 {
        let (t, _) = parallel_control(
            &x_e,
            &xd,
            &f_e,
            params,
            &a_x,
            &ControllerState::default(),
            0.002,
            &ControllerConfig::default(),
        )
        .unwrap();
        t.total()
    }

    #[test]
    fn midpoint_action_gives_base() {
        let r = ParamRanges::default();
        let p = map_action_to_params(&[0.0; 18], &r).unwrap();
        assert_eq!(p.kp_x, v6(r.kp_x.base));
        assert_eq!(p.kp_f, v6(r.kp_f.base));
        assert_eq!(p.selection, v6(r.selection.base));
        assert_eq!(p.kd_x, v6(r.kp_x.base).map(|k| 2.0 * k.sqrt()));
    }

    #[test]
    fn full_action_gives_upper_end() {
        let r = ParamRanges::default();
        let p = map_action_to_params(&[1.0; 18], &r).unwrap();
        for i in 0..6 {
            assert_eq!(p.kp_x[i], r.kp_x.base[i] + r.kp_x.range[i]);
            assert_eq!(p.kp_f[i], r.kp_f.base[i] + r.kp_f.range[i]);
            assert_eq!(p.selection[i], 1.0);
        }
        let p = map_action_to_params(&[-1.0; 18], &r).unwrap();
        assert!(p.selection.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn critical_damping_example() {
        let p =
            ControllerParams::from_gains(Vec6::repeat(100.0), Vec6::repeat(0.5), Vec6::repeat(0.5));
        assert_eq!(p.kd_x, Vec6::repeat(20.0));
        assert_eq!(p.ki_f, Vec6::repeat(0.005));
    }

    #[test]
    fn action_bounds() {
        let r = ParamRanges::default();
        let mut a = [0.0; 18];
        a[3] = 1.0 + 1e-7;
        assert!(map_action_to_params(&a, &r).is_ok());
        a[3] = 1.01;
        assert!(matches!(
            map_action_to_params(&a, &r),
            Err(Error::InvalidAction(_))
        ));
        assert!(map_action_to_params(&[0.0; 17], &r).is_err());
        a[3] = f64::NAN;
        assert!(map_action_to_params(&a, &r).is_err());
    }

    #[test]
    fn selection_extremes() {
        let kp = v6([3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let kpf = Vec6::repeat(0.01);
        let x_e = v6([0.01, -0.02, 0.003, 0.1, 0.0, -0.05]);
        let xd = v6([0.001, 0.0, -0.002, 0.0, 0.01, 0.0]);
        let f_e = v6([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let a_x = v6([0.001, 0.002, 0.0, 0.0, 0.0, 0.003]);

        let pos = ControllerParams::from_gains(kp, kpf, Vec6::repeat(1.0));
        let expected = kp.component_mul(&x_e) + pos.kd_x.component_mul(&xd) + a_x;
        assert!((run(&pos, x_e, xd, f_e * 123.0, a_x) - expected).norm() < 1e-15);

        let force = ControllerParams::from_gains(kp, kpf, Vec6::zeros());
        let out = run(&force, x_e, xd, f_e, a_x);
        assert!((out - (a_x + v6([0.01, 0.0, 0.0, 0.0, 0.0, 0.0]))).norm() < 1e-15);
    }

    /// Independent recomputation of the S = 0.5 case from the two extremes.
    #[test]
    fn half_selection_is_mean_of_extremes() {
        let kp = v6([3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let kpf = v6([0.01, 0.02, 0.03, 0.1, 0.2, 0.3]);
        let x_e = v6([0.01, -0.02, 0.003, 0.1, 0.0, -0.05]);
        let xd = v6([0.001, 0.0, -0.002, 0.0, 0.01, 0.0]);
        let f_e = v6([1.0, -2.0, 0.5, 0.01, 0.0, 0.3]);
        let a_x = v6([0.001, 0.002, 0.0, 0.0, 0.0, 0.003]);
        let zero = Vec6::zeros();
        let pos_only = run(
            &ControllerParams::from_gains(kp, kpf, Vec6::repeat(1.0)),
            x_e,
            xd,
            f_e,
            zero,
        );
        let force_only = run(
            &ControllerParams::from_gains(kp, kpf, zero),
            x_e,
            xd,
            f_e,
            zero,
        );
        let half = run(
            &ControllerParams::from_gains(kp, kpf, Vec6::repeat(0.5)),
            x_e,
            xd,
            f_e,
            a_x,
        );
        let mut oracle = [0.0; 6];
        for i in 0..6 {
            oracle[i] = 0.5 * pos_only[i] + 0.5 * force_only[i] + a_x[i];
        }
        assert!((half - v6(oracle)).norm() < 1e-15);
    }

    #[test]
    fn zero_error_fixed_point() {
        let p = map_action_to_params(&[0.3; 18], &ParamRanges::default()).unwrap();
        let z = Vec6::zeros();
        assert_eq!(run(&p, z, z, z, z), z);
    }

    #[test]
    fn integral_accumulates_then_clamps() {
        let p = ControllerParams::from_gains(Vec6::zeros(), Vec6::repeat(1.0), Vec6::zeros());
        let cfg = ControllerConfig {
            integral_bound: 0.01,
        };
        let mut st = ControllerState::default();
        let f_e = Vec6::repeat(1.0);
        let z = Vec6::zeros();
        let (_, s1) = parallel_control(&z, &z, &f_e, &p, &z, &st, 0.002, &cfg).unwrap();
        assert!((s1.force_error_integral[0] - 0.002).abs() < 1e-15);
        for _ in 0..100 {
            st = parallel_control(&z, &z, &f_e, &p, &z, &st, 0.002, &cfg)
                .unwrap()
                .1;
        }
        assert_eq!(st.force_error_integral, Vec6::repeat(0.01));
        let (t, _) = parallel_control(&z, &z, &f_e, &p, &z, &st, 0.002, &cfg).unwrap();
        assert!((t.force[0] - (1.0 + 0.01 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let p = map_action_to_params(&[0.0; 18], &ParamRanges::default()).unwrap();
        let z = Vec6::zeros();
        let bad = Vec6::repeat(f64::NAN);
        let cfg = ControllerConfig::default();
        let st = ControllerState::default();
        assert!(parallel_control(&bad, &z, &z, &p, &z, &st, 0.002, &cfg).is_err());
        assert!(parallel_control(&z, &z, &z, &p, &z, &st, 0.0, &cfg).is_err());
    }

    #[test]
    fn residual_composition() {
        let a = v6([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = v6([0.5; 6]);
        let c = v6([-1.0; 6]);
        let z = Vec6::zeros();
        assert_eq!(residual_command(&a, &b, &z), a + b);
        assert_eq!(residual_command(&z, &z, &c), c);
        assert_eq!(
            residual_command(&a, &b, &c),
            v6([0.5, 1.5, 2.5, 3.5, 4.5, 5.5])
        );
    }

    #[test]
    fn apply_command_cases() {
        let lim = CommandLimits::default();
        let x = Pose::from_rotation_vector(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.3, 0.0));
        assert_eq!(apply_command(&x, &Vec6::zeros(), &lim), x);
        let y = apply_command(&x, &v6([0.001, 0.0, 0.0, 0.0, 0.0, 0.0]), &lim);
        assert!((y.p - x.p - Vec3::new(0.001, 0.0, 0.0)).norm() < 1e-15);
        let y = apply_command(&x, &v6([0.02, 0.0, 0.0, 0.0, 0.0, 0.0]), &lim);
        assert!(((y.p - x.p).norm() - 0.005).abs() < 1e-15);
        let y = apply_command(&x, &v6([0.0, 0.0, 0.0, 0.0, 0.0, 0.5]), &lim);
        let e = pose_error(&x, &y);
        assert!((e.dtheta.norm() - lim.max_rotation).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gain_identities_hold(a in prop::array::uniform18(-1.0..=1.0f64)) {
            let p = map_action_to_params(&a, &ParamRanges::default()).unwrap();
            for i in 0..6 {
                prop_assert_eq!(p.kd_x[i], 2.0 * p.kp_x[i].sqrt());
                prop_assert_eq!(p.ki_f[i], 0.01 * p.kp_f[i]);
                prop_assert!((0.0..=1.0).contains(&p.selection[i]));
                prop_assert!(p.kp_x[i] >= 0.0 && p.kp_f[i] >= 0.0);
            }
        }

        #[test]
        fn affine_in_selection(
            s in prop::array::uniform6(0.0..=1.0f64),
            x_e in prop::array::uniform6(-0.01..0.01f64),
            f_e in prop::array::uniform6(-20.0..20.0f64),
            a_x in prop::array::uniform6(-0.005..0.005f64),
        ) {
            let kp = Vec6::repeat(12.0);
            let kpf = Vec6::repeat(0.02);
            let z = Vec6::zeros();
            let at = |sel: Vec6, ax: Vec6| run(&ControllerParams::from_gains(kp, kpf, sel), v6(x_e), z, v6(f_e), ax);
            let out_pos = at(Vec6::repeat(1.0), z);
            let out_force = at(z, z);
            let got = at(v6(s), v6(a_x));
            for i in 0..6 {
                let want = s[i] * out_pos[i] + (1.0 - s[i]) * out_force[i] + a_x[i];
                prop_assert!((got[i] - want).abs() < 1e-12);
            }
        }

        #[test]
        fn anti_windup(seq in prop::collection::vec(prop::array::uniform6(-500.0..500.0f64), 1..400)) {
            let p = map_action_to_params(&[0.0; 18], &ParamRanges::default()).unwrap();
            let cfg = ControllerConfig::default();
            let mut st = ControllerState::default();
            let z = Vec6::zeros();
            for f in seq {
                st = parallel_control(&z, &z, &v6(f), &p, &z, &st, 0.002, &cfg).unwrap().1;
                prop_assert!(st.force_error_integral.iter().all(|v| v.abs() <= cfg.integral_bound));
            }
        }
    }
}
