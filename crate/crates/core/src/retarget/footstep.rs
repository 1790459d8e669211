//! Threshold-based step detection on the ankle trackers.

use serde::{Deserialize, Serialize};

use crate::math::{quat_from_yaw, wrap_angle, yaw_of, Pose, Vec3};

use super::TrackerBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for left, -1 for right (the side's lateral direction).
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FootstepParams {
    /// Horizontal ankle displacement that counts as a step (m).
    pub step_threshold: f64,
    /// Ankle rise that counts as a lift (m).
    pub lift_threshold: f64,
    /// Commanded stride length (m).
    pub stride: f64,
    /// Ankle yaw change that triggers a turning step (rad).
    pub turning_threshold: f64,
    /// Movement window under which the ankle counts as still (m).
    pub stability_threshold: f64,
    pub stability_samples: u32,
    /// Largest horizontal distance from the stance foot (m).
    pub max_reach: f64,
    /// Largest yaw relative to the stance foot (rad).
    pub max_step_yaw: f64,
    /// Allowed lateral distance from the stance foot, on the swing foot's side (m).
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for FootstepParams {
    fn default() -> Self {
        Self {
            step_threshold: 0.15,
            lift_threshold: 0.08,
            stride: 0.30,
            turning_threshold: 25f64.to_radians(),
            stability_threshold: 0.02,
            stability_samples: 20,
            max_reach: 0.5,
            max_step_yaw: 30f64.to_radians(),
            min_width: 0.1,
            max_width: 0.45,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootstepCommand {
    pub side: Side,
    /// Sole pose, yaw-only orientation.
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    Reach,
    Width,
    Yaw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideState {
    pub initial_ankle: Pose,
    pub stepping: bool,
    pub stability_counter: u32,
    pub last_yaw: f64,
    /// Start of the current stillness window.
    window_anchor: Vec3,
}

impl SideState {
    fn new(ankle: &Pose) -> Self {
        Self {
            initial_ankle: *ankle,
            stepping: false,
            stability_counter: 0,
            last_yaw: yaw_of(&ankle.orientation),
            window_anchor: ankle.position,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FootstepStreamState {
    pub sides: [SideState; 2],
    /// Last candidate dropped by the feasibility check.
    pub last_rejection: Option<(Side, Infeasibility)>,
}

/// Kinematic feasibility of placing `side` at `target` next to `stance`.
pub fn check_feasibility(side: Side, target: &Pose, stance: &Pose, params: &FootstepParams) -> Result<(), Infeasibility> {
    let stance_yaw = yaw_of(&stance.orientation);
    let rel = quat_from_yaw(stance_yaw).inverse() * (target.position - stance.position);
    if rel.x.hypot(rel.y) > params.max_reach {
        return Err(Infeasibility::Reach);
    }
    let lateral = side.sign() * rel.y;
    if lateral < params.min_width || lateral > params.max_width {
        return Err(Infeasibility::Width);
    }
    if wrap_angle(yaw_of(&target.orientation) - stance_yaw).abs() > params.max_step_yaw {
        return Err(Infeasibility::Yaw);
    }
    Ok(())
}

impl FootstepStreamState {
    pub fn new(bundle: &TrackerBundle) -> Self {
        Self {
            sides: [SideState::new(&bundle.ankle_left), SideState::new(&bundle.ankle_right)],
            last_rejection: None,
        }
    }

    /// Processes one bundle; emits at most one command per call.
    pub fn update(&mut self, bundle: &TrackerBundle, robot_feet: &[Pose; 2], params: &FootstepParams) -> Option<FootstepCommand> {
        let mut emitted = None;
        for side in Side::BOTH {
            let ankle = bundle.ankle(side);
            let st = &mut self.sides[side.index()];

            // stillness window
            if (ankle.position - st.window_anchor).norm() < params.stability_threshold {
                st.stability_counter = st.stability_counter.saturating_add(1);
            } else {
                st.window_anchor = ankle.position;
                st.stability_counter = 0;
            }
            if st.stepping {
                if st.stability_counter >= params.stability_samples {
                    *st = SideState::new(ankle);
                }
                continue;
            }
            if emitted.is_some() {
                continue;
            }

            let disp = ankle.position - st.initial_ankle.position;
            let horizontal = Vec3::new(disp.x, disp.y, 0.0);
            let yaw_change = wrap_angle(yaw_of(&ankle.orientation) - st.last_yaw);
            let moved = horizontal.norm() > params.step_threshold && disp.z > params.lift_threshold;
            let turned = yaw_change.abs() > params.turning_threshold;
            if !moved && !turned {
                continue;
            }
            // one candidate per detected step, feasible or not
            st.stepping = true;
            st.stability_counter = 0;
            st.window_anchor = ankle.position;

            let foot = &robot_feet[side.index()];
            let mut position = foot.position;
            if moved {
                position += horizontal / horizontal.norm() * params.stride;
            }
            let mut yaw = yaw_of(&foot.orientation);
            if turned {
                yaw += yaw_change.clamp(-params.max_step_yaw, params.max_step_yaw);
            }
            let pose = Pose::new(position, quat_from_yaw(wrap_angle(yaw)));
            match check_feasibility(side, &pose, &robot_feet[side.other().index()], params) {
                Ok(()) => {
                    emitted = Some(FootstepCommand {
                        side,
                        pose,
                        timestamp: bundle.timestamp,
                    })
                }
                Err(why) => {
                    log::info!("dropping infeasible {side:?} footstep: {why:?}");
                    self.last_rejection = Some((side, why));
                }
            }
        }
        emitted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::tests::standing_bundle;

    fn feet() -> [Pose; 2] {
        [
            Pose::from_position(Vec3::new(0.0, 0.0, 0.0)),
            Pose::from_position(Vec3::new(0.0, -0.2, 0.0)),
        ]
    }

    #[test]
    fn below_thresholds_no_command() {
        let b0 = standing_bundle();
        let mut st = FootstepStreamState::new(&b0);
        let mut b = b0;
        b.ankle_left.position += Vec3::new(0.05, 0.0, 0.02);
        assert!(st.update(&b, &feet(), &FootstepParams::default()).is_none());
        assert!(!st.sides[0].stepping);
    }

    #[test]
    fn forward_step_hand_computed() {
        let b0 = standing_bundle();
        let mut st = FootstepStreamState::new(&b0);
        let mut b = b0;
        b.ankle_left.position += Vec3::new(0.40, 0.0, 0.12);
        let cmd = st.update(&b, &feet(), &FootstepParams::default()).unwrap();
        assert_eq!(cmd.side, Side::Left);
        // direction (1, 0, 0) * 0.30 from the robot foot at the origin
        assert!((cmd.pose.position - Vec3::new(0.30, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(cmd.pose.orientation, feet()[0].orientation);
        // stepping flag blocks a second command for the same swing
        b.ankle_left.position += Vec3::new(0.01, 0.0, 0.0);
        assert!(st.update(&b, &feet(), &FootstepParams::default()).is_none());
    }

    #[test]
    fn in_place_turn_is_clamped() {
        let b0 = standing_bundle();
        let mut st = FootstepStreamState::new(&b0);
        let mut b = b0;
        b.ankle_left.orientation = quat_from_yaw(40f64.to_radians());
        let cmd = st.update(&b, &feet(), &FootstepParams::default()).unwrap();
        assert_eq!(cmd.pose.position, feet()[0].position);
        assert!((yaw_of(&cmd.pose.orientation) - 30f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn small_turn_is_ignored() {
        let b0 = standing_bundle();
        let mut st = FootstepStreamState::new(&b0);
        let mut b = b0;
        b.ankle_left.orientation = quat_from_yaw(20f64.to_radians());
        assert!(st.update(&b, &feet(), &FootstepParams::default()).is_none());
    }

    #[test]
    fn infeasible_step_is_dropped_once() {
        let b0 = standing_bundle();
        let mut st = FootstepStreamState::new(&b0);
        let mut b = b0;
        // sideways into the stance foot
        b.ankle_left.position += Vec3::new(0.0, -0.3, 0.12);
        assert!(st.update(&b, &feet(), &FootstepParams::default()).is_none());
        assert_eq!(st.last_rejection, Some((Side::Left, Infeasibility::Width)));
        assert!(st.sides[0].stepping);
    }

    #[test]
    fn feasibility_rules() {
        let p = FootstepParams::default();
        let stance = Pose::from_position(Vec3::new(0.0, -0.2, 0.0));
        let at = |x: f64, y: f64, yaw: f64| Pose::new(Vec3::new(x, y, 0.0), quat_from_yaw(yaw));
        assert_eq!(check_feasibility(Side::Left, &at(0.3, 0.0, 0.0), &stance, &p), Ok(()));
        assert_eq!(check_feasibility(Side::Left, &at(0.6, 0.0, 0.0), &stance, &p), Err(Infeasibility::Reach));
        assert_eq!(check_feasibility(Side::Left, &at(0.0, -0.15, 0.0), &stance, &p), Err(Infeasibility::Width));
        assert_eq!(check_feasibility(Side::Left, &at(0.0, 0.0, 0.6), &stance, &p), Err(Infeasibility::Yaw));
        // right foot must stay on the right of a left stance
        let left_stance = Pose::from_position(Vec3::new(0.0, 0.2, 0.0));
        assert_eq!(check_feasibility(Side::Right, &at(0.2, 0.0, 0.0), &left_stance, &p), Ok(()));
    }

    /// Ankle trajectory of `steps` forward steps of the left foot: lift, swing
    /// 0.4 m forward with a 0.12 m apex over 30 samples, then stand still for 40.
    pub(crate) fn synthetic_walk(steps: usize) -> Vec<TrackerBundle> {
        let b0 = standing_bundle();
        let mut out = vec![b0];
        let mut t = 0.0;
        let mut x = 0.0;
        for _ in 0..steps {
            for i in 1..=30 {
                let s = i as f64 / 30.0;
                let mut b = b0;
                t += 1.0 / 60.0;
                b.timestamp = t;
                b.ankle_left.position += Vec3::new(x + 0.4 * s, 0.0, 0.12 * (std::f64::consts::PI * s).sin());
                out.push(b);
            }
            x += 0.4;
            for _ in 0..40 {
                let mut b = b0;
                t += 1.0 / 60.0;
                b.timestamp = t;
                b.ankle_left.position += Vec3::new(x, 0.0, 0.0);
                out.push(b);
            }
        }
        out
    }

    #[test]
    fn synthetic_walk_fires_once_per_step() {
        let walk = synthetic_walk(3);
        let mut st = FootstepStreamState::new(&walk[0]);
        let mut robot_feet = feet();
        let mut commands = Vec::new();
        for b in &walk[1..] {
            if let Some(c) = st.update(b, &robot_feet, &FootstepParams::default()) {
                // the executor places the foot immediately in this test
                robot_feet[c.side.index()] = c.pose;
                // keep the stance foot alongside so reach stays feasible
                robot_feet[1].position.x = c.pose.position.x;
                commands.push(c);
            }
        }
        assert_eq!(commands.len(), 3);
        for (i, c) in commands.iter().enumerate() {
            assert_eq!(c.side, Side::Left);
            assert!((c.pose.position.x - 0.3 * (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let walk = synthetic_walk(2);
        let run = || {
            let mut st = FootstepStreamState::new(&walk[0]);
            walk[1..].iter().filter_map(|b| st.update(b, &feet(), &FootstepParams::default())).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
