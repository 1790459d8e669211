//! Whole-body differential IK: one weighted QP per tick over the generalized
//! velocity, followed by integration and a safety guard.
//!
//! Every inequality row is built so that `v = 0` is feasible: a constraint
//! already violated at the current state only forbids making it worse.

pub mod support;
pub mod tasks;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{pose_feedback, Vec3};
use crate::model::{
    centroidal_momentum_matrix, collision_proximity, com_jacobian, com_position, forward_kinematics, ForwardKinematics,
    JointConfiguration, JointVelocity, ModelError, Proximity, RobotModel, ShapeId,
};
use crate::qp::{QpSettings, QpSolver, QpStatus, QuadraticProgram};

pub use support::SupportPolygon;
pub use tasks::{build_tasks, contact_tasks, ComMode, FootTarget, MotionTask, TaskKind};

#[derive(Debug, Error)]
pub enum IkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed task `{0}`")]
    Task(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskWeights {
    pub hands: f64,
    pub chest: f64,
    pub pelvis: f64,
    pub com: f64,
    pub momentum: f64,
    pub feet: f64,
    pub other: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            hands: 10.0,
            chest: 1.0,
            pelvis: 5.0,
            com: 20.0,
            momentum: 0.1,
            feet: 1000.0,
            other: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IKConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub weights: TaskWeights,
    pub gain: f64,
    pub foot_gain: f64,
    /// Weight of the nominal-velocity objective on actuated joints.
    pub nominal_weight: f64,
    /// Rate at which the nominal velocity pulls toward the nominal posture;
    /// 0 makes the nominal objective plain joint damping.
    pub nominal_gain: f64,
    /// Overrides the model's initial posture as the nominal one.
    pub nominal_posture: Option<Vec<f64>>,
    /// Damping on the whole generalized velocity.
    pub velocity_damping: f64,
    /// Pairs closer than this get a constraint row.
    pub collision_activation: f64,
    pub min_separation: f64,
    pub com_margin: f64,
    pub com_constraint: bool,
    pub com_mode: ComMode,
    /// Halvings of the velocity the guard may try before freezing.
    pub max_backtracks: usize,
    pub max_qp_iterations: usize,
}

impl Default for IKConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            weights: TaskWeights::default(),
            gain: 50.0,
            foot_gain: 50.0,
            nominal_weight: 0.05,
            nominal_gain: 1.0,
            nominal_posture: None,
            velocity_damping: 0.01,
            collision_activation: 0.05,
            min_separation: 0.01,
            com_margin: 0.02,
            com_constraint: true,
            com_mode: ComMode::BalanceHold,
            max_backtracks: 10,
            max_qp_iterations: 200,
        }
    }
}

/// An assembled tick problem and the meaning of its inequality rows.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub qp: QuadraticProgram,
    pub com_rows: Range<usize>,
    pub collision_rows: Vec<(ShapeId, ShapeId)>,
}

/// Stacked `sqrt(W) J` and `sqrt(W) p` for every selected task axis.
fn stack_tasks(model: &RobotModel, fk: &ForwardKinematics, tasks: &[MotionTask]) -> Result<(DMatrix<f64>, DVector<f64>), IkError> {
    let nv = model.nv();
    let rows: usize = tasks.iter().map(|t| t.selection.iter().filter(|s| **s).count()).sum();
    let mut a = DMatrix::zeros(rows, nv);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    let mut cmm = None;
    let mut jcom = None;
    for task in tasks {
        if !task.is_well_formed() {
            return Err(IkError::Task(task.name.clone()));
        }
        let (jac6, p6): (DMatrix<f64>, [f64; 6]) = match task.kind {
            TaskKind::Spatial { frame } => {
                let link = model
                    .frames()
                    .get(frame)
                    .ok_or_else(|| IkError::Task(task.name.clone()))?
                    .link;
                let pose = fk.frame_pose(model, frame);
                let jac = fk.point_jacobian(model, link, &pose.position);
                let ang = ForwardKinematics::body_angular_rows(&jac, &pose.orientation);
                let mut j = DMatrix::zeros(6, nv);
                j.rows_mut(0, 3).copy_from(&ang);
                j.rows_mut(3, 3).copy_from(&jac.fixed_rows::<3>(3));
                let fb = pose_feedback(&pose, &task.reference, task.gain);
                let ff_ang = pose.orientation.inverse() * (task.reference.orientation * task.feedforward.angular);
                let w = fb.angular + ff_ang;
                let v = fb.linear + task.feedforward.linear;
                (j, [w.x, w.y, w.z, v.x, v.y, v.z])
            }
            TaskKind::Com => {
                let jc = jcom.get_or_insert_with(|| com_jacobian(model, fk));
                let c = com_position(model, fk);
                let mut j = DMatrix::zeros(6, nv);
                j.rows_mut(3, 3).copy_from(jc);
                let v = (task.reference.position - c) * task.gain + task.feedforward.linear;
                (j, [0.0, 0.0, 0.0, v.x, v.y, v.z])
            }
            TaskKind::MomentumMin => {
                let a6 = cmm.get_or_insert_with(|| centroidal_momentum_matrix(model, fk));
                let mut j = DMatrix::zeros(6, nv);
                j.copy_from(a6);
                (j, [0.0; 6])
            }
        };
        for axis in 0..6 {
            if !task.selection[axis] {
                continue;
            }
            let s = task.weights[axis].sqrt();
            a.row_mut(r).copy_from(&(jac6.row(axis) * s));
            b[r] = p6[axis] * s;
            r += 1;
        }
    }
    Ok((a, b))
}

impl IKConfig {
    fn nominal(&self, model: &RobotModel) -> Vec<f64> {
        match &self.nominal_posture {
            Some(p) if p.len() == model.num_joints() => p.clone(),
            _ => model.initial_configuration().joint_positions,
        }
    }
}

/// Builds the tick QP at configuration `q`.
pub fn assemble_qp(
    model: &RobotModel,
    q: &JointConfiguration,
    fk: &ForwardKinematics,
    proximities: &[Proximity],
    tasks: &[MotionTask],
    support: &SupportPolygon,
    config: &IKConfig,
) -> Result<Assembly, IkError> {
    let nv = model.nv();
    let nj = model.num_joints();
    let dt = config.dt;

    let (a, b) = stack_tasks(model, fk, tasks)?;
    let mut h = a.tr_mul(&a);
    let mut g = -a.tr_mul(&b);
    let nominal = config.nominal(model);
    for j in 0..nj {
        let i = 6 + j;
        h[(i, i)] += config.nominal_weight;
        g[i] -= config.nominal_weight * config.nominal_gain * (nominal[j] - q.joint_positions[j]);
    }
    for i in 0..nv {
        h[(i, i)] += config.velocity_damping;
    }
    // exact symmetry for the solver's check
    let h = (&h + h.transpose()) * 0.5;

    let mut lb = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(nv, f64::INFINITY);
    for (j, joint) in model.joints().iter().enumerate() {
        let qj = q.joint_positions[j];
        let lo = (-joint.velocity_limit).max((joint.q_min - qj) / dt).min(0.0);
        let hi = joint.velocity_limit.min((joint.q_max - qj) / dt).max(0.0);
        lb[6 + j] = lo;
        ub[6 + j] = hi;
    }

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let com_start = 0;
    if config.com_constraint && !support.edges().is_empty() {
        let jc = com_jacobian(model, fk);
        let c = com_position(model, fk);
        let cxy = support::Point2::new(c.x, c.y);
        for e in support.edges() {
            let d = e.distance(&cxy);
            let row = -(jc.row(0) * e.normal.x + jc.row(1) * e.normal.y);
            // a violated margin gives a negative bound: the row pushes back inward
            rows.push((row.transpose(), (d - config.com_margin) / dt));
        }
    }
    let com_rows = com_start..rows.len();

    let mut collision_rows = Vec::new();
    for p in proximities.iter().filter(|p| p.distance < config.collision_activation) {
        let la = model.shapes()[p.shape_a].link;
        let lb_ = model.shapes()[p.shape_b].link;
        let ja = fk.point_jacobian(model, la, &p.point_a);
        let jb = fk.point_jacobian(model, lb_, &p.point_b);
        let rel = ja.fixed_rows::<3>(3) - jb.fixed_rows::<3>(3);
        let row = rel.tr_mul(&p.axis);
        rows.push((row, (p.distance - config.min_separation) / dt));
        collision_rows.push((p.shape_a, p.shape_b));
    }

    let mut c = DMatrix::zeros(rows.len(), nv);
    let mut d = DVector::zeros(rows.len());
    for (k, (row, rhs)) in rows.into_iter().enumerate() {
        c.row_mut(k).copy_from(&row.transpose());
        d[k] = rhs;
    }
    Ok(Assembly {
        qp: QuadraticProgram { h, g, lb, ub, c, d },
        com_rows,
        collision_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickOutcome {
    Solved,
    /// Iteration cap hit; the last iterate was used.
    Truncated,
    /// No usable solution; the configuration was held.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickStats {
    pub outcome: TickOutcome,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub active_constraints: usize,
    pub collision_rows: usize,
    /// Number of velocity halvings applied by the guard.
    pub backtracks: usize,
    pub joints_clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IKState {
    pub q: JointConfiguration,
    pub v: JointVelocity,
    pub faults: u64,
    pub ticks: u64,
}

/// Owns the solver, the integrated state and the warm start.
#[derive(Clone, Debug)]
pub struct IkEngine {
    pub config: IKConfig,
    state: IKState,
    solver: QpSolver,
    warm: Option<DVector<f64>>,
    capture: bool,
    last_qp: Option<QuadraticProgram>,
}

struct Safety {
    separations: Vec<f64>,
    com_distance: f64,
}

fn safety(model: &RobotModel, fk: &ForwardKinematics, support: &SupportPolygon) -> Safety {
    let separations = collision_proximity(model, fk, model.collision_pairs())
        .iter()
        .map(|p| p.distance)
        .collect();
    let c = com_position(model, fk);
    Safety {
        separations,
        com_distance: support.signed_distance(&support::Point2::new(c.x, c.y)),
    }
}

const GUARD_TOL: f64 = 1e-9;
const ROUNDING_SLACK: f64 = 1e-12;

impl IkEngine {
    pub fn new(model: &RobotModel, q: JointConfiguration, config: IKConfig) -> Result<Self, IkError> {
        model.check_dimension(&q)?;
        let settings = QpSettings {
            max_iterations: config.max_qp_iterations,
            ..QpSettings::default()
        };
        Ok(Self {
            config,
            state: IKState {
                v: JointVelocity::zeros(model.num_joints()),
                q,
                faults: 0,
                ticks: 0,
            },
            solver: QpSolver::new(settings),
            warm: None,
            capture: false,
            last_qp: None,
        })
    }

    pub fn state(&self) -> &IKState {
        &self.state
    }

    /// Keep a copy of every assembled QP for inspection.
    pub fn capture_qp(&mut self, on: bool) {
        self.capture = on;
        if !on {
            self.last_qp = None;
        }
    }

    pub fn last_qp(&self) -> Option<&QuadraticProgram> {
        self.last_qp.as_ref()
    }

    /// Replaces the configuration, e.g. after an external reset.
    pub fn reset(&mut self, model: &RobotModel, q: JointConfiguration) -> Result<(), IkError> {
        model.check_dimension(&q)?;
        self.state.q = q;
        self.state.v = JointVelocity::zeros(model.num_joints());
        self.warm = None;
        Ok(())
    }

    pub fn assemble(&self, model: &RobotModel, tasks: &[MotionTask], support: &SupportPolygon) -> Result<Assembly, IkError> {
        let fk = forward_kinematics(model, &self.state.q)?;
        let prox = collision_proximity(model, &fk, model.collision_pairs());
        assemble_qp(model, &self.state.q, &fk, &prox, tasks, support, &self.config)
    }

    /// One control tick: solve, integrate, guard, clamp.
    pub fn tick(&mut self, model: &RobotModel, tasks: &[MotionTask], support: &SupportPolygon) -> Result<TickStats, IkError> {
        let q = &self.state.q;
        let fk = forward_kinematics(model, q)?;
        let prox = collision_proximity(model, &fk, model.collision_pairs());
        let assembly = assemble_qp(model, q, &fk, &prox, tasks, support, &self.config)?;
        let before = Safety {
            separations: prox.iter().map(|p| p.distance).collect(),
            com_distance: {
                let c = com_position(model, &fk);
                support.signed_distance(&support::Point2::new(c.x, c.y))
            },
        };

        let warm = self.warm.as_ref().filter(|w| w.len() == model.nv());
        let (mut v, outcome, iterations, kkt, active) = match self.solver.solve(&assembly.qp, warm) {
            Ok(sol) if sol.x.iter().all(|x| x.is_finite()) => match sol.status {
                QpStatus::Optimal => (sol.x, TickOutcome::Solved, sol.iterations, sol.kkt_residual, sol.active_set.len()),
                QpStatus::MaxIterations => {
                    log::warn!("QP hit the iteration cap (kkt residual {:.3e})", sol.kkt_residual);
                    (sol.x, TickOutcome::Truncated, sol.iterations, sol.kkt_residual, sol.active_set.len())
                }
                QpStatus::Infeasible => (DVector::zeros(model.nv()), TickOutcome::Frozen, sol.iterations, f64::NAN, 0),
            },
            Ok(_) => (DVector::zeros(model.nv()), TickOutcome::Frozen, 0, f64::NAN, 0),
            Err(e) => {
                log::warn!("QP rejected: {e}");
                (DVector::zeros(model.nv()), TickOutcome::Frozen, 0, f64::NAN, 0)
            }
        };
        if outcome == TickOutcome::Frozen {
            self.state.faults += 1;
        }

        let (next, backtracks) = self.guarded_step(model, support, &mut v, &before)?;
        let mut next = next;
        let joints_clamped = model.clamp_to_limits(&mut next);

        if self.capture {
            self.last_qp = Some(assembly.qp.clone());
        }
        self.warm = Some(v.clone());
        self.state.v = JointVelocity::from_vector(&v);
        self.state.q = next;
        self.state.ticks += 1;
        Ok(TickStats {
            outcome,
            qp_iterations: iterations,
            kkt_residual: kkt,
            active_constraints: active,
            collision_rows: assembly.collision_rows.len(),
            backtracks,
            joints_clamped,
        })
    }

    /// Halves `v` until the integrated state keeps every separation and the
    /// CoM margin no worse than allowed; zero velocity always passes.
    fn guarded_step(
        &self,
        model: &RobotModel,
        support: &SupportPolygon,
        v: &mut DVector<f64>,
        before: &Safety,
    ) -> Result<(JointConfiguration, usize), IkError> {
        let cfg = &self.config;
        let q = &self.state.q;
        for k in 0..=cfg.max_backtracks {
            if v.iter().all(|x| *x == 0.0) {
                return Ok((q.clone(), k));
            }
            let mut cand = q.integrate(&JointVelocity::from_vector(v), cfg.dt);
            model.clamp_to_limits(&mut cand);
            let fk = forward_kinematics(model, &cand)?;
            let after = safety(model, &fk, support);
            let sep_ok = after
                .separations
                .iter()
                .zip(&before.separations)
                .all(|(a, b)| *a >= floor(cfg.min_separation, *b));
            let com_ok = !cfg.com_constraint
                || support.edges().is_empty()
                || after.com_distance >= floor(cfg.com_margin, before.com_distance);
            if sep_ok && com_ok {
                return Ok((cand, k));
            }
            *v *= 0.5;
        }
        v.fill(0.0);
        Ok((q.clone(), cfg.max_backtracks + 1))
    }
}

/// Lowest acceptable value after a step. A satisfied bound may sag by the
/// tolerance; past that a step may lose only rounding noise, which the
/// constraint row's inward push outweighs, so repeated steps cannot ratchet
/// below the bound.
fn floor(bound: f64, before: f64) -> f64 {
    (bound - GUARD_TOL).min(before - ROUNDING_SLACK)
}

/// Total squared weighted task error `sum |sqrt(W) (J v - p)|^2`, for diagnostics.
pub fn task_residual(model: &RobotModel, q: &JointConfiguration, tasks: &[MotionTask], v: &DVector<f64>) -> Result<f64, IkError> {
    let fk = forward_kinematics(model, q)?;
    let (a, b) = stack_tasks(model, &fk, tasks)?;
    Ok((a * v - b).norm_squared())
}

/// World position of a frame origin; shorthand used by tests and tools.
pub fn frame_position(model: &RobotModel, q: &JointConfiguration, frame: &str) -> Result<Vec3, IkError> {
    let fk = forward_kinematics(model, q)?;
    Ok(fk.frame_pose_by_name(model, frame)?.position)
}
