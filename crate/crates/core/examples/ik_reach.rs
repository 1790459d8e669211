//! Whole-body differential IK: the left hand reaches for a point while both
//! feet hold and the CoM stays over the support polygon.

use kst::ik::{contact_tasks, tasks::ALL_AXES, IKConfig, IkEngine, MotionTask};
use kst::math::{Pose, Twist, Vec3};
use kst::model::{com_position, forward_kinematics, RobotModel};
use kst::runtime::{ExecutorConfig, FootstepExecutor};
use nalgebra::Vector2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model"))?;
    let q0 = model.initial_configuration();
    let feet = FootstepExecutor::new(&model, &q0, ExecutorConfig::default())?;
    let support = feet.support_polygon();
    let config = IKConfig::default();

    let hand = model.frame_id("left_hand")?;
    let start = forward_kinematics(&model, &q0)?.frame_pose(&model, hand);
    let goal = Pose::new(start.position + Vec3::new(0.25, 0.1, 0.3), start.orientation);
    let mut tasks = contact_tasks(&feet.foot_targets(0.0), &config);
    tasks.push(MotionTask::spatial("left_hand", hand, config.weights.hands, config.gain, ALL_AXES, goal, Twist::zero()));

    let mut engine = IkEngine::new(&model, q0, config)?;
    for tick in 0..=400 {
        let stats = engine.tick(&model, &tasks, &support)?;
        if tick % 50 == 0 {
            let q = &engine.state().q;
            let fk = forward_kinematics(&model, q)?;
            let err = (fk.frame_pose(&model, hand).position - goal.position).norm();
            let com = com_position(&model, &fk);
            println!(
                "tick {tick:3}  hand error {err:.4} m  CoM margin {:.4} m  qp iters {:2}  active {}  collision rows {}",
                support.signed_distance(&Vector2::new(com.x, com.y)),
                stats.qp_iterations,
                stats.active_constraints,
                stats.collision_rows
            );
        }
    }
    println!("within limits: {}", model.within_limits(&engine.state().q));
    Ok(())
}
