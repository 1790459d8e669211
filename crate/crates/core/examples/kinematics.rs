//! Forward kinematics, Jacobians, CoM and self-collision proximity on the
//! bundled humanoid.

use kst::model::{
    centroidal_momentum_matrix, collision_proximity, com_position, forward_kinematics, JointVelocity, RobotModel,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model");
    let model = RobotModel::load(path)?;
    let mut q = model.initial_configuration();
    q.joint_positions[model.joint_id("left_shoulder_pitch").ok_or("no shoulder")?] = -0.8;
    let fk = forward_kinematics(&model, &q)?;

    println!("{}: {} joints, {} velocity dofs, {:.2} kg", model.name, model.num_joints(), model.nv(), model.total_mass());
    for name in ["left_hand", "right_hand", "chest", "left_foot"] {
        let p = fk.frame_pose_by_name(&model, name)?;
        println!("{name:<11} at {:>7.4} {:>7.4} {:>7.4}", p.position.x, p.position.y, p.position.z);
    }

    // the Jacobian predicts the hand displacement of a small joint motion
    let hand = model.frame_id("left_hand")?;
    let p = fk.frame_pose(&model, hand);
    let jac = fk.point_jacobian(&model, model.frames()[hand].link, &p.position);
    let mut v = JointVelocity::zeros(model.num_joints());
    v.joint_rates[model.joint_id("left_elbow_pitch").ok_or("no elbow")?] = 1.0;
    let h = 1e-6;
    let moved = forward_kinematics(&model, &q.integrate(&v, h))?.frame_pose(&model, hand).position;
    let predicted = (jac * v.to_vector()).fixed_rows::<3>(3).into_owned();
    println!("elbow rate 1 rad/s: Jacobian {:.5?}, finite difference {:.5?}", predicted.as_slice(), ((moved - p.position) / h).as_slice());

    let com = com_position(&model, &fk);
    let momentum = centroidal_momentum_matrix(&model, &fk) * v.to_vector();
    println!("CoM {:.4?}, linear momentum from the elbow {:.4?}", com.as_slice(), &momentum.as_slice()[3..]);

    let mut report = collision_proximity(&model, &fk, model.collision_pairs());
    report.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    for p in report.iter().take(4) {
        let (a, b) = (&model.shapes()[p.shape_a].name, &model.shapes()[p.shape_b].name);
        println!("{a:>14} / {b:<14} {:.4} m", p.distance);
    }
    Ok(())
}
