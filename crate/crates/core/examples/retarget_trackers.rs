//! Maps a synthetic walking tracker stream onto robot references and
//! prints the footstep commands the stream produces.

use kst::model::forward_kinematics;
use kst::model::RobotModel;
use kst::retarget::{RetargetParams, Retargeter, RobotAnchors, LEFT_FOOT, LEFT_SHOULDER, RIGHT_FOOT, RIGHT_SHOULDER};
use kst::runtime::synthetic::Walk;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model"))?;
    let q = model.initial_configuration();
    let fk = forward_kinematics(&model, &q)?;
    let mut anchors = RobotAnchors {
        shoulders: [
            fk.frame_pose_by_name(&model, LEFT_SHOULDER)?.position,
            fk.frame_pose_by_name(&model, RIGHT_SHOULDER)?.position,
        ],
        feet: [fk.frame_pose_by_name(&model, LEFT_FOOT)?, fk.frame_pose_by_name(&model, RIGHT_FOOT)?],
    };
    let mut retargeter = Retargeter::new(&model, &q, RetargetParams::default())?;

    let walk = Walk::default();
    for i in 0..(9.0 * 60.0) as usize {
        let t = i as f64 / 60.0;
        let out = retargeter.process(&walk.bundle_at(t), &anchors)?;
        if i % 60 == 0 {
            let r = &out.references;
            println!(
                "t {t:4.1} s  pelvis z {:.3}  left hand {:.3?}  CoM ground {:.3?}",
                r.pelvis.position.z,
                r.hand_left.position.as_slice(),
                &r.com_ground.as_slice()[..2]
            );
        }
        if let Some(step) = out.footstep {
            println!("t {t:4.2} s  step {:?} to {:.3?}", step.side, step.pose.position.as_slice());
            // pretend the robot executed it at once
            anchors.feet[step.side as usize] = step.pose;
        }
    }
    let cal = retargeter.calibration().ok_or("never calibrated")?;
    println!("calibration: pelvis scale {:.3}, arm scale {:.3}", cal.delta_pelvis, cal.delta_arm);
    Ok(())
}
