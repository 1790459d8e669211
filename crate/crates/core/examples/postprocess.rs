//! The setpoint chain on a step change of the IK reference: initial blend,
//! PD double integration and the optional low-pass filter.

use kst::model::{JointVelocity, RobotModel};
use kst::post::{PostProcessConfig, PostProcessor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model"))?;
    let actual = model.initial_configuration();
    let elbow = model.joint_id("left_elbow_pitch").ok_or("no elbow")?;
    let mut reference = actual.clone();
    reference.joint_positions[elbow] -= 0.5;
    let rest = JointVelocity::zeros(model.num_joints());

    for cutoff in [0.0, 5.0] {
        let config = PostProcessConfig {
            lowpass_cutoff: cutoff,
            blend_duration: 0.3,
            ..PostProcessConfig::default()
        };
        let mut post = PostProcessor::new(config, &actual, 0.0)?;
        println!("low-pass cutoff {cutoff} Hz");
        let dt = 1e-3;
        for k in 0..=1500u64 {
            let t = k as f64 * dt;
            let f = post.step(&model, &reference, &rest, k, t, dt).clone();
            if k % 150 == 0 {
                println!(
                    "  t {t:.2}  blend {:.2}  q {:+.4}  qd {:+.4}  qdd {:+8.3}",
                    post.blend_weight(t),
                    f.q[elbow],
                    f.qd[elbow],
                    f.qdd[elbow]
                );
            }
        }
    }
    Ok(())
}
