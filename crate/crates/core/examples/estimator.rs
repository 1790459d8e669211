//! Upsampling a 60 Hz target stream to 1 kHz with both estimator modes,
//! then letting the stream fall silent.

use kst::input::{EstimatorBank, EstimatorMode, EstimatorParams, MotionInput, TargetSpec};
use kst::math::{Pose, Vec3};

fn main() {
    let velocity = Vec3::new(0.3, 0.0, 0.1);
    let truth = |t: f64| Vec3::new(0.3, 0.2, 1.0) + velocity * t;
    for mode in [EstimatorMode::FirstOrder, EstimatorMode::Feedback] {
        let params = EstimatorParams { mode, ..EstimatorParams::default() };
        let mut bank = EstimatorBank::new(params);
        let dt = 1e-3;
        let (mut worst, mut last_input) = (0.0f64, 0.0);
        for k in 0..1500u32 {
            let t = k as f64 * dt;
            // inputs stop after one second
            if k % 17 == 0 && t < 1.0 {
                let mut input = MotionInput { timestamp: t, ..MotionInput::default() };
                input.targets.insert("left_hand".into(), TargetSpec::full(Pose::from_position(truth(t))));
                bank.on_input(&input, 0.0);
                last_input = t;
            }
            let p = bank.predict(dt).bodies["left_hand"].0;
            if t > 0.1 && t < 1.0 {
                worst = worst.max((p.desired.position - truth(t + dt)).norm());
            }
            if k % 100 == 0 && t >= 0.9 {
                println!(
                    "{mode:?} t {t:.2}  silence {:.3} s  alpha {:.2}  speed {:.3} m/s",
                    t - last_input,
                    p.alpha,
                    p.feedforward.linear.norm()
                );
            }
        }
        println!("{mode:?}: worst tracking error while streaming {worst:.2e} m\n");
    }
}
