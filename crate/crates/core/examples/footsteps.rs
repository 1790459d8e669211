//! Client footstep commands through a live session: feasibility check,
//! queueing, swing execution and the support polygon update.

use kst::model::RobotModel;
use kst::retarget::Side;
use kst::runtime::protocol::FootstepRequest;
use kst::runtime::{Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model"))?;
    let mut session = Session::new(SessionConfig::default().normalize()?, model)?;
    let plan = [(Side::Left, 0.2, 0.0), (Side::Right, 0.2, 0.0), (Side::Left, 0.9, 0.0), (Side::Left, 0.15, 0.05)];
    for (seq, (side, dx, dy)) in plan.into_iter().enumerate() {
        let ack = session.request_footstep(&FootstepRequest { side, dx, dy, dyaw: 0.0 }, Some(seq as u64));
        match ack.reason {
            None => println!("#{seq} {side:?} +{dx} m queued, goal {:.3?}", ack.pose.position.as_slice()),
            Some(why) => println!("#{seq} {side:?} +{dx} m rejected: {why}"),
        }
    }
    while !session.executor().is_idle() {
        let report = session.tick()?;
        if report.footstep_completed {
            let mid = session.mid_feet().position;
            println!(
                "t {:.3} s  step done, mid-feet {:.3?}, support area vertices {}",
                report.frame.timestamp,
                mid.as_slice(),
                session.support().vertices().len()
            );
        }
    }
    let m = session.metrics();
    println!("accepted {}, rejected {}, completed {}, ik faults {}", m.footsteps_accepted, m.footsteps_rejected, m.footsteps_completed, m.ik_faults);
    Ok(())
}
