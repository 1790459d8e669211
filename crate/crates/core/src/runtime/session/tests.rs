use super::*;
use crate::model::bundled;
use crate::retarget::footstep::Side;
use crate::retarget::LEFT_FOOT;
use crate::runtime::protocol::kind;
use crate::runtime::record::load_recording;
use crate::runtime::synthetic::{standing_bundle, HandSine, Walk};

fn session_with(config: SessionConfig) -> Session {
    Session::new(config.normalize().unwrap(), bundled::nadia_like()).unwrap()
}

fn session() -> Session {
    session_with(SessionConfig::default())
}

fn frames_of(s: &mut Session, messages: &[RecordedMessage], ticks: u64) -> Vec<JointSetpointFrame> {
    let mut out = Vec::new();
    run_recorded(s, messages, ticks, None, |_, r, _| out.push(r.frame.clone())).unwrap();
    out
}

fn bits(frames: &[JointSetpointFrame]) -> Vec<u64> {
    frames
        .iter()
        .flat_map(|f| f.q.iter().chain(&f.qd).chain(&f.qdd).map(|x| x.to_bits()))
        .collect()
}

#[test]
fn holds_initial_posture_without_input() {
    let mut s = session();
    let q0 = s.model().initial_configuration();
    for k in 0..300 {
        let r = s.tick().unwrap();
        assert_eq!(r.frame.tick_index, k);
        assert_eq!(r.frame.q, q0.joint_positions);
        assert_eq!(r.frame.base_pose, q0.base_pose);
        assert!(r.frame.qd.iter().all(|x| *x == 0.0));
    }
    let snap = s.metrics().snapshot();
    assert_eq!(snap.tick_compute.count, 300);
    assert_eq!(snap.ik_faults + snap.qp_truncated + snap.guard_freezes + snap.output_clamps, 0);
    assert_eq!(snap.latency.count, 0);
}

#[test]
fn single_input_latency_and_first_effect() {
    let mut s = session();
    let rest = s.last_frame().q.clone();
    for _ in 0..10 {
        s.tick().unwrap();
    }
    let sine = HandSine::new(s.model(), 0.15, 0.5).unwrap();
    let mut input = sine.input_at(0.0);
    input.timestamp = 0.009;
    input.targets.get_mut("left_hand").unwrap().pose.position.x += 0.05;
    let arrival = 0.0095;
    let out = s.deliver(&Envelope::new(kind::MOTION_INPUT, 0, 0.009, &input), arrival).unwrap();
    assert!(out.is_empty());
    let r = s.tick().unwrap();
    assert_eq!(r.latencies.len(), 1);
    assert!((r.latencies[0] - (0.010 - arrival)).abs() < 1e-15);
    assert_eq!(r.echo_t_send, Some(0.009));
    // the blend starts at weight zero, so the first visible change is one tick later
    let first_change = std::iter::once(r.frame)
        .chain((0..3).map(|_| s.tick().unwrap().frame))
        .find(|f| f.q != rest)
        .unwrap();
    assert!(first_change.timestamp - arrival <= 2.0 * s.config.tick_period() + 1e-12);
    assert_eq!(s.metrics().latency.count(), 1);
}

#[test]
fn identical_message_sequences_give_identical_frames() {
    let messages = {
        let s = session();
        HandSine::new(s.model(), 0.15, 0.5).unwrap().recording(1.5, 1e-3)
    };
    let a = frames_of(&mut session(), &messages, 1500);
    let b = frames_of(&mut session(), &messages, 1500);
    assert_eq!(bits(&a), bits(&b));
    assert!(a.last().unwrap().q != a[0].q);
}

#[test]
fn recording_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.rec");
    let messages = {
        let s = session();
        HandSine::new(s.model(), 0.1, 0.7).unwrap().recording(1.0, 1e-3)
    };
    let live = {
        let mut cfg = SessionConfig::default();
        cfg.record = Some(path.clone());
        frames_of(&mut session_with(cfg), &messages, 1200)
    };
    let recorded = load_recording(&path, 1e-3).unwrap();
    assert_eq!(recorded.len(), messages.len());
    let replayed = frames_of(&mut session(), &recorded, 1200);
    assert_eq!(bits(&live), bits(&replayed));
}

#[test]
fn silence_decays_output_velocity_continuously() {
    let mut s = session();
    let messages = HandSine::new(s.model(), 0.15, 0.5).unwrap().recording(1.5, 1e-3);
    // the nominal posture keeps converging in the nullspace after the hands stop
    let frames = frames_of(&mut s, &messages, 8000);
    let dt = s.config.tick_period();
    for w in frames.windows(2) {
        for j in 0..w[0].q.len() {
            let dq = (w[1].q[j] - w[0].q[j]).abs();
            assert!(dq <= (w[1].qd[j].abs() + w[1].qdd[j].abs() * dt) * dt + 1e-12);
        }
    }
    let max_rate = |fs: &[JointSetpointFrame]| fs.iter().flat_map(|f| f.qd.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    let (early, settled) = (max_rate(&frames[3000..3500]), max_rate(&frames[7500..]));
    assert!(settled < 5e-3 && settled < early / 10.0, "{early} {settled}");
}

#[test]
fn client_footstep_executes_and_moves_support() {
    let mut s = session();
    let before_mid = *s.mid_feet();
    let left = *s.executor().foot(Side::Left);
    let ack = s.request_footstep(
        &FootstepRequest {
            side: Side::Left,
            dx: 0.2,
            dy: 0.0,
            dyaw: 0.0,
        },
        Some(3),
    );
    assert!(ack.accepted, "{ack:?}");
    assert_eq!(ack.request_seq, Some(3));
    assert!((ack.pose.position - (left.position + Vec3::new(0.2, 0.0, 0.0))).norm() < 1e-12);
    let mut completions = 0;
    for _ in 0..1500 {
        completions += s.tick().unwrap().footstep_completed as u32;
    }
    assert_eq!(completions, 1);
    assert!((s.mid_feet().position - before_mid.position - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    assert_eq!(s.support(), &s.executor().support_polygon());
    let fk = forward_kinematics(s.model(), &s.last_frame().configuration()).unwrap();
    let foot = fk.frame_pose_by_name(s.model(), LEFT_FOOT).unwrap();
    assert!((foot.position - ack.pose.position).norm() < 5e-3);
    assert_eq!(s.metrics().footsteps_completed, 1);
}

#[test]
fn infeasible_footsteps_are_rejected() {
    let mut s = session();
    for (dx, dy) in [(1.0, 0.0), (0.0, -0.3)] {
        let ack = s.request_footstep(
            &FootstepRequest {
                side: Side::Left,
                dx,
                dy,
                dyaw: 0.0,
            },
            None,
        );
        assert!(!ack.accepted);
        assert!(ack.reason.is_some());
    }
    let nan = s.request_footstep(
        &FootstepRequest {
            side: Side::Right,
            dx: f64::NAN,
            dy: 0.0,
            dyaw: 0.0,
        },
        None,
    );
    assert!(!nan.accepted && nan.pose.is_finite());
    assert!(s.executor().is_idle());
    assert_eq!(s.metrics().footsteps_rejected, 3);
}

#[test]
fn mode_mismatch_is_reported() {
    let mut s = session();
    let env = Envelope::new(kind::TRACKER_FRAME, 5, 0.0, &standing_bundle());
    match s.deliver(&env, 0.0).unwrap().as_slice() {
        [Outbound::Error(e)] => {
            assert_eq!(e.code, ErrorCode::ModeMismatch);
            assert_eq!(e.seq, Some(5));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.metrics().inputs_received, 0);
}

#[test]
fn tracker_walk_steps_once_per_human_step() {
    let cfg = SessionConfig {
        mode: InputMode::TrackerBundle,
        ..SessionConfig::default()
    };
    let mut s = session_with(cfg);
    let walk = Walk::default();
    let messages = walk.recording(9.0, 60.0, 1e-3);
    let mut acks = Vec::new();
    run_recorded(&mut s, &messages, 9000, None, |_, _, ev| {
        acks.extend(ev.iter().filter_map(|e| match e {
            Outbound::FootstepAck(a) => Some(a.clone()),
            Outbound::Error(_) => None,
        }))
    })
    .unwrap();
    assert_eq!(acks.len(), walk.steps);
    assert!(acks.iter().all(|a| a.accepted && a.source == AckSource::Retargeting));
    let sides: Vec<_> = acks.iter().map(|a| a.side).collect();
    assert_eq!(sides, [Side::Left, Side::Right, Side::Left, Side::Right]);
    assert_eq!(s.executor().completed, 4);
    assert_eq!(s.metrics().ik_faults, 0);
}

#[test]
fn overrun_skips_ticks_without_bursting() {
    let mut s = session();
    s.tick().unwrap();
    s.skip_to(10);
    let r = s.tick().unwrap();
    assert_eq!(r.frame.tick_index, 10);
    assert!((r.frame.timestamp - 0.010).abs() < 1e-15);
    s.skip_to(3);
    assert_eq!(s.tick_index(), 11);
}
