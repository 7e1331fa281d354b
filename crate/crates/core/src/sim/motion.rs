//! Parametric exercise motions on the 26-joint skeleton and their
//! conversion into scatterer scenes.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{synthesize, RadarParams, Scatterer};
use crate::error::{Error, Result};
use crate::pose::{kp, Pose, NUM_KEYPOINTS};
use crate::radar::RadarCube;
use crate::rng::Rng;

/// Radar mounting height above the floor, meters.
const RADAR_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    LeftArmExtension,
    RightArmExtension,
    BilateralArmExtension,
    BicepCurl,
    FrontArmRotation,
    TrunkBend,
    LeftLunge,
    RightLunge,
    Squat,
}

pub const ACTIVITIES: [Activity; 9] = [
    Activity::LeftArmExtension,
    Activity::RightArmExtension,
    Activity::BilateralArmExtension,
    Activity::BicepCurl,
    Activity::FrontArmRotation,
    Activity::TrunkBend,
    Activity::LeftLunge,
    Activity::RightLunge,
    Activity::Squat,
];

impl Activity {
    pub fn id(self) -> usize {
        ACTIVITIES.iter().position(|a| *a == self).unwrap()
    }

    pub fn from_id(id: usize) -> Result<Self> {
        ACTIVITIES
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("activity id {id} not in 0..9")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::LeftArmExtension => "left_arm_extension",
            Activity::RightArmExtension => "right_arm_extension",
            Activity::BilateralArmExtension => "bilateral_arm_extension",
            Activity::BicepCurl => "bicep_curl",
            Activity::FrontArmRotation => "front_arm_rotation",
            Activity::TrunkBend => "trunk_bend",
            Activity::LeftLunge => "left_lunge",
            Activity::RightLunge => "right_lunge",
            Activity::Squat => "squat",
        }
    }
}

/// Per-recording body and motion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub scale: f64,
    /// Hips position `(x, y)` in the radar frame.
    pub position: [f64; 2],
    /// Facing angle relative to the radar, degrees.
    pub yaw_deg: f64,
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Independent wrist oscillation, one `(frequency, phase)` per side.
    pub wrist: [(f64, f64); 2],
    pub wrist_amplitude: f64,
}

impl SubjectProfile {
    pub fn random(rng: &mut Rng) -> Self {
        let yaw = [0.0, 45.0, 90.0][rng.below(3)];
        SubjectProfile {
            scale: rng.uniform_range(0.92, 1.08),
            position: [rng.uniform_range(-0.3, 0.3), rng.uniform_range(2.0, 3.0)],
            yaw_deg: yaw,
            frequency_hz: rng.uniform_range(0.3, 0.55),
            amplitude: rng.uniform_range(0.75, 1.0),
            phase: rng.uniform_range(0.0, 2.0 * PI),
            wrist: [
                (
                    rng.uniform_range(0.7, 1.4),
                    rng.uniform_range(0.0, 2.0 * PI),
                ),
                (
                    rng.uniform_range(0.7, 1.4),
                    rng.uniform_range(0.0, 2.0 * PI),
                ),
            ],
            wrist_amplitude: rng.uniform_range(0.04, 0.08),
        }
    }
}

/// Per-keypoint scatterer amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcsProfile {
    pub weights: [f64; NUM_KEYPOINTS],
}

pub const HAND_JOINTS: [usize; 4] = [
    kp::RIGHT_HAND,
    kp::RIGHT_HAND_END,
    kp::LEFT_HAND,
    kp::LEFT_HAND_END,
];

impl RcsProfile {
    pub fn uniform() -> Self {
        RcsProfile {
            weights: [1.0; NUM_KEYPOINTS],
        }
    }

    /// Hands and hand ends reflect `hand` relative to every other joint.
    pub fn small_hands(hand: f64) -> Self {
        let mut weights = [1.0; NUM_KEYPOINTS];
        for k in HAND_JOINTS {
            weights[k] = hand;
        }
        RcsProfile { weights }
    }
}

type V3 = [f64; 3];

fn rest_pose() -> [V3; NUM_KEYPOINTS] {
    // body frame: (left, forward, up), hips at origin
    let mut p = [[0.0; 3]; NUM_KEYPOINTS];
    let right_leg = [
        (kp::RIGHT_HIP, [-0.09, 0.0, -0.02]),
        (kp::RIGHT_KNEE, [-0.09, 0.02, -0.45]),
        (kp::RIGHT_HEEL, [-0.09, -0.04, -0.88]),
        (kp::RIGHT_FOOT_CENTER, [-0.09, 0.05, -0.92]),
        (kp::RIGHT_FOOT_END, [-0.09, 0.15, -0.93]),
    ];
    let right_arm = [
        (kp::RIGHT_NECK, [-0.04, 0.0, 0.45]),
        (kp::RIGHT_SHOULDER, [-0.18, 0.0, 0.45]),
        (kp::RIGHT_FOREARM, [-0.20, 0.0, 0.17]),
        (kp::RIGHT_HAND, [-0.21, 0.02, -0.08]),
        (kp::RIGHT_HAND_END, [-0.21, 0.03, -0.17]),
    ];
    for (k, v) in right_leg.iter().chain(&right_arm) {
        p[*k] = *v;
    }
    // mirror: left joints sit 5 indices after their right counterparts
    for &(k, v) in &right_leg {
        p[k + 5] = [-v[0], v[1], v[2]];
    }
    for &(k, v) in &right_arm {
        p[k + 5] = [-v[0], v[1], v[2]];
    }
    p[kp::SPINE] = [0.0, 0.0, 0.12];
    p[kp::SPINE1] = [0.0, 0.0, 0.28];
    p[kp::NECK] = [0.0, 0.0, 0.50];
    p[kp::HEAD] = [0.0, 0.02, 0.62];
    p[kp::HEAD_END] = [0.0, 0.02, 0.78];
    p
}

const LEFT: V3 = [1.0, 0.0, 0.0];
const FORWARD: V3 = [0.0, 1.0, 0.0];
const UP: V3 = [0.0, 0.0, 1.0];

/// Rodrigues rotation of `joints` about `pivot` around unit `axis`.
fn rotate(p: &mut [V3; NUM_KEYPOINTS], pivot: usize, joints: &[usize], axis: V3, angle: f64) {
    let c = p[pivot];
    let (s, co) = angle.sin_cos();
    for &j in joints {
        let v = [p[j][0] - c[0], p[j][1] - c[1], p[j][2] - c[2]];
        let cross = [
            axis[1] * v[2] - axis[2] * v[1],
            axis[2] * v[0] - axis[0] * v[2],
            axis[0] * v[1] - axis[1] * v[0],
        ];
        let d = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
        for i in 0..3 {
            p[j][i] = c[i] + v[i] * co + cross[i] * s + axis[i] * d * (1.0 - co);
        }
    }
}

fn translate(p: &mut [V3; NUM_KEYPOINTS], joints: &[usize], by: V3) {
    for &j in joints {
        for i in 0..3 {
            p[j][i] += by[i];
        }
    }
}

const RIGHT_ARM: [usize; 3] = [kp::RIGHT_FOREARM, kp::RIGHT_HAND, kp::RIGHT_HAND_END];
const LEFT_ARM: [usize; 3] = [kp::LEFT_FOREARM, kp::LEFT_HAND, kp::LEFT_HAND_END];
const RIGHT_SHIN: [usize; 3] = [kp::RIGHT_HEEL, kp::RIGHT_FOOT_CENTER, kp::RIGHT_FOOT_END];
const LEFT_SHIN: [usize; 3] = [kp::LEFT_HEEL, kp::LEFT_FOOT_CENTER, kp::LEFT_FOOT_END];
const UPPER_BODY: [usize; 15] = [
    kp::SPINE,
    kp::SPINE1,
    kp::RIGHT_NECK,
    kp::RIGHT_SHOULDER,
    kp::RIGHT_FOREARM,
    kp::RIGHT_HAND,
    kp::RIGHT_HAND_END,
    kp::LEFT_NECK,
    kp::LEFT_SHOULDER,
    kp::LEFT_FOREARM,
    kp::LEFT_HAND,
    kp::LEFT_HAND_END,
    kp::NECK,
    kp::HEAD,
    kp::HEAD_END,
];

fn all_joints() -> Vec<usize> {
    (0..NUM_KEYPOINTS).collect()
}

/// Knee flexion that keeps the foot under the body; returns nothing, edits
/// the leg in place.
fn bend_leg(
    p: &mut [V3; NUM_KEYPOINTS],
    hip: usize,
    knee: usize,
    shin: &[usize],
    hip_flex: f64,
    knee_flex: f64,
) {
    let mut below_hip = vec![knee];
    below_hip.extend_from_slice(shin);
    rotate(p, hip, &below_hip, LEFT, hip_flex);
    rotate(p, knee, shin, LEFT, -knee_flex);
}

/// Skeleton pose in body coordinates at time `t` seconds.
fn body_pose(activity: Activity, prof: &SubjectProfile, t: f64) -> [V3; NUM_KEYPOINTS] {
    let mut p = rest_pose();
    let phi = 2.0 * PI * prof.frequency_hz * t + prof.phase;
    // 0 at rest, 1 at the extreme of the movement
    let g = prof.amplitude * 0.5 * (1.0 - phi.cos());

    match activity {
        Activity::RightArmExtension => {
            rotate(&mut p, kp::RIGHT_SHOULDER, &RIGHT_ARM, FORWARD, 1.5 * g);
        }
        Activity::LeftArmExtension => {
            rotate(&mut p, kp::LEFT_SHOULDER, &LEFT_ARM, FORWARD, -1.5 * g);
        }
        Activity::BilateralArmExtension => {
            rotate(&mut p, kp::RIGHT_SHOULDER, &RIGHT_ARM, FORWARD, 1.5 * g);
            rotate(&mut p, kp::LEFT_SHOULDER, &LEFT_ARM, FORWARD, -1.5 * g);
        }
        Activity::BicepCurl => {
            rotate(&mut p, kp::RIGHT_FOREARM, &RIGHT_ARM[1..], LEFT, 2.2 * g);
            rotate(&mut p, kp::LEFT_FOREARM, &LEFT_ARM[1..], LEFT, 2.2 * g);
        }
        Activity::FrontArmRotation => {
            let circle = 0.35 * prof.amplitude;
            for (shoulder, arm) in [
                (kp::RIGHT_SHOULDER, RIGHT_ARM),
                (kp::LEFT_SHOULDER, LEFT_ARM),
            ] {
                rotate(
                    &mut p,
                    shoulder,
                    &arm,
                    LEFT,
                    FRAC_PI_2 * 0.9 + circle * phi.sin(),
                );
                rotate(&mut p, shoulder, &arm, UP, circle * phi.cos());
            }
        }
        Activity::TrunkBend => {
            rotate(&mut p, kp::HIPS, &UPPER_BODY, LEFT, -1.1 * g);
        }
        Activity::LeftLunge | Activity::RightLunge => {
            let (front, back) = if activity == Activity::LeftLunge {
                (
                    (kp::LEFT_HIP, kp::LEFT_KNEE, LEFT_SHIN),
                    (kp::RIGHT_HIP, kp::RIGHT_KNEE, RIGHT_SHIN),
                )
            } else {
                (
                    (kp::RIGHT_HIP, kp::RIGHT_KNEE, RIGHT_SHIN),
                    (kp::LEFT_HIP, kp::LEFT_KNEE, LEFT_SHIN),
                )
            };
            bend_leg(&mut p, front.0, front.1, &front.2, 1.1 * g, 1.2 * g);
            bend_leg(&mut p, back.0, back.1, &back.2, -0.5 * g, 1.3 * g);
            // drop the pelvis so the lower of the two heels touches the floor
            let rest_heel = rest_pose()[kp::RIGHT_HEEL][2];
            let heel = p[front.2[0]][2].min(p[back.2[0]][2]);
            let lower = heel - rest_heel;
            translate(&mut p, &all_joints(), [0.0, 0.0, -lower]);
        }
        Activity::Squat => {
            rotate(&mut p, kp::HIPS, &UPPER_BODY, LEFT, -0.5 * g);
            bend_leg(
                &mut p,
                kp::RIGHT_HIP,
                kp::RIGHT_KNEE,
                &RIGHT_SHIN,
                1.3 * g,
                2.2 * g,
            );
            bend_leg(
                &mut p,
                kp::LEFT_HIP,
                kp::LEFT_KNEE,
                &LEFT_SHIN,
                1.3 * g,
                2.2 * g,
            );
            let rest_heel = rest_pose()[kp::RIGHT_HEEL][2];
            let lower = p[kp::RIGHT_HEEL][2] - rest_heel;
            translate(&mut p, &all_joints(), [0.0, 0.0, -lower]);
        }
    }

    // wrists wobble independently of the exercise
    for (side, (hand, end)) in [
        (kp::RIGHT_HAND, kp::RIGHT_HAND_END),
        (kp::LEFT_HAND, kp::LEFT_HAND_END),
    ]
    .into_iter()
    .enumerate()
    {
        let (f, ph) = prof.wrist[side];
        let w = 2.0 * PI * f * t + ph;
        let a = prof.wrist_amplitude;
        let offset = [a * 0.5 * w.cos(), a * w.sin(), a * 0.7 * (2.0 * w).sin()];
        translate(&mut p, &[hand, end], offset);
    }

    // postural sway
    let sway = [
        0.02 * (2.0 * PI * 0.23 * t + prof.phase).sin(),
        0.015 * (2.0 * PI * 0.17 * t + 1.0).sin(),
        0.0,
    ];
    translate(&mut p, &all_joints(), sway);

    for v in p.iter_mut() {
        for x in v.iter_mut() {
            *x *= prof.scale;
        }
    }
    p
}

/// World-frame pose: body coordinates rotated by the facing angle and placed
/// at the subject's position.
pub fn world_pose(activity: Activity, prof: &SubjectProfile, t: f64) -> Pose {
    let body = body_pose(activity, prof, t);
    let yaw = prof.yaw_deg.to_radians();
    let fw = [yaw.sin(), -yaw.cos()];
    let lv = [yaw.cos(), yaw.sin()];
    let hip_z = 0.95 * prof.scale - RADAR_HEIGHT;
    let mut pose = Pose::default();
    for (k, b) in body.iter().enumerate() {
        pose.keypoints[k] = [
            prof.position[0] + b[0] * lv[0] + b[1] * fw[0],
            prof.position[1] + b[0] * lv[1] + b[1] * fw[1],
            hip_z + b[2],
        ];
    }
    pose
}

/// A recorded skeleton trajectory plus how it reflects.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub trajectory: Vec<Pose>,
    pub rcs: RcsProfile,
    pub noise_std: f64,
    pub frame_rate: f64,
}

impl MotionScript {
    pub fn generate(
        activity: Activity,
        profile: &SubjectProfile,
        frames: usize,
        frame_rate: f64,
        rcs: RcsProfile,
        noise_std: f64,
    ) -> Self {
        let trajectory = (0..frames)
            .map(|i| world_pose(activity, profile, i as f64 / frame_rate))
            .collect();
        MotionScript {
            trajectory,
            rcs,
            noise_std,
            frame_rate,
        }
    }

    /// A script that holds one pose for `frames` frames.
    pub fn constant(
        pose: Pose,
        frames: usize,
        frame_rate: f64,
        rcs: RcsProfile,
        noise_std: f64,
    ) -> Self {
        MotionScript {
            trajectory: vec![pose; frames],
            rcs,
            noise_std,
            frame_rate,
        }
    }

    /// Scatterers for frame `i`; velocities by central differences of the
    /// trajectory (one-sided at the ends).
    pub fn scatterers(&self, i: usize) -> Vec<Scatterer> {
        let n = self.trajectory.len();
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let dt = (hi - lo).max(1) as f64 / self.frame_rate;
        (0..NUM_KEYPOINTS)
            .filter(|&k| self.rcs.weights[k] > 0.0)
            .map(|k| {
                let a = self.trajectory[lo].keypoints[k];
                let b = self.trajectory[hi].keypoints[k];
                let velocity = if hi > lo {
                    [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt, (b[2] - a[2]) / dt]
                } else {
                    [0.0; 3]
                };
                Scatterer {
                    position: self.trajectory[i].keypoints[k],
                    velocity,
                    rcs: self.rcs.weights[k],
                }
            })
            .collect()
    }
}

/// Synthesizes every frame of a script into one cube.
pub fn synthesize_script(
    script: &MotionScript,
    params: &RadarParams,
    rng: &mut Rng,
) -> Result<RadarCube> {
    if script.trajectory.is_empty() {
        return Err(Error::invalid("empty motion script"));
    }
    let frames: Vec<Vec<Scatterer>> = (0..script.trajectory.len())
        .map(|i| script.scatterers(i))
        .collect();
    synthesize(params, &frames, script.noise_std, rng)
}

/// Sliding windows of `params.dims.frames` frames with stride one, each
/// labeled with the pose of its last frame.
pub fn script_to_dataset(
    script: &MotionScript,
    params: &RadarParams,
    rng: &mut Rng,
) -> Result<Vec<(RadarCube, Pose)>> {
    let t = params.dims.frames;
    let n = script.trajectory.len();
    if n == 0 {
        return Err(Error::invalid("empty motion script"));
    }
    if n < t {
        return Err(Error::invalid(format!(
            "script has {n} frames, window needs {t}"
        )));
    }
    let cube = synthesize_script(script, params, rng)?;
    (0..=n - t)
        .map(|start| Ok((cube.frames(start, t)?, script.trajectory[start + t - 1])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarDims;

    fn small_params() -> RadarParams {
        RadarParams::with_dims(RadarDims::unpadded(8, 4, 4, 16, 32))
    }

    #[test]
    fn window_count() {
        let prof = SubjectProfile::random(&mut Rng::new(1));
        let script =
            MotionScript::generate(Activity::Squat, &prof, 10, 15.0, RcsProfile::uniform(), 0.0);
        let ds = script_to_dataset(&script, &small_params(), &mut Rng::new(2)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[0].1, script.trajectory[7]);
        assert_eq!(ds[2].1, script.trajectory[9]);
    }

    #[test]
    fn constant_script_labels_are_identical() {
        let prof = SubjectProfile::random(&mut Rng::new(1));
        let pose = world_pose(Activity::TrunkBend, &prof, 0.3);
        let script = MotionScript::constant(pose, 12, 15.0, RcsProfile::uniform(), 0.1);
        let ds = script_to_dataset(&script, &small_params(), &mut Rng::new(2)).unwrap();
        assert!(ds.iter().all(|(_, p)| *p == pose));
    }

    #[test]
    fn rejects_short_or_empty_scripts() {
        let script = MotionScript::constant(Pose::default(), 0, 15.0, RcsProfile::uniform(), 0.0);
        assert!(script_to_dataset(&script, &small_params(), &mut Rng::new(0)).is_err());
        let prof = SubjectProfile::random(&mut Rng::new(1));
        let script =
            MotionScript::generate(Activity::Squat, &prof, 5, 15.0, RcsProfile::uniform(), 0.0);
        assert!(script_to_dataset(&script, &small_params(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn every_activity_stays_in_front_and_within_doppler_limits() {
        let params = small_params();
        let mut rng = Rng::new(4);
        for act in ACTIVITIES {
            for _ in 0..5 {
                let prof = SubjectProfile::random(&mut rng);
                let script =
                    MotionScript::generate(act, &prof, 60, 15.0, RcsProfile::uniform(), 0.0);
                for i in 0..60 {
                    for sc in script.scatterers(i) {
                        assert!(sc.position[1] > 0.5, "{act:?} {sc:?}");
                        let fd = params.doppler_frequency(sc.radial_velocity());
                        assert!(fd.abs() < params.max_doppler());
                    }
                }
            }
        }
    }

    #[test]
    fn bones_keep_plausible_lengths() {
        let mut rng = Rng::new(8);
        let prof = SubjectProfile::random(&mut rng);
        for act in ACTIVITIES {
            for i in 0..30 {
                let p = world_pose(act, &prof, i as f64 / 15.0);
                let d = |a: usize, b: usize| {
                    let (x, y) = (p.keypoints[a], p.keypoints[b]);
                    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
                };
                let upper = d(kp::RIGHT_SHOULDER, kp::RIGHT_FOREARM) / prof.scale;
                assert!((upper - 0.2807).abs() < 1e-3, "{act:?} upper arm {upper}");
                let thigh = d(kp::LEFT_HIP, kp::LEFT_KNEE) / prof.scale;
                assert!((thigh - 0.4304).abs() < 1e-3, "{act:?} thigh {thigh}");
            }
        }
    }

    #[test]
    fn activity_ids_round_trip() {
        for (i, a) in ACTIVITIES.iter().enumerate() {
            assert_eq!(a.id(), i);
            assert_eq!(Activity::from_id(i).unwrap(), *a);
        }
        assert!(Activity::from_id(9).is_err());
    }
}
