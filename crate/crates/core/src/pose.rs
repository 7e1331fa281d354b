//! Skeleton taxonomy: 26 keypoints, three coordinates each, in meters.

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 26;
pub const POSE_DIM: usize = NUM_KEYPOINTS * 3;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "Hips",
    "RightHip",
    "RightKnee",
    "RightHeel",
    "RightFootCenter",
    "RightFootEnd",
    "LeftHip",
    "LeftKnee",
    "LeftHeel",
    "LeftFootCenter",
    "LeftFootEnd",
    "Spine",
    "Spine1",
    "RightNeck",
    "RightShoulder",
    "RightForeArm",
    "RightHand",
    "RightHandEnd",
    "LeftNeck",
    "LeftShoulder",
    "LeftForeArm",
    "LeftHand",
    "LeftHandEnd",
    "Neck",
    "Head",
    "HeadEnd",
];

pub mod kp {
    pub const HIPS: usize = 0;
    pub const RIGHT_HIP: usize = 1;
    pub const RIGHT_KNEE: usize = 2;
    pub const RIGHT_HEEL: usize = 3;
    pub const RIGHT_FOOT_CENTER: usize = 4;
    pub const RIGHT_FOOT_END: usize = 5;
    pub const LEFT_HIP: usize = 6;
    pub const LEFT_KNEE: usize = 7;
    pub const LEFT_HEEL: usize = 8;
    pub const LEFT_FOOT_CENTER: usize = 9;
    pub const LEFT_FOOT_END: usize = 10;
    pub const SPINE: usize = 11;
    pub const SPINE1: usize = 12;
    pub const RIGHT_NECK: usize = 13;
    pub const RIGHT_SHOULDER: usize = 14;
    pub const RIGHT_FOREARM: usize = 15;
    pub const RIGHT_HAND: usize = 16;
    pub const RIGHT_HAND_END: usize = 17;
    pub const LEFT_NECK: usize = 18;
    pub const LEFT_SHOULDER: usize = 19;
    pub const LEFT_FOREARM: usize = 20;
    pub const LEFT_HAND: usize = 21;
    pub const LEFT_HAND_END: usize = 22;
    pub const NECK: usize = 23;
    pub const HEAD: usize = 24;
    pub const HEAD_END: usize = 25;
}

/// Body-part grouping used for reporting.
pub const BODY_GROUPS: [(&str, &[usize]); 5] = [
    ("Body Center", &[0, 11, 12, 23, 24, 25]),
    ("Right Leg", &[1, 2, 3, 4, 5]),
    ("Left Leg", &[6, 7, 8, 9, 10]),
    ("Right Arm", &[13, 14, 15, 16, 17]),
    ("Left Arm", &[18, 19, 20, 21, 22]),
];

pub fn keypoint_index(name: &str) -> Option<usize> {
    KEYPOINT_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub keypoints: [[f64; 3]; NUM_KEYPOINTS],
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            keypoints: [[0.0; 3]; NUM_KEYPOINTS],
        }
    }
}

impl Pose {
    /// Builds a pose from 78 values ordered `kp0_x, kp0_y, kp0_z, kp1_x, ...`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::shape(format!(
                "pose needs {POSE_DIM} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose coordinate".into()));
        }
        let mut pose = Pose::default();
        for (k, chunk) in values.chunks_exact(3).enumerate() {
            pose.keypoints[k] = [chunk[0], chunk[1], chunk[2]];
        }
        Ok(pose)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.keypoints.iter().flatten().copied().collect()
    }

    pub fn translated(&self, offset: [f64; 3]) -> Pose {
        let mut out = *self;
        for p in out.keypoints.iter_mut() {
            for d in 0..3 {
                p[d] += offset[d];
            }
        }
        out
    }
}
