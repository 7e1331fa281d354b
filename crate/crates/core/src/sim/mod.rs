//! FMCW TDM-MIMO beat-signal synthesis from moving point scatterers.
//!
//! Idealized phase model: far field, no range migration within a frame, no
//! TDM phase errors. The radar sits at the origin looking along `+y`, with
//! `x` lateral (azimuth) and `z` up (elevation).

mod motion;

pub use motion::{
    script_to_dataset, synthesize_script, world_pose, Activity, MotionScript, RcsProfile,
    SubjectProfile, ACTIVITIES, HAND_JOINTS,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar::{RadarCube, RadarDims};
use crate::rng::Rng;
use crate::tensor::{Kind, Tensor};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub chirp_s: f64,
    pub adc_hz: f64,
    pub frame_rate: f64,
    pub num_tx: usize,
    pub dims: RadarDims,
    /// Occupancy of the azimuth x elevation virtual grid, row-major `[a][e]`.
    pub array_mask: Vec<bool>,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        let dims = RadarDims::default();
        RadarParams {
            carrier_hz: 60e9,
            bandwidth_hz: 1.02e9,
            chirp_s: 17e-6,
            adc_hz: 3.8e6,
            frame_rate: 15.0,
            num_tx: 3,
            array_mask: l_shaped_mask(dims.azimuth, dims.elevation),
            dims,
            element_spacing: 0.5,
        }
    }
}

/// 12-of-16 L-shaped occupancy: the 2x2 block at high azimuth and high
/// elevation indices is empty. Other grid sizes are fully populated.
pub fn l_shaped_mask(azimuth: usize, elevation: usize) -> Vec<bool> {
    let mut mask = vec![true; azimuth * elevation];
    if azimuth == 4 && elevation == 4 {
        for a in 2..4 {
            for e in 2..4 {
                mask[a * elevation + e] = false;
            }
        }
    }
    mask
}

impl RadarParams {
    /// Default radar with smaller sample/chirp/frame counts.
    pub fn with_dims(dims: RadarDims) -> Self {
        RadarParams {
            array_mask: l_shaped_mask(dims.azimuth, dims.elevation),
            dims,
            ..RadarParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("chirp_s", self.chirp_s),
            ("adc_hz", self.adc_hz),
            ("frame_rate", self.frame_rate),
            ("element_spacing", self.element_spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("radar parameter {name} = {v}")));
            }
        }
        if self.num_tx == 0 {
            return Err(Error::invalid("num_tx must be positive"));
        }
        if self.array_mask.len() != self.dims.azimuth * self.dims.elevation {
            return Err(Error::shape(format!(
                "array mask has {} cells for a {}x{} grid",
                self.array_mask.len(),
                self.dims.azimuth,
                self.dims.elevation
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }

    pub fn beat_frequency(&self, range: f64) -> f64 {
        2.0 * range * self.bandwidth_hz / (SPEED_OF_LIGHT * self.chirp_s)
    }

    pub fn doppler_frequency(&self, radial_velocity: f64) -> f64 {
        2.0 * radial_velocity * self.carrier_hz / SPEED_OF_LIGHT
    }

    /// Largest |Doppler| that TDM with `num_tx` transmitters leaves
    /// unambiguous.
    pub fn max_doppler(&self) -> f64 {
        1.0 / (2.0 * self.chirp_s * self.num_tx as f64)
    }

    /// Fractional range-FFT bin of a scatterer at `range`.
    pub fn range_bin(&self, range: f64) -> f64 {
        self.beat_frequency(range) * self.dims.pad_samples as f64 / self.adc_hz
    }

    /// Fractional Doppler-FFT bin (may be negative) of a radial velocity.
    pub fn doppler_bin(&self, radial_velocity: f64) -> f64 {
        self.doppler_frequency(radial_velocity) * self.dims.pad_chirps as f64 * self.chirp_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub rcs: f64,
}

impl Scatterer {
    pub fn range(&self) -> f64 {
        norm(self.position)
    }

    /// Positive when moving away from the radar.
    pub fn radial_velocity(&self) -> f64 {
        let r = self.range();
        dot(self.position, self.velocity) / r
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn phasors(step_cycles: f64, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * step_cycles * i as f64))
        .collect()
}

/// Synthesizes one cube frame per entry of `frames`, plus complex white
/// noise of standard deviation `noise_std` (split evenly between the real
/// and imaginary parts).
pub fn synthesize(
    params: &RadarParams,
    frames: &[Vec<Scatterer>],
    noise_std: f64,
    rng: &mut Rng,
) -> Result<RadarCube> {
    params.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("no frames to synthesize"));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::invalid(format!("noise_std = {noise_std}")));
    }
    let dims = params.dims.with_frames(frames.len());
    let (na, ne, ns, nc) = (dims.azimuth, dims.elevation, dims.samples, dims.chirps);
    let per_frame = na * ne * ns * nc;
    let mut out = vec![Complex64::new(0.0, 0.0); frames.len() * per_frame];
    let max_fd = params.max_doppler();

    for (t, scatterers) in frames.iter().enumerate() {
        let frame = &mut out[t * per_frame..(t + 1) * per_frame];
        for sc in scatterers {
            if !(sc.rcs.is_finite() && sc.rcs >= 0.0)
                || sc
                    .position
                    .iter()
                    .chain(&sc.velocity)
                    .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!("bad scatterer {sc:?}")));
            }
            if sc.position[1] <= 0.0 {
                return Err(Error::invalid(format!(
                    "scatterer behind the radar at {:?}",
                    sc.position
                )));
            }
            let r = sc.range();
            let fd = params.doppler_frequency(sc.radial_velocity());
            if fd.abs() >= max_fd {
                return Err(Error::invalid(format!(
                    "Doppler {fd:.1} Hz aliases under TDM (limit {max_fd:.1} Hz)"
                )));
            }
            let fast = phasors(params.beat_frequency(r) / params.adc_hz, ns);
            let slow = phasors(fd * params.chirp_s, nc);
            let (sx, sz) = (sc.position[0] / r, sc.position[2] / r);
            for a in 0..na {
                for e in 0..ne {
                    if !params.array_mask[a * ne + e] {
                        continue;
                    }
                    let cycles = params.element_spacing * (a as f64 * sx + e as f64 * sz);
                    let w = Complex64::from_polar(sc.rcs, 2.0 * std::f64::consts::PI * cycles);
                    let base = (a * ne + e) * ns * nc;
                    for (s, f) in fast.iter().enumerate() {
                        let ws = w * f;
                        let row = &mut frame[base + s * nc..base + (s + 1) * nc];
                        for (v, d) in row.iter_mut().zip(&slow) {
                            *v += ws * d;
                        }
                    }
                }
            }
        }
    }

    if noise_std > 0.0 {
        let s = noise_std / std::f64::consts::SQRT_2;
        for v in out.iter_mut() {
            v.re += s * rng.normal();
            v.im += s * rng.normal();
        }
    }
    let mut data = Vec::with_capacity(out.len() * 2);
    for v in &out {
        data.push(v.re);
        data.push(v.im);
    }
    RadarCube::new(
        dims,
        Tensor::with_kind(dims.raw_shape().to_vec(), data, Kind::Complex)?,
    )
}
