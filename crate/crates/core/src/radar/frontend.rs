use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::fft_along;
use crate::tensor::{center_along, Tensor};

// raw cube axes
const AX_TIME: usize = 0;
const AX_AZIMUTH: usize = 1;
const AX_ELEVATION: usize = 2;
const AX_SAMPLE: usize = 3;
const AX_CHIRP: usize = 4;

/// Sizes of one radar window and of its zero-padded FFT outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadarDims {
    pub frames: usize,
    pub azimuth: usize,
    pub elevation: usize,
    pub samples: usize,
    pub chirps: usize,
    pub pad_samples: usize,
    pub pad_chirps: usize,
    pub pad_azimuth: usize,
    pub pad_elevation: usize,
}

impl Default for RadarDims {
    fn default() -> Self {
        RadarDims::unpadded(8, 4, 4, 64, 128)
    }
}

impl RadarDims {
    /// Dims whose FFT sizes are the smallest powers of two holding the raw
    /// axes.
    pub fn unpadded(
        frames: usize,
        azimuth: usize,
        elevation: usize,
        samples: usize,
        chirps: usize,
    ) -> Self {
        RadarDims {
            frames,
            azimuth,
            elevation,
            samples,
            chirps,
            pad_samples: samples.next_power_of_two(),
            pad_chirps: chirps.next_power_of_two(),
            pad_azimuth: azimuth.next_power_of_two(),
            pad_elevation: elevation.next_power_of_two(),
        }
    }

    pub fn with_frames(self, frames: usize) -> Self {
        RadarDims { frames, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let raw = [
            ("frames", self.frames),
            ("azimuth", self.azimuth),
            ("elevation", self.elevation),
            ("samples", self.samples),
            ("chirps", self.chirps),
        ];
        for (name, v) in raw {
            if v == 0 {
                return Err(Error::invalid(format!("radar dim {name} must be positive")));
            }
        }
        let pads = [
            ("samples", self.samples, self.pad_samples),
            ("chirps", self.chirps, self.pad_chirps),
            ("azimuth", self.azimuth, self.pad_azimuth),
            ("elevation", self.elevation, self.pad_elevation),
        ];
        for (name, raw, pad) in pads {
            if !pad.is_power_of_two() || pad < raw {
                return Err(Error::invalid(format!(
                    "pad for {name} must be a power of two >= {raw}, got {pad}"
                )));
            }
        }
        Ok(())
    }

    pub fn raw_shape(&self) -> [usize; 5] {
        [
            self.frames,
            self.azimuth,
            self.elevation,
            self.samples,
            self.chirps,
        ]
    }

    /// `[2T, Doppler, azimuth, elevation, range]`.
    pub fn processed_shape(&self) -> [usize; 5] {
        [
            2 * self.frames,
            self.pad_chirps,
            self.pad_azimuth,
            self.pad_elevation,
            self.pad_samples,
        ]
    }

    /// Number of reals in one processed time slice.
    pub fn slice_len(&self) -> usize {
        self.pad_chirps * self.pad_azimuth * self.pad_elevation * self.pad_samples
    }
}

/// Complex beat-signal samples laid out `[T, A, E, S, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    dims: RadarDims,
    data: Tensor,
}

impl RadarCube {
    pub fn new(dims: RadarDims, data: Tensor) -> Result<Self> {
        dims.validate()?;
        if !data.is_complex() {
            return Err(Error::invalid("radar cube data must be complex"));
        }
        if data.shape() != dims.raw_shape() {
            return Err(Error::shape(format!(
                "cube data {:?} does not match dims {:?}",
                data.shape(),
                dims.raw_shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("radar cube sample".into()));
        }
        Ok(RadarCube { dims, data })
    }

    pub fn zeros(dims: RadarDims) -> Result<Self> {
        dims.validate()?;
        let data = Tensor::zeros_complex(&dims.raw_shape());
        Ok(RadarCube { dims, data })
    }

    pub fn dims(&self) -> &RadarDims {
        &self.dims
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    /// Frames `start..start + len` as a new cube.
    pub fn frames(&self, start: usize, len: usize) -> Result<RadarCube> {
        if len == 0 || start + len > self.dims.frames {
            return Err(Error::invalid(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.dims.frames
            )));
        }
        let per = 2 * self.data.numel() / self.dims.frames;
        let data = self.data.data()[start * per..(start + len) * per].to_vec();
        let dims = self.dims.with_frames(len);
        let t = Tensor::with_kind(
            dims.raw_shape().to_vec(),
            data,
            crate::tensor::Kind::Complex,
        )?;
        Ok(RadarCube { dims, data: t })
    }
}

/// Real encoder input laid out `[2T, Doppler, azimuth, elevation, range]`:
/// the first `T` slices are real parts in time order, the next `T` the
/// imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedTensor {
    data: Tensor,
}

impl ProcessedTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.is_complex() || data.rank() != 5 || data.shape()[0] % 2 != 0 {
            return Err(Error::shape(format!(
                "processed tensor must be real [2T, C, A, E, S], got {:?}",
                data.shape()
            )));
        }
        Ok(ProcessedTensor { data })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0] / 2
    }
}

/// Complex spectrum `[T, Doppler, azimuth, elevation, range]` of a cube,
/// optionally without clutter centering.
pub fn spectrum(cube: &RadarCube, center: bool) -> Result<Tensor> {
    let d = cube.dims();
    let t = if center {
        center_along(cube.data(), AX_CHIRP)?
    } else {
        cube.data().clone()
    };
    let t = fft_along(&t, AX_SAMPLE, d.pad_samples)?;
    let t = fft_along(&t, AX_CHIRP, d.pad_chirps)?;
    let t = fft_along(&t, AX_AZIMUTH, d.pad_azimuth)?;
    let t = fft_along(&t, AX_ELEVATION, d.pad_elevation)?;
    t.permute(&[AX_TIME, AX_CHIRP, AX_AZIMUTH, AX_ELEVATION, AX_SAMPLE])
}

/// Clutter centering over chirps, 4D FFT, rearrangement to
/// time/Doppler/azimuth/elevation/range and real/imaginary concatenation.
pub fn preprocess(cube: &RadarCube) -> Result<ProcessedTensor> {
    let d = cube.dims();
    let spec = spectrum(cube, true)?;
    let mut data = spec.real_part().into_data();
    data.extend_from_slice(spec.imag_part().data());
    ProcessedTensor::new(Tensor::from_vec(d.processed_shape().to_vec(), data)?)
}

/// Processes each frame of `cube` on its own, returning per-frame
/// `(real, imag)` slices of length [`RadarDims::slice_len`].
///
/// Every step of [`preprocess`] acts within a frame, so a window assembled
/// from these slices equals `preprocess` of the window cube.
pub fn preprocess_frames(cube: &RadarCube) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let spec = spectrum(cube, true)?;
    let per = cube.dims().slice_len();
    let re = spec.real_part().into_data();
    let im = spec.imag_part().into_data();
    Ok(re
        .chunks_exact(per)
        .zip(im.chunks_exact(per))
        .map(|(r, i)| (r.to_vec(), i.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use proptest::prelude::*;

    use super::*;
    use crate::rng::Rng;

    fn small_dims() -> RadarDims {
        RadarDims::unpadded(2, 2, 2, 4, 8)
    }

    fn random_cube(dims: RadarDims, seed: u64) -> RadarCube {
        let mut rng = Rng::new(seed);
        let n: usize = dims.raw_shape().iter().product();
        let vals: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        RadarCube::new(
            dims,
            Tensor::from_complex(dims.raw_shape().to_vec(), &vals).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn default_dims_give_expected_processed_shape() {
        let dims = RadarDims::default();
        dims.validate().unwrap();
        assert_eq!(dims.processed_shape(), [16, 128, 4, 4, 64]);
    }

    #[test]
    fn full_size_output_shape() {
        let cube = RadarCube::zeros(RadarDims::default()).unwrap();
        let p = preprocess(&cube).unwrap();
        assert_eq!(p.data().shape(), &[16, 128, 4, 4, 64]);
    }

    #[test]
    fn static_scene_is_removed() {
        let dims = small_dims();
        let base = random_cube(dims.with_frames(dims.frames), 3);
        // copy chirp 0 into every chirp
        let mut vals = base.data().to_complex_vec();
        let c = dims.chirps;
        for fiber in vals.chunks_exact_mut(c) {
            let first = fiber[0];
            fiber.iter_mut().for_each(|v| *v = first);
        }
        let cube = RadarCube::new(
            dims,
            Tensor::from_complex(dims.raw_shape().to_vec(), &vals).unwrap(),
        )
        .unwrap();
        let out = preprocess(&cube).unwrap();
        assert!(out.data().energy() <= 1e-12 * cube.data().energy());
    }

    #[test]
    fn single_entry_lands_where_layout_says() {
        // Every transform acts within a frame, so a single nonzero sample in
        // frame t may only reach slices t (real) and T + t (imag).
        let dims = RadarDims::unpadded(3, 2, 2, 4, 4);
        let mut cube = RadarCube::zeros(dims).unwrap();
        let t_idx = 1;
        let flat = (((t_idx * 2 + 1) * 2 + 0) * 4 + 2) * 4 + 3;
        let mut data = cube.data.clone();
        data.data_mut()[2 * flat] = 1.0;
        cube = RadarCube::new(dims, data).unwrap();
        let out = preprocess(&cube).unwrap();
        let per = dims.slice_len();
        for (slice, chunk) in out.data().data().chunks_exact(per).enumerate() {
            let e: f64 = chunk.iter().map(|x| x * x).sum();
            if slice == t_idx || slice == dims.frames + t_idx {
                assert!(e > 0.0, "slice {slice} should carry energy");
            } else {
                assert_eq!(e, 0.0, "slice {slice} should be empty");
            }
        }
    }

    #[test]
    fn frames_path_matches_window_path() {
        let dims = small_dims();
        let cube = random_cube(dims, 11);
        let whole = preprocess(&cube).unwrap();
        let frames = preprocess_frames(&cube).unwrap();
        let mut assembled = Vec::new();
        for (re, _) in &frames {
            assembled.extend_from_slice(re);
        }
        for (_, im) in &frames {
            assembled.extend_from_slice(im);
        }
        assert_eq!(whole.data().data(), assembled.as_slice());
    }

    #[test]
    fn rejects_mismatched_shape() {
        let dims = small_dims();
        assert!(RadarCube::new(dims, Tensor::zeros_complex(&[2, 2, 2, 4, 4])).is_err());
        assert!(RadarCube::new(dims, Tensor::zeros(&dims.raw_shape())).is_err());
        let bad = RadarDims {
            pad_samples: 6,
            ..dims
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn preprocess_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let dims = small_dims();
            let x = random_cube(dims, seed_a);
            let y = random_cube(dims, seed_b);
            let combo = x.data().scale(a).add(&y.data().scale(b)).unwrap();
            let lhs = preprocess(&RadarCube::new(dims, combo).unwrap()).unwrap();
            let px = preprocess(&x).unwrap();
            let py = preprocess(&y).unwrap();
            let rhs = px.data().scale(a).add(&py.data().scale(b)).unwrap();
            for (l, r) in lhs.data().data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }
    }
}
