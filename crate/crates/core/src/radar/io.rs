//! On-disk formats: the RPC1 radar cube and the pose CSV sidecar.
//!
//! RPC1, little-endian:
//!
//! ```text
//! "RPC1" | u32 version = 1 | u32 T | u32 A | u32 E | u32 S | u32 C | payload
//! ```
//!
//! The payload holds `T*A*E*S*C` complex samples as `(re, im)` pairs of
//! `f32`, row-major over `[T, A, E, S, C]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{Pose, NUM_KEYPOINTS, POSE_DIM};
use crate::radar::{RadarCube, RadarDims};
use crate::tensor::{Kind, Tensor};

pub const CUBE_MAGIC: &[u8; 4] = b"RPC1";
pub const CUBE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 5 * 4;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn write_cube(cube: &RadarCube, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    for d in cube.dims().raw_shape() {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow(format!("{d} > u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in cube.data().data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an RPC1 file; FFT sizes default to the next power of two of each
/// raw axis.
pub fn read_cube(path: &Path) -> Result<RadarCube> {
    let file = open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadMagic(path.display().to_string()))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut word).map_err(|_| Error::Truncated {
            expected: HEADER_LEN,
            found: file_len,
        })?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32(&mut r)?;
    if version != CUBE_VERSION {
        return Err(Error::Version(version));
    }
    let mut dims = [0usize; 5];
    let mut count: u64 = 1;
    for d in dims.iter_mut() {
        let v = next_u32(&mut r)?;
        if v == 0 {
            return Err(Error::Parse("zero-sized dimension in cube header".into()));
        }
        *d = v as usize;
        count = count
            .checked_mul(v as u64)
            .ok_or_else(|| Error::DimOverflow(format!("sample count overflows at {v}")))?;
    }
    let payload = count
        .checked_mul(8)
        .ok_or_else(|| Error::DimOverflow(format!("{count} samples")))?;
    let expected = HEADER_LEN + payload;
    if file_len < expected {
        return Err(Error::Truncated {
            expected,
            found: file_len,
        });
    }
    let mut bytes = vec![0u8; payload as usize];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let rd = RadarDims::unpadded(dims[0], dims[1], dims[2], dims[3], dims[4]);
    RadarCube::new(rd, Tensor::with_kind(dims.to_vec(), data, Kind::Complex)?)
}

fn pose_header() -> String {
    let mut h = String::from("frame_index");
    for k in 0..NUM_KEYPOINTS {
        for axis in ["x", "y", "z"] {
            h.push_str(&format!(",kp{k}_{axis}"));
        }
    }
    h
}

pub fn write_poses(poses: &[Pose], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", pose_header())?;
    for (i, p) in poses.iter().enumerate() {
        write!(w, "{i}")?;
        for v in p.to_flat() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let r = BufReader::new(open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty pose file".into()))??;
    if header.trim() != pose_header() {
        return Err(Error::Parse("unexpected pose CSV header".into()));
    }
    let mut poses = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != POSE_DIM + 1 {
            return Err(Error::Parse(format!(
                "pose row {row}: {} fields, expected {}",
                fields.len(),
                POSE_DIM + 1
            )));
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("pose row {row}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        poses.push(Pose::from_flat(&values)?);
    }
    Ok(poses)
}
