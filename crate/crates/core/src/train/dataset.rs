use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::pose::{Pose, POSE_DIM};
use crate::radar::{io, preprocess_frames, RadarDims};
use crate::rng::Rng;
use crate::sim::{synthesize_script, Activity, MotionScript, RcsProfile, SubjectProfile};
use crate::sim::RadarParams;

/// One recording: a subject performing one activity.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub subject: usize,
    pub activity: Activity,
    /// Per-frame processed `(real, imag)` slices.
    pub frames: Vec<(Vec<f32>, Vec<f32>)>,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowId {
    pub sequence: usize,
    /// First frame of the window.
    pub start: usize,
}

/// Processed recordings cut into sliding windows of `window` frames, each
/// labeled with the pose at its last frame.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dims: RadarDims,
    pub window: usize,
    pub sequences: Vec<Sequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub params: RadarParams,
    pub subjects: usize,
    pub activities: Vec<Activity>,
    pub frames_per_sequence: usize,
    pub noise_std: f64,
    pub rcs: RcsProfile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    subject: usize,
    activity: usize,
    cube: String,
    poses: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    window: usize,
    sequences: Vec<ManifestEntry>,
}

/// Raw simulated recordings before preprocessing.
pub struct RawRecording {
    pub subject: usize,
    pub activity: Activity,
    pub cube: crate::radar::RadarCube,
    pub poses: Vec<Pose>,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.subjects == 0 || self.activities.is_empty() {
            return Err(Error::Config("simulation needs subjects and activities".into()));
        }
        if self.frames_per_sequence < self.params.dims.frames {
            return Err(Error::Config(format!(
                "frames_per_sequence {} shorter than the {}-frame window",
                self.frames_per_sequence, self.params.dims.frames
            )));
        }
        Ok(())
    }

    /// Simulates every (subject, activity) recording. Body scale is fixed
    /// per subject; placement and motion phase vary per recording.
    pub fn simulate(&self, seed: u64) -> Result<Vec<RawRecording>> {
        self.validate()?;
        let root = Rng::new(seed);
        let mut out = Vec::new();
        for subject in 0..self.subjects {
            let mut srng = root.derive(subject as u64 + 1);
            let scale = SubjectProfile::random(&mut srng).scale;
            for &activity in &self.activities {
                let mut rng = srng.derive(1000 + activity.id() as u64);
                let mut profile = SubjectProfile::random(&mut rng);
                profile.scale = scale;
                let script = MotionScript::generate(
                    activity,
                    &profile,
                    self.frames_per_sequence,
                    self.params.frame_rate,
                    self.rcs,
                    self.noise_std,
                );
                let cube = synthesize_script(&script, &self.params, &mut rng)?;
                out.push(RawRecording {
                    subject,
                    activity,
                    cube,
                    poses: script.trajectory,
                });
            }
        }
        Ok(out)
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

impl Dataset {
    pub fn from_recordings(recordings: &[RawRecording], window: usize) -> Result<Self> {
        let first = recordings
            .first()
            .ok_or_else(|| Error::invalid("no recordings"))?;
        let dims = first.cube.dims().with_frames(window);
        let mut sequences = Vec::with_capacity(recordings.len());
        for r in recordings {
            let d = r.cube.dims();
            if d.with_frames(window) != dims {
                return Err(Error::Shape(format!(
                    "recording dims {d:?} differ from {dims:?}"
                )));
            }
            if r.poses.len() != d.frames {
                return Err(Error::Shape(format!(
                    "{} poses for {} frames",
                    r.poses.len(),
                    d.frames
                )));
            }
            let frames = preprocess_frames(&r.cube)?
                .into_iter()
                .map(|(re, im)| (to_f32(re), to_f32(im)))
                .collect();
            sequences.push(Sequence {
                subject: r.subject,
                activity: r.activity,
                frames,
                poses: r.poses.clone(),
            });
        }
        Ok(Dataset {
            dims,
            window,
            sequences,
        })
    }

    pub fn simulate(spec: &SimSpec, seed: u64) -> Result<Self> {
        Dataset::from_recordings(&spec.simulate(seed)?, spec.params.dims.frames)
    }

    pub fn subjects(&self) -> BTreeSet<usize> {
        self.sequences.iter().map(|s| s.subject).collect()
    }

    /// Windows of the given subjects, taking every `stride`-th start.
    pub fn windows(&self, subjects: &[usize], stride: usize) -> Vec<WindowId> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for (i, s) in self.sequences.iter().enumerate() {
            if !subjects.contains(&s.subject) || s.frames.len() < self.window {
                continue;
            }
            for start in (0..=s.frames.len() - self.window).step_by(stride) {
                out.push(WindowId { sequence: i, start });
            }
        }
        out
    }

    pub fn all_windows(&self) -> Vec<WindowId> {
        let all: Vec<usize> = self.subjects().into_iter().collect();
        self.windows(&all, 1)
    }

    /// Processed window `[2T, doppler, az, el, range]`: real slices of all
    /// frames, then imaginary slices.
    pub fn window_data(&self, id: WindowId) -> Result<Vec<f64>> {
        let seq = self.sequence(id)?;
        let frames = &seq.frames[id.start..id.start + self.window];
        let per = frames[0].0.len();
        let mut out = Vec::with_capacity(2 * self.window * per);
        for (re, _) in frames {
            out.extend(re.iter().map(|&v| v as f64));
        }
        for (_, im) in frames {
            out.extend(im.iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    pub fn target(&self, id: WindowId) -> Result<&Pose> {
        let seq = self.sequence(id)?;
        Ok(&seq.poses[id.start + self.window - 1])
    }

    fn sequence(&self, id: WindowId) -> Result<&Sequence> {
        let seq = self
            .sequences
            .get(id.sequence)
            .ok_or_else(|| Error::invalid(format!("no sequence {}", id.sequence)))?;
        if id.start + self.window > seq.frames.len() {
            return Err(Error::invalid(format!("window {id:?} out of range")));
        }
        Ok(seq)
    }

    pub fn subject_of(&self, id: WindowId) -> usize {
        self.sequences[id.sequence].subject
    }

    pub fn mean_pose(&self, windows: &[WindowId]) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Err(Error::invalid("mean pose of no windows"));
        }
        let mut mean = vec![0.0; POSE_DIM];
        for &w in windows {
            for (m, v) in mean.iter_mut().zip(self.target(w)?.to_flat()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= windows.len() as f64);
        Ok(mean)
    }

    /// Root-mean-square input value over the given windows' frames.
    pub fn input_rms(&self, windows: &[WindowId]) -> Result<f64> {
        let mut seen = BTreeSet::new();
        let (mut sum, mut count) = (0.0f64, 0usize);
        for &w in windows {
            let seq = self.sequence(w)?;
            for f in w.start..w.start + self.window {
                if seen.insert((w.sequence, f)) {
                    let (re, im) = &seq.frames[f];
                    sum += re.iter().chain(im).map(|&v| (v as f64).powi(2)).sum::<f64>();
                    count += re.len() + im.len();
                }
            }
        }
        if count == 0 {
            return Err(Error::invalid("no input values"));
        }
        Ok((sum / count as f64).sqrt())
    }
}

/// File name of the processed-window cache inside a data directory.
pub const PROCESSED_FILE: &str = "processed.rpck";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedSequence {
    subject: usize,
    activity: usize,
}

impl Dataset {
    /// Stores processed frames and poses in the checkpoint container.
    pub fn save_processed(&self, path: &Path) -> Result<()> {
        let mut store = ParamStore::new();
        let mut index = Vec::new();
        for (i, s) in self.sequences.iter().enumerate() {
            let n = s.frames.len();
            let per = s.frames.first().map_or(0, |f| f.0.len());
            let mut data = Vec::with_capacity(n * 2 * per);
            for (re, im) in &s.frames {
                data.extend(re.iter().chain(im).map(|&v| v as f64));
            }
            store.insert(&format!("seq{i:04}.frames"), Tensor::from_vec(vec![n, 2, per], data)?)?;
            let poses = s.poses.iter().flat_map(|p| p.to_flat()).collect();
            store.insert(&format!("seq{i:04}.poses"), Tensor::from_vec(vec![n, POSE_DIM], poses)?)?;
            index.push(CachedSequence {
                subject: s.subject,
                activity: s.activity.id(),
            });
        }
        let mut ck = Checkpoint::new(store);
        ck.meta.insert("kind".into(), "processed".into());
        ck.meta.insert("dims".into(), to_json(&self.dims)?);
        ck.meta.insert("window".into(), self.window.to_string());
        ck.meta.insert("sequences".into(), to_json(&index)?);
        ck.save(path)
    }

    pub fn load_processed(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::Parse(format!("{}: missing {k}", path.display())))
        };
        if meta("kind")? != "processed" {
            return Err(Error::Parse(format!("{} is not a processed cache", path.display())));
        }
        let parse_err = |e: serde_json::Error| Error::Parse(format!("{}: {e}", path.display()));
        let dims: RadarDims = serde_json::from_str(meta("dims")?).map_err(parse_err)?;
        let window: usize = meta("window")?
            .parse()
            .map_err(|_| Error::Parse("bad window".into()))?;
        let index: Vec<CachedSequence> = serde_json::from_str(meta("sequences")?).map_err(parse_err)?;
        let per = dims.slice_len();
        let mut sequences = Vec::with_capacity(index.len());
        for (i, e) in index.iter().enumerate() {
            let get = |name: String| {
                ck.params
                    .get(&name)
                    .ok_or_else(|| Error::Parse(format!("cache lacks {name}")))
            };
            let f = get(format!("seq{i:04}.frames"))?;
            let p = get(format!("seq{i:04}.poses"))?;
            let n = f.shape()[0];
            if f.shape() != [n, 2, per] || p.shape() != [n, POSE_DIM] {
                return Err(Error::Shape(format!("cached sequence {i} has inconsistent shapes")));
            }
            let frames = f
                .data()
                .chunks_exact(2 * per)
                .map(|c| (to_f32(c[..per].to_vec()), to_f32(c[per..].to_vec())))
                .collect();
            let poses = p.data().chunks_exact(POSE_DIM).map(Pose::from_flat).collect::<Result<_>>()?;
            sequences.push(Sequence {
                subject: e.subject,
                activity: Activity::from_id(e.activity)?,
                frames,
                poses,
            });
        }
        Ok(Dataset {
            dims,
            window,
            sequences,
        })
    }

    /// Loads `dir/processed.rpck` when present, otherwise reads and
    /// preprocesses the raw recordings.
    pub fn load(dir: &Path) -> Result<Self> {
        let cache = dir.join(PROCESSED_FILE);
        if cache.exists() {
            return Dataset::load_processed(&cache);
        }
        let (recs, window) = read_recordings(dir)?;
        Dataset::from_recordings(&recs, window)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes simulated recordings as RPC1 cubes plus pose CSVs and a
/// `manifest.json` index.
pub fn write_recordings(recordings: &[RawRecording], window: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (i, r) in recordings.iter().enumerate() {
        let cube = format!("seq{i:03}.rpc");
        let poses = format!("seq{i:03}_poses.csv");
        io::write_cube(&r.cube, &dir.join(&cube))?;
        io::write_poses(&r.poses, &dir.join(&poses))?;
        entries.push(ManifestEntry {
            subject: r.subject,
            activity: r.activity.id(),
            cube,
            poses,
        });
    }
    let manifest = Manifest {
        window,
        sequences: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn read_recordings(dir: &Path) -> Result<(Vec<RawRecording>, usize)> {
    let path: PathBuf = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.clone()),
        _ => Error::Io(e),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for e in manifest.sequences {
        out.push(RawRecording {
            subject: e.subject,
            activity: Activity::from_id(e.activity)?,
            cube: io::read_cube(&dir.join(&e.cube))?,
            poses: io::read_poses(&dir.join(&e.poses))?,
        });
    }
    Ok((out, manifest.window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::{preprocess, RadarDims};

    pub(crate) fn tiny_spec() -> SimSpec {
        SimSpec {
            params: RadarParams::with_dims(RadarDims::unpadded(3, 4, 4, 8, 16)),
            subjects: 3,
            activities: vec![Activity::Squat, Activity::TrunkBend],
            frames_per_sequence: 6,
            noise_std: 0.01,
            rcs: RcsProfile::uniform(),
        }
    }

    #[test]
    fn processed_cache_round_trip() {
        let ds = Dataset::simulate(&tiny_spec(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save_processed(&dir.path().join(PROCESSED_FILE)).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.dims, ds.dims);
        for w in ds.all_windows() {
            assert_eq!(back.window_data(w).unwrap(), ds.window_data(w).unwrap());
            assert_eq!(back.target(w).unwrap(), ds.target(w).unwrap());
        }
    }

    #[test]
    fn windows_match_direct_preprocessing() {
        let spec = tiny_spec();
        let recs = spec.simulate(4).unwrap();
        let ds = Dataset::from_recordings(&recs, 3).unwrap();
        assert_eq!(ds.all_windows().len(), 3 * 2 * 4);
        let id = WindowId {
            sequence: 1,
            start: 2,
        };
        let direct = preprocess(&recs[1].cube.frames(2, 3).unwrap()).unwrap();
        let assembled = ds.window_data(id).unwrap();
        for (a, b) in assembled.iter().zip(direct.data().data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert_eq!(ds.target(id).unwrap(), &recs[1].poses[4]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = tiny_spec().simulate(9).unwrap();
        let b = tiny_spec().simulate(9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cube, y.cube);
            assert_eq!(x.poses, y.poses);
        }
    }

    #[test]
    fn stride_and_subject_filter() {
        let ds = Dataset::simulate(&tiny_spec(), 1).unwrap();
        let w = ds.windows(&[1], 2);
        assert_eq!(w.len(), 2 * 2);
        assert!(w.iter().all(|&id| ds.subject_of(id) == 1));
    }

    #[test]
    fn disk_round_trip() {
        let recs = tiny_spec().simulate(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_recordings(&recs, 3, dir.path()).unwrap();
        let (back, window) = read_recordings(dir.path()).unwrap();
        assert_eq!(window, 3);
        assert_eq!(back.len(), recs.len());
        assert_eq!(back[2].poses.len(), recs[2].poses.len());
        assert!(matches!(
            read_recordings(&dir.path().join("missing")),
            Err(Error::MissingInput(_))
        ));
    }
}
