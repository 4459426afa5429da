//! Paired 3D skeleton sequences: ingestion, validation, normalization,
//! resampling, and synthetic generation.
//!
//! The on-disk format is line-delimited JSON (UTF-8), one interaction per
//! line:
//!
//! ```json
//! {"category":"handshake","fps":30.0,"joints":6,
//!  "person_x":[[[x,y,z], ...D], ...T],
//!  "person_y":[[[x,y,z], ...D], ...T],
//!  "split":"train"}
//! ```
//!
//! `split` is optional; coordinates are meters in a right-handed world frame
//! and are stored as 32-bit floats. Joint 0 is the root joint by convention;
//! importers must map source skeletons accordingly.

mod synth;

pub use synth::{synth_generate, Scenario, IDLE_FRAME_JITTER, IDLE_MAX_FRAME_STEP};

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ─── Types ──────────────────────────────────────────────────────────────────

/// Which evaluation split a sample belongs to. Absent tags fall back to a
/// seeded per-category split at benchmark time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One person's motion: `frames` has shape (T, D, 3) with coordinates in
/// meters. T ≥ 2 and every coordinate finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub frames: Array3<f32>,
    pub fps: f32,
}

impl PoseSequence {
    pub fn new(frames: Array3<f32>, fps: f32) -> Result<Self> {
        let seq = Self { frames, fps };
        seq.validate()?;
        Ok(seq)
    }

    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of joints D.
    pub fn joint_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Data(format!(
                "pose sequence must have at least 2 frames, got {}",
                self.len()
            )));
        }
        if self.frames.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "joint coordinates must be 3-dimensional, got {}",
                self.frames.shape()[2]
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Data(format!("fps must be positive, got {}", self.fps)));
        }
        if let Some(v) = self.frames.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite coordinate {v} in pose sequence")));
        }
        Ok(())
    }
}

/// A two-person interaction clip: both sequences aligned in time with equal
/// frame and joint counts, plus a category label.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionPair {
    pub person_x: PoseSequence,
    pub person_y: PoseSequence,
    pub category: String,
    pub split: Option<Split>,
}

impl InteractionPair {
    pub fn new(
        person_x: PoseSequence,
        person_y: PoseSequence,
        category: impl Into<String>,
    ) -> Result<Self> {
        let pair = Self { person_x, person_y, category: category.into(), split: None };
        pair.validate()?;
        Ok(pair)
    }

    /// Number of frames T (equal for both persons).
    pub fn len(&self) -> usize {
        self.person_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of joints D (equal for both persons).
    pub fn joint_count(&self) -> usize {
        self.person_x.joint_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.person_x.validate()?;
        self.person_y.validate()?;
        if self.person_x.len() != self.person_y.len() {
            return Err(Error::Data(format!(
                "frame counts differ between persons: {} vs {}",
                self.person_x.len(),
                self.person_y.len()
            )));
        }
        if self.person_x.joint_count() != self.person_y.joint_count() {
            return Err(Error::Data(format!(
                "joint counts differ between persons: {} vs {}",
                self.person_x.joint_count(),
                self.person_y.joint_count()
            )));
        }
        Ok(())
    }
}

/// A collection of interaction clips with a uniform joint count.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub samples: Vec<InteractionPair>,
    pub joint_count: usize,
    pub categories: BTreeSet<String>,
}

impl InteractionDataset {
    /// Builds a dataset from samples, deriving the joint count and category
    /// set and validating that every sample agrees.
    pub fn from_samples(samples: Vec<InteractionPair>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("dataset contains no samples".into()))?;
        let joint_count = first.joint_count();
        let mut categories = BTreeSet::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            if s.joint_count() != joint_count {
                return Err(Error::Data(format!(
                    "sample {i} has {} joints, expected {joint_count}",
                    s.joint_count()
                )));
            }
            categories.insert(s.category.clone());
        }
        Ok(Self { samples, joint_count, categories })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends another dataset's samples (joint counts must agree).
    pub fn merge(&mut self, other: InteractionDataset) -> Result<()> {
        if other.joint_count != self.joint_count {
            return Err(Error::Data(format!(
                "cannot merge datasets with joint counts {} and {}",
                self.joint_count, other.joint_count
            )));
        }
        self.samples.extend(other.samples);
        self.categories.extend(other.categories);
        Ok(())
    }
}

// ─── Serialization ──────────────────────────────────────────────────────────

/// Wire form of one dataset line.
#[derive(Serialize, Deserialize)]
struct Record {
    category: String,
    fps: f32,
    joints: usize,
    person_x: Vec<Vec<[f32; 3]>>,
    person_y: Vec<Vec<[f32; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn frames_to_nested(frames: &Array3<f32>) -> Vec<Vec<[f32; 3]>> {
    let (t_len, d) = (frames.shape()[0], frames.shape()[1]);
    (0..t_len)
        .map(|t| {
            (0..d)
                .map(|j| [frames[[t, j, 0]], frames[[t, j, 1]], frames[[t, j, 2]]])
                .collect()
        })
        .collect()
}

fn nested_to_frames(nested: &[Vec<[f32; 3]>], line: usize, who: &str) -> Result<Array3<f32>> {
    let t_len = nested.len();
    if t_len < 2 {
        return Err(Error::Data(format!(
            "line {line}: {who} has {t_len} frames, need at least 2"
        )));
    }
    let d = nested[0].len();
    let mut frames = Array3::<f32>::zeros((t_len, d, 3));
    for (t, frame) in nested.iter().enumerate() {
        if frame.len() != d {
            return Err(Error::Data(format!(
                "line {line}: {who} frame {t} has {} joints, expected {d}",
                frame.len()
            )));
        }
        for (j, joint) in frame.iter().enumerate() {
            for (k, v) in joint.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "line {line}: {who} has non-finite coordinate at frame {t}, joint {j}"
                    )));
                }
                frames[[t, j, k]] = *v;
            }
        }
    }
    Ok(frames)
}

/// Loads a line-delimited JSON dataset. When `expected_joints` is given,
/// every record must declare and carry exactly that many joints.
pub fn load_dataset(path: impl AsRef<Path>, expected_joints: Option<usize>) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        Error::Data(format!("cannot open dataset {}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("line {line_no}: malformed record: {e}"))
        })?;
        let frames_x = nested_to_frames(&rec.person_x, line_no, "person_x")?;
        let frames_y = nested_to_frames(&rec.person_y, line_no, "person_y")?;
        let person_x = PoseSequence { frames: frames_x, fps: rec.fps };
        let person_y = PoseSequence { frames: frames_y, fps: rec.fps };
        let pair = InteractionPair { person_x, person_y, category: rec.category, split: rec.split };
        pair.validate()
            .map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        if pair.joint_count() != rec.joints {
            return Err(Error::Data(format!(
                "line {line_no}: record declares {} joints but carries {}",
                rec.joints,
                pair.joint_count()
            )));
        }
        if let Some(d) = expected_joints {
            if pair.joint_count() != d {
                return Err(Error::Data(format!(
                    "line {line_no}: expected {d} joints, got {}",
                    pair.joint_count()
                )));
            }
        }
        samples.push(pair);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("dataset {} contains no records", path.display())));
    }
    InteractionDataset::from_samples(samples)
}

/// Writes the dataset in the same line-delimited JSON format `load_dataset`
/// reads. Round-trips are lossless at float32 precision.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &InteractionDataset) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for pair in &dataset.samples {
        let rec = Record {
            category: pair.category.clone(),
            fps: pair.person_x.fps,
            joints: pair.joint_count(),
            person_x: frames_to_nested(&pair.person_x.frames),
            person_y: frames_to_nested(&pair.person_y.frames),
            split: pair.split,
        };
        serde_json::to_writer(&mut w, &rec)
            .map_err(|e| Error::Data(format!("serialize record: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ─── Geometry operations ────────────────────────────────────────────────────

/// Translates both persons by one shared vector so that the midpoint of the
/// two root joints (joint index 0) at frame 0 lands at the origin. No
/// per-person centering, no rotation, no scaling — every inter-person joint
/// distance is preserved.
pub fn normalize_pair(pair: &InteractionPair) -> InteractionPair {
    let rx = &pair.person_x.frames;
    let ry = &pair.person_y.frames;
    let mid = [
        (rx[[0, 0, 0]] + ry[[0, 0, 0]]) * 0.5,
        (rx[[0, 0, 1]] + ry[[0, 0, 1]]) * 0.5,
        (rx[[0, 0, 2]] + ry[[0, 0, 2]]) * 0.5,
    ];
    let shift = |frames: &Array3<f32>| {
        let mut out = frames.clone();
        for t in 0..out.shape()[0] {
            for j in 0..out.shape()[1] {
                for (k, m) in mid.iter().enumerate() {
                    out[[t, j, k]] -= m;
                }
            }
        }
        out
    };
    InteractionPair {
        person_x: PoseSequence { frames: shift(rx), fps: pair.person_x.fps },
        person_y: PoseSequence { frames: shift(ry), fps: pair.person_y.fps },
        category: pair.category.clone(),
        split: pair.split,
    }
}

/// Resamples a sequence to `target_len` frames by linear interpolation at
/// uniformly spaced time parameters. Endpoints are preserved exactly, and
/// `target_len == seq.len()` returns the input unchanged.
pub fn resample_to_length(seq: &PoseSequence, target_len: usize) -> Result<PoseSequence> {
    if target_len < 2 {
        return Err(Error::Config(format!(
            "resample target must be at least 2 frames, got {target_len}"
        )));
    }
    seq.validate()?;
    let t_len = seq.len();
    let d = seq.joint_count();
    if target_len == t_len {
        return Ok(seq.clone());
    }
    let mut frames = Array3::<f32>::zeros((target_len, d, 3));
    let scale = (t_len - 1) as f64 / (target_len - 1) as f64;
    for t_out in 0..target_len {
        let pos = t_out as f64 * scale;
        let i0 = (pos.floor() as usize).min(t_len - 1);
        let i1 = (i0 + 1).min(t_len - 1);
        let w = pos - i0 as f64;
        for j in 0..d {
            for k in 0..3 {
                let a = seq.frames[[i0, j, k]] as f64;
                let b = seq.frames[[i1, j, k]] as f64;
                frames[[t_out, j, k]] = ((1.0 - w) * a + w * b) as f32;
            }
        }
    }
    Ok(PoseSequence { frames, fps: seq.fps })
}

/// Applies [`resample_to_length`] to both persons of a pair.
pub fn resample_pair(pair: &InteractionPair, target_len: usize) -> Result<InteractionPair> {
    Ok(InteractionPair {
        person_x: resample_to_length(&pair.person_x, target_len)?,
        person_y: resample_to_length(&pair.person_y, target_len)?,
        category: pair.category.clone(),
        split: pair.split,
    })
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pair(rng: &mut StdRng, t_len: usize, d: usize) -> InteractionPair {
        let mut mk = |off: f32| {
            let frames = Array3::from_shape_fn((t_len, d, 3), |_| {
                off + rng.random_range(-2.0f32..2.0)
            });
            PoseSequence { frames, fps: 30.0 }
        };
        let x = mk(-1.0);
        let y = mk(1.0);
        InteractionPair::new(x, y, "test").unwrap()
    }

    /// Independent oracle: all inter-person joint distances of a pair.
    fn all_distances(pair: &InteractionPair) -> Vec<f64> {
        let (t_len, d) = (pair.len(), pair.joint_count());
        let mut out = Vec::with_capacity(t_len * d * d);
        for t in 0..t_len {
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0f64;
                    for k in 0..3 {
                        let diff = pair.person_x.frames[[t, i, k]] as f64
                            - pair.person_y.frames[[t, j, k]] as f64;
                        s += diff * diff;
                    }
                    out.push(s.sqrt());
                }
            }
        }
        out
    }

    #[test]
    fn roundtrip_through_file_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let mut rng = StdRng::seed_from_u64(3);
        let samples = (0..5).map(|_| random_pair(&mut rng, 6, 4)).collect();
        let ds = InteractionDataset::from_samples(samples).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, Some(4)).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.person_x.frames, b.person_x.frames);
            assert_eq!(a.person_y.frames, b.person_y.frames);
            assert_eq!(a.category, b.category);
        }
        // Write the loaded copy again: files must match byte for byte.
        let path2 = dir.path().join("ds2.jsonl");
        write_dataset(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_counts_and_joint_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let mut rng = StdRng::seed_from_u64(4);
        let ds =
            InteractionDataset::from_samples((0..3).map(|_| random_pair(&mut rng, 5, 24)).collect())
                .unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, Some(24)).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.joint_count, 24);
        let err = load_dataset(&path, Some(25)).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn mismatched_frame_counts_name_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut rng = StdRng::seed_from_u64(5);
        let good = random_pair(&mut rng, 4, 2);
        let mut bad = random_pair(&mut rng, 4, 2);
        // Second person loses a frame.
        bad.person_y.frames = bad
            .person_y
            .frames
            .slice(ndarray::s![..3, .., ..])
            .to_owned();
        let ds = InteractionDataset { samples: vec![good], joint_count: 2, categories: Default::default() };
        write_dataset(&path, &ds).unwrap();
        // Append the malformed record by hand.
        let rec = Record {
            category: "test".into(),
            fps: 30.0,
            joints: 2,
            person_x: frames_to_nested(&bad.person_x.frames),
            person_y: frames_to_nested(&bad.person_y.frames),
            split: None,
        };
        let mut contents = std::fs::read_to_string(&path).unwrap();
        contents.push_str(&serde_json::to_string(&rec).unwrap());
        contents.push('\n');
        std::fs::write(&path, contents).unwrap();
        let err = load_dataset(&path, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("frame counts differ"), "{msg}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{ not json\n").unwrap();
        let err = load_dataset(&path, None).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert_eq!(err.kind(), crate::error::ErrorKind::Data);
    }

    #[test]
    fn normalize_centers_root_midpoint() {
        let mut rng = StdRng::seed_from_u64(6);
        let pair = random_pair(&mut rng, 5, 3);
        let n = normalize_pair(&pair);
        for k in 0..3 {
            let mid = (n.person_x.frames[[0, 0, k]] + n.person_y.frames[[0, 0, k]]) * 0.5;
            assert!(mid.abs() < 1e-6, "residual midpoint {mid}");
        }
        // Already centered → unchanged (exact fixed point).
        let n2 = normalize_pair(&n);
        assert_eq!(n.person_x.frames, n2.person_x.frames);
        assert_eq!(n.person_y.frames, n2.person_y.frames);
    }

    #[test]
    fn normalize_cancels_shared_translation() {
        let mut rng = StdRng::seed_from_u64(7);
        let pair = random_pair(&mut rng, 5, 3);
        let centered = normalize_pair(&pair);
        let mut shifted = pair.clone();
        for frames in [&mut shifted.person_x.frames, &mut shifted.person_y.frames] {
            for v in frames.slice_mut(ndarray::s![.., .., 0]).iter_mut() {
                *v += 5.0;
            }
        }
        let recentered = normalize_pair(&shifted);
        for (a, b) in centered
            .person_x
            .frames
            .iter()
            .zip(recentered.person_x.frames.iter())
        {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Oracle: recompute every inter-person distance before and after
        /// normalization; a shared translation must preserve them all.
        #[test]
        fn normalize_preserves_distances(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let pair = random_pair(&mut rng, 6, 4);
            let before = all_distances(&pair);
            let after = all_distances(&normalize_pair(&pair));
            let max_diff = before
                .iter()
                .zip(&after)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            prop_assert!(max_diff < 1e-6, "max distance drift {max_diff}");
        }

        /// Oracle: a trajectory linear in time is recovered exactly by
        /// downsample → upsample.
        #[test]
        fn resample_recovers_linear_trajectories(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let t_len = 9usize;
            let d = 3usize;
            let a: Vec<f32> = (0..d * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..d * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let frames = Array3::from_shape_fn((t_len, d, 3), |(t, j, k)| {
                let u = t as f32 / (t_len - 1) as f32;
                a[j * 3 + k] + u * b[j * 3 + k]
            });
            let seq = PoseSequence { frames, fps: 30.0 };
            let down = resample_to_length(&seq, 5).unwrap();
            let up = resample_to_length(&down, t_len).unwrap();
            let max_diff = seq
                .frames
                .iter()
                .zip(up.frames.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            prop_assert!(max_diff < 1e-6, "linear recovery drift {max_diff}");
        }
    }

    #[test]
    fn resample_identity_and_endpoints() {
        let mut rng = StdRng::seed_from_u64(8);
        let pair = random_pair(&mut rng, 7, 3);
        let seq = pair.person_x;
        let same = resample_to_length(&seq, 7).unwrap();
        assert_eq!(seq.frames, same.frames);
        let longer = resample_to_length(&seq, 12).unwrap();
        assert_eq!(longer.len(), 12);
        assert_eq!(
            seq.frames.slice(ndarray::s![0, .., ..]),
            longer.frames.slice(ndarray::s![0, .., ..])
        );
        assert_eq!(
            seq.frames.slice(ndarray::s![6, .., ..]),
            longer.frames.slice(ndarray::s![11, .., ..])
        );
    }

    #[test]
    fn resample_two_frames_midpoint() {
        let frames = Array3::from_shape_fn((2, 1, 3), |(t, _, k)| (t * 10 + k) as f32);
        let seq = PoseSequence { frames, fps: 30.0 };
        let up = resample_to_length(&seq, 3).unwrap();
        for k in 0..3 {
            let expected = (seq.frames[[0, 0, k]] + seq.frames[[1, 0, k]]) * 0.5;
            assert!((up.frames[[1, 0, k]] - expected).abs() < 1e-7);
        }
    }
}
