//! Inter-person joint distance maps and the displacement statistic.
//!
//! For a pair (X, Y) the map at frame t is the D×D matrix
//! `m[i][j] = -‖x_t^(i) - y_t^(j)‖₂` — negated Euclidean distance, so entries
//! are non-positive and grow toward 0 as joints approach. The maps are pure
//! functions of the input coordinates and carry no learnable state; the
//! encoder treats them as constants.

use std::path::Path;

use ndarray::Array2;

use crate::data::InteractionPair;
use crate::error::{Error, Result};

/// Per-frame negated distance matrices for one interaction pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMapSequence {
    /// One D×D matrix per frame; every entry ≤ 0.
    pub maps: Vec<Array2<f64>>,
}

impl DistanceMapSequence {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.maps.first().map_or(0, |m| m.nrows())
    }
}

/// Computes the per-frame D×D negated distance maps
/// `maps[t][i][j] = -‖x_t^(i) - y_t^(j)‖₂`.
pub fn distance_maps(pair: &InteractionPair) -> DistanceMapSequence {
    let (t_len, d) = (pair.len(), pair.joint_count());
    let fx = &pair.person_x.frames;
    let fy = &pair.person_y.frames;
    let maps = (0..t_len)
        .map(|t| {
            Array2::from_shape_fn((d, d), |(i, j)| {
                let mut s = 0.0f64;
                for k in 0..3 {
                    let diff = fx[[t, i, k]] as f64 - fy[[t, j, k]] as f64;
                    s += diff * diff;
                }
                -s.sqrt()
            })
        })
        .collect();
    DistanceMapSequence { maps }
}

/// Mean over samples of the largest per-sequence displacement among all
/// inter-person joint pairs: for each sample, the maximum over (i, j) of
/// `max_t d_ij(t) - min_t d_ij(t)` with `d_ij(t) = ‖x_t^(i) - y_t^(j)‖₂`.
/// Proxies interaction intensity; 0 for mutually static pairs.
pub fn displacement_statistic(samples: &[InteractionPair]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("displacement statistic of an empty sample list".into()));
    }
    let mut total = 0.0f64;
    for pair in samples {
        let d = pair.joint_count();
        let mut lo = vec![f64::INFINITY; d * d];
        let mut hi = vec![f64::NEG_INFINITY; d * d];
        for t in 0..pair.len() {
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0f64;
                    for k in 0..3 {
                        let diff = pair.person_x.frames[[t, i, k]] as f64
                            - pair.person_y.frames[[t, j, k]] as f64;
                        s += diff * diff;
                    }
                    let dist = s.sqrt();
                    let cell = i * d + j;
                    lo[cell] = lo[cell].min(dist);
                    hi[cell] = hi[cell].max(dist);
                }
            }
        }
        let sample_max = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| h - l)
            .fold(0.0f64, f64::max);
        total += sample_max;
    }
    Ok(total / samples.len() as f64)
}

/// Exports a map sequence as one grayscale PNG per frame under
/// `prefix_NNNN.png`. Values are affinely mapped so 0 → black and the most
/// negative entry across the sequence → white.
pub fn export_map_strip(seq: &DistanceMapSequence, prefix: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let prefix = prefix.as_ref();
    let most_negative = seq
        .maps
        .iter()
        .flat_map(|m| m.iter().copied())
        .fold(0.0f64, f64::min);
    let scale = if most_negative < 0.0 { 255.0 / most_negative } else { 0.0 };
    let mut written = Vec::with_capacity(seq.len());
    for (t, map) in seq.maps.iter().enumerate() {
        let (h, w) = map.dim();
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                let v = (map[[i, j]] * scale).round().clamp(0.0, 255.0) as u8;
                img.put_pixel(j as u32, i as u32, image::Luma([v]));
            }
        }
        let name = match prefix.file_name() {
            Some(stem) => format!("{}_{t:04}.png", stem.to_string_lossy()),
            None => format!("map_{t:04}.png"),
        };
        let path = prefix.with_file_name(name);
        img.save(&path)
            .map_err(|e| Error::Data(format!("write map image {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InteractionPair, PoseSequence};
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pair(rng: &mut StdRng, t_len: usize, d: usize) -> InteractionPair {
        let mut mk = |off: f32| PoseSequence {
            frames: Array3::from_shape_fn((t_len, d, 3), |_| off + rng.random_range(-2.0f32..2.0)),
            fps: 30.0,
        };
        let x = mk(-1.0);
        let y = mk(1.0);
        InteractionPair::new(x, y, "t").unwrap()
    }

    fn pair_at(points_x: &[[f32; 3]], points_y: &[[f32; 3]], t_len: usize) -> InteractionPair {
        let d = points_x.len();
        let fx = Array3::from_shape_fn((t_len, d, 3), |(_, j, k)| points_x[j][k]);
        let fy = Array3::from_shape_fn((t_len, d, 3), |(_, j, k)| points_y[j][k]);
        InteractionPair::new(
            PoseSequence { frames: fx, fps: 30.0 },
            PoseSequence { frames: fy, fps: 30.0 },
            "t",
        )
        .unwrap()
    }

    #[test]
    fn three_four_five_triangle() {
        let pair = pair_at(&[[0.0, 0.0, 0.0]], &[[3.0, 4.0, 0.0]], 2);
        let maps = distance_maps(&pair);
        assert_eq!(maps.len(), 2);
        assert!((maps.maps[0][[0, 0]] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_joints_map_to_zero() {
        let pair = pair_at(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]], 2);
        let maps = distance_maps(&pair);
        assert_eq!(maps.maps[0][[0, 0]], 0.0);
    }

    fn swapped(pair: &InteractionPair) -> InteractionPair {
        InteractionPair {
            person_x: pair.person_y.clone(),
            person_y: pair.person_x.clone(),
            category: pair.category.clone(),
            split: pair.split,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn entries_are_non_positive(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let maps = distance_maps(&random_pair(&mut rng, 5, 4));
            for m in &maps.maps {
                for v in m.iter() {
                    prop_assert!(*v <= 0.0);
                }
            }
        }

        #[test]
        fn swapping_persons_transposes_every_map(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let pair = random_pair(&mut rng, 4, 5);
            let a = distance_maps(&pair);
            let b = distance_maps(&swapped(&pair));
            for (ma, mb) in a.maps.iter().zip(&b.maps) {
                // Exact: the same f64 subtraction runs with operands swapped,
                // and squaring kills the sign.
                prop_assert_eq!(ma, &mb.t().to_owned());
            }
        }

        #[test]
        fn rigid_translation_leaves_maps_unchanged(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let pair = random_pair(&mut rng, 4, 4);
            let shift = [
                rng.random_range(-3.0f32..3.0),
                rng.random_range(-3.0f32..3.0),
                rng.random_range(-3.0f32..3.0),
            ];
            let mut moved = pair.clone();
            for frames in [&mut moved.person_x.frames, &mut moved.person_y.frames] {
                for t in 0..frames.shape()[0] {
                    for j in 0..frames.shape()[1] {
                        for k in 0..3 {
                            frames[[t, j, k]] += shift[k];
                        }
                    }
                }
            }
            let a = distance_maps(&pair);
            let b = distance_maps(&moved);
            for (ma, mb) in a.maps.iter().zip(&b.maps) {
                for (x, y) in ma.iter().zip(mb.iter()) {
                    prop_assert!((x - y).abs() < 1e-6, "translation drift {}", (x - y).abs());
                }
            }
        }

        #[test]
        fn scaling_coordinates_scales_entries(seed in 0u64..1000, s in 0.1f32..5.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let pair = random_pair(&mut rng, 4, 4);
            let mut scaled = pair.clone();
            for frames in [&mut scaled.person_x.frames, &mut scaled.person_y.frames] {
                frames.mapv_inplace(|v| v * s);
            }
            let a = distance_maps(&pair);
            let b = distance_maps(&scaled);
            for (ma, mb) in a.maps.iter().zip(&b.maps) {
                for (x, y) in ma.iter().zip(mb.iter()) {
                    let expected = x * s as f64;
                    let denom = expected.abs().max(1e-9);
                    prop_assert!(
                        ((y - expected) / denom).abs() < 1e-6,
                        "scale drift {} vs {}", y, expected
                    );
                }
            }
        }
    }

    #[test]
    fn entries_grow_toward_zero_as_joints_approach() {
        // One joint pair closing in over time: entries must increase.
        let t_len = 6;
        let fx = Array3::from_shape_fn((t_len, 1, 3), |_| 0.0f32);
        let fy = Array3::from_shape_fn((t_len, 1, 3), |(t, _, k)| {
            if k == 0 { 3.0 - t as f32 * 0.5 } else { 0.0 }
        });
        let pair = InteractionPair::new(
            PoseSequence { frames: fx, fps: 30.0 },
            PoseSequence { frames: fy, fps: 30.0 },
            "t",
        )
        .unwrap();
        let maps = distance_maps(&pair);
        for t in 1..t_len {
            assert!(maps.maps[t][[0, 0]] > maps.maps[t - 1][[0, 0]]);
        }
    }

    #[test]
    fn displacement_statistic_cases() {
        // Mutually static: zero.
        let static_pair = pair_at(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[2.0, 0.0, 0.0], [3.0, 0.0, 0.0]], 5);
        assert_eq!(displacement_statistic(&[static_pair]).unwrap(), 0.0);

        // One pair moving from 1 m to 4 m apart, everything else constant.
        let t_len = 4;
        let fx = Array3::from_shape_fn((t_len, 1, 3), |_| 0.0f32);
        let fy = Array3::from_shape_fn((t_len, 1, 3), |(t, _, k)| {
            if k == 0 { 1.0 + t as f32 } else { 0.0 }
        });
        let moving = InteractionPair::new(
            PoseSequence { frames: fx, fps: 30.0 },
            PoseSequence { frames: fy, fps: 30.0 },
            "t",
        )
        .unwrap();
        let v = displacement_statistic(&[moving]).unwrap();
        assert!((v - 3.0).abs() < 1e-6, "expected 3.0, got {v}");

        assert!(displacement_statistic(&[]).is_err());
    }

    #[test]
    fn strike_displacement_exceeds_idle() {
        let strike = crate::data::synth_generate(crate::data::Scenario::Strike, 50, 5, 16, 5, 30.0).unwrap();
        let idle = crate::data::synth_generate(crate::data::Scenario::Idle, 50, 5, 16, 5, 30.0).unwrap();
        let ds = displacement_statistic(&strike.samples).unwrap();
        let di = displacement_statistic(&idle.samples).unwrap();
        assert!(ds > di, "strike dsp {ds} should exceed idle dsp {di}");
    }

    #[test]
    fn png_export_writes_one_image_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let pair = random_pair(&mut rng, 3, 4);
        let maps = distance_maps(&pair);
        let files = export_map_strip(&maps, dir.path().join("strip")).unwrap();
        assert_eq!(files.len(), 3);
        for f in &files {
            let img = image::open(f).unwrap().to_luma8();
            assert_eq!(img.dimensions(), (4, 4));
        }
        // The most negative entry maps to white somewhere in the strip.
        let any_white = files.iter().any(|f| {
            image::open(f).unwrap().to_luma8().pixels().any(|p| p.0[0] == 255)
        });
        assert!(any_white);
    }
}
