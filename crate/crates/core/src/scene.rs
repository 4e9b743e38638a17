//! Image collections with their train/test split and optional reference
//! cameras.
//!
//! On disk a scene is a directory holding `images/*.png` and, optionally,
//! `poses.jsonl` with one object per image:
//! `{"name": "000.png", "pose": [12 reals, row-major [R|t]], "focal": [fx, fy]}`.
//! Poses are camera-to-world with the camera looking along −z.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::image::Image;

/// Every `TEST_STRIDE`-th image (starting at index 0) is held out.
pub const TEST_STRIDE: usize = 8;

/// A reference camera, used for evaluation only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCamera {
    pub pose: Pose,
    pub focal: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    name: String,
    pose: Vec<f64>,
    focal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub names: Vec<String>,
    pub images: Vec<Image>,
    pub reference: Option<Vec<ReferenceCamera>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, test)` indices for `count` images.
pub fn split_indices(count: usize) -> (Vec<usize>, Vec<usize>) {
    (0..count).partition(|i| i % TEST_STRIDE != 0)
}

impl Scene {
    pub fn new(
        names: Vec<String>,
        images: Vec<Image>,
        reference: Option<Vec<ReferenceCamera>>,
    ) -> Result<Self> {
        let invalid = |reason: String| Error::Scene {
            path: PathBuf::new(),
            reason,
        };
        if images.is_empty() {
            return Err(invalid("no images".into()));
        }
        if names.len() != images.len() {
            return Err(invalid(format!("{} names for {} images", names.len(), images.len())));
        }
        let (w, h) = (images[0].width(), images[0].height());
        if let Some(i) = images.iter().position(|im| (im.width(), im.height()) != (w, h)) {
            return Err(invalid(format!(
                "{} is {}×{}, expected {w}×{h}",
                names[i],
                images[i].width(),
                images[i].height()
            )));
        }
        if let Some(r) = &reference {
            if r.len() != images.len() {
                return Err(invalid(format!("{} poses for {} images", r.len(), images.len())));
            }
        }
        let (train, test) = split_indices(images.len());
        Ok(Self {
            names,
            images,
            reference,
            train,
            test,
        })
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn train_images(&self) -> Vec<Image> {
        self.train.iter().map(|&i| self.images[i].clone()).collect()
    }

    /// Box-filter downsampling of every image; reference focals scale along.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let images = self
            .images
            .iter()
            .map(|im| im.downsample(factor))
            .collect::<Result<Vec<_>>>()?;
        let reference = self.reference.as_ref().map(|refs| {
            refs.iter()
                .map(|r| ReferenceCamera {
                    pose: r.pose,
                    focal: (r.focal.0 / factor as f64, r.focal.1 / factor as f64),
                })
                .collect()
        });
        Scene::new(self.names.clone(), images, reference)
    }

    /// Writes `images/*.png` and, when present, `poses.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (name, img) in self.names.iter().zip(&self.images) {
            img.write_png(&img_dir.join(name))?;
        }
        if let Some(refs) = &self.reference {
            let named: Vec<(String, ReferenceCamera)> =
                self.names.iter().cloned().zip(refs.iter().copied()).collect();
            write_poses(&dir.join("poses.jsonl"), &named)?;
        }
        Ok(())
    }
}

/// Writes one JSON object per camera in the `poses.jsonl` format.
pub fn write_poses(path: &Path, cameras: &[(String, ReferenceCamera)]) -> Result<()> {
    let mut out = Vec::new();
    for (name, cam) in cameras {
        let rec = PoseRecord {
            name: name.clone(),
            pose: cam.pose.to_rows().to_vec(),
            focal: [cam.focal.0, cam.focal.1],
        };
        serde_json::to_writer(&mut out, &rec).expect("in-memory write");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Reads a `poses.jsonl` file in file order. Blank lines are skipped.
pub fn read_poses(path: &Path) -> Result<Vec<(String, ReferenceCamera)>> {
    let err = |reason: String| Error::Scene {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(line)
            .map_err(|e| err(format!("line {}: {e}", n + 1)))?;
        let rows: [f64; 12] = rec.pose.as_slice().try_into().map_err(|_| {
            err(format!("{}: pose has {} values, expected 12", rec.name, rec.pose.len()))
        })?;
        let cam = ReferenceCamera {
            pose: Pose::from_rows(&rows),
            focal: (rec.focal[0], rec.focal[1]),
        };
        out.push((rec.name, cam));
    }
    Ok(out)
}

/// Loads `dir/images/*.png` sorted by file name, optional `poses.jsonl`, and
/// applies an integer box-filter downsample.
pub fn load_scene(dir: &Path, downsample: usize) -> Result<Scene> {
    let img_dir = dir.join("images");
    let scene_err = |reason: String| Error::Scene {
        path: dir.to_path_buf(),
        reason,
    };
    let entries = fs::read_dir(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(scene_err(format!("no PNG files in {}", img_dir.display())));
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
        .collect();
    let images = files
        .iter()
        .map(|p| Image::read_png(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = images
        .iter()
        .position(|im| (im.width(), im.height()) != (images[0].width(), images[0].height()))
    {
        return Err(scene_err(format!(
            "{} is {}×{} but {} is {}×{}",
            names[i],
            images[i].width(),
            images[i].height(),
            names[0],
            images[0].width(),
            images[0].height()
        )));
    }

    let pose_path = dir.join("poses.jsonl");
    let reference = if pose_path.exists() {
        let records = read_poses(&pose_path)?;
        if records.len() != names.len() {
            return Err(scene_err(format!(
                "poses.jsonl has {} entries for {} images",
                records.len(),
                names.len()
            )));
        }
        let mut refs = Vec::with_capacity(records.len());
        for ((rec_name, cam), name) in records.into_iter().zip(&names) {
            if &rec_name != name {
                return Err(scene_err(format!(
                    "poses.jsonl lists {rec_name} where {name} was expected"
                )));
            }
            refs.push(cam);
        }
        Some(refs)
    } else {
        None
    };
    let scene = Scene::new(names, images, reference).map_err(|e| match e {
        Error::Scene { reason, .. } => scene_err(reason),
        other => other,
    })?;
    if downsample == 0 {
        return Err(scene_err("downsample factor must be at least 1".into()));
    }
    scene.downsample(downsample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_scene(n: usize) -> Scene {
        Scene::new(
            (0..n).map(|i| format!("{i:03}.png")).collect(),
            vec![Image::new(4, 4); n],
            None,
        )
        .unwrap()
    }

    #[test]
    fn every_eighth_image_is_held_out() {
        let s = blank_scene(16);
        assert_eq!(s.test, vec![0, 8]);
        assert_eq!(s.train.len(), 14);
        let s = blank_scene(8);
        assert_eq!((s.train.len(), s.test.len()), (7, 1));
    }

    #[test]
    fn pose_count_mismatch_rejected() {
        let r = ReferenceCamera {
            pose: Pose::identity(),
            focal: (1.0, 1.0),
        };
        let err = Scene::new(vec!["a.png".into()], vec![Image::new(2, 2)], Some(vec![r, r]));
        assert!(err.is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(8, 8);
        img.set_pixel(1, 2, [1.0, 0.0, 0.2]);
        let r = ReferenceCamera {
            pose: Pose::from_rows(&[1.0, 0.0, 0.0, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -0.25]),
            focal: (8.0, 8.0),
        };
        let scene = Scene::new(
            vec!["b.png".into(), "a.png".into()],
            vec![img.clone(), Image::new(8, 8)],
            Some(vec![r, r]),
        )
        .unwrap();
        scene.save(dir.path()).unwrap();
        // poses.jsonl lists b before a, but loading sorts by file name.
        assert!(load_scene(dir.path(), 1).is_err());
        fs::remove_file(dir.path().join("poses.jsonl")).unwrap();
        let loaded = load_scene(dir.path(), 1).unwrap();
        assert_eq!(loaded.names, vec!["a.png", "b.png"]);
        assert_eq!(loaded.images[1].to_rgb8(), img.to_rgb8());
        let half = load_scene(dir.path(), 2).unwrap();
        assert_eq!(half.width(), 4);
    }

    #[test]
    fn mismatched_sizes_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        Image::new(4, 4).write_png(&dir.path().join("images/a.png")).unwrap();
        Image::new(4, 5).write_png(&dir.path().join("images/b.png")).unwrap();
        let err = load_scene(dir.path(), 1).unwrap_err().to_string();
        assert!(err.contains("b.png"), "{err}");
    }
}
