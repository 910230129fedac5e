//! Posed multi-view scenes on disk.
//!
//! Layout of a scene directory:
//!
//! ```text
//! cameras.json   cameras, optional bbox and background color
//! split.json     {"train": [...], "test": [...]}
//! images/        8-bit RGB PNGs referenced from cameras.json
//! points.csv     optional point cloud (x,y,z,r,g,b)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{Aabb, Camera, Extrinsics, Intrinsics, Vec3};
use crate::error::{Error, Result};
use crate::scene::image::Image;
use crate::scene::pointcloud::load_point_cloud;

pub const DEFAULT_BACKGROUND: [f64; 3] = [0.7, 0.7, 0.7];

/// One camera as stored in `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 3x4 `[R | T]`.
    pub world_to_camera: [f64; 12],
}

impl CameraEntry {
    pub fn from_camera(cam: &Camera, image: Option<String>) -> Self {
        let k = &cam.intrinsics;
        Self {
            image,
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            world_to_camera: cam.extrinsics.to_row_major(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let e = Extrinsics::from_row_major(&self.world_to_camera)?;
        Ok(Camera::new(k, e))
    }

    /// Reads a single-camera pose file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BboxEntry {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<&Aabb> for BboxEntry {
    fn from(b: &Aabb) -> Self {
        Self {
            min: b.min.into(),
            max: b.max.into(),
        }
    }
}

impl BboxEntry {
    pub fn to_aabb(&self) -> Result<Aabb> {
        Aabb::new(Vec3::from(self.min), Vec3::from(self.max))
    }
}

#[derive(Serialize, Deserialize)]
struct CamerasObject {
    cameras: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BboxEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
}

/// `cameras.json` is either a bare list of cameras or an object that also
/// carries the scene bounds.
#[derive(Deserialize)]
#[serde(untagged)]
enum CamerasFile {
    List(Vec<CameraEntry>),
    Object(CamerasObject),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Posed views with a train/test split and world bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub bbox: Aabb,
    pub background: [f64; 3],
}

impl SceneDataset {
    pub fn new(
        cameras: Vec<Camera>,
        images: Vec<Image>,
        train_ids: Vec<usize>,
        test_ids: Vec<usize>,
        bbox: Aabb,
        background: [f64; 3],
    ) -> Result<Self> {
        let d = Self {
            cameras,
            images,
            train_ids,
            test_ids,
            bbox,
            background,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() {
            return Err(Error::Scene(format!(
                "{} cameras but {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        for (i, (cam, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if cam.width() != img.width() || cam.height() != img.height() {
                return Err(Error::Scene(format!(
                    "view {i}: image is {}x{} but camera expects {}x{}",
                    img.width(),
                    img.height(),
                    cam.width(),
                    cam.height()
                )));
            }
        }
        let n = self.cameras.len();
        let mut seen = vec![0u8; n];
        for (ids, tag) in [(&self.train_ids, 1u8), (&self.test_ids, 2u8)] {
            for &i in ids {
                if i >= n {
                    return Err(Error::Scene(format!("split index {i} out of range for {n} views")));
                }
                if seen[i] != 0 {
                    return Err(Error::Scene(format!("view {i} listed twice in the split")));
                }
                seen[i] = tag;
            }
        }
        if self.train_ids.len() < 2 {
            return Err(Error::Scene("at least two training views are required".into()));
        }
        if !(0..3).all(|k| self.bbox.min[k] < self.bbox.max[k]) {
            return Err(Error::Scene("bbox min must be below max on every axis".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Scene("background color must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train_ids.iter().map(|&i| self.cameras[i]).collect()
    }

    pub fn train_images(&self) -> Vec<Image> {
        self.train_ids.iter().map(|&i| self.images[i].clone()).collect()
    }
}

pub fn image_file_name(view: usize) -> String {
    format!("images/view_{view:03}.png")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates a scene directory. Without a bbox in `cameras.json`
/// the bounds come from `points.csv`, padded by 10% of its extent.
pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    let cam_path = dir.join("cameras.json");
    let (entries, bbox, background) = match read_json::<CamerasFile>(&cam_path)? {
        CamerasFile::List(c) => (c, None, None),
        CamerasFile::Object(o) => (o.cameras, o.bbox, o.background),
    };
    let split_path = dir.join("split.json");
    let split: Split = read_json(&split_path)?;

    let mut cameras = Vec::with_capacity(entries.len());
    let mut images = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let cam = e
            .to_camera()
            .map_err(|err| Error::format(&cam_path, format!("camera {i}: {err}")))?;
        let rel = e
            .image
            .as_deref()
            .ok_or_else(|| Error::format(&cam_path, format!("camera {i}: missing `image`")))?;
        images.push(Image::load_png(&dir.join(rel))?);
        cameras.push(cam);
    }

    let bbox = match bbox {
        Some(b) => b
            .to_aabb()
            .map_err(|err| Error::format(&cam_path, format!("bbox: {err}")))?,
        None => {
            let cloud = load_point_cloud(&dir.join("points.csv"))?;
            cloud.padded_bounds(0.1)?
        }
    };
    SceneDataset::new(
        cameras,
        images,
        split.train,
        split.test,
        bbox,
        background.unwrap_or(DEFAULT_BACKGROUND),
    )
}

/// Writes `cameras.json` (object form), `split.json` and `images/`.
pub fn save_scene(dir: &Path, scene: &SceneDataset) -> Result<()> {
    scene.validate()?;
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut entries = Vec::with_capacity(scene.cameras.len());
    for (i, (cam, img)) in scene.cameras.iter().zip(&scene.images).enumerate() {
        let rel = image_file_name(i);
        img.save_png(&dir.join(&rel))?;
        entries.push(CameraEntry::from_camera(cam, Some(rel)));
    }
    let cameras = CamerasObject {
        cameras: entries,
        bbox: Some(BboxEntry::from(&scene.bbox)),
        background: Some(scene.background),
    };
    write_json(&dir.join("cameras.json"), &cameras)?;
    let split = Split {
        train: scene.train_ids.clone(),
        test: scene.test_ids.clone(),
    };
    write_json(&dir.join("split.json"), &split)
}
