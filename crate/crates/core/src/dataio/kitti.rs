//! KITTI label directories.
//!
//! One text file per frame; each line holds `type truncated occluded alpha
//! left top right bottom h w l x y z rotation_y [score]` in the rectified
//! camera frame (x right, y down, z forward, location at the bottom face).
//! Boxes are converted to the canonical frame with
//! `x = z_cam`, `y = -x_cam`, `z = -y_cam + h/2`, `yaw = -rotation_y - π/2`.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use log::warn;

use super::{DataError, Dataset, FramePlane};
use crate::geometry::{wrap_angle, Box3D, GeometryError};
use crate::matching::{Detection, DifficultyAttrs, GroundTruth};

const KNOWN_TYPES: [&str; 8] = [
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
];

/// Box parameters as written in a KITTI label line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiCameraBox {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
}

pub fn kitti_camera_to_canonical(c: &KittiCameraBox) -> Result<Box3D, GeometryError> {
    Box3D::from_params(
        c.z,
        -c.x,
        -c.y + c.h / 2.0,
        c.l,
        c.w,
        c.h,
        wrap_angle(-c.rotation_y - FRAC_PI_2),
    )
}

pub fn canonical_to_kitti_camera(b: &Box3D) -> KittiCameraBox {
    let bev = b.bev();
    KittiCameraBox {
        h: b.height(),
        w: bev.width(),
        l: bev.length(),
        x: -bev.cy(),
        y: -(b.cz() - b.height() / 2.0),
        z: bev.cx(),
        rotation_y: wrap_angle(-bev.yaw() - FRAC_PI_2),
    }
}

struct KittiLine {
    class: String,
    truncation: f64,
    occlusion: i64,
    bbox_height: f64,
    cam: KittiCameraBox,
    score: Option<f64>,
}

fn parse_line(line: &str, file: &str, lineno: usize) -> Result<Option<KittiLine>, DataError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let err = |message: String| DataError::Parse {
        file: file.to_string(),
        line: lineno,
        message,
    };
    if fields.len() != 15 && fields.len() != 16 {
        return Err(err(format!("expected 15 or 16 fields, found {}", fields.len())));
    }
    let class = fields[0];
    if class == "DontCare" {
        return Ok(None);
    }
    if !KNOWN_TYPES.contains(&class) {
        warn!("{file}:{lineno}: skipping unknown object type `{class}`");
        return Ok(None);
    }
    let num = |i: usize| -> Result<f64, DataError> {
        fields[i]
            .parse::<f64>()
            .map_err(|e| err(format!("field {} (`{}`): {e}", i + 1, fields[i])))
    };
    let occlusion = fields[2]
        .parse::<f64>()
        .map_err(|e| err(format!("occluded (`{}`): {e}", fields[2])))?;
    Ok(Some(KittiLine {
        class: class.to_string(),
        truncation: num(1)?,
        occlusion: occlusion as i64,
        bbox_height: num(7)? - num(5)?,
        cam: KittiCameraBox {
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
            x: num(11)?,
            y: num(12)?,
            z: num(13)?,
            rotation_y: num(14)?,
        },
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    }))
}

fn label_files(dir: &Path) -> Result<Vec<(String, std::path::PathBuf)>, DataError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.push((stem.to_string(), path.clone()));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn read_dir_into(ds: &mut Dataset, dir: &Path, predictions: bool) -> Result<(), DataError> {
    for (frame, path) in label_files(dir)? {
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let file = path.display().to_string();
        // ensure frames with no objects still exist
        ds.frames.entry(frame.clone()).or_default();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let Some(obj) = parse_line(line, &file, lineno)? else {
                continue;
            };
            let invalid = |message: String| DataError::Validation {
                file: file.clone(),
                line: lineno,
                message,
            };
            let bbox = kitti_camera_to_canonical(&obj.cam).map_err(|e| invalid(e.to_string()))?;
            match (predictions, obj.score) {
                (true, Some(score)) => {
                    let d =
                        Detection::new(frame.clone(), obj.class, bbox, score).map_err(|e| invalid(e.to_string()))?;
                    ds.push_detection(d);
                }
                (false, None) => {
                    if !(0..=3).contains(&obj.occlusion) {
                        return Err(invalid(format!("occlusion must be 0..=3, got {}", obj.occlusion)));
                    }
                    let attrs = DifficultyAttrs {
                        bbox_height_px: obj.bbox_height,
                        occlusion: obj.occlusion as u8,
                        truncation: obj.truncation,
                    };
                    ds.push_ground_truth(GroundTruth::new(frame.clone(), obj.class, bbox).with_attrs(attrs));
                }
                (true, None) => return Err(invalid("prediction line lacks a score (15 fields)".into())),
                (false, Some(_)) => return Err(invalid("ground-truth line carries a score (16 fields)".into())),
            }
        }
    }
    Ok(())
}

/// Reads ground-truth labels and, optionally, predictions from per-frame
/// KITTI text files. Frames are keyed by file stem.
pub fn read_kitti_labels(gt_dir: &Path, pred_dir: Option<&Path>) -> Result<Dataset, DataError> {
    let mut ds = Dataset {
        frame_plane: FramePlane::CameraXz,
        ..Dataset::default()
    };
    read_dir_into(&mut ds, gt_dir, false)?;
    if let Some(p) = pred_dir {
        read_dir_into(&mut ds, p, true)?;
    }
    Ok(ds)
}
