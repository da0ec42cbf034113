//! 7 Scenes style ingestion and input preprocessing.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/<scene>/TrainSplit.txt      one "sequenceN" per line
//! <root>/<scene>/TestSplit.txt
//! <root>/<scene>/seq-NN/frame-XXXXXX.color.png   8-bit RGB
//! <root>/<scene>/seq-NN/frame-XXXXXX.depth.png   16-bit gray, millimetres
//! <root>/<scene>/seq-NN/frame-XXXXXX.pose.txt    4x4 camera-to-world, row-major
//! ```
//!
//! Depth values 0 and 65535 mean "no reading" and are marked invalid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{depth_to_pointcloud, CameraIntrinsics, DepthMap, PointCloud, RgbImage};
use crate::models::IMAGE_SIZE;
use crate::pointcloud::random_sample;
use crate::pose::Pose;

pub const NATIVE_WIDTH: usize = 640;
pub const NATIVE_HEIGHT: usize = 480;
/// Short side after resizing.
pub const RESIZE_SHORT: usize = 256;
/// Per-channel normalisation constants of the usual large image corpus.
pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

const DEPTH_INVALID_HIGH: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Camera-to-world.
    pub pose: Pose,
    pub scene: String,
    pub sequence: String,
    pub index: usize,
}

/// File triple of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePaths {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub pose: PathBuf,
    pub index: usize,
}

impl FramePaths {
    pub fn in_dir(dir: &Path, index: usize) -> Self {
        let stem = format!("frame-{index:06}");
        Self {
            rgb: dir.join(format!("{stem}.color.png")),
            depth: dir.join(format!("{stem}.depth.png")),
            pose: dir.join(format!("{stem}.pose.txt")),
            index,
        }
    }
}

/// Depth from a 16-bit grayscale PNG in millimetres, plus the raw values.
fn open_png(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::ingestion(path, format!("cannot decode PNG: {e}")))
}

pub fn load_depth_png(path: &Path) -> Result<(DepthMap, Vec<u16>)> {
    let img = open_png(path)?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::ingestion(
            path,
            format!("depth must be 16-bit grayscale, found {:?}", img.color()),
        ));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid: Vec<bool> = raw.iter().map(|&r| r != 0 && r != DEPTH_INVALID_HIGH).collect();
    let depth = raw
        .iter()
        .zip(&valid)
        .map(|(&r, &ok)| if ok { f64::from(r) / 1000.0 } else { 0.0 })
        .collect();
    Ok((DepthMap::new(w, h, depth, valid)?, raw))
}

/// Millimetre encoding of a depth map; invalid pixels become 0.
pub fn depth_to_millimetres(depth: &DepthMap) -> Result<Vec<u16>> {
    depth
        .depth()
        .iter()
        .zip(depth.valid())
        .map(|(d, ok)| {
            if !ok {
                return Ok(0);
            }
            let mm = (d * 1000.0).round();
            if mm < 1.0 || mm >= f64::from(DEPTH_INVALID_HIGH) {
                return Err(Error::invalid(format!("depth {d} m not encodable in millimetres")));
            }
            Ok(mm as u16)
        })
        .collect()
}

pub fn save_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let mm = depth_to_millimetres(depth)?;
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, mm)
        .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::ingestion(path, format!("cannot write PNG: {e}")))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = open_png(path)?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(b) => b,
        image::DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::ingestion(
                path,
                format!("colour image must be 8-bit RGB, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    RgbImage::new(w, h, rgb.into_raw())
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::ingestion(path, format!("cannot write PNG: {e}")))
}

/// Parses 16 whitespace-separated reals (row-major 4x4, camera-to-world).
pub fn parse_pose(text: &str, origin: &Path) -> Result<Pose> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|w| w.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::ingestion(origin, format!("bad number in pose: {e}")))?;
    if vals.len() != 16 {
        return Err(Error::ingestion(
            origin,
            format!("pose needs 16 values, found {}", vals.len()),
        ));
    }
    let mut m = [[0.0; 4]; 4];
    for (i, v) in vals.into_iter().enumerate() {
        m[i / 4][i % 4] = v;
    }
    Pose::from_matrix(&m).map_err(|e| Error::ingestion(origin, e.to_string()))
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text, path)
}

/// Shortest round-trip decimal text of the pose matrix.
pub fn format_pose(pose: &Pose) -> String {
    let mut out = String::new();
    for row in pose.to_matrix() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join("\t")).expect("writing to a String");
    }
    out
}

pub fn save_pose(path: &Path, pose: &Pose) -> Result<()> {
    std::fs::write(path, format_pose(pose)).map_err(|e| Error::io(path, e))
}

/// Loads one frame. Scene, sequence and index come from the path
/// `<scene>/<sequence>/frame-XXXXXX.*`.
pub fn load_frame(rgb_path: &Path, depth_path: &Path, pose_path: &Path, k: &CameraIntrinsics) -> Result<Frame> {
    let rgb = load_rgb_png(rgb_path)?;
    let (depth, _) = load_depth_png(depth_path)?;
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::ingestion(
            depth_path,
            format!(
                "depth is {}x{}, intrinsics expect {}x{}",
                depth.width(),
                depth.height(),
                k.width,
                k.height
            ),
        ));
    }
    if rgb.width != depth.width() || rgb.height != depth.height() {
        return Err(Error::ingestion(
            rgb_path,
            format!(
                "colour is {}x{}, depth is {}x{}",
                rgb.width,
                rgb.height,
                depth.width(),
                depth.height()
            ),
        ));
    }
    let pose = load_pose(pose_path)?;
    let name = |p: Option<&Path>| {
        p.and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let seq_dir = depth_path.parent();
    let index = depth_path
        .file_name()
        .and_then(|f| f.to_str())
        .and_then(|f| f.strip_prefix("frame-"))
        .and_then(|f| f.split('.').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    Ok(Frame {
        rgb,
        depth,
        pose,
        scene: name(seq_dir.and_then(Path::parent)),
        sequence: name(seq_dir),
        index,
    })
}

pub fn load_frame_paths(paths: &FramePaths, k: &CameraIntrinsics) -> Result<Frame> {
    load_frame(&paths.rgb, &paths.depth, &paths.pose, k)
}

/// Writes the three files of `frame` into `dir` under its own index.
pub fn write_frame(frame: &Frame, dir: &Path) -> Result<FramePaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = FramePaths::in_dir(dir, frame.index);
    save_rgb_png(&paths.rgb, &frame.rgb)?;
    save_depth_png(&paths.depth, &frame.depth)?;
    save_pose(&paths.pose, &frame.pose)?;
    Ok(paths)
}

/// Frames of one sequence directory, ordered by index.
pub fn list_frames(seq_dir: &Path) -> Result<Vec<FramePaths>> {
    let entries = std::fs::read_dir(seq_dir).map_err(|e| Error::io(seq_dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(seq_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name
            .strip_prefix("frame-")
            .and_then(|n| n.strip_suffix(".pose.txt"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            out.push(FramePaths::in_dir(seq_dir, idx));
        }
    }
    out.sort_by_key(|p| p.index);
    Ok(out)
}

/// Train and test frames of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSplit {
    pub scene: String,
    pub train: Vec<FramePaths>,
    pub test: Vec<FramePaths>,
}

impl SceneSplit {
    /// Checks the split is disjoint and both halves are populated.
    pub fn validate_usable(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::degenerate(format!(
                "scene {} has {} train and {} test frames",
                self.scene,
                self.train.len(),
                self.test.len()
            )));
        }
        if self.train.iter().any(|a| self.test.iter().any(|b| a.pose == b.pose)) {
            return Err(Error::invalid(format!("scene {} split is not disjoint", self.scene)));
        }
        Ok(())
    }
}

/// `sequence1` -> `seq-01`; `seq-03` passes through.
pub fn sequence_dir_name(entry: &str) -> Option<String> {
    let entry = entry.trim();
    if entry.starts_with("seq-") {
        return Some(entry.to_string());
    }
    let n: usize = entry.strip_prefix("sequence")?.parse().ok()?;
    Some(format!("seq-{n:02}"))
}

fn read_split_file(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| sequence_dir_name(l).ok_or_else(|| Error::ingestion(path, format!("bad sequence entry {l:?}"))))
        .collect()
}

pub fn load_split(root: &Path, scene: &str) -> Result<SceneSplit> {
    let scene_dir = root.join(scene);
    if !scene_dir.is_dir() {
        return Err(Error::ingestion(&scene_dir, "scene directory not found"));
    }
    let gather = |file: &str| -> Result<Vec<FramePaths>> {
        let mut out = Vec::new();
        for seq in read_split_file(&scene_dir.join(file))? {
            out.extend(list_frames(&scene_dir.join(seq))?);
        }
        Ok(out)
    };
    Ok(SceneSplit {
        scene: scene.to_string(),
        train: gather("TrainSplit.txt")?,
        test: gather("TestSplit.txt")?,
    })
}

/// Scene directories under `root` that carry a split file, sorted.
pub fn list_scenes(root: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if p.join("TrainSplit.txt").exists() || p.join("TestSplit.txt").exists() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `train` to `seq-01` and `test` (if any) to `seq-02` with matching
/// split files.
pub fn write_scene(root: &Path, scene: &str, train: &[Frame], test: &[Frame]) -> Result<()> {
    let scene_dir = root.join(scene);
    std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    for f in train {
        write_frame(f, &scene_dir.join("seq-01"))?;
    }
    for f in test {
        write_frame(f, &scene_dir.join("seq-02"))?;
    }
    let write = |name: &str, body: &str| {
        let p = scene_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("TrainSplit.txt", "sequence1\n")?;
    write("TestSplit.txt", if test.is_empty() { "" } else { "sequence2\n" })?;
    Ok(())
}

/// Resized width for a 640x480 frame whose short side becomes 256.
pub fn resized_dims(width: usize, height: usize) -> (usize, usize) {
    if width >= height {
        (width * RESIZE_SHORT / height, RESIZE_SHORT)
    } else {
        (RESIZE_SHORT, height * RESIZE_SHORT / width)
    }
}

/// Crop origin `(x, y)` of a `IMAGE_SIZE` square inside a `w x h` image.
pub fn crop_offsets(w: usize, h: usize, train_mode: bool, seed: u64) -> (usize, usize) {
    if train_mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            rng.random_range(0..=w - IMAGE_SIZE),
            rng.random_range(0..=h - IMAGE_SIZE),
        )
    } else {
        ((w - IMAGE_SIZE) / 2, (h - IMAGE_SIZE) / 2)
    }
}

/// Bilinear resize with half-pixel centres; returns planar `[3, h, w]`
/// values in `[0, 255]`.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let mut out = vec![0.0; 3 * out_w * out_h];
    let src = |x: usize, y: usize, c: usize| f64::from(img.data[(y * img.width + x) * 3 + c]);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let top = src(x0, y0, c) * (1.0 - wx) + src(x1, y0, c) * wx;
                let bottom = src(x0, y1, c) * (1.0 - wx) + src(x1, y1, c) * wx;
                out[(c * out_h + y) * out_w + x] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    out
}

/// Resize (short side 256), crop 224x224 (seeded random in training,
/// centred otherwise), scale to [0, 1] and normalise per channel.
pub fn preprocess_image(rgb: &RgbImage, train_mode: bool, seed: u64) -> Result<Tensor> {
    if rgb.width != NATIVE_WIDTH || rgb.height != NATIVE_HEIGHT {
        return Err(Error::invalid(format!(
            "expected a {NATIVE_WIDTH}x{NATIVE_HEIGHT} image, got {}x{}",
            rgb.width, rgb.height
        )));
    }
    let (w, h) = resized_dims(rgb.width, rgb.height);
    let resized = resize_bilinear(rgb, w, h);
    let (ox, oy) = crop_offsets(w, h, train_mode, seed);
    let s = IMAGE_SIZE;
    let mut out = Vec::with_capacity(3 * s * s);
    for c in 0..3 {
        for y in 0..s {
            let row = (c * h + oy + y) * w + ox;
            out.extend(
                resized[row..row + s]
                    .iter()
                    .map(|v| (v / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]),
            );
        }
    }
    Tensor::new(vec![3, s, s], out)
}

/// Lifts the frame's depth and draws exactly `n` points.
pub fn frame_to_pointset(frame: &Frame, k: &CameraIntrinsics, n: usize, seed: u64) -> Result<PointCloud> {
    let cloud = depth_to_pointcloud(&frame.depth, k)?;
    if cloud.is_empty() {
        return Err(Error::degenerate(format!(
            "frame {}/{}/{} has no valid depth",
            frame.scene, frame.sequence, frame.index
        )));
    }
    random_sample(&cloud, n, seed)
}

/// Reads a precomputed image feature: whitespace-separated reals.
pub fn load_feature_file(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|w| w.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::ingestion(path, format!("bad feature value: {e}")))?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::ingestion(path, "feature file has non-finite values"));
    }
    Ok(Tensor::vector(vals))
}
