//! Dataset layout, image files and checkpoints.
//!
//! A dataset root holds one directory per scene:
//!
//! ```text
//! <root>/<scene_id>/ev-2.png   8-bit RGB, EV -2 capture
//! <root>/<scene_id>/ev0.png    8-bit RGB, EV 0 capture
//! <root>/<scene_id>/ev+2.png   8-bit RGB, EV +2 capture
//! <root>/<scene_id>/gt.hdr     Radiance RGBE reference
//! ```
//!
//! PNG samples are divided by 255 and used without linearization.

use std::fs;
use std::path::{Path, PathBuf};

use metahdr_core::data::{decode_rgbe, encode_rgbe, Ev, Preprocess, SceneRecord};
use metahdr_core::image::Image;
use metahdr_core::unet::ParamSet;

use crate::Error;

pub const HDR_FILE: &str = "gt.hdr";

pub fn ldr_file(ev: Ev) -> String {
    format!("{}.png", ev.file_stem())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

pub fn read_png(path: &Path) -> Result<Image, Error> {
    let png = |source| Error::Png {
        path: path.to_path_buf(),
        source,
    };
    let bytes = read_bytes(path)?;
    let rgb = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(png)?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    Ok(Image::from_fn(3, h, w, |c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    })?)
}

/// Stores `[0, 1]` values as 8-bit RGB; out-of-range values are clamped.
pub fn write_png(path: &Path, im: &Image) -> Result<(), Error> {
    if im.channels() != 3 {
        return Err(Error::Usage(format!(
            "PNG export needs 3 channels, got {}",
            im.channels()
        )));
    }
    let (h, w) = (im.height(), im.width());
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for (i, v) in im.plane(c).iter().enumerate() {
            raw[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut bytes),
        &raw,
        w as u32,
        h as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Png {
        path: path.to_path_buf(),
        source,
    })?;
    write_bytes(path, &bytes)
}

/// Display rendering of a normalized HDR image: clamp to `[0, 1]`, gamma 1/2.2.
pub fn preview(im: &Image) -> Image {
    im.map(|v| v.clamp(0.0, 1.0).powf(1.0 / 2.2))
}

pub fn write_preview(path: &Path, im: &Image) -> Result<(), Error> {
    write_png(path, &preview(im))
}

pub fn read_hdr(path: &Path) -> Result<Image, Error> {
    decode_rgbe(&read_bytes(path)?).map_err(|source| Error::Hdr {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_hdr(path: &Path, im: &Image) -> Result<(), Error> {
    let bytes = encode_rgbe(im).map_err(|source| Error::Hdr {
        path: path.to_path_buf(),
        source,
    })?;
    write_bytes(path, &bytes)
}

/// Scene directories under `root`, sorted.
pub fn list_scenes(root: &Path) -> Result<Vec<String>, Error> {
    let io = |source| Error::Io {
        path: root.to_path_buf(),
        source,
    };
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(io)? {
        let entry = entry.map_err(io)?;
        if entry.file_type().map_err(io)?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_scene(root: &Path, scene_id: &str, prep: &Preprocess) -> Result<SceneRecord, Error> {
    let dir = root.join(scene_id);
    let [a, b, c] = Ev::ALL.map(|ev| read_png(&dir.join(ldr_file(ev))));
    let ldr = [a?, b?, c?];
    let hdr = read_hdr(&dir.join(HDR_FILE))?;
    Ok(SceneRecord::new(scene_id, ldr, hdr, prep)?)
}

pub fn load_scenes(root: &Path, ids: &[String], prep: &Preprocess) -> Result<Vec<SceneRecord>, Error> {
    ids.iter().map(|id| load_scene(root, id, prep)).collect()
}

/// Writes `scene` in the dataset layout under `root`.
pub fn write_scene(root: &Path, scene: &SceneRecord) -> Result<PathBuf, Error> {
    let dir = root.join(&scene.scene_id);
    for ev in Ev::ALL {
        write_png(&dir.join(ldr_file(ev)), scene.ldr(ev))?;
    }
    write_hdr(&dir.join(HDR_FILE), &scene.hdr)?;
    Ok(dir)
}

pub fn save_params(path: &Path, params: &ParamSet<f32>) -> Result<(), Error> {
    write_bytes(path, &params.to_bytes())
}

pub fn load_params(path: &Path) -> Result<ParamSet<f32>, Error> {
    ParamSet::from_bytes(&read_bytes(path)?).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        source: e,
    })
}
