//! Pseudo-label sidecar directories.
//!
//! ```text
//! <labels>/<scene_id>/ev-2.png | ev-2.hdr
//! <labels>/<scene_id>/ev0.png  | ev0.hdr
//! <labels>/<scene_id>/ev+2.png | ev+2.hdr
//! ```
//!
//! Each file is the externally predicted HDR for that exposure. A `.png`
//! label is read like an LDR (divided by 255) and is taken as already
//! normalized; an `.hdr` label is normalized by its own 99.9th percentile.
//! Labels pass through the same crop and downscale as the scene. When both
//! files exist the `.hdr` wins.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use metahdr_core::data::{normalize_hdr, Ev, Preprocess, SceneRecord};
use metahdr_core::image::Image;
use metahdr_core::meta::{LabelError, LabelProvider, LabelScheme};

use crate::io::{read_hdr, read_png};
use crate::Error;

/// Sidecar label files loaded up front; failures are kept per exposure and
/// reported when the label is requested.
#[derive(Debug, Clone, Default)]
pub struct FileLabels {
    entries: BTreeMap<(String, Ev), Result<Image, String>>,
}

fn label_paths(dir: &Path, scene_id: &str, ev: Ev) -> [PathBuf; 2] {
    let base = dir.join(scene_id);
    [
        base.join(format!("{}.hdr", ev.file_stem())),
        base.join(format!("{}.png", ev.file_stem())),
    ]
}

fn load_one(path: &Path, prep: &Preprocess) -> Result<Image, Error> {
    if path.extension().is_some_and(|e| e == "hdr") {
        let hdr = prep.apply(&read_hdr(path)?)?;
        Ok(normalize_hdr(&hdr)?.0)
    } else {
        Ok(prep.apply(&read_png(path)?)?)
    }
}

impl FileLabels {
    pub fn load(dir: &Path, scene_ids: &[String], prep: &Preprocess) -> FileLabels {
        let mut entries = BTreeMap::new();
        for id in scene_ids {
            for ev in Ev::ALL {
                let paths = label_paths(dir, id, ev);
                let found = paths.iter().find(|p| p.is_file());
                let entry = match found {
                    Some(p) => load_one(p, prep).map_err(|e| e.to_string()),
                    None => Err(format!("file not found: {} (or .png)", paths[0].display())),
                };
                entries.insert((id.clone(), ev), entry);
            }
        }
        FileLabels { entries }
    }
}

impl LabelProvider for FileLabels {
    fn scheme(&self) -> LabelScheme {
        LabelScheme::FilePseudo
    }

    fn label(&self, scene: &SceneRecord, ev: Ev) -> Result<Image, LabelError> {
        let missing = |detail: String| LabelError::Missing {
            scene: scene.scene_id.clone(),
            ev: ev.label(),
            detail,
        };
        match self.entries.get(&(scene.scene_id.clone(), ev)) {
            None => Err(missing("scene was not loaded from the label directory".into())),
            Some(Err(e)) => Err(missing(e.clone())),
            Some(Ok(im)) if im.dims() != scene.target().dims() => Err(LabelError::Invalid {
                scene: scene.scene_id.clone(),
                ev: ev.label(),
                detail: format!("label is {:?}, scene is {:?}", im.dims(), scene.target().dims()),
            }),
            Some(Ok(im)) => Ok(im.clone()),
        }
    }
}
