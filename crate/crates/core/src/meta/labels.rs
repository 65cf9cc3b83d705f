//! Support-set labels for adaptation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::data::{Ev, SceneRecord};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    TrueHdr,
    FilePseudo,
    Identity,
}

impl LabelScheme {
    pub fn label(self) -> &'static str {
        match self {
            LabelScheme::TrueHdr => "true_hdr",
            LabelScheme::FilePseudo => "file_pseudo",
            LabelScheme::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<LabelScheme> {
        [LabelScheme::TrueHdr, LabelScheme::FilePseudo, LabelScheme::Identity]
            .into_iter()
            .find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LabelError {
    #[error("scene {scene}: no label for exposure {ev}: {detail}")]
    Missing {
        scene: String,
        ev: &'static str,
        detail: String,
    },
    #[error("scene {scene}: unusable label for exposure {ev}: {detail}")]
    Invalid {
        scene: String,
        ev: &'static str,
        detail: String,
    },
}

pub trait LabelProvider: Sync {
    fn scheme(&self) -> LabelScheme;

    /// Normalized `[0, 1]` target used when adapting on exposure `ev`.
    fn label(&self, scene: &SceneRecord, ev: Ev) -> Result<Image, LabelError>;
}

/// The scene's own normalized HDR for every exposure.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueHdr;

impl LabelProvider for TrueHdr {
    fn scheme(&self) -> LabelScheme {
        LabelScheme::TrueHdr
    }

    fn label(&self, scene: &SceneRecord, _ev: Ev) -> Result<Image, LabelError> {
        Ok(scene.target().clone())
    }
}

/// The input LDR itself; a diagnostic lower bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityLabels;

impl LabelProvider for IdentityLabels {
    fn scheme(&self) -> LabelScheme {
        LabelScheme::Identity
    }

    fn label(&self, scene: &SceneRecord, ev: Ev) -> Result<Image, LabelError> {
        Ok(scene.ldr(ev).clone())
    }
}

/// Precomputed pseudo-labels keyed by scene id and exposure.
#[derive(Debug, Clone, Default)]
pub struct MapLabels {
    labels: BTreeMap<(String, usize), Image>,
}

impl MapLabels {
    pub fn new() -> Self {
        MapLabels::default()
    }

    pub fn insert(&mut self, scene_id: &str, ev: Ev, label: Image) {
        self.labels.insert((scene_id.into(), ev.index()), label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl LabelProvider for MapLabels {
    fn scheme(&self) -> LabelScheme {
        LabelScheme::FilePseudo
    }

    fn label(&self, scene: &SceneRecord, ev: Ev) -> Result<Image, LabelError> {
        let im = self
            .labels
            .get(&(scene.scene_id.clone(), ev.index()))
            .ok_or_else(|| LabelError::Missing {
                scene: scene.scene_id.clone(),
                ev: ev.label(),
                detail: "not provided".into(),
            })?;
        if im.dims() != scene.target().dims() {
            return Err(LabelError::Invalid {
                scene: scene.scene_id.clone(),
                ev: ev.label(),
                detail: format!("size {:?}, scene is {:?}", im.dims(), scene.target().dims()),
            });
        }
        Ok(im.clone())
    }
}
