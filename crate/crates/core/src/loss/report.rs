use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::data::Ev;

/// Row types of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMode {
    /// Held-out LDR scored directly against the HDR reference.
    LdrNoRecon,
    SingleShot,
    AdaptTrueHdr,
    AdaptPseudo,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::LdrNoRecon,
        EvalMode::SingleShot,
        EvalMode::AdaptTrueHdr,
        EvalMode::AdaptPseudo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvalMode::LdrNoRecon => "ldr_no_recon",
            EvalMode::SingleShot => "single_shot",
            EvalMode::AdaptTrueHdr => "adapt_true_hdr",
            EvalMode::AdaptPseudo => "adapt_pseudo",
        }
    }

    pub fn parse(s: &str) -> Option<EvalMode> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, EvalMode::AdaptTrueHdr | EvalMode::AdaptPseudo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricItem {
    pub scene_id: String,
    pub holdout_ev: Ev,
    pub mode: EvalMode,
    pub ssim: f64,
    /// `f64::INFINITY` for an exact reconstruction.
    pub psnr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSummary {
    pub mode: EvalMode,
    pub ssim: f64,
    pub psnr_db: f64,
    pub count: usize,
}

/// Per-image scores plus scenes that could not be scored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub items: Vec<MetricItem>,
    /// `(scene_id, reason)`.
    pub skipped: Vec<(String, String)>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        String::from("inf")
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn extend(&mut self, other: MetricReport) {
        self.items.extend(other.items);
        self.skipped.extend(other.skipped);
    }

    pub fn summary(&self, mode: EvalMode) -> Option<ModeSummary> {
        let rows: Vec<&MetricItem> = self.items.iter().filter(|i| i.mode == mode).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(ModeSummary {
            mode,
            ssim: rows.iter().map(|i| i.ssim).sum::<f64>() / n,
            psnr_db: rows.iter().map(|i| i.psnr_db).sum::<f64>() / n,
            count: rows.len(),
        })
    }

    /// One summary per mode present, in table order.
    pub fn summaries(&self) -> Vec<ModeSummary> {
        EvalMode::ALL.into_iter().filter_map(|m| self.summary(m)).collect()
    }

    /// `scene_id,holdout_ev,mode,ssim,psnr_db`, one line per item.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,holdout_ev,mode,ssim,psnr_db\n");
        for i in &self.items {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i.scene_id,
                i.holdout_ev.label(),
                i.mode.label(),
                i.ssim,
                fmt_db(i.psnr_db)
            );
        }
        out
    }

    /// `mode,ssim,psnr_db,count`, one line per mode present.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("mode,ssim,psnr_db,count\n");
        for s in self.summaries() {
            let _ = writeln!(out, "{},{},{},{}", s.mode.label(), s.ssim, fmt_db(s.psnr_db), s.count);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(mode: EvalMode, ssim: f64, psnr_db: f64) -> MetricItem {
        MetricItem {
            scene_id: "s".into(),
            holdout_ev: Ev::Zero,
            mode,
            ssim,
            psnr_db,
        }
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            items: alloc::vec![
                item(EvalMode::SingleShot, 0.5, 20.0),
                item(EvalMode::SingleShot, 0.7, 22.0),
                item(EvalMode::LdrNoRecon, 1.0, f64::INFINITY),
            ],
            skipped: Vec::new(),
        };
        assert_eq!(
            r.to_csv(),
            "scene_id,holdout_ev,mode,ssim,psnr_db\ns,0,single_shot,0.5,20\ns,0,single_shot,0.7,22\ns,0,ldr_no_recon,1,inf\n"
        );
        assert_eq!(
            r.summary_csv(),
            "mode,ssim,psnr_db,count\nldr_no_recon,1,inf,1\nsingle_shot,0.6,21,2\n"
        );
    }

    #[test]
    fn labels_roundtrip() {
        for m in EvalMode::ALL {
            assert_eq!(EvalMode::parse(m.label()), Some(m));
        }
    }
}
