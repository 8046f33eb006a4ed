//! Dataset normalization: trim, downscale and store clips as Y4M.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ic2vqa::media::{load_frame_dir, load_y4m, synthetic_clip, write_y4m, VideoClip};
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, DatasetSpec};
use crate::layout::Layout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub id: String,
    pub source: PathBuf,
    /// `(frames, height, width)` before and after normalization.
    pub original: (usize, usize, usize),
    pub prepared: (usize, usize, usize),
    pub frame_rate: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dir: PathBuf,
    pub max_frames: usize,
    pub scale: usize,
    pub clips: Vec<ProvenanceEntry>,
}

/// Output size for a `height × width` frame: heights above `scale` are
/// scaled down to it with the aspect ratio kept; both sides end up even.
pub fn target_size(height: usize, width: usize, scale: usize) -> (usize, usize) {
    let even = |v: usize| (v - v % 2).max(8);
    if scale == 0 || height <= scale {
        return (even(height), even(width));
    }
    let w = (width as f64 * scale as f64 / height as f64).round() as usize;
    (even(scale), even(w))
}

pub fn normalize_clip(clip: &VideoClip, max_frames: usize, scale: usize) -> Result<VideoClip> {
    let trimmed = clip.trimmed(max_frames)?;
    let (h, w) = target_size(trimmed.height(), trimmed.width(), scale);
    Ok(trimmed.resized(h, w)?)
}

fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading dataset directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() || p.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")))
        .collect();
    inputs.sort_by(|a, b| natord::compare(&a.to_string_lossy(), &b.to_string_lossy()));
    Ok(inputs)
}

fn load_input(path: &Path, pattern: &str) -> Result<VideoClip> {
    if path.is_dir() {
        Ok(load_frame_dir(path, pattern)?)
    } else {
        Ok(load_y4m(path)?)
    }
}

/// Normalizes every Y4M file and frame directory in `dir` into `out`.
/// Unreadable inputs are logged and skipped; it is an error if nothing
/// could be prepared.
pub fn prepare_dir(dir: &Path, pattern: &str, max_frames: usize, scale: usize, out: &Path) -> Result<Provenance> {
    let inputs = list_inputs(dir)?;
    if inputs.is_empty() {
        bail!("no inputs: {} holds no .y4m files or frame directories", dir.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut clips = Vec::new();
    for path in &inputs {
        let prepared = load_input(path, pattern).and_then(|clip| {
            let norm = normalize_clip(&clip, max_frames, scale)?;
            let target = out.join(format!("{}.y4m", clip.source_id));
            write_y4m(&norm, &target)?;
            Ok(ProvenanceEntry {
                id: clip.source_id.clone(),
                source: path.clone(),
                original: (clip.num_frames(), clip.height(), clip.width()),
                prepared: (norm.num_frames(), norm.height(), norm.width()),
                frame_rate: clip.frame_rate,
            })
        });
        match prepared {
            Ok(entry) => {
                log::info!(
                    "prepared {} ({}×{}×{} → {}×{}×{})",
                    entry.id,
                    entry.original.0,
                    entry.original.1,
                    entry.original.2,
                    entry.prepared.0,
                    entry.prepared.1,
                    entry.prepared.2
                );
                clips.push(entry);
            }
            Err(e) => log::warn!("skipping {}: {e:#}", path.display()),
        }
    }
    if clips.is_empty() {
        bail!("no inputs could be prepared from {}", dir.display());
    }
    let provenance = Provenance {
        source_dir: dir.to_path_buf(),
        max_frames,
        scale,
        clips,
    };
    let json = serde_json::to_string_pretty(&provenance)?;
    std::fs::write(out.join("provenance.json"), json + "\n")?;
    Ok(provenance)
}

fn read_provenance(path: &Path) -> Option<Provenance> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Prepared clips for the campaign, running preparation first when the
/// store is missing or was built with other settings.
pub fn load_videos(cfg: &CampaignConfig, layout: &Layout) -> Result<Vec<VideoClip>> {
    let DatasetSpec {
        dir,
        pattern,
        max_frames,
        scale,
        synthetic,
    } = &cfg.dataset;
    let mut videos = Vec::new();
    if let Some(dir) = dir {
        let store = layout.prepared_dir();
        let provenance = match read_provenance(&layout.provenance()) {
            Some(p) if p.source_dir == *dir && p.max_frames == *max_frames && p.scale == *scale => p,
            _ => prepare_dir(dir, pattern, *max_frames, *scale, &store)?,
        };
        for entry in &provenance.clips {
            let path = store.join(format!("{}.y4m", entry.id));
            videos.push(load_y4m(&path).with_context(|| format!("loading prepared clip {}", path.display()))?);
        }
    }
    if let Some(s) = synthetic {
        for i in 0..s.count {
            let seed = s.seed + i as u64;
            let clip = synthetic_clip(seed, s.frames, s.height, s.width)?;
            videos.push(normalize_clip(&clip, *max_frames, *scale)?);
        }
    }
    let mut ids: Vec<&str> = videos.iter().map(|v| v.source_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("two videos share the id `{}`", w[0]);
    }
    Ok(videos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_sizes() {
        assert_eq!(target_size(1080, 1920, 540), (540, 960));
        assert_eq!(target_size(540, 960, 540), (540, 960));
        assert_eq!(target_size(64, 64, 540), (64, 64));
        assert_eq!(target_size(65, 33, 0), (64, 32));
        assert_eq!(target_size(100, 150, 50), (50, 74));
    }

    #[test]
    fn normalize_trims_and_scales() {
        let clip = synthetic_clip(1, 6, 32, 48).unwrap();
        let n = normalize_clip(&clip, 4, 16).unwrap();
        assert_eq!((n.num_frames(), n.height(), n.width()), (4, 16, 24));
    }
}
