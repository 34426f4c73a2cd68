//! On-disk dataset: `frames/NNNNNN.ppm` plus `labels.csv` with header
//! `frame,steering`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::scene::LabeledFrame;
use crate::fsutil;
use crate::pnm::{self, PnmError};

pub const LABELS_FILE: &str = "labels.csv";
pub const FRAMES_DIR: &str = "frames";
pub const LABELS_HEADER: &str = "frame,steering";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: PnmError },
    #[error("labels.csv line {line}: {reason}")]
    Labels { line: usize, reason: String },
    #[error("frame {path} is {actual:?}, expected {expected:?}")]
    FrameSize {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.ppm")
}

/// Writes every frame as PPM and the labels as CSV. Steering values use the
/// shortest decimal form that parses back to the same `f32`.
pub fn save_dataset(frames: &[LabeledFrame], dir: &Path) -> Result<(), DatasetError> {
    let frames_dir = dir.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir)?;
    let mut csv = format!("{LABELS_HEADER}\n");
    for (i, f) in frames.iter().enumerate() {
        let name = frame_name(i);
        let path = frames_dir.join(&name);
        pnm::write_ppm(&f.image_rgb, &path)
            .map_err(|source| DatasetError::Image { path, source })?;
        writeln!(csv, "{name},{}", f.steering).expect("writing to a String");
    }
    fsutil::write_atomic(&dir.join(LABELS_FILE), csv.as_bytes())?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`] (or by hand in the same
/// layout). All frames must share one size.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledFrame>, DatasetError> {
    let text = std::fs::read_to_string(dir.join(LABELS_FILE))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LABELS_HEADER => {}
        _ => {
            return Err(DatasetError::Labels {
                line: 1,
                reason: format!("expected header {LABELS_HEADER:?}"),
            })
        }
    }
    let mut frames = Vec::new();
    let mut size = None;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Labels {
            line: line_no,
            reason,
        };
        let (name, steer) = line
            .split_once(',')
            .ok_or_else(|| bad("expected two fields".into()))?;
        let steering: f32 = steer
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad steering value {steer:?}")))?;
        if !steering.is_finite() {
            return Err(bad("steering must be finite".into()));
        }
        let name = name.trim();
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
            return Err(bad(format!("bad frame name {name:?}")));
        }
        let path = dir.join(FRAMES_DIR).join(name);
        let rgb = pnm::read_ppm(&path).map_err(|source| DatasetError::Image {
            path: path.clone(),
            source,
        })?;
        let dims = (rgb.height(), rgb.width());
        match size {
            None => size = Some(dims),
            Some(expected) if expected != dims => {
                return Err(DatasetError::FrameSize {
                    path,
                    expected,
                    actual: dims,
                })
            }
            _ => {}
        }
        frames.push(LabeledFrame::from_rgb(rgb, steering));
    }
    Ok(frames)
}
