//! Splitting long clips into network windows and blending them back.

use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::net::{RetargetModel, Side};

pub const DEFAULT_OVERLAP: usize = 8;

/// A window of a longer clip starting at frame `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub clip: MotionClip,
}

/// Window start frames: a stride of `window - overlap`, with the last window
/// aligned to the end of the clip.
pub fn window_starts(frames: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || overlap >= window {
        return Err(Error::InvalidConfig(format!("overlap {overlap} must be smaller than window {window}")));
    }
    if frames <= window {
        return Ok(vec![0]);
    }
    let stride = window - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + window < frames).collect();
    starts.push(frames - window);
    starts.dedup();
    Ok(starts)
}

/// Cuts `clip` into windows of exactly `window` frames. Clips shorter than a
/// window are padded by holding the last frame.
pub fn split_windows(clip: &MotionClip, window: usize, overlap: usize) -> Result<Vec<Window>> {
    let frames = clip.frames();
    let starts = window_starts(frames, window, overlap)?;
    if frames < window {
        let mut root = clip.root_translation().to_vec();
        let mut rot = clip.rotations().to_vec();
        root.resize(window, root[frames - 1]);
        rot.resize(window, rot[frames - 1].clone());
        let padded = MotionClip::from_parts_unchecked(clip.skeleton().to_string(), clip.fps(), root, rot);
        return Ok(vec![Window { start: 0, clip: padded }]);
    }
    Ok(starts.into_iter().map(|start| Window { start, clip: clip.slice(start, window) }).collect())
}

/// Joins windows back into a clip of `frames` frames. Where two windows
/// overlap, the weight of the later one rises linearly across the overlap;
/// rotations are blended along the geodesic, root translations linearly.
pub fn stitch(windows: &[Window], frames: usize) -> Result<MotionClip> {
    let first = windows.first().ok_or(Error::EmptyDataset)?;
    if first.start != 0 {
        return Err(Error::InvalidConfig("first window must start at frame 0".into()));
    }
    let mut root = first.clip.root_translation().to_vec();
    let mut rot = first.clip.rotations().to_vec();
    for w in &windows[1..] {
        let end = root.len();
        if w.start > end || w.start + w.clip.frames() < end {
            return Err(Error::InvalidConfig(format!("window at frame {} leaves a gap or is contained", w.start)));
        }
        let n = end - w.start;
        for i in 0..n {
            let a = (i + 1) as f64 / (n + 1) as f64;
            let t = w.start + i;
            let new_root = w.clip.root_translation()[i];
            root[t] = std::array::from_fn(|c| (1.0 - a) * root[t][c] + a * new_root[c]);
            for (j, q) in rot[t].iter_mut().enumerate() {
                *q = q.slerp(w.clip.rotation(i, j), a);
            }
        }
        root.extend_from_slice(&w.clip.root_translation()[n..]);
        rot.extend_from_slice(&w.clip.rotations()[n..]);
    }
    if root.len() < frames {
        return Err(Error::TooShort { needed: frames, found: root.len() });
    }
    root.truncate(frames);
    rot.truncate(frames);
    MotionClip::new(first.clip.skeleton().to_string(), first.clip.fps(), root, rot)
}

/// Retargets a clip of any length by windowing, batch inference and stitching.
pub fn retarget_long(model: &RetargetModel, clip: &MotionClip, overlap: usize, workers: usize) -> Result<MotionClip> {
    Ok(retarget_many(model, std::slice::from_ref(clip), overlap, workers)?.remove(0))
}

/// [`retarget_long`] for many clips with all windows in one batch. Errors
/// name the failing clip.
pub fn retarget_many(model: &RetargetModel, clips: &[MotionClip], overlap: usize, workers: usize) -> Result<Vec<MotionClip>> {
    let mut windows = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        let checked = c.check_skeleton(model.skeleton(Side::A)).and_then(|_| split_windows(c, model.config().window, overlap));
        windows.push(checked.map_err(|e| Error::InvalidMotion(format!("clip {i}: {e}")))?);
    }
    let sources: Vec<MotionClip> = windows.iter().flatten().map(|w| w.clip.clone()).collect();
    let mut outputs = model.retarget_batch(&sources, workers)?.into_iter();
    windows
        .iter()
        .zip(clips)
        .map(|(ws, c)| {
            let out: Vec<Window> = ws.iter().map(|w| Window { start: w.start, clip: outputs.next().unwrap() }).collect();
            stitch(&out, c.frames())
        })
        .collect()
}
