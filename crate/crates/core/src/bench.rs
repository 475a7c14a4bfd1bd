//! Retargeting throughput measurement.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::net::{RetargetModel, Side};
use crate::training::{synthetic_clip, SynthConfig};

pub const BENCH_CSV_HEADER: &str = "batch_size,workers,repeats,frames,seconds,fps,single_clip_latency_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub workers: usize,
    pub repeats: usize,
    /// Frames retargeted in total, `batch_size * window * repeats`.
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
    pub single_clip_latency_ms: f64,
}

/// Seeded synthetic source clips sized for the model's window.
pub fn bench_clips(model: &RetargetModel, count: usize, seed: u64) -> Result<Vec<MotionClip>> {
    let cfg = SynthConfig { frames: model.config().window, fps: model.config().fps, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_clip(&mut rng, model.skeleton(Side::A), &cfg)).collect()
}

/// Times `repeats` calls of `retarget_batch` on `batch_size` clips.
pub fn bench_row(model: &RetargetModel, clips: &[MotionClip], batch_size: usize, workers: usize, repeats: usize) -> Result<BenchRow> {
    if batch_size == 0 || repeats == 0 || workers == 0 {
        return Err(Error::InvalidConfig("batch size, workers and repeats must be >= 1".into()));
    }
    if clips.len() < batch_size {
        return Err(Error::InvalidConfig(format!("{} clips for a batch of {batch_size}", clips.len())));
    }
    let batch = &clips[..batch_size];
    let start = Instant::now();
    model.retarget(&batch[0])?;
    let latency = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for _ in 0..repeats {
        model.retarget_batch(batch, workers)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let frames = batch_size * model.config().window * repeats;
    Ok(BenchRow {
        batch_size,
        workers,
        repeats,
        frames,
        seconds,
        fps: frames as f64 / seconds.max(f64::MIN_POSITIVE),
        single_clip_latency_ms: latency * 1e3,
    })
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.batch_size, r.workers, r.repeats, r.frames, r.seconds, r.fps, r.single_clip_latency_ms
        ));
    }
    s
}
