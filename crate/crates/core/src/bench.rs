//! Wall-time benchmarking: frame-averaged render timing with a warm-up
//! frame excluded.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::scene::CameraPose;

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub label: String,
    pub frames: usize,
    pub rays_per_frame: usize,
    pub total_seconds: f64,
    pub per_frame_seconds: f64,
    pub per_ray_micros: f64,
    pub threads: usize,
}

impl BenchResult {
    pub fn render(&self) -> String {
        format!(
            "label: {}\nframes: {}\nrays_per_frame: {}\ntotal_seconds: {:.4}\n\
             per_frame_seconds: {:.5}\nper_ray_micros: {:.3}\nthreads: {}\n",
            self.label,
            self.frames,
            self.rays_per_frame,
            self.total_seconds,
            self.per_frame_seconds,
            self.per_ray_micros,
            self.threads
        )
    }
}

/// Time `render` over the pose set. The first pose is rendered once as
/// an untimed warm-up, then every pose is rendered and timed. Timing
/// covers encoding, network evaluation and image assembly only.
pub fn bench_walltime<F>(
    label: &str,
    poses: &[CameraPose],
    threads: usize,
    mut render: F,
) -> Result<BenchResult>
where
    F: FnMut(&CameraPose) -> Result<()>,
{
    if poses.is_empty() {
        return Err(Error::Usage("benchmark needs at least one pose".into()));
    }
    let rays_per_frame = poses[0].width * poses[0].height;
    render(&poses[0])?; // warm-up, excluded
    let start = Instant::now();
    for pose in poses {
        render(pose)?;
    }
    let total_seconds = start.elapsed().as_secs_f64();
    let frames = poses.len();
    let per_frame_seconds = total_seconds / frames as f64;
    Ok(BenchResult {
        label: label.to_string(),
        frames,
        rays_per_frame,
        total_seconds,
        per_frame_seconds,
        per_ray_micros: per_frame_seconds / rays_per_frame as f64 * 1e6,
        threads,
    })
}
