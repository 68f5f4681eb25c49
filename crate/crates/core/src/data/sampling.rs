use rand::Rng;

use super::{Video, VideoClip};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// How inference clips are positioned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CropMode {
    /// Three uniformly random temporal starts and three random crops.
    #[default]
    Random,
    /// Evenly spaced temporal starts (first, middle, last) and left/center/right
    /// crops, vertically centered. Ignores the rng.
    Deterministic,
}

fn check_fits(video: &Video, cfg: &ModelConfig) -> Result<()> {
    if video.frames < cfg.frames || video.height < cfg.height || video.width < cfg.width {
        return Err(Error::Data(format!(
            "video {} is {}x{} with {} frames, need at least {}x{} with {} frames",
            video.id, video.height, video.width, video.frames, cfg.height, cfg.width, cfg.frames
        )));
    }
    if video.channels != cfg.channels {
        return Err(Error::Data(format!(
            "video {} has {} channels, model expects {}",
            video.id, video.channels, cfg.channels
        )));
    }
    Ok(())
}

/// Cut `cfg.frames` frames starting at `t0` and a `cfg.height × cfg.width`
/// window with top-left corner `(y0, x0)`.
fn cut(video: &Video, cfg: &ModelConfig, t0: usize, y0: usize, x0: usize) -> VideoClip {
    let (h, w, c, f) = (cfg.height, cfg.width, video.channels, cfg.frames);
    let mut data = Vec::with_capacity(h * w * c * f);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let base = (((y0 + y) * video.width + x0 + x) * c + ch) * video.frames + t0;
                data.extend(video.pixels[base..base + f].iter().map(|&v| v as f64));
            }
        }
    }
    VideoClip {
        pixels: Tensor::new([h, w, c, f], data).expect("sizes consistent"),
        label: video.label,
        source: video.id,
    }
}

/// `cfg.frames` consecutive frames from a uniformly random start and one
/// uniformly random crop shared by all frames.
pub fn sample_training_clip<R: Rng + ?Sized>(
    video: &Video,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<VideoClip> {
    check_fits(video, cfg)?;
    let t0 = rng.gen_range(0..=video.frames - cfg.frames);
    let y0 = rng.gen_range(0..=video.height - cfg.height);
    let x0 = rng.gen_range(0..=video.width - cfg.width);
    Ok(cut(video, cfg, t0, y0, x0))
}

/// The nine inference clips: three temporal positions × three crops,
/// temporal-major.
pub fn sample_inference_clips<R: Rng + ?Sized>(
    video: &Video,
    cfg: &ModelConfig,
    rng: &mut R,
    mode: CropMode,
) -> Result<Vec<VideoClip>> {
    check_fits(video, cfg)?;
    let (max_t, max_y, max_x) = (
        video.frames - cfg.frames,
        video.height - cfg.height,
        video.width - cfg.width,
    );
    let (starts, crops): ([usize; 3], [(usize, usize); 3]) = match mode {
        CropMode::Random => (
            std::array::from_fn(|_| rng.gen_range(0..=max_t)),
            std::array::from_fn(|_| (rng.gen_range(0..=max_y), rng.gen_range(0..=max_x))),
        ),
        CropMode::Deterministic => (
            [0, max_t / 2, max_t],
            [(max_y / 2, 0), (max_y / 2, max_x / 2), (max_y / 2, max_x)],
        ),
    };
    let mut clips = Vec::with_capacity(9);
    for &t0 in &starts {
        for &(y0, x0) in &crops {
            clips.push(cut(video, cfg, t0, y0, x0));
        }
    }
    Ok(clips)
}

/// Middle temporal start and center crop; used for validation during training.
pub(crate) fn center_clip(video: &Video, cfg: &ModelConfig) -> Result<VideoClip> {
    check_fits(video, cfg)?;
    let t0 = (video.frames - cfg.frames) / 2;
    let y0 = (video.height - cfg.height) / 2;
    let x0 = (video.width - cfg.width) / 2;
    Ok(cut(video, cfg, t0, y0, x0))
}

fn source_coord(i: usize, from: usize, to: usize) -> (usize, usize, f64) {
    if to == 1 || from == 1 {
        return (0, 0, 0.0);
    }
    let s = i as f64 * (from - 1) as f64 / (to - 1) as f64;
    let lo = (s.floor() as usize).min(from - 1);
    let hi = (lo + 1).min(from - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize of an `H × W × C` frame to `th × tw`.
///
/// Corner-aligned: output pixel `(i, j)` samples the source at
/// `(i·(H−1)/(th−1), j·(W−1)/(tw−1))`, so the four corner pixels are copied
/// exactly. A target extent of 1 samples the first row/column.
pub fn resize(frame: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    if frame.ndim() != 3 {
        return Err(Error::dim("resize", format!("expected H×W×C, got {:?}", frame.shape())));
    }
    if th == 0 || tw == 0 {
        return Err(Error::Contract(format!("resize target {th}x{tw} must be positive")));
    }
    let [h, w, c] = [frame.shape()[0], frame.shape()[1], frame.shape()[2]];
    let src = frame.data();
    let px = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(th * tw * c);
    for i in 0..th {
        let (y0, y1, fy) = source_coord(i, h, th);
        for j in 0..tw {
            let (x0, x1, fx) = source_coord(j, w, tw);
            for ch in 0..c {
                let top = px(y0, x0, ch) * (1.0 - fx) + px(y0, x1, ch) * fx;
                let bottom = px(y1, x0, ch) * (1.0 - fx) + px(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([th, tw, c], out)
}

/// Resize every frame of a stored video.
pub fn resize_video(video: &Video, th: usize, tw: usize) -> Result<Video> {
    let (h, w, c, f) = (video.height, video.width, video.channels, video.frames);
    let mut pixels = vec![0.0f32; th * tw * c * f];
    for t in 0..f {
        let frame = Tensor::from_fn([h, w, c], |i| video.pixels[i * f + t] as f64);
        let resized = resize(&frame, th, tw)?;
        for (i, &v) in resized.data().iter().enumerate() {
            pixels[i * f + t] = v as f32;
        }
    }
    Video::new(video.id, video.label, [th, tw, c, f], pixels)
}
