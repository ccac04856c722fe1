use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::simworld::{Action, Observation, Role, TaskKind};

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    task: TaskKind,
    variation: usize,
    seed: u64,
    morphology: Role,
    success: bool,
    actions: Vec<[f32; 3]>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

fn write_png(path: &Path, obs: &Observation) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), obs.width as u32, obs.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    writer.write_image_data(&obs.pixels).map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))
}

fn read_png(path: &Path) -> Result<Observation> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(|e| Error::format(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    buf.truncate(info.buffer_size());
    Ok(Observation { height: info.height as usize, width: info.width as usize, pixels: buf })
}

/// Writes `frame_00000.png`… and `episode.json` into `dir`.
pub fn write_episode(dir: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in traj.frames.iter().enumerate() {
        write_png(&dir.join(frame_name(i)), f)?;
    }
    let record = EpisodeRecord {
        task: traj.task,
        variation: traj.variation_id,
        seed: traj.seed,
        morphology: traj.role,
        success: traj.success,
        actions: traj.actions.iter().map(|a| a.to_array()).collect(),
    };
    let path = dir.join("episode.json");
    let text = serde_json::to_string(&record).expect("episode serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_episode(dir: &Path) -> Result<Trajectory> {
    let path = dir.join("episode.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let r: EpisodeRecord = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let frames = (0..=r.actions.len())
        .map(|i| read_png(&dir.join(frame_name(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        task: r.task,
        variation_id: r.variation,
        seed: r.seed,
        role: r.morphology,
        success: r.success,
        frames,
        actions: r.actions.into_iter().map(Action::from_array).collect(),
    })
}
