//! Episode directories: `manifest.json` plus one tensor file per array.

use std::fs;
use std::path::{Path, PathBuf};

use rfcap_nn::tensorfile::{self, TensorData};
use serde::{Deserialize, Serialize};

use super::types::{
    ActivityScript, Episode, EpisodeKind, FloormapWorld, HeatmapDims, RfHeatmapSegment, SkeletonSequence,
    SurrogateVideoFeatures, NUM_JOINTS, SEGMENT_FRAMES,
};
use crate::error::{io_err, json_err, Error, Result};

pub const MANIFEST: &str = "manifest.json";
const SKELETONS: &str = "skeletons.rft";
const HEATMAP_H: &str = "heatmap_horizontal.rft";
const HEATMAP_V: &str = "heatmap_vertical.rft";
const VIDEO_M: &str = "video_m.rft";
const VIDEO_N: &str = "video_n.rft";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub env_id: u32,
    pub kind: EpisodeKind,
    pub duration: f64,
    pub occluded: bool,
    pub captions: Vec<String>,
    pub script: ActivityScript,
    pub floormap: FloormapWorld,
    pub heatmap_dims: Option<HeatmapDims>,
    pub out_of_view: Vec<bool>,
    pub files: Vec<String>,
}

pub fn save_episode(e: &Episode, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    if let Some(sk) = &e.skeletons {
        let data: Vec<f32> = sk.flat().into_iter().map(|v| v as f32).collect();
        write_f32(dir, SKELETONS, &[sk.len(), NUM_JOINTS, 3], data, &mut files)?;
    }
    let dims = e.heatmaps.first().map(|s| s.dims);
    if let Some(d) = dims {
        let n = e.heatmaps.len();
        let h: Vec<f32> = e.heatmaps.iter().flat_map(|s| s.horizontal.iter().copied()).collect();
        let v: Vec<f32> = e.heatmaps.iter().flat_map(|s| s.vertical.iter().copied()).collect();
        write_f32(dir, HEATMAP_H, &[n, SEGMENT_FRAMES, d.depth, d.lateral], h, &mut files)?;
        write_f32(dir, HEATMAP_V, &[n, SEGMENT_FRAMES, d.depth, d.height], v, &mut files)?;
    }
    if let Some(v) = &e.video {
        let (t, c, s) = (v.segments, v.channels, v.grid);
        write_f32(dir, VIDEO_M, &[t, c, s, s], v.v_m.clone(), &mut files)?;
        write_f32(dir, VIDEO_N, &[t, c], v.v_n.clone(), &mut files)?;
    }
    let manifest = EpisodeManifest {
        episode_id: e.episode_id.clone(),
        env_id: e.env_id,
        kind: e.kind,
        duration: e.duration,
        occluded: e.occluded,
        captions: e.captions.clone(),
        script: e.script.clone(),
        floormap: e.floormap.clone(),
        heatmap_dims: dims,
        out_of_view: e.heatmaps.iter().map(|s| s.out_of_view).collect(),
        files,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&path))?;
    fs::write(&path, text).map_err(io_err(&path))
}

fn write_f32(dir: &Path, name: &str, dims: &[usize], data: Vec<f32>, files: &mut Vec<String>) -> Result<()> {
    tensorfile::write(&dir.join(name), dims, &TensorData::F32(data))?;
    files.push(name.to_owned());
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<EpisodeManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(json_err(&path))
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    load(dir, true)
}

/// Loads everything except the heatmap arrays.
pub fn load_episode_without_heatmaps(dir: &Path) -> Result<Episode> {
    load(dir, false)
}

fn load(dir: &Path, heatmaps: bool) -> Result<Episode> {
    let m = read_manifest(dir)?;
    let has = |name: &str| m.files.iter().any(|f| f == name);

    let skeletons = if has(SKELETONS) {
        let path = dir.join(SKELETONS);
        let (dims, data) = tensorfile::read_f32(&path)?;
        expect_dims(&path, &dims, &[None, Some(NUM_JOINTS), Some(3)])?;
        let values: Vec<f64> = data.into_iter().map(f64::from).collect();
        Some(SkeletonSequence::from_flat(&values)?)
    } else {
        None
    };

    let mut segments = Vec::new();
    if heatmaps && has(HEATMAP_H) {
        let d = m.heatmap_dims.ok_or_else(|| Error::Format {
            path: dir.join(MANIFEST),
            reason: "heatmap files present without heatmap_dims".into(),
        })?;
        let hp = dir.join(HEATMAP_H);
        let vp = dir.join(HEATMAP_V);
        let (hd, h) = tensorfile::read_f32(&hp)?;
        let (vd, v) = tensorfile::read_f32(&vp)?;
        let n = m.out_of_view.len();
        expect_dims(&hp, &hd, &[Some(n), Some(SEGMENT_FRAMES), Some(d.depth), Some(d.lateral)])?;
        expect_dims(&vp, &vd, &[Some(n), Some(SEGMENT_FRAMES), Some(d.depth), Some(d.height)])?;
        let hn = SEGMENT_FRAMES * d.horizontal_len();
        let vn = SEGMENT_FRAMES * d.vertical_len();
        for (i, &flag) in m.out_of_view.iter().enumerate() {
            segments.push(RfHeatmapSegment {
                dims: d,
                horizontal: h[i * hn..(i + 1) * hn].to_vec(),
                vertical: v[i * vn..(i + 1) * vn].to_vec(),
                out_of_view: flag,
            });
        }
    }

    let video = if has(VIDEO_M) {
        let mp = dir.join(VIDEO_M);
        let np = dir.join(VIDEO_N);
        let (md, v_m) = tensorfile::read_f32(&mp)?;
        let (nd, v_n) = tensorfile::read_f32(&np)?;
        expect_dims(&mp, &md, &[None, None, None, None])?;
        if md[2] != md[3] {
            return Err(Error::Format {
                path: mp,
                reason: format!("spatial grid {}x{} is not square", md[2], md[3]),
            });
        }
        expect_dims(&np, &nd, &[Some(md[0]), Some(md[1])])?;
        Some(SurrogateVideoFeatures {
            segments: md[0],
            channels: md[1],
            grid: md[2],
            v_m,
            v_n,
        })
    } else {
        None
    };

    Ok(Episode {
        episode_id: m.episode_id,
        env_id: m.env_id,
        kind: m.kind,
        duration: m.duration,
        occluded: m.occluded,
        floormap: m.floormap,
        skeletons,
        heatmaps: segments,
        video,
        captions: m.captions,
        script: m.script,
    })
}

fn expect_dims(path: &Path, got: &[usize], want: &[Option<usize>]) -> Result<()> {
    let ok = got.len() == want.len() && got.iter().zip(want).all(|(g, w)| w.is_none_or(|w| w == *g));
    if ok {
        Ok(())
    } else {
        Err(Error::Format {
            path: PathBuf::from(path),
            reason: format!("unexpected dims {got:?}"),
        })
    }
}
