use std::fs;
use std::path::{Path, PathBuf};

use super::config::SynthConfig;
use super::scene::{render_frame, simulate, Scene};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::keyvalue::KeyValues;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A rendered video of one target instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<T> {
    pub frames: Vec<Tensor<T>>,
    pub gt: Vec<BoundingBox>,
    pub instance_id: u64,
    /// The generator settings, so the scene can be re-simulated.
    pub config: SynthConfig,
}

impl<T: Scalar> Sequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Re-simulates the object states behind this sequence.
    pub fn scene(&self) -> Result<Scene> {
        simulate(&self.config, self.instance_id)
    }
}

/// Renders the sequence of instance `id`.
pub fn generate_sequence<T: Scalar>(cfg: &SynthConfig, id: u64) -> Result<Sequence<T>> {
    let scene = simulate(cfg, id)?;
    let frames = (0..scene.len())
        .map(|f| render_frame(&scene, f).0)
        .collect();
    let gt = (0..scene.len()).map(|f| scene.target(f).bbox).collect();
    Ok(Sequence {
        frames,
        gt,
        instance_id: id,
        config: cfg.clone(),
    })
}

/// Sequences for instances `first_id .. first_id + cfg.sequences`.
pub fn generate_dataset<T: Scalar>(cfg: &SynthConfig, first_id: u64) -> Result<Vec<Sequence<T>>> {
    (0..cfg.sequences as u64)
        .map(|i| generate_sequence(cfg, first_id + i))
        .collect()
}

const META: &str = "meta.txt";

fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.mdt")
}

/// Writes `meta.txt` (configuration, instance id and per-frame boxes) and one
/// tensor file per frame into `dir`.
pub fn write_sequence<T: Scalar>(seq: &Sequence<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut kv = seq.config.to_kv();
    kv.set("instance-id", seq.instance_id);
    kv.set("frames", seq.len());
    let mut text = String::from("# synthetic sequence\n");
    text.push_str(&kv.to_text());
    text.push_str("# frame_idx cx cy w h\n");
    for (i, b) in seq.gt.iter().enumerate() {
        text.push_str(&format!("{i} {} {} {} {}\n", b.cx, b.cy, b.w, b.h));
    }
    fs::write(dir.join(META), text)?;
    for (i, f) in seq.frames.iter().enumerate() {
        fs::write(dir.join(frame_file(i)), f.to_bytes())?;
    }
    Ok(())
}

/// Parsed `meta.txt`: the key=value block and the box lines.
pub fn read_meta(path: &Path) -> Result<(KeyValues, Vec<BoundingBox>)> {
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let mut kv = KeyValues::new();
    let mut gt = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            kv.set(k.trim(), v.trim());
            continue;
        }
        let bad = || {
            Error::format(
                "sequence metadata",
                format!("{}: line {line:?}", path.display()),
            )
        };
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if fields.len() != 5 || fields[0] != gt.len() as f64 {
            return Err(bad());
        }
        gt.push(BoundingBox::new(
            fields[1], fields[2], fields[3], fields[4],
        )?);
    }
    Ok((kv, gt))
}

pub fn read_sequence<T: Scalar>(dir: &Path) -> Result<Sequence<T>> {
    let (mut kv, gt) = read_meta(&dir.join(META))?;
    let missing = |k: &str| {
        Error::format(
            "sequence metadata",
            format!("{}: missing {k}", dir.display()),
        )
    };
    let instance_id: u64 = kv
        .parse_opt("instance-id")?
        .ok_or_else(|| missing("instance-id"))?;
    let count: usize = kv.parse_opt("frames")?.ok_or_else(|| missing("frames"))?;
    kv.remove("instance-id");
    kv.remove("frames");
    let config = SynthConfig::from_kv(&kv)?;
    if gt.len() != count {
        return Err(Error::format(
            "sequence metadata",
            format!("{} boxes for {count} frames", gt.len()),
        ));
    }
    let frames = (0..count)
        .map(|i| {
            let file = dir.join(frame_file(i));
            let bytes = fs::read(&file).map_err(Error::io_at(&file))?;
            Tensor::read_from(&mut bytes.as_slice())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        frames,
        gt,
        instance_id,
        config,
    })
}

/// Sequence directories of a dataset, in name order.
pub fn dataset_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io_at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!(
            "no sequences found in {}",
            dir.display()
        )));
    }
    Ok(dirs)
}

pub fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:04}")
}

pub fn write_dataset<T: Scalar>(seqs: &[Sequence<T>], dir: &Path) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        write_sequence(s, &dir.join(sequence_dir_name(i)))?;
    }
    Ok(())
}

pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<Vec<Sequence<T>>> {
    dataset_dirs(dir)?
        .iter()
        .map(|d| read_sequence(d))
        .collect()
}
