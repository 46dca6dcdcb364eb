//! On-disk dataset layout: `<root>/<split>/{manifest.json, backgrounds.bin,
//! seq_<id>.bin}`. Tensors are raw little-endian f32; each sequence file is
//! self-describing (length-prefixed JSON header, then sprites, then frames).

use super::trajectory::gen_pooled_sequence;
use super::{
    BackgroundSpec, DatasetConfig, DigitSprite, ObjectTrack, Split, TrajectoryStep, VideoSequence,
};
use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_LEN};
use crate::rng::{stream, TAG_SEQUENCE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub num_sequences: usize,
    pub config: DatasetConfig,
    pub config_hash: String,
    pub backgrounds: Vec<BackgroundSpec>,
    pub files: BTreeMap<u32, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObjectMeta {
    label: u8,
    source_index: u32,
    initial_position: (i32, i32),
    steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceHeader {
    format_version: u32,
    id: u32,
    split: Split,
    seed: u64,
    background_id: u32,
    m: usize,
    objects: Vec<ObjectMeta>,
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("tensor byte length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn encode_sequence(seq: &VideoSequence) -> Vec<u8> {
    let header = SequenceHeader {
        format_version: FORMAT_VERSION,
        id: seq.id,
        split: seq.split,
        seed: seq.seed,
        background_id: seq.background_id,
        m: seq.frames.len(),
        objects: seq
            .objects
            .iter()
            .map(|o| ObjectMeta {
                label: o.sprite.label,
                source_index: o.sprite.source_index,
                initial_position: o.initial_position,
                steps: o.steps.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for o in &seq.objects {
        out.extend_from_slice(&f32s_to_bytes(&o.sprite.intensity));
    }
    for f in &seq.frames {
        out.extend_from_slice(&f32s_to_bytes(f.data()));
    }
    out
}

fn decode_sequence(bytes: &[u8], split: Split) -> Result<VideoSequence> {
    if bytes.len() < 4 {
        return Err(Error::Format("sequence file truncated".into()));
    }
    let header_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let header_end = 4 + header_len;
    let header: SequenceHeader = serde_json::from_slice(
        bytes
            .get(4..header_end)
            .ok_or_else(|| Error::Format("sequence header truncated".into()))?,
    )?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "sequence format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let sprite_len = super::DIGIT_SIZE * super::DIGIT_SIZE;
    let expected = header_end + 4 * (header.objects.len() * sprite_len + header.m * FRAME_LEN);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "sequence payload {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut at = header_end;
    let mut objects = Vec::with_capacity(header.objects.len());
    for meta in &header.objects {
        let intensity = bytes_to_f32s(&bytes[at..at + 4 * sprite_len])?;
        at += 4 * sprite_len;
        objects.push(ObjectTrack {
            sprite: DigitSprite {
                intensity,
                label: meta.label,
                split,
                source_index: meta.source_index,
            },
            initial_position: meta.initial_position,
            steps: meta.steps.clone(),
        });
    }
    let mut frames = Vec::with_capacity(header.m);
    for _ in 0..header.m {
        frames.push(Frame::new(bytes_to_f32s(&bytes[at..at + 4 * FRAME_LEN])?)?);
        at += 4 * FRAME_LEN;
    }
    Ok(VideoSequence {
        id: header.id,
        split,
        seed: header.seed,
        background_id: header.background_id,
        objects,
        frames,
    })
}

fn seq_file_name(id: u32) -> String {
    format!("seq_{id:06}.bin")
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Test => 1,
    }
}

fn gen_split(
    config: &DatasetConfig,
    sprites: &[DigitSprite],
    split: Split,
    count: usize,
    dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let backgrounds = config.background_pool(split);
    let tag = split_tag(split);
    // Each sequence draws from its own counter-derived stream, so the result
    // is identical however the batch is scheduled.
    let encoded: Vec<(u32, Vec<u8>)> = (0..count as u32)
        .into_par_iter()
        .map(|id| -> Result<(u32, Vec<u8>)> {
            let seed = config.seed;
            let mut rng = stream(seed, &[TAG_SEQUENCE, tag, id as u64]);
            let (seq, _) =
                gen_pooled_sequence(sprites, &backgrounds, &mut rng, config, id, seed)?;
            Ok((id, encode_sequence(&seq)))
        })
        .collect::<Result<_>>()?;

    let mut files = BTreeMap::new();
    let mut bg_bytes = Vec::with_capacity(backgrounds.len() * FRAME_LEN * 4);
    for bg in &backgrounds {
        let as_f32: Vec<f32> = bg.rendered.iter().map(|&v| v as f32).collect();
        bg_bytes.extend_from_slice(&f32s_to_bytes(&as_f32));
    }
    fs::write(dir.join("backgrounds.bin"), bg_bytes)?;
    for (id, bytes) in &encoded {
        let name = seq_file_name(*id);
        fs::write(dir.join(&name), bytes)?;
        files.insert(*id, name);
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        split,
        num_sequences: count,
        config: config.clone(),
        config_hash: config.hash(),
        backgrounds,
        files,
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    f.write_all(&serde_json::to_vec_pretty(&manifest)?)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

/// Generate and serialize both splits. Fully deterministic in `config.seed`.
pub fn gen_dataset(
    config: &DatasetConfig,
    train_sprites: &[DigitSprite],
    test_sprites: &[DigitSprite],
    out_root: &Path,
    train_count: usize,
    test_count: usize,
) -> Result<(DatasetManifest, DatasetManifest)> {
    config.validate()?;
    let train = gen_split(
        config,
        train_sprites,
        Split::Train,
        train_count,
        &out_root.join(Split::Train.dir_name()),
    )?;
    let test = gen_split(
        config,
        test_sprites,
        Split::Test,
        test_count,
        &out_root.join(Split::Test.dir_name()),
    )?;
    Ok((train, test))
}

/// Read access to one serialized split.
pub struct DatasetReader {
    dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl DatasetReader {
    pub fn open(root: &Path, split: Split) -> Result<Self> {
        let dir = root.join(split.dir_name());
        let manifest_path = dir.join("manifest.json");
        let mut json = String::new();
        fs::File::open(&manifest_path)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?
            .read_to_string(&mut json)?;
        let manifest: DatasetManifest = serde_json::from_str(&json)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest format version {}",
                manifest.format_version
            )));
        }
        let mut reader = Self { dir, manifest };
        reader.attach_background_renders()?;
        Ok(reader)
    }

    /// Backgrounds are regenerated from the recorded config seed so replay
    /// math sees the exact generation-time values; the stored binary is the
    /// storage contract and is checked against them.
    fn attach_background_renders(&mut self) -> Result<()> {
        let pool = self.manifest.config.background_pool(self.manifest.split);
        if pool.len() != self.manifest.backgrounds.len() {
            return Err(Error::Format("background pool size mismatch".into()));
        }
        let stored = fs::read(self.dir.join("backgrounds.bin"))?;
        let stored = bytes_to_f32s(&stored)?;
        if stored.len() != pool.len() * FRAME_LEN {
            return Err(Error::Format("backgrounds.bin length mismatch".into()));
        }
        for (i, bg) in pool.iter().enumerate() {
            for (j, &v) in bg.rendered.iter().enumerate() {
                if stored[i * FRAME_LEN + j] != v as f32 {
                    return Err(Error::Format(format!(
                        "background {i} differs from recorded tensor at {j}"
                    )));
                }
            }
        }
        self.manifest.backgrounds = pool;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.manifest.num_sequences
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.num_sequences == 0
    }

    pub fn backgrounds(&self) -> &[BackgroundSpec] {
        &self.manifest.backgrounds
    }

    pub fn load_sequence(&self, id: u32) -> Result<VideoSequence> {
        let name = self
            .manifest
            .files
            .get(&id)
            .ok_or_else(|| Error::IndexOutOfRange(format!("sequence {id}")))?;
        let bytes = fs::read(self.dir.join(name))?;
        decode_sequence(&bytes, self.manifest.split)
    }
}
