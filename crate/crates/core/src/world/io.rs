//! Binary dataset container.
//!
//! Layout: 8-byte magic, `u64` header length, JSON header, then every
//! partition's records in header order. All integers and floats are
//! little-endian; tensors are `u32 ndim`, `u64` dims, `f64` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::PARTITION_NAMES;
use super::text::{vocabulary, TextSeq};
use super::{Image, MultimodalExample, Pairing, PartitionCounts, PartitionedDataset, SpeakerId, SpeechSeq, WorldConfig};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMCDATA1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub world: WorldConfig,
    pub counts: PartitionCounts,
    pub seed: u64,
    /// Hash of the run config that produced the file, if any.
    pub config_hash: Option<String>,
    pub vocabulary: Vec<String>,
    pub partitions: Vec<(String, usize)>,
}

fn pairing_code(p: Pairing) -> u8 {
    match p {
        Pairing::Paired => 0,
        Pairing::Unpaired => 1,
        Pairing::ModalityOnly => 2,
    }
}

pub(crate) fn put_example(out: &mut Vec<u8>, e: &MultimodalExample) {
    codec::put_u64(out, e.scene_id as u64);
    codec::put_u8(out, pairing_code(e.pairing));
    let flags = u8::from(e.x.is_some()) | u8::from(e.y.is_some()) << 1 | u8::from(e.z.is_some()) << 2;
    codec::put_u8(out, flags);
    if let Some(x) = &e.x {
        codec::put_u64(out, x.speaker().map_or(0, |s| s.0 as u64 + 1));
        codec::put_tensor(out, &[x.num_frames(), x.frame_dim()], x.frames());
    }
    if let Some(y) = &e.y {
        codec::put_u32(out, y.len() as u32);
        for &t in y.tokens() {
            codec::put_u32(out, t as u32);
        }
    }
    if let Some(z) = &e.z {
        let (h, w, c) = z.dims();
        codec::put_tensor(out, &[h, w, c], z.pixels());
    }
}

pub(crate) fn read_example(r: &mut Reader, cfg: &WorldConfig) -> Result<MultimodalExample> {
    let scene_id = r.usize()?;
    if scene_id >= cfg.num_scenes() {
        return Err(Error::data(format!("scene id {scene_id} out of range")));
    }
    let pairing = match r.u8()? {
        0 => Pairing::Paired,
        1 => Pairing::Unpaired,
        2 => Pairing::ModalityOnly,
        p => return Err(Error::data(format!("unknown pairing code {p}"))),
    };
    let flags = r.u8()?;
    if flags & !0b111 != 0 {
        return Err(Error::data(format!("bad modality flags {flags:#x}")));
    }
    let x = if flags & 1 != 0 {
        let spk = r.u64()?;
        let speaker = spk.checked_sub(1).map(|s| SpeakerId(s as usize));
        let (shape, data) = r.tensor()?;
        if shape.len() != 2 || shape[1] != cfg.frame_dim {
            return Err(Error::data(format!("speech tensor has shape {shape:?}")));
        }
        Some(SpeechSeq::new(data, cfg.frame_dim, speaker)?)
    } else {
        None
    };
    let y = if flags & 2 != 0 {
        let n = r.u32()? as usize;
        if n > cfg.max_text_len {
            return Err(Error::data(format!("caption of {n} tokens exceeds the limit")));
        }
        let tokens = (0..n).map(|_| r.u32().map(|t| t as usize)).collect::<Result<Vec<_>>>()?;
        Some(TextSeq::from_tokens(tokens, cfg.max_text_len)?)
    } else {
        None
    };
    let z = if flags & 4 != 0 {
        let (shape, data) = r.tensor()?;
        if shape != [cfg.image_size, cfg.image_size, cfg.channels] {
            return Err(Error::data(format!("image tensor has shape {shape:?}")));
        }
        Some(Image::new(shape[0], shape[1], shape[2], data)?)
    } else {
        None
    };
    Ok(MultimodalExample {
        scene_id,
        x,
        y,
        z,
        pairing,
    })
}

pub fn encode(ds: &PartitionedDataset, world: &WorldConfig, config_hash: Option<&str>) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        version: VERSION,
        world: world.clone(),
        counts: ds.counts.clone(),
        seed: ds.seed,
        config_hash: config_hash.map(str::to_owned),
        vocabulary: vocabulary(),
        partitions: ds
            .partitions()
            .iter()
            .map(|(n, p)| (n.to_string(), p.len()))
            .collect(),
    };
    let mut out = Vec::new();
    codec::put_header(&mut out, MAGIC, &header)?;
    for (_, p) in ds.partitions() {
        for e in p {
            put_example(&mut out, e);
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(DatasetHeader, PartitionedDataset)> {
    let mut r = Reader::new(bytes);
    let header: DatasetHeader = r.header(MAGIC)?;
    if header.version != VERSION {
        return Err(Error::data(format!("unsupported dataset version {}", header.version)));
    }
    header.world.validate()?;
    if header.vocabulary != vocabulary() {
        return Err(Error::data("vocabulary does not match this build"));
    }
    let names: Vec<&str> = header.partitions.iter().map(|(n, _)| n.as_str()).collect();
    if names != PARTITION_NAMES {
        return Err(Error::data(format!("unexpected partition list {names:?}")));
    }
    let mut parts: Vec<Vec<MultimodalExample>> = Vec::with_capacity(8);
    for (_, n) in &header.partitions {
        let p = (0..*n).map(|_| read_example(&mut r, &header.world)).collect::<Result<Vec<_>>>()?;
        parts.push(p);
    }
    r.finish()?;
    let mut it = parts.into_iter();
    let mut next = || it.next().expect("eight partitions");
    let ds = PartitionedDataset {
        seed: header.seed,
        counts: header.counts.clone(),
        paired: next(),
        unpaired_speech: next(),
        unpaired_text: next(),
        unpaired_image: next(),
        speech_only: next(),
        image_only: next(),
        dev: next(),
        test: next(),
    };
    ds.check_disjoint()?;
    Ok((header, ds))
}

pub fn write(
    path: &Path,
    ds: &PartitionedDataset,
    world: &WorldConfig,
    config_hash: Option<&str>,
    overwrite: bool,
) -> Result<()> {
    codec::write_file(path, &encode(ds, world, config_hash)?, overwrite)
}

pub fn read(path: &Path) -> Result<(DatasetHeader, PartitionedDataset)> {
    decode(&codec::read_file(path)?)
}
