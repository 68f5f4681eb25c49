use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetManifest, ManifestEntry, Video};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "DSTA-DATASET 1";

/// Printed by `dsta generate --format`.
pub const FORMAT_DOC: &str = "\
dataset file layout (version 1)
  text header, one record per line, UTF-8:
    DSTA-DATASET 1
    classes <name> <name> ...
    items <count>
    item <id> <offset> <label> <split> <H> <W> <F>    (one per item, offsets strictly increasing)
    end
  payload, immediately after the newline of `end`:
    per item, H*W*3*F little-endian f32 values in [0,1], layout H x W x C x F
    (frame index fastest); <offset> is the item's byte offset from the payload start
";

fn header(manifest: &DatasetManifest) -> String {
    let mut text = format!("{DATASET_MAGIC}\nclasses {}\nitems {}\n", manifest.class_names.join(" "), manifest.len());
    for e in &manifest.entries {
        text.push_str(&format!(
            "item {} {} {} {} {} {} {}\n",
            e.id, e.offset, e.label, e.split, e.height, e.width, e.frames
        ));
    }
    text.push_str("end\n");
    text
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    dataset.manifest.validate()?;
    let mut out = header(&dataset.manifest).into_bytes();
    let payload_start = out.len() as u64;
    for (e, v) in dataset.manifest.entries.iter().zip(&dataset.videos) {
        if v.channels != 3 {
            return Err(Error::Data(format!("item {}: {} channels, files store 3", v.id, v.channels)));
        }
        if out.len() as u64 - payload_start != e.offset {
            return Err(Error::Data(format!(
                "item {}: manifest offset {} does not match its payload position",
                e.id, e.offset
            )));
        }
        for p in &v.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: String| Error::Load(m);
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("no `end` line; not a dataset file".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let payload = &bytes[end + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(bad(format!("missing `{DATASET_MAGIC}` first line")));
    }
    let class_names: Vec<String> = lines
        .next()
        .and_then(|l| l.strip_prefix("classes "))
        .ok_or_else(|| bad("missing classes line".into()))?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("items "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing or malformed items line".into()))?;

    let mut entries = Vec::with_capacity(count);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "item" {
            return Err(bad(format!("malformed item line {line:?}")));
        }
        let num = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| bad(format!("bad number {:?} in line {line:?}", fields[i])))
        };
        entries.push(ManifestEntry {
            id: num(1)? as usize,
            offset: num(2)?,
            label: num(3)? as usize,
            split: fields[4].parse().map_err(|e: Error| bad(e.to_string()))?,
            height: num(5)? as usize,
            width: num(6)? as usize,
            frames: num(7)? as usize,
        });
    }
    if entries.len() != count {
        return Err(bad(format!("items line says {count}, table has {}", entries.len())));
    }
    let manifest = DatasetManifest { class_names, entries };
    manifest.validate().map_err(|e| bad(e.to_string()))?;

    let mut videos = Vec::with_capacity(count);
    let mut expected_offset = 0u64;
    for e in &manifest.entries {
        if e.offset != expected_offset {
            return Err(bad(format!(
                "item {} at offset {}, payload places it at {expected_offset}",
                e.id, e.offset
            )));
        }
        let n = e.height * e.width * 3 * e.frames;
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + 4 * n)
            .ok_or_else(|| bad(format!("payload truncated in item {}", e.id)))?;
        let pixels = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        videos.push(Video::new(e.id, e.label, [e.height, e.width, 3, e.frames], pixels)?);
        expected_offset += 4 * n as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(bad(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset as usize
        )));
    }
    Ok(Dataset { manifest, videos })
}
