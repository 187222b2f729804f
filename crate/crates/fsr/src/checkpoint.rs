//! Binary checkpoint files.
//!
//! Layout: the magic line `FSRCKPT1\n`, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f64` in header order.
//! Values round-trip bit for bit.

use std::path::Path;

use fsr_core::trainer::{AdamState, RngState};
use fsr_core::{Checkpoint, ModelConfig, Tensor, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"FSRCKPT1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    group: Group,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RngHeader {
    seed: u64,
    stream: u64,
    /// decimal, since JSON numbers cannot carry 128 bits
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    variant: Variant,
    train: TrainConfig,
    epoch: usize,
    iteration: usize,
    adam_step: u64,
    rng: RngHeader,
    tensors: Vec<Entry>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let c = ckpt;
    if c.adam.m.len() != c.params.len() || c.adam.v.len() != c.params.len() {
        return Err(Error::Checkpoint(
            "optimizer moments do not match the parameter list".into(),
        ));
    }
    let mut entries = Vec::new();
    let mut tensors: Vec<&Tensor> = Vec::new();
    for (group, list) in [
        (Group::Param, c.params.iter().map(|(_, t)| t).collect::<Vec<_>>()),
        (Group::AdamM, c.adam.m.iter().collect()),
        (Group::AdamV, c.adam.v.iter().collect()),
    ] {
        for ((name, _), t) in c.params.iter().zip(list) {
            entries.push(Entry {
                group,
                name: name.clone(),
                shape: t.shape().to_vec(),
            });
            tensors.push(t);
        }
    }
    let header = Header {
        model: c.model,
        variant: c.variant,
        train: c.train,
        epoch: c.epoch,
        iteration: c.iteration,
        adam_step: c.adam.step,
        rng: RngHeader {
            seed: c.rng.seed,
            stream: c.rng.stream,
            word_pos: c.rng.word_pos.to_string(),
        },
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * tensors.iter().map(|t| t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn malformed(offset: usize, msg: impl Into<String>) -> Error {
    Error::Malformed {
        format: "checkpoint",
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if !bytes.starts_with(MAGIC) {
        return Err(malformed(0, "bad magic"));
    }
    let mut pos = MAGIC.len();
    let len_bytes: [u8; 8] = bytes
        .get(pos..pos + 8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| malformed(pos, "truncated header length"))?;
    pos += 8;
    let len =
        usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| malformed(MAGIC.len(), "header length overflow"))?;
    let json = bytes
        .get(pos..pos.saturating_add(len))
        .ok_or_else(|| malformed(pos, format!("header needs {len} bytes, have {}", bytes.len() - pos)))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| malformed(pos + json_offset(json, &e), e.to_string()))?;
    pos += len;

    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", header.rng.word_pos)))?;

    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in &header.tensors {
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{}: shape overflows", e.name)))?;
        let raw = bytes
            .get(pos..pos.saturating_add(n.saturating_mul(8)))
            .ok_or_else(|| malformed(bytes.len(), format!("tensor {} truncated", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
        pos += raw.len();
        match e.group {
            Group::Param => params.push((e.name.clone(), t)),
            Group::AdamM => m.push((e.name.clone(), t)),
            Group::AdamV => v.push((e.name.clone(), t)),
        }
    }
    if pos != bytes.len() {
        return Err(malformed(pos, format!("{} trailing bytes", bytes.len() - pos)));
    }
    let names: Vec<&String> = params.iter().map(|(n, _)| n).collect();
    for (group, list) in [("adam_m", &m), ("adam_v", &v)] {
        if list.iter().map(|(n, _)| n).ne(names.iter().copied()) {
            return Err(Error::Checkpoint(format!(
                "{group} tensors do not line up with the parameters"
            )));
        }
    }
    Ok(Checkpoint {
        model: header.model,
        variant: header.variant,
        train: header.train,
        epoch: header.epoch,
        iteration: header.iteration,
        params,
        adam: AdamState {
            m: m.into_iter().map(|(_, t)| t).collect(),
            v: v.into_iter().map(|(_, t)| t).collect(),
            step: header.adam_step,
        },
        rng: RngState {
            seed: header.rng.seed,
            stream: header.rng.stream,
            word_pos,
        },
    })
}

/// Byte offset within `json` of a parse error's line and column.
fn json_offset(json: &[u8], e: &serde_json::Error) -> usize {
    let mut line = 1;
    for (i, &b) in json.iter().enumerate() {
        if line == e.line() {
            return (i + e.column().saturating_sub(1)).min(json.len());
        }
        if b == b'\n' {
            line += 1;
        }
    }
    json.len()
}

pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    // write-then-rename so an interrupted save leaves the old file intact
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
