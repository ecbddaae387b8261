//! `.gnet` checkpoint container.
//!
//! A plain-text header (one `key=value` per line) followed by a binary
//! payload of little-endian `f32` values:
//!
//! ```text
//! GNET-CHECKPOINT
//! version=1
//! encoder_widths=16,32,64,128,256,512
//! decoder_widths=256,128,64,32,16
//! n_decode_levels=3
//! input_channels=3
//! output_channels=1
//! patch_side=128
//! t_steps=2
//! seed=42
//! adam_state=1
//! step_count=0
//! tensor=enc0.f.b w 16 0
//! ...
//! payload_bytes=...
//! payload_sha256=...
//! header_sha256=...
//! END
//! <payload>
//! ```
//!
//! `tensor=` lines carry name, role (`w` weight, `m`/`v` Adam moments),
//! comma-separated shape and byte offset into the payload. `header_sha256`
//! covers every header byte before its own line.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::net::arch::NablaArchitecture;
use crate::net::nabla::{check_store, NablaNet};
use crate::nn::{Param, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &str = "GNET-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "gnet";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialises weights, architecture, seed and (optionally) Adam state.
pub fn checkpoint_bytes(net: &NablaNet, with_adam: bool) -> Vec<u8> {
    let arch = &net.arch;
    let mut header = String::new();
    let mut payload: Vec<u8> = Vec::new();
    let _ = writeln!(header, "{MAGIC}");
    let _ = writeln!(header, "version={FORMAT_VERSION}");
    let _ = writeln!(header, "encoder_widths={}", join(&arch.encoder_widths));
    let _ = writeln!(header, "decoder_widths={}", join(&arch.decoder_widths));
    let _ = writeln!(header, "n_decode_levels={}", arch.n_decode_levels);
    let _ = writeln!(header, "input_channels={}", arch.input_channels);
    let _ = writeln!(header, "output_channels={}", arch.output_channels);
    let _ = writeln!(header, "patch_side={}", arch.patch_side);
    let _ = writeln!(header, "t_steps={}", arch.t_steps);
    let _ = writeln!(header, "seed={}", net.seed);
    let _ = writeln!(header, "adam_state={}", with_adam as u8);
    let _ = writeln!(header, "step_count={}", net.params.step_count());
    for (name, param) in net.params.iter() {
        let mut roles = vec![("w", &param.weight)];
        if with_adam {
            roles.push(("m", &param.adam_m));
            roles.push(("v", &param.adam_v));
        }
        for (role, t) in roles {
            let _ = writeln!(
                header,
                "tensor={name} {role} {} {}",
                join(t.shape()),
                payload.len()
            );
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let _ = writeln!(header, "payload_bytes={}", payload.len());
    let _ = writeln!(header, "payload_sha256={}", sha256_hex(&payload));
    let digest = sha256_hex(header.as_bytes());
    let _ = writeln!(header, "header_sha256={digest}");
    header.push_str("END\n");

    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn save_checkpoint(net: &NablaNet, path: &Path, with_adam: bool) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net, with_adam)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NablaNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_checkpoint(&bytes)?)
}

/// Loads a checkpoint and refuses it unless its architecture equals `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &NablaArchitecture) -> Result<NablaNet> {
    let net = load_checkpoint(path)?;
    if &net.arch != expected {
        return Err(CheckpointError::ArchMismatch(format!(
            "file has encoder widths {:?} (decode levels {}, t {}, patch {}), expected {:?} (decode levels {}, t {}, patch {})",
            net.arch.encoder_widths,
            net.arch.n_decode_levels,
            net.arch.t_steps,
            net.arch.patch_side,
            expected.encoder_widths,
            expected.n_decode_levels,
            expected.t_steps,
            expected.patch_side
        ))
        .into());
    }
    Ok(net)
}

struct IndexEntry {
    name: String,
    role: char,
    shape: Vec<usize>,
    offset: usize,
}

impl IndexEntry {
    fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * 4
    }
}

fn header_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Header(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CheckpointError> {
    value
        .trim()
        .parse()
        .map_err(|_| header_err(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CheckpointError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v)).collect()
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<NablaNet, CheckpointError> {
    let magic_line = format!("{MAGIC}\n");
    if !bytes.starts_with(magic_line.as_bytes()) {
        return Err(CheckpointError::BadMagic);
    }
    let end_marker = b"\nEND\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| header_err("missing END marker"))?;
    let header_bytes = &bytes[..header_end + 1];
    let payload = &bytes[header_end + end_marker.len()..];
    let header =
        std::str::from_utf8(header_bytes).map_err(|_| header_err("header is not UTF-8"))?;

    let mut lines = header.lines().skip(1);
    let version_line = lines.next().ok_or_else(|| header_err("missing version"))?;
    let version: u32 = match version_line.split_once('=') {
        Some(("version", v)) => parse_num("version", v)?,
        _ => return Err(header_err("second line must be version=")),
    };
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let digest_pos = header
        .rfind("header_sha256=")
        .ok_or_else(|| header_err("missing header_sha256"))?;
    let claimed = header[digest_pos + "header_sha256=".len()..].trim();
    if sha256_hex(&header_bytes[..digest_pos]) != claimed {
        return Err(CheckpointError::HeaderChecksum);
    }

    let mut arch = NablaArchitecture {
        encoder_widths: Vec::new(),
        decoder_widths: Vec::new(),
        n_decode_levels: 0,
        input_channels: 0,
        output_channels: 0,
        patch_side: 0,
        t_steps: 0,
    };
    let mut seed = None;
    let mut adam = None;
    let mut step_count = None;
    let mut payload_bytes = None;
    let mut payload_digest = None;
    let mut index = Vec::new();
    for line in header.lines().skip(2) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| header_err(format!("malformed line {line:?}")))?;
        match key {
            "encoder_widths" => arch.encoder_widths = parse_list(key, value)?,
            "decoder_widths" => arch.decoder_widths = parse_list(key, value)?,
            "n_decode_levels" => arch.n_decode_levels = parse_num(key, value)?,
            "input_channels" => arch.input_channels = parse_num(key, value)?,
            "output_channels" => arch.output_channels = parse_num(key, value)?,
            "patch_side" => arch.patch_side = parse_num(key, value)?,
            "t_steps" => arch.t_steps = parse_num(key, value)?,
            "seed" => seed = Some(parse_num::<u64>(key, value)?),
            "adam_state" => adam = Some(parse_num::<u8>(key, value)? == 1),
            "step_count" => step_count = Some(parse_num::<u64>(key, value)?),
            "payload_bytes" => payload_bytes = Some(parse_num::<usize>(key, value)?),
            "payload_sha256" => payload_digest = Some(value.trim().to_string()),
            "header_sha256" => {}
            "tensor" => {
                let fields: Vec<&str> = value.split(' ').collect();
                let [name, role, shape, offset] = fields[..] else {
                    return Err(header_err(format!("tensor line {value:?} needs 4 fields")));
                };
                let role = match role {
                    "w" | "m" | "v" => role.chars().next().unwrap(),
                    other => return Err(header_err(format!("unknown tensor role {other:?}"))),
                };
                index.push(IndexEntry {
                    name: name.to_string(),
                    role,
                    shape: parse_list("tensor shape", shape)?,
                    offset: parse_num("tensor offset", offset)?,
                });
            }
            other => return Err(header_err(format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| header_err(format!("missing {k}"));
    let seed = seed.ok_or_else(|| missing("seed"))?;
    let adam = adam.ok_or_else(|| missing("adam_state"))?;
    let step_count = step_count.ok_or_else(|| missing("step_count"))?;
    let payload_bytes = payload_bytes.ok_or_else(|| missing("payload_bytes"))?;
    let payload_digest = payload_digest.ok_or_else(|| missing("payload_sha256"))?;

    if payload.len() < payload_bytes {
        return Err(CheckpointError::Truncated {
            expected: payload_bytes,
            found: payload.len(),
        });
    }
    if payload.len() > payload_bytes {
        return Err(CheckpointError::Index(format!(
            "{} trailing bytes after payload",
            payload.len() - payload_bytes
        )));
    }
    if sha256_hex(payload) != payload_digest {
        return Err(CheckpointError::PayloadChecksum);
    }

    arch.validate()
        .map_err(|e| CheckpointError::Index(format!("descriptor invalid: {e}")))?;

    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(index.len());
    for e in &index {
        if e.shape.is_empty() || e.shape.iter().any(|&d| d == 0) {
            return Err(CheckpointError::Index(format!("{}: empty shape", e.name)));
        }
        let end = e.offset + e.byte_len();
        if end > payload_bytes || e.offset % 4 != 0 {
            return Err(CheckpointError::Index(format!(
                "{} ({}) spans bytes {}..{end} outside payload of {payload_bytes}",
                e.name, e.role, e.offset
            )));
        }
        spans.push((e.offset, end));
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(CheckpointError::Index("overlapping tensor spans".into()));
    }

    let read = |e: &IndexEntry| -> Tensor {
        let data = payload[e.offset..e.offset + e.byte_len()]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(e.shape.clone(), data).expect("length checked against shape")
    };

    let mut store = ParamStore::new();
    let weights: Vec<&IndexEntry> = index.iter().filter(|e| e.role == 'w').collect();
    for w in &weights {
        let moment = |role: char| -> Result<Tensor, CheckpointError> {
            if !adam {
                return Ok(Tensor::zeros(&w.shape));
            }
            let e = index
                .iter()
                .find(|e| e.name == w.name && e.role == role)
                .ok_or_else(|| CheckpointError::Index(format!("{}: missing {role}", w.name)))?;
            if e.shape != w.shape {
                return Err(CheckpointError::Index(format!(
                    "{}: moment shape {:?} differs from weight {:?}",
                    w.name, e.shape, w.shape
                )));
            }
            Ok(read(e))
        };
        let param = Param {
            weight: read(w),
            adam_m: moment('m')?,
            adam_v: moment('v')?,
        };
        store
            .insert_param(w.name.clone(), param)
            .map_err(|e| CheckpointError::Index(e.to_string()))?;
    }
    let expected_entries = weights.len() * if adam { 3 } else { 1 };
    if index.len() != expected_entries {
        return Err(CheckpointError::Index(format!(
            "{} index entries for {} tensors",
            index.len(),
            weights.len()
        )));
    }
    store.set_step_count(step_count);
    check_store(&arch, &store).map_err(|e| CheckpointError::Index(e.to_string()))?;

    Ok(NablaNet {
        arch,
        params: store,
        seed,
    })
}
