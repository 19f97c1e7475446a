//! Model checkpoints: a line-oriented header followed by the flat parameter
//! vector, either as decimal text (one value per line) or as raw
//! little-endian `f64` bytes.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{EncoderConfig, ModelConfig, ModelParams, Ordering};

const MAGIC: &str = "span-pointer-checkpoint 1";
const END_HEADER: &str = "end_header";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Text,
    Binary,
}

impl fmt::Display for CheckpointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointFormat::Text => "text",
            CheckpointFormat::Binary => "binary",
        })
    }
}

impl FromStr for CheckpointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(CheckpointFormat::Text),
            "binary" => Ok(CheckpointFormat::Binary),
            other => Err(Error::InvalidArgument(format!(
                "checkpoint format must be text or binary, got {other:?}"
            ))),
        }
    }
}

/// Everything in the header besides the model shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub vocab_hash: String,
}

pub fn checkpoint_bytes(params: &ModelParams, meta: &CheckpointMeta, format: CheckpointFormat) -> Vec<u8> {
    let e = params.config.encoder;
    let flat = params.to_flat();
    let mut out = format!(
        "{MAGIC}\nformat {format}\ncontext_dim {}\npos_dim {}\nvocab_size {}\nrecurrent {}\nordering {}\nseed {}\nvocab_hash {}\nparam_count {}\n{END_HEADER}\n",
        e.context_dim,
        e.pos_dim,
        e.vocab_size,
        e.recurrent,
        params.ordering(),
        meta.seed,
        meta.vocab_hash,
        flat.len()
    )
    .into_bytes();
    match format {
        CheckpointFormat::Text => {
            for v in &flat {
                out.extend_from_slice(format!("{v:?}\n").as_bytes());
            }
        }
        CheckpointFormat::Binary => {
            for v in &flat {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut header = Vec::new();
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        pos += nl + 1;
        if line == END_HEADER {
            break;
        }
        header.push(line.to_string());
    }
    if header.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("not a checkpoint file (bad magic line)".into()));
    }
    let field = |key: &str| -> Result<&str> {
        header[1..]
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(format!("header lacks {key}")))
    };
    fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("bad value for {key}: {v:?}")))
    }
    let format: CheckpointFormat = field("format")?.parse()?;
    let encoder = EncoderConfig {
        context_dim: num("context_dim", field("context_dim")?)?,
        pos_dim: num("pos_dim", field("pos_dim")?)?,
        vocab_size: num("vocab_size", field("vocab_size")?)?,
        recurrent: num("recurrent", field("recurrent")?)?,
    };
    let ordering: Ordering = field("ordering")?.parse()?;
    let meta = CheckpointMeta {
        seed: num("seed", field("seed")?)?,
        vocab_hash: field("vocab_hash")?.to_string(),
    };
    let count: usize = num("param_count", field("param_count")?)?;
    let body = &bytes[pos..];
    let flat: Vec<f64> = match format {
        CheckpointFormat::Text => {
            let text = std::str::from_utf8(body).map_err(|_| bad("body is not UTF-8".into()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| num::<f64>("parameter", l.trim()))
                .collect::<Result<_>>()?
        }
        CheckpointFormat::Binary => {
            if body.len() != count * 8 {
                return Err(bad(format!("expected {} body bytes, found {}", count * 8, body.len())));
            }
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
    };
    if flat.len() != count {
        return Err(bad(format!("header promises {count} values, body has {}", flat.len())));
    }
    let params = ModelParams::from_flat(ModelConfig { encoder, ordering }, &flat)?;
    if !params.all_finite() {
        return Err(bad("checkpoint contains non-finite values".into()));
    }
    Ok((params, meta))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    meta: &CheckpointMeta,
    format: CheckpointFormat,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(params, meta, format)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointMeta)> {
    let path = path.as_ref();
    parse_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
