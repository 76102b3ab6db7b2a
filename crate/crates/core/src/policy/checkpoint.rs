//! Bit-stable model checkpoints: versioned header (architecture, role,
//! tokenizer vocabulary) followed by the raw little-endian f32 parameter
//! blob. Reloading reproduces distributions exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{ModelConfig, PolicyModel, Role};
use super::tokenizer::Tokenizer;

const MAGIC: &[u8; 8] = b"ROSDCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    cfg: ModelConfig,
    role: Role,
    vocab: Vec<String>,
}

pub fn save_model(path: &Path, model: &PolicyModel, tokenizer: &Tokenizer) -> Result<()> {
    let header = Header {
        version: VERSION,
        cfg: model.cfg,
        role: model.role,
        vocab: tokenizer.vocab().to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(PolicyModel, Tokenizer)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input(format!(
            "not a model checkpoint: {}",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.version != VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 4 != 0 {
        return Err(Error::Input("truncated parameter blob".into()));
    }
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let model = PolicyModel::from_parts(header.cfg, header.role, params)?;
    let tokenizer = Tokenizer::from_vocab(header.vocab);
    Ok((model, tokenizer))
}
