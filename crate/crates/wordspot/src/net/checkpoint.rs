//! Model checkpoint file: magic `RPH1`, a length-prefixed JSON header with
//! the architecture descriptor, input mean and PHOC config hash, then every
//! parameter as little-endian f64 in declaration order (conv kernels and
//! biases layer by layer, then head weights and biases).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::tensor::Tensor;
use crate::net::{ArchConfig, ModelParams, TrunkLayer};

const MAGIC: &[u8; 4] = b"RPH1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    input_mean: f64,
    phoc_hash: String,
}

pub fn checkpoint_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        arch: params.arch.clone(),
        input_mean: params.input_mean,
        phoc_hash: params.phoc_hash.clone(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;

    let mut bytes = Vec::with_capacity(header.len() + 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    let mut push = |values: &[f64]| {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (k, b) in params.conv_kernels.iter().zip(&params.conv_bias) {
        push(&k.data);
        push(b);
    }
    for (w, b) in params.fc_weights.iter().zip(&params.fc_bias) {
        push(&w.data);
        push(b);
    }
    Ok(bytes)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.arch.validate()?;

    let mut cursor = 8 + header_len;
    let mut read = |count: usize| -> Result<Vec<f64>> {
        let need = count * 8;
        if bytes.len() < cursor + need {
            return Err(Error::Format("truncated checkpoint parameters".into()));
        }
        let out = bytes[cursor..cursor + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += need;
        Ok(out)
    };

    let mut conv_kernels = Vec::new();
    let mut conv_bias = Vec::new();
    let mut c_in = 1usize;
    for layer in &header.arch.trunk {
        if let TrunkLayer::Conv { out_channels, kernel } = layer {
            let shape = [*out_channels, c_in, *kernel, *kernel];
            let numel: usize = shape.iter().product();
            conv_kernels.push(Tensor::from_vec(&shape, read(numel)?)?);
            conv_bias.push(read(*out_channels)?);
            c_in = *out_channels;
        }
    }
    let mut fc_weights = Vec::new();
    let mut fc_bias = Vec::new();
    let mut dims = vec![header.arch.head_input_dim()];
    dims.extend_from_slice(&header.arch.head_hidden);
    dims.push(header.arch.output_dim);
    for i in 0..dims.len() - 1 {
        fc_weights.push(Tensor::from_vec(&[dims[i], dims[i + 1]], read(dims[i] * dims[i + 1])?)?);
        fc_bias.push(read(dims[i + 1])?);
    }
    if cursor != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - cursor
        )));
    }

    Ok(ModelParams {
        arch: header.arch,
        conv_kernels,
        conv_bias,
        fc_weights,
        fc_bias,
        input_mean: header.input_mean,
        phoc_hash: header.phoc_hash,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes)
}
