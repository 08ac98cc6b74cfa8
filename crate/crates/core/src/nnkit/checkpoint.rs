//! Checkpoint files: the 8-byte magic `HETCDNN1`, a little-endian u64 header
//! length, a JSON header (layer specs, seeds, tensor shapes, free-form
//! metadata such as step counts), then every parameter as a little-endian f64
//! in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::network::{Network, NetworkParams};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Error, Result};

const MAGIC: &[u8; 8] = b"HETCDNN1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(String, Network)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&Network> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    networks: Vec<NetHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    name: String,
    seed: u64,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

pub fn write_checkpoint(path: impl AsRef<Path>, networks: &[(&str, &Network)], meta: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format: 1,
        networks: networks
            .iter()
            .map(|(name, net)| NetHeader {
                name: name.to_string(),
                seed: net.params().seed,
                layers: net.layers().to_vec(),
                shapes: net.params().tensors.iter().map(|t| t.shape().to_vec()).collect(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let payload: usize = networks.iter().map(|(_, n)| n.param_count()).sum();
    let mut bytes = Vec::with_capacity(16 + json.len() + payload * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, net) in networks {
        for t in &net.params().tensors {
            for v in t.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(invalid!("{} is not a network checkpoint", path.display()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| shape_err!("{}: truncated header", path.display()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    if header.format != 1 {
        return Err(invalid!("{}: unsupported checkpoint format {}", path.display(), header.format));
    }
    let mut payload = bytes[16 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut networks = Vec::new();
    for nh in header.networks {
        let mut tensors = Vec::new();
        for shape in nh.shapes {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = payload.by_ref().take(n).collect();
            if values.len() != n {
                return Err(shape_err!("{}: payload too short", path.display()));
            }
            tensors.push(Tensor::new(shape, values)?);
        }
        let net = Network::from_parts(nh.layers, NetworkParams { seed: nh.seed, tensors })?;
        networks.push((nh.name, net));
    }
    if payload.next().is_some() {
        return Err(shape_err!("{}: trailing payload bytes", path.display()));
    }
    Ok(Checkpoint { networks, meta: header.meta })
}
