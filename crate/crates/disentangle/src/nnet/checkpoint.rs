//! `NNET v1` checkpoint: one JSON header line (spec, step count, seed)
//! followed by the parameters as little-endian f64, weights then bias per
//! layer, in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

use super::{Activation, Network, NetworkSpec, NnetError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step_count: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    l2_coeff: f64,
    step_count: u64,
    seed: u64,
}

pub fn save_network(net: &Network, meta: &CheckpointMeta, path: &Path) -> Result<(), NnetError> {
    let header = Header {
        format: "NNET v1".to_string(),
        layer_dims: net.spec().layer_dims.clone(),
        hidden_activation: net.spec().hidden_activation,
        l2_coeff: net.spec().l2_coeff,
        step_count: meta.step_count,
        seed: meta.seed,
    };
    let mut w = BufWriter::new(File::create(path)?);
    let header_json =
        serde_json::to_string(&header).map_err(|e| NnetError::BadCheckpoint(e.to_string()))?;
    w.write_all(header_json.as_bytes())?;
    w.write_all(b"\n")?;
    for k in 0..net.n_layers() {
        for v in net.weight(k).data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in net.bias(k) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, CheckpointMeta), NnetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(NnetError::BadCheckpoint("missing header line".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 64 * 1024 {
            return Err(NnetError::BadCheckpoint("unreasonably long header".into()));
        }
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| NnetError::BadCheckpoint(format!("bad header json: {e}")))?;
    if header.format != "NNET v1" {
        return Err(NnetError::BadCheckpoint(format!(
            "unsupported format {:?}",
            header.format
        )));
    }
    let spec = NetworkSpec {
        layer_dims: header.layer_dims,
        hidden_activation: header.hidden_activation,
        l2_coeff: header.l2_coeff,
    };
    let mut net = Network::init(spec, 0)?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = net.n_params() * 8;
    if payload.len() != expected {
        return Err(NnetError::BadCheckpoint(format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for k in 0..net.n_layers() {
        let (rows, cols) = (net.weight(k).rows(), net.weight(k).cols());
        let mut w = Mat::zeros(rows, cols);
        for v in w.data_mut() {
            *v = values.next().unwrap();
        }
        *net.weight_mut(k) = w;
        for b in net.bias_mut(k) {
            *b = values.next().unwrap();
        }
    }
    if !net.params_finite() {
        return Err(NnetError::BadCheckpoint("non-finite parameter".into()));
    }
    Ok((net, CheckpointMeta { step_count: header.step_count, seed: header.seed }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("disentangle-nnet-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let net = Network::init(NetworkSpec::relu(vec![7, 5, 3]), 21).unwrap();
        let meta = CheckpointMeta { step_count: 17, seed: 21 };
        let path = tmp("net.nnet");
        save_network(&net, &meta, &path).unwrap();
        let (loaded, loaded_meta) = load_network(&path).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = Network::init(NetworkSpec::relu(vec![4, 2]), 0).unwrap();
        let path = tmp("trunc.nnet");
        save_network(&net, &CheckpointMeta::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_network(&path), Err(NnetError::BadCheckpoint(_))));
    }
}
