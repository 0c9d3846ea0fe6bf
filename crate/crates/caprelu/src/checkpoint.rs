//! Versioned binary checkpoints: "CRLU" magic, u32 version, JSON header
//! describing the architecture, then row-major little-endian f64 parameter
//! blobs in layer order. Round-trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::network::{DenseLayer, Network};

pub const MAGIC: [u8; 4] = *b"CRLU";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    activations: Vec<ActivationKind>,
    cap_values: Vec<Option<f64>>,
    init_seed: Option<u64>,
}

/// Writes the network to `path` (atomically: temp file + rename).
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    net.validate()?;

    let header = Header {
        dims: net.dims(),
        activations: net.activations(),
        cap_values: net.layers.iter().map(|l| l.activation.cap()).collect(),
        init_seed: net.init_seed,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::CheckpointCorrupt(format!("header serialization failed: {e}")))?;

    let tmp = path.with_extension("crlu.tmp");
    {
        let file = File::create(&tmp).map_err(Error::io(&tmp))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
            out.write_all(bytes).map_err(Error::io(&tmp))
        };
        write(&mut out, &MAGIC)?;
        write(&mut out, &VERSION.to_le_bytes())?;
        write(&mut out, &(header_json.len() as u64).to_le_bytes())?;
        write(&mut out, &header_json)?;
        for layer in &net.layers {
            for &w in layer.weights.as_slice().expect("standard layout") {
                write(&mut out, &w.to_le_bytes())?;
            }
            for &b in layer.bias.as_slice().expect("standard layout") {
                write(&mut out, &b.to_le_bytes())?;
            }
        }
        out.flush().map_err(Error::io(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CheckpointCorrupt(format!("file truncated while reading {what}"))
        } else {
            Error::CheckpointCorrupt(format!("read failed at {what}: {e}"))
        }
    })
}

/// Reads a checkpoint back into a validated [`Network`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointCorrupt(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut word = [0u8; 4];
    read_exact(&mut reader, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: VERSION,
        });
    }
    let mut len_bytes = [0u8; 8];
    read_exact(&mut reader, &mut len_bytes, "header length")?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    read_exact(&mut reader, &mut header_json, "header")?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::CheckpointCorrupt(format!("bad header JSON: {e}")))?;

    if header.activations.len() + 1 != header.dims.len() {
        return Err(Error::CheckpointCorrupt(format!(
            "{} dims with {} activations",
            header.dims.len(),
            header.activations.len()
        )));
    }
    for (activation, cap) in header.activations.iter().zip(&header.cap_values) {
        if activation.cap() != *cap {
            return Err(Error::CheckpointCorrupt(
                "cap values disagree with activation kinds".into(),
            ));
        }
    }

    let mut layers = Vec::with_capacity(header.activations.len());
    let mut f64_bytes = [0u8; 8];
    for (l, &activation) in header.activations.iter().enumerate() {
        let (in_dim, out_dim) = (header.dims[l], header.dims[l + 1]);
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            read_exact(&mut reader, &mut f64_bytes, "weights")?;
            weights.push(f64::from_le_bytes(f64_bytes));
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            read_exact(&mut reader, &mut f64_bytes, "bias")?;
            bias.push(f64::from_le_bytes(f64_bytes));
        }
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((out_dim, in_dim), weights).expect("sized above"),
            bias: Array1::from_vec(bias),
            activation,
        });
    }

    let mut trailing = [0u8; 1];
    match reader.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::CheckpointCorrupt(
                "trailing bytes after parameter blobs".into(),
            ))
        }
        Err(e) => return Err(Error::CheckpointCorrupt(format!("read failed at tail: {e}"))),
    }

    let net = Network::from_parts(header.dims[0], *header.dims.last().unwrap(), layers, header.init_seed);
    net.validate()
        .map_err(|e| Error::CheckpointCorrupt(format!("inconsistent architecture: {e}")))?;
    Ok(net)
}
