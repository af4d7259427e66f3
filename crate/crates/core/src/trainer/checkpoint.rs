//! Parameter files: one text header line, then little-endian `f64`s.
//!
//! ```text
//! mtssl-checkpoint dims=16,64,32 adjacency=sym_norm heads=yes
//! <encoder weights, layer by layer, row-major><decoder><link scorer><graph scorer>
//! ```

use std::fs;
use std::path::Path;

use crate::encoder::{AdjacencyMode, EncoderParams};
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::pretext::{HeadKind, TaskHeads};

const MAGIC: &str = "mtssl-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub adjacency: AdjacencyMode,
    pub heads: Option<TaskHeads>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dims: Vec<String> = ckpt.encoder.dims().iter().map(usize::to_string).collect();
    let mut out = format!(
        "{MAGIC} dims={} adjacency={} heads={}\n",
        dims.join(","),
        ckpt.adjacency.as_str(),
        if ckpt.heads.is_some() { "yes" } else { "no" }
    )
    .into_bytes();
    let mut push = |m: &DenseMatrix| {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    ckpt.encoder.layers().iter().for_each(&mut push);
    if let Some(h) = &ckpt.heads {
        HeadKind::ALL.into_iter().for_each(|k| push(h.get(k)));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad(1, "missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad(1, "header is not text".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(MAGIC) {
        return Err(bad(1, "not a checkpoint file".into()));
    }
    let (mut dims, mut adjacency, mut heads) = (None, None, None);
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| bad(1, format!("malformed field `{f}`")))?;
        match k {
            "dims" => {
                let d: std::result::Result<Vec<usize>, _> = v.split(',').map(str::parse).collect();
                dims = Some(d.map_err(|_| bad(1, format!("bad dims `{v}`")))?);
            }
            "adjacency" => {
                adjacency = Some(AdjacencyMode::parse(v).ok_or_else(|| bad(1, format!("bad adjacency `{v}`")))?)
            }
            "heads" => {
                heads = Some(match v {
                    "yes" => true,
                    "no" => false,
                    _ => return Err(bad(1, format!("bad heads flag `{v}`"))),
                })
            }
            _ => return Err(bad(1, format!("unknown field `{k}`"))),
        }
    }
    let dims = dims.ok_or_else(|| bad(1, "missing dims".into()))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(bad(1, format!("invalid dims {dims:?}")));
    }
    let adjacency = adjacency.ok_or_else(|| bad(1, "missing adjacency".into()))?;
    let heads = heads.ok_or_else(|| bad(1, "missing heads flag".into()))?;

    let payload = &bytes[nl + 1..];
    if payload.len() % 8 != 0 {
        return Err(bad(2, "payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (d_in, d_out) = (dims[0], *dims.last().unwrap());
    let mut shapes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[0], w[1])).collect();
    if heads {
        shapes.extend([(d_out, d_in), (d_out, 1), (2 * d_out, 1)]);
    }
    let expected: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if values.len() != expected {
        return Err(bad(2, format!("expected {expected} values, found {}", values.len())));
    }
    let mut offset = 0;
    let mut mats = Vec::with_capacity(shapes.len());
    for (r, c) in shapes {
        mats.push(DenseMatrix::from_vec(r, c, values[offset..offset + r * c].to_vec())?);
        offset += r * c;
    }
    let head_mats = mats.split_off(dims.len() - 1);
    let encoder = EncoderParams::from_layers(mats).map_err(|e| bad(2, e.to_string()))?;
    let heads = if heads {
        let mut it = head_mats.into_iter();
        Some(TaskHeads {
            feat_decoder: it.next().unwrap(),
            topo_scorer: it.next().unwrap(),
            ming_scorer: it.next().unwrap(),
        })
    } else {
        None
    };
    Ok(Checkpoint {
        encoder,
        adjacency,
        heads,
    })
}
