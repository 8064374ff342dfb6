//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DASN" | u32 version | u32 flags | str name | u64 seed | u32 epochs | u8 fv mode
//! u32 H | u32 W | u32 C | u32 layer count
//! per layer: str name | u8 kind | u8 relu | u8 pool | 5 x u32 geometry
//! per layer payload:
//!   float: f32 weights | f32 biases
//!   int8:  f32 scale | i8 codes | f32 biases
//! u8 has_rates, then per layer: u8 present | f64 rate
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Flag bit 0 marks an 8-bit
//! weight payload, bit 1 a weight-pruned network whose zero fc weights must
//! stay pinned after loading.

use std::fs;
use std::path::Path;

use super::network::{LayerKind, LayerParams, LayerSpec, Network, TrainingMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wta::FvMode;

pub const MAGIC: &[u8; 4] = b"DASN";
pub const VERSION: u32 = 1;
pub const FLAG_INT8: u32 = 1;
pub const FLAG_PRUNED: u32 = 2;

/// Symmetric 8-bit weight codes of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Weights {
    pub codes: Vec<i8>,
    pub scale: f32,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Argument(format!("{v} does not fit the checkpoint format")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes `net`. With `int8` set, weights are written as codes with one
/// scale per layer instead of floats.
pub fn encode(net: &Network, int8: Option<&[Int8Weights]>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0u32;
    if int8.is_some() {
        flags |= FLAG_INT8;
    }
    if net.has_weight_masks() {
        flags |= FLAG_PRUNED;
    }
    buf.extend_from_slice(&flags.to_le_bytes());
    put_str(&mut buf, net.name())?;
    buf.extend_from_slice(&net.meta.seed.to_le_bytes());
    buf.extend_from_slice(&net.meta.epochs_completed.to_le_bytes());
    buf.push(match net.fv_mode() {
        FvMode::Max => 0,
        FvMode::Mean => 1,
    });
    for d in net.input_shape() {
        put_u32(&mut buf, d)?;
    }
    put_u32(&mut buf, net.num_layers())?;
    for l in net.layers() {
        put_str(&mut buf, &l.name)?;
        let geometry = match l.kind {
            LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                stride,
                pad,
            } => {
                buf.push(0);
                [kernel, in_channels, out_channels, stride, pad]
            }
            LayerKind::Fc { inputs, outputs } => {
                buf.push(1);
                [inputs, outputs, 0, 0, 0]
            }
        };
        buf.push(l.relu as u8);
        buf.push(l.pool as u8);
        for g in geometry {
            put_u32(&mut buf, g)?;
        }
    }
    if let Some(q) = int8 {
        if q.len() != net.num_layers() {
            return Err(Error::Shape(format!("{} quantized layers for {}", q.len(), net.num_layers())));
        }
    }
    for (i, p) in net.params().iter().enumerate() {
        match int8 {
            Some(q) => {
                if q[i].codes.len() != p.weights.len() {
                    return Err(Error::Shape(format!("layer {i}: {} codes for {} weights", q[i].codes.len(), p.weights.len())));
                }
                buf.extend_from_slice(&q[i].scale.to_le_bytes());
                buf.extend(q[i].codes.iter().map(|&c| c as u8));
            }
            None => put_f32s(&mut buf, p.weights.data()),
        }
        put_f32s(&mut buf, p.bias.data());
    }
    let rates = net.winner_rates();
    let has_rates = rates.iter().any(Option::is_some);
    buf.push(has_rates as u8);
    if has_rates {
        for r in rates {
            buf.push(r.is_some() as u8);
            buf.extend_from_slice(&r.unwrap_or(0.0).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    write_bytes(path, &encode(net, None)?)
}

pub fn save_int8(net: &Network, weights: &[Int8Weights], path: &Path) -> Result<()> {
    write_bytes(path, &encode(net, Some(weights))?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("expected {n} more bytes, found {}", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, at as u64, "string is not UTF-8"))
    }

    fn err(&self, msg: &str) -> Error {
        Error::format(self.path, self.pos as u64, msg)
    }
}

/// A decoded checkpoint. `int8` holds the raw codes when the payload was quantized;
/// the network then carries the dequantized weights.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub int8: Option<Vec<Int8Weights>>,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, 0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
    }
    let flags = r.u32()?;
    let name = r.string()?;
    let seed = r.u64()?;
    let epochs_completed = r.u32()?;
    let fv_mode = match r.u8()? {
        0 => FvMode::Max,
        1 => FvMode::Mean,
        other => return Err(r.err(&format!("unknown feature-vector mode {other}"))),
    };
    let input_shape = [r.usize()?, r.usize()?, r.usize()?];
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let lname = r.string()?;
        let kind_tag = r.u8()?;
        let relu = r.u8()? != 0;
        let pool = r.u8()? != 0;
        let g = [r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?];
        let kind = match kind_tag {
            0 => LayerKind::Conv {
                kernel: g[0],
                in_channels: g[1],
                out_channels: g[2],
                stride: g[3],
                pad: g[4],
            },
            1 => LayerKind::Fc {
                inputs: g[0],
                outputs: g[1],
            },
            other => return Err(r.err(&format!("unknown layer kind {other}"))),
        };
        layers.push(LayerSpec {
            name: lname,
            kind,
            relu,
            pool,
            wta: None,
        });
    }
    let int8 = flags & FLAG_INT8 != 0;
    let mut params = Vec::with_capacity(layers.len());
    let mut codes = Vec::new();
    for l in &layers {
        let (wshape, outputs) = match l.kind {
            LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => (vec![out_channels, in_channels * kernel * kernel], out_channels),
            LayerKind::Fc { inputs, outputs } => (vec![inputs, outputs], outputs),
        };
        let n: usize = wshape.iter().product();
        let weights = if int8 {
            let scale = r.f32()?;
            let c: Vec<i8> = r.take(n)?.iter().map(|&b| b as i8).collect();
            let w = c.iter().map(|&v| v as f32 * scale).collect();
            codes.push(Int8Weights { codes: c, scale });
            w
        } else {
            r.f32s(n)?
        };
        let bias = r.f32s(outputs)?;
        params.push(LayerParams {
            weights: Tensor::new(wshape, weights)?,
            bias: Tensor::new(vec![outputs], bias)?,
        });
    }
    let meta = TrainingMeta { seed, epochs_completed };
    let mut network = Network::from_parts(&name, input_shape, layers, params, fv_mode, meta)?;
    if r.u8()? != 0 {
        let mut rates = Vec::with_capacity(network.num_layers());
        for _ in 0..network.num_layers() {
            let present = r.u8()? != 0;
            let rate = r.f64()?;
            rates.push(present.then_some(rate));
        }
        network.set_winner_rates(&rates)?;
    }
    if r.pos != bytes.len() {
        return Err(r.err(&format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if flags & FLAG_PRUNED != 0 {
        for i in 0..network.num_layers() {
            if network.layer(i).kind.is_conv() {
                continue;
            }
            let keep: Vec<bool> = network.params()[i].weights.data().iter().map(|&w| w != 0.0).collect();
            if keep.iter().any(|k| !k) {
                network.set_weight_mask(i, keep)?;
            }
        }
    }
    Ok(Checkpoint {
        network,
        int8: int8.then_some(codes),
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads a checkpoint and returns only the network.
pub fn load_network(path: &Path) -> Result<Network> {
    Ok(load(path)?.network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{build_network, NetName};

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dasn");
        let mut net = build_network(NetName::LeNet4, 11);
        net.meta.epochs_completed = 3;
        net.set_fv_mode(FvMode::Mean);
        net.set_winner_rates(&[Some(0.4375), None, Some(0.2), None]).unwrap();
        save(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(&fs::read(&path).unwrap()[..4], b"DASN");
    }

    #[test]
    fn pruned_flag_restores_weight_masks() {
        let mut net = build_network(NetName::Mlp3, 1);
        let keep: Vec<bool> = (0..net.params()[1].weights.len()).map(|i| i % 3 == 0).collect();
        net.set_weight_mask(1, keep.clone()).unwrap();
        let bytes = encode(&net, None).unwrap();
        let back = decode(&bytes, Path::new("mem")).unwrap().network;
        assert_eq!(back.weight_mask(1), Some(keep.as_slice()));
        assert_eq!(back.weight_mask(0), None);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let net = build_network(NetName::Mlp3, 2);
        let bytes = encode(&net, None).unwrap();
        let p = Path::new("x");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, p), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 10], p), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long, p).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode(&version, p), Err(Error::Format { offset: 4, .. })));
    }
}
