//! Network serialization: magic "SNTR1", then per layer a one-byte tag,
//! little-endian u32 shape integers and little-endian f64 parameters.
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ConvLayer, DenseLayer, Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"SNTR1";

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;
const TAG_DROPOUT: u8 = 6;

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Network> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        Network::read_from(&mut r, &path.display().to_string())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    w.write_all(&[TAG_CONV])?;
                    w.write_all(&(c.in_channels as u32).to_le_bytes())?;
                    w.write_all(&(c.out_channels as u32).to_le_bytes())?;
                    write_f64s(w, c.weights.data())?;
                    write_f64s(w, &c.biases)?;
                }
                Layer::ReLU => w.write_all(&[TAG_RELU])?,
                Layer::MaxPool => w.write_all(&[TAG_MAXPOOL])?,
                Layer::Flatten => w.write_all(&[TAG_FLATTEN])?,
                Layer::Dense(d) => {
                    w.write_all(&[TAG_DENSE])?;
                    w.write_all(&(d.in_size as u32).to_le_bytes())?;
                    w.write_all(&(d.out_size as u32).to_le_bytes())?;
                    write_f64s(w, d.weights.data())?;
                    write_f64s(w, &d.biases)?;
                }
                Layer::Dropout(rate) => {
                    w.write_all(&[TAG_DROPOUT])?;
                    w.write_all(&rate.to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_from(r: &mut impl Read, path: &str) -> Result<Network> {
        let io_err = |e: std::io::Error| Error::io(path.to_string(), e);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::InvalidInput(format!("{path}: not a network file (bad magic)")));
        }
        let mut layers = Vec::new();
        loop {
            let mut tag = [0u8; 1];
            match r.read_exact(&mut tag) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(io_err(e)),
            }
            let layer = match tag[0] {
                TAG_CONV => {
                    let in_channels = read_u32(r).map_err(io_err)? as usize;
                    let out_channels = read_u32(r).map_err(io_err)? as usize;
                    let weights = read_f64s(r, out_channels * in_channels * 9).map_err(io_err)?;
                    let biases = read_f64s(r, out_channels).map_err(io_err)?;
                    Layer::Conv(ConvLayer {
                        in_channels,
                        out_channels,
                        weights: Tensor::from_vec(&[out_channels, in_channels, 3, 3], weights)?,
                        biases,
                    })
                }
                TAG_RELU => Layer::ReLU,
                TAG_MAXPOOL => Layer::MaxPool,
                TAG_FLATTEN => Layer::Flatten,
                TAG_DENSE => {
                    let in_size = read_u32(r).map_err(io_err)? as usize;
                    let out_size = read_u32(r).map_err(io_err)? as usize;
                    let weights = read_f64s(r, out_size * in_size).map_err(io_err)?;
                    let biases = read_f64s(r, out_size).map_err(io_err)?;
                    Layer::Dense(DenseLayer {
                        in_size,
                        out_size,
                        weights: Tensor::from_vec(&[out_size, in_size], weights)?,
                        biases,
                    })
                }
                TAG_DROPOUT => {
                    let mut buf = [0u8; 8];
                    r.read_exact(&mut buf).map_err(io_err)?;
                    Layer::Dropout(f64::from_le_bytes(buf))
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "{path}: unknown layer tag {other}"
                    )))
                }
            };
            layers.push(layer);
        }
        if layers.is_empty() {
            return Err(Error::InvalidInput(format!("{path}: network file has no layers")));
        }
        Ok(Network { layers })
    }
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
