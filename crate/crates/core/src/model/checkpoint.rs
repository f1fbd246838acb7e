//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "BTFM" | version u32 | scalar width u8
//! heads u32 | beta f64 | use_prior u8 | learning_rate f64 | batch_size u32
//! trunk layer count u32 | trunk channels u32 * count | pool_inject u8 | head_hidden u32
//! trunk block: len u64, values
//! K head blocks: len u64, values
//! prior flag u8, then (if set) trunk block and K head blocks as above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EnsembleParameters, ModelConfig, Network, PriorParameters};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BTFM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", reason: reason.into() }
}

fn write_config<W: Write>(w: &mut W, c: &ModelConfig) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(c.heads as u32)?;
    w.write_f64::<LittleEndian>(c.beta)?;
    w.write_u8(c.use_prior as u8)?;
    w.write_f64::<LittleEndian>(c.learning_rate)?;
    w.write_u32::<LittleEndian>(c.batch_size as u32)?;
    w.write_u32::<LittleEndian>(c.trunk_channels.len() as u32)?;
    for &ch in &c.trunk_channels {
        w.write_u32::<LittleEndian>(ch as u32)?;
    }
    w.write_u8(c.pool_inject as u8)?;
    w.write_u32::<LittleEndian>(c.head_hidden as u32)
}

fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig> {
    let heads = r.read_u32::<LittleEndian>()? as usize;
    let beta = r.read_f64::<LittleEndian>()?;
    let use_prior = r.read_u8()? != 0;
    let learning_rate = r.read_f64::<LittleEndian>()?;
    let batch_size = r.read_u32::<LittleEndian>()? as usize;
    let layers = r.read_u32::<LittleEndian>()? as usize;
    if layers > 64 {
        return Err(format_err(format!("implausible trunk depth {layers}")));
    }
    let trunk_channels = (0..layers)
        .map(|_| r.read_u32::<LittleEndian>().map(|v| v as usize))
        .collect::<std::io::Result<_>>()?;
    let pool_inject = r.read_u8()? != 0;
    let head_hidden = r.read_u32::<LittleEndian>()? as usize;
    Ok(ModelConfig { heads, beta, use_prior, learning_rate, batch_size, trunk_channels, pool_inject, head_hidden })
}

fn write_block<T: Scalar, W: Write>(w: &mut W, values: &[T]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(values.len() as u64)?;
    values.iter().try_for_each(|v| v.write_le(w))
}

fn read_block<T: Scalar, R: Read>(r: &mut R, expected: usize) -> Result<Vec<T>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len != expected {
        return Err(format_err(format!("block of {len} values, expected {expected}")));
    }
    (0..len).map(|_| T::read_le(r).map_err(Error::from)).collect()
}

fn write_params<T: Scalar, W: Write>(w: &mut W, p: &EnsembleParameters<T>) -> std::io::Result<()> {
    write_block(w, &p.trunk)?;
    p.heads.iter().try_for_each(|h| write_block(w, h))
}

fn read_params<T: Scalar, R: Read>(r: &mut R, net_shape: &super::Layout, heads: usize) -> Result<EnsembleParameters<T>> {
    let trunk = read_block(r, net_shape.trunk_len)?;
    let heads = (0..heads).map(|_| read_block(r, net_shape.head_len)).collect::<Result<_>>()?;
    Ok(EnsembleParameters { trunk, heads })
}

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, net: &Network<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u8(T::WIDTH)?;
    write_config(w, net.config())?;
    write_params(w, net.params())?;
    match net.priors().params() {
        Some(p) => {
            w.write_u8(1)?;
            write_params(w, p)?;
        }
        None => w.write_u8(0)?,
    }
    Ok(())
}

/// Read a checkpoint. With `expected` set, the stored configuration must
/// match it exactly.
pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R, expected: Option<&ModelConfig>) -> Result<Network<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let width = r.read_u8()?;
    if width != T::WIDTH {
        return Err(format_err(format!("stored scalar width {width}, expected {}", T::WIDTH)));
    }
    let config = read_config(r)?;
    if let Some(want) = expected {
        if want != &config {
            return Err(Error::ConfigMismatch(format!("stored {config:?}, expected {want:?}")));
        }
    }
    config.validate()?;
    let layout = super::Layout::new(&config);
    let params = read_params(r, &layout, config.heads)?;
    let priors = match r.read_u8()? {
        0 => PriorParameters::empty(),
        1 => PriorParameters(Some(read_params(r, &layout, config.heads)?)),
        other => return Err(format_err(format!("invalid prior flag {other}"))),
    };
    Network::from_parts(config, params, priors)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &Network<T>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<Network<T>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(use_prior: bool) -> ModelConfig {
        ModelConfig { heads: 3, use_prior, trunk_channels: vec![4, 5], head_hidden: 3, ..ModelConfig::default() }
    }

    #[test]
    fn round_trip_with_and_without_priors() {
        for use_prior in [false, true] {
            let net = Network::<f32>::init(config(use_prior), 8).unwrap();
            let mut bytes = Vec::new();
            write_checkpoint(&mut bytes, &net).unwrap();
            let back: Network<f32> = read_checkpoint(&mut bytes.as_slice(), Some(&config(use_prior))).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_mismatched_config() {
        let net = Network::<f32>::init(config(false), 8).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net).unwrap();
        let other = ModelConfig { heads: 4, ..config(false) };
        let err = read_checkpoint::<f32, _>(&mut bytes.as_slice(), Some(&other));
        assert!(matches!(err, Err(Error::ConfigMismatch(_))));
        let err = read_checkpoint::<f64, _>(&mut bytes.as_slice(), None);
        assert!(matches!(err, Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_truncated_and_garbage() {
        let net = Network::<f32>::init(config(true), 8).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint::<f32, _>(&mut bytes.as_slice(), None).is_err());
        assert!(read_checkpoint::<f32, _>(&mut &b"XXXX"[..], None).is_err());
    }
}
