//! Binary weights file.
//!
//! Layout: `b"RHWT"`, format version (u32 LE), parameterized layer count (u32 LE),
//! then for each conv-like layer in declaration order its biases followed by its
//! weights as little-endian f64. Sizes are implied by the network config.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::network::Network;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RHWT";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(net.param_layer_count() as u32).to_le_bytes())?;
    for p in net.params() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads values into an already-built network of the matching configuration.
pub fn read_weights<R: Read>(net: &mut Network, mut r: R) -> Result<()> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("weights file shorter than its header".into()))?;
    if &header[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("bad magic, not a weights file".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let layers = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    if layers != net.param_layer_count() {
        return Err(Error::Format(format!(
            "file has {layers} layers, network has {}",
            net.param_layer_count()
        )));
    }
    let mut buf = [0u8; 8];
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format("weights file truncated".into()))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after weights".into()));
    }
    net.reset_momentum();
    Ok(())
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_weights(net, BufWriter::new(File::create(path)?))
}

pub fn load_weights(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    read_weights(net, BufReader::new(File::open(path)?))
}
