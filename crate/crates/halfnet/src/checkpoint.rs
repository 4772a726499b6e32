//! Model checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"HNCK"
//! u32    format version (1)
//! u32    model-name byte length, then the UTF-8 name (e.g. "rnd-1024-N")
//! u32    layer count
//! per layer:
//!   u32  record count
//!   per record:
//!     u32      record-name byte length, then the UTF-8 name
//!     u8       1 if frozen, 0 if trainable
//!     u32      rank, then rank u64 extents
//!     f64 ...  row-major values
//! ```

use crate::error::{Error, Result};
use crate::layers::TensorRecord;
use crate::model::Network;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HNCK";
const VERSION: u32 = 1;

impl Network {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io { path: path.to_path_buf(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        let res: std::io::Result<()> = (|| {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            let name = self.spec().name();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(self.layers().len() as u32).to_le_bytes())?;
            for layer in self.layers() {
                let records = layer.records();
                w.write_all(&(records.len() as u32).to_le_bytes())?;
                for rec in records {
                    w.write_all(&(rec.name.len() as u32).to_le_bytes())?;
                    w.write_all(rec.name.as_bytes())?;
                    w.write_all(&[rec.frozen as u8])?;
                    w.write_all(&(rec.tensor.shape().len() as u32).to_le_bytes())?;
                    for &e in rec.tensor.shape() {
                        w.write_all(&(e as u64).to_le_bytes())?;
                    }
                    for &v in rec.tensor.iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            w.flush()
        })();
        res.map_err(io_err)
    }

    /// Restore tensors into an already-built network of the same spec.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io { path: path.to_path_buf(), source };
        let fail = |detail: String| Error::Format { path: path.to_path_buf(), detail };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(fail(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r).map_err(io_err)?;
        if version != VERSION {
            return Err(fail(format!("unsupported checkpoint version {version}")));
        }
        let name = read_string(&mut r).map_err(io_err)?;
        if name != self.spec().name() {
            return Err(fail(format!(
                "checkpoint holds {name:?} but the network is {:?}",
                self.spec().name()
            )));
        }
        let layer_count = read_u32(&mut r).map_err(io_err)? as usize;
        if layer_count != self.layers().len() {
            return Err(fail(format!(
                "checkpoint has {layer_count} layers, network has {}",
                self.layers().len()
            )));
        }
        for layer in self.layers_mut().iter_mut() {
            let rec_count = read_u32(&mut r).map_err(io_err)? as usize;
            let mut records = Vec::with_capacity(rec_count);
            for _ in 0..rec_count {
                let rec_name = read_string(&mut r).map_err(io_err)?;
                let mut frozen = [0u8; 1];
                r.read_exact(&mut frozen).map_err(io_err)?;
                let rank = read_u32(&mut r).map_err(io_err)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b).map_err(io_err)?;
                    shape.push(u64::from_le_bytes(b) as usize);
                }
                let count: usize = shape.iter().product();
                let mut data = vec![0.0f64; count];
                for v in data.iter_mut() {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b).map_err(io_err)?;
                    *v = f64::from_le_bytes(b);
                }
                // record names are static per layer kind; leak-free matching
                // is done positionally by load_records
                let _ = rec_name;
                records.push(TensorRecord {
                    name: "",
                    frozen: frozen[0] != 0,
                    tensor: Tensor::new(shape, data)?,
                });
            }
            layer.load_records(records)?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
