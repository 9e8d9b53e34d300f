//! Binary checkpoint format.
//!
//! Layout, all integers little-endian: magic `MHRD`, format version `u32`,
//! config JSON (`u32` length + bytes), tensor count `u32`, then per tensor a
//! name (`u32` length + UTF-8 bytes), rank `u32`, dims as `u64`, and the row
//! major data as `f64`. Loading rebuilds the model from the stored config and
//! fills every parameter by name; any mismatch or truncation fails without
//! producing a partial model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"MHRD";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let config = serde_json::to_vec(&model.config)?;
    w.write_u32::<LittleEndian>(config.len() as u32)?;
    w.write_all(&config)?;

    let named = model.named_params();
    w.write_u32::<LittleEndian>(named.len() as u32)?;
    for (name, param) in named {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        let tensor = param.borrow();
        w.write_u32::<LittleEndian>(tensor.shape().len() as u32)?;
        for &dim in tensor.shape() {
            w.write_u64::<LittleEndian>(dim as u64)?;
        }
        for &v in tensor.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    load_from(&mut r).map_err(|e| match e {
        Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("checkpoint {} is truncated", path.display()))
        }
        other => other,
    })
}

fn load_from<R: Read>(r: &mut R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_len = r.read_u32::<LittleEndian>()? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;

    let model = Model::new(config, 0)?;
    let mut remaining: HashMap<String, _> = model.named_params().into_iter().collect();

    let n_tensors = r.read_u32::<LittleEndian>()? as usize;
    for _ in 0..n_tensors {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("checkpoint tensor name is not UTF-8".into()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        r.read_f64_into::<LittleEndian>(&mut data)?;

        let param = remaining.remove(&name).ok_or_else(|| {
            Error::Format(format!("checkpoint tensor {name} is not a model parameter"))
        })?;
        if param.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "checkpoint tensor {name} has shape {shape:?}, model expects {:?}",
                param.shape()
            )));
        }
        param.borrow_mut().data_mut().copy_from_slice(&data);
    }
    if let Some(name) = remaining.keys().next() {
        return Err(Error::Format(format!(
            "checkpoint is missing parameter {name}"
        )));
    }
    Ok(model)
}
