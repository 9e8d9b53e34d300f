//! Image feature store with a fixed-width binary file format.
//!
//! File layout, integers little-endian: magic `MFEA`, version `u32`, record
//! count `u64`, feature dimension `u32`, id width `u32` (64 bytes), then per
//! record a NUL-padded id and the feature vector as `f32`, widened to `f64`
//! on load. Fixed-width records keep lookups mmap-friendly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MFEA";
const VERSION: u32 = 1;
const ID_WIDTH: usize = 64;

/// Map from image id to feature vector, all of one dimension. Missing ids
/// resolve to the zero vector with a logged warning.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    img_dim: usize,
    features: HashMap<String, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(img_dim: usize) -> Self {
        Self {
            img_dim,
            features: HashMap::new(),
        }
    }

    pub fn img_dim(&self) -> usize {
        self.img_dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn insert(&mut self, id: String, features: Vec<f64>) -> Result<()> {
        if features.len() != self.img_dim {
            return Err(Error::Contract(format!(
                "feature vector for {id} has {} dims, store holds {}",
                features.len(),
                self.img_dim
            )));
        }
        if id.is_empty() || id.len() > ID_WIDTH || id.as_bytes().contains(&0) {
            return Err(Error::Contract(format!(
                "image id {id:?} must be 1..={ID_WIDTH} bytes without NUL"
            )));
        }
        self.features.insert(id, features);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Vec<f64> {
        match self.features.get(id) {
            Some(v) => v.clone(),
            None => {
                log::warn!("image id {id} has no stored features, using zeros");
                vec![0.0; self.img_dim]
            }
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.features.contains_key(id)
    }

    /// Writes records in sorted id order so saves are deterministic.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.features.len() as u64)?;
        w.write_u32::<LittleEndian>(self.img_dim as u32)?;
        w.write_u32::<LittleEndian>(ID_WIDTH as u32)?;

        let mut ids: Vec<&String> = self.features.keys().collect();
        ids.sort();
        for id in ids {
            let mut padded = [0u8; ID_WIDTH];
            padded[..id.len()].copy_from_slice(id.as_bytes());
            w.write_all(&padded)?;
            for &v in &self.features[id] {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::load_from(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("feature store {} is truncated", path.display()))
            }
            other => other,
        })
    }

    fn load_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a feature store file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported feature store version {version}"
            )));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let img_dim = r.read_u32::<LittleEndian>()? as usize;
        let id_width = r.read_u32::<LittleEndian>()? as usize;
        if id_width != ID_WIDTH {
            return Err(Error::Format(format!(
                "unsupported feature id width {id_width}"
            )));
        }

        let mut store = Self::new(img_dim);
        let mut id_buf = [0u8; ID_WIDTH];
        let mut row = vec![0.0f32; img_dim];
        for _ in 0..count {
            r.read_exact(&mut id_buf)?;
            let end = id_buf.iter().position(|&b| b == 0).unwrap_or(ID_WIDTH);
            let id = std::str::from_utf8(&id_buf[..end])
                .map_err(|_| Error::Format("feature id is not UTF-8".into()))?
                .to_string();
            r.read_f32_into::<LittleEndian>(&mut row)?;
            store.insert(id, row.iter().map(|&v| v as f64).collect())?;
        }
        Ok(store)
    }
}
