//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"HCCK"
//! version  u32
//! meta     u32 count, then (u32 len, utf8 key, u32 len, utf8 value)*
//! step     u64 optimizer step counter
//! params   u32 count, then per parameter:
//!            u32 name len, utf8 name, u32 rank, u64 extent*,
//!            f64 values*, f64 first moment*, f64 second moment*
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::params::ParameterStore;
use super::tensor::Tensor;
use super::AutodiffError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A parameter store plus free-form string metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub store: ParameterStore,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, AutodiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, AutodiffError> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| AutodiffError::Checkpoint("invalid utf-8 string".into()))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, AutodiffError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn new(store: ParameterStore) -> Self {
        Self {
            metadata: BTreeMap::new(),
            store,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), AutodiffError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_u32(w, self.metadata.len() as u32)?;
        for (k, v) in &self.metadata {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        put_u64(w, self.store.step_counter())?;
        put_u32(w, self.store.len() as u32)?;
        for (i, name) in self.store.names().iter().enumerate() {
            let id = self.store.id(name).expect("name index out of sync");
            debug_assert_eq!(id.index(), i);
            let tensor = self.store.tensor(id);
            put_str(w, name)?;
            put_u32(w, tensor.shape().len() as u32)?;
            for &d in tensor.shape() {
                put_u64(w, d as u64)?;
            }
            let (m, v) = self.store.moments(id);
            put_f64s(w, tensor.values())?;
            put_f64s(w, m)?;
            put_f64s(w, v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..get_u32(r)? {
            let k = get_str(r)?;
            let v = get_str(r)?;
            metadata.insert(k, v);
        }
        let step = get_u64(r)?;
        let count = get_u32(r)?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name = get_str(r)?;
            let rank = get_u32(r)? as usize;
            let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let values = get_f64s(r, numel)?;
            let first = get_f64s(r, numel)?;
            let second = get_f64s(r, numel)?;
            let id = store.insert(name, Tensor::new(shape, values)?)?;
            store.restore_state(id, first, second)?;
        }
        store.set_step_counter(step);
        Ok(Self { metadata, store })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), AutodiffError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AutodiffError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AdamConfig, Gradients};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(prop::num::f64::ANY, 1..24),
            step in 0u64..1000,
        ) {
            let mut store = ParameterStore::new();
            let n = values.len();
            store.insert("a.weight", Tensor::vector(values.clone())).unwrap();
            store.insert("b", Tensor::matrix(1, 2, vec![1.5, -0.0]).unwrap()).unwrap();
            store.set_step_counter(step);
            let mut ck = Checkpoint::new(store);
            ck.metadata.insert("scenario".into(), "m3".into());
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.store.step_counter(), step);
            prop_assert_eq!(&back.metadata, &ck.metadata);
            let got = back.store.get("a.weight").unwrap().values();
            prop_assert_eq!(got.len(), n);
            for (x, y) in got.iter().zip(&values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn moments_survive_round_trip() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0])).unwrap();
        store.apply_gradients(&Gradients::new(vec![vec![0.3, -0.7]])).unwrap();
        store.adam_step(&AdamConfig::default()).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::new(store.clone()).write_to(&mut bytes).unwrap();
        let mut back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap().store;
        let id = back.id("w").unwrap();
        assert_eq!(back.moments(id), store.moments(id));
        // continuing from the restored optimizer state matches continuing in place
        let g = Gradients::new(vec![vec![0.1, 0.2]]);
        back.apply_gradients(&g).unwrap();
        store.apply_gradients(&g).unwrap();
        back.adam_step(&AdamConfig::default()).unwrap();
        store.adam_step(&AdamConfig::default()).unwrap();
        assert!(back.values_bit_equal(&store));
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Checkpoint::read_from(&mut &b"NOPE\x01\x00\x00\x00"[..]).is_err());
        let mut bytes = Vec::new();
        Checkpoint::new(ParameterStore::new()).write_to(&mut bytes).unwrap();
        bytes[4] = 99;
        let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
