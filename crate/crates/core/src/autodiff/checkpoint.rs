//! Versioned binary container for parameters, optimizer state and metadata.
//!
//! Layout (little endian): magic `FSCK`, `u32` version, parameter table,
//! optional optimizer block, string metadata. Every float is stored as the
//! bit pattern of its `f64` widening, so round trips are exact for both
//! supported scalar types.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::optim::Slots;
use super::{AutodiffError, DenseArray, Optimizer, OptimizerConfig, OptimizerKind, ParamGroup, ParamId, ParamStore, Parameter};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"FSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub optimizer: Option<Optimizer<T>>,
    pub meta: BTreeMap<String, String>,
}

fn corrupt(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

fn write_str(w: &mut Vec<u8>, s: &str) {
    w.write_u32::<LE>(s.len() as u32).unwrap();
    w.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String, AutodiffError> {
    let n = r.read_u32::<LE>()? as usize;
    if n > r.get_ref().len() {
        return Err(corrupt("string length exceeds buffer"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| corrupt("invalid utf-8"))
}

fn write_floats<T: Scalar>(w: &mut Vec<u8>, vals: &[T]) {
    w.write_u64::<LE>(vals.len() as u64).unwrap();
    for v in vals {
        w.write_u64::<LE>(v.as_f64().to_bits()).unwrap();
    }
}

fn read_floats<T: Scalar>(r: &mut Cursor<&[u8]>) -> Result<Vec<T>, AutodiffError> {
    let n = r.read_u64::<LE>()? as usize;
    if n.saturating_mul(8) > r.get_ref().len() {
        return Err(corrupt("array length exceeds buffer"));
    }
    (0..n).map(|_| Ok(T::lit(f64::from_bits(r.read_u64::<LE>()?)))).collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ParamStore<T>) -> Self {
        Self { params, optimizer: None, meta: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LE>(FORMAT_VERSION).unwrap();

        w.write_u32::<LE>(self.params.len() as u32).unwrap();
        for (_, p) in self.params.iter() {
            write_str(&mut w, &p.name);
            w.write_u8(p.group.code()).unwrap();
            w.write_u8(p.trainable as u8).unwrap();
            w.write_u32::<LE>(p.value.ndim() as u32).unwrap();
            for &d in p.value.shape() {
                w.write_u64::<LE>(d as u64).unwrap();
            }
            write_floats(&mut w, p.value.data());
        }

        match &self.optimizer {
            None => w.write_u8(0).unwrap(),
            Some(opt) => {
                w.write_u8(1).unwrap();
                let c = opt.config;
                w.write_u8(c.kind.code()).unwrap();
                for v in [c.learning_rate, c.beta1, c.beta2, c.eps, c.rho, c.weight_decay] {
                    w.write_u64::<LE>(v.to_bits()).unwrap();
                }
                w.write_u64::<LE>(opt.step).unwrap();
                w.write_u32::<LE>(opt.slots.len() as u32).unwrap();
                for (id, s) in &opt.slots {
                    w.write_u64::<LE>(id.0 as u64).unwrap();
                    write_floats(&mut w, &s.first);
                    write_floats(&mut w, &s.second);
                }
            }
        }

        w.write_u32::<LE>(self.meta.len() as u32).unwrap();
        for (k, v) in &self.meta {
            write_str(&mut w, k);
            write_str(&mut w, v);
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }

        let n = r.read_u32::<LE>()?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let group = ParamGroup::from_code(r.read_u8()?).ok_or_else(|| corrupt("bad parameter group"))?;
            let trainable = r.read_u8()? != 0;
            let ndim = r.read_u32::<LE>()? as usize;
            if ndim > 16 {
                return Err(corrupt("implausible rank"));
            }
            let shape = (0..ndim).map(|_| r.read_u64::<LE>().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let data = read_floats(&mut r)?;
            let value = DenseArray::new(shape, data)?;
            params.push_parameter(Parameter { name, group, trainable, value });
        }

        let optimizer = match r.read_u8()? {
            0 => None,
            1 => {
                let kind = OptimizerKind::from_code(r.read_u8()?).ok_or_else(|| corrupt("bad optimizer kind"))?;
                let mut f = [0.0f64; 6];
                for v in &mut f {
                    *v = f64::from_bits(r.read_u64::<LE>()?);
                }
                let config = OptimizerConfig { kind, learning_rate: f[0], beta1: f[1], beta2: f[2], eps: f[3], rho: f[4], weight_decay: f[5] };
                let mut opt = Optimizer::new(config)?;
                opt.step = r.read_u64::<LE>()?;
                let m = r.read_u32::<LE>()?;
                for _ in 0..m {
                    let id = ParamId(r.read_u64::<LE>()? as usize);
                    let first = read_floats(&mut r)?;
                    let second = read_floats(&mut r)?;
                    if id.0 >= params.len() || first.len() != params.value(id).len() || second.len() != first.len() {
                        return Err(corrupt("optimizer state does not match parameters"));
                    }
                    opt.slots.insert(id, Slots { first, second });
                }
                Some(opt)
            }
            _ => return Err(corrupt("bad optimizer flag")),
        };

        let k = r.read_u32::<LE>()?;
        let mut meta = BTreeMap::new();
        for _ in 0..k {
            let key = read_str(&mut r)?;
            let val = read_str(&mut r)?;
            meta.insert(key, val);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { params, optimizer, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
