//! Parameter store and its on-disk container.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "KPLRPRM\0"
//! version      u32      1
//! stage        u8
//! spec_len     u32      length of the JSON-encoded NetSpec that follows
//! spec         spec_len bytes, UTF-8
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32, name bytes (UTF-8)
//!   ndim       u32, dims as ndim x u32
//!   data       product(dims) x f64
//! ```
//!
//! Tensors appear in the order of [`NetSpec::slots`]; a file whose names or
//! shapes disagree with its embedded spec is rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{NetSpec, TensorSlot};
use crate::error::{KeplerError, Result};

const MAGIC: &[u8; 8] = b"KPLRPRM\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorParams {
    pub stage: u8,
    pub spec: NetSpec,
    pub(crate) values: Vec<f64>,
}

impl RegressorParams {
    /// Fresh parameters: scaled uniform trunk weights, zero biases, PReLU
    /// slopes of 0.25, identity input standardisation and an all-zero head,
    /// so an untrained network predicts no correction.
    pub fn init(spec: &NetSpec, stage: u8, seed: u64) -> Result<Self> {
        let plan = spec.plan()?;
        let mut values = vec![0.0; plan.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in &plan.slots {
            let dst = &mut values[slot.offset..slot.offset + slot.len];
            let kind = slot.name.rsplit('.').next().unwrap_or("");
            match (slot.name.as_str(), kind) {
                ("input.scale", _) => dst.fill(1.0),
                ("head.weight", _) | (_, "bias") | ("input.shift", _) => {}
                (_, "slope") => dst.fill(if spec.linear { 1.0 } else { 0.25 }),
                (_, "weight") => {
                    let fan_in: usize = slot.shape[1..].iter().product();
                    let gain = if spec.linear { 1.0 } else { 2.0 / (1.0 + 0.25f64 * 0.25) };
                    let bound = (3.0 * gain / fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                }
                _ => {}
            }
        }
        Ok(RegressorParams {
            stage,
            spec: spec.clone(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slots(&self) -> Vec<TensorSlot> {
        self.spec.slots().expect("spec validated at construction")
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.slots()
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.slots().into_iter().find(|s| s.name == name)?;
        Some(&mut self.values[slot.offset..slot.offset + slot.len])
    }

    /// Clone of these parameters tagged for another stage.
    pub fn with_stage(&self, stage: u8) -> Self {
        RegressorParams {
            stage,
            ..self.clone()
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let spec = serde_json::to_vec(&self.spec).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(self.stage)?;
        w.write_u32::<LittleEndian>(spec.len() as u32)?;
        w.write_all(&spec)?;
        let slots = self.slots();
        w.write_u32::<LittleEndian>(slots.len() as u32)?;
        for s in &slots {
            w.write_u32::<LittleEndian>(s.name.len() as u32)?;
            w.write_all(s.name.as_bytes())?;
            w.write_u32::<LittleEndian>(s.shape.len() as u32)?;
            for &d in &s.shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in &self.values[s.offset..s.offset + s.len] {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |m: &str| KeplerError::Format(m.to_string());
        let io = |e: std::io::Error| KeplerError::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(KeplerError::Format(format!("unsupported version {version}")));
        }
        let stage = r.read_u8().map_err(io)?;
        let spec_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut spec_bytes = vec![0u8; spec_len];
        r.read_exact(&mut spec_bytes).map_err(io)?;
        let spec: NetSpec =
            serde_json::from_slice(&spec_bytes).map_err(|e| KeplerError::Format(e.to_string()))?;
        let slots = spec.slots()?;
        let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        if count != slots.len() {
            return Err(KeplerError::Format(format!(
                "expected {} tensors, found {count}",
                slots.len()
            )));
        }
        let mut values = vec![0.0; slots.last().map_or(0, |s| s.offset + s.len)];
        for s in &slots {
            let name_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            if name_len > 4096 {
                return Err(fmt("tensor name too long"));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            if name != s.name.as_bytes() {
                return Err(KeplerError::Format(format!(
                    "expected tensor {}, found {}",
                    s.name,
                    String::from_utf8_lossy(&name)
                )));
            }
            let ndim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let dims = (0..ndim)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            if dims != s.shape {
                return Err(KeplerError::Format(format!(
                    "tensor {} has shape {dims:?}, expected {:?}",
                    s.name, s.shape
                )));
            }
            r.read_f64_into::<LittleEndian>(&mut values[s.offset..s.offset + s.len])
                .map_err(io)?;
        }
        Ok(RegressorParams { stage, spec, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| KeplerError::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| KeplerError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| KeplerError::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}
