//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "GPGCKPT\0"
//! version    u32      currently 1
//! env_id     u32 length + UTF-8 bytes
//! iteration  u64      completed training iterations
//! policy     u8 kind (0 = mlp, 1 = tabular)
//!   mlp:     input (u8 kind: 0 real, 1 one-hot; u32 width)
//!            u32 hidden count, u32 per hidden layer
//!            u8 head (0 categorical, 1 gaussian), u32 head size
//!   tabular: u32 states, u32 actions
//! theta      u64 count + f64 values
//! value      u8 present; if 1: input, hidden list, u64 count + f64 values
//! optimizer  u8 present; if 1: u64 step, u64 count + f64 first moments,
//!            u64 count + f64 second moments (policy parameters, then value)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::model::{HeadKind, InputEncoding, PolicyArch, PolicyModel};
use super::value::ValueNet;
use crate::trainer::AdamState;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GPGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env_id: String,
    pub iteration: u64,
    pub policy: PolicyModel,
    pub value: Option<ValueNet>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_u32(&mut w, self.env_id.len() as u32);
        w.extend_from_slice(self.env_id.as_bytes());
        put_u64(&mut w, self.iteration);
        match self.policy.arch() {
            PolicyArch::Mlp { input, hidden, head } => {
                w.push(0);
                put_input(&mut w, *input);
                put_hidden(&mut w, hidden);
                match head {
                    HeadKind::Categorical { actions } => {
                        w.push(0);
                        put_u32(&mut w, *actions as u32);
                    }
                    HeadKind::Gaussian { dim } => {
                        w.push(1);
                        put_u32(&mut w, *dim as u32);
                    }
                }
            }
            PolicyArch::Tabular { states, actions } => {
                w.push(1);
                put_u32(&mut w, *states as u32);
                put_u32(&mut w, *actions as u32);
            }
        }
        put_vec(&mut w, self.policy.theta());
        match &self.value {
            Some(v) => {
                w.push(1);
                put_input(&mut w, v.input());
                put_hidden(&mut w, v.hidden());
                put_vec(&mut w, v.phi());
            }
            None => w.push(0),
        }
        match &self.optimizer {
            Some(opt) => {
                w.push(1);
                put_u64(&mut w, opt.step);
                put_vec(&mut w, &opt.m);
                put_vec(&mut w, &opt.v);
            }
            None => w.push(0),
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Load(format!(
                "bad magic: expected {MAGIC:?}, found {magic:?}"
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Load(format!(
                "unsupported version: expected {VERSION}, found {version}"
            )));
        }
        let len = r.u32()? as usize;
        let env_id = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Load("env id is not UTF-8".into()))?;
        let iteration = r.u64()?;
        let arch = match r.u8()? {
            0 => {
                let input = r.input()?;
                let hidden = r.hidden()?;
                let head = match r.u8()? {
                    0 => HeadKind::Categorical {
                        actions: r.u32()? as usize,
                    },
                    1 => HeadKind::Gaussian {
                        dim: r.u32()? as usize,
                    },
                    k => return Err(Error::Load(format!("unknown head kind {k}"))),
                };
                PolicyArch::Mlp { input, hidden, head }
            }
            1 => PolicyArch::Tabular {
                states: r.u32()? as usize,
                actions: r.u32()? as usize,
            },
            k => return Err(Error::Load(format!("unknown policy kind {k}"))),
        };
        let theta = r.vec()?;
        let policy = PolicyModel::from_parts(arch, theta).map_err(|e| Error::Load(e.to_string()))?;
        let value = match r.u8()? {
            0 => None,
            _ => {
                let input = r.input()?;
                let hidden = r.hidden()?;
                let phi = r.vec()?;
                Some(ValueNet::from_parts(input, &hidden, phi).map_err(|e| Error::Load(e.to_string()))?)
            }
        };
        let optimizer = match r.u8()? {
            0 => None,
            _ => Some(AdamState {
                step: r.u64()?,
                m: r.vec()?,
                v: r.vec()?,
            }),
        };
        if r.pos != bytes.len() {
            return Err(Error::Load(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            env_id,
            iteration,
            policy,
            value,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(w: &mut Vec<u8>, v: &[f64]) {
    put_u64(w, v.len() as u64);
    for x in v {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_input(w: &mut Vec<u8>, input: InputEncoding) {
    match input {
        InputEncoding::Real { dim } => {
            w.push(0);
            put_u32(w, dim as u32);
        }
        InputEncoding::OneHot { n } => {
            w.push(1);
            put_u32(w, n as u32);
        }
    }
}

fn put_hidden(w: &mut Vec<u8>, hidden: &[usize]) {
    put_u32(w, hidden.len() as u32);
    for h in hidden {
        put_u32(w, *h as u32);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Load(format!(
                "truncated checkpoint: needed {n} bytes at offset {}, found {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Load(format!("vector of {n} floats exceeds the file")));
        }
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"))))
            .collect()
    }

    fn input(&mut self) -> Result<InputEncoding> {
        let kind = self.u8()?;
        let width = self.u32()? as usize;
        match kind {
            0 => Ok(InputEncoding::Real { dim: width }),
            1 => Ok(InputEncoding::OneHot { n: width }),
            k => Err(Error::Load(format!("unknown input kind {k}"))),
        }
    }

    fn hidden(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok(self.u32()? as usize)).collect()
    }
}
