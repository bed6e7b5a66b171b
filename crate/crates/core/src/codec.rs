//! Little-endian binary helpers shared by the dataset and checkpoint formats.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Dense, Mlp};

#[derive(Debug, Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn mlp(&mut self, mlp: &Mlp) {
        self.u32(mlp.layers().len() as u32);
        for l in mlp.layers() {
            self.u32(l.in_dim() as u32);
            self.u32(l.out_dim() as u32);
            self.u8(l.activation().code());
            self.f64s(l.weight());
            self.f64s(l.bias());
        }
    }

    pub fn adam(&mut self, adam: &AdamState) {
        let c = adam.config;
        self.f64s(&[c.lr, c.beta1, c.beta2, c.eps]);
        self.u64(adam.t);
        self.u32(adam.m.len() as u32);
        for (m, v) in adam.m.iter().zip(&adam.v) {
            self.u64(m.len() as u64);
            self.f64s(m);
            self.f64s(v);
        }
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], path: &Path) -> Self {
        Self {
            data,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: (self.pos + n) as u64,
                found: self.data.len() as u64,
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.malformed("string is not UTF-8"))
    }

    pub fn mlp(&mut self) -> Result<Mlp> {
        let n_layers = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let in_dim = self.u32()? as usize;
            let out_dim = self.u32()? as usize;
            let act = Activation::from_code(self.u8()?)
                .ok_or_else(|| self.malformed("unknown activation code"))?;
            let weight = self.f64s(in_dim * out_dim)?;
            let bias = self.f64s(out_dim)?;
            layers.push(Dense::new(in_dim, out_dim, act, weight, bias)?);
        }
        Ok(Mlp::from_layers(layers)?)
    }

    pub fn adam(&mut self) -> Result<AdamState> {
        let c = self.f64s(4)?;
        let config = AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
        };
        let t = self.u64()?;
        let n_blocks = self.u32()? as usize;
        let mut m = Vec::with_capacity(n_blocks.min(64));
        let mut v = Vec::with_capacity(n_blocks.min(64));
        for _ in 0..n_blocks {
            let len = self.u64()? as usize;
            m.push(self.f64s(len)?);
            v.push(self.f64s(len)?);
        }
        Ok(AdamState { config, t, m, v })
    }
}
