use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SRFADAM1";

/// Adam moments for a row-major parameter table (one row per surfel).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub stride: usize,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(rows: usize, stride: usize) -> Self {
        OptimizerState {
            stride,
            step: 0,
            m: vec![0.0; rows * stride],
            v: vec![0.0; rows * stride],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.stride
    }

    /// One Adam update; `lr[k]` is the learning rate of column `k`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(lr.len(), self.stride);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (j, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let rate = lr[j % self.stride];
            if rate != 0.0 {
                *p -= rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }

    /// Rebuilds the table from source rows: `rows[i]` is the old row copied into new row `i`.
    pub fn gather(&mut self, rows: &[usize]) {
        let s = self.stride;
        let pick = |src: &[f64]| {
            rows.iter()
                .flat_map(|&r| src[r * s..(r + 1) * s].iter().copied())
                .collect::<Vec<_>>()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 16 * self.m.len());
        buf.extend_from_slice(MAGIC);
        for n in [self.step, self.rows() as u64, self.stride as u64] {
            buf.extend_from_slice(&n.to_le_bytes());
        }
        for x in self.m.iter().chain(&self.v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format("optimizer state", path, reason);
        if buf.len() < 32 || &buf[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(buf[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (step, rows, stride) = (word(0), word(1) as usize, word(2) as usize);
        let n = rows
            .checked_mul(stride)
            .ok_or_else(|| bad("size overflow"))?;
        if stride == 0 || buf.len() != 32 + 16 * n {
            return Err(bad("length does not match header"));
        }
        let floats: Vec<f64> = buf[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut state = OptimizerState::new(rows, stride);
        state.step = step;
        state.m = floats[..n].to_vec();
        state.v = floats[n..].to_vec();
        Ok(state)
    }
}
