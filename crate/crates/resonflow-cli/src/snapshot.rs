//! `kernels/<j>.bin`: the z-model of flow step j.
//!
//! Layout, all integers u32 and all floats f64, little-endian:
//!
//! ```text
//! magic      8 bytes  "RFKERNEL"
//! version    u32      = 1
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON: step, center [re, im], radius,
//!            rho, dropped_mass, tail_bound, chain_len, config_hash
//! n_coef     u32      Taylor coefficients per entry, in t = (z - center)/radius
//! e          n_coef × (re, im)
//! n_orders   u32
//! per order: m u32, n u32, n_keys u32,
//!            then per key: s u32, legs 4 × u32 (unused = 0xFFFFFFFF),
//!                          n_coef × (re, im)
//! ```

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Result};
use num_complex::Complex64 as C64;
use resonflow::kernels::{KernelKey, MAX_LEGS};
use resonflow::rgflow::FamilyModel;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"RFKERNEL";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    step: usize,
    center: [f64; 2],
    radius: f64,
    rho: f64,
    dropped_mass: f64,
    tail_bound: f64,
    chain_len: usize,
    config_hash: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_c(out: &mut Vec<u8>, z: C64) {
    out.extend_from_slice(&z.re.to_le_bytes());
    out.extend_from_slice(&z.im.to_le_bytes());
}

pub fn encode(model: &FamilyModel, config_hash: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let meta = Meta {
        step: model.step,
        center: [model.center.re, model.center.im],
        radius: model.radius,
        rho: model.rho,
        dropped_mass: model.dropped_mass,
        tail_bound: model.tail_bound,
        chain_len: model.chain_len,
        config_hash: config_hash.to_string(),
    };
    let meta = serde_json::to_vec(&meta).expect("meta serializes");
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    let n_coef = model.e.len();
    put_u32(&mut out, n_coef as u32);
    model.e.iter().for_each(|&c| put_c(&mut out, c));
    put_u32(&mut out, model.orders.len() as u32);
    for (&(m, n), (keys, coefs)) in &model.orders {
        put_u32(&mut out, m as u32);
        put_u32(&mut out, n as u32);
        put_u32(&mut out, keys.len() as u32);
        for (k, c) in keys.iter().zip(coefs) {
            put_u32(&mut out, k.s);
            k.legs.iter().for_each(|&l| put_u32(&mut out, l));
            assert_eq!(c.len(), n_coef);
            c.iter().for_each(|&x| put_c(&mut out, x));
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        ensure!(self.pos + n <= self.buf.len(), "snapshot truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn c(&mut self) -> Result<C64> {
        Ok(C64::new(self.f64()?, self.f64()?))
    }
}

/// Decodes a snapshot; returns the model and the config hash it was written with.
pub fn decode(buf: &[u8]) -> Result<(FamilyModel, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        bail!("not a kernel snapshot (bad magic)");
    }
    let v = r.u32()?;
    if v != VERSION {
        bail!("unsupported snapshot version {v}");
    }
    let ml = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(ml)?)?;
    let n_coef = r.u32()? as usize;
    let e = (0..n_coef).map(|_| r.c()).collect::<Result<Vec<_>>>()?;
    let n_orders = r.u32()?;
    let mut orders = BTreeMap::new();
    for _ in 0..n_orders {
        let (m, n, nk) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let mut keys = Vec::with_capacity(nk);
        let mut coefs = Vec::with_capacity(nk);
        for _ in 0..nk {
            let s = r.u32()?;
            let mut legs = [0u32; MAX_LEGS];
            for l in legs.iter_mut() {
                *l = r.u32()?;
            }
            keys.push(KernelKey { s, legs });
            coefs.push((0..n_coef).map(|_| r.c()).collect::<Result<Vec<_>>>()?);
        }
        orders.insert((m, n), (keys, coefs));
    }
    ensure!(r.pos == buf.len(), "trailing bytes in snapshot");
    let model = FamilyModel {
        step: meta.step,
        center: C64::new(meta.center[0], meta.center[1]),
        radius: meta.radius,
        rho: meta.rho,
        dropped_mass: meta.dropped_mass,
        tail_bound: meta.tail_bound,
        chain_len: meta.chain_len,
        e,
        orders,
    };
    Ok((model, meta.config_hash))
}
