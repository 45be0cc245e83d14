//! Staged outputs: everything is built in memory and written only once the
//! command has finished, so a failed run leaves no partial files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num_complex::Complex64 as C64;
use serde::Serialize;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("output serializes");
        s.push('\n');
        self.add(rel, s.into_bytes());
    }

    pub fn names(&self) -> Vec<&Path> {
        self.files.iter().map(|f| f.0.as_path()).collect()
    }

    /// Writes each file through a temporary name and a rename.
    pub fn commit(self, dir: &Path) -> Result<()> {
        for (rel, bytes) in self.files {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            let tmp = path.with_extension("partial");
            std::fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(())
    }
}

pub const SPECTRUM_HEADER: &str = "config_hash,source,re,im,vartheta,lambda0,p_x,p_y,p_z,p_im_x,p_im_y,p_im_z";
pub const SHIFTS_HEADER: &str = "config_hash,z_d_re,z_d_im,z_od_re,z_od_im,im_zod_residue,fgr_value,fgr_holds";

pub struct SpectrumRow<'a> {
    pub source: &'a str,
    pub z: C64,
    pub vartheta: f64,
    pub lambda0: f64,
    pub p: [C64; 3],
}

/// Header plus one line per row, each prefixed with the config hash.
pub fn spectrum_csv(hash: &str, rows: &[SpectrumRow]) -> Vec<u8> {
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for r in rows {
        let p = r.p;
        writeln!(s, "{hash},{},{:e},{:e},{},{:e},{},{},{},{},{},{}", r.source, r.z.re, r.z.im, r.vartheta, r.lambda0, p[0].re, p[1].re, p[2].re, p[0].im, p[1].im, p[2].im).unwrap();
    }
    s.into_bytes()
}

pub fn shifts_csv(hash: &str, z_d: C64, z_od: C64, im_res: f64, fgr: f64, holds: bool) -> Vec<u8> {
    let mut s = String::from(SHIFTS_HEADER);
    s.push('\n');
    writeln!(s, "{hash},{:e},{:e},{:e},{:e},{:e},{:e},{holds}", z_d.re, z_d.im, z_od.re, z_od.im, im_res, fgr).unwrap();
    s.into_bytes()
}
