//! Content-addressed store of solved certificates.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{Context, Result};
use diqkd::behavior::Behavior;
use diqkd::guess::{solve_guess, solve_guess_robust, GuessBound, KeyFunction};
use diqkd::npa::Level;
use sha2::{Digest, Sha256};

pub struct CertCache {
    dir: Option<PathBuf>,
}

impl CertCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(CertCache { dir })
    }

    fn path(&self, b: &Behavior, f: &KeyFunction, level: Level, radius: f64) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(b.content_hash().as_bytes());
        h.update(level.as_str().as_bytes());
        h.update(format!("{}:{:?}:{:e}", f.input, f.map, radius).as_bytes());
        let key: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Some(dir.join(format!("guess-{key}.json")))
    }

    /// Guessing bound for `b`, from the store when present. A positive
    /// `radius` asks for the robust certificate.
    pub fn guess(&self, b: &Behavior, f: &KeyFunction, level: Level, radius: f64) -> Result<GuessBound> {
        let path = self.path(b, f, level, radius);
        if let Some(p) = &path {
            if let Ok(text) = fs::read_to_string(p) {
                if let Ok(g) = serde_json::from_str::<GuessBound>(&text) {
                    return Ok(g);
                }
            }
        }
        let g = if radius > 0.0 {
            solve_guess_robust(b, f, level, radius)?
        } else {
            solve_guess(b, f, level)?
        };
        if let Some(p) = &path {
            // Written whole then renamed, so parallel sweeps never read a partial file.
            static NEXT: AtomicU64 = AtomicU64::new(0);
            let n = NEXT.fetch_add(1, Ordering::Relaxed);
            let tmp = p.with_extension(format!("tmp{}-{n}", std::process::id()));
            fs::write(&tmp, serde_json::to_string_pretty(&g)?)
                .with_context(|| format!("writing {}", tmp.display()))?;
            fs::rename(&tmp, p).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(g)
    }
}
