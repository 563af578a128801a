//! Font pools and a shared glyph raster cache.
//!
//! Pools are declared in a `fonts.toml` next to the font files:
//!
//! ```toml
//! [[font]]
//! file = "DejaVuSans.ttf"
//! pool = "source"
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Deserialize)]
struct FontsFile {
    font: Vec<FontDecl>,
}

#[derive(Debug, Clone, Deserialize)]
struct FontDecl {
    file: String,
    pool: String,
}

/// A coverage bitmap (0..=255) plus its placement relative to the pen
/// position on the baseline.
#[derive(Debug)]
pub struct Glyph {
    pub width: usize,
    pub height: usize,
    /// Left edge offset from the pen position.
    pub xmin: i32,
    /// Bottom edge offset above the baseline.
    pub ymin: i32,
    pub coverage: Vec<u8>,
}

impl Glyph {
    /// Top edge offset above the baseline.
    pub fn top(&self) -> i32 {
        self.ymin + self.height as i32
    }
}

pub struct LoadedFont {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
    font: fontdue::Font,
}

impl LoadedFont {
    pub fn has_glyph(&self, c: char) -> bool {
        self.font.lookup_glyph_index(c) != 0
    }
}

type GlyphKey = (usize, char, u32);

/// A named, ordered set of fonts.
pub struct FontPool {
    label: String,
    fonts: Vec<LoadedFont>,
    cache: Mutex<HashMap<GlyphKey, Arc<Glyph>>>,
}

impl FontPool {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fonts(&self) -> &[LoadedFont] {
        &self.fonts
    }

    pub fn len(&self) -> usize {
        self.fonts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fonts.is_empty()
    }

    /// Rasterizes `symbol` from font `index` at `px` pixels per em.
    pub fn glyph(&self, index: usize, symbol: char, px: u32) -> Result<Arc<Glyph>> {
        let key = (index, symbol, px);
        if let Some(g) = self.cache.lock().expect("glyph cache poisoned").get(&key) {
            return Ok(Arc::clone(g));
        }
        let font = &self.fonts[index];
        if !font.has_glyph(symbol) {
            return Err(Error::GlyphUnavailable {
                font: font.name.clone(),
                symbol,
            });
        }
        let (m, coverage) = font.font.rasterize(symbol, px as f32);
        let glyph = Arc::new(Glyph {
            width: m.width,
            height: m.height,
            xmin: m.xmin,
            ymin: m.ymin,
            coverage,
        });
        self.cache
            .lock()
            .expect("glyph cache poisoned")
            .insert(key, Arc::clone(&glyph));
        Ok(glyph)
    }

    /// Height of a capital 'H', used to place the baseline.
    pub fn cap_height(&self, index: usize, px: u32) -> Result<usize> {
        Ok(self.glyph(index, 'H', px)?.top().max(1) as usize)
    }
}

/// Every pool declared in one `fonts.toml`.
pub struct FontLibrary {
    pools: HashMap<String, Arc<FontPool>>,
}

impl FontLibrary {
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).at(manifest)?;
        let decls: FontsFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
        let dir = manifest.parent().unwrap_or(Path::new("."));

        let mut grouped: Vec<(String, Vec<LoadedFont>)> = Vec::new();
        for decl in decls.font {
            let path = dir.join(&decl.file);
            let bytes = std::fs::read(&path).at(&path)?;
            let sha256 = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            let font = fontdue::Font::from_bytes(bytes, fontdue::FontSettings::default())
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let loaded = LoadedFont {
                name: decl.file.clone(),
                path,
                sha256,
                font,
            };
            match grouped.iter_mut().find(|(label, _)| *label == decl.pool) {
                Some((_, fonts)) => fonts.push(loaded),
                None => grouped.push((decl.pool, vec![loaded])),
            }
        }
        let pools = grouped
            .into_iter()
            .map(|(label, fonts)| {
                let pool = FontPool {
                    label: label.clone(),
                    fonts,
                    cache: Mutex::new(HashMap::new()),
                };
                (label, Arc::new(pool))
            })
            .collect();
        Ok(Self { pools })
    }

    pub fn pool(&self, label: &str) -> Result<Arc<FontPool>> {
        self.pools
            .get(label)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no font pool named '{label}'")))
    }

    pub fn pool_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.pools.keys().map(String::as_str).collect();
        labels.sort_unstable();
        labels
    }
}
