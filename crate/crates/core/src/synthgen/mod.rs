//! Synthetic character and text-field rendering.
//!
//! A character sample is a 64×64 patch: random gray paper with noise
//! blotches, the requested glyph centred, one random neighbour glyph on
//! each side clipped by the patch edge, then a joint rotation/translation.
//! Text fields use the same noise and affine model applied to a whole line
//! layout, and record the box of every glyph.

mod corpus;
mod fields;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use corpus::{
    generate_char_corpus, generate_field_corpus, read_field_manifest, read_jsonl, read_manifest,
    sample_seed, write_json, write_jsonl, CorpusSpec, FieldEntry, ManifestEntry, SplitSpec,
    FIELD_MANIFEST, MANIFEST,
};
pub use fields::{FieldKind, FieldTextSampler};

use crate::charset::{Charset, ClassId, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fonts::{FontPool, Glyph};
use crate::imaging::{gaussian_blur, warp_affine, AffineTransform, BBox, GrayImage, PATCH_SIDE};
use crate::rng::SeededRng;

/// Closed integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: i32,
    pub max: i32,
}

impl IntRange {
    pub const fn new(min: i32, max: i32) -> Self {
        Self { min, max }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> i32 {
        rng.int_in(i64::from(self.min), i64::from(self.max)) as i32
    }
}

/// Half-open real interval; a degenerate `[v, v]` always yields `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub min: f64,
    pub max: f64,
}

impl RealRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        rng.real_in(self.min, self.max)
    }
}

/// Rendering style for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    /// Identifies the style in field manifests.
    pub style_id: String,
    pub font_pool: String,
    pub background: IntRange,
    pub ink: IntRange,
    pub blotch_count: IntRange,
    pub blotch_radius: IntRange,
    /// Blotch intensity relative to the background.
    pub blotch_delta: IntRange,
    /// Font size in pixels per em.
    pub font_size: IntRange,
    pub rotation_deg: RealRange,
    pub translation_px: RealRange,
    /// Blank columns between adjacent glyphs.
    pub neighbor_gap: IntRange,
    /// Blank space between letters of a field as a fraction of the font
    /// size, drawn once per field and jittered by one pixel per letter
    /// (never below two pixels).
    pub letter_spacing_em: RealRange,
    /// Inter-word space as a fraction of the font size (fields only).
    pub word_gap_em: RealRange,
    pub blur_sigma: RealRange,
}

impl GenParams {
    /// Synthetic pre-training style.
    pub fn source() -> Self {
        Self {
            style_id: "source".into(),
            font_pool: "source".into(),
            background: IntRange::new(150, 255),
            ink: IntRange::new(0, 60),
            blotch_count: IntRange::new(0, 12),
            blotch_radius: IntRange::new(1, 4),
            blotch_delta: IntRange::new(-40, 40),
            font_size: IntRange::new(28, 40),
            rotation_deg: RealRange::new(-3.0, 3.0),
            translation_px: RealRange::new(-4.0, 4.0),
            neighbor_gap: IntRange::new(2, 8),
            letter_spacing_em: RealRange::new(0.06, 0.12),
            word_gap_em: RealRange::new(0.5, 0.7),
            blur_sigma: RealRange::new(0.0, 0.0),
        }
    }

    /// Held-out fonts at lower contrast: the stand-in for scanned documents.
    pub fn pseudo_real() -> Self {
        Self {
            style_id: "pseudo_real".into(),
            font_pool: "pseudo_real".into(),
            background: IntRange::new(120, 200),
            ink: IntRange::new(20, 90),
            // Dark blotches stay within the binarization offset so paper
            // noise does not turn into ink components.
            blotch_delta: IntRange::new(-8, 40),
            blur_sigma: RealRange::new(0.0, 0.8),
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let ints = [
            ("background", self.background),
            ("ink", self.ink),
            ("blotch_count", self.blotch_count),
            ("blotch_radius", self.blotch_radius),
            ("blotch_delta", self.blotch_delta),
            ("font_size", self.font_size),
            ("neighbor_gap", self.neighbor_gap),
        ];
        for (name, r) in ints {
            if r.min > r.max {
                problems.push(format!("{name}: empty range {}..={}", r.min, r.max));
            }
        }
        let reals = [
            ("rotation_deg", self.rotation_deg),
            ("translation_px", self.translation_px),
            ("letter_spacing_em", self.letter_spacing_em),
            ("word_gap_em", self.word_gap_em),
            ("blur_sigma", self.blur_sigma),
        ];
        for (name, r) in reals {
            if r.min > r.max || !r.min.is_finite() || !r.max.is_finite() {
                problems.push(format!("{name}: empty range {}..{}", r.min, r.max));
            }
        }
        if self.rotation_deg.min < -10.0 || self.rotation_deg.max > 10.0 {
            problems.push("rotation_deg must lie within [-10, 10]".into());
        }
        for (name, r) in [("background", self.background), ("ink", self.ink)] {
            if r.min < 0 || r.max > 255 {
                problems.push(format!("{name} must lie within 0..=255"));
            }
        }
        if self.font_size.min < 4 || self.blotch_radius.min < 0 || self.blotch_count.min < 0 {
            problems.push("font_size, blotch_radius and blotch_count must be positive".into());
        }
        if self.blur_sigma.min < 0.0 {
            problems.push("blur_sigma must be non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Mined,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharSample {
    pub image: GrayImage,
    pub label: ClassId,
    pub provenance: Provenance,
    pub seed: u64,
}

/// What the generator drew for one character sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderLog {
    pub font: String,
    pub font_size: u32,
    pub left: ClassId,
    pub right: ClassId,
    pub rotation_deg: f64,
    pub shift: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFieldSample {
    pub image: GrayImage,
    pub text: String,
    /// One box per non-space character, in reading order.
    pub boxes: Vec<BBox>,
    pub style: String,
    pub seed: u64,
}

/// Renders samples from one font pool in one style.
pub struct Generator {
    pool: Arc<FontPool>,
    params: GenParams,
    charset: Charset,
}

impl Generator {
    pub fn new(pool: Arc<FontPool>, params: GenParams) -> Result<Self> {
        params.validate()?;
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "font pool '{}' is empty",
                pool.label()
            )));
        }
        Ok(Self {
            pool,
            params,
            charset: Charset::default(),
        })
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn pool(&self) -> &FontPool {
        &self.pool
    }

    pub fn render_char(&self, class: ClassId, seed: u64) -> Result<CharSample> {
        self.render_char_logged(class, seed).map(|(s, _)| s)
    }

    pub fn render_char_logged(&self, class: ClassId, seed: u64) -> Result<(CharSample, RenderLog)> {
        let center = self.charset.symbol(class)?;
        let p = &self.params;
        let mut rng = SeededRng::new(seed);

        let bg = p.background.sample(&mut rng).clamp(0, 255) as u8;
        let ink = p.ink.sample(&mut rng).clamp(0, 255) as u8;
        let mut canvas = GrayImage::new(PATCH_SIDE, PATCH_SIDE, bg);
        draw_blotches(&mut canvas, bg, p, &mut rng);

        let font = rng.index(self.pool.len());
        let px = p.font_size.sample(&mut rng) as u32;
        let left = ClassId(rng.index(NUM_CLASSES) as u16);
        let right = ClassId(rng.index(NUM_CLASSES) as u16);
        let gap_l = p.neighbor_gap.sample(&mut rng);
        let gap_r = p.neighbor_gap.sample(&mut rng);

        let g_center = self.pool.glyph(font, center, px)?;
        let g_left = self.pool.glyph(font, self.charset.symbol(left)?, px)?;
        let g_right = self.pool.glyph(font, self.charset.symbol(right)?, px)?;

        let cap = self.pool.cap_height(font, px)? as i32;
        let half = PATCH_SIDE as i32 / 2;
        let baseline = half + cap / 2;
        let cx = half - g_center.width as i32 / 2;
        blit_glyph(&mut canvas, &g_center, cx, baseline - g_center.top(), ink);
        blit_glyph(
            &mut canvas,
            &g_left,
            cx - gap_l - g_left.width as i32,
            baseline - g_left.top(),
            ink,
        );
        blit_glyph(
            &mut canvas,
            &g_right,
            cx + g_center.width as i32 + gap_r,
            baseline - g_right.top(),
            ink,
        );

        let rotation = p.rotation_deg.sample(&mut rng);
        let dx = p.translation_px.sample(&mut rng);
        let dy = p.translation_px.sample(&mut rng);
        let c = (PATCH_SIDE as f64 - 1.0) / 2.0;
        let t = AffineTransform::content_motion(c, c, rotation, 1.0, dx, dy)?;
        let mut image = warp_affine(&canvas, &t, bg)?;
        let sigma = p.blur_sigma.sample(&mut rng);
        if sigma > 0.0 {
            image = gaussian_blur(&image, sigma);
        }

        let log = RenderLog {
            font: self.pool.fonts()[font].name.clone(),
            font_size: px,
            left,
            right,
            rotation_deg: rotation,
            shift: (dx, dy),
        };
        let sample = CharSample {
            image,
            label: class,
            provenance: Provenance::Synthetic,
            seed,
        };
        Ok((sample, log))
    }

    /// Renders `text` (lines separated by `\n`, words by spaces).
    pub fn render_field(&self, text: &str, seed: u64) -> Result<TextFieldSample> {
        if text.chars().all(char::is_whitespace) {
            return Err(Error::EmptyFieldText);
        }
        for ch in text.chars().filter(|c| !c.is_whitespace()) {
            self.charset.class_of(ch)?;
        }
        let p = &self.params;
        let mut rng = SeededRng::new(seed);

        let bg = p.background.sample(&mut rng).clamp(0, 255) as u8;
        let ink = p.ink.sample(&mut rng).clamp(0, 255) as u8;
        let font = rng.index(self.pool.len());
        let px = p.font_size.sample(&mut rng) as u32;
        let word_gap = (p.word_gap_em.sample(&mut rng) * f64::from(px)).round() as i32;
        let spacing = (p.letter_spacing_em.sample(&mut rng) * f64::from(px)).round() as i32;
        let cap = self.pool.cap_height(font, px)? as i32;
        let line_height = (f64::from(px) * 1.3).round() as i32;
        let margin = (px as i32 / 2).max(12);

        // Layout in unrotated canvas coordinates.
        struct Placed {
            glyph: Arc<Glyph>,
            x: i32,
            y: i32,
        }
        let mut placed = Vec::new();
        let mut width = 0;
        let lines: Vec<&str> = text.split('\n').collect();
        for (li, line) in lines.iter().enumerate() {
            let baseline = margin + cap + li as i32 * line_height;
            let mut pen = margin;
            let mut prev_glyph = false;
            for ch in line.chars() {
                if ch.is_whitespace() {
                    pen += word_gap;
                    prev_glyph = false;
                    continue;
                }
                if prev_glyph {
                    pen += (spacing + rng.int_in(-1, 1) as i32).max(2);
                }
                let g = self.pool.glyph(font, ch, px)?;
                let y = baseline - g.top();
                placed.push(Placed {
                    x: pen,
                    y,
                    glyph: Arc::clone(&g),
                });
                pen += g.width as i32;
                prev_glyph = true;
            }
            width = width.max(pen);
        }
        let descent = (px as i32 * 3) / 10;
        let w = (width + margin) as usize;
        let h = (margin * 2 + cap + descent + (lines.len() as i32 - 1) * line_height) as usize;

        let mut canvas = GrayImage::new(w, h, bg);
        draw_blotches(&mut canvas, bg, p, &mut rng);
        for g in &placed {
            blit_glyph(&mut canvas, &g.glyph, g.x, g.y, ink);
        }

        let rotation = p.rotation_deg.sample(&mut rng);
        let dx = p.translation_px.sample(&mut rng);
        let dy = p.translation_px.sample(&mut rng);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let to_source = AffineTransform::content_motion(cx, cy, rotation, 1.0, dx, dy)?;
        let forward = to_source.inverse()?;
        let mut image = warp_affine(&canvas, &to_source, bg)?;
        let sigma = p.blur_sigma.sample(&mut rng);
        if sigma > 0.0 {
            image = gaussian_blur(&image, sigma);
        }

        let boxes = placed
            .iter()
            .map(|g| {
                transformed_box(
                    &forward,
                    g.x as f64,
                    g.y as f64,
                    g.glyph.width.max(1) as f64,
                    g.glyph.height.max(1) as f64,
                    w,
                    h,
                )
            })
            .collect();

        Ok(TextFieldSample {
            image,
            text: text.to_owned(),
            boxes,
            style: p.style_id.clone(),
            seed,
        })
    }
}

fn draw_blotches(canvas: &mut GrayImage, bg: u8, p: &GenParams, rng: &mut SeededRng) {
    let n = p.blotch_count.sample(rng);
    for _ in 0..n {
        let cx = rng.index(canvas.width()) as i32;
        let cy = rng.index(canvas.height()) as i32;
        let rx = p.blotch_radius.sample(rng).max(1);
        let ry = p.blotch_radius.sample(rng).max(1);
        let value = (i32::from(bg) + p.blotch_delta.sample(rng)).clamp(0, 255) as u8;
        for y in (cy - ry)..=(cy + ry) {
            for x in (cx - rx)..=(cx + rx) {
                if x < 0 || y < 0 || x >= canvas.width() as i32 || y >= canvas.height() as i32 {
                    continue;
                }
                let (nx, ny) = (
                    f64::from(x - cx) / f64::from(rx),
                    f64::from(y - cy) / f64::from(ry),
                );
                if nx * nx + ny * ny <= 1.0 {
                    canvas.set(x as usize, y as usize, value);
                }
            }
        }
    }
}

/// Alpha-composites `ink` through the glyph coverage with its top-left at (x, y).
fn blit_glyph(canvas: &mut GrayImage, g: &Glyph, x: i32, y: i32, ink: u8) {
    let ink = u32::from(ink);
    for gy in 0..g.height {
        let cy = y + gy as i32;
        if cy < 0 || cy >= canvas.height() as i32 {
            continue;
        }
        for gx in 0..g.width {
            let cx = x + gx as i32;
            if cx < 0 || cx >= canvas.width() as i32 {
                continue;
            }
            let a = u32::from(g.coverage[gy * g.width + gx]);
            if a == 0 {
                continue;
            }
            let bgv = u32::from(canvas.get(cx as usize, cy as usize));
            let v = (bgv * (255 - a) + ink * a + 127) / 255;
            canvas.set(cx as usize, cy as usize, v as u8);
        }
    }
}

fn transformed_box(
    forward: &AffineTransform,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    img_w: usize,
    img_h: usize,
) -> BBox {
    let corners = [
        (x, y),
        (x + w - 1.0, y),
        (x, y + h - 1.0),
        (x + w - 1.0, y + h - 1.0),
    ];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (cx, cy) in corners {
        let (tx, ty) = forward.apply(cx, cy);
        x0 = x0.min(tx);
        y0 = y0.min(ty);
        x1 = x1.max(tx);
        y1 = y1.max(ty);
    }
    let clamp = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
    let (x0, x1) = (clamp(x0, img_w), clamp(x1, img_w));
    let (y0, y1) = (clamp(y0, img_h), clamp(y1, img_h));
    BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}
