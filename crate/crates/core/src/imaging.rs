//! Raster primitives shared by every pipeline stage.
//!
//! Intensities follow the scanner convention: 0 is black ink, 255 is white
//! paper. Binary images mark ink (foreground) as `true`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Side length of every classifier input patch.
pub const PATCH_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput);
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Copies the region `r`, which must lie inside the image.
    pub fn crop(&self, r: BBox) -> GrayImage {
        assert!(
            r.right() <= self.width && r.bottom() <= self.height,
            "crop {r:?} outside {}x{}",
            self.width,
            self.height
        );
        let mut data = Vec::with_capacity(r.w * r.h);
        for y in r.y..r.bottom() {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.right()]);
        }
        GrayImage {
            width: r.w,
            height: r.h,
            data,
        }
    }

    /// Copies a region that may extend past the image; outside pixels get `fill`.
    pub fn crop_padded(&self, x: i64, y: i64, w: usize, h: usize, fill: u8) -> GrayImage {
        let mut out = GrayImage::new(w, h, fill);
        for oy in 0..h {
            let sy = y + oy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for ox in 0..w {
                let sx = x + ox as i64;
                if sx >= 0 && sx < self.width as i64 {
                    out.set(ox, oy, self.get(sx as usize, sy as usize));
                }
            }
        }
        out
    }

    /// Median of the outermost ring of pixels.
    pub fn border_median(&self) -> u8 {
        let (w, h) = (self.width, self.height);
        let mut ring = Vec::with_capacity(2 * (w + h));
        for x in 0..w {
            ring.push(self.get(x, 0));
            if h > 1 {
                ring.push(self.get(x, h - 1));
            }
        }
        for y in 1..h.saturating_sub(1) {
            ring.push(self.get(0, y));
            if w > 1 {
                ring.push(self.get(w - 1, y));
            }
        }
        median_u8(&mut ring)
    }

    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v) / 255.0).collect()
    }
}

pub(crate) fn median_u8(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    values[values.len() / 2]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, r: BBox) -> BinaryImage {
        assert!(r.right() <= self.width && r.bottom() <= self.height);
        let mut data = Vec::with_capacity(r.w * r.h);
        for y in r.y..r.bottom() {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.right()]);
        }
        BinaryImage {
            width: r.w,
            height: r.h,
            data,
        }
    }

    /// Tight box around all foreground pixels, if any.
    pub fn ink_bounds(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        let r = self.right().max(other.right());
        let b = self.bottom().max(other.bottom());
        BBox::new(x, y, r - x, b - y)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn offset(&self, dx: usize, dy: usize) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Width of the intersection of the two horizontal spans.
    pub fn x_overlap(&self, other: &BBox) -> usize {
        self.right()
            .min(other.right())
            .saturating_sub(self.x.max(other.x))
    }
}

/// Local-mean adaptive threshold over a `window`×`window` neighbourhood.
///
/// A pixel is ink iff it is darker than the mean of its window minus
/// `offset`. Windows are truncated at the image border rather than padded.
/// The comparison is done in integers, `(p + offset) * n < sum`, so the
/// result is exact.
pub fn binarize_adaptive(img: &GrayImage, window: usize, offset: i32) -> Result<BinaryImage> {
    if img.data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (w, h) = (img.width, img.height);
    let half = window.max(1) / 2;

    // Summed-area table with a zero first row/column.
    let stride = w + 1;
    let mut sat = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += u64::from(img.get(x, y));
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }

    let mut out = BinaryImage::new(w, h);
    for y in 0..h {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(w);
            let sum = sat[y1 * stride + x1] + sat[y0 * stride + x0]
                - sat[y0 * stride + x1]
                - sat[y1 * stride + x0];
            let n = ((x1 - x0) * (y1 - y0)) as i64;
            let p = i64::from(img.get(x, y));
            if (p + i64::from(offset)) * n < sum as i64 {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Per-row foreground counts.
pub fn h_projection(img: &BinaryImage) -> Vec<usize> {
    img.data
        .chunks_exact(img.width.max(1))
        .map(|row| row.iter().filter(|&&b| b).count())
        .take(img.height)
        .collect()
}

/// Per-column foreground counts.
pub fn v_projection(img: &BinaryImage) -> Vec<usize> {
    let mut cols = vec![0usize; img.width];
    for row in img.data.chunks_exact(img.width.max(1)) {
        for (c, &b) in cols.iter_mut().zip(row) {
            *c += usize::from(b);
        }
    }
    cols
}

/// 2×3 affine map from *output* coordinates to *source* coordinates:
///
/// ```text
/// sx = a·x + b·y + tx
/// sy = c·x + d·y + ty
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::DegenerateTransform);
        }
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(AffineTransform {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            tx: self.a * other.tx + self.b * other.ty + self.tx,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
            ty: self.c * other.tx + self.d * other.ty + self.ty,
        }
    }

    /// Builds the output→source map for a forward motion of the content:
    /// rotate by `degrees` (counter-clockwise on screen) and scale by `scale`
    /// about `(cx, cy)`, then shift by `(dx, dy)`.
    pub fn content_motion(
        cx: f64,
        cy: f64,
        degrees: f64,
        scale: f64,
        dx: f64,
        dy: f64,
    ) -> Result<AffineTransform> {
        let (s, c) = degrees.to_radians().sin_cos();
        // Screen y points down, so a visually counter-clockwise rotation
        // negates the sine terms.
        let fa = scale * c;
        let fb = scale * s;
        let fc = -scale * s;
        let fd = scale * c;
        let forward = AffineTransform {
            a: fa,
            b: fb,
            c: fc,
            d: fd,
            tx: cx + dx - (fa * cx + fb * cy),
            ty: cy + dy - (fc * cx + fd * cy),
        };
        forward.inverse()
    }

    /// Output→source map for shifting content by `(dx, dy)`.
    pub fn shift(dx: f64, dy: f64) -> AffineTransform {
        AffineTransform {
            tx: -dx,
            ty: -dy,
            ..Self::IDENTITY
        }
    }
}

/// Nearest-neighbour affine warp into an image of the same size.
pub fn warp_affine(img: &GrayImage, t: &AffineTransform, fill: u8) -> Result<GrayImage> {
    let det = t.determinant();
    if det.abs() < 1e-12 || !det.is_finite() {
        return Err(Error::DegenerateTransform);
    }
    let (w, h) = (img.width, img.height);
    let mut out = GrayImage::new(w, h, fill);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.apply(x as f64, y as f64);
            let (sx, sy) = (sx.round(), sy.round());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.data[y * w + x] = img.data[sy as usize * w + sx as usize];
            }
        }
    }
    Ok(out)
}

/// Scales `img` so that its longer side equals `side` and centres it on a
/// `side`×`side` canvas filled with the median border intensity.
pub fn normalize_patch(img: &GrayImage, side: usize) -> GrayImage {
    if img.width == side && img.height == side {
        return img.clone();
    }
    let bg = img.border_median();
    let longer = img.width.max(img.height) as f64;
    let scale = side as f64 / longer;
    let nw = ((img.width as f64 * scale).round() as usize).clamp(1, side);
    let nh = ((img.height as f64 * scale).round() as usize).clamp(1, side);
    let scaled = resize(img, nw, nh);
    let mut out = GrayImage::new(side, side, bg);
    let (ox, oy) = ((side - nw) / 2, (side - nh) / 2);
    for y in 0..nh {
        let dst = (oy + y) * side + ox;
        out.data[dst..dst + nw].copy_from_slice(&scaled.data[y * nw..(y + 1) * nw]);
    }
    out
}

/// Resamples to `nw`×`nh`: area averaging when shrinking an axis, bilinear
/// interpolation when enlarging it.
pub fn resize(img: &GrayImage, nw: usize, nh: usize) -> GrayImage {
    if nw == img.width && nh == img.height {
        return img.clone();
    }
    let xs = axis_weights(img.width, nw);
    let ys = axis_weights(img.height, nh);
    // Separable: columns first into an f32 buffer, then rows.
    let mut tmp = vec![0f32; img.height * nw];
    for y in 0..img.height {
        let row = &img.data[y * img.width..(y + 1) * img.width];
        for (ox, taps) in xs.iter().enumerate() {
            tmp[y * nw + ox] = taps.iter().map(|&(i, wt)| f32::from(row[i]) * wt).sum();
        }
    }
    let mut out = GrayImage::new(nw, nh, 0);
    for (oy, taps) in ys.iter().enumerate() {
        for ox in 0..nw {
            let v: f32 = taps.iter().map(|&(i, wt)| tmp[i * nw + ox] * wt).sum();
            out.data[oy * nw + ox] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            if ratio > 1.0 {
                // Box filter over [o*ratio, (o+1)*ratio).
                let lo = o as f64 * ratio;
                let hi = lo + ratio;
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        taps.push((i, (cover / ratio) as f32));
                    }
                    i += 1;
                }
                taps
            } else {
                let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let f = (pos - i0 as f64) as f32;
                if i1 == i0 || f == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            }
        })
        .collect()
}

/// Separable Gaussian blur; `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (img.width as i64, img.height as i64);
    let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1) as usize;
    let mut tmp = vec![0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = clamp(x + k as i64 - radius, w);
                acc += wt * f64::from(img.data[y as usize * img.width + sx]);
            }
            tmp[(y * w + x) as usize] = acc / norm;
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = clamp(y + k as i64 - radius, h);
                acc += wt * tmp[sy * img.width + x as usize];
            }
            out.data[(y * w + x) as usize] = (acc / norm).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// I/O

pub fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    GrayImage::from_vec(w as usize, h as usize, img.into_raw())
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf).write_image(
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(buf)
}

pub fn write_png(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).at(path)
}

pub fn write_pgm<W: Write>(img: &GrayImage, mut out: W) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.data)
}

pub fn read_pgm<R: Read>(input: R) -> Result<GrayImage> {
    let mut reader = BufReader::new(input);
    let mut fields = Vec::new();
    let mut line = String::new();
    while fields.len() < 4 {
        line.clear();
        if reader
            .read_line(&mut line)
            .map_err(|e| Error::InvalidImage(e.to_string()))?
            == 0
        {
            return Err(Error::InvalidImage("truncated PGM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        fields.extend(content.split_whitespace().map(str::to_owned));
    }
    if fields[0] != "P5" {
        return Err(Error::InvalidImage(format!(
            "unsupported magic {}",
            fields[0]
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::InvalidImage(format!("bad PGM header field {s:?}")))
    };
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(Error::InvalidImage(format!("unsupported maxval {max}")));
    }
    let mut data = vec![0u8; w * h];
    reader
        .read_exact(&mut data)
        .map_err(|e| Error::InvalidImage(e.to_string()))?;
    GrayImage::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Brute-force truncated-window mean threshold, kept independent of the
    /// summed-area table path.
    fn binarize_oracle(img: &GrayImage, window: usize, offset: i32) -> BinaryImage {
        let half = (window / 2) as i64;
        let mut out = BinaryImage::new(img.width(), img.height());
        for y in 0..img.height() as i64 {
            for x in 0..img.width() as i64 {
                let (mut sum, mut n) = (0f64, 0f64);
                for yy in (y - half)..=(y + half) {
                    for xx in (x - half)..=(x + half) {
                        if xx >= 0 && yy >= 0 && xx < img.width() as i64 && yy < img.height() as i64
                        {
                            sum += f64::from(img.get(xx as usize, yy as usize));
                            n += 1.0;
                        }
                    }
                }
                let p = f64::from(img.get(x as usize, y as usize));
                out.set(x as usize, y as usize, p < sum / n - f64::from(offset));
            }
        }
        out
    }

    fn random_gray(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = SeededRng::new(seed);
        let data = (0..w * h).map(|_| rng.below(256) as u8).collect();
        GrayImage::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn uniform_image_is_all_background() {
        let img = GrayImage::new(20, 20, 128);
        assert_eq!(binarize_adaptive(&img, 15, 10).unwrap().count(), 0);
    }

    #[test]
    fn dark_block_is_recovered_exactly() {
        let mut img = GrayImage::new(32, 32, 255);
        for y in 12..20 {
            for x in 12..20 {
                img.set(x, y, 0);
            }
        }
        let bin = binarize_adaptive(&img, 15, 10).unwrap();
        assert_eq!(bin, binarize_oracle(&img, 15, 10));
        for y in 0..32 {
            for x in 0..32 {
                let inside = (12..20).contains(&x) && (12..20).contains(&y);
                assert_eq!(bin.get(x, y), inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn glyph_on_gradient_beats_every_global_threshold() {
        // Horizontal ramp 0..255 with a dark bar drawn 60 levels below the
        // local background at each end.
        let (w, h) = (128, 32);
        let mut img = GrayImage::new(w, h, 0);
        let bg = |x: usize| (x * 255 / (w - 1)) as u8;
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, bg(x));
            }
        }
        let mut truth = BinaryImage::new(w, h);
        for &x0 in &[20usize, 100] {
            for y in 10..22 {
                for x in x0..x0 + 4 {
                    img.set(x, y, bg(x).saturating_sub(60));
                    truth.set(x, y, true);
                }
            }
        }
        let bin = binarize_adaptive(&img, 15, 10).unwrap();
        assert_eq!(bin, binarize_oracle(&img, 15, 10));
        assert_eq!(bin, truth);
        for t in 0..=255u16 {
            let global: Vec<bool> = img.data().iter().map(|&p| u16::from(p) < t).collect();
            assert_ne!(
                global,
                truth.data(),
                "threshold {t} should not separate the glyphs"
            );
        }
    }

    #[test]
    fn sat_threshold_matches_oracle_on_noise() {
        for seed in 0..5 {
            let img = random_gray(seed, 23, 17);
            for &(win, off) in &[(3, 0), (7, 10), (25, -5)] {
                assert_eq!(
                    binarize_adaptive(&img, win, off).unwrap(),
                    binarize_oracle(&img, win, off)
                );
            }
        }
    }

    #[test]
    fn bilevel_image_keeps_its_ink_with_zero_offset() {
        let mut rng = SeededRng::new(11);
        let mut img = GrayImage::new(30, 30, 255);
        for y in 0..30 {
            for x in 0..30 {
                if rng.chance(0.3) {
                    img.set(x, y, 0);
                }
            }
        }
        for window in [3, 9, 25] {
            let bin = binarize_adaptive(&img, window, 0).unwrap();
            assert_eq!(bin, binarize_oracle(&img, window, 0));
            // Ink is always below a mean that includes some paper; paper never is.
            for y in 0..30 {
                for x in 0..30 {
                    if img.get(x, y) == 255 {
                        assert!(!bin.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn projections_basic() {
        let empty = BinaryImage::new(4, 4);
        assert_eq!(h_projection(&empty), vec![0; 4]);
        let mut row = BinaryImage::new(4, 4);
        for x in 0..4 {
            row.set(x, 2, true);
        }
        assert_eq!(h_projection(&row), vec![0, 0, 4, 0]);
        assert_eq!(v_projection(&row), vec![1; 4]);
    }

    #[test]
    fn projections_match_popcount_oracle() {
        let mut rng = SeededRng::new(9);
        let data: Vec<bool> = (0..256).map(|_| rng.chance(0.4)).collect();
        let img = BinaryImage::from_vec(16, 16, data).unwrap();
        let (hp, vp) = (h_projection(&img), v_projection(&img));
        for i in 0..16 {
            let row = (0..16).filter(|&x| img.get(x, i)).count();
            let col = (0..16).filter(|&y| img.get(i, y)).count();
            assert_eq!(hp[i], row);
            assert_eq!(vp[i], col);
        }
    }

    #[test]
    fn identity_warp_is_identity() {
        let img = random_gray(1, 13, 9);
        assert_eq!(
            warp_affine(&img, &AffineTransform::IDENTITY, 0).unwrap(),
            img
        );
    }

    #[test]
    fn shift_moves_content_right() {
        let img = random_gray(2, 10, 6);
        let out = warp_affine(&img, &AffineTransform::shift(3.0, 0.0), 7).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                let expect = if x < 3 { 7 } else { img.get(x - 3, y) };
                assert_eq!(out.get(x, y), expect);
            }
        }
    }

    #[test]
    fn half_turn_flips_both_axes() {
        let img = random_gray(3, 5, 5);
        let t = AffineTransform::content_motion(2.0, 2.0, 180.0, 1.0, 0.0, 0.0).unwrap();
        let out = warp_affine(&img, &t, 0).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.get(x, y), img.get(4 - x, 4 - y));
            }
        }
    }

    #[test]
    fn singular_transform_is_rejected() {
        let img = GrayImage::new(4, 4, 0);
        let t = AffineTransform {
            a: 1.0,
            b: 2.0,
            c: 2.0,
            d: 4.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert!(matches!(
            warp_affine(&img, &t, 0),
            Err(Error::DegenerateTransform)
        ));
    }

    #[test]
    fn normalize_patch_geometry() {
        let img = random_gray(4, 64, 64);
        assert_eq!(normalize_patch(&img, 64), img);

        // 32 wide, 64 tall: no scaling, 16-px margins left and right.
        let mut tall = GrayImage::new(32, 64, 200);
        tall.set(0, 0, 0);
        let out = normalize_patch(&tall, 64);
        assert_eq!((out.width(), out.height()), (64, 64));
        assert_eq!(out.get(16, 0), 0);
        assert_eq!(out.get(15, 0), 200);
        assert_eq!(out.get(48, 0), 200);

        // 128×32 shrinks to 64×16, centred vertically at rows 24..40.
        let wide = GrayImage::new(128, 32, 10);
        let mut framed = wide.clone();
        for x in 0..128 {
            framed.set(x, 0, 250);
            framed.set(x, 31, 250);
        }
        let out = normalize_patch(&framed, 64);
        assert_eq!(out.get(32, 23), 250); // padding = border median
        assert_eq!(out.get(32, 32), 10);
        assert_eq!(out.get(32, 40), 250);
    }

    #[test]
    fn pgm_round_trip() {
        let img = random_gray(5, 7, 3);
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        assert_eq!(read_pgm(&buf[..]).unwrap(), img);
    }

    proptest! {
        #[test]
        fn projection_sums_agree(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let data: Vec<bool> = (0..w * h).map(|_| rng.chance(0.5)).collect();
            let img = BinaryImage::from_vec(w, h, data).unwrap();
            let total = img.count();
            prop_assert_eq!(h_projection(&img).iter().sum::<usize>(), total);
            prop_assert_eq!(v_projection(&img).iter().sum::<usize>(), total);
        }

        #[test]
        fn normalized_patch_is_always_square(w in 1usize..150, h in 1usize..150, seed in any::<u64>()) {
            let img = random_gray(seed, w, h);
            let out = normalize_patch(&img, 64);
            prop_assert_eq!((out.width(), out.height()), (64, 64));
            // Full content: longer side exactly fills the patch.
            let scale = 64.0 / w.max(h) as f64;
            let nw = ((w as f64 * scale).round() as usize).clamp(1, 64);
            let nh = ((h as f64 * scale).round() as usize).clamp(1, 64);
            prop_assert!(nw == 64 || nh == 64);
        }
    }
}
