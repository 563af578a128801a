//! Text-field decomposition: lines, then strings, then characters.
//!
//! Lines and strings are found from projection profiles of the binarized
//! field. Characters are connected components (found by border following)
//! merged and split by a few geometric rules:
//!
//! * components whose horizontal spans overlap by at least half of the
//!   narrower span are one character (umlaut dots, the 'i' dot);
//! * components smaller than `speckle_area` with no overlapping partner are
//!   dropped;
//! * a character much wider than the median is split at the deepest valley
//!   of its column projection.

mod contours;

use serde::{Deserialize, Serialize};

pub use contours::{trace_contours, Component, ComponentMap};

use crate::error::Result;
use crate::imaging::{
    binarize_adaptive, h_projection, normalize_patch, v_projection, BBox, BinaryImage, GrayImage,
    PATCH_SIDE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    pub window: usize,
    pub offset: i32,
    /// Blank rows required between two lines.
    pub min_gap: usize,
    /// Rows with at most this fraction of the width in ink count as blank.
    pub noise_floor: f64,
    /// A column gap wider than this multiple of the median gap separates strings.
    pub gap_factor: f64,
    /// Lower bound for a string-separating gap, as a fraction of the line height.
    pub min_word_gap: f64,
    /// Horizontal overlap, as a fraction of the narrower span, that merges components.
    pub merge_overlap: f64,
    pub speckle_area: usize,
    /// Characters wider than this multiple of the reference width are split.
    /// The reference is the median width, but at least `min_ref_width` times
    /// the text height.
    pub split_width: f64,
    pub min_ref_width: f64,
    /// A split valley may hold at most this fraction of the character height in ink.
    pub split_valley: f64,
    /// Side of the square crop around a character, in multiples of the text height.
    pub context: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            window: 25,
            offset: 10,
            min_gap: 2,
            noise_floor: 0.02,
            gap_factor: 2.5,
            min_word_gap: 0.4,
            merge_overlap: 0.5,
            speckle_area: 4,
            split_width: 1.6,
            min_ref_width: 1.05,
            split_valley: 0.2,
            context: 2.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CharPatch {
    pub bbox: BBox,
    pub patch: GrayImage,
}

#[derive(Debug, Clone)]
pub struct StringSegment {
    pub bbox: BBox,
    pub chars: Vec<CharPatch>,
}

#[derive(Debug, Clone)]
pub struct LineSegment {
    pub bbox: BBox,
    pub strings: Vec<StringSegment>,
}

/// Boxes are in field coordinates.
#[derive(Debug, Clone, Default)]
pub struct SegmentationResult {
    pub lines: Vec<LineSegment>,
}

impl SegmentationResult {
    pub fn char_count(&self) -> usize {
        self.chars().count()
    }

    /// Characters in reading order.
    pub fn chars(&self) -> impl Iterator<Item = &CharPatch> {
        self.lines
            .iter()
            .flat_map(|l| l.strings.iter())
            .flat_map(|s| s.chars.iter())
    }
}

/// Maximal row bands of ink, top to bottom.
pub fn split_lines(field: &BinaryImage, min_gap: usize, noise_floor: f64) -> Vec<BBox> {
    let hp = h_projection(field);
    let floor = noise_floor * field.width() as f64;
    let mut runs: Vec<(usize, usize)> = Vec::new(); // [start, end)
    let mut y = 0;
    while y < hp.len() {
        if hp[y] as f64 > floor {
            let start = y;
            while y < hp.len() && hp[y] as f64 > floor {
                y += 1;
            }
            match runs.last_mut() {
                Some(last) if start - last.1 < min_gap => last.1 = y,
                _ => runs.push((start, y)),
            }
        } else {
            y += 1;
        }
    }
    if runs.is_empty() {
        return Vec::new();
    }

    // Thin bands join their nearest neighbour when close to it (detached
    // accents) and are dropped otherwise (stray dots).
    let tallest = runs.iter().map(|r| r.1 - r.0).max().unwrap_or(0);
    let mut i = 0;
    while runs.len() > 1 && i < runs.len() {
        let (s, e) = runs[i];
        if ((e - s) as f64) < 0.4 * tallest as f64 {
            let gap_up = (i > 0).then(|| s - runs[i - 1].1);
            let gap_down = (i + 1 < runs.len()).then(|| runs[i + 1].0 - e);
            let (target, gap) = match (gap_up, gap_down) {
                (Some(u), Some(d)) if u <= d => (i - 1, u),
                (Some(u), None) => (i - 1, u),
                (_, Some(d)) => (i + 1, d),
                (None, None) => unreachable!("more than one run"),
            };
            if gap as f64 > 0.25 * tallest as f64 {
                runs.remove(i);
                i = 0;
                continue;
            }
            let (lo, hi) = (target.min(i), target.max(i));
            runs[lo] = (runs[lo].0.min(runs[hi].0), runs[lo].1.max(runs[hi].1));
            runs.remove(hi);
            i = 0;
        } else {
            i += 1;
        }
    }

    // Grow each band over faint rows (glyph tips below the noise floor),
    // stopping at blank rows or halfway to the next band.
    let n = runs.len();
    let mut grown = runs.clone();
    for k in 0..n {
        let lower_limit = if k == 0 {
            0
        } else {
            (runs[k - 1].1 + runs[k].0).div_ceil(2)
        };
        let upper_limit = if k + 1 == n {
            hp.len()
        } else {
            (runs[k].1 + runs[k + 1].0) / 2
        };
        while grown[k].0 > lower_limit && hp[grown[k].0 - 1] > 0 {
            grown[k].0 -= 1;
        }
        while grown[k].1 < upper_limit && hp[grown[k].1] > 0 {
            grown[k].1 += 1;
        }
    }

    grown
        .into_iter()
        .filter_map(|(s, e)| {
            let band = field.crop(BBox::new(0, s, field.width(), e - s));
            let vp = v_projection(&band);
            let x0 = vp.iter().position(|&c| c > 0)?;
            let x1 = vp.iter().rposition(|&c| c > 0)?;
            Some(BBox::new(x0, s, x1 - x0 + 1, e - s))
        })
        .collect()
}

/// Splits a line at column gaps much wider than the typical letter gap.
/// Boxes are relative to `line`.
pub fn split_strings(line: &BinaryImage, gap_factor: f64, min_word_gap: f64) -> Vec<BBox> {
    let vp = v_projection(line);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut x = 0;
    while x < vp.len() {
        if vp[x] > 0 {
            let s = x;
            while x < vp.len() && vp[x] > 0 {
                x += 1;
            }
            runs.push((s, x));
        } else {
            x += 1;
        }
    }
    if runs.is_empty() {
        return Vec::new();
    }
    let mut gaps: Vec<usize> = runs.windows(2).map(|w| w[1].0 - w[0].1).collect();
    let cuts: Vec<bool> = if gaps.is_empty() {
        Vec::new()
    } else {
        let original = gaps.clone();
        gaps.sort_unstable();
        let median = gaps[(gaps.len() - 1) / 2] as f64;
        let limit = (gap_factor * median).max(min_word_gap * line.height() as f64);
        original.iter().map(|&g| g as f64 > limit).collect()
    };

    let mut boxes = Vec::new();
    let mut start = runs[0].0;
    for (k, run) in runs.iter().enumerate() {
        let last = k + 1 == runs.len();
        if last || cuts[k] {
            let (x0, x1) = (start, run.1);
            let col = line.crop(BBox::new(x0, 0, x1 - x0, line.height()));
            if let Some(ink) = col.ink_bounds() {
                boxes.push(BBox::new(x0, ink.y, x1 - x0, ink.h));
            }
            if !last {
                start = runs[k + 1].0;
            }
        }
    }
    boxes
}

/// Extracts character patches from a single-string image. `gray` must have
/// the same size as `string_img`; crops that reach past it are padded with
/// its border intensity.
pub fn extract_chars(
    string_img: &BinaryImage,
    gray: &GrayImage,
    params: &SegmentParams,
) -> Result<Vec<CharPatch>> {
    if string_img.width() != gray.width() || string_img.height() != gray.height() {
        return Err(crate::Error::Shape(format!(
            "mask {}x{} vs image {}x{}",
            string_img.width(),
            string_img.height(),
            gray.width(),
            gray.height()
        )));
    }
    let fill = gray.border_median();
    Ok(extract_chars_in(string_img, gray, fill, None, params))
}

/// Vertical text band `[top, bottom)`: median top and bottom of the
/// components at least half as tall as the tallest.
fn text_band(comps: &[Component]) -> (usize, usize) {
    let max_h = comps.iter().map(|c| c.bbox.h).max().unwrap_or(0);
    let mut tops: Vec<usize> = Vec::new();
    let mut bottoms: Vec<usize> = Vec::new();
    for c in comps.iter().filter(|c| 2 * c.bbox.h >= max_h) {
        tops.push(c.bbox.y);
        bottoms.push(c.bbox.bottom());
    }
    if tops.is_empty() {
        return (0, 0);
    }
    tops.sort_unstable();
    bottoms.sort_unstable();
    (tops[tops.len() / 2], bottoms[bottoms.len() / 2])
}

struct Group {
    bbox: BBox,
    members: Vec<u32>,
}

/// Core of [`extract_chars`]: components are taken from `mask`, crops from
/// `gray`, which may extend beyond the string and supplies the context.
fn extract_chars_in(
    mask: &BinaryImage,
    gray: &GrayImage,
    fill: u8,
    band: Option<(usize, usize)>,
    params: &SegmentParams,
) -> Vec<CharPatch> {
    let map = trace_contours(mask);
    let comps = &map.components;
    if comps.is_empty() {
        return Vec::new();
    }

    let overlaps = |a: &BBox, b: &BBox| {
        let o = a.x_overlap(b) as f64;
        o > 0.0 && o >= params.merge_overlap * a.w.min(b.w) as f64
    };

    // Union-find over components with sufficient horizontal overlap.
    let n = comps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut has_partner = vec![false; n];
    for a in 0..n {
        for b in (a + 1)..n {
            if comps[a].bbox.x_overlap(&comps[b].bbox) > 0 {
                has_partner[a] = true;
                has_partner[b] = true;
            }
            if overlaps(&comps[a].bbox, &comps[b].bbox) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    let (band_top, band_bottom) = band.unwrap_or_else(|| text_band(comps));
    let band_h = band_bottom.saturating_sub(band_top).max(1);

    let mut groups: Vec<Group> = Vec::new();
    let mut group_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let b = comps[i].bbox;
        if !has_partner[i]
            && (comps[i].area < params.speckle_area
                || (b.bottom() <= band_top || b.y >= band_bottom) && 3 * b.h < band_h)
        {
            // Speckle, or a lone mark wholly above or below the text band.
            continue;
        }
        let r = find(&mut parent, i);
        if group_of_root[r] == usize::MAX {
            group_of_root[r] = groups.len();
            groups.push(Group {
                bbox: comps[i].bbox,
                members: vec![i as u32],
            });
        } else {
            let g = &mut groups[group_of_root[r]];
            g.bbox = g.bbox.union(&comps[i].bbox);
            g.members.push(i as u32);
        }
    }
    if groups.is_empty() {
        return Vec::new();
    }

    let boxes = split_wide_groups(&map, groups, band_h as f64, params);
    let mut boxes = boxes;
    boxes.sort_by_key(|b| (b.x, b.y));

    // Text height and baseline from the full-height characters.
    let mut heights: Vec<usize> = boxes.iter().map(|b| b.h).collect();
    heights.sort_unstable();
    let text_h = heights[((heights.len() - 1) as f64 * 0.8).round() as usize].max(1) as f64;
    let baseline = fit_baseline(&boxes, text_h);

    boxes
        .into_iter()
        .map(|bbox| {
            let cx = bbox.x as f64 + bbox.w as f64 / 2.0;
            let cy = baseline(cx) - text_h / 2.0;
            let side = (text_h * params.context).round().max(1.0) as usize;
            let x0 = (cx - side as f64 / 2.0).round() as i64;
            let y0 = (cy - side as f64 / 2.0).round() as i64;
            let crop = gray.crop_padded(x0, y0, side, side, fill);
            CharPatch {
                bbox,
                patch: normalize_patch(&crop, PATCH_SIDE),
            }
        })
        .collect()
}

/// Robust baseline `y(x)` through the bottoms of full-height characters
/// (Theil–Sen slope, median intercept).
fn fit_baseline(boxes: &[BBox], text_h: f64) -> impl Fn(f64) -> f64 {
    let pts: Vec<(f64, f64)> = boxes
        .iter()
        .filter(|b| b.h as f64 >= 0.6 * text_h)
        .map(|b| (b.x as f64 + b.w as f64 / 2.0, b.bottom() as f64))
        .collect();
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (slope, intercept) = if pts.len() >= 2 {
        let mut slopes = Vec::new();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let dx = pts[j].0 - pts[i].0;
                if dx.abs() > 1e-9 {
                    slopes.push((pts[j].1 - pts[i].1) / dx);
                }
            }
        }
        let slope = if slopes.is_empty() {
            0.0
        } else {
            median(&mut slopes)
        };
        let mut icepts: Vec<f64> = pts.iter().map(|p| p.1 - slope * p.0).collect();
        (slope, median(&mut icepts))
    } else if let Some(p) = pts.first() {
        (0.0, p.1)
    } else {
        let mut bottoms: Vec<f64> = boxes.iter().map(|b| b.bottom() as f64).collect();
        (0.0, median(&mut bottoms))
    };
    move |x| intercept + slope * x
}

fn split_wide_groups(
    map: &ComponentMap,
    groups: Vec<Group>,
    text_h: f64,
    params: &SegmentParams,
) -> Vec<BBox> {
    let mut widths: Vec<usize> = groups.iter().map(|g| g.bbox.w).collect();
    widths.sort_unstable();
    let median_w = widths[(widths.len() - 1) / 2] as f64;
    let limit = params.split_width * median_w.max(params.min_ref_width * text_h);

    let mut out = Vec::new();
    let mut stack: Vec<BBox> = groups.iter().map(|g| g.bbox).collect();
    let members: Vec<&[u32]> = groups.iter().map(|g| g.members.as_slice()).collect();
    let mut owner: Vec<usize> = (0..groups.len()).collect();

    while let Some(bbox) = stack.pop() {
        let gi = owner.pop().expect("parallel stacks");
        if (bbox.w as f64) <= limit || bbox.w < 4 {
            out.push(bbox);
            continue;
        }
        let is_member =
            |x: usize, y: usize| map.label(x, y).is_some_and(|l| members[gi].contains(&l));
        let cols: Vec<usize> = (bbox.x..bbox.right())
            .map(|x| (bbox.y..bbox.bottom()).filter(|&y| is_member(x, y)).count())
            .collect();
        // Search the inner 60% so a split never leaves a sliver.
        let lo = (bbox.w as f64 * 0.2).ceil() as usize;
        let hi = (bbox.w as f64 * 0.8).floor() as usize;
        let valley = (lo..hi.max(lo + 1).min(bbox.w)).min_by_key(|&i| (cols[i], i));
        let Some(cut) = valley else {
            out.push(bbox);
            continue;
        };
        if cols[cut] as f64 > params.split_valley * bbox.h as f64 {
            out.push(bbox);
            continue;
        }
        // Tight boxes on each side of the cut (the cut column is dropped).
        for (x0, x1) in [(bbox.x, bbox.x + cut), (bbox.x + cut + 1, bbox.right())] {
            let mut tight: Option<BBox> = None;
            for x in x0..x1 {
                for y in bbox.y..bbox.bottom() {
                    if is_member(x, y) {
                        let px = BBox::new(x, y, 1, 1);
                        tight = Some(tight.map_or(px, |t| t.union(&px)));
                    }
                }
            }
            if let Some(t) = tight {
                stack.push(t);
                owner.push(gi);
            }
        }
    }
    out
}

/// Full decomposition of a gray text-field image.
pub fn segment_field(field: &GrayImage, params: &SegmentParams) -> Result<SegmentationResult> {
    let bin = binarize_adaptive(field, params.window, params.offset)?;
    let fill = field.border_median();
    let mut result = SegmentationResult::default();
    for line_box in split_lines(&bin, params.min_gap, params.noise_floor) {
        let line = bin.crop(line_box);
        let (top, bottom) = text_band(&trace_contours(&line).components);
        let band = Some((top + line_box.y, bottom + line_box.y));
        let mut strings = Vec::new();
        for s in split_strings(&line, params.gap_factor, params.min_word_gap) {
            let sbox = s.offset(line_box.x, line_box.y);
            // Components come only from the string box; the gray context
            // around it is left intact for the crops.
            let mut mask = BinaryImage::new(field.width(), field.height());
            for y in sbox.y..sbox.bottom() {
                for x in sbox.x..sbox.right() {
                    mask.set(x, y, bin.get(x, y));
                }
            }
            let chars = extract_chars_in(&mask, field, fill, band, params);
            strings.push(StringSegment { bbox: sbox, chars });
        }
        result.lines.push(LineSegment {
            bbox: line_box,
            strings,
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::binarize_adaptive;
    use crate::synthgen::tests::generator;
    use crate::synthgen::GenParams;

    fn rect(img: &mut BinaryImage, x: usize, y: usize, w: usize, h: usize) {
        for yy in y..y + h {
            for xx in x..x + w {
                img.set(xx, yy, true);
            }
        }
    }

    #[test]
    fn two_rows_of_glyphs_are_two_lines() {
        let mut img = BinaryImage::new(60, 40);
        for k in 0..4 {
            rect(&mut img, 5 + k * 12, 5, 8, 10);
            rect(&mut img, 5 + k * 12, 25, 8, 10);
        }
        let lines = split_lines(&img, 3, 0.02);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], BBox::new(5, 5, 44, 10));
        assert_eq!(lines[1].y, 25);
    }

    #[test]
    fn blank_field_has_no_lines() {
        assert!(split_lines(&BinaryImage::new(30, 30), 2, 0.02).is_empty());
        assert!(split_strings(&BinaryImage::new(30, 10), 2.5, 0.4).is_empty());
    }

    #[test]
    fn accent_band_joins_its_line() {
        let mut img = BinaryImage::new(60, 40);
        rect(&mut img, 10, 5, 3, 3); // dots, 3 blank rows above the body
        rect(&mut img, 16, 5, 3, 3);
        rect(&mut img, 30, 36, 2, 2); // stray dot 10 rows below
        for k in 0..4 {
            rect(&mut img, 5 + k * 12, 11, 8, 14);
        }
        let lines = split_lines(&img, 2, 0.02);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].y, 5);
        assert_eq!(lines[0].bottom(), 25);
    }

    #[test]
    fn wide_gap_separates_strings() {
        let mut img = BinaryImage::new(100, 12);
        for x in [2, 12, 22, 52, 62, 72] {
            rect(&mut img, x, 1, 6, 10);
        }
        let strings = split_strings(&img, 2.5, 0.4);
        assert_eq!(strings.len(), 2);
        assert_eq!(strings[0], BBox::new(2, 1, 26, 10));
        assert_eq!(strings[1].x, 52);

        let mut tight = BinaryImage::new(100, 12);
        for x in [2, 12, 22, 32] {
            rect(&mut tight, x, 1, 6, 10);
        }
        assert_eq!(split_strings(&tight, 2.5, 0.4).len(), 1);
    }

    #[test]
    fn fused_glyphs_split_at_the_valley() {
        // Three 13-px glyphs; the last two are bridged by a 1-px line.
        let mut img = BinaryImage::new(60, 20);
        rect(&mut img, 2, 2, 13, 16);
        rect(&mut img, 20, 2, 13, 16);
        rect(&mut img, 36, 2, 13, 16);
        rect(&mut img, 33, 10, 3, 1);
        let gray = GrayImage::new(60, 20, 255);
        let chars = extract_chars(&img, &gray, &SegmentParams::default()).unwrap();
        let boxes: Vec<BBox> = chars.iter().map(|c| c.bbox).collect();
        // Oracle: the fused group spans columns 20..49 (29 > 1.6 * 1.05 * 16).
        // Its valley is the bridge, 1 px tall; the leftmost bridge column
        // (33) is the cut, so the right part starts at 34.
        assert_eq!(boxes.len(), 3, "{boxes:?}");
        assert_eq!(boxes[1], BBox::new(20, 2, 13, 16));
        assert_eq!(boxes[2].x, 34);
        assert_eq!(boxes[2].right(), 49);
    }

    #[test]
    fn speckle_is_dropped_but_dots_stay() {
        let mut img = BinaryImage::new(40, 20);
        rect(&mut img, 2, 2, 6, 14);
        rect(&mut img, 12, 13, 3, 3); // '.'-sized, kept
        img.set(25, 3, true); // single-pixel speckle
        rect(&mut img, 30, 2, 6, 14);
        let gray = GrayImage::new(40, 20, 255);
        let chars = extract_chars(&img, &gray, &SegmentParams::default()).unwrap();
        assert_eq!(chars.len(), 3);
        assert!(chars
            .iter()
            .all(|c| c.patch.width() == 64 && c.patch.height() == 64));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let img = BinaryImage::new(10, 10);
        let gray = GrayImage::new(10, 11, 0);
        assert!(extract_chars(&img, &gray, &SegmentParams::default()).is_err());
        let empty = extract_chars(&img, &GrayImage::new(10, 10, 0), &SegmentParams::default());
        assert!(empty.unwrap().is_empty());
    }

    fn segment_text(text: &str, params: GenParams, seed: u64) -> SegmentationResult {
        let g = generator(params);
        let f = g.render_field(text, seed).unwrap();
        segment_field(&f.image, &SegmentParams::default()).unwrap()
    }

    #[test]
    fn umlaut_merges_into_one_character() {
        for seed in 0..10 {
            let r = segment_text("ä", GenParams::pseudo_real(), seed);
            assert_eq!(r.char_count(), 1, "seed {seed}");
            let r = segment_text("MÜLLER", GenParams::pseudo_real(), seed);
            assert_eq!(r.char_count(), 6, "seed {seed}");
        }
    }

    #[test]
    fn digits_come_out_in_order() {
        for seed in 0..10 {
            let g = generator(GenParams::pseudo_real());
            let f = g.render_field("10", seed).unwrap();
            let r = segment_field(&f.image, &SegmentParams::default()).unwrap();
            let chars: Vec<&CharPatch> = r.chars().collect();
            assert_eq!(chars.len(), 2, "seed {seed}");
            // The '1' box lies over the first ground-truth box.
            assert!(chars[0].bbox.x_overlap(&f.boxes[0]) > 0);
            assert!(chars[1].bbox.x_overlap(&f.boxes[1]) > 0);
        }
    }

    #[test]
    fn word_gap_makes_two_strings() {
        for seed in 0..10 {
            let r = segment_text("ABC DEF", GenParams::pseudo_real(), seed);
            assert_eq!(r.lines.len(), 1);
            assert_eq!(r.lines[0].strings.len(), 2, "seed {seed}");
            let r = segment_text("ABCDEF", GenParams::pseudo_real(), seed);
            assert_eq!(r.lines[0].strings.len(), 1, "seed {seed}");
        }
    }

    #[test]
    fn multi_line_field() {
        let r = segment_text("AB12\nCD34", GenParams::source(), 4);
        assert_eq!(r.lines.len(), 2);
        assert_eq!(r.char_count(), 8);
    }

    #[test]
    fn nesting_and_order_hold() {
        let g = generator(GenParams::pseudo_real());
        for seed in 0..30 {
            let f = g.render_field("AB 1234 XY", seed).unwrap();
            let r = segment_field(&f.image, &SegmentParams::default()).unwrap();
            let field_box = BBox::new(0, 0, f.image.width(), f.image.height());
            for line in &r.lines {
                assert!(field_box.contains(&line.bbox));
                for s in &line.strings {
                    assert!(line.bbox.contains(&s.bbox));
                    for w in s.chars.windows(2) {
                        assert!(w[0].bbox.x <= w[1].bbox.x);
                    }
                    for c in &s.chars {
                        assert!(s.bbox.contains(&c.bbox), "{:?} in {:?}", c.bbox, s.bbox);
                    }
                }
            }
        }
    }

    #[test]
    fn segmentation_is_deterministic() {
        let g = generator(GenParams::pseudo_real());
        let f = g.render_field("31.12.1999", 8).unwrap();
        let a = segment_field(&f.image, &SegmentParams::default()).unwrap();
        let b = segment_field(&f.image, &SegmentParams::default()).unwrap();
        let pa: Vec<_> = a.chars().map(|c| (c.bbox, c.patch.clone())).collect();
        let pb: Vec<_> = b.chars().map(|c| (c.bbox, c.patch.clone())).collect();
        assert_eq!(pa, pb);
        let _ = binarize_adaptive(&f.image, 25, 10).unwrap();
    }

    fn single_string_fields(n: u64) -> Vec<(String, crate::synthgen::TextFieldSample)> {
        use crate::charset::ClassSubset;
        use crate::rng::SeededRng;
        use crate::synthgen::{FieldKind, FieldTextSampler};
        let kinds = vec![
            FieldKind::Date,
            FieldKind::DocNumber,
            FieldKind::Name,
            FieldKind::Number,
        ];
        let sampler = FieldTextSampler::new(ClassSubset::Desk, kinds);
        let g = generator(GenParams::pseudo_real());
        (0..n)
            .map(|seed| {
                let (_, text) = sampler.sample(&mut SeededRng::new(seed + 10_000));
                let f = g.render_field(&text, seed).unwrap();
                (text, f)
            })
            .collect()
    }

    #[test]
    fn generated_fields_are_single_lines() {
        let fields = single_string_fields(200);
        let ok = fields
            .iter()
            .filter(|(_, f)| {
                let bin = binarize_adaptive(&f.image, 25, 10).unwrap();
                split_lines(&bin, 2, 0.02).len() == 1
            })
            .count();
        assert!(ok as f64 >= 0.99 * 200.0, "{ok}/200");
    }

    #[test]
    fn char_counts_match_ground_truth() {
        let fields = single_string_fields(500);
        let ok = fields
            .iter()
            .filter(|(text, f)| {
                let r = segment_field(&f.image, &SegmentParams::default()).unwrap();
                r.char_count() == text.chars().count()
            })
            .count();
        assert!(ok as f64 >= 0.95 * 500.0, "{ok}/500");
    }
}
