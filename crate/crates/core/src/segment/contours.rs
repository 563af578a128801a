//! Suzuki–Abe topological border following over 8-connected foreground.
//!
//! Every 8-connected foreground component has exactly one outer border, so
//! components are identified with their outer borders. Hole borders are
//! traced too (the algorithm needs them to label pixels consistently) and
//! map back to the outer border of the component that surrounds the hole.

use crate::imaging::{BBox, BinaryImage};

/// One connected component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Bounding box of the outer border (which bounds the component).
    pub bbox: BBox,
    /// Foreground pixel count.
    pub area: usize,
    /// Outer-border pixels in tracing order.
    pub border: Vec<(usize, usize)>,
}

/// Components plus a per-pixel component index (`None` for background).
#[derive(Debug, Clone)]
pub struct ComponentMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Option<u32>>,
    pub components: Vec<Component>,
}

impl ComponentMap {
    pub fn label(&self, x: usize, y: usize) -> Option<u32> {
        self.labels[y * self.width + x]
    }
}

// Clockwise starting east, in (drow, dcol) with rows pointing down.
const DIRS: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

fn dir_index(from: (i64, i64), to: (i64, i64)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    DIRS.iter().position(|&x| x == d).expect("neighbour")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BorderKind {
    Outer,
    Hole,
}

struct BorderInfo {
    kind: BorderKind,
    /// For holes: the outer border of the enclosing component.
    owner: u32,
}

/// Traces all borders and labels every foreground pixel with its component.
pub fn trace_contours(img: &BinaryImage) -> ComponentMap {
    let (w, h) = (img.width(), img.height());
    let pw = w + 2;
    let ph = h + 2;
    let mut f = vec![0i32; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y) {
                f[(y + 1) * pw + x + 1] = 1;
            }
        }
    }
    let at = |r: i64, c: i64| (r as usize) * pw + c as usize;

    // Border ids start at 2; id 1 is the frame.
    let mut borders: Vec<BorderInfo> = vec![
        BorderInfo {
            kind: BorderKind::Hole,
            owner: 0,
        },
        BorderInfo {
            kind: BorderKind::Hole,
            owner: 0,
        },
    ];
    let mut outer_points: Vec<Vec<(usize, usize)>> = Vec::new();
    // Border id -> component index, for outer borders.
    let mut component_of_border: Vec<Option<u32>> = vec![None, None];

    let mut nbd: i32 = 1;
    for i in 1..(ph as i64 - 1) {
        let mut lnbd: i32 = 1;
        for j in 1..(pw as i64 - 1) {
            let v = f[at(i, j)];
            if v == 0 {
                continue;
            }
            let start = if v == 1 && f[at(i, j - 1)] == 0 {
                Some((BorderKind::Outer, (i, j - 1)))
            } else if v >= 1 && f[at(i, j + 1)] == 0 {
                if v > 1 {
                    lnbd = v;
                }
                Some((BorderKind::Hole, (i, j + 1)))
            } else {
                None
            };

            if let Some((kind, from)) = start {
                nbd += 1;
                let owner = match kind {
                    BorderKind::Outer => {
                        let idx = outer_points.len() as u32;
                        outer_points.push(Vec::new());
                        component_of_border.push(Some(idx));
                        idx
                    }
                    BorderKind::Hole => {
                        // The pixel at (i, j) belongs to the component
                        // bounded by border `lnbd` (directly, or via that
                        // border's owner when it is itself a hole).
                        let parent = &borders[lnbd.unsigned_abs() as usize];
                        let owner = match parent.kind {
                            BorderKind::Outer => component_of_border[lnbd as usize]
                                .expect("outer border has a component"),
                            BorderKind::Hole => parent.owner,
                        };
                        component_of_border.push(None);
                        owner
                    }
                };
                borders.push(BorderInfo { kind, owner });

                let points = follow_border(&mut f, pw, (i, j), from, nbd);
                if kind == BorderKind::Outer {
                    outer_points[owner as usize] = points
                        .into_iter()
                        .map(|(r, c)| ((c - 1) as usize, (r - 1) as usize))
                        .collect();
                }
            }

            let v = f[at(i, j)];
            if v != 1 {
                lnbd = v.abs();
            }
        }
    }

    // Assign every foreground pixel to a component: along a row, the
    // nearest labelled pixel to the left lies on a border of the same
    // component (each run starts on a border pixel).
    let mut labels = vec![None; w * h];
    let mut areas = vec![0usize; outer_points.len()];
    for y in 0..h {
        let mut current: Option<u32> = None;
        for x in 0..w {
            let v = f[(y + 1) * pw + x + 1];
            if v == 0 {
                continue;
            }
            if v != 1 {
                let id = v.unsigned_abs() as usize;
                current = Some(match borders[id].kind {
                    BorderKind::Outer => component_of_border[id].expect("outer"),
                    BorderKind::Hole => borders[id].owner,
                });
            }
            let c = current.expect("every run starts on a border pixel");
            labels[y * w + x] = Some(c);
            areas[c as usize] += 1;
        }
    }

    let components = outer_points
        .into_iter()
        .zip(areas)
        .map(|(border, area)| {
            let x0 = border.iter().map(|p| p.0).min().unwrap_or(0);
            let x1 = border.iter().map(|p| p.0).max().unwrap_or(0);
            let y0 = border.iter().map(|p| p.1).min().unwrap_or(0);
            let y1 = border.iter().map(|p| p.1).max().unwrap_or(0);
            Component {
                bbox: BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
                area,
                border,
            }
        })
        .collect();

    ComponentMap {
        width: w,
        height: h,
        labels,
        components,
    }
}

/// Steps 3.1–3.5 of the border following procedure. Returns the visited
/// border pixels in padded (row, col) coordinates.
fn follow_border(
    f: &mut [i32],
    pw: usize,
    start: (i64, i64),
    from: (i64, i64),
    nbd: i32,
) -> Vec<(i64, i64)> {
    let at = |p: (i64, i64)| (p.0 as usize) * pw + p.1 as usize;
    let step = |p: (i64, i64), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);

    // 3.1: clockwise from `from` for the first nonzero neighbour.
    let d0 = dir_index(start, from);
    let first = (0..8)
        .map(|k| step(start, (d0 + k) % 8))
        .find(|&p| f[at(p)] != 0);
    let Some(p1) = first else {
        f[at(start)] = -nbd;
        return vec![start];
    };

    let mut points = Vec::new();
    let mut p2 = p1;
    let mut p3 = start;
    loop {
        // 3.3: counter-clockwise around p3, starting after p2.
        let d2 = dir_index(p3, p2);
        let mut east_zero_examined = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (d2 + 8 - k) % 8;
            let q = step(p3, d);
            if f[at(q)] != 0 {
                p4 = q;
                break;
            }
            if d == 0 {
                east_zero_examined = true;
            }
        }
        // 3.4
        if east_zero_examined {
            f[at(p3)] = -nbd;
        } else if f[at(p3)] == 1 {
            f[at(p3)] = nbd;
        }
        points.push(p3);
        // 3.5
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    points
}
