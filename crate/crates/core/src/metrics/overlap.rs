use alloc::format;
use alloc::vec::Vec;

use crate::data::LabelMap;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.dims(), b.dims()),
        ))
    }
}

/// `2|A∩B| / (|A|+|B|)` for one class; 1 when both are empty.
pub fn dice(pred: &LabelMap, truth: &LabelMap, class: u8) -> Result<f64> {
    same_shape("dice", pred, truth)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (ip, it) = (p == class, t == class);
        a += ip as usize;
        b += it as usize;
        both += (ip && it) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Pixels of `class` with at least one 8-neighbour outside the class;
/// positions beyond the grid count as outside.
pub fn boundary(mask: &LabelMap, class: u8) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let inside = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && y < h as isize
            && x < w as isize
            && mask.get(y as usize, x as usize) == class
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) != class {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            let edge = (-1..=1).any(|dy| (-1..=1).any(|dx| !inside(yi + dy, xi + dx)));
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// Directed Hausdorff in squared mm: for every point of `from`, the
/// nearest point of `to`, searched row by row over `to` grouped by row.
fn directed_sq(from: &[(usize, usize)], to_rows: &[Vec<usize>], spacing: (f64, f64)) -> f64 {
    let mut worst = 0.0f64;
    for &(y, x) in from {
        let mut best = f64::INFINITY;
        for (r, cols) in to_rows.iter().enumerate() {
            if cols.is_empty() {
                continue;
            }
            let dy = (y as f64 - r as f64) * spacing.0;
            let row_sq = dy * dy;
            if row_sq > best {
                continue;
            }
            // closest column in this row
            let i = cols.partition_point(|&c| c < x);
            for &c in cols[i.saturating_sub(1)..(i + 1).min(cols.len())].iter() {
                let dx = (x as f64 - c as f64) * spacing.1;
                let d = dy * dy + dx * dx;
                if d < best {
                    best = d;
                }
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Symmetric Hausdorff distance in mm between the boundaries of `class`
/// in two masks, with `(row, column)` pixel spacing. `None` when the class
/// is absent from either mask.
pub fn hausdorff_mm(
    pred: &LabelMap,
    truth: &LabelMap,
    class: u8,
    spacing: (f64, f64),
) -> Result<Option<f64>> {
    same_shape("hausdorff", pred, truth)?;
    let a = boundary(pred, class);
    let b = boundary(truth, class);
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let rows = |pts: &[(usize, usize)]| {
        let mut r = alloc::vec![Vec::new(); pred.height()];
        for &(y, x) in pts {
            r[y].push(x);
        }
        r
    };
    let d = directed_sq(&a, &rows(&b), spacing).max(directed_sq(&b, &rows(&a), spacing));
    Ok(Some(libm::sqrt(d)))
}
