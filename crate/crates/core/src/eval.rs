//! Registration quality (hard Dice) and regularity (Jacobian folding) metrics.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{argmax_labels, label_code, onehot_from_labels, DisplacementField, GridImage};
use crate::real::Real;
use crate::warp::warp_segmentation;

/// Hard Dice per label. Index 0 is background: it is reported but never averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceScores {
    /// `None` where the label is absent from both maps.
    pub per_label: Vec<Option<f64>>,
    /// Mean over present foreground labels; `None` if there are none.
    pub mean: Option<f64>,
}

impl DiceScores {
    pub fn label_count(&self) -> usize {
        self.per_label.len()
    }

    /// Mean over a subset of labels (e.g. the observed ones), skipping absent labels.
    pub fn mean_over(&self, labels: &[usize]) -> Option<f64> {
        let present: Vec<f64> = labels.iter().filter_map(|&k| self.per_label.get(k).copied().flatten()).collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Set-overlap Dice between two label images with `count` labels.
pub fn hard_dice<T: Real>(a: &GridImage<T>, b: &GridImage<T>, count: usize) -> Result<DiceScores> {
    if a.geom() != b.geom() {
        return Err(Error::GeometryMismatch { left: a.geom().dims().to_vec(), right: b.geom().dims().to_vec() });
    }
    let mut size_a = vec![0usize; count];
    let mut size_b = vec![0usize; count];
    let mut both = vec![0usize; count];
    for (index, (&x, &y)) in a.values().iter().zip(b.values()).enumerate() {
        let ka = label_code(x, count).ok_or(Error::LabelOutOfRange { index, value: x.as_f64(), count })?;
        let kb = label_code(y, count).ok_or(Error::LabelOutOfRange { index, value: y.as_f64(), count })?;
        size_a[ka] += 1;
        size_b[kb] += 1;
        if ka == kb {
            both[ka] += 1;
        }
    }
    let per_label: Vec<Option<f64>> = (0..count)
        .map(|k| {
            let denom = size_a[k] + size_b[k];
            (denom > 0).then(|| 2.0 * both[k] as f64 / denom as f64)
        })
        .collect();
    let fg: Vec<usize> = (1..count).collect();
    let scores = DiceScores { per_label, mean: None };
    let mean = scores.mean_over(&fg);
    Ok(DiceScores { mean, ..scores })
}

/// Warps the moving labels by `u` (one-hot, n-linear, argmax) and scores them against the fixed labels.
pub fn dice_eval<T: Real>(
    fixed_labels: &GridImage<T>,
    moving_labels: &GridImage<T>,
    u: &DisplacementField<T>,
    count: usize,
) -> Result<DiceScores> {
    let warped = warp_labels(moving_labels, u, count)?;
    hard_dice(fixed_labels, &warped, count)
}

/// Label image warped by `u` and hardened by argmax (ties to the lowest label).
pub fn warp_labels<T: Real>(labels: &GridImage<T>, u: &DisplacementField<T>, count: usize) -> Result<GridImage<T>> {
    let onehot = onehot_from_labels(labels, count)?;
    Ok(argmax_labels(&warp_segmentation(&onehot, u)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport<T> {
    pub folding_count: usize,
    pub folding_fraction: f64,
    pub evaluated_voxel_count: usize,
    /// `det(I + ∇u)` at every voxel, masked or not.
    pub det_field: GridImage<T>,
}

/// `∂u_c/∂x_a` for every voxel, laid out `[voxel][c][a]` with `ndim²` entries per voxel.
/// Central differences inside, one-sided differences on the first and last slice.
pub fn displacement_gradient<T: Real>(u: &DisplacementField<T>) -> Vec<T> {
    let g = u.geom();
    let n = g.ndim();
    let dims = g.dims3();
    let strides = g.strides3();
    let v = u.vectors();
    let half = T::lit(0.5);
    let mut out = vec![T::zero(); g.voxel_count() * n * n];
    for p in 0..g.voxel_count() {
        let coord = g.coord3(p);
        for a in 0..n {
            let (lo, hi, central) = if coord[a] == 0 {
                (p, p + strides[a], false)
            } else if coord[a] == dims[a] - 1 {
                (p - strides[a], p, false)
            } else {
                (p - strides[a], p + strides[a], true)
            };
            for c in 0..n {
                let d = v[hi * n + c] - v[lo * n + c];
                out[(p * n + c) * n + a] = if central { d * half } else { d };
            }
        }
    }
    out
}

pub fn jacobian_determinant<T: Real>(u: &DisplacementField<T>) -> GridImage<T> {
    let g = u.geom();
    let n = g.ndim();
    let grad = displacement_gradient(u);
    let values = grad
        .chunks_exact(n * n)
        .map(|d| {
            let j = |r: usize, c: usize| d[r * n + c] + if r == c { T::one() } else { T::zero() };
            if n == 2 {
                j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0)
            } else {
                j(0, 0) * (j(1, 1) * j(2, 2) - j(1, 2) * j(2, 1)) - j(0, 1) * (j(1, 0) * j(2, 2) - j(1, 2) * j(2, 0))
                    + j(0, 2) * (j(1, 0) * j(2, 1) - j(1, 1) * j(2, 0))
            }
        })
        .collect();
    GridImage::new(g, values).expect("finite field gives finite determinants")
}

/// Counts voxels with `det(I + ∇u) ≤ 0`, restricted to `mask > 0` when a mask is given.
pub fn jacobian_report<T: Real>(u: &DisplacementField<T>, mask: Option<&GridImage<T>>) -> Result<RegularityReport<T>> {
    if let Some(m) = mask {
        if m.geom() != u.geom() {
            return Err(Error::GeometryMismatch { left: u.geom().dims().to_vec(), right: m.geom().dims().to_vec() });
        }
    }
    let det_field = jacobian_determinant(u);
    let mut evaluated = 0;
    let mut folding = 0;
    for (p, &d) in det_field.values().iter().enumerate() {
        if mask.is_some_and(|m| m.values()[p] <= T::zero()) {
            continue;
        }
        evaluated += 1;
        if d <= T::zero() {
            folding += 1;
        }
    }
    let folding_fraction = if evaluated == 0 { 0.0 } else { folding as f64 / evaluated as f64 };
    Ok(RegularityReport { folding_count: folding, folding_fraction, evaluated_voxel_count: evaluated, det_field })
}

/// Foreground mask (`label != 0`) of a label image.
pub fn foreground_mask<T: Real>(labels: &GridImage<T>) -> GridImage<T> {
    GridImage::new(
        labels.geom(),
        labels.values().iter().map(|&v| if v != T::zero() { T::one() } else { T::zero() }).collect(),
    )
    .expect("finite")
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub pair_id: String,
    pub dice: DiceScores,
    pub folding_count: usize,
    pub folding_fraction: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Tab-separated report. Columns: `pair_id`, `dice_1` .. `dice_{K-1}`, `mean_dice`,
/// `folding_count`, `folding_fraction`. Absent labels are written as `NA`.
pub fn write_report_tsv(out: &mut impl Write, rows: &[EvalRow], label_count: usize) -> Result<()> {
    let mut header = vec!["pair_id".to_string()];
    header.extend((1..label_count).map(|k| format!("dice_{k}")));
    header.extend(["mean_dice", "folding_count", "folding_fraction"].map(String::from));
    writeln!(out, "{}", header.join("\t"))?;
    for r in rows {
        if r.dice.label_count() != label_count {
            return Err(Error::ShapeMismatch(format!("row {} has {} labels, expected {label_count}", r.pair_id, r.dice.label_count())));
        }
        let mut cols = vec![r.pair_id.clone()];
        cols.extend(r.dice.per_label[1..].iter().map(|&d| fmt_opt(d)));
        cols.push(fmt_opt(r.dice.mean));
        cols.push(r.folding_count.to_string());
        cols.push(format!("{:.6}", r.folding_fraction));
        writeln!(out, "{}", cols.join("\t"))?;
    }
    Ok(())
}

/// Human-readable summary of one row.
pub fn describe_row(r: &EvalRow) -> String {
    let mut s = format!("{}: mean Dice {}", r.pair_id, fmt_opt(r.dice.mean));
    for (k, d) in r.dice.per_label.iter().enumerate().skip(1) {
        let _ = write!(s, ", label {k} {}", fmt_opt(*d));
    }
    let _ = write!(s, "; folding {} voxels ({:.4}%)", r.folding_count, 100.0 * r.folding_fraction);
    s
}
