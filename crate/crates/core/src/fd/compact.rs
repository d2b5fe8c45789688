//! Compact `3^d`-point stencils assembled cell by cell from coefficient
//! functions `f_s(g)`, `g = k h / 2 pi`, one per corner distance `s`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use super::model::GridModel;
use super::second_order::damping_diagonal;
use super::stencil::{cube_offsets, StencilOperator, StencilWeights};
use crate::error::{Error, Result};
use crate::operator::{Diagonal, SplitOperator};
use crate::setup::{Provenance, SpectralBounds};

/// Coefficient functions `f_0 .. f_d`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffTable {
    /// `f_0 = 2d - (2 pi g)^2`, `f_1 = -1`, rest zero: the compact stencil
    /// reduces to the `(2d+1)`-point Laplacian.
    Default,
    /// Samples `f[s][i] = f_s(g[i])`, linearly interpolated; `g` increasing.
    Sampled { g: Vec<f64>, f: Vec<Vec<f64>> },
}

impl CoeffTable {
    pub fn sampled(g: Vec<f64>, f: Vec<Vec<f64>>) -> Result<Self> {
        if g.len() < 2 {
            return Err(Error::InvalidTable("need at least two samples".into()));
        }
        if g.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTable("g must be strictly increasing".into()));
        }
        if f.is_empty() || f.iter().any(|c| c.len() != g.len()) {
            return Err(Error::InvalidTable("column lengths differ".into()));
        }
        if g.iter().chain(f.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("non-finite entry".into()));
        }
        Ok(Self::Sampled { g, f })
    }

    /// Reads a CSV with header `g,f0,f1,...`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::InvalidTable(e.to_string()))?;
        let ncols = rdr
            .headers()
            .map_err(|e| Error::InvalidTable(e.to_string()))?
            .len();
        if ncols < 2 {
            return Err(Error::InvalidTable("need columns g, f0, ...".into()));
        }
        let mut g = Vec::new();
        let mut f = vec![Vec::new(); ncols - 1];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::InvalidTable(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidTable(format!("bad number '{t}'")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != ncols {
                return Err(Error::InvalidTable("ragged row".into()));
            }
            g.push(vals[0]);
            for (col, v) in f.iter_mut().zip(&vals[1..]) {
                col.push(*v);
            }
        }
        Self::sampled(g, f)
    }

    /// `[f_0(g), .., f_d(g)]`; missing columns count as zero.
    pub fn eval(&self, g: f64, d: usize) -> Result<Vec<f64>> {
        match self {
            CoeffTable::Default => {
                let mut out = vec![0.0; d + 1];
                out[0] = 2.0 * d as f64 - (2.0 * PI * g).powi(2);
                out[1] = -1.0;
                Ok(out)
            }
            CoeffTable::Sampled { g: gs, f } => {
                let (lo, hi) = (gs[0], gs[gs.len() - 1]);
                if !(g >= lo && g <= hi) {
                    return Err(Error::TableRange { g, lo, hi });
                }
                let i = gs.partition_point(|&x| x <= g).clamp(1, gs.len() - 1);
                let t = (g - gs[i - 1]) / (gs[i] - gs[i - 1]);
                Ok((0..=d)
                    .map(|s| {
                        f.get(s)
                            .map(|c| c[i - 1] + t * (c[i] - c[i - 1]))
                            .unwrap_or(0.0)
                    })
                    .collect())
            }
        }
    }
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Eigenvalues of one cell matrix `C[b][c] = ft[dist(b, c)]`: the sign
/// patterns flipping `m` axes are eigenvectors with eigenvalue
/// `sum_s ft_s sum_j (-1)^j C(m, j) C(d - m, s - j)`.
pub fn cell_eigenvalues(ft: &[f64], d: usize) -> Vec<f64> {
    (0..=d)
        .map(|m| {
            (0..=d)
                .map(|s| {
                    let kr: f64 = (0..=s.min(m))
                        .map(|j| {
                            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                            sign * binom(m, j) * binom(d - m, s - j)
                        })
                        .sum();
                    ft[s] * kr
                })
                .sum()
        })
        .collect()
}

/// Assembles the compact stencil.
///
/// Each cell contributes `h^-2 f_s(g) / 2^(d-s)` between every ordered pair
/// of its corners at Manhattan distance `s`; ghost corners are dropped.
/// `Im H` uses the largest wavenumber among the cells touching a point.
/// Bounds come from the extreme cell eigenvalues times `2^d h^-2`, with the
/// lower one capped at `-k_max^2`.
pub fn build_compact(model: &GridModel, table: &CoeffTable) -> Result<(SplitOperator, SpectralBounds)> {
    let d = model.ndim();
    let h = model.h;
    let ih2 = 1.0 / (h * h);
    let shape = &model.shape;
    let cells = &model.cell_shape;
    let ncorner = 1usize << d;

    // f~_s per cell, already scaled by h^-2
    let mut ft = vec![0.0; cells.len() * (d + 1)];
    let mut eig_lo = f64::INFINITY;
    let mut eig_hi = f64::NEG_INFINITY;
    for (c, &k) in model.k_cells.iter().enumerate() {
        let f = table.eval(k * h / (2.0 * PI), d)?;
        let row = &mut ft[c * (d + 1)..(c + 1) * (d + 1)];
        for s in 0..=d {
            row[s] = f[s] / (1usize << (d - s)) as f64 * ih2;
        }
        for e in cell_eigenvalues(row, d) {
            eig_lo = eig_lo.min(e);
            eig_hi = eig_hi.max(e);
        }
    }

    let offsets = cube_offsets(d);
    let no = offsets.len();
    let offset_slot = |off: &[isize]| -> usize {
        let code = off.iter().fold(0usize, |acc, &v| acc * 3 + (v + 1) as usize);
        // the origin (code (3^d - 1)/2) is skipped in cube_offsets
        let mid = (3usize.pow(d as u32) - 1) / 2;
        if code > mid {
            code - 1
        } else {
            code
        }
    };
    let n = shape.len();
    let mut diag = vec![0.0; n];
    let mut weights = vec![0.0; n * no];
    let mut k_adj = vec![0.0f64; n];
    let mut corner = vec![0usize; d];
    let mut off = vec![0isize; d];
    for p in 0..n {
        let idx = shape.multi(p);
        for m in 0..ncorner {
            // cell with lower corner idx - m sits at cell index idx - m + 1
            for a in 0..d {
                corner[a] = idx[a] + 1 - ((m >> a) & 1);
            }
            let c = cells.linear(&corner);
            k_adj[p] = k_adj[p].max(model.k_cells[c]);
            let row = &ft[c * (d + 1)..(c + 1) * (d + 1)];
            for q in 0..ncorner {
                let mut s = 0;
                for a in 0..d {
                    off[a] = ((q >> a) & 1) as isize - ((m >> a) & 1) as isize;
                    s += off[a].unsigned_abs();
                }
                if s == 0 {
                    diag[p] += row[0];
                } else {
                    weights[p * no + offset_slot(&off)] += row[s];
                }
            }
        }
    }
    let re = StencilOperator::new(shape.clone(), offsets, StencilWeights::PerPoint(weights), diag).compress();
    let im = damping_diagonal(&k_adj, &model.damping);

    let k_max = model.k_cells.iter().copied().fold(0.0, f64::max);
    let scale = ncorner as f64;
    let bounds = SpectralBounds {
        lambda_min_re: (-k_max * k_max).min(scale * eig_lo.min(0.0)),
        lambda_max_re: scale * eig_hi.max(0.0),
        lambda_max_im: im.iter().copied().fold(0.0, f64::max),
        provenance: Provenance::Analytic,
    };
    let op = SplitOperator::new(Arc::new(re), Arc::new(Diagonal(im)))?.with_bounds(bounds);
    Ok((op, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_values() {
        let f = CoeffTable::Default.eval(0.1, 3).unwrap();
        assert_eq!(f.len(), 4);
        assert!((f[0] - (6.0 - (0.2 * PI).powi(2))).abs() < 1e-15);
        assert_eq!(&f[1..], &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn sampled_interpolation_and_range() {
        let t = CoeffTable::sampled(vec![0.0, 0.2], vec![vec![1.0, 3.0], vec![-1.0, -1.0]]).unwrap();
        let f = t.eval(0.05, 2).unwrap();
        assert!((f[0] - 1.5).abs() < 1e-15);
        assert_eq!(f[1], -1.0);
        assert_eq!(f[2], 0.0);
        assert!(matches!(t.eval(0.3, 2), Err(Error::TableRange { .. })));
        assert!(CoeffTable::sampled(vec![0.1, 0.1], vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn cell_eigenvalues_three_d_checkerboard() {
        // f0 - 6 f1 + 12 f2 - 8 f3 after scaling by 2^d
        let f = [5.0, -0.7, 0.1, 0.02];
        let ft: Vec<f64> = (0..4).map(|s| f[s] / (1 << (3 - s)) as f64).collect();
        let e = cell_eigenvalues(&ft, 3);
        let expected = f[0] - 6.0 * f[1] + 12.0 * f[2] - 8.0 * f[3];
        assert!((8.0 * e[3] - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "g,f0,f1,f2\n0.0,4.0,-1.0,0.0\n0.5,3.0,-1.0,0.1\n").unwrap();
        let t = CoeffTable::from_csv(&p).unwrap();
        let f = t.eval(0.25, 2).unwrap();
        assert!((f[0] - 3.5).abs() < 1e-15 && (f[2] - 0.05).abs() < 1e-15);
        std::fs::write(&p, "g,f0\n0.0,nan\n0.1,1\n").unwrap();
        assert!(CoeffTable::from_csv(&p).is_err());
    }
}
