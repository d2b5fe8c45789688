use rayon::prelude::*;

use crate::operator::RealOperator;

/// Row-major shape: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Self {
            dims: dims.to_vec(),
            strides,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi(&self, mut lin: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for a in 0..self.dims.len() {
            out[a] = lin / self.strides[a];
            lin %= self.strides[a];
        }
        out
    }

    /// Linear index of `idx + off`, if inside the grid.
    pub fn shifted(&self, idx: &[usize], off: &[isize]) -> Option<usize> {
        let mut lin = 0;
        for a in 0..self.dims.len() {
            let v = idx[a] as isize + off[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            lin += v as usize * self.strides[a];
        }
        Some(lin)
    }
}

/// All offsets in `{-1, 0, 1}^d` except the origin, in lexicographic order.
pub fn cube_offsets(d: usize) -> Vec<Vec<isize>> {
    let total = 3usize.pow(d as u32);
    (0..total)
        .map(|mut c| {
            let mut off = vec![0isize; d];
            for a in (0..d).rev() {
                off[a] = (c % 3) as isize - 1;
                c /= 3;
            }
            off
        })
        .filter(|o| o.iter().any(|&v| v != 0))
        .collect()
}

/// The `2d` nearest-neighbour offsets.
pub fn axis_offsets(d: usize) -> Vec<Vec<isize>> {
    let mut out = Vec::with_capacity(2 * d);
    for a in 0..d {
        for s in [-1isize, 1] {
            let mut o = vec![0; d];
            o[a] = s;
            out.push(o);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum StencilWeights {
    /// One weight per offset, shared by all points.
    Constant(Vec<f64>),
    /// `weights[p * n_offsets + o]`.
    PerPoint(Vec<f64>),
}

/// Matrix-free grid operator `y_p = diag_p x_p + sum_o w_{p,o} x_{p+o}` with
/// zero values outside the grid.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    shape: Shape,
    offsets: Vec<Vec<isize>>,
    weights: StencilWeights,
    diag: Vec<f64>,
}

impl StencilOperator {
    pub fn new(shape: Shape, offsets: Vec<Vec<isize>>, weights: StencilWeights, diag: Vec<f64>) -> Self {
        assert_eq!(diag.len(), shape.len());
        if let StencilWeights::PerPoint(w) = &weights {
            assert_eq!(w.len(), shape.len() * offsets.len());
        }
        Self {
            shape,
            offsets,
            weights,
            diag,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offsets(&self) -> &[Vec<isize>] {
        &self.offsets
    }

    pub fn weights(&self) -> &StencilWeights {
        &self.weights
    }

    /// Replaces per-point weights by constant ones when every point carries
    /// identical weights.
    pub fn compress(mut self) -> Self {
        if let StencilWeights::PerPoint(w) = &self.weights {
            let no = self.offsets.len();
            if no > 0 && w.chunks_exact(no).all(|c| c == &w[..no]) {
                self.weights = StencilWeights::Constant(w[..no].to_vec());
            }
        }
        self
    }

    fn apply_line(&self, line: usize, x: &[f64], yl: &mut [f64]) {
        let d = self.shape.ndim();
        let nl = self.shape.dims[d - 1];
        let base = line * nl;
        let head = self.shape.multi(base);
        for (i, y) in yl.iter_mut().enumerate() {
            *y = self.diag[base + i] * x[base + i];
        }
        let no = self.offsets.len();
        for (o, off) in self.offsets.iter().enumerate() {
            let mut nb = base as isize;
            let mut inside = true;
            for a in 0..d - 1 {
                let v = head[a] as isize + off[a];
                if v < 0 || v >= self.shape.dims[a] as isize {
                    inside = false;
                    break;
                }
                nb += off[a] * self.shape.strides[a] as isize;
            }
            if !inside {
                continue;
            }
            let ol = off[d - 1];
            let lo = (-ol).max(0) as usize;
            let hi = (nl as isize - ol.max(0)) as usize;
            // x index of yl[i] is src + i, nonnegative for i in lo..hi
            let src = nb + ol;
            match &self.weights {
                StencilWeights::Constant(w) => {
                    let w = w[o];
                    if w == 0.0 {
                        continue;
                    }
                    for i in lo..hi {
                        yl[i] += w * x[(src + i as isize) as usize];
                    }
                }
                StencilWeights::PerPoint(w) => {
                    for i in lo..hi {
                        yl[i] += w[(base + i) * no + o] * x[(src + i as isize) as usize];
                    }
                }
            }
        }
    }
}

impl RealOperator for StencilOperator {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.shape.ndim();
        let nl = self.shape.dims[d - 1];
        if y.len() >= 1 << 15 {
            y.par_chunks_mut(nl)
                .enumerate()
                .for_each(|(line, yl)| self.apply_line(line, x, yl));
        } else {
            y.chunks_mut(nl)
                .enumerate()
                .for_each(|(line, yl)| self.apply_line(line, x, yl));
        }
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(
            self.offsets
                .iter()
                .map(|o| {
                    o.iter()
                        .zip(&self.shape.strides)
                        .map(|(v, s)| v * *s as isize)
                        .sum::<isize>()
                        .unsigned_abs()
                })
                .max()
                .unwrap_or(0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_round_trip() {
        let s = Shape::new(&[3, 4, 5]);
        assert_eq!(s.strides(), &[20, 5, 1]);
        for lin in 0..s.len() {
            assert_eq!(s.linear(&s.multi(lin)), lin);
        }
        assert_eq!(s.shifted(&[0, 0, 0], &[-1, 0, 0]), None);
        assert_eq!(s.shifted(&[1, 1, 1], &[1, -1, 1]), Some(2 * 20 + 2));
    }

    #[test]
    fn offsets_counts() {
        assert_eq!(cube_offsets(2).len(), 8);
        assert_eq!(cube_offsets(3).len(), 26);
        assert_eq!(axis_offsets(3).len(), 6);
    }

    #[test]
    fn stencil_matches_naive_loop() {
        let shape = Shape::new(&[4, 5]);
        let offs = cube_offsets(2);
        let n = shape.len();
        let w: Vec<f64> = (0..n * offs.len()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let diag: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let op = StencilOperator::new(shape.clone(), offs.clone(), StencilWeights::PerPoint(w.clone()), diag.clone());
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; n];
        op.apply(&x, &mut y);
        for p in 0..n {
            let idx = shape.multi(p);
            let mut acc = diag[p] * x[p];
            for (o, off) in offs.iter().enumerate() {
                if let Some(q) = shape.shifted(&idx, off) {
                    acc += w[p * offs.len() + o] * x[q];
                }
            }
            assert!((acc - y[p]).abs() < 1e-13);
        }
        assert_eq!(op.bandwidth(), Some(6));
    }
}
