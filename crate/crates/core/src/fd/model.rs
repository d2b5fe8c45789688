//! Velocity models on rectangular grids with sponge damping layers.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stencil::Shape;
use crate::error::{Error, Result};
use crate::leapfrog::{le_f64s, split_header};

/// Default peak per-cycle damping at the outer edge of the layers.
pub const DEFAULT_DAMPING_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Constant,
    /// Slow disk of radius `radius_fraction * domain` at the center.
    CircularInclusion,
    /// Two layers split halfway along the first axis.
    Layered,
    /// Velocity read from `ModelSpec::path`.
    File,
}

/// Description of a model; [`build_model`] turns it into a [`GridModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Model file for [`ModelKind::File`].
    pub path: Option<PathBuf>,
    /// Interior points per axis (2 or 3 axes).
    pub size: Vec<usize>,
    pub layer_width: usize,
    /// Minimum points per wavelength; sets the frequency unless `frequency` is given.
    pub ppw: f64,
    pub frequency: Option<f64>,
    /// Grid spacing; defaults to `1 / size[0]` (unit extent along axis 0).
    pub h: Option<f64>,
    /// Background velocity.
    pub velocity: f64,
    /// Velocity ratio of the inclusion or second layer to the background;
    /// 0.5 for the inclusion and 2 for the layered model when unset.
    pub contrast: Option<f64>,
    pub radius_fraction: f64,
    pub damping_max: f64,
}

impl ModelSpec {
    pub fn contrast(&self) -> f64 {
        self.contrast.unwrap_or(match self.kind {
            ModelKind::Layered => 2.0,
            _ => 0.5,
        })
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Constant,
            path: None,
            size: vec![64, 64],
            layer_width: 16,
            ppw: 6.0,
            frequency: None,
            h: None,
            velocity: 1.0,
            contrast: None,
            radius_fraction: 0.2,
            damping_max: DEFAULT_DAMPING_MAX,
        }
    }
}

/// Wavenumbers and damping on the full grid (interior plus layers).
///
/// `k_points` is sampled at grid points; `k_cells` at cell centers, where
/// cells are indexed by their lower corner `-1 ..= n - 1` per axis so every
/// grid point touches `2^d` cells.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub interior: Vec<usize>,
    pub layer_width: usize,
    pub h: f64,
    pub frequency: f64,
    pub shape: Shape,
    pub cell_shape: Shape,
    pub velocity: Vec<f64>,
    pub k_points: Vec<f64>,
    pub k_cells: Vec<f64>,
    /// Per-cycle damping at each point.
    pub damping: Vec<f64>,
}

impl GridModel {
    pub fn ndim(&self) -> usize {
        self.interior.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    /// Whether a full-grid index lies in a damping layer.
    pub fn in_layer(&self, idx: &[usize]) -> bool {
        layer_depth(idx, &self.interior, self.layer_width) > 0
    }

    /// Full-grid index of the interior center.
    pub fn center(&self) -> Vec<usize> {
        self.interior
            .iter()
            .map(|n| self.layer_width + n / 2)
            .collect()
    }

    /// Physical frequency times 2 pi over the slowest velocity.
    pub fn k_max(&self) -> f64 {
        self.k_points.iter().copied().fold(0.0, f64::max)
    }

    pub fn points_per_wavelength(&self) -> f64 {
        2.0 * PI / (self.k_max() * self.h)
    }

    /// Domain size along axis 0 in wavelengths of the fastest medium
    /// including the layers.
    pub fn size_in_wavelengths(&self) -> f64 {
        let k_min = self.k_points.iter().copied().fold(f64::INFINITY, f64::min);
        self.shape.dims()[0] as f64 * self.h * k_min / (2.0 * PI)
    }
}

/// Distance into the layer frame (0 in the interior, `layer_width` at the
/// outermost point).
fn layer_depth(idx: &[usize], interior: &[usize], layer: usize) -> usize {
    idx.iter()
        .zip(interior)
        .map(|(&i, &n)| {
            if i < layer {
                layer - i
            } else if i >= layer + n {
                i + 1 - layer - n
            } else {
                0
            }
        })
        .max()
        .unwrap_or(0)
}

fn validate(spec: &ModelSpec) -> Result<()> {
    let d = spec.size.len();
    if !(2..=3).contains(&d) {
        return Err(Error::InvalidModel(format!("{d} axes; expected 2 or 3")));
    }
    if spec.size.iter().any(|&n| n == 0) {
        return Err(Error::InvalidModel("empty interior".into()));
    }
    if spec.size.iter().any(|&n| 2 * spec.layer_width > n) {
        return Err(Error::InvalidModel(format!(
            "layer width {} exceeds half the interior {:?}",
            spec.layer_width, spec.size
        )));
    }
    if !(spec.velocity > 0.0) || !(spec.contrast() > 0.0) {
        return Err(Error::InvalidModel("velocities must be positive".into()));
    }
    if spec.damping_max < 0.0 {
        return Err(Error::InvalidModel("negative damping".into()));
    }
    Ok(())
}

/// Builds the model: `k = 2 pi f / c` everywhere, velocity extended into
/// the layers, and a quadratic damping ramp from 0 at the interior boundary
/// to `damping_max` at the outer edge.
pub fn build_model(spec: &ModelSpec) -> Result<GridModel> {
    validate(spec)?;
    let d = spec.size.len();
    let lw = spec.layer_width;
    let h = spec.h.unwrap_or(1.0 / spec.size[0] as f64);
    let extent: Vec<f64> = spec.size.iter().map(|&n| n as f64 * h).collect();
    let total: Vec<usize> = spec.size.iter().map(|n| n + 2 * lw).collect();
    let shape = Shape::new(&total);
    let cell_shape = Shape::new(&total.iter().map(|n| n + 1).collect::<Vec<_>>());

    let file_field = match &spec.kind {
        ModelKind::File => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::InvalidModel("file model without a path".into()))?;
            let (dims, fh, layer, v) = read_model_file(path)?;
            if dims != spec.size {
                return Err(Error::InvalidModel(format!(
                    "model file dims {dims:?} differ from size {:?}",
                    spec.size
                )));
            }
            let _ = (fh, layer);
            if v.iter().any(|&c| !(c > 0.0)) {
                return Err(Error::InvalidModel("non-positive velocity in model file".into()));
            }
            Some(v)
        }
        _ => None,
    };
    let interior_shape = Shape::new(&spec.size);

    let velocity_at = |x: &[f64]| -> f64 {
        let c0 = spec.velocity;
        match &spec.kind {
            ModelKind::Constant => c0,
            ModelKind::CircularInclusion => {
                let r = spec.radius_fraction * extent.iter().copied().fold(f64::INFINITY, f64::min);
                let dist2: f64 = x
                    .iter()
                    .zip(&extent)
                    .map(|(xi, e)| (xi - 0.5 * e).powi(2))
                    .sum();
                if dist2 < r * r {
                    c0 * spec.contrast()
                } else {
                    c0
                }
            }
            ModelKind::Layered => {
                if x[0] < 0.5 * extent[0] {
                    c0
                } else {
                    c0 * spec.contrast()
                }
            }
            ModelKind::File => {
                let v = file_field.as_ref().expect("file field loaded");
                let idx: Vec<usize> = x
                    .iter()
                    .zip(&spec.size)
                    .map(|(xi, &n)| ((xi / h - 0.5).round().max(0.0) as usize).min(n - 1))
                    .collect();
                v[interior_shape.linear(&idx)]
            }
        }
    };
    // Interior point i sits at (i + 1/2) h; positions are clamped to the
    // interior so the layers extend the boundary velocity.
    let coord = |i: isize, shift: f64| -> f64 {
        ((i - lw as isize) as f64 + shift) * h
    };
    let clamp = |x: f64, a: usize| x.clamp(0.5 * h, extent[a] - 0.5 * h);

    let mut velocity = vec![0.0; shape.len()];
    let mut damping = vec![0.0; shape.len()];
    for (p, v) in velocity.iter_mut().enumerate() {
        let idx = shape.multi(p);
        let x: Vec<f64> = (0..d).map(|a| clamp(coord(idx[a] as isize, 0.5), a)).collect();
        *v = velocity_at(&x);
        let depth = layer_depth(&idx, &spec.size, lw);
        if depth > 0 {
            let s = depth as f64 / lw as f64;
            damping[p] = spec.damping_max * s * s;
        }
    }
    let mut cell_velocity = vec![0.0; cell_shape.len()];
    for (c, v) in cell_velocity.iter_mut().enumerate() {
        let idx = cell_shape.multi(c);
        // cell lower corner is point idx - 1; its center is one half step up
        let x: Vec<f64> = (0..d)
            .map(|a| clamp(coord(idx[a] as isize - 1, 1.0), a))
            .collect();
        *v = match &spec.kind {
            ModelKind::File => {
                // mean over the clamped corner points
                let mut acc = 0.0;
                let corners = 1usize << d;
                for m in 0..corners {
                    let xc: Vec<f64> = (0..d)
                        .map(|a| {
                            let off = ((m >> a) & 1) as isize;
                            clamp(coord(idx[a] as isize - 1 + off, 0.5), a)
                        })
                        .collect();
                    acc += velocity_at(&xc);
                }
                acc / corners as f64
            }
            _ => velocity_at(&x),
        };
    }
    let c_min = velocity
        .iter()
        .chain(&cell_velocity)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let frequency = spec.frequency.unwrap_or(c_min / (spec.ppw * h));
    if !(frequency > 0.0) {
        return Err(Error::InvalidModel("frequency must be positive".into()));
    }
    let omega_phys = 2.0 * PI * frequency;
    Ok(GridModel {
        interior: spec.size.clone(),
        layer_width: lw,
        h,
        frequency,
        k_points: velocity.iter().map(|c| omega_phys / c).collect(),
        k_cells: cell_velocity.iter().map(|c| omega_phys / c).collect(),
        velocity,
        damping,
        shape,
        cell_shape,
    })
}

/// Model file: text header (`dims`, `h`, `layer_width`, `end`) followed by
/// the interior velocity as row-major little-endian f64.
pub fn write_model_file(path: &Path, dims: &[usize], h: f64, layer_width: usize, velocity: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims_str.join(" "))?;
    writeln!(w, "h {h:e}")?;
    writeln!(w, "layer_width {layer_width}")?;
    writeln!(w, "end")?;
    for v in velocity {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a model file: `(dims, h, layer_width, velocity)`.
pub fn read_model_file(path: &Path) -> Result<(Vec<usize>, f64, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let (header, body) = split_header(&bytes)?;
    let mut dims = Vec::new();
    let mut h = None;
    let mut layer = 0;
    for line in header.lines() {
        let mut it = line.split_whitespace();
        let bad = |t: &str| Error::Parse(format!("bad model header value '{t}'"));
        match it.next() {
            Some("dims") => {
                dims = it
                    .map(|t| t.parse().map_err(|_| bad(t)))
                    .collect::<Result<_>>()?
            }
            Some("h") => {
                let t = it.next().unwrap_or("");
                h = Some(t.parse::<f64>().map_err(|_| bad(t))?);
            }
            Some("layer_width") => {
                let t = it.next().unwrap_or("");
                layer = t.parse().map_err(|_| bad(t))?;
            }
            _ => {}
        }
    }
    let h = h.ok_or_else(|| Error::Parse("model header lacks 'h'".into()))?;
    let v = le_f64s(body)?;
    let expected: usize = dims.iter().product();
    if v.len() != expected {
        return Err(Error::Parse(format!(
            "model payload has {} values, header implies {expected}",
            v.len()
        )));
    }
    Ok((dims, h, layer, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_model_six_points_per_wavelength() {
        let m = build_model(&ModelSpec {
            size: vec![20, 24],
            layer_width: 4,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.dims(), &[28, 32]);
        for &k in &m.k_points {
            assert!((k * m.h - 2.0 * PI / 6.0).abs() < 1e-12);
        }
        assert!((m.points_per_wavelength() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn damping_positive_exactly_in_layer_frame() {
        let lw = 5;
        let m = build_model(&ModelSpec {
            size: vec![12, 14],
            layer_width: lw,
            damping_max: 2.0,
            ..Default::default()
        })
        .unwrap();
        for p in 0..m.len() {
            let idx = m.shape.multi(p);
            assert_eq!(m.damping[p] > 0.0, m.in_layer(&idx), "{idx:?}");
        }
        // outermost point carries the full value
        assert!((m.damping[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn inclusion_is_slow_in_the_middle() {
        let m = build_model(&ModelSpec {
            kind: ModelKind::CircularInclusion,
            size: vec![40, 40],
            layer_width: 0,
            ..Default::default()
        })
        .unwrap();
        let c = m.shape.linear(&[20, 20]);
        assert_eq!(m.velocity[c], 0.5);
        assert_eq!(m.velocity[0], 1.0);
        // minimum ppw is respected in the slow region
        assert!((m.points_per_wavelength() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_descriptors() {
        let wide = ModelSpec {
            size: vec![10, 10],
            layer_width: 6,
            ..Default::default()
        };
        assert!(build_model(&wide).is_err());
        let neg = ModelSpec {
            velocity: -1.0,
            ..Default::default()
        };
        assert!(build_model(&neg).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let v: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
        write_model_file(&path, &[3, 4], 0.25, 2, &v).unwrap();
        let (dims, h, lw, back) = read_model_file(&path).unwrap();
        assert_eq!((dims, h, lw), (vec![3, 4], 0.25, 2));
        assert_eq!(back, v);
        let m = build_model(&ModelSpec {
            kind: ModelKind::File,
            path: Some(path),
            size: vec![3, 4],
            layer_width: 1,
            h: Some(0.25),
            ..Default::default()
        })
        .unwrap();
        let p = m.shape.linear(&[1 + 2, 1 + 3]);
        assert_eq!(m.velocity[p], v[11]);
    }
}
