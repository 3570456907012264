//! Rectangular tensor grid over a state box, node fields, and multilinear
//! interpolation.
//!
//! Flat node indices are row-major over axes `0..d` (last axis fastest).
//! Field storage is mode-major: all nodes of mode 0, then mode 1, and so on.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Largest supported state dimension. Bounds the stack buffers used by interpolation.
pub const MAX_DIM: usize = 8;

/// Serializable box + node counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lows: Vec<f64>,
    highs: Vec<f64>,
    counts: Vec<usize>,
    spacings: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(lows: &[f64], highs: &[f64], counts: &[usize]) -> Result<Self> {
        let d = lows.len();
        if highs.len() != d || counts.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if highs.len() != d { highs.len() } else { counts.len() },
            });
        }
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidConfig(format!(
                "grid dimension must be in 1..={MAX_DIM}, got {d}"
            )));
        }
        let mut spacings = Vec::with_capacity(d);
        for k in 0..d {
            if counts[k] < 2 {
                return Err(Error::DegenerateAxis {
                    axis: k,
                    reason: format!("needs at least 2 nodes, got {}", counts[k]),
                });
            }
            if !(highs[k] > lows[k]) || !lows[k].is_finite() || !highs[k].is_finite() {
                return Err(Error::DegenerateAxis {
                    axis: k,
                    reason: format!("empty interval [{}, {}]", lows[k], highs[k]),
                });
            }
            spacings.push((highs[k] - lows[k]) / (counts[k] - 1) as f64);
        }
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let len = counts.iter().product();
        Ok(Self {
            lows: lows.to_vec(),
            highs: highs.to_vec(),
            counts: counts.to_vec(),
            spacings,
            strides,
            len,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(&spec.lows, &spec.highs, &spec.counts)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lows: self.lows.clone(),
            highs: self.highs.clone(),
            counts: self.counts.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lows(&self) -> &[f64] {
        &self.lows
    }

    pub fn highs(&self) -> &[f64] {
        &self.highs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacings.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn to_multi(&self, flat: usize) -> Result<Vec<usize>> {
        if flat >= self.len {
            return Err(Error::OutOfRange {
                index: flat,
                size: self.len,
            });
        }
        let mut rem = flat;
        Ok(self
            .strides
            .iter()
            .map(|&s| {
                let i = rem / s;
                rem %= s;
                i
            })
            .collect())
    }

    pub fn to_flat(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: multi.len(),
            });
        }
        let mut flat = 0;
        for k in 0..self.dim() {
            if multi[k] >= self.counts[k] {
                return Err(Error::OutOfRange {
                    index: multi[k],
                    size: self.counts[k],
                });
            }
            flat += multi[k] * self.strides[k];
        }
        Ok(flat)
    }

    /// Coordinates of node `flat` written into `out`.
    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        debug_assert!(flat < self.len);
        let mut rem = flat;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            out[k] = self.coord(k, i);
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords(flat, &mut x);
        x
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.highs[axis]
        } else {
            self.lows[axis] + i as f64 * self.spacings[axis]
        }
    }

    /// True when the node lies on a face of the box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let mut rem = flat;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            if i == 0 || i + 1 == self.counts[k] {
                return true;
            }
        }
        false
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.project_in_place(&mut y);
        y
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lows[k], self.highs[k]);
        }
    }

    /// Continuous index coordinate of `x` along `axis` after clamping to the box.
    /// Values within a few ulps of an integer snap to it so node queries are exact.
    fn axis_position(&self, axis: usize, x: f64) -> f64 {
        let n = self.counts[axis];
        let s = ((x - self.lows[axis]) / self.spacings[axis]).clamp(0.0, (n - 1) as f64);
        let r = s.round();
        if (s - r).abs() <= 8.0 * f64::EPSILON * r.max(1.0) {
            r
        } else {
            s
        }
    }

    /// Cell lower-corner index and barycentric fraction for each axis.
    fn locate(&self, x: &[f64], base: &mut usize, frac: &mut [f64; MAX_DIM]) {
        let mut flat = 0;
        for k in 0..self.dim() {
            let s = self.axis_position(k, x[k]);
            let i = (s.floor() as usize).min(self.counts[k] - 2);
            frac[k] = s - i as f64;
            flat += i * self.strides[k];
        }
        *base = flat;
    }

    /// Nearest node to the projected `x`, ties toward the lower index on each axis.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for k in 0..self.dim() {
            let s = self.axis_position(k, x[k]);
            let i = ((s - 0.5).ceil().max(0.0) as usize).min(self.counts[k] - 1);
            flat += i * self.strides[k];
        }
        flat
    }

    /// Multilinear weights for the cell containing the projected `x`: `(flat node, weight)`
    /// for each of the `2^d` corners.
    pub fn interpolation_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut base = 0;
        let mut frac = [0.0; MAX_DIM];
        self.locate(x, &mut base, &mut frac);
        let d = self.dim();
        (0..1usize << d)
            .map(|corner| self.corner(base, &frac, corner))
            .collect()
    }

    #[inline]
    fn corner(&self, base: usize, frac: &[f64; MAX_DIM], corner: usize) -> (usize, f64) {
        let mut w = 1.0;
        let mut idx = base;
        for k in 0..self.dim() {
            if corner >> k & 1 == 1 {
                w *= frac[k];
                idx += self.strides[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        (idx, w)
    }

    /// Multilinear interpolation of node values `nodes` (one per flat node) at `x`.
    pub fn interpolate_nodes(&self, nodes: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(nodes.len(), self.len);
        let mut base = 0;
        let mut frac = [0.0; MAX_DIM];
        self.locate(x, &mut base, &mut frac);
        if self.dim() == 1 {
            let t = frac[0];
            if t == 0.0 {
                return nodes[base];
            }
            return (1.0 - t) * nodes[base] + t * nodes[base + 1];
        }
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for corner in 0..1usize << self.dim() {
            let (idx, w) = self.corner(base, &frac, corner);
            debug_assert!(w >= 0.0);
            wsum += w;
            if w != 0.0 {
                acc += w * nodes[idx];
            }
        }
        debug_assert!((wsum - 1.0).abs() < 1e-12);
        acc
    }
}

/// Discrete value function: one finite real per (mode, node).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: Grid,
    num_modes: usize,
    values: Vec<f64>,
}

impl ValueField {
    pub fn constant(grid: &Grid, num_modes: usize, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            num_modes,
            values: vec![value; grid.len() * num_modes],
        }
    }

    pub fn from_values(grid: &Grid, num_modes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * num_modes {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * num_modes,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self {
            grid: grid.clone(),
            num_modes,
            values,
        })
    }

    /// Samples `f(x, q)` at every node.
    pub fn from_fn(grid: &Grid, num_modes: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len() * num_modes);
        let mut x = vec![0.0; grid.dim()];
        for q in 0..num_modes {
            for n in 0..grid.len() {
                grid.node_coords(n, &mut x);
                values.push(f(&x, q));
            }
        }
        Self {
            grid: grid.clone(),
            num_modes,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, q: usize, node: usize) -> f64 {
        self.values[q * self.grid.len() + node]
    }

    #[inline]
    pub fn set(&mut self, q: usize, node: usize, v: f64) {
        let n = self.grid.len();
        self.values[q * n + node] = v;
    }

    pub fn mode(&self, q: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[q * n..(q + 1) * n]
    }

    pub fn interpolate(&self, q: usize, x: &[f64]) -> f64 {
        self.grid.interpolate_nodes(self.mode(q), x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest nodewise absolute difference. Fields must share grid and mode count.
    pub fn max_abs_diff(&self, other: &ValueField) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// JSON document `{"grid", "num_modes", "values"[, "meta"]}` with values
    /// written to 17 significant digits.
    pub fn to_json(&self, meta: Option<&serde_json::Value>) -> Result<String> {
        let values = self
            .values
            .iter()
            .map(|v| RawValue::from_string(format!("{v:.16e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let doc = FieldDocOut {
            grid: self.grid.spec(),
            num_modes: self.num_modes,
            values,
            meta,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FieldDocIn = serde_json::from_str(text)?;
        let grid = Grid::from_spec(&doc.grid)?;
        Self::from_values(&grid, doc.num_modes, doc.values)
    }
}

#[derive(Serialize)]
struct FieldDocOut<'a> {
    grid: GridSpec,
    num_modes: usize,
    values: Vec<Box<RawValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<&'a serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDocIn {
    grid: GridSpec,
    num_modes: usize,
    values: Vec<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    meta: Option<serde_json::Value>,
}

/// Interpolated value of mode `q` at `x` (clamped into the box).
pub fn interpolate(field: &ValueField, q: usize, x: &[f64]) -> f64 {
    field.interpolate(q, x)
}
