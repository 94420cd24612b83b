//! Probability grids and the elementary operations on them.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Width and height of a grid, in cells. A 1D grid has `height == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadShape { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn line(width: usize) -> Result<Self> {
        Self::new(width, 1)
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.col < self.width && p.row < self.height
    }

    pub fn index(&self, p: GridPoint) -> usize {
        p.row * self.width + p.col
    }

    pub fn point(&self, index: usize) -> GridPoint {
        GridPoint {
            col: index % self.width,
            row: index / self.width,
        }
    }

    pub fn check(&self, p: GridPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                col: p.col,
                row: p.row,
                width: self.width,
                height: self.height,
            })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Shape {
    type Err = Error;

    /// Parses `WxH`, or a bare `W` for a 1D grid.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("grid shape '{s}' is not WxH"));
        let s = s.trim();
        match s.split_once(['x', 'X']) {
            Some((w, h)) => Shape::new(
                w.trim().parse().map_err(|_| bad())?,
                h.trim().parse().map_err(|_| bad())?,
            ),
            None => Shape::line(s.parse().map_err(|_| bad())?),
        }
    }
}

/// Discrete cell coordinate, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub col: usize,
    pub row: usize,
}

impl GridPoint {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Dense row-major grid of non-negative values summing to one.
///
/// The only ways to obtain one are through normalizing constructors, so every
/// value of this type satisfies the pdf invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid<T> {
    shape: Shape,
    values: Vec<T>,
}

impl<T: Real> SaliencyGrid<T> {
    /// Normalizes `raw` (row-major, `shape.cells()` long) into a pdf.
    pub fn from_raw(shape: Shape, raw: Vec<T>) -> Result<Self> {
        if raw.len() != shape.cells() {
            return Err(Error::LengthMismatch(raw.len(), shape.cells()));
        }
        let mut values = raw;
        normalize_in_place(&mut values)?;
        Ok(Self { shape, values })
    }

    pub fn uniform(shape: Shape) -> Self {
        let v = T::one() / T::from_usize_lossy(shape.cells());
        Self {
            shape,
            values: vec![v; shape.cells()],
        }
    }

    pub fn delta(shape: Shape, at: GridPoint) -> Result<Self> {
        shape.check(at)?;
        let mut values = vec![T::zero(); shape.cells()];
        values[shape.index(at)] = T::one();
        Ok(Self { shape, values })
    }

    /// Wraps values already known to form a pdf. Used by internal routines
    /// that construct their output from a normalized computation.
    pub(crate) fn from_normalized(shape: Shape, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), shape.cells());
        Self { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, p: GridPoint) -> T {
        self.values[self.shape.index(p)]
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn transpose(&self) -> Self {
        let (w, h) = (self.shape.width, self.shape.height);
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..w {
            for r in 0..h {
                values.push(self.values[r * w + c]);
            }
        }
        Self {
            shape: Shape { width: h, height: w },
            values,
        }
    }

    pub fn cast<U: Real>(&self) -> SaliencyGrid<U> {
        SaliencyGrid {
            shape: self.shape,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape.to_string(),
                right: other.shape.to_string(),
            })
        }
    }
}

fn normalize_in_place<T: Real>(values: &mut [T]) -> Result<()> {
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if v < T::zero() {
            return Err(Error::NegativeEntry {
                index,
                value: v.as_f64(),
            });
        }
    }
    let total: T = values.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::AllZero);
    }
    // Inputs already within rounding of unit mass are left untouched; this is
    // what makes normalize exactly idempotent.
    let tol = T::lit(2.0) * T::epsilon() * T::from_usize_lossy(values.len());
    if (total - T::one()).abs() > tol {
        for v in values.iter_mut() {
            *v /= total;
        }
    }
    Ok(())
}

/// Scales a non-negative grid to unit mass.
pub fn normalize<T: Real>(shape: Shape, raw: &[T]) -> Result<SaliencyGrid<T>> {
    SaliencyGrid::from_raw(shape, raw.to_vec())
}

/// Unnormalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_taps<T: Real>(sigma: T) -> Vec<T> {
    let radius = (T::lit(3.0) * sigma).ceil().to_usize().unwrap_or(0);
    let two_var = T::lit(2.0) * sigma * sigma;
    let taps: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let t = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(t * t) / two_var).exp()
        })
        .collect();
    let total: T = taps.iter().copied().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Convolves `values` with a separable Gaussian, dropping off-grid taps.
/// The result is not renormalized.
pub(crate) fn blur_raw<T: Real>(shape: Shape, values: &[T], sigma: T) -> Vec<T> {
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (w, h) = (shape.width as isize, shape.height as isize);

    let mut rows = vec![T::zero(); values.len()];
    for r in 0..h {
        let line = &values[(r * w) as usize..((r + 1) * w) as usize];
        for c in 0..w {
            let lo = (c - radius).max(0);
            let hi = (c + radius).min(w - 1);
            let mut acc = T::zero();
            for s in lo..=hi {
                acc += taps[(s - c + radius) as usize] * line[s as usize];
            }
            rows[(r * w + c) as usize] = acc;
        }
    }

    let mut out = vec![T::zero(); values.len()];
    for c in 0..w {
        for r in 0..h {
            let lo = (r - radius).max(0);
            let hi = (r + radius).min(h - 1);
            let mut acc = T::zero();
            for s in lo..=hi {
                acc += taps[(s - r + radius) as usize] * rows[(s * w + c) as usize];
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)` and at the grid edge,
/// renormalized to unit mass. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur<T: Real>(grid: &SaliencyGrid<T>, sigma: T) -> Result<SaliencyGrid<T>> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::BadParameter(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == T::zero() {
        return Ok(grid.clone());
    }
    SaliencyGrid::from_raw(grid.shape, blur_raw(grid.shape, &grid.values, sigma))
}

/// `(1 - eps) * grid + eps * uniform`.
pub fn mix_uniform<T: Real>(grid: &SaliencyGrid<T>, eps: T) -> Result<SaliencyGrid<T>> {
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(Error::BadCoefficient(eps.as_f64()));
    }
    let floor = eps / T::from_usize_lossy(grid.len());
    let keep = T::one() - eps;
    let values = grid.values.iter().map(|&v| keep * v + floor).collect();
    SaliencyGrid::from_raw(grid.shape, values)
}

/// Writes the `SGRID 1 <w> <h>` text format, one grid row per line.
pub fn write_sgrid<T: Real, W: Write>(grid: &SaliencyGrid<T>, mut out: W) -> Result<()> {
    writeln!(out, "SGRID 1 {} {}", grid.width(), grid.height())?;
    for row in grid.values.chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Maximum deviation from unit mass tolerated when reading a grid file.
pub const SGRID_SUM_TOLERANCE: f64 = 1e-6;

pub fn read_sgrid<T: Real, R: Read>(input: R) -> Result<SaliencyGrid<T>> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "SGRID" || fields[1] != "1" {
        return Err(Error::Parse(format!("bad SGRID header '{}'", header.trim_end())));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad SGRID dimension '{s}'")))
    };
    let shape = Shape::new(parse_dim(fields[2])?, parse_dim(fields[3])?)?;

    let mut body = String::new();
    reader.read_to_string(&mut body)?;
    let mut values = Vec::with_capacity(shape.cells());
    for tok in body.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad SGRID value '{tok}'")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite { index: values.len() });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry {
                index: values.len(),
                value: v,
            });
        }
        values.push(v);
    }
    if values.len() != shape.cells() {
        return Err(Error::Parse(format!(
            "SGRID declares {} cells but holds {}",
            shape.cells(),
            values.len()
        )));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > SGRID_SUM_TOLERANCE {
        return Err(Error::Parse(format!("SGRID values sum to {total}, not 1")));
    }
    SaliencyGrid::from_raw(shape, values.into_iter().map(T::lit).collect())
}

pub fn save_sgrid<T: Real>(grid: &SaliencyGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_sgrid(grid, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_sgrid<T: Real>(path: impl AsRef<Path>) -> Result<SaliencyGrid<T>> {
    read_sgrid(std::fs::File::open(path)?)
}
