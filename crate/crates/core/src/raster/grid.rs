use crate::{Error, Result};

/// Sentinel used when no value is defined. Exactly representable in f32.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// `(row, col)` index into a grid.
pub type Cell = (usize, usize);

/// Single-channel, row-major grid of 64-bit values with georeferencing.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub cell_size: f64,
    /// (easting, northing) of the top-left corner.
    pub origin: (f64, f64),
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, origin: (f64, f64), fill: f64) -> Result<Self> {
        Self::from_values(width, height, cell_size, origin, vec![fill; width * height])
    }

    pub fn from_values(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: (f64, f64),
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Invalid(format!("cell size must be positive, got {cell_size}")));
        }
        if values.len() != width * height {
            return Err(Error::Invalid(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self { width, height, cell_size, origin, values, nodata: DEFAULT_NODATA })
    }

    /// A grid with the same geometry as `self`, filled with `fill`.
    pub fn like(&self, fill: f64) -> Self {
        Self { values: vec![fill; self.values.len()], ..self.clone_geometry() }
    }

    fn clone_geometry(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            cell_size: self.cell_size,
            origin: self.origin,
            values: Vec::new(),
            nodata: self.nodata,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let w = self.width;
        self.values[row * w + col] = v;
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Bit-exact nodata comparison.
    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v.to_bits() == self.nodata.to_bits()
    }

    /// Center coordinate of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell whose half-open footprint contains the coordinate, if any.
    pub fn cell_of(&self, easting: f64, northing: f64) -> Option<Cell> {
        let (row, col) = self.cell_of_unbounded(easting, northing);
        if self.in_bounds(row, col) {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// Signed cell index of a coordinate, possibly outside the grid.
    pub fn cell_of_unbounded(&self, easting: f64, northing: f64) -> (isize, isize) {
        let col = ((easting - self.origin.0) / self.cell_size).floor();
        let row = ((self.origin.1 - northing) / self.cell_size).floor();
        (row as isize, col as isize)
    }

    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size == other.cell_size
            && self.origin == other.origin
    }

    /// Rounds every value through f32, the on-disk precision.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    /// Values at cells that are not nodata.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(move |v| !self.is_nodata(*v))
    }
}
