//! Raster grids and everything that moves values between grids, patches and files.
//!
//! Coordinates are planar meters. Row 0 is the northern edge, x grows east and
//! y shrinks going south. A cell `(row, col)` covers the half-open footprint
//! `[x0, x0 + cell) × (y0 − cell, y0]` where `(x0, y0)` is its top-left corner.

mod edt;
mod grid;
pub mod io;
mod landcover;
mod patch;
mod rasterize;

pub use edt::{distance_transform, DistanceRaster};
pub use grid::{Cell, RasterGrid, DEFAULT_NODATA};
pub use io::{read_patch, write_patch};
pub use landcover::{LandCover, LandCoverScheme};
pub use patch::{extract_patch, Channel, ChannelRole, PatchStack};
pub use rasterize::rasterize_points;
