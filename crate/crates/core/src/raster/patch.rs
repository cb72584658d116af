use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{LandCoverScheme, RasterGrid};
use crate::{Error, Result};

/// What a channel holds. Serialized lowercase in FPS1 headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Landcover,
    Flowdir,
    Distance,
    Dem,
    Soil,
    Slope,
    Accumulation,
    Discharger,
    Truth,
    Label,
    Noise,
    Probability,
    Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub role: ChannelRole,
    pub grid: RasterGrid,
}

impl Channel {
    pub fn new(name: impl Into<String>, role: ChannelRole, grid: RasterGrid) -> Self {
        Self { name: name.into(), role, grid }
    }
}

/// Square multi-channel patch centered on a coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    pub size_p: usize,
    pub center: (f64, f64),
    pub channels: Vec<Channel>,
}

impl PatchStack {
    pub fn new(size_p: usize, center: (f64, f64), channels: Vec<Channel>) -> Result<Self> {
        let p = Self { size_p, center, channels };
        p.validate()?;
        Ok(p)
    }

    /// Geometry, name uniqueness and land-cover code checks.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let first = self.channels.first().map(|c| &c.grid);
        for ch in &self.channels {
            if !names.insert(ch.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate channel name `{}`", ch.name)));
            }
            let g = &ch.grid;
            if g.width != self.size_p || g.height != self.size_p {
                return Err(Error::Invalid(format!(
                    "channel `{}` is {}x{}, expected {}x{}",
                    ch.name, g.width, g.height, self.size_p, self.size_p
                )));
            }
            if let Some(f) = first {
                if !g.same_geometry(f) {
                    return Err(Error::Invalid(format!("channel `{}` has mismatched georeferencing", ch.name)));
                }
            }
            if ch.role == ChannelRole::Landcover {
                let scheme = LandCoverScheme;
                if let Some(bad) = g.values.iter().find(|v| !scheme.contains(**v)) {
                    return Err(Error::Invalid(format!("land-cover channel `{}` has unknown code {bad}", ch.name)));
                }
            }
        }
        Ok(())
    }

    /// Input-patch contract: exactly one land-cover and one flow-direction channel.
    pub fn validate_inputs(&self) -> Result<()> {
        self.validate()?;
        for role in [ChannelRole::Landcover, ChannelRole::Flowdir] {
            let n = self.channels.iter().filter(|c| c.role == role).count();
            if n != 1 {
                return Err(Error::Invalid(format!("expected exactly one {role:?} channel, found {n}")));
            }
        }
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn by_role(&self, role: ChannelRole) -> Option<&Channel> {
        self.channels.iter().find(|c| c.role == role)
    }

    pub fn all_by_role(&self, role: ChannelRole) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(move |c| c.role == role)
    }

    pub fn require(&self, role: ChannelRole) -> Result<&RasterGrid> {
        self.by_role(role)
            .map(|c| &c.grid)
            .ok_or_else(|| Error::Invalid(format!("patch has no {role:?} channel")))
    }

    pub fn landcover(&self) -> Result<&RasterGrid> {
        self.require(ChannelRole::Landcover)
    }

    /// Any channel's grid; all channels share geometry.
    pub fn template(&self) -> Result<&RasterGrid> {
        self.channels
            .first()
            .map(|c| &c.grid)
            .ok_or_else(|| Error::Invalid("patch has no channels".into()))
    }

    /// Replaces a same-named channel or appends a new one.
    pub fn upsert(&mut self, channel: Channel) {
        match self.channels.iter_mut().find(|c| c.name == channel.name) {
            Some(slot) => *slot = channel,
            None => self.channels.push(channel),
        }
    }

    /// Boolean water mask from the land-cover channel.
    pub fn water_mask(&self) -> Result<Vec<bool>> {
        let scheme = LandCoverScheme;
        Ok(self.landcover()?.values.iter().map(|v| scheme.is_water(*v)).collect())
    }
}

/// Cuts a `size_p × size_p` window out of every world channel.
///
/// The cell containing `center` lands at index `size_p / 2` along both axes.
pub fn extract_patch(world: &[Channel], center: (f64, f64), size_p: usize) -> Result<PatchStack> {
    if size_p == 0 {
        return Err(Error::Invalid("patch size must be positive".into()));
    }
    let half = (size_p / 2) as isize;
    let mut channels = Vec::with_capacity(world.len());
    for ch in world {
        let g = &ch.grid;
        let (r, c) = g.cell_of_unbounded(center.0, center.1);
        let (r0, c0) = (r - half, c - half);
        let fits = r0 >= 0
            && c0 >= 0
            && (r0 as usize) + size_p <= g.height
            && (c0 as usize) + size_p <= g.width;
        if !fits {
            return Err(Error::OutOfBounds {
                channel: ch.name.clone(),
                detail: format!(
                    "rows [{r0}, {}) cols [{c0}, {}) exceed {}x{}",
                    r0 + size_p as isize,
                    c0 + size_p as isize,
                    g.height,
                    g.width
                ),
            });
        }
        let (r0, c0) = (r0 as usize, c0 as usize);
        let mut values = Vec::with_capacity(size_p * size_p);
        for row in r0..r0 + size_p {
            let start = row * g.width + c0;
            values.extend_from_slice(&g.values[start..start + size_p]);
        }
        let origin = (
            g.origin.0 + c0 as f64 * g.cell_size,
            g.origin.1 - r0 as f64 * g.cell_size,
        );
        let mut out = RasterGrid::from_values(size_p, size_p, g.cell_size, origin, values)?;
        out.nodata = g.nodata;
        channels.push(Channel::new(ch.name.clone(), ch.role, out));
    }
    PatchStack::new(size_p, center, channels)
}
