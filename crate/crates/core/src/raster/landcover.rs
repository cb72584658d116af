use serde::{Deserialize, Serialize};

/// Land-cover classes, coded with NLCD values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandCover {
    Water,
    DevelopedLow,
    DevelopedMedium,
    DevelopedHigh,
    Barren,
    DeciduousForest,
    EvergreenForest,
    Cropland,
}

impl LandCover {
    pub const ALL: [LandCover; 8] = [
        LandCover::Water,
        LandCover::DevelopedLow,
        LandCover::DevelopedMedium,
        LandCover::DevelopedHigh,
        LandCover::Barren,
        LandCover::DeciduousForest,
        LandCover::EvergreenForest,
        LandCover::Cropland,
    ];

    pub fn code(self) -> u8 {
        match self {
            LandCover::Water => 11,
            LandCover::DevelopedLow => 22,
            LandCover::DevelopedMedium => 23,
            LandCover::DevelopedHigh => 24,
            LandCover::Barren => 31,
            LandCover::DeciduousForest => 41,
            LandCover::EvergreenForest => 42,
            LandCover::Cropland => 82,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn from_value(v: f64) -> Option<Self> {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return None;
        }
        Self::from_code(v as u8)
    }

    pub fn is_water(self) -> bool {
        self == LandCover::Water
    }

    pub fn is_developed(self) -> bool {
        matches!(self, LandCover::DevelopedLow | LandCover::DevelopedMedium | LandCover::DevelopedHigh)
    }

    /// Neither water nor developed.
    pub fn is_undeveloped(self) -> bool {
        !self.is_water() && !self.is_developed()
    }
}

/// Code-level predicates over the NLCD subset used throughout the crate.
///
/// Water is neither developed nor undeveloped; every other class is exactly one
/// of the two.
#[derive(Debug, Clone, Copy, Default)]
pub struct LandCoverScheme;

impl LandCoverScheme {
    pub fn codes(&self) -> Vec<u8> {
        LandCover::ALL.iter().map(|c| c.code()).collect()
    }

    pub fn contains(&self, v: f64) -> bool {
        LandCover::from_value(v).is_some()
    }

    pub fn is_water(&self, v: f64) -> bool {
        LandCover::from_value(v).is_some_and(LandCover::is_water)
    }

    pub fn is_developed(&self, v: f64) -> bool {
        LandCover::from_value(v).is_some_and(LandCover::is_developed)
    }

    pub fn is_undeveloped(&self, v: f64) -> bool {
        LandCover::from_value(v).is_some_and(LandCover::is_undeveloped)
    }
}
