//! Comparison methods: rule-based heuristic, ordinary Kriging and grid
//! pollutant transport.

pub mod kriging;
pub mod rule;
pub mod transport;

pub use kriging::{
    empirical_semivariogram, fit_spherical, kriging_class, kriging_predict, weighted_sse, KrigingEstimate, OrdinaryKriging,
    VariogramBin, VariogramForm, VariogramModel,
};
pub use rule::{rule_based_predict, rule_based_probability, RuleParams};
pub use transport::{
    accumulation_scaling, slope_band, threshold_by_median, transport_simulate, HruRow, HruTable, LandClass, LandDefaults, MassLedger,
    TransportParams, TransportResult,
};
