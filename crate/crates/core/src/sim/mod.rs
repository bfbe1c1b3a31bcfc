//! Semi-synthetic data generation and power sweeps.

mod network;
mod outcomes;
mod sweep;

pub use network::{erdos_renyi, gen_network, load_edge_file, watts_strogatz, Network, NetworkSpec};
pub use outcomes::{
    gen_covariates, gen_errors, nonlinear_exposure_term, outcomes_with_errors, simulate_outcomes,
    ErrorDraws, OutcomeFamily, OutcomeModelConfig,
};
pub use sweep::{run_power_sweep, PowerCell, PowerTable, SweepConfig};
