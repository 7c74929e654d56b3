//! Shared fixtures for the criterion benches.

use sdidml::{generate, scenario, DGPConfig, PanelDataset, Scenario};

/// Simulated S1 panel with `n_units` units and `p` covariates.
pub fn s1_panel(n_units: usize, p: usize, seed: u64) -> PanelDataset {
    let cfg = DGPConfig { n_units, p, seed, ..scenario(Scenario::S1Homogeneous) };
    generate(&cfg).expect("valid scenario").panel
}
