pub mod autodiff;
pub mod circuit_metrics;
pub mod freq_cluster;
pub mod geometry;
pub mod modnets;
pub mod orchestrator;
pub mod phase_stats;
pub mod seeds;
pub mod stat_tests;
pub mod tda;
