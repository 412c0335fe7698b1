pub mod horizon;
pub mod metrics;
pub mod report;
pub mod retrain;
