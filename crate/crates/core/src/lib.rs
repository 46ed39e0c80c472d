pub mod advisor;
pub mod data;
pub mod gbdt;
pub mod metrics;
pub mod session;
pub mod shap;
