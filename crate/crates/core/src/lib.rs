pub mod dataset;
pub mod features;
pub mod rtl;
pub mod seed;
pub mod mlp;
pub mod gan;
pub mod conformal;
pub mod metrics;
pub mod pipeline;
