pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod interp;
pub mod linalg;
pub mod lrm;
pub mod policy;
pub mod rng;
mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EtaModel = lrm::GaussianEtaModel<f64>;
pub type Arrivals = interp::ArrivalMatrix<f64>;
pub type Policy = policy::PolicyParams<f64>;
pub type Features = features::FeatureRow<f64>;
pub type State = features::RlState<f64>;
pub type Normalizer = features::FeatureNormalizer<f64>;
pub type Variogram = interp::VariogramModel<f64>;
