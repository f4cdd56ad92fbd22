pub mod channel;
pub mod covmodel;
pub mod error;
pub mod linear;
pub mod matalg;
pub mod mbi;
pub mod sdt;
pub mod sim;
pub mod textio;

pub use error::{Error, Result};
pub use matalg::Mat;

pub use channel::{ai_fit, ChannelFitState, ChannelSpec};
pub use covmodel::{BlockPartition, CovariancePack, Lifting, ReducedForm};
pub use linear::{linear_fit, LinearNetworkModel};
pub use mbi::{mbi_fit, FitConfig, FitTrace, InitStrategy, UpdateRule};
pub use sdt::{FactorVariant, FusionCenter, NetworkModel, SecondDegreeSensor};
