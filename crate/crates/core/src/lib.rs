//! Analytical and simulated delay and reliability of 802.11p EDCA broadcast
//! among platoons crossing a signalised intersection.

pub mod analysis;
pub mod compare;
pub mod edca;
pub mod hearing;
pub mod kinematics;
pub mod metrics;
pub mod psffa;
pub mod scenario;
pub mod simulator;
