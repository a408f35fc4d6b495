//! The four routing protocols.

pub mod aodv;
pub mod dsdv;
pub mod dsr;
pub mod zrp;
