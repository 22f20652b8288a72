//! A validating DNS resolver that repairs broken delegation chains by
//! authenticating nameservers over a TLS-style channel with certificates
//! bound to IP addresses, together with the simulated nameserver hierarchy
//! and deterministic network used to exercise it.

pub mod bridge;
pub mod dnssec;
pub mod ipcert;
pub mod nameserver;
pub mod resolver;
pub mod simnet;
pub mod wire;
