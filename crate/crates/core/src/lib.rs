//! Emulation harness for the ESP32 networking path: an OpenCores-style
//! Ethernet MAC device model, a user-mode NAT network stack with host port
//! forwarding, a natively executed guest that serves `/hello`, a runtime trace
//! framework, a flash-image composer and a multi-instance latency benchmark.

pub mod flash;
pub mod guest;
pub mod harness;
pub mod mac;
pub mod trace;
pub mod usernet;
pub mod wire;
