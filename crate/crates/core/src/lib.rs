pub mod clocks;
pub mod config;
pub mod dcf;
pub mod error;
pub mod frame;
pub mod hybrid;
pub mod medium;
pub mod metrics;
pub mod output;
pub mod sim;
pub mod time;
pub mod tracking;
pub mod traffic;
pub mod world;
