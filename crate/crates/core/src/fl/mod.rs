//! Federated orchestration: clients, aggregation rules and the round loop.

pub mod aggregate;
pub mod client;
pub mod method;
pub mod server;
pub mod share;

pub use aggregate::{aggregate_fedavg, aggregate_fedbn, yogi_server_step, ClientUpdate, YogiState};
pub use client::{ClientState, LocalConfig, LocalStats};
pub use method::{FlMethod, YogiConfig};
pub use server::{run_central, Federation, FlSettings, ServerState};
pub use share::build_shared_pool;
