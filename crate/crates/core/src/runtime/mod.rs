//! Session orchestration: configuration, the tick pipeline, the wire
//! protocol, recording and replay, metrics and the real-time server.

pub mod bench;
pub mod config;
pub mod executor;
pub mod ingest;
pub mod mailbox;
pub mod metrics;
pub mod protocol;
pub mod record;
pub mod server;
pub mod session;
pub mod synthetic;

pub use config::{ConfigError, InputMode, NetworkConfig, SessionConfig};
pub use executor::{ExecutorConfig, FootstepExecutor};
pub use mailbox::{Mailbox, Stamped};
pub use metrics::{Metrics, MetricsSnapshot};
pub use protocol::{ClientMessage, Envelope, ModelSummary, ProtocolError};
pub use record::{load_recording, parse_recording, RecordError, RecordedMessage, Recorder};
pub use server::Server;
pub use session::{run_recorded, Outbound, Session, SessionClock, SessionError, TickReport};
