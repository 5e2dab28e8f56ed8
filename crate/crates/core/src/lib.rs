//! Conservative event-triggered transmission of covariance-matrix sequences.
//!
//! A transmitter compares each new covariance matrix with a buffer it shares
//! with the receiver and sends only the upper-triangle elements its trigger
//! selects. The receiver updates its copy of the buffer and adds a diagonal
//! load derived from the trigger's elementwise error bounds, producing a
//! matrix that dominates the original in the positive-semidefinite order.

pub mod bounder;
pub mod channel;
pub mod ekfgen;
pub mod error;
pub mod events;
pub mod learn;
pub mod metrics;
pub mod symmat;
pub mod triggers;

pub use error::{Error, Result};
pub use events::{Event, EventSet, ReducedEventSet};
pub use symmat::SymMatrix;
pub use triggers::{Deviation, Thresholds, TriggerPlan, TriggerSpec};
