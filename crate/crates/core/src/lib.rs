//! Event-camera visible light communication stack.
//!
//! Transmit side: packets are split across LED clusters, protected with a
//! CRC-aided polar code, Manchester coded, and framed behind a 5T/4T/3T
//! synchronization preamble and a pilot block.
//!
//! Receive side: a deterministic event-camera simulator produces positive
//! (optionally bipolar) event streams; the receiver time-shifts sync events,
//! detects transmitter regions, synchronizes, weights pixels by pilot
//! correlation, reconstructs per-cluster soft bits, and list-decodes.

pub mod crc;
pub mod frame;
pub mod latency;
pub mod manchester;
pub mod polar;
pub mod rx;
pub mod sensor;

pub use frame::{ClusterChipSchedule, FrameLayout, Packet};
pub use latency::{latency_model, etsi_check, EtsiReport, LatencyBreakdown};
pub use manchester::{soft_demap, ClusterSoftBits, SlotObservation};
pub use polar::PolarCodeConfig;
pub use rx::{DecodedPacket, DetectParams, RegionBox, RxParams, ShiftRecord};
pub use sensor::{Event, ScenarioConfig, SensorConfig};
