//! Sensor data collection: device configuration, frame decoding,
//! per-second aggregation, the transition store and its HTTP broker,
//! simulators, calendar replay, and NMEA position feeds.

pub mod broker;
pub mod calendar;
pub mod client;
pub mod config;
pub mod datapull;
pub mod feed;
pub mod frame;
pub mod ilon;
pub mod nmea;
pub mod sim;
pub mod store;

pub use broker::{Broker, BrokerServer};
pub use calendar::{CalendarError, ClockMode, Notification, SensorCalendar};
pub use client::{BrokerClient, ClientError};
pub use config::{ConfigError, Device, Protocol, SensorConfig, SensorMapping};
pub use datapull::{Collector, DataPull, RecordSink};
pub use frame::{
    aggregate_second, decode_bits, decode_frame, diff, encode_frame, FrameError, StateTable,
};
pub use nmea::{parse_nmea, NmeaError};
pub use store::{StoreError, TransitionRecord, TransitionStore};
