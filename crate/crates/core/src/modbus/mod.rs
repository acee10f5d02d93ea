//! Modbus/TCP transport: frame codec, the simulation-backed server, a
//! synchronous client, and a pass-through relay.

pub mod client;
pub mod frame;
pub mod server;

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{SwitchConfig, SwitchState};
use crate::regmap::{RegMapError, WordOrder};

pub use client::{read_all_voltages, write_setpoints, write_switch, ModbusClient, ModbusLink};
pub use frame::{decode_frame, encode_frame, ExceptionCode, MbapHeader, Pdu, Request, Response};
pub use server::{relay, serve, RefreshPolicy, ServerHandle, Simulation};

pub const DEFAULT_PORT: u16 = 1502;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("framing: {0}")]
    Frame(#[from] frame::FrameError),
    #[error("server answered function 0x{function:02X} with exception 0x{code:02X}")]
    Exception { function: u8, code: u8 },
    #[error("response transaction {got} does not match request {sent}")]
    TransactionMismatch { sent: u16, got: u16 },
    #[error("unexpected response: {0}")]
    UnexpectedResponse(String),
    #[error("node `{0}` has no setpoint register")]
    UnmappedNode(String),
    #[error("switch `{0}` has no coil")]
    UnmappedSwitch(String),
    #[error("setpoint {0} kW is not representable (0..=65535)")]
    SetpointRange(f64),
    #[error("switch `{0}` read back in the wrong state")]
    ReadbackMismatch(String),
    #[error(transparent)]
    Map(#[from] RegMapError),
}

impl LinkError {
    /// Exception code carried by the server's answer, if that is what failed.
    pub fn exception_code(&self) -> Option<u8> {
        match self {
            LinkError::Exception { code, .. } => Some(*code),
            _ => None,
        }
    }
}

/// Which register block voltages are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageSource {
    #[default]
    Scaled,
    Float(WordOrder),
}

impl FromStr for VoltageSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scaled" => Ok(VoltageSource::Scaled),
            "float" | "float:hi-lo" => Ok(VoltageSource::Float(WordOrder::HighFirst)),
            "float:lo-hi" => Ok(VoltageSource::Float(WordOrder::LowFirst)),
            other => Err(format!("unknown voltage source `{other}`")),
        }
    }
}

/// What the attack and defence engines need from the field: meter
/// readings, switch and setpoint state, and the two kinds of command.
pub trait FieldLink {
    /// Voltage magnitudes in meter order, per unit.
    fn read_voltages(&mut self) -> Result<Vec<f64>, LinkError>;
    fn read_switches(&mut self) -> Result<SwitchConfig, LinkError>;
    /// Setpoints in slot order, kW.
    fn read_setpoints(&mut self) -> Result<Vec<u16>, LinkError>;
    fn write_setpoints(&mut self, kw: &[(String, f64)]) -> Result<(), LinkError>;
    fn write_switch(&mut self, name: &str, state: SwitchState) -> Result<(), LinkError>;
}

/// Rounds a kW command to its register value.
pub fn setpoint_word(kw: f64) -> Result<u16, LinkError> {
    if !kw.is_finite() || kw < 0.0 || kw.round() > u16::MAX as f64 {
        return Err(LinkError::SetpointRange(kw));
    }
    Ok(kw.round() as u16)
}
