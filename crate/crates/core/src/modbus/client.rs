//! Synchronous Modbus/TCP client and the map-aware operations built on it.
//!
//! Register and coil numbers in this API are 1-based, as in the register
//! map; conversion to wire addresses happens here.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::frame::{
    encode_frame, unpack_bits, MbapHeader, Pdu, Request, Response, HEADER_LEN,
};
use super::{setpoint_word, FieldLink, LinkError, VoltageSource};
use crate::feeder::{SwitchConfig, SwitchState};
use crate::regmap::{
    decode_float_pair, decode_voltage_word, plan_chunked_read, MeterMap, FLOAT_BASE,
    MAX_READ_REGISTERS, SETPOINT_BASE, STATUS_REGISTER, VOLTAGE_BASE,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

pub struct ModbusClient {
    stream: TcpStream,
    peer: SocketAddr,
    next_txn: u16,
    unit: u8,
    transactions: u64,
}

impl ModbusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, LinkError> {
        ModbusClient::connect_timeout(addr, DEFAULT_TIMEOUT)
    }

    pub fn connect_timeout(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, LinkError> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.set_nodelay(true)?;
                    return Ok(ModbusClient {
                        stream,
                        peer: a,
                        next_txn: 1,
                        unit: 1,
                        transactions: 0,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last
            .unwrap_or_else(|| std::io::Error::other("address resolved to nothing"))
            .into())
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn set_unit(&mut self, unit: u8) {
        self.unit = unit;
    }

    /// Request/response exchanges completed on this connection.
    pub fn transactions(&self) -> u64 {
        self.transactions
    }

    /// Sends one PDU and returns the server's PDU, exception or not.
    pub fn transact_pdu(&mut self, pdu: &Pdu) -> Result<Pdu, LinkError> {
        let txn = self.next_txn;
        self.next_txn = self.next_txn.wrapping_add(1);
        let frame = encode_frame(&MbapHeader::for_pdu(txn, self.unit, pdu), pdu);
        self.stream.write_all(&frame)?;
        let mut head = [0u8; HEADER_LEN];
        self.stream.read_exact(&mut head)?;
        let header = MbapHeader::parse(&head)?;
        let mut body = vec![0u8; header.length as usize - 1];
        self.stream.read_exact(&mut body)?;
        self.transactions += 1;
        if header.transaction != txn {
            return Err(LinkError::TransactionMismatch {
                sent: txn,
                got: header.transaction,
            });
        }
        Ok(Pdu::new(body[0], body[1..].to_vec()))
    }

    /// Typed exchange; exception responses become `LinkError::Exception`.
    pub fn request(&mut self, req: &Request) -> Result<Response, LinkError> {
        let resp = Response::from_pdu(&self.transact_pdu(&req.to_pdu())?)?;
        if let Response::Exception { function, code } = resp {
            return Err(LinkError::Exception { function, code });
        }
        Ok(resp)
    }

    pub fn read_holding(&mut self, register: u16, qty: u16) -> Result<Vec<u16>, LinkError> {
        let address = wire(register)?;
        match self.request(&Request::ReadHolding { address, qty })? {
            Response::ReadHolding { values } if values.len() == qty as usize => Ok(values),
            other => Err(unexpected(&other)),
        }
    }

    pub fn read_coils(&mut self, coil: u16, qty: u16) -> Result<Vec<bool>, LinkError> {
        let address = wire(coil)?;
        match self.request(&Request::ReadCoils { address, qty })? {
            Response::ReadCoils { packed } if packed.len() == (qty as usize).div_ceil(8) => {
                Ok(unpack_bits(&packed, qty as usize))
            }
            other => Err(unexpected(&other)),
        }
    }

    pub fn write_coil(&mut self, coil: u16, on: bool) -> Result<(), LinkError> {
        let address = wire(coil)?;
        match self.request(&Request::WriteSingleCoil { address, on })? {
            Response::WriteSingleCoil { address: a, on: o } if a == address && o == on => Ok(()),
            other => Err(unexpected(&other)),
        }
    }

    pub fn write_coils(&mut self, coil: u16, values: &[bool]) -> Result<(), LinkError> {
        let address = wire(coil)?;
        let req = Request::WriteMultipleCoils {
            address,
            values: values.to_vec(),
        };
        match self.request(&req)? {
            Response::WriteMultipleCoils { address: a, qty } if a == address && qty as usize == values.len() => {
                Ok(())
            }
            other => Err(unexpected(&other)),
        }
    }

    pub fn write_register(&mut self, register: u16, value: u16) -> Result<(), LinkError> {
        let address = wire(register)?;
        match self.request(&Request::WriteSingleRegister { address, value })? {
            Response::WriteSingleRegister { address: a, value: v } if a == address && v == value => {
                Ok(())
            }
            other => Err(unexpected(&other)),
        }
    }

    pub fn write_registers(&mut self, register: u16, values: &[u16]) -> Result<(), LinkError> {
        let address = wire(register)?;
        let req = Request::WriteMultipleRegisters {
            address,
            values: values.to_vec(),
        };
        match self.request(&req)? {
            Response::WriteMultipleRegisters { address: a, qty } if a == address && qty as usize == values.len() => {
                Ok(())
            }
            other => Err(unexpected(&other)),
        }
    }

    /// Reads `count` registers from `start` in as few legal requests as
    /// possible.
    pub fn read_span(&mut self, start: u16, count: usize) -> Result<Vec<u16>, LinkError> {
        let mut out = Vec::with_capacity(count);
        for (at, n) in plan_chunked_read(start, count, MAX_READ_REGISTERS) {
            out.extend(self.read_holding(at, n)?);
        }
        Ok(out)
    }

    /// Whether the server flags its voltages as stale.
    pub fn read_stale(&mut self) -> Result<bool, LinkError> {
        Ok(self.read_holding(STATUS_REGISTER, 1)?[0] == 1)
    }
}

fn wire(number: u16) -> Result<u16, LinkError> {
    number
        .checked_sub(1)
        .ok_or_else(|| LinkError::UnexpectedResponse("register and coil numbers start at 1".into()))
}

fn unexpected(resp: &Response) -> LinkError {
    LinkError::UnexpectedResponse(format!("{resp:?}"))
}

/// Every meter's magnitude in meter order. Either all chunks succeed or an
/// error is returned; there is no partial result.
pub fn read_all_voltages(
    client: &mut ModbusClient,
    map: &MeterMap,
    source: VoltageSource,
) -> Result<Vec<f64>, LinkError> {
    let n = map.meters().len();
    match source {
        VoltageSource::Scaled => Ok(client
            .read_span(VOLTAGE_BASE, n)?
            .into_iter()
            .map(decode_voltage_word)
            .collect()),
        VoltageSource::Float(order) => Ok(client
            .read_span(FLOAT_BASE, 2 * n)?
            .chunks_exact(2)
            .map(|w| decode_float_pair([w[0], w[1]], order) as f64)
            .collect()),
    }
}

/// Writes setpoints for the named nodes in one write-multiple transaction.
/// Nodes not named keep their current value (read first when needed).
pub fn write_setpoints(
    client: &mut ModbusClient,
    map: &MeterMap,
    kw: &[(String, f64)],
) -> Result<(), LinkError> {
    if kw.is_empty() {
        return Ok(());
    }
    let slots = map.setpoints();
    let mut values: Vec<Option<u16>> = vec![None; slots.len()];
    for (node, p) in kw {
        let k = slots
            .iter()
            .position(|s| &s.node == node)
            .ok_or_else(|| LinkError::UnmappedNode(node.clone()))?;
        values[k] = Some(setpoint_word(*p)?);
    }
    let values: Vec<u16> = if values.iter().all(Option::is_some) {
        values.into_iter().flatten().collect()
    } else {
        let current = client.read_holding(SETPOINT_BASE, slots.len() as u16)?;
        values
            .into_iter()
            .zip(current)
            .map(|(v, c)| v.unwrap_or(c))
            .collect()
    };
    client.write_registers(SETPOINT_BASE, &values)
}

/// Sets one switch and confirms it by reading the coil back.
pub fn write_switch(
    client: &mut ModbusClient,
    map: &MeterMap,
    name: &str,
    state: SwitchState,
) -> Result<(), LinkError> {
    let coil = map
        .coil_of(name)
        .ok_or_else(|| LinkError::UnmappedSwitch(name.to_string()))?;
    client.write_coil(coil, state.is_closed())?;
    if client.read_coils(coil, 1)?[0] != state.is_closed() {
        return Err(LinkError::ReadbackMismatch(name.to_string()));
    }
    Ok(())
}

/// A client bound to a register map.
pub struct ModbusLink {
    pub client: ModbusClient,
    pub map: MeterMap,
    pub source: VoltageSource,
}

impl ModbusLink {
    pub fn connect(
        addr: impl ToSocketAddrs,
        map: MeterMap,
        source: VoltageSource,
    ) -> Result<Self, LinkError> {
        Ok(ModbusLink {
            client: ModbusClient::connect(addr)?,
            map,
            source,
        })
    }
}

impl FieldLink for ModbusLink {
    fn read_voltages(&mut self) -> Result<Vec<f64>, LinkError> {
        read_all_voltages(&mut self.client, &self.map, self.source)
    }

    fn read_switches(&mut self) -> Result<SwitchConfig, LinkError> {
        let n = self.map.switches().len() as u16;
        if n == 0 {
            return Ok(SwitchConfig::default());
        }
        let coils = self.client.read_coils(1, n)?;
        Ok(self.map.config_from_coils(&coils))
    }

    fn read_setpoints(&mut self) -> Result<Vec<u16>, LinkError> {
        let n = self.map.setpoints().len() as u16;
        if n == 0 {
            return Ok(Vec::new());
        }
        self.client.read_holding(SETPOINT_BASE, n)
    }

    fn write_setpoints(&mut self, kw: &[(String, f64)]) -> Result<(), LinkError> {
        write_setpoints(&mut self.client, &self.map, kw)
    }

    fn write_switch(&mut self, name: &str, state: SwitchState) -> Result<(), LinkError> {
        write_switch(&mut self.client, &self.map, name, state)
    }
}
