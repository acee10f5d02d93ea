//! Modbus/TCP framing: MBAP header plus PDU, and the typed requests and
//! responses for the function codes the testbed speaks.

use thiserror::Error;

pub const FC_READ_COILS: u8 = 0x01;
pub const FC_READ_HOLDING: u8 = 0x03;
pub const FC_WRITE_SINGLE_COIL: u8 = 0x05;
pub const FC_WRITE_SINGLE_REGISTER: u8 = 0x06;
pub const FC_WRITE_MULTIPLE_COILS: u8 = 0x0F;
pub const FC_WRITE_MULTIPLE_REGISTERS: u8 = 0x10;

pub const SUPPORTED: [u8; 6] = [
    FC_READ_COILS,
    FC_READ_HOLDING,
    FC_WRITE_SINGLE_COIL,
    FC_WRITE_SINGLE_REGISTER,
    FC_WRITE_MULTIPLE_COILS,
    FC_WRITE_MULTIPLE_REGISTERS,
];

pub const COIL_ON: u16 = 0xFF00;
pub const COIL_OFF: u16 = 0x0000;
pub const HEADER_LEN: usize = 7;
/// Longest PDU the protocol allows.
pub const MAX_PDU_LEN: usize = 253;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame too short: {0} bytes")]
    Short(usize),
    #[error("protocol id {0} is not Modbus (0)")]
    BadProtocol(u16),
    #[error("length field says {declared} bytes follow, {actual} present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unsupported function code 0x{0:02X}")]
    UnknownFunction(u8),
    #[error("malformed 0x{function:02X} body: {reason}")]
    Malformed { function: u8, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ExceptionCode {
    IllegalFunction = 0x01,
    IllegalDataAddress = 0x02,
    IllegalDataValue = 0x03,
    ServerDeviceFailure = 0x04,
}

impl ExceptionCode {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(ExceptionCode::IllegalFunction),
            0x02 => Some(ExceptionCode::IllegalDataAddress),
            0x03 => Some(ExceptionCode::IllegalDataValue),
            0x04 => Some(ExceptionCode::ServerDeviceFailure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MbapHeader {
    pub transaction: u16,
    pub protocol: u16,
    /// Byte count of unit id plus PDU.
    pub length: u16,
    pub unit: u8,
}

impl MbapHeader {
    pub fn for_pdu(transaction: u16, unit: u8, pdu: &Pdu) -> Self {
        MbapHeader {
            transaction,
            protocol: 0,
            length: (pdu.body.len() + 2) as u16,
            unit,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let t = self.transaction.to_be_bytes();
        let p = self.protocol.to_be_bytes();
        let l = self.length.to_be_bytes();
        [t[0], t[1], p[0], p[1], l[0], l[1], self.unit]
    }

    pub fn parse(b: &[u8]) -> Result<Self, FrameError> {
        if b.len() < HEADER_LEN {
            return Err(FrameError::Short(b.len()));
        }
        let h = MbapHeader {
            transaction: u16::from_be_bytes([b[0], b[1]]),
            protocol: u16::from_be_bytes([b[2], b[3]]),
            length: u16::from_be_bytes([b[4], b[5]]),
            unit: b[6],
        };
        if h.protocol != 0 {
            return Err(FrameError::BadProtocol(h.protocol));
        }
        if h.length < 2 || h.length as usize > MAX_PDU_LEN + 1 {
            return Err(FrameError::LengthMismatch {
                declared: h.length as usize,
                actual: b.len().saturating_sub(6),
            });
        }
        Ok(h)
    }
}

/// Function code plus raw body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pdu {
    pub function: u8,
    pub body: Vec<u8>,
}

impl Pdu {
    pub fn new(function: u8, body: Vec<u8>) -> Self {
        Pdu { function, body }
    }

    pub fn is_exception(&self) -> bool {
        self.function & 0x80 != 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.body.len());
        out.push(self.function);
        out.extend_from_slice(&self.body);
        out
    }
}

pub fn encode_frame(header: &MbapHeader, pdu: &Pdu) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 1 + pdu.body.len());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&pdu.to_bytes());
    out
}

/// Parses one complete frame. Exception PDUs are accepted when their base
/// code is supported.
pub fn decode_frame(bytes: &[u8]) -> Result<(MbapHeader, Pdu), FrameError> {
    if bytes.len() < HEADER_LEN + 1 {
        return Err(FrameError::Short(bytes.len()));
    }
    let header = MbapHeader::parse(bytes)?;
    let actual = bytes.len() - 6;
    if header.length as usize != actual {
        return Err(FrameError::LengthMismatch {
            declared: header.length as usize,
            actual,
        });
    }
    let function = bytes[HEADER_LEN];
    if !SUPPORTED.contains(&(function & 0x7F)) {
        return Err(FrameError::UnknownFunction(function));
    }
    Ok((header, Pdu::new(function, bytes[HEADER_LEN + 1..].to_vec())))
}

/// Register and coil fields carry 0-based wire addresses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Request {
    ReadCoils { address: u16, qty: u16 },
    ReadHolding { address: u16, qty: u16 },
    WriteSingleCoil { address: u16, on: bool },
    WriteSingleRegister { address: u16, value: u16 },
    WriteMultipleCoils { address: u16, values: Vec<bool> },
    WriteMultipleRegisters { address: u16, values: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Response {
    /// Coil bits packed LSB-first, as on the wire.
    ReadCoils { packed: Vec<u8> },
    ReadHolding { values: Vec<u16> },
    WriteSingleCoil { address: u16, on: bool },
    WriteSingleRegister { address: u16, value: u16 },
    WriteMultipleCoils { address: u16, qty: u16 },
    WriteMultipleRegisters { address: u16, qty: u16 },
    Exception { function: u8, code: u8 },
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(packed: &[u8], n: usize) -> Vec<bool> {
    (0..n)
        .map(|i| packed.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0))
        .collect()
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn words_to_bytes(words: &[u16]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

fn bytes_to_words(b: &[u8]) -> Vec<u16> {
    b.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
}

fn malformed(function: u8, reason: &'static str) -> FrameError {
    FrameError::Malformed { function, reason }
}

fn coil_word(function: u8, w: u16) -> Result<bool, FrameError> {
    match w {
        COIL_ON => Ok(true),
        COIL_OFF => Ok(false),
        _ => Err(malformed(function, "coil value must be 0xFF00 or 0x0000")),
    }
}

impl Request {
    pub fn function(&self) -> u8 {
        match self {
            Request::ReadCoils { .. } => FC_READ_COILS,
            Request::ReadHolding { .. } => FC_READ_HOLDING,
            Request::WriteSingleCoil { .. } => FC_WRITE_SINGLE_COIL,
            Request::WriteSingleRegister { .. } => FC_WRITE_SINGLE_REGISTER,
            Request::WriteMultipleCoils { .. } => FC_WRITE_MULTIPLE_COILS,
            Request::WriteMultipleRegisters { .. } => FC_WRITE_MULTIPLE_REGISTERS,
        }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self, Request::ReadCoils { .. } | Request::ReadHolding { .. })
    }

    pub fn to_pdu(&self) -> Pdu {
        let mut b = Vec::new();
        match self {
            Request::ReadCoils { address, qty } | Request::ReadHolding { address, qty } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&qty.to_be_bytes());
            }
            Request::WriteSingleCoil { address, on } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&(if *on { COIL_ON } else { COIL_OFF }).to_be_bytes());
            }
            Request::WriteSingleRegister { address, value } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&value.to_be_bytes());
            }
            Request::WriteMultipleCoils { address, values } => {
                let packed = pack_bits(values);
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&(values.len() as u16).to_be_bytes());
                b.push(packed.len() as u8);
                b.extend_from_slice(&packed);
            }
            Request::WriteMultipleRegisters { address, values } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&(values.len() as u16).to_be_bytes());
                b.push((2 * values.len()) as u8);
                b.extend_from_slice(&words_to_bytes(values));
            }
        }
        Pdu::new(self.function(), b)
    }

    pub fn from_pdu(pdu: &Pdu) -> Result<Request, FrameError> {
        let f = pdu.function;
        let b = &pdu.body;
        let fixed = |n: usize| {
            if b.len() == n {
                Ok(())
            } else {
                Err(malformed(f, "unexpected body length"))
            }
        };
        match f {
            FC_READ_COILS | FC_READ_HOLDING => {
                fixed(4)?;
                let (address, qty) = (be16(b, 0), be16(b, 2));
                Ok(if f == FC_READ_COILS {
                    Request::ReadCoils { address, qty }
                } else {
                    Request::ReadHolding { address, qty }
                })
            }
            FC_WRITE_SINGLE_COIL => {
                fixed(4)?;
                Ok(Request::WriteSingleCoil {
                    address: be16(b, 0),
                    on: coil_word(f, be16(b, 2))?,
                })
            }
            FC_WRITE_SINGLE_REGISTER => {
                fixed(4)?;
                Ok(Request::WriteSingleRegister {
                    address: be16(b, 0),
                    value: be16(b, 2),
                })
            }
            FC_WRITE_MULTIPLE_COILS => {
                if b.len() < 5 {
                    return Err(malformed(f, "body too short"));
                }
                let qty = be16(b, 2) as usize;
                let count = b[4] as usize;
                if count != qty.div_ceil(8) || b.len() != 5 + count {
                    return Err(malformed(f, "byte count does not match quantity"));
                }
                Ok(Request::WriteMultipleCoils {
                    address: be16(b, 0),
                    values: unpack_bits(&b[5..], qty),
                })
            }
            FC_WRITE_MULTIPLE_REGISTERS => {
                if b.len() < 5 {
                    return Err(malformed(f, "body too short"));
                }
                let qty = be16(b, 2) as usize;
                let count = b[4] as usize;
                if count != 2 * qty || b.len() != 5 + count {
                    return Err(malformed(f, "byte count does not match quantity"));
                }
                Ok(Request::WriteMultipleRegisters {
                    address: be16(b, 0),
                    values: bytes_to_words(&b[5..]),
                })
            }
            other => Err(FrameError::UnknownFunction(other)),
        }
    }
}

impl Response {
    pub fn exception(function: u8, code: ExceptionCode) -> Self {
        Response::Exception {
            function: function | 0x80,
            code: code as u8,
        }
    }

    pub fn to_pdu(&self) -> Pdu {
        let mut b = Vec::new();
        let f = match self {
            Response::ReadCoils { packed } => {
                b.push(packed.len() as u8);
                b.extend_from_slice(packed);
                FC_READ_COILS
            }
            Response::ReadHolding { values } => {
                b.push((2 * values.len()) as u8);
                b.extend_from_slice(&words_to_bytes(values));
                FC_READ_HOLDING
            }
            Response::WriteSingleCoil { address, on } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&(if *on { COIL_ON } else { COIL_OFF }).to_be_bytes());
                FC_WRITE_SINGLE_COIL
            }
            Response::WriteSingleRegister { address, value } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&value.to_be_bytes());
                FC_WRITE_SINGLE_REGISTER
            }
            Response::WriteMultipleCoils { address, qty } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&qty.to_be_bytes());
                FC_WRITE_MULTIPLE_COILS
            }
            Response::WriteMultipleRegisters { address, qty } => {
                b.extend_from_slice(&address.to_be_bytes());
                b.extend_from_slice(&qty.to_be_bytes());
                FC_WRITE_MULTIPLE_REGISTERS
            }
            Response::Exception { function, code } => {
                b.push(*code);
                *function
            }
        };
        Pdu::new(f, b)
    }

    pub fn from_pdu(pdu: &Pdu) -> Result<Response, FrameError> {
        let f = pdu.function;
        let b = &pdu.body;
        if pdu.is_exception() {
            if b.len() != 1 {
                return Err(malformed(f, "exception body must be one byte"));
            }
            return Ok(Response::Exception {
                function: f,
                code: b[0],
            });
        }
        let fixed4 = || {
            if b.len() == 4 {
                Ok(())
            } else {
                Err(malformed(f, "unexpected body length"))
            }
        };
        match f {
            FC_READ_COILS | FC_READ_HOLDING => {
                if b.is_empty() || b.len() != 1 + b[0] as usize {
                    return Err(malformed(f, "byte count does not match body"));
                }
                if f == FC_READ_COILS {
                    Ok(Response::ReadCoils {
                        packed: b[1..].to_vec(),
                    })
                } else if b[0] % 2 != 0 {
                    Err(malformed(f, "odd register byte count"))
                } else {
                    Ok(Response::ReadHolding {
                        values: bytes_to_words(&b[1..]),
                    })
                }
            }
            FC_WRITE_SINGLE_COIL => {
                fixed4()?;
                Ok(Response::WriteSingleCoil {
                    address: be16(b, 0),
                    on: coil_word(f, be16(b, 2))?,
                })
            }
            FC_WRITE_SINGLE_REGISTER => {
                fixed4()?;
                Ok(Response::WriteSingleRegister {
                    address: be16(b, 0),
                    value: be16(b, 2),
                })
            }
            FC_WRITE_MULTIPLE_COILS | FC_WRITE_MULTIPLE_REGISTERS => {
                fixed4()?;
                let (address, qty) = (be16(b, 0), be16(b, 2));
                Ok(if f == FC_WRITE_MULTIPLE_COILS {
                    Response::WriteMultipleCoils { address, qty }
                } else {
                    Response::WriteMultipleRegisters { address, qty }
                })
            }
            other => Err(FrameError::UnknownFunction(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_holding_frame_bytes() {
        let req = Request::ReadHolding { address: 0, qty: 2 };
        let pdu = req.to_pdu();
        let bytes = encode_frame(&MbapHeader::for_pdu(1, 1, &pdu), &pdu);
        assert_eq!(bytes, [0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x03, 0x00, 0x00, 0x00, 0x02]);
        let (h, p) = decode_frame(&bytes).unwrap();
        assert_eq!(h.transaction, 1);
        assert_eq!(Request::from_pdu(&p).unwrap(), req);
    }

    #[test]
    fn single_coil_pdu() {
        let pdu = Request::WriteSingleCoil { address: 6, on: true }.to_pdu();
        assert_eq!(pdu.to_bytes(), [0x05, 0x00, 0x06, 0xFF, 0x00]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_frame(&[0, 1, 0, 0, 0]), Err(FrameError::Short(5)));
        let mut bad = vec![0, 1, 0, 1, 0, 6, 1, 3, 0, 0, 0, 2];
        assert_eq!(decode_frame(&bad), Err(FrameError::BadProtocol(1)));
        bad[3] = 0;
        bad[5] = 7;
        assert!(matches!(decode_frame(&bad), Err(FrameError::LengthMismatch { .. })));
        let unknown = [0, 1, 0, 0, 0, 2, 1, 0x2B];
        assert_eq!(decode_frame(&unknown), Err(FrameError::UnknownFunction(0x2B)));
        let bad_coil = Pdu::new(FC_WRITE_SINGLE_COIL, vec![0, 1, 0x12, 0x34]);
        assert!(matches!(Request::from_pdu(&bad_coil), Err(FrameError::Malformed { .. })));
    }

    #[test]
    fn exception_pdu() {
        let r = Response::exception(FC_READ_HOLDING, ExceptionCode::IllegalDataValue);
        let pdu = r.to_pdu();
        assert_eq!(pdu.to_bytes(), [0x83, 0x03]);
        assert_eq!(Response::from_pdu(&pdu).unwrap(), r);
    }

    #[test]
    fn bit_packing() {
        let bits = [true, false, true, true, false, false, false, false, true];
        let packed = pack_bits(&bits);
        assert_eq!(packed, [0b0000_1101, 0b0000_0001]);
        assert_eq!(unpack_bits(&packed, 9), bits);
    }
}
