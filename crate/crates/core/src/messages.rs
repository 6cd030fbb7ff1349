//! Control and data messages and their wire format.
//!
//! Every MHCL message is `[kind][flag][src:2][dst:2][seq:2][options]` with all
//! multi-byte fields big-endian and each option field two bytes wide, so the
//! encoded length depends only on the kind.
//!
//! [`RankBeacon`] is the minimal DAG-building traffic (rank advertisement and
//! solicitation) that stands in for plain RPL DIO/DIS messages.

use alloc::vec::Vec;
use core::fmt;

use crate::addrspace::HostAddress;
use crate::NodeId;

pub const HEADER_LEN: usize = 8;

/// Message discriminant, the first byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Dio = 0x01,
    DioAck = 0x02,
    Dao = 0x03,
    DaoAck = 0x04,
    AppData = 0x05,
}

impl Kind {
    fn from_byte(b: u8) -> Option<Kind> {
        Some(match b {
            0x01 => Kind::Dio,
            0x02 => Kind::DioAck,
            0x03 => Kind::Dao,
            0x04 => Kind::DaoAck,
            0x05 => Kind::AppData,
            _ => return None,
        })
    }

    /// Flag value carried by every message of this kind.
    pub fn flag(self) -> u8 {
        match self {
            Kind::Dio | Kind::Dao => 1,
            Kind::DioAck | Kind::DaoAck => 2,
            Kind::AppData => 0,
        }
    }

    pub fn encoded_len(self) -> usize {
        HEADER_LEN
            + match self {
                Kind::Dio | Kind::AppData => 4,
                Kind::DioAck | Kind::DaoAck | Kind::Dao => 2,
            }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Dio => "DIO_MHCL",
            Kind::DioAck => "DIOACK_MHCL",
            Kind::Dao => "DAO_MHCL",
            Kind::DaoAck => "DAOACK_MHCL",
            Kind::AppData => "APP_DATA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

/// Kind-specific options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Body {
    /// Address range grant: the child's own (first) address and the range length.
    Dio {
        first: HostAddress,
        size: u16,
    },
    DioAck {
        acked_seq: u16,
    },
    /// Subtree report; 0 means "I am your child" without a known subtree size.
    Dao {
        count: u16,
    },
    DaoAck {
        acked_seq: u16,
    },
    AppData {
        dest: HostAddress,
        direction: Direction,
    },
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Dio { .. } => Kind::Dio,
            Body::DioAck { .. } => Kind::DioAck,
            Body::Dao { .. } => Kind::Dao,
            Body::DaoAck { .. } => Kind::DaoAck,
            Body::AppData { .. } => Kind::AppData,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MhclMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u16,
    pub body: Body,
}

/// Why a byte sequence was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedMessage {
    Truncated { expected: usize, got: usize },
    TrailingBytes { expected: usize, got: usize },
    UnknownKind(u8),
    BadFlag { kind: Kind, flag: u8 },
    ZeroPartition,
    BadDirection(u16),
}

impl fmt::Display for MalformedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedMessage::Truncated { expected, got } => {
                write!(f, "truncated message: {got} of {expected} bytes")
            }
            MalformedMessage::TrailingBytes { expected, got } => {
                write!(f, "{got} bytes for a {expected}-byte message")
            }
            MalformedMessage::UnknownKind(b) => write!(f, "unknown message kind {b:#04x}"),
            MalformedMessage::BadFlag { kind, flag } => {
                write!(f, "{} with flag {flag}", kind.name())
            }
            MalformedMessage::ZeroPartition => f.write_str("DIO_MHCL with empty partition"),
            MalformedMessage::BadDirection(d) => write!(f, "unknown direction {d}"),
        }
    }
}

impl core::error::Error for MalformedMessage {}

impl MhclMessage {
    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    pub fn flag(&self) -> u8 {
        self.kind().flag()
    }

    pub fn encode(&self) -> Vec<u8> {
        let kind = self.kind();
        let mut out = Vec::with_capacity(kind.encoded_len());
        out.push(kind as u8);
        out.push(kind.flag());
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dst.0.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        let mut put = |v: u16| out.extend_from_slice(&v.to_be_bytes());
        match self.body {
            Body::Dio { first, size } => {
                put(first.0);
                put(size);
            }
            Body::DioAck { acked_seq } | Body::DaoAck { acked_seq } => put(acked_seq),
            Body::Dao { count } => put(count),
            Body::AppData { dest, direction } => {
                put(dest.0);
                put(match direction {
                    Direction::Up => 0,
                    Direction::Down => 1,
                });
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MhclMessage, MalformedMessage> {
        if bytes.len() < HEADER_LEN {
            return Err(MalformedMessage::Truncated { expected: HEADER_LEN, got: bytes.len() });
        }
        let kind = Kind::from_byte(bytes[0]).ok_or(MalformedMessage::UnknownKind(bytes[0]))?;
        let expected = kind.encoded_len();
        if bytes.len() < expected {
            return Err(MalformedMessage::Truncated { expected, got: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(MalformedMessage::TrailingBytes { expected, got: bytes.len() });
        }
        if bytes[1] != kind.flag() {
            return Err(MalformedMessage::BadFlag { kind, flag: bytes[1] });
        }
        let word = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let body = match kind {
            Kind::Dio => {
                let size = word(10);
                if size == 0 {
                    return Err(MalformedMessage::ZeroPartition);
                }
                Body::Dio { first: HostAddress(word(8)), size }
            }
            Kind::DioAck => Body::DioAck { acked_seq: word(8) },
            Kind::Dao => Body::Dao { count: word(8) },
            Kind::DaoAck => Body::DaoAck { acked_seq: word(8) },
            Kind::AppData => Body::AppData {
                dest: HostAddress(word(8)),
                direction: match word(10) {
                    0 => Direction::Up,
                    1 => Direction::Down,
                    d => return Err(MalformedMessage::BadDirection(d)),
                },
            },
        };
        Ok(MhclMessage { src: NodeId(word(2)), dst: NodeId(word(4)), seq: word(6), body })
    }
}

/// Broadcast destination used by beacons.
pub const BROADCAST: NodeId = NodeId(0xFFFF);

/// DAG-building beacon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankBeacon {
    /// "My hop distance to the root is `rank`."
    Advert { src: NodeId, rank: u16 },
    /// "Neighbours, please advertise your rank."
    Solicit { src: NodeId },
}

impl RankBeacon {
    pub fn src(&self) -> NodeId {
        match *self {
            RankBeacon::Advert { src, .. } | RankBeacon::Solicit { src } => src,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RankBeacon::Advert { .. } => "RPL_DIO",
            RankBeacon::Solicit { .. } => "RPL_DIS",
        }
    }

    /// `[0x10|0x11][0][src:2][0xFFFF][rank:2]`.
    pub fn encode(&self) -> Vec<u8> {
        let (kind, rank) = match *self {
            RankBeacon::Advert { rank, .. } => (0x10u8, rank),
            RankBeacon::Solicit { .. } => (0x11u8, 0),
        };
        let mut out = Vec::with_capacity(8);
        out.push(kind);
        out.push(0);
        out.extend_from_slice(&self.src().0.to_be_bytes());
        out.extend_from_slice(&BROADCAST.0.to_be_bytes());
        out.extend_from_slice(&rank.to_be_bytes());
        out
    }
}
