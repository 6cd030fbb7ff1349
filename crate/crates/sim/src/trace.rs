//! Packet trace: one record per transmission and receiver.

use std::fmt;

use mhcl_core::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Delivered,
    DropTx,
    DropRx,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Delivered => "DELIVERED",
            Outcome::DropTx => "DROP_TX",
            Outcome::DropRx => "DROP_RX",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    /// Transmission time.
    pub time_ms: u64,
    pub src: NodeId,
    /// Receiver; broadcasts produce one record per neighbour.
    pub dst: NodeId,
    pub kind: &'static str,
    pub outcome: Outcome,
    pub bytes: Vec<u8>,
}

pub const TRACE_HEADER: &str = "time_ms,src,dst,kind,outcome,hex";

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.time_ms,
            self.src,
            self.dst,
            self.kind,
            self.outcome,
            hex::encode(&self.bytes)
        )
    }
}

/// Header line followed by one line per record.
pub fn render(records: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 48 + 40);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let r = TraceRecord {
            time_ms: 12,
            src: NodeId(1),
            dst: NodeId(0),
            kind: "DAO_MHCL",
            outcome: Outcome::DropRx,
            bytes: vec![0x03, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00],
        };
        assert_eq!(r.to_string(), "12,1,0,DAO_MHCL,DROP_RX,03010001000000020000");
    }
}
