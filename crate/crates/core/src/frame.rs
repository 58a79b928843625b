//! Over-the-air frames and the canonical management payload layout.
//!
//! Management payloads are little-endian. Timestamps are 64-bit signed
//! nanoseconds, slot counts and node ids are 16-bit. Every payload starts with
//! a one-byte tag:
//!
//! | tag  | frame          | body                                                         |
//! |------|----------------|--------------------------------------------------------------|
//! | 0x01 | beacon         | index u64, s_ap i64, nav_ns u64, n u16, n × (node u16, s_resp i64, t_rx i64) |
//! | 0x02 | sync response  | node u16, s_resp i64                                         |
//! | 0x03 | slot map       | version u32, effective_from u64, n_tdma u16, tau_ns u64, n_tdma × owner u16 (0xffff = free) |
//! | 0x04 | assoc request  | node u16                                                     |
//! | 0x05 | assoc response | node u16, accepted u8                                        |

use crate::error::DecodeError;
use crate::medium::NodeId;
use crate::traffic::PacketId;

/// MAC header + FCS bytes charged to management frames.
pub const MGMT_HEADER_BYTES: u64 = 28;
pub const ACK_BYTES: u64 = 14;
pub const UNOWNED_SLOT: u16 = 0xffff;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    Unicast(NodeId),
    Broadcast,
}

impl Dest {
    pub fn includes(self, node: NodeId) -> bool {
        match self {
            Dest::Unicast(n) => n == node,
            Dest::Broadcast => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncEcho {
    pub node: u16,
    pub s_response: i64,
    pub t_server_rx: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaconPayload {
    pub superframe_index: u64,
    pub s_ap: i64,
    pub nav_ns: u64,
    pub echoes: Vec<SyncEcho>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotMapPayload {
    pub version: u32,
    pub effective_from: u64,
    pub n_tdma: u16,
    pub tau_ns: u64,
    pub owners: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MgmtFrame {
    Beacon(BeaconPayload),
    SyncResponse { node: u16, s_response: i64 },
    SlotMap(SlotMapPayload),
    AssocRequest { node: u16 },
    AssocResponse { node: u16, accepted: bool },
}

const TAG_BEACON: u8 = 0x01;
const TAG_SYNC: u8 = 0x02;
const TAG_SLOTMAP: u8 = 0x03;
const TAG_ASSOC_REQ: u8 = 0x04;
const TAG_ASSOC_RESP: u8 = 0x05;

impl MgmtFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        match self {
            MgmtFrame::Beacon(b) => {
                out.push(TAG_BEACON);
                out.extend_from_slice(&b.superframe_index.to_le_bytes());
                out.extend_from_slice(&b.s_ap.to_le_bytes());
                out.extend_from_slice(&b.nav_ns.to_le_bytes());
                out.extend_from_slice(&(b.echoes.len() as u16).to_le_bytes());
                for e in &b.echoes {
                    out.extend_from_slice(&e.node.to_le_bytes());
                    out.extend_from_slice(&e.s_response.to_le_bytes());
                    out.extend_from_slice(&e.t_server_rx.to_le_bytes());
                }
            }
            MgmtFrame::SyncResponse { node, s_response } => {
                out.push(TAG_SYNC);
                out.extend_from_slice(&node.to_le_bytes());
                out.extend_from_slice(&s_response.to_le_bytes());
            }
            MgmtFrame::SlotMap(m) => {
                out.push(TAG_SLOTMAP);
                out.extend_from_slice(&m.version.to_le_bytes());
                out.extend_from_slice(&m.effective_from.to_le_bytes());
                out.extend_from_slice(&m.n_tdma.to_le_bytes());
                out.extend_from_slice(&m.tau_ns.to_le_bytes());
                for o in &m.owners {
                    out.extend_from_slice(&o.to_le_bytes());
                }
            }
            MgmtFrame::AssocRequest { node } => {
                out.push(TAG_ASSOC_REQ);
                out.extend_from_slice(&node.to_le_bytes());
            }
            MgmtFrame::AssocResponse { node, accepted } => {
                out.push(TAG_ASSOC_RESP);
                out.extend_from_slice(&node.to_le_bytes());
                out.push(u8::from(*accepted));
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let frame = match r.u8()? {
            TAG_BEACON => {
                let superframe_index = r.u64()?;
                let s_ap = r.i64()?;
                let nav_ns = r.u64()?;
                let n = r.u16()?;
                let mut echoes = Vec::with_capacity(usize::from(n));
                for _ in 0..n {
                    echoes.push(SyncEcho {
                        node: r.u16()?,
                        s_response: r.i64()?,
                        t_server_rx: r.i64()?,
                    });
                }
                MgmtFrame::Beacon(BeaconPayload {
                    superframe_index,
                    s_ap,
                    nav_ns,
                    echoes,
                })
            }
            TAG_SYNC => MgmtFrame::SyncResponse {
                node: r.u16()?,
                s_response: r.i64()?,
            },
            TAG_SLOTMAP => {
                let version = r.u32()?;
                let effective_from = r.u64()?;
                let n_tdma = r.u16()?;
                let tau_ns = r.u64()?;
                let owners = (0..n_tdma).map(|_| r.u16()).collect::<Result<_, _>>()?;
                MgmtFrame::SlotMap(SlotMapPayload {
                    version,
                    effective_from,
                    n_tdma,
                    tau_ns,
                    owners,
                })
            }
            TAG_ASSOC_REQ => MgmtFrame::AssocRequest { node: r.u16()? },
            TAG_ASSOC_RESP => MgmtFrame::AssocResponse {
                node: r.u16()?,
                accepted: r.u8()? != 0,
            },
            other => return Err(DecodeError::UnknownTag(other)),
        };
        if r.pos != bytes.len() {
            return Err(DecodeError::Trailing(bytes.len() - r.pos));
        }
        Ok(frame)
    }

    /// Bytes on air including the MAC header.
    pub fn frame_bytes(&self) -> u64 {
        MGMT_HEADER_BYTES + self.encode().len() as u64
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(DecodeError::Truncated {
                need: end,
                have: self.buf.len(),
            });
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take()?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Data(PacketId),
    /// Acknowledges the data frame with the given link sequence number.
    Ack(u64),
    /// Encoded management payload; decoded by receivers.
    Mgmt(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: Dest,
    /// Link-level sequence number, unique per run.
    pub seq: u64,
    pub size_bytes: u64,
    pub kind: FrameKind,
}

impl Frame {
    pub fn needs_ack(&self) -> bool {
        matches!(self.dst, Dest::Unicast(_)) && !matches!(self.kind, FrameKind::Ack(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn beacon_layout_is_stable() {
        let b = MgmtFrame::Beacon(BeaconPayload {
            superframe_index: 1,
            s_ap: 100_000_000,
            nav_ns: 5_000_000,
            echoes: vec![SyncEcho {
                node: 1,
                s_response: -2,
                t_server_rx: 3,
            }],
        });
        let bytes = b.encode();
        let mut expected = vec![0x01];
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&100_000_000i64.to_le_bytes());
        expected.extend_from_slice(&5_000_000u64.to_le_bytes());
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&(-2i64).to_le_bytes());
        expected.extend_from_slice(&3i64.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(b.frame_bytes(), MGMT_HEADER_BYTES + 45);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert_eq!(MgmtFrame::decode(&[0x7f]), Err(DecodeError::UnknownTag(0x7f)));
        assert!(matches!(
            MgmtFrame::decode(&[TAG_SYNC, 1]),
            Err(DecodeError::Truncated { .. })
        ));
        assert_eq!(
            MgmtFrame::decode(&[TAG_ASSOC_REQ, 1, 0, 9]),
            Err(DecodeError::Trailing(1))
        );
    }

    proptest! {
        #[test]
        fn slot_map_round_trips(
            version in any::<u32>(),
            eff in any::<u64>(),
            tau in any::<u64>(),
            owners in proptest::collection::vec(any::<u16>(), 0..32),
        ) {
            let f = MgmtFrame::SlotMap(SlotMapPayload {
                version,
                effective_from: eff,
                n_tdma: owners.len() as u16,
                tau_ns: tau,
                owners,
            });
            prop_assert_eq!(MgmtFrame::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn beacon_round_trips(
            idx in any::<u64>(),
            s_ap in any::<i64>(),
            nav in any::<u64>(),
            echoes in proptest::collection::vec((any::<u16>(), any::<i64>(), any::<i64>()), 0..8),
        ) {
            let f = MgmtFrame::Beacon(BeaconPayload {
                superframe_index: idx,
                s_ap,
                nav_ns: nav,
                echoes: echoes
                    .into_iter()
                    .map(|(node, s_response, t_server_rx)| SyncEcho { node, s_response, t_server_rx })
                    .collect(),
            });
            prop_assert_eq!(MgmtFrame::decode(&f.encode()).unwrap(), f);
        }
    }
}
