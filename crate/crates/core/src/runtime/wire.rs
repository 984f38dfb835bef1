//! Little-endian envelope encoding.
//!
//! Header: magic `DBRS`, u8 version, u8 kind, u32 src vertex, u32 dst vertex,
//! u64 sequence, u32 payload length, then that many f64 linear-space
//! probabilities. Token envelopes append u32 clean cycles, u64 sent,
//! u64 received, u64 epoch. A packet is a run of envelopes back to back.

use super::token::TokenState;
use super::RuntimeError;

pub const MAGIC: [u8; 4] = *b"DBRS";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 8 + 4;
const TOKEN_LEN: usize = 4 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Bp = 0,
    Token = 1,
    Shutdown = 2,
    BeliefReport = 3,
}

impl Kind {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Bp,
            1 => Self::Token,
            2 => Self::Shutdown,
            3 => Self::BeliefReport,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub kind: Kind,
    pub src: u32,
    pub dst: u32,
    /// Position on its (sending worker, receiving worker) channel.
    pub seq: u64,
    /// Linear-space probabilities (BP message or belief).
    pub payload: Vec<f64>,
    pub token: Option<TokenState>,
}

impl Envelope {
    pub fn bp(src: u32, dst: u32, payload: Vec<f64>) -> Self {
        Self {
            kind: Kind::Bp,
            src,
            dst,
            seq: 0,
            payload,
            token: None,
        }
    }

    pub fn token(token: TokenState) -> Self {
        Self {
            kind: Kind::Token,
            src: 0,
            dst: 0,
            seq: 0,
            payload: Vec::new(),
            token: Some(token),
        }
    }

    pub fn shutdown() -> Self {
        Self {
            kind: Kind::Shutdown,
            src: 0,
            dst: 0,
            seq: 0,
            payload: Vec::new(),
            token: None,
        }
    }

    pub fn belief_report(var: u32, belief: Vec<f64>) -> Self {
        Self {
            kind: Kind::BeliefReport,
            src: var,
            dst: var,
            seq: 0,
            payload: belief,
            token: None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.payload.len() + if self.kind == Kind::Token { TOKEN_LEN } else { 0 }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        for p in &self.payload {
            out.extend_from_slice(&p.to_le_bytes());
        }
        if self.kind == Kind::Token {
            let t = self.token.unwrap_or_default();
            out.extend_from_slice(&t.clean_cycles.to_le_bytes());
            out.extend_from_slice(&t.sent.to_le_bytes());
            out.extend_from_slice(&t.received.to_le_bytes());
            out.extend_from_slice(&t.epoch.to_le_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], RuntimeError> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| RuntimeError::Wire(format!("truncated envelope at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, RuntimeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, RuntimeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

/// Decodes every envelope of a packet.
pub fn decode_packet(buf: &[u8]) -> Result<Vec<Envelope>, RuntimeError> {
    let mut r = Reader { buf, pos: 0 };
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let start = r.pos;
        if r.take::<4>()? != MAGIC {
            return Err(RuntimeError::Wire(format!("bad magic at byte {start}")));
        }
        let [version, kind] = r.take::<2>()?;
        if version != VERSION {
            return Err(RuntimeError::Wire(format!("unsupported version {version}")));
        }
        let kind = Kind::from_u8(kind).ok_or_else(|| RuntimeError::Wire(format!("unknown kind {kind}")))?;
        let src = r.u32()?;
        let dst = r.u32()?;
        let seq = r.u64()?;
        let len = r.u32()? as usize;
        if len > (buf.len() - r.pos) / 8 {
            return Err(RuntimeError::Wire(format!("payload length {len} overruns packet")));
        }
        let mut payload = Vec::with_capacity(len);
        for _ in 0..len {
            payload.push(f64::from_le_bytes(r.take()?));
        }
        let token = if kind == Kind::Token {
            Some(TokenState {
                clean_cycles: r.u32()?,
                sent: r.u64()?,
                received: r.u64()?,
                epoch: r.u64()?,
            })
        } else {
            None
        };
        out.push(Envelope {
            kind,
            src,
            dst,
            seq,
            payload,
            token,
        });
    }
    Ok(out)
}
