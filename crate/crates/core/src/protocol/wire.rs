//! Wire format v1.
//!
//! Every message is framed as `u32 payload length ∥ u8 tag ∥ payload`.
//! Integers are big-endian, reals IEEE-754 binary64 big-endian, big integers
//! `u32 length ∥ minimal big-endian magnitude`, byte strings `u32 length ∥
//! bytes`.

use std::io::{Read, Write};

use rug::Integer;

use crate::bigint;
use crate::error::{Error, Result};
use crate::ot::WrappedMessage;

/// Upper bound on a single payload, to refuse absurd length prefixes.
pub const MAX_PAYLOAD: usize = 1 << 30;
pub const HEADER_LEN: usize = 5;

pub mod tag {
    pub const PHASE1: u8 = 0x01;
    pub const PHASE1_REPLY: u8 = 0x02;
    pub const FETCH_DIRECT: u8 = 0x03;
    pub const DOCUMENTS: u8 = 0x04;
    pub const OT_B: u8 = 0x05;
    pub const OT_WRAPPED: u8 = 0x06;
    /// Unmerged schedule only: the encrypted query as its own message.
    pub const ENC_QUERY: u8 = 0x08;
    /// Unmerged schedule only: the sender's OT value as its own message.
    pub const OT_INIT: u8 = 0x09;
    pub const HELLO: u8 = 0x10;
    pub const INFO: u8 = 0x11;
    pub const ERROR: u8 = 0x7F;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub tag: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: u8, payload: Vec<u8>) -> Self {
        Self { tag, payload }
    }

    /// Size on the wire, header included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.tag);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..])? {
                0 if filled == 0 => return Ok(None),
                0 => return Err(Error::malformed("truncated frame header")),
                n => filled += n,
            }
        }
        let len = u32::from_be_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::malformed(format!("payload length {len} exceeds limit")));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|_| Error::malformed("truncated frame payload"))?;
        Ok(Some(Self { tag: header[4], payload }))
    }
}

/// PHASE1 flag bits.
pub mod flags {
    /// A plaintext embedding follows the dimension.
    pub const EMBEDDING: u8 = 0x01;
    /// The public key and encrypted query are included (merged schedule).
    pub const CIPHERTEXTS: u8 = 0x02;
    /// The cloud should send its OT value with the scores.
    pub const REQUEST_OT: u8 = 0x04;
    /// A private retrieval: encrypted scoring follows.
    pub const PRIVATE: u8 = 0x08;
    pub const ALL: u8 = EMBEDDING | CIPHERTEXTS | REQUEST_OT | PRIVATE;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedQuery {
    pub modulus: Integer,
    pub ciphertexts: Vec<Integer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1 {
    pub dim: u32,
    pub embedding: Option<Vec<f64>>,
    pub k_prime: u32,
    pub k: u32,
    pub encrypted: Option<EncryptedQuery>,
    pub request_ot: bool,
    pub private: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phase1Reply {
    pub scores: Vec<Integer>,
    pub ot_public: Option<Integer>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Info {
    pub corpus_size: u64,
    pub dim: u32,
    pub ot_prime: Integer,
    pub ot_generator: Integer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Phase1(Phase1),
    Phase1Reply(Phase1Reply),
    FetchDirect(Vec<u32>),
    Documents(Vec<Vec<u8>>),
    OtBlinded(Vec<Integer>),
    OtWrapped(Vec<WrappedMessage>),
    EncQuery(EncryptedQuery),
    OtInit(Integer),
    Hello,
    Info(Info),
    Error { code: u16, message: String },
}

pub mod error_code {
    pub const MALFORMED: u16 = 1;
    pub const PROTOCOL: u16 = 2;
    pub const NOT_FOUND: u16 = 3;
    pub const INVALID: u16 = 4;
    pub const INTERNAL: u16 = 5;
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Phase1(_) => tag::PHASE1,
            Message::Phase1Reply(_) => tag::PHASE1_REPLY,
            Message::FetchDirect(_) => tag::FETCH_DIRECT,
            Message::Documents(_) => tag::DOCUMENTS,
            Message::OtBlinded(_) => tag::OT_B,
            Message::OtWrapped(_) => tag::OT_WRAPPED,
            Message::EncQuery(_) => tag::ENC_QUERY,
            Message::OtInit(_) => tag::OT_INIT,
            Message::Hello => tag::HELLO,
            Message::Info(_) => tag::INFO,
            Message::Error { .. } => tag::ERROR,
        }
    }

    pub fn encode(&self) -> Frame {
        let mut w = Writer::default();
        match self {
            Message::Phase1(p) => {
                let mut f = 0;
                if p.embedding.is_some() {
                    f |= flags::EMBEDDING;
                }
                if p.encrypted.is_some() {
                    f |= flags::CIPHERTEXTS;
                }
                if p.request_ot {
                    f |= flags::REQUEST_OT;
                }
                if p.private {
                    f |= flags::PRIVATE;
                }
                w.u8(f);
                w.u32(p.dim);
                if let Some(e) = &p.embedding {
                    e.iter().for_each(|&v| w.f64(v));
                }
                w.u32(p.k_prime);
                w.u32(p.k);
                if let Some(q) = &p.encrypted {
                    w.encrypted_query(q);
                }
            }
            Message::Phase1Reply(r) => {
                w.u32(r.scores.len() as u32);
                r.scores.iter().for_each(|c| w.bigint(c));
                if let Some(a) = &r.ot_public {
                    w.bigint(a);
                }
            }
            Message::FetchDirect(positions) => {
                w.u32(positions.len() as u32);
                positions.iter().for_each(|&p| w.u32(p));
            }
            Message::Documents(texts) => {
                w.u32(texts.len() as u32);
                texts.iter().for_each(|t| w.bytes(t));
            }
            Message::OtBlinded(values) => {
                w.u32(values.len() as u32);
                values.iter().for_each(|b| w.bigint(b));
            }
            Message::OtWrapped(wrapped) => {
                w.u32(wrapped.len() as u32);
                wrapped.iter().for_each(|m| m.write_to(&mut w.0));
            }
            Message::EncQuery(q) => w.encrypted_query(q),
            Message::OtInit(a) => w.bigint(a),
            Message::Hello => {}
            Message::Info(i) => {
                w.u64(i.corpus_size);
                w.u32(i.dim);
                w.bigint(&i.ot_prime);
                w.bigint(&i.ot_generator);
            }
            Message::Error { code, message } => {
                w.u16(*code);
                w.bytes(message.as_bytes());
            }
        }
        Frame::new(self.tag(), w.0)
    }

    pub fn decode(frame: &Frame) -> Result<Self> {
        let mut r = Reader::new(&frame.payload);
        let msg = match frame.tag {
            tag::PHASE1 => {
                let f = r.u8()?;
                if f & !flags::ALL != 0 {
                    return Err(Error::malformed(format!("unknown PHASE1 flags {f:#04x}")));
                }
                let dim = r.u32()?;
                let embedding = if f & flags::EMBEDDING != 0 {
                    r.check_remaining(dim as usize, 8)?;
                    Some((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?)
                } else {
                    None
                };
                let k_prime = r.u32()?;
                let k = r.u32()?;
                let encrypted = if f & flags::CIPHERTEXTS != 0 { Some(r.encrypted_query()?) } else { None };
                Message::Phase1(Phase1 {
                    dim,
                    embedding,
                    k_prime,
                    k,
                    encrypted,
                    request_ot: f & flags::REQUEST_OT != 0,
                    private: f & flags::PRIVATE != 0,
                })
            }
            tag::PHASE1_REPLY => {
                let count = r.count(4)?;
                let scores = (0..count).map(|_| r.bigint()).collect::<Result<Vec<_>>>()?;
                let ot_public = if r.is_empty() { None } else { Some(r.bigint()?) };
                Message::Phase1Reply(Phase1Reply { scores, ot_public })
            }
            tag::FETCH_DIRECT => {
                let count = r.count(4)?;
                Message::FetchDirect((0..count).map(|_| r.u32()).collect::<Result<_>>()?)
            }
            tag::DOCUMENTS => {
                let count = r.count(4)?;
                Message::Documents((0..count).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<_>>()?)
            }
            tag::OT_B => {
                let count = r.count(4)?;
                Message::OtBlinded((0..count).map(|_| r.bigint()).collect::<Result<_>>()?)
            }
            tag::OT_WRAPPED => {
                let count = r.count(4 + crate::ot::TAG_LEN)?;
                let mut rest = r.rest();
                let mut wrapped = Vec::with_capacity(count);
                for _ in 0..count {
                    let (m, tail) = WrappedMessage::read_from(rest)?;
                    wrapped.push(m);
                    rest = tail;
                }
                r = Reader::new(rest);
                Message::OtWrapped(wrapped)
            }
            tag::ENC_QUERY => Message::EncQuery(r.encrypted_query()?),
            tag::OT_INIT => Message::OtInit(r.bigint()?),
            tag::HELLO => Message::Hello,
            tag::INFO => Message::Info(Info {
                corpus_size: r.u64()?,
                dim: r.u32()?,
                ot_prime: r.bigint()?,
                ot_generator: r.bigint()?,
            }),
            tag::ERROR => {
                let code = r.u16()?;
                let message = String::from_utf8_lossy(r.bytes()?).into_owned();
                Message::Error { code, message }
            }
            other => return Err(Error::malformed(format!("unknown tag {other:#04x}"))),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Transmitted numbers: every real, ciphertext, position, or group
    /// element counts one. Length prefixes, `k`, and key material do not;
    /// `k′` counts one when a private query sends it beside an embedding.
    pub fn beta_units(&self) -> u64 {
        match self {
            Message::Phase1(p) => {
                let embedding = p.embedding.as_ref().map_or(0, |e| e.len() as u64);
                let k_prime = u64::from(p.private && p.embedding.is_some());
                let cts = p.encrypted.as_ref().map_or(0, |q| q.ciphertexts.len() as u64);
                embedding + k_prime + cts
            }
            Message::Phase1Reply(r) => r.scores.len() as u64 + u64::from(r.ot_public.is_some()),
            Message::FetchDirect(p) => p.len() as u64,
            Message::OtBlinded(b) => b.len() as u64,
            Message::EncQuery(q) => q.ciphertexts.len() as u64,
            Message::OtInit(_) => 1,
            Message::Documents(_)
            | Message::OtWrapped(_)
            | Message::Hello
            | Message::Info(_)
            | Message::Error { .. } => 0,
        }
    }

    /// Transmitted documents, wrapped or plain.
    pub fn eta_units(&self) -> u64 {
        match self {
            Message::Documents(d) => d.len() as u64,
            Message::OtWrapped(w) => w.len() as u64,
            _ => 0,
        }
    }

    pub fn error(err: &Error) -> Self {
        let code = match err {
            Error::Malformed(_) => error_code::MALFORMED,
            Error::Protocol(_) | Error::State(_) | Error::Corruption(_) => error_code::PROTOCOL,
            Error::NotFound(_) => error_code::NOT_FOUND,
            Error::Domain(_) | Error::Config(_) => error_code::INVALID,
            _ => error_code::INTERNAL,
        };
        Message::Error { code, message: err.to_string() }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn bigint(&mut self, v: &Integer) {
        self.bytes(&bigint::to_be_bytes(v));
    }

    fn encrypted_query(&mut self, q: &EncryptedQuery) {
        self.bigint(&q.modulus);
        self.u32(q.ciphertexts.len() as u32);
        q.ciphertexts.iter().for_each(|c| self.bigint(c));
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self(bytes)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::malformed("truncated payload"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_be_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_be_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_be_bytes)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn bigint(&mut self) -> Result<Integer> {
        self.bytes().map(bigint::from_be_bytes)
    }

    /// Reads a `u32` element count and checks the payload could hold that
    /// many elements of at least `min_size` bytes, so a forged count cannot
    /// force a huge allocation.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let count = self.u32()? as usize;
        self.check_remaining(count, min_size)?;
        Ok(count)
    }

    fn check_remaining(&self, count: usize, min_size: usize) -> Result<()> {
        if count.saturating_mul(min_size) > self.0.len() {
            return Err(Error::malformed(format!("count {count} exceeds payload")));
        }
        Ok(())
    }

    fn encrypted_query(&mut self) -> Result<EncryptedQuery> {
        let modulus = self.bigint()?;
        let count = self.count(4)?;
        let ciphertexts = (0..count).map(|_| self.bigint()).collect::<Result<_>>()?;
        Ok(EncryptedQuery { modulus, ciphertexts })
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.0)
    }

    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn finish(&self) -> Result<()> {
        if !self.0.is_empty() {
            return Err(Error::malformed(format!("{} trailing bytes", self.0.len())));
        }
        Ok(())
    }
}
