//! Binary framing for the byte-stream transport. All integers are
//! little-endian; floats are raw IEEE 754 bits, so a round trip is exact.
//!
//! Frame layout:
//!   [4B magic "FSR1"] [1B tag] [4B round u32] [2B id length u16] [id bytes]
//!   [8B n_samples u64] [8B payload length u64] [payload bytes]
//!
//! Weight payload layout:
//!   [4B entry count u32] then per entry
//!   [2B name length u16] [name bytes] [1B rank] [rank x 4B dim u32]
//!   [product(dims) x 8B f64]

use super::{MessageTag, ProtocolError, RoundMessage};
use crate::nets::ParameterSet;
use crate::tensor::Tensor;
use std::io::{Read, Write};

pub const WIRE_MAGIC: [u8; 4] = *b"FSR1";

/// Serialize a weight set. Rejects non-finite values.
pub fn encode_parameter_set(params: &ParameterSet) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.entries() {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            if !v.is_finite() {
                return Err(ProtocolError::NonFinitePayload);
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ProtocolError> {
        if self.pos + n > self.buf.len() {
            return Err(ProtocolError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Deserialize a weight set, enforcing finiteness.
pub fn decode_parameter_set(bytes: &[u8]) -> Result<ParameterSet, ProtocolError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())?;
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = f64::from_le_bytes(cur.take(8, "weight value")?.try_into().unwrap());
            if !v.is_finite() {
                return Err(ProtocolError::NonFinitePayload);
            }
            data.push(v);
        }
        let tensor =
            Tensor::new(shape, data).map_err(|_| ProtocolError::Truncated("tensor shape"))?;
        entries.push((name, tensor));
    }
    if cur.pos != bytes.len() {
        return Err(ProtocolError::Truncated("trailing bytes"));
    }
    ParameterSet::from_entries(entries).map_err(|_| ProtocolError::Truncated("duplicate entry"))
}

/// Encode a full frame including magic.
pub fn encode_message(msg: &RoundMessage) -> Result<Vec<u8>, ProtocolError> {
    msg.validate()?;
    let payload = match &msg.payload {
        Some(params) => encode_parameter_set(params)?,
        None => Vec::new(),
    };
    let id = msg.client_id.as_bytes();
    let mut out = Vec::with_capacity(27 + id.len() + payload.len());
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(msg.tag.to_byte());
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&msg.n_samples.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode one complete frame.
pub fn decode_message(bytes: &[u8]) -> Result<RoundMessage, ProtocolError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != WIRE_MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let tag = MessageTag::from_byte(cur.take(1, "tag")?[0])?;
    let round = cur.u32("round")?;
    let id_len = cur.u16("id length")? as usize;
    let client_id = String::from_utf8(cur.take(id_len, "client id")?.to_vec())?;
    let n_samples = cur.u64("n_samples")?;
    let payload_len = cur.u64("payload length")? as usize;
    let payload_bytes = cur.take(payload_len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(ProtocolError::Truncated("trailing bytes"));
    }
    let payload = if tag.carries_payload() {
        if payload_len == 0 {
            return Err(ProtocolError::MissingPayload { tag });
        }
        Some(decode_parameter_set(payload_bytes)?)
    } else {
        if payload_len != 0 {
            return Err(ProtocolError::UnexpectedPayload { tag });
        }
        None
    };
    Ok(RoundMessage {
        tag,
        round,
        client_id,
        n_samples,
        payload,
    })
}

/// Write one frame to a byte stream.
pub fn write_frame<W: Write>(writer: &mut W, msg: &RoundMessage) -> Result<(), ProtocolError> {
    let bytes = encode_message(msg)?;
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

/// Read one frame from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<RoundMessage, ProtocolError> {
    let mut head = [0u8; 9]; // magic + tag + round
    reader.read_exact(&mut head)?;
    let magic: [u8; 4] = head[0..4].try_into().unwrap();
    if magic != WIRE_MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let mut id_len_buf = [0u8; 2];
    reader.read_exact(&mut id_len_buf)?;
    let id_len = u16::from_le_bytes(id_len_buf) as usize;
    let mut rest = vec![0u8; id_len + 16];
    reader.read_exact(&mut rest)?;
    let payload_len =
        u64::from_le_bytes(rest[id_len + 8..id_len + 16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; payload_len];
    reader.read_exact(&mut payload)?;

    let mut frame = Vec::with_capacity(11 + rest.len() + payload.len());
    frame.extend_from_slice(&head);
    frame.extend_from_slice(&id_len_buf);
    frame.extend_from_slice(&rest);
    frame.extend_from_slice(&payload);
    decode_message(&frame)
}
