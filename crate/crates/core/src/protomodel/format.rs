//! Binary model container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OSVM"
//! 4       2     format version, u16 LE (currently 1)
//! 6       2     reserved, zero
//! 8       8     payload length, u64 LE
//! 16      32    SHA-256 of the payload
//! 48      ..    payload
//! ```
//!
//! All payload integers are little-endian; reals are IEEE-754 f64 LE.
//!
//! ```text
//! payload   := scoring threshold:f64 min_field_len:u32 node_count:u32 node*
//! scoring   := match:f64 mismatch:f64 gap:f64 wildcard:f64
//! node      := cluster_id:u32 proto_len:u32 symbol:u16{proto_len}
//!              weight:f64{proto_len} centroid field_count:u32 field*
//! symbol    := 0..=255 literal byte | 256 wildcard
//! centroid  := index:u64 req_len:u32 req:u8{req_len} resp_len:u32 resp:u8{resp_len}
//! field     := request_offset:u32 response_offset:u32 len:u32
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{MatchingNode, ModelError, OpaqueServiceModel, ProtoSymbol, Prototype, Weights};
use crate::emulator::SymmetricField;
use crate::seqalign::ScoringConfig;
use crate::trace::Transaction;

pub const MAGIC: &[u8; 4] = b"OSVM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 48;
const WILDCARD_CODE: u16 = 256;

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, ModelError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
}

fn encode_payload(model: &OpaqueServiceModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let s = &model.scoring;
    for v in [s.match_score, s.mismatch, s.gap, s.wildcard, model.threshold] {
        w.f64(v);
    }
    w.u32(model.min_field_len);
    w.u32(model.nodes.len() as u32);
    for node in &model.nodes {
        w.u32(node.cluster_id);
        w.u32(node.prototype.len() as u32);
        for sym in node.prototype.symbols() {
            w.u16(match sym {
                ProtoSymbol::Byte(b) => *b as u16,
                ProtoSymbol::Wildcard => WILDCARD_CODE,
            });
        }
        for &v in node.weights.values() {
            w.f64(v);
        }
        w.u64(node.centroid.index);
        w.bytes(&node.centroid.request);
        w.bytes(&node.centroid.response);
        w.u32(node.fields.len() as u32);
        for f in &node.fields {
            w.u32(f.request_offset as u32);
            w.u32(f.response_offset as u32);
            w.u32(f.len as u32);
        }
    }
    w.0
}

fn decode_payload(payload: &[u8]) -> Result<OpaqueServiceModel, ModelError> {
    let corrupt = |m: String| ModelError::CorruptModel(m);
    let mut r = Reader { buf: payload, pos: 0 };
    let scoring = ScoringConfig {
        match_score: r.f64()?,
        mismatch: r.f64()?,
        gap: r.f64()?,
        wildcard: r.f64()?,
    };
    let threshold = r.f64()?;
    let min_field_len = r.u32()?;
    let count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let cluster_id = r.u32()?;
        let len = r.u32()? as usize;
        let mut symbols = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            symbols.push(match r.u16()? {
                WILDCARD_CODE => ProtoSymbol::Wildcard,
                b if b < 256 => ProtoSymbol::Byte(b as u8),
                other => return Err(corrupt(format!("bad symbol code {other}"))),
            });
        }
        let mut values = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            values.push(r.f64()?);
        }
        let weights = Weights::new(values).map_err(|e| corrupt(e.to_string()))?;
        let centroid = Transaction {
            index: r.u64()?,
            request: r.bytes()?,
            response: r.bytes()?,
        };
        let field_count = r.u32()? as usize;
        let mut fields = Vec::with_capacity(field_count.min(1024));
        for _ in 0..field_count {
            let f = SymmetricField {
                request_offset: r.u32()? as usize,
                response_offset: r.u32()? as usize,
                len: r.u32()? as usize,
            };
            if !f.is_valid_for(&centroid.request, &centroid.response) {
                return Err(corrupt(format!("field {f:?} does not fit centroid {}", centroid.index)));
            }
            fields.push(f);
        }
        nodes.push(MatchingNode {
            cluster_id,
            prototype: Prototype::new(symbols),
            weights,
            centroid,
            fields,
        });
    }
    if r.pos != payload.len() {
        return Err(corrupt(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    if nodes.is_empty() {
        return Err(corrupt("model has no nodes".into()));
    }
    let mut ids: Vec<u32> = nodes.iter().map(|n| n.cluster_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(corrupt("duplicate cluster id".into()));
    }
    Ok(OpaqueServiceModel {
        nodes,
        scoring,
        threshold,
        min_field_len,
    })
}

pub fn encode_model(model: &OpaqueServiceModel) -> Vec<u8> {
    let payload = encode_payload(model);
    let digest = Sha256::digest(&payload);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&digest);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<OpaqueServiceModel, ModelError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(ModelError::CorruptModel("missing model header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(ModelError::CorruptModel(format!(
            "payload is {} bytes, header says {len}",
            payload.len()
        )));
    }
    if Sha256::digest(payload).as_slice() != &bytes[16..48] {
        return Err(ModelError::CorruptModel("checksum mismatch".into()));
    }
    decode_payload(payload)
}

pub fn save_model(model: &OpaqueServiceModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<OpaqueServiceModel, ModelError> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> OpaqueServiceModel {
        OpaqueServiceModel {
            nodes: vec![MatchingNode {
                cluster_id: 3,
                prototype: Prototype::parse("{id:??,op:A}"),
                weights: Weights::new((1..=12).map(|i| 1.0 / (1.0 + i as f64 / 7.0)).collect()).unwrap(),
                centroid: Transaction::new(24, "{id:24,op:A}", "{id:24,op:AddRsp}"),
                fields: vec![SymmetricField {
                    request_offset: 0,
                    response_offset: 0,
                    len: 11,
                }],
            }],
            scoring: ScoringConfig::default(),
            threshold: 0.8,
            min_field_len: 4,
        }
    }

    #[test]
    fn round_trip_preserves_weights_exactly() {
        let m = sample();
        assert_eq!(decode_model(&encode_model(&m)).unwrap(), m);
    }

    #[test]
    fn flipped_checksum_byte_is_corrupt() {
        let mut bytes = encode_model(&sample());
        bytes[20] ^= 0x01;
        assert!(matches!(decode_model(&bytes), Err(ModelError::CorruptModel(_))));
        let mut bytes = encode_model(&sample());
        let last = bytes.len() - 1;
        bytes[last] ^= 0x80;
        assert!(matches!(decode_model(&bytes), Err(ModelError::CorruptModel(_))));
    }

    #[test]
    fn unknown_version_refused() {
        let mut bytes = encode_model(&sample());
        bytes[4] = 9;
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_model(&sample());
        assert_eq!(&bytes[..4], b"OSVM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        assert_eq!(len as usize, bytes.len() - 48);
    }
}
