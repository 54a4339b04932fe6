//! Bit-level CAN signal codec and trace I/O.
//!
//! A CAN payload is a fixed 8-byte block. Each signal occupies a contiguous
//! run of bits described by a start bit, a length, a byte order and a
//! signedness. Little-endian (Intel) signals count bits LSB-first from the
//! start bit upward; big-endian (Motorola) signals treat the start bit as the
//! MSB and walk the classic sawtooth (down within a byte, then on to bit 7 of
//! the next byte).
//!
//! Traces are CSV files with the header
//! `Label,Time,ID,Signal1,...,SignalN` where `Label` is empty or 0/1, `Time`
//! is seconds, `ID` is `id<N>`, and unused trailing signal columns are empty.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum CAN identifier (29-bit extended addressing).
pub const MAX_MESSAGE_ID: u32 = (1 << 29) - 1;

/// Payload size in bytes; this toolkit works on classic 8-byte frames.
pub const PAYLOAD_BYTES: usize = 8;
const PAYLOAD_BITS: u8 = 64;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("malformed signal definition `{signal}`: {reason}")]
    MalformedDefinition { signal: String, reason: String },
    #[error("signals `{a}` and `{b}` overlap in message {id}")]
    OverlappingSignals { id: u32, a: String, b: String },
    #[error("duplicate signal name `{name}` in message {id}")]
    DuplicateSignalName { id: u32, name: String },
    #[error("message id {id} does not fit in 29 bits")]
    IdOutOfRange { id: u32 },
    #[error("value {value} out of range for signal `{signal}` ({bits}-bit {signedness})")]
    ValueOutOfRange {
        signal: String,
        value: i64,
        bits: u8,
        signedness: &'static str,
    },
    #[error("expected {expected} raw values for message {id}, got {got}")]
    ValueCountMismatch { id: u32, expected: usize, got: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown message id {id}")]
    UnknownId { line: usize, id: u32 },
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bit numbering convention of a signal within the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByteOrder {
    LittleEndian,
    BigEndian,
}

/// Interpretation of the raw bit field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Signed,
    Unsigned,
}

/// Placement and interpretation of one signal inside an 8-byte payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDef {
    pub name: String,
    pub start_bit: u8,
    pub length_bits: u8,
    pub byte_order: ByteOrder,
    pub value_type: ValueType,
}

impl SignalDef {
    /// The payload bit positions this signal occupies, ordered from the
    /// least significant bit of the raw value to the most significant.
    ///
    /// Global bit b lives in byte b/8 at in-byte position b%8 (LSB first).
    /// Errors if the walk leaves the 64-bit payload.
    pub fn bit_positions(&self) -> Result<Vec<u8>, CodecError> {
        if self.length_bits < 1 || self.length_bits > PAYLOAD_BITS {
            return Err(CodecError::MalformedDefinition {
                signal: self.name.clone(),
                reason: format!("length_bits {} outside 1..=64", self.length_bits),
            });
        }
        if self.start_bit >= PAYLOAD_BITS {
            return Err(CodecError::MalformedDefinition {
                signal: self.name.clone(),
                reason: format!("start_bit {} outside 0..=63", self.start_bit),
            });
        }
        let mut bits = Vec::with_capacity(self.length_bits as usize);
        match self.byte_order {
            ByteOrder::LittleEndian => {
                // start_bit is the LSB; bits run upward.
                let end = self.start_bit as u16 + self.length_bits as u16;
                if end > PAYLOAD_BITS as u16 {
                    return Err(CodecError::MalformedDefinition {
                        signal: self.name.clone(),
                        reason: format!(
                            "start_bit {} + length_bits {} exceeds 64",
                            self.start_bit, self.length_bits
                        ),
                    });
                }
                bits.extend(self.start_bit..end as u8);
            }
            ByteOrder::BigEndian => {
                // start_bit is the MSB; sawtooth walk: down within the byte,
                // then bit 7 of the following byte.
                let mut byte = self.start_bit / 8;
                let mut bit_in_byte = self.start_bit % 8;
                let mut msb_first = Vec::with_capacity(self.length_bits as usize);
                for _ in 0..self.length_bits {
                    if byte as usize >= PAYLOAD_BYTES {
                        return Err(CodecError::MalformedDefinition {
                            signal: self.name.clone(),
                            reason: "big-endian layout runs past the payload".into(),
                        });
                    }
                    msb_first.push(byte * 8 + bit_in_byte);
                    if bit_in_byte == 0 {
                        byte += 1;
                        bit_in_byte = 7;
                    } else {
                        bit_in_byte -= 1;
                    }
                }
                msb_first.reverse();
                bits = msb_first;
            }
        }
        Ok(bits)
    }

    /// Inclusive raw-value range representable by this signal.
    pub fn value_range(&self) -> (i64, i64) {
        let n = self.length_bits as u32;
        match self.value_type {
            ValueType::Unsigned => {
                if n >= 64 {
                    // full u64 range does not fit an i64 raw value; the codec
                    // caps unsigned raw values at i64::MAX for 64-bit fields
                    (0, i64::MAX)
                } else {
                    (0, ((1u64 << n) - 1) as i64)
                }
            }
            ValueType::Signed => {
                if n >= 64 {
                    (i64::MIN, i64::MAX)
                } else {
                    (-(1i64 << (n - 1)), (1i64 << (n - 1)) - 1)
                }
            }
        }
    }
}

/// A message layout: identifier plus its ordered signal definitions.
///
/// Construction validates bit ranges, overlap and name uniqueness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageDef {
    pub id: u32,
    pub signals: Vec<SignalDef>,
}

impl MessageDef {
    pub fn new(id: u32, signals: Vec<SignalDef>) -> Result<Self, CodecError> {
        if id > MAX_MESSAGE_ID {
            return Err(CodecError::IdOutOfRange { id });
        }
        let mut occupancy: u64 = 0;
        let mut owner: BTreeMap<u8, usize> = BTreeMap::new();
        for (i, sig) in signals.iter().enumerate() {
            if signals[..i].iter().any(|s| s.name == sig.name) {
                return Err(CodecError::DuplicateSignalName {
                    id,
                    name: sig.name.clone(),
                });
            }
            for bit in sig.bit_positions()? {
                let mask = 1u64 << bit;
                if occupancy & mask != 0 {
                    let other = owner[&bit];
                    return Err(CodecError::OverlappingSignals {
                        id,
                        a: signals[other].name.clone(),
                        b: sig.name.clone(),
                    });
                }
                occupancy |= mask;
                owner.insert(bit, i);
            }
        }
        Ok(MessageDef { id, signals })
    }

    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }
}

/// A raw CAN frame: identifier plus the fixed 8-byte payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanFrame {
    pub id: u32,
    pub payload: [u8; PAYLOAD_BYTES],
}

/// One timestamped sample of a message's decoded signal values.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub timestamp: f64,
    pub message_id: u32,
    pub values: Vec<f64>,
    /// 0 = normal, 1 = malicious; `None` when the trace is unlabeled.
    pub label: Option<u8>,
}

/// Per-message schema entry: nominal period plus signal layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMessage {
    pub period_ms: f64,
    pub signals: Vec<SignalDef>,
}

/// Maps message ids to their schema entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub messages: BTreeMap<u32, SchemaMessage>,
}

impl Schema {
    /// Validated message layout for `id`.
    pub fn message_def(&self, id: u32) -> Result<MessageDef, CodecError> {
        let entry = self
            .messages
            .get(&id)
            .ok_or_else(|| CodecError::Schema(format!("no message id {id} in schema")))?;
        MessageDef::new(id, entry.signals.clone())
    }

    pub fn signal_count(&self, id: u32) -> Option<usize> {
        self.messages.get(&id).map(|m| m.signals.len())
    }

    /// Largest signal count over all messages; the trace CSV always carries
    /// at least four signal columns for SynCAN compatibility.
    pub fn max_signal_count(&self) -> usize {
        self.messages
            .values()
            .map(|m| m.signals.len())
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.messages.is_empty() {
            return Err(CodecError::Schema("schema has no messages".into()));
        }
        for (&id, entry) in &self.messages {
            if !(entry.period_ms.is_finite() && entry.period_ms > 0.0) {
                return Err(CodecError::Schema(format!(
                    "message {id} has non-positive period"
                )));
            }
            if entry.signals.is_empty() {
                return Err(CodecError::Schema(format!("message {id} has no signals")));
            }
            self.message_def(id)?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Schema, CodecError> {
        let file = std::fs::File::open(path)?;
        let schema: Schema = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CodecError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CodecError> {
        let json = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// A time-ordered list of records together with the schema they decode under.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<SignalRecord>,
    pub schema: Schema,
}

impl Trace {
    pub fn new(records: Vec<SignalRecord>, schema: Schema) -> Self {
        Trace { records, schema }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one message id, in trace order.
    pub fn records_for(&self, id: u32) -> impl Iterator<Item = &SignalRecord> {
        self.records.iter().filter(move |r| r.message_id == id)
    }
}

/// Decode each signal of `def` from the frame payload as a raw integer.
///
/// Signed signals are two's-complement within their own bit length.
pub fn extract_signals(frame: &CanFrame, def: &MessageDef) -> Result<Vec<i64>, CodecError> {
    let mut out = Vec::with_capacity(def.signals.len());
    for sig in &def.signals {
        let bits = sig.bit_positions()?;
        let mut raw: u64 = 0;
        for (value_bit, &payload_bit) in bits.iter().enumerate() {
            let byte = (payload_bit / 8) as usize;
            let bit = payload_bit % 8;
            if frame.payload[byte] >> bit & 1 == 1 {
                raw |= 1u64 << value_bit;
            }
        }
        let value = match sig.value_type {
            ValueType::Unsigned => raw as i64,
            ValueType::Signed => {
                let n = sig.length_bits as u32;
                if n == 64 {
                    raw as i64
                } else if raw >> (n - 1) & 1 == 1 {
                    (raw as i64) - (1i64 << n)
                } else {
                    raw as i64
                }
            }
        };
        out.push(value);
    }
    Ok(out)
}

/// Encode raw integer values into a fresh payload; bits outside the defined
/// signals stay zero. Inverse of [`extract_signals`] for in-range values.
pub fn pack_signals(raw_values: &[i64], def: &MessageDef) -> Result<[u8; PAYLOAD_BYTES], CodecError> {
    if raw_values.len() != def.signals.len() {
        return Err(CodecError::ValueCountMismatch {
            id: def.id,
            expected: def.signals.len(),
            got: raw_values.len(),
        });
    }
    let mut payload = [0u8; PAYLOAD_BYTES];
    for (sig, &value) in def.signals.iter().zip(raw_values) {
        let (lo, hi) = sig.value_range();
        if value < lo || value > hi {
            return Err(CodecError::ValueOutOfRange {
                signal: sig.name.clone(),
                value,
                bits: sig.length_bits,
                signedness: match sig.value_type {
                    ValueType::Signed => "signed",
                    ValueType::Unsigned => "unsigned",
                },
            });
        }
        let raw = value as u64; // two's complement keeps the low bits
        for (value_bit, &payload_bit) in sig.bit_positions()?.iter().enumerate() {
            if raw >> value_bit & 1 == 1 {
                let byte = (payload_bit / 8) as usize;
                payload[byte] |= 1u8 << (payload_bit % 8);
            }
        }
    }
    Ok(payload)
}

fn format_label(label: Option<u8>) -> String {
    match label {
        None => String::new(),
        Some(v) => v.to_string(),
    }
}

/// Write a trace in the SynCAN-style CSV layout. Floats use the shortest
/// representation that parses back to the same value, so a write/parse
/// round-trip is exact.
pub fn write_trace<W: Write>(trace: &Trace, out: &mut W) -> Result<(), CodecError> {
    let cols = trace.schema.max_signal_count().max(4);
    let mut header = String::from("Label,Time,ID");
    for i in 1..=cols {
        header.push_str(&format!(",Signal{i}"));
    }
    writeln!(out, "{header}")?;
    for rec in &trace.records {
        let mut row = format!(
            "{},{},id{}",
            format_label(rec.label),
            rec.timestamp,
            rec.message_id
        );
        for i in 0..cols {
            row.push(',');
            if let Some(v) = rec.values.get(i) {
                row.push_str(&v.to_string());
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Convenience wrapper writing straight to a file.
pub fn write_trace_file(trace: &Trace, path: &std::path::Path) -> Result<(), CodecError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(trace, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Parse a trace CSV against `schema`.
///
/// Rows must be time-ordered (non-decreasing); every id must exist in the
/// schema; each row must populate exactly its message's signal columns and
/// leave the rest empty. Errors carry the 1-based line number.
pub fn parse_trace<R: BufRead>(input: R, schema: &Schema) -> Result<Trace, CodecError> {
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(CodecError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    let header_fields: Vec<&str> = header.split(',').collect();
    if header_fields.len() < 4
        || header_fields[0] != "Label"
        || header_fields[1] != "Time"
        || header_fields[2] != "ID"
    {
        return Err(CodecError::Parse {
            line: 1,
            reason: format!("unexpected header `{header}`"),
        });
    }
    let signal_cols = header_fields.len() - 3;

    let mut records = Vec::new();
    let mut last_ts = f64::NEG_INFINITY;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != signal_cols + 3 {
            return Err(CodecError::Parse {
                line: line_no,
                reason: format!(
                    "expected {} fields, got {}",
                    signal_cols + 3,
                    fields.len()
                ),
            });
        }
        let label = match fields[0] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(CodecError::Parse {
                    line: line_no,
                    reason: format!("label must be empty, 0 or 1; got `{other}`"),
                })
            }
        };
        let timestamp: f64 = fields[1].parse().map_err(|_| CodecError::Parse {
            line: line_no,
            reason: format!("bad timestamp `{}`", fields[1]),
        })?;
        if timestamp < last_ts {
            return Err(CodecError::Parse {
                line: line_no,
                reason: format!("timestamp {timestamp} decreases (previous {last_ts})"),
            });
        }
        last_ts = timestamp;
        let id: u32 = fields[2]
            .strip_prefix("id")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CodecError::Parse {
                line: line_no,
                reason: format!("bad message id `{}`", fields[2]),
            })?;
        let expected = schema
            .signal_count(id)
            .ok_or(CodecError::UnknownId { line: line_no, id })?;
        let mut values = Vec::with_capacity(expected);
        for (i, cell) in fields[3..].iter().enumerate() {
            if i < expected {
                let v: f64 = cell.parse().map_err(|_| CodecError::Parse {
                    line: line_no,
                    reason: format!("bad value `{cell}` in Signal{}", i + 1),
                })?;
                values.push(v);
            } else if !cell.is_empty() {
                return Err(CodecError::Parse {
                    line: line_no,
                    reason: format!(
                        "message id{id} has {expected} signals but Signal{} is populated",
                        i + 1
                    ),
                });
            }
        }
        if values.len() != expected {
            return Err(CodecError::Parse {
                line: line_no,
                reason: format!("expected {expected} signal values, got {}", values.len()),
            });
        }
        records.push(SignalRecord {
            timestamp,
            message_id: id,
            values,
            label,
        });
    }
    Ok(Trace::new(records, schema.clone()))
}

/// Convenience wrapper reading a trace file.
pub fn parse_trace_file(path: &std::path::Path, schema: &Schema) -> Result<Trace, CodecError> {
    let file = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(file), schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    /// Independent oracle: render the payload as a 64-entry bit vector and
    /// slice it by walking the convention directly, without the codec's
    /// shift/mask path.
    pub(crate) fn oracle_extract(payload: &[u8; 8], sig: &SignalDef) -> i64 {
        let mut bits = [0u8; 64];
        for (i, bit) in bits.iter_mut().enumerate() {
            *bit = payload[i / 8] >> (i % 8) & 1;
        }
        // Collect the signal's bits MSB-first as a binary string.
        let mut msb_first = Vec::new();
        match sig.byte_order {
            ByteOrder::LittleEndian => {
                for b in (sig.start_bit..sig.start_bit + sig.length_bits).rev() {
                    msb_first.push(bits[b as usize]);
                }
            }
            ByteOrder::BigEndian => {
                let mut byte = sig.start_bit / 8;
                let mut bit = sig.start_bit % 8;
                for _ in 0..sig.length_bits {
                    msb_first.push(bits[(byte * 8 + bit) as usize]);
                    if bit == 0 {
                        byte += 1;
                        bit = 7;
                    } else {
                        bit -= 1;
                    }
                }
            }
        }
        let binary: String = msb_first.iter().map(|b| char::from(b'0' + b)).collect();
        let unsigned = u64::from_str_radix(&binary, 2).unwrap();
        match sig.value_type {
            ValueType::Unsigned => unsigned as i64,
            ValueType::Signed => {
                if sig.length_bits < 64 && msb_first[0] == 1 {
                    unsigned as i64 - (1i64 << sig.length_bits)
                } else {
                    unsigned as i64
                }
            }
        }
    }

    fn sig(name: &str, start: u8, len: u8, order: ByteOrder, vt: ValueType) -> SignalDef {
        SignalDef {
            name: name.into(),
            start_bit: start,
            length_bits: len,
            byte_order: order,
            value_type: vt,
        }
    }

    fn status_message() -> MessageDef {
        // Layout shaped like a real battery/motor status message.
        MessageDef::new(
            7,
            vec![
                sig("battery_current", 0, 16, ByteOrder::LittleEndian, ValueType::Signed),
                sig("battery_voltage", 16, 16, ByteOrder::LittleEndian, ValueType::Unsigned),
                sig("motor_current", 32, 16, ByteOrder::LittleEndian, ValueType::Signed),
                sig("motor_speed", 48, 8, ByteOrder::LittleEndian, ValueType::Signed),
                sig("motor_direction", 56, 8, ByteOrder::LittleEndian, ValueType::Unsigned),
            ],
        )
        .unwrap()
    }

    #[test]
    fn all_zero_payload_extracts_zeros() {
        let def = status_message();
        let frame = CanFrame { id: 7, payload: [0; 8] };
        assert_eq!(extract_signals(&frame, &def).unwrap(), vec![0; 5]);
    }

    #[test]
    fn unsigned_16_le_at_zero() {
        let def = MessageDef::new(
            1,
            vec![sig("s", 0, 16, ByteOrder::LittleEndian, ValueType::Unsigned)],
        )
        .unwrap();
        let frame = CanFrame { id: 1, payload: [0x01, 0, 0, 0, 0, 0, 0, 0] };
        assert_eq!(extract_signals(&frame, &def).unwrap(), vec![1]);
        assert_eq!(oracle_extract(&frame.payload, &def.signals[0]), 1);
    }

    #[test]
    fn signed_16_le_all_ones_is_minus_one() {
        let def = MessageDef::new(
            1,
            vec![sig("s", 0, 16, ByteOrder::LittleEndian, ValueType::Signed)],
        )
        .unwrap();
        let frame = CanFrame { id: 1, payload: [0xFF, 0xFF, 0, 0, 0, 0, 0, 0] };
        assert_eq!(extract_signals(&frame, &def).unwrap(), vec![-1]);
        assert_eq!(oracle_extract(&frame.payload, &def.signals[0]), -1);
    }

    #[test]
    fn pack_one_into_u16_at_bit_zero() {
        let def = MessageDef::new(
            1,
            vec![sig("s", 0, 16, ByteOrder::LittleEndian, ValueType::Unsigned)],
        )
        .unwrap();
        let payload = pack_signals(&[1], &def).unwrap();
        assert_eq!(payload, [0x01, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn pack_all_zeros_gives_zero_payload() {
        let def = status_message();
        assert_eq!(pack_signals(&[0; 5], &def).unwrap(), [0u8; 8]);
    }

    #[test]
    fn pack_out_of_range_names_the_signal() {
        let def = MessageDef::new(
            1,
            vec![sig("speed", 0, 8, ByteOrder::LittleEndian, ValueType::Unsigned)],
        )
        .unwrap();
        let err = pack_signals(&[256], &def).unwrap_err();
        match err {
            CodecError::ValueOutOfRange { signal, .. } => assert_eq!(signal, "speed"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn layout_past_payload_is_malformed() {
        let bad = sig("s", 60, 8, ByteOrder::LittleEndian, ValueType::Unsigned);
        assert!(bad.bit_positions().is_err());
        assert!(MessageDef::new(1, vec![bad]).is_err());
    }

    #[test]
    fn overlap_detected() {
        let res = MessageDef::new(
            1,
            vec![
                sig("a", 0, 10, ByteOrder::LittleEndian, ValueType::Unsigned),
                sig("b", 8, 8, ByteOrder::LittleEndian, ValueType::Unsigned),
            ],
        );
        assert!(matches!(res, Err(CodecError::OverlappingSignals { .. })));
    }

    #[test]
    fn big_endian_sawtooth_matches_oracle() {
        // Motorola 12-bit signal starting at bit 7 (MSB of byte 0).
        let def = MessageDef::new(
            1,
            vec![sig("s", 7, 12, ByteOrder::BigEndian, ValueType::Unsigned)],
        )
        .unwrap();
        let frame = CanFrame { id: 1, payload: [0xAB, 0xC0, 0, 0, 0, 0, 0, 0] };
        let got = extract_signals(&frame, &def).unwrap()[0];
        assert_eq!(got, oracle_extract(&frame.payload, &def.signals[0]));
        // 0xAB = 1010_1011 then top nibble of 0xC0 → 0xABC
        assert_eq!(got, 0xABC);
    }

    #[test]
    fn big_endian_round_trip() {
        let def = MessageDef::new(
            1,
            vec![
                sig("a", 7, 12, ByteOrder::BigEndian, ValueType::Signed),
                sig("b", 27, 9, ByteOrder::BigEndian, ValueType::Unsigned),
            ],
        )
        .unwrap();
        for v in [-2048i64, -1, 0, 1, 2047] {
            let payload = pack_signals(&[v, 300], &def).unwrap();
            let frame = CanFrame { id: 1, payload };
            assert_eq!(extract_signals(&frame, &def).unwrap(), vec![v, 300]);
        }
    }

    #[test]
    fn mutating_one_signal_leaves_others_alone() {
        let def = status_message();
        let base = pack_signals(&[100, 200, -300, 40, 5], &def).unwrap();
        let changed = pack_signals(&[100, 200, -300, 40, 250], &def).unwrap();
        let frame_a = CanFrame { id: 7, payload: base };
        let frame_b = CanFrame { id: 7, payload: changed };
        let va = extract_signals(&frame_a, &def).unwrap();
        let vb = extract_signals(&frame_b, &def).unwrap();
        assert_eq!(va[..4], vb[..4]);
        assert_eq!(vb[4], 250);
    }

    fn tiny_schema() -> Schema {
        let mut messages = BTreeMap::new();
        messages.insert(
            1,
            SchemaMessage {
                period_ms: 10.0,
                signals: vec![
                    sig("s1", 0, 16, ByteOrder::LittleEndian, ValueType::Unsigned),
                    sig("s2", 16, 16, ByteOrder::LittleEndian, ValueType::Unsigned),
                ],
            },
        );
        Schema { messages }
    }

    #[test]
    fn parse_header_only_gives_empty_trace() {
        let schema = tiny_schema();
        let trace = parse_trace(
            Cursor::new("Label,Time,ID,Signal1,Signal2,Signal3,Signal4\n"),
            &schema,
        )
        .unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn parse_three_rows() {
        let schema = tiny_schema();
        let body = "Label,Time,ID,Signal1,Signal2,Signal3,Signal4\n\
                    0,0.0,id1,0.5,0.25,,\n\
                    ,0.01,id1,0.6,0.2,,\n\
                    1,0.02,id1,0.7,0.1,,\n";
        let trace = parse_trace(Cursor::new(body), &schema).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.records[0].label, Some(0));
        assert_eq!(trace.records[1].label, None);
        assert_eq!(trace.records[2].label, Some(1));
        assert_eq!(trace.records[2].values, vec![0.7, 0.1]);
    }

    #[test]
    fn parse_unknown_id_is_schema_error() {
        let schema = tiny_schema();
        let body = "Label,Time,ID,Signal1,Signal2,Signal3,Signal4\n0,0.0,id9,0.5,0.25,,\n";
        let err = parse_trace(Cursor::new(body), &schema).unwrap_err();
        assert!(matches!(err, CodecError::UnknownId { line: 2, id: 9 }));
    }

    #[test]
    fn parse_malformed_row_reports_line() {
        let schema = tiny_schema();
        let body = "Label,Time,ID,Signal1,Signal2,Signal3,Signal4\n\
                    0,0.0,id1,0.5,0.25,,\n\
                    0,abc,id1,0.5,0.25,,\n";
        let err = parse_trace(Cursor::new(body), &schema).unwrap_err();
        match err {
            CodecError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_decreasing_timestamp_rejected() {
        let schema = tiny_schema();
        let body = "Label,Time,ID,Signal1,Signal2,Signal3,Signal4\n\
                    0,1.0,id1,0.5,0.25,,\n\
                    0,0.5,id1,0.5,0.25,,\n";
        assert!(parse_trace(Cursor::new(body), &schema).is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let schema = tiny_schema();
        let records = vec![
            SignalRecord {
                timestamp: 0.0,
                message_id: 1,
                values: vec![0.123456789123, -4.5],
                label: Some(0),
            },
            SignalRecord {
                timestamp: 0.01,
                message_id: 1,
                values: vec![1.0 / 3.0, 7.25],
                label: None,
            },
        ];
        let trace = Trace::new(records, schema.clone());
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let parsed = parse_trace(Cursor::new(buf), &schema).unwrap();
        assert_eq!(parsed.records, trace.records);
    }

    #[test]
    fn write_empty_trace_emits_header_only() {
        let trace = Trace::new(Vec::new(), tiny_schema());
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("Label,Time,ID,Signal1"));
    }
}
