//! Telemetry wire format and a lossy channel.
//!
//! Packet layout (multi-byte integers little-endian except the CRC):
//!
//! ```text
//! off  len  field
//!   0    2  magic 0x45 0x44 ("ED")
//!   2    1  version (0x01)
//!   3    1  flags (bit0 = batched)
//!   4    2  seq
//!   6    4  t0_ms
//!  10    1  count
//!  11  3·n  samples: conductance_q u16 (0.01 µS/unit), setting_index u8
//! 11+3n  2  CRC-16/CCITT-FALSE over bytes [0, 11+3n), big-endian
//! ```
//!
//! `docs/telemetry.md` carries the normative description and a golden vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AcquisitionRecord, TxMode};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 2] = [0x45, 0x44];
pub const VERSION: u8 = 0x01;
pub const FLAG_BATCHED: u8 = 0x01;
pub const HEADER_LEN: usize = 11;
pub const CRC_LEN: usize = 2;
pub const SAMPLE_LEN: usize = 3;
pub const BATCH_LEN: usize = 120;
/// Largest encodable conductance in fixed-point units (40.00 µS).
pub const MAX_CONDUCTANCE_Q: u16 = 4000;
/// Fixed-point units per µS.
pub const Q_PER_US: f64 = 100.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{mode:?} packets carry {expected}, got {got} records")]
    Count {
        mode: TxMode,
        expected: &'static str,
        got: usize,
    },
    #[error("conductance {0} µS outside the encodable 0..=40.00 µS range")]
    ConductanceOutOfRange(String),
    #[error("setting index {0} does not fit in one byte")]
    SettingIndex(usize),
    #[error("t0 {0} ms does not fit in 32 bits")]
    Timestamp(u64),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("bad length")]
    BadLength,
    #[error("bad crc")]
    BadCrc,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("count {0} not allowed for this packet kind")]
    BadCount(u8),
    #[error("sample {0} exceeds the conductance bound")]
    BadSample(usize),
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    static TABLE: std::sync::OnceLock<[u16; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u16; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = (i as u16) << 8;
            for _ in 0..8 {
                c = if c & 0x8000 != 0 {
                    (c << 1) ^ 0x1021
                } else {
                    c << 1
                };
            }
            *slot = c;
        }
        t
    });
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ table[usize::from((crc >> 8) as u8 ^ b)]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketSample {
    pub conductance_q: u16,
    pub setting_index: u8,
}

impl PacketSample {
    pub fn conductance_us(&self) -> f64 {
        f64::from(self.conductance_q) / Q_PER_US
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryPacket {
    pub flags: u8,
    pub seq: u16,
    pub t0_ms: u32,
    pub samples: Vec<PacketSample>,
}

impl TelemetryPacket {
    pub fn is_batched(&self) -> bool {
        self.flags & FLAG_BATCHED != 0
    }

    pub fn wire_len(&self) -> usize {
        wire_len(self.samples.len())
    }

    /// Build from records. Per-sample packets take exactly one record;
    /// batched packets take up to 120 (a run's final batch may be short).
    pub fn from_records<T: Scalar>(
        records: &[AcquisitionRecord<T>],
        seq: u16,
        mode: TxMode,
    ) -> Result<Self, EncodeError> {
        let ok = match mode {
            TxMode::PerSample => records.len() == 1,
            TxMode::Batched15s => (1..=BATCH_LEN).contains(&records.len()),
        };
        if !ok {
            return Err(EncodeError::Count {
                mode,
                expected: match mode {
                    TxMode::PerSample => "exactly 1",
                    TxMode::Batched15s => "1 to 120",
                },
                got: records.len(),
            });
        }
        let t0 = records[0].t_ms;
        let t0_ms = u32::try_from(t0).map_err(|_| EncodeError::Timestamp(t0))?;
        let samples = records
            .iter()
            .map(|r| {
                Ok(PacketSample {
                    conductance_q: to_fixed(r.conductance_us.to_f64_lossy())?,
                    setting_index: u8::try_from(r.setting_index)
                        .map_err(|_| EncodeError::SettingIndex(r.setting_index))?,
                })
            })
            .collect::<Result<_, EncodeError>>()?;
        Ok(Self {
            flags: if mode == TxMode::Batched15s {
                FLAG_BATCHED
            } else {
                0
            },
            seq,
            t0_ms,
            samples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.flags);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.t0_ms.to_le_bytes());
        out.push(self.samples.len() as u8);
        for s in &self.samples {
            out.extend_from_slice(&s.conductance_q.to_le_bytes());
            out.push(s.setting_index);
        }
        let crc = crc16_ccitt_false(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }
}

fn wire_len(count: usize) -> usize {
    HEADER_LEN + SAMPLE_LEN * count + CRC_LEN
}

/// µS to 0.01 µS units; rejects anything above 40.00 µS before any cast.
fn to_fixed(g_us: f64) -> Result<u16, EncodeError> {
    let q = (g_us * Q_PER_US).round();
    if !(q >= 0.0 && q <= f64::from(MAX_CONDUCTANCE_Q)) {
        return Err(EncodeError::ConductanceOutOfRange(g_us.to_string()));
    }
    Ok(q as u16)
}

/// Encode `records` as one packet.
pub fn encode<T: Scalar>(
    records: &[AcquisitionRecord<T>],
    seq: u16,
    mode: TxMode,
) -> Result<Vec<u8>, EncodeError> {
    Ok(TelemetryPacket::from_records(records, seq, mode)?.to_bytes())
}

/// Split a run into packets per `mode`, numbering from `first_seq` with
/// 16-bit wraparound.
pub fn packetize<T: Scalar>(
    records: &[AcquisitionRecord<T>],
    first_seq: u16,
    mode: TxMode,
) -> Result<Vec<TelemetryPacket>, EncodeError> {
    let chunk = match mode {
        TxMode::PerSample => 1,
        TxMode::Batched15s => BATCH_LEN,
    };
    records
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| TelemetryPacket::from_records(c, first_seq.wrapping_add(i as u16), mode))
        .collect()
}

/// Validate and parse one packet. Length is checked first, then the CRC, so
/// any corruption that keeps the length valid reports `BadCrc`.
pub fn decode(bytes: &[u8]) -> Result<TelemetryPacket, DecodeError> {
    let n = bytes.len();
    if n < wire_len(1)
        || n > wire_len(BATCH_LEN)
        || !(n - HEADER_LEN - CRC_LEN).is_multiple_of(SAMPLE_LEN)
    {
        return Err(DecodeError::BadLength);
    }
    let (body, tail) = bytes.split_at(n - CRC_LEN);
    if crc16_ccitt_false(body) != u16::from_be_bytes([tail[0], tail[1]]) {
        return Err(DecodeError::BadCrc);
    }
    if body[0..2] != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    if body[2] != VERSION {
        return Err(DecodeError::BadVersion(body[2]));
    }
    let flags = body[3];
    if flags & !FLAG_BATCHED != 0 {
        return Err(DecodeError::BadFlags(flags));
    }
    let count = body[10];
    if wire_len(count as usize) != n {
        return Err(DecodeError::BadLength);
    }
    let batched = flags & FLAG_BATCHED != 0;
    if count == 0 || (!batched && count != 1) || count as usize > BATCH_LEN {
        return Err(DecodeError::BadCount(count));
    }
    let samples = body[HEADER_LEN..]
        .chunks_exact(SAMPLE_LEN)
        .enumerate()
        .map(|(i, c)| {
            let q = u16::from_le_bytes([c[0], c[1]]);
            if q > MAX_CONDUCTANCE_Q {
                return Err(DecodeError::BadSample(i));
            }
            Ok(PacketSample {
                conductance_q: q,
                setting_index: c[2],
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TelemetryPacket {
        flags,
        seq: u16::from_le_bytes([body[4], body[5]]),
        t0_ms: u32::from_le_bytes([body[6], body[7], body[8], body[9]]),
        samples,
    })
}

/// Decode a concatenation of packets, framing each by its count byte.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<TelemetryPacket>, DecodeError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::BadLength);
        }
        let len = wire_len(bytes[10] as usize);
        if bytes.len() < len {
            return Err(DecodeError::BadLength);
        }
        let (head, rest) = bytes.split_at(len);
        out.push(decode(head)?);
        bytes = rest;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub drop_probability: f64,
    pub rng_seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            drop_probability: 0.0,
            rng_seed: 0x424C45,
        }
    }
}

/// Run of sequence numbers missing between two delivered packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqGap {
    /// Last sequence number received before the gap.
    pub after: u16,
    /// First sequence number received after the gap.
    pub resumed: u16,
    pub missing: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub gaps: Vec<SeqGap>,
}

/// Gaps visible from received sequence numbers alone. Handles wraparound;
/// losses before the first or after the last delivered packet are invisible.
pub fn detect_gaps(seqs: impl IntoIterator<Item = u16>) -> Vec<SeqGap> {
    let mut gaps = Vec::new();
    let mut prev: Option<u16> = None;
    for s in seqs {
        if let Some(p) = prev {
            let missing = s.wrapping_sub(p).wrapping_sub(1);
            if missing != 0 {
                gaps.push(SeqGap {
                    after: p,
                    resumed: s,
                    missing,
                });
            }
        }
        prev = Some(s);
    }
    gaps
}

/// Drop each packet independently with `drop_probability`, one uniform draw
/// per packet from a ChaCha8 stream seeded with `rng_seed`.
pub fn run_channel(
    packets: &[TelemetryPacket],
    channel: &ChannelModel,
) -> (Vec<TelemetryPacket>, ChannelStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(channel.rng_seed);
    let delivered: Vec<_> = packets
        .iter()
        .filter(|_| rng.random::<f64>() >= channel.drop_probability)
        .cloned()
        .collect();
    let stats = ChannelStats {
        sent: packets.len(),
        delivered: delivered.len(),
        dropped: packets.len() - delivered.len(),
        gaps: detect_gaps(delivered.iter().map(|p| p.seq)),
    };
    (delivered, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: f64, setting: usize, t_ms: u64) -> AcquisitionRecord<f64> {
        AcquisitionRecord {
            t_ms,
            adc_code: 2000,
            setting_index: setting,
            saturated: false,
            conductance_us: g,
        }
    }

    #[test]
    fn one_sample_round_trip() {
        let bytes = encode(&[rec(2.0, 3, 875)], 7, TxMode::PerSample).unwrap();
        assert_eq!(bytes.len(), 16);
        let p = decode(&bytes).unwrap();
        assert_eq!(p.seq, 7);
        assert_eq!(p.t0_ms, 875);
        assert_eq!(p.flags, 0);
        assert_eq!(
            p.samples,
            vec![PacketSample {
                conductance_q: 200,
                setting_index: 3
            }]
        );
        assert_eq!(p.to_bytes(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let bytes = encode(&[rec(2.0, 3, 875)], 7, TxMode::PerSample).unwrap();
        assert_eq!(decode(&bytes[..15]), Err(DecodeError::BadLength));
        let mut flipped = bytes.clone();
        flipped[12] ^= 0x10;
        assert_eq!(decode(&flipped), Err(DecodeError::BadCrc));
    }

    #[test]
    fn header_errors_behind_valid_crc() {
        let reseal = |mut b: Vec<u8>| {
            let n = b.len() - 2;
            let crc = crc16_ccitt_false(&b[..n]);
            b[n..].copy_from_slice(&crc.to_be_bytes());
            b
        };
        let good = encode(&[rec(2.0, 3, 875)], 7, TxMode::PerSample).unwrap();
        let mut b = good.clone();
        b[0] = 0x46;
        assert_eq!(decode(&reseal(b)), Err(DecodeError::BadMagic));
        let mut b = good.clone();
        b[2] = 2;
        assert_eq!(decode(&reseal(b)), Err(DecodeError::BadVersion(2)));
        let mut b = good.clone();
        b[3] = 0x80;
        assert_eq!(decode(&reseal(b)), Err(DecodeError::BadFlags(0x80)));
        let mut b = good.clone();
        b[10] = 2;
        assert_eq!(decode(&reseal(b)), Err(DecodeError::BadLength));
        let mut b = good.clone();
        b[11..13].copy_from_slice(&4001u16.to_le_bytes());
        assert_eq!(decode(&reseal(b)), Err(DecodeError::BadSample(0)));
    }

    #[test]
    fn encode_limits() {
        assert!(matches!(
            encode(&[rec(40.006, 0, 0)], 0, TxMode::PerSample),
            Err(EncodeError::ConductanceOutOfRange(_))
        ));
        assert!(matches!(
            encode(&[rec(700.0, 0, 0)], 0, TxMode::PerSample),
            Err(EncodeError::ConductanceOutOfRange(_))
        ));
        assert!(encode(&[rec(40.0, 0, 0)], 0, TxMode::PerSample).is_ok());
        assert!(matches!(
            encode(&[rec(1.0, 300, 0)], 0, TxMode::PerSample),
            Err(EncodeError::SettingIndex(300))
        ));
        let two = [rec(1.0, 0, 0), rec(1.0, 0, 125)];
        assert!(matches!(
            encode(&two, 0, TxMode::PerSample),
            Err(EncodeError::Count { .. })
        ));
        assert!(encode::<f64>(&[], 0, TxMode::Batched15s).is_err());
    }

    #[test]
    fn batched_packet_count() {
        for n in [1usize, 119, 120, 121, 480, 4800, 4801] {
            let recs: Vec<_> = (0..n).map(|i| rec(2.0, 1, i as u64 * 125)).collect();
            let pkts = packetize(&recs, 0, TxMode::Batched15s).unwrap();
            assert_eq!(pkts.len(), n.div_ceil(120));
            assert!(pkts.iter().all(|p| p.is_batched()));
        }
    }

    #[test]
    fn stream_decoding() {
        let recs: Vec<_> = (0..250).map(|i| rec(2.5, 2, i as u64 * 125)).collect();
        let pkts = packetize(&recs, 65534, TxMode::Batched15s).unwrap();
        let bytes: Vec<u8> = pkts.iter().flat_map(|p| p.to_bytes()).collect();
        assert_eq!(decode_stream(&bytes).unwrap(), pkts);
        assert_eq!(pkts[2].seq, 0);
        assert_eq!(
            decode_stream(&bytes[..bytes.len() - 1]),
            Err(DecodeError::BadLength)
        );
    }

    #[test]
    fn channel_extremes() {
        let recs: Vec<_> = (0..50).map(|i| rec(2.0, 1, i as u64 * 125)).collect();
        let pkts = packetize(&recs, 0, TxMode::PerSample).unwrap();
        let (d, s) = run_channel(
            &pkts,
            &ChannelModel {
                drop_probability: 0.0,
                rng_seed: 1,
            },
        );
        assert_eq!(d, pkts);
        assert!(s.gaps.is_empty());
        assert_eq!(s.dropped, 0);
        let (d, s) = run_channel(
            &pkts,
            &ChannelModel {
                drop_probability: 1.0,
                rng_seed: 1,
            },
        );
        assert!(d.is_empty());
        assert_eq!(s.dropped, 50);
    }

    #[test]
    fn gaps_across_wrap() {
        let g = detect_gaps([65533, 65534, 1, 2, 5]);
        assert_eq!(
            g,
            vec![
                SeqGap {
                    after: 65534,
                    resumed: 1,
                    missing: 2
                },
                SeqGap {
                    after: 2,
                    resumed: 5,
                    missing: 2
                },
            ]
        );
        assert!(detect_gaps([65535, 0, 1]).is_empty());
    }
}
