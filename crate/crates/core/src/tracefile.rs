//! Bulk trace container.
//!
//! ```text
//! offset  size  field
//! 0       6     magic "QRTRC1"
//! 6       2     version (u16 LE)
//! 8       4     sampling period, ns (u32 LE)
//! 12      8     record count (u64 LE)
//! 20      1     encoding: 0 = I/Q f32 pairs, 1 = bit-packed states
//! 21      ..    payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::Records;

pub const MAGIC: &[u8; 6] = b"QRTRC1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub sampling_period_ns: u32,
    pub records: Records,
}

impl TraceFile {
    pub fn new(sampling_period_us: f64, records: Records) -> Result<Self> {
        Ok(Self {
            sampling_period_ns: period_ns(sampling_period_us)?,
            records,
        })
    }

    pub fn sampling_period_us(&self) -> f64 {
        self.sampling_period_ns as f64 / 1e3
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Sampling period in whole nanoseconds, as stored in the header.
pub fn period_ns(sampling_period_us: f64) -> Result<u32> {
    let ns = (sampling_period_us * 1e3).round();
    if !(ns >= 1.0 && ns <= u32::MAX as f64) {
        return Err(Error::domain(format!("sampling period {sampling_period_us} µs not representable")));
    }
    Ok(ns as u32)
}

/// The period a trace file would report for `sampling_period_us`.
pub fn quantized_period_us(sampling_period_us: f64) -> Result<f64> {
    Ok(period_ns(sampling_period_us)? as f64 / 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Iq = 0,
    Binary = 1,
}

/// Streaming encoder; the record count is declared up front and checked
/// on [`TraceWriter::finish`].
pub struct TraceWriter<W: Write> {
    out: W,
    encoding: Encoding,
    declared: u64,
    written: u64,
    /// Pending bits of a partially filled byte.
    carry: u8,
    carry_len: u32,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, sampling_period_ns: u32, encoding: Encoding, count: u64) -> Result<Self> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&sampling_period_ns.to_le_bytes())?;
        out.write_all(&count.to_le_bytes())?;
        out.write_all(&[encoding as u8])?;
        Ok(Self {
            out,
            encoding,
            declared: count,
            written: 0,
            carry: 0,
            carry_len: 0,
        })
    }

    pub fn write_records(&mut self, records: &Records) -> Result<()> {
        match (records, self.encoding) {
            (Records::Iq(iq), Encoding::Iq) => {
                let mut buf = Vec::with_capacity(iq.len() * 8);
                for [i, q] in iq {
                    buf.extend_from_slice(&i.to_le_bytes());
                    buf.extend_from_slice(&q.to_le_bytes());
                }
                self.out.write_all(&buf)?;
            }
            (Records::Binary(bits), Encoding::Binary) => self.write_bits(bits)?,
            _ => return Err(Error::domain("record encoding does not match the file")),
        }
        self.written += records.len() as u64;
        Ok(())
    }

    fn write_bits(&mut self, bits: &[u8]) -> Result<()> {
        let mut packed = Vec::with_capacity(bits.len() / 8 + 1);
        for &b in bits {
            self.carry |= u8::from(b != 0) << self.carry_len;
            self.carry_len += 1;
            if self.carry_len == 8 {
                packed.push(self.carry);
                self.carry = 0;
                self.carry_len = 0;
            }
        }
        self.out.write_all(&packed)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.declared {
            return Err(Error::domain(format!(
                "declared {} records but wrote {}",
                self.declared, self.written
            )));
        }
        if self.carry_len > 0 {
            self.out.write_all(&[self.carry])?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write + Seek> TraceWriter<W> {
    /// Finishes and rewrites the header count with the number of records
    /// actually written, for outputs whose size is only known at the end.
    pub fn finish_with_actual_count(mut self) -> Result<W> {
        self.declared = self.written;
        let written = self.written;
        let mut out = self.finish()?;
        out.seek(SeekFrom::Start(12))?;
        out.write_all(&written.to_le_bytes())?;
        out.seek(SeekFrom::End(0))?;
        out.flush()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub sampling_period_ns: u32,
    pub count: u64,
    pub encoding: Encoding,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if take(bytes, 0, 6, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let version = u16::from_le_bytes(take(bytes, 6, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(6, format!("unsupported version {version}")));
    }
    let sampling_period_ns = u32::from_le_bytes(take(bytes, 8, 4, "sampling period")?.try_into().unwrap());
    let count = u64::from_le_bytes(take(bytes, 12, 8, "record count")?.try_into().unwrap());
    let encoding = match take(bytes, 20, 1, "encoding")?[0] {
        0 => Encoding::Iq,
        1 => Encoding::Binary,
        other => return Err(Error::format(20, format!("unknown encoding {other}"))),
    };
    Ok(Header {
        sampling_period_ns,
        count,
        encoding,
    })
}

/// Reads and checks only the header of a trace file.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    File::open(path)?.take(HEADER_LEN as u64).read_to_end(&mut buf)?;
    parse_header(&buf)
}

pub fn encode_trace<W: Write>(out: W, file: &TraceFile) -> Result<()> {
    let encoding = match file.records {
        Records::Iq(_) => Encoding::Iq,
        Records::Binary(_) => Encoding::Binary,
    };
    let mut w = TraceWriter::new(out, file.sampling_period_ns, encoding, file.records.len() as u64)?;
    w.write_records(&file.records)?;
    w.finish()?;
    Ok(())
}

pub fn decode_trace<R: Read>(mut input: R) -> Result<TraceFile> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_bytes(&bytes)
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(at..at + n)
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("truncated while reading {what}")))
}

pub fn decode_bytes(bytes: &[u8]) -> Result<TraceFile> {
    let header = parse_header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let count_usize = usize::try_from(header.count).map_err(|_| Error::format(12, "record count too large"))?;
    let expected = match header.encoding {
        Encoding::Iq => count_usize.checked_mul(8),
        Encoding::Binary => Some(count_usize.div_ceil(8)),
    }
    .ok_or_else(|| Error::format(12, "record count too large"))?;
    if payload.len() < expected {
        return Err(Error::format(
            (HEADER_LEN + payload.len()) as u64,
            format!("payload truncated: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (HEADER_LEN + expected) as u64,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let records = if header.encoding == Encoding::Iq {
        Records::Iq(
            payload
                .chunks_exact(8)
                .map(|c| {
                    [
                        f32::from_le_bytes(c[..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..].try_into().unwrap()),
                    ]
                })
                .collect(),
        )
    } else {
        Records::Binary((0..count_usize).map(|k| (payload[k / 8] >> (k % 8)) & 1).collect())
    };
    Ok(TraceFile {
        sampling_period_ns: header.sampling_period_ns,
        records,
    })
}

pub fn write_trace_file(path: &Path, file: &TraceFile) -> Result<()> {
    encode_trace(BufWriter::new(File::create(path)?), file)
}

pub fn read_trace_file(path: &Path) -> Result<TraceFile> {
    decode_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(f: &TraceFile) -> TraceFile {
        let mut buf = Vec::new();
        encode_trace(&mut buf, f).unwrap();
        decode_bytes(&buf).unwrap()
    }

    #[test]
    fn empty_payload() {
        for records in [Records::Iq(vec![]), Records::Binary(vec![])] {
            let f = TraceFile::new(73.6, records).unwrap();
            assert_eq!(roundtrip(&f), f);
        }
    }

    #[test]
    fn odd_length_bits() {
        let bits: Vec<u8> = (0..13).map(|k| u8::from(k % 3 != 0)).collect();
        let f = TraceFile::new(40.0, Records::Binary(bits)).unwrap();
        assert_eq!(roundtrip(&f), f);
    }

    #[test]
    fn streamed_chunks_match_one_shot() {
        let bits: Vec<u8> = (0..37).map(|k| u8::from((k * 7) % 5 < 2)).collect();
        let one = TraceFile::new(50.0, Records::Binary(bits.clone())).unwrap();
        let mut a = Vec::new();
        encode_trace(&mut a, &one).unwrap();
        let mut w = TraceWriter::new(Vec::new(), one.sampling_period_ns, Encoding::Binary, 37).unwrap();
        for chunk in bits.chunks(5) {
            w.write_records(&Records::Binary(chunk.to_vec())).unwrap();
        }
        assert_eq!(w.finish().unwrap(), a);

        let w = TraceWriter::new(Vec::new(), 1, Encoding::Iq, 2).unwrap();
        assert!(w.finish().is_err());
    }

    #[test]
    fn header_errors_carry_offsets() {
        let f = TraceFile::new(60.0, Records::Iq(vec![[1.0, -2.0]; 4])).unwrap();
        let mut buf = Vec::new();
        encode_trace(&mut buf, &f).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(decode_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = buf.clone();
        bad[6] = 9;
        assert!(matches!(decode_bytes(&bad), Err(Error::Format { offset: 6, .. })));

        let cut = &buf[..buf.len() - 3];
        match decode_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("{other:?}"),
        }

        assert!(matches!(decode_bytes(&buf[..10]), Err(Error::Format { offset: 10, .. })));
    }
}
