//! Binary sample store.
//!
//! ```text
//! magic     8 bytes "CLABSMPL"
//! version   u32
//! count     u64   number of samples
//! n         u32   segments per sample
//! len       u32   points per segment
//! records   count × { 5 label bytes, location u8, pad_count u16,
//!                     id_len u16, id bytes, src_count u16, src u32 × src_count }
//! data      count × n × len f32, row-major
//! ```
//!
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::pcg_data::{LabelSet, Location, Sample};
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"CLABSMPL";
pub const STORE_VERSION: u32 = 1;

pub fn encode_samples(samples: &[Sample]) -> Result<Vec<u8>> {
    let (n, len) = samples.first().map_or((0, 0), |s| (s.n, s.len));
    let mut out = Vec::new();
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    for s in samples {
        if s.n != n || s.len != len || s.segments.len() != n * len {
            return Err(Error::Store(format!(
                "sample for patient {} is {}×{}, store is {n}×{len}",
                s.patient_id, s.n, s.len
            )));
        }
        out.extend(s.labels.to_array().iter().map(|&v| v as u8));
        out.push(s.location.code());
        out.extend_from_slice(&(s.pad_count as u16).to_le_bytes());
        let id = s.patient_id.as_bytes();
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(s.source_indices.len() as u16).to_le_bytes());
        for &i in &s.source_indices {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    for s in samples {
        for &v in &s.segments {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + k)
            .ok_or_else(|| Error::Store(format!("truncated at byte {}", self.pos)))?;
        self.pos += k;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Sample>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(STORE_MAGIC.as_slice()) {
        return Err(Error::Store("not a sample store".into()));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Store(format!(
            "format version {version}, this build reads {STORE_VERSION}"
        )));
    }
    let count = r.u64()? as usize;
    let n = r.u32()? as usize;
    let len = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let lb = r.take(5)?;
        let labels = LabelSet::new([
            lb[0] as usize,
            lb[1] as usize,
            lb[2] as usize,
            lb[3] as usize,
            lb[4] as usize,
        ])?;
        let code = r.take(1)?[0];
        let location = Location::from_code(code)
            .ok_or_else(|| Error::Store(format!("location code {code}")))?;
        let pad_count = r.u16()? as usize;
        let id_len = r.u16()? as usize;
        let patient_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Store("patient id is not UTF-8".into()))?;
        let src = r.u16()? as usize;
        let source_indices = (0..src)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            segments: Vec::new(),
            n,
            len,
            labels,
            patient_id,
            location,
            pad_count,
            source_indices,
        });
    }
    let expected = count * n * len * 4;
    let rest = bytes.len() - r.pos;
    if rest != expected {
        return Err(Error::Store(format!(
            "header declares {count}×{n}×{len} values ({expected} bytes), payload has {rest}"
        )));
    }
    for s in &mut samples {
        s.segments = r
            .take(n * len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
    }
    Ok(samples)
}

pub fn write_sample_store(samples: &[Sample], path: &Path) -> Result<()> {
    fs::write(path, encode_samples(samples)?).map_err(|e| Error::io(path, e))
}

pub fn read_sample_store(path: &Path) -> Result<Vec<Sample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_samples(&bytes).map_err(|e| Error::Store(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Sample> {
        (0..3)
            .map(|i| Sample {
                segments: (0..6).map(|j| (i * 6 + j) as f32 as f64 * 0.25).collect(),
                n: 2,
                len: 3,
                labels: if i == 1 {
                    LabelSet::new([4, 3, 2, 1, 3]).unwrap()
                } else {
                    LabelSet::NORMAL
                },
                patient_id: format!("p{i}"),
                location: Location::ALL[i],
                pad_count: i % 2,
                source_indices: (0..2 - i % 2).collect(),
            })
            .collect()
    }

    #[test]
    fn roundtrip() {
        let s = samples();
        assert_eq!(decode_samples(&encode_samples(&s).unwrap()).unwrap(), s);
        assert!(decode_samples(&encode_samples(&[]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn payload_length_checked() {
        let bytes = encode_samples(&samples()).unwrap();
        assert!(decode_samples(&bytes[..bytes.len() - 4]).is_err());
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(decode_samples(&longer).is_err());
        assert!(decode_samples(b"nonsense").is_err());
    }
}
