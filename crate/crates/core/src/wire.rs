//! Compact little-endian payload encoding for kernel messages.
//!
//! Byte counts from these encodings are the unit of all communication-cost
//! metrics, so field elements are packed at the field's natural width
//! (4 bytes for q < 2^32) rather than through a generic serializer.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::field::{Field, FieldVector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("payload truncated at offset {0}")]
    Truncated(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn put_fixed(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Field element at the field's natural width.
    pub fn put_elem(&mut self, field: Field, v: u64) {
        if field.elem_bytes() == 4 {
            self.put_u32(v as u32);
        } else {
            self.put_u64(v);
        }
    }

    pub fn put_fv(&mut self, v: &FieldVector) {
        self.put_u32(v.len() as u32);
        for &e in v.elems() {
            self.put_elem(v.field(), e);
        }
    }

    /// Nested map of raw payloads, keys ascending.
    pub fn put_map(&mut self, m: &BTreeMap<u32, Vec<u8>>) {
        self.put_u32(m.len() as u32);
        for (&k, v) in m {
            self.put_u32(k);
            self.put_bytes(v);
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.get_u32()? as usize;
        self.take(n)
    }

    pub fn get_fixed(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    pub fn get_elem(&mut self, field: Field) -> Result<u64, WireError> {
        let v = if field.elem_bytes() == 4 {
            self.get_u32()? as u64
        } else {
            self.get_u64()?
        };
        if v >= field.q() {
            return Err(WireError::Malformed(format!("element {v} >= modulus")));
        }
        Ok(v)
    }

    pub fn get_fv(&mut self, field: Field) -> Result<FieldVector, WireError> {
        let n = self.get_u32()? as usize;
        let mut elems = Vec::with_capacity(n);
        for _ in 0..n {
            elems.push(self.get_elem(field)?);
        }
        Ok(FieldVector::from_canonical(field, elems))
    }

    pub fn get_map(&mut self) -> Result<BTreeMap<u32, Vec<u8>>, WireError> {
        let n = self.get_u32()? as usize;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            let k = self.get_u32()?;
            let v = self.get_bytes()?.to_vec();
            if m.insert(k, v).is_some() {
                return Err(WireError::Malformed(format!("duplicate map key {k}")));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    #[test]
    fn roundtrip() {
        let f = Field::mersenne31();
        let fv = FieldVector::from_u64s(f, &[0, 1, 123456, f.q() - 1]);
        let mut w = Writer::new();
        w.put_u8(7);
        w.put_u32(42);
        w.put_u64(u64::MAX);
        w.put_bytes(b"hello");
        w.put_fv(&fv);
        let mut m = BTreeMap::new();
        m.insert(3u32, vec![1, 2, 3]);
        m.insert(1u32, vec![]);
        w.put_map(&m);
        let buf = w.finish();

        let mut r = Reader::new(&buf);
        assert_eq!(r.get_u8().unwrap(), 7);
        assert_eq!(r.get_u32().unwrap(), 42);
        assert_eq!(r.get_u64().unwrap(), u64::MAX);
        assert_eq!(r.get_bytes().unwrap(), b"hello");
        assert_eq!(r.get_fv(f).unwrap(), fv);
        assert_eq!(r.get_map().unwrap(), m);
        assert!(r.is_done());
    }

    #[test]
    fn fv_size_is_4_bytes_per_elem() {
        let f = Field::mersenne31();
        let fv = FieldVector::zeros(f, 100);
        let mut w = Writer::new();
        w.put_fv(&fv);
        assert_eq!(w.finish().len(), 4 + 4 * 100);
    }

    #[test]
    fn truncation_and_range_errors() {
        let mut r = Reader::new(&[1, 2]);
        assert!(matches!(r.get_u32(), Err(WireError::Truncated(_))));
        let f = Field::mersenne31();
        let mut w = Writer::new();
        w.put_u32(1);
        w.put_u32(u32::MAX); // not canonical for q = 2^31 - 1
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        assert!(matches!(r.get_fv(f), Err(WireError::Malformed(_))));
    }
}
