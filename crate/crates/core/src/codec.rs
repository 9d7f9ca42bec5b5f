//! Little-endian binary reading and `key=value` text blocks shared by the
//! on-disk formats.

use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct LeReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    fail: fn(usize, String) -> Error,
}

impl<'a> LeReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], fail: fn(usize, String) -> Error) -> Self {
        Self { bytes, pos: 0, fail }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        (self.fail)(self.pos, message.into())
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// `count` f32 values, widened. Checks the length before allocating.
    pub(crate) fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let n = count
            .checked_mul(4)
            .ok_or_else(|| self.error(format!("{what} length overflows")))?;
        let b = self.take(n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Parameter(format!("{what} {v} does not fit in 32 bits")))
}

/// Ordered `key=value` pairs. Blank lines and `#` comments are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            kv.set(key, v.trim());
        }
        Ok(kv)
    }

    /// Inserts or overwrites, keeping the first insertion position.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}={raw} is not a valid value")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(_) => self.require(key),
            None => Ok(default),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub(crate) fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn split_f64(raw: &str, key: &str) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {s:?} is not a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# header\nepochs = 40\n\nlr=0.001\nepochs=50\n").unwrap();
        assert_eq!(kv.require::<usize>("epochs").unwrap(), 50);
        assert_eq!(kv.get("lr"), Some("0.001"));
        assert_eq!(kv.keys().collect::<Vec<_>>(), ["epochs", "lr"]);
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(kv.require::<usize>("lr").is_err());
    }

    #[test]
    fn float_lists_round_trip_exactly() {
        let v = vec![0.1, -3.5e-12, 1.0 / 3.0, f64::MAX];
        assert_eq!(split_f64(&join_f64(&v), "x").unwrap(), v);
        assert!(split_f64("", "x").unwrap().is_empty());
    }

    #[test]
    fn reader_reports_offsets() {
        let mut r = LeReader::new(&[1, 0, 0, 0, 9], |offset, message| Error::Checkpoint { offset, message });
        assert_eq!(r.u32("a").unwrap(), 1);
        match r.u32("b") {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(r.f32s(usize::MAX, "big").is_err());
    }
}
