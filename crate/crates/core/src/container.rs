//! The `OBGCS` container format shared by generator weights, ensembles and
//! observations.
//!
//! ```text
//! OBGCS-GEN v1            magic line
//! layers 5 50 100         free-form "key value..." header lines
//! activation identity
//! array W1 250            declared arrays, in payload order
//! array b1 50
//! ...
//! end                     end of header
//! <payload>               every declared array as little-endian f64, in order
//! ```
//!
//! A file whose payload is shorter or longer than the declared arrays is
//! malformed. Consumers check that the declared array lengths agree with
//! their own header fields and report a dimension error otherwise.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("missing header field `{0}`")]
    MissingField(String),
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: String,
    pub fields: Vec<(String, String)>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(magic: &str) -> Self {
        Self { magic: magic.to_string(), fields: Vec::new(), arrays: Vec::new() }
    }

    pub fn field(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn array(mut self, name: &str, data: Vec<f64>) -> Self {
        self.arrays.push((name.to_string(), data));
        self
    }

    pub fn get(&self, key: &str) -> Result<&str, ContainerError> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ContainerError::MissingField(key.to_string()))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, ContainerError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| ContainerError::Malformed(format!("field `{key}` has unparsable value `{raw}`")))
    }

    pub fn get_array(&self, name: &str) -> Result<&[f64], ContainerError> {
        self.arrays
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| ContainerError::MissingArray(name.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.magic)?;
        for (k, v) in &self.fields {
            writeln!(w, "{k} {v}")?;
        }
        for (name, data) in &self.arrays {
            writeln!(w, "array {name} {}", data.len())?;
        }
        writeln!(w, "end")?;
        for (_, data) in &self.arrays {
            let mut buf = Vec::with_capacity(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R, expected_magic: &str) -> Result<Self, ContainerError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, expected_magic)
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: &str) -> Result<Self, ContainerError> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String, ContainerError> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| ContainerError::Malformed("header ended before `end` line".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| ContainerError::Malformed("header is not UTF-8".into()))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };

        let magic = next_line(&mut pos)?;
        if magic != expected_magic {
            return Err(ContainerError::Malformed(format!(
                "expected magic `{expected_magic}`, found `{}`",
                magic.chars().take(40).collect::<String>()
            )));
        }
        let mut fields = Vec::new();
        let mut declared: Vec<(String, usize)> = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            if key.is_empty() {
                return Err(ContainerError::Malformed("empty header line".into()));
            }
            if key == "array" {
                let (name, len) = value
                    .split_once(' ')
                    .ok_or_else(|| ContainerError::Malformed(format!("bad array line `{line}`")))?;
                let len: usize = len
                    .trim()
                    .parse()
                    .map_err(|_| ContainerError::Malformed(format!("bad array length in `{line}`")))?;
                declared.push((name.to_string(), len));
            } else {
                fields.push((key.to_string(), value.to_string()));
            }
        }

        let payload = &bytes[pos..];
        let needed: usize = declared.iter().map(|(_, l)| l * 8).sum();
        if payload.len() < needed {
            return Err(ContainerError::Malformed(format!(
                "payload truncated: {} bytes present, {} declared",
                payload.len(),
                needed
            )));
        }
        if payload.len() > needed {
            return Err(ContainerError::Malformed(format!(
                "{} trailing bytes after payload",
                payload.len() - needed
            )));
        }
        let mut arrays = Vec::with_capacity(declared.len());
        let mut off = 0;
        for (name, len) in declared {
            let data = payload[off..off + len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += len * 8;
            arrays.push((name, data));
        }
        Ok(Self { magic, fields, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container::new("OBGCS-TEST v1")
            .field("m", 3)
            .field("kind", "toeplitz 0.3")
            .array("y", vec![1.0, -1.0, 1.0])
            .array("z", vec![f64::MIN_POSITIVE, -0.0, 1e300])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes(), "OBGCS-TEST v1").unwrap();
        assert_eq!(back.get("kind").unwrap(), "toeplitz 0.3");
        let z = back.get_array("z").unwrap();
        assert_eq!(z[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn truncation_and_magic_are_malformed() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Container::from_bytes(cut, "OBGCS-TEST v1"),
            Err(ContainerError::Malformed(_))
        ));
        assert!(matches!(
            Container::from_bytes(&bytes[..10], "OBGCS-TEST v1"),
            Err(ContainerError::Malformed(_))
        ));
        assert!(matches!(
            Container::from_bytes(&bytes, "OBGCS-GEN v1"),
            Err(ContainerError::Malformed(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(Container::from_bytes(&bytes, "OBGCS-TEST v1").is_err());
    }
}
