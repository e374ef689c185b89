//! Versioned text checkpoint format.
//!
//! ```text
//! eqmz-checkpoint 1
//! meta <key> <value to end of line>      (zero or more)
//! params <count>
//! param <name> <rank> <dim>...           (count times, each followed by)
//! <16-hex-digit f64 bit patterns separated by single spaces>
//! end
//! ```
//!
//! Values are stored as IEEE-754 bit patterns so a load reproduces every
//! parameter bit for bit, and identical parameters always serialize to
//! identical bytes.

use std::io::{BufRead, Write};

use crate::{NdError, ParamStore, Tensor};

pub const MAGIC: &str = "eqmz-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            meta: Vec::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        writeln!(w, "params {}", self.params.len())?;
        for (name, t) in self.params.iter() {
            write!(w, "param {name} {}", t.shape().len())?;
            for d in t.shape() {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            let mut first = true;
            for v in t.data() {
                if !first {
                    w.write_all(b" ")?;
                }
                first = false;
                write!(w, "{:016x}", v.to_bits())?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to Vec");
        buf
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, NdError> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |expect: &str| -> Result<(usize, String), NdError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((n, Err(e))) => Err(NdError::Checkpoint {
                    line: n,
                    msg: e.to_string(),
                }),
                None => Err(NdError::Checkpoint {
                    line: 0,
                    msg: format!("unexpected end of file, expected {expect}"),
                }),
            }
        };
        let bad = |line: usize, msg: String| NdError::Checkpoint { line, msg };

        let (n, header) = next("header")?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(bad(n, format!("not a checkpoint: {header:?}")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(n, "missing version".into()))?;
        if version != VERSION {
            return Err(bad(n, format!("unsupported version {version}")));
        }

        let mut ckpt = Checkpoint::default();
        let count = loop {
            let (n, line) = next("meta or params")?;
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("params ") {
                break rest
                    .parse::<usize>()
                    .map_err(|e| bad(n, format!("bad param count: {e}")))?;
            } else {
                return Err(bad(n, format!("unexpected line {line:?}")));
            }
        };

        for _ in 0..count {
            let (n, line) = next("param header")?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < 3 || fields[0] != "param" {
                return Err(bad(n, format!("bad param header {line:?}")));
            }
            let rank: usize = fields[2].parse().map_err(|_| bad(n, "bad rank".into()))?;
            if fields.len() != 3 + rank {
                return Err(bad(n, format!("rank {rank} but {} dims", fields.len() - 3)));
            }
            let shape = fields[3..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(n, format!("bad dim: {e}")))?;
            let name = fields[1].to_string();
            let (n, values) = next("param values")?;
            let data = if values.is_empty() {
                Vec::new()
            } else {
                values
                    .split(' ')
                    .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(n, format!("bad value: {e}")))?
            };
            let t = Tensor::new(&shape, data).map_err(|e| bad(n, e.to_string()))?;
            ckpt.params.insert(name, t).map_err(|e| bad(n, e.to_string()))?;
        }
        let (n, end) = next("end")?;
        if end != "end" {
            return Err(bad(n, format!("expected end, got {end:?}")));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 1..40),
            rows in 1usize..4,
        ) {
            let cols = values.len() / rows;
            prop_assume!(cols > 0);
            let data = values[..rows * cols].to_vec();
            let mut store = ParamStore::new();
            store.insert("a.w", Tensor::new(&[rows, cols], data).unwrap()).unwrap();
            store.insert("s", Tensor::scalar(-0.0)).unwrap();
            let ckpt = Checkpoint::new(store).with_meta("variant", "EqMuZero");
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::read_from(&bytes[..]).unwrap();
            prop_assert_eq!(back.meta("variant"), Some("EqMuZero"));
            prop_assert_eq!(back.to_bytes(), bytes);
            for ((_, a), (_, b)) in ckpt.params.iter().zip(back.params.iter()) {
                let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = Checkpoint::read_from(&b"hello 1\n"[..]).unwrap_err();
        assert!(matches!(err, NdError::Checkpoint { line: 1, .. }));
    }

    #[test]
    fn rejects_truncated_file() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let bytes = Checkpoint::new(store).to_bytes();
        let cut = &bytes[..bytes.len() - 4];
        assert!(Checkpoint::read_from(cut).is_err());
    }
}
