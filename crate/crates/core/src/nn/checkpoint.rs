use std::fs;
use std::path::Path;

use super::{NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"XMDL1";

/// Ordered named tensors. The file is the magic followed by one record per tensor until
/// end of file: `u32` name length, name bytes (UTF-8), `u32` rank, rank × `u64` dims,
/// then the `f64` payload, all little-endian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn extend(&mut self, tensors: impl IntoIterator<Item = Tensor>) {
        self.tensors.extend(tensors);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for t in &self.tensors {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.extend((t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend((d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
            return Err(NnError::Parse { offset: 0, msg: "bad magic".into() });
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| r.err_at(at, "name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            let mut count: usize = 1;
            for _ in 0..rank {
                let at = r.pos;
                let d = usize::try_from(r.u64("dim")?).map_err(|_| r.err_at(at, "dim overflows"))?;
                count = count.checked_mul(d).ok_or_else(|| r.err_at(at, "element count overflows"))?;
                dims.push(d);
            }
            let at = r.pos;
            let n_bytes = count.checked_mul(8).ok_or_else(|| r.err_at(at, "payload size overflows"))?;
            let payload = r.take(n_bytes, "payload")?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Self { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, at: usize, msg: &str) -> NnError {
        NnError::Parse { offset: at as u64, msg: msg.to_string() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err_at(self.pos, &format!("truncated {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), NnError> {
    fs::write(path.as_ref(), ckpt.to_bytes()).map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(vec![
            Tensor { name: "a.weight".into(), dims: vec![2, 3], data: vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -2.25] },
            Tensor { name: "scalar".into(), dims: vec![], data: vec![7.0] },
            Tensor { name: "empty".into(), dims: vec![0], data: vec![] },
        ])
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensors[0].data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes();
        for cut in [3, 6, 12, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(NnError::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn magic_only_is_empty() {
        assert_eq!(Checkpoint::from_bytes(CHECKPOINT_MAGIC).unwrap(), Checkpoint::default());
        assert!(Checkpoint::from_bytes(b"XMDL2").is_err());
    }
}
