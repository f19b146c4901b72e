//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "CDRT" | u32 version | u64 step | u32 len + JSON config
//! u32 count, then per tensor:
//!   u16 len + name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] | f32 payload
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CDRT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// The training configuration, stored verbatim.
    pub config_json: String,
    /// In file order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u64::<LittleEndian>(self.step)?;
        let config = self.config_json.as_bytes();
        out.write_u32::<LittleEndian>(len_u32(config.len(), "config")?)?;
        out.write_all(config)?;
        out.write_u32::<LittleEndian>(len_u32(self.tensors.len(), "tensor count")?)?;
        for (name, t) in &self.tensors {
            let name_len =
                u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            out.write_u16::<LittleEndian>(name_len)?;
            out.write_all(name.as_bytes())?;
            out.write_u8(DTYPE_F32)?;
            out.write_u8(u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank of {name} too large")))?)?;
            for &d in t.shape() {
                out.write_u32::<LittleEndian>(len_u32(d, "dimension")?)?;
            }
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let step = r.read_u64::<LittleEndian>().map_err(truncated)?;
        let config_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let config_json = read_string(&mut r, config_len)?;
        let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut tensors = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let name_len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
            let name = read_string(&mut r, name_len)?;
            let dtype = r.read_u8().map_err(truncated)?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name} has unknown dtype {dtype}")));
            }
            let rank = r.read_u8().map_err(truncated)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(truncated)?;
            let n: usize = shape.iter().product();
            let remaining = bytes.len() - r.position() as usize;
            if n.checked_mul(4).is_none_or(|b| b > remaining) {
                return Err(Error::Format(format!("truncated payload for {name}")));
            }
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after tensor table".into()));
        }
        Ok(Self { step, config_json, tensors })
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} exceeds u32")))
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("truncated file".into())
}

fn read_string(r: &mut Cursor<&[u8]>, len: usize) -> Result<String> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
