//! Self-describing binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   5 bytes  "ASYA1"
//! version u16      currently 1
//! seed    u64      model rng seed
//! layers  u32 count, then per layer a tag byte plus its fields
//! params  u32 count, then per param: name, trainable u8, rank u32,
//!         dims u32 each, values as f32
//! strings u32 length + utf-8 bytes
//! ```
//!
//! Tensor values are stored as 32-bit floats; loading widens them back to
//! f64, so a model that has been through one save/load cycle round-trips
//! bit-exactly thereafter.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnet::model::{Layer, Model, Param};
use crate::nnet::Tensor;

pub const MAGIC: &[u8; 5] = b"ASYA1";
pub const FORMAT_VERSION: u16 = 1;

const TAG_CONV2D: u8 = 0;
const TAG_DENSE: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_GAP: u8 = 3;
const TAG_L2NORM: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.rng_seed().to_le_bytes());

        out.extend_from_slice(&(self.layers().len() as u32).to_le_bytes());
        for layer in self.layers() {
            match layer {
                Layer::Conv2d {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    out.push(TAG_CONV2D);
                    write_str(&mut out, name);
                    for v in [*in_ch, *out_ch, *kernel, *stride] {
                        out.extend_from_slice(&(v as u32).to_le_bytes());
                    }
                }
                Layer::Dense { name, in_dim, out_dim } => {
                    out.push(TAG_DENSE);
                    write_str(&mut out, name);
                    out.extend_from_slice(&(*in_dim as u32).to_le_bytes());
                    out.extend_from_slice(&(*out_dim as u32).to_le_bytes());
                }
                Layer::Relu => out.push(TAG_RELU),
                Layer::GlobalAvgPool => out.push(TAG_GAP),
                Layer::L2Normalize => out.push(TAG_L2NORM),
                Layer::Softmax => out.push(TAG_SOFTMAX),
            }
        }

        out.extend_from_slice(&(self.params().len() as u32).to_le_bytes());
        for (name, param) in self.params() {
            write_str(&mut out, name);
            out.push(param.trainable as u8);
            out.extend_from_slice(&(param.tensor.shape().len() as u32).to_le_bytes());
            for &dim in param.tensor.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in param.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                field: "magic".into(),
                detail: format!("expected {MAGIC:?}, got {magic:?}"),
            });
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let seed = r.u64("seed")?;

        let n_layers = r.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let tag = r.u8("layer tag")?;
            let layer = match tag {
                TAG_CONV2D => Layer::Conv2d {
                    name: r.string("layer name")?,
                    in_ch: r.u32("in_ch")? as usize,
                    out_ch: r.u32("out_ch")? as usize,
                    kernel: r.u32("kernel")? as usize,
                    stride: r.u32("stride")? as usize,
                },
                TAG_DENSE => Layer::Dense {
                    name: r.string("layer name")?,
                    in_dim: r.u32("in_dim")? as usize,
                    out_dim: r.u32("out_dim")? as usize,
                },
                TAG_RELU => Layer::Relu,
                TAG_GAP => Layer::GlobalAvgPool,
                TAG_L2NORM => Layer::L2Normalize,
                TAG_SOFTMAX => Layer::Softmax,
                other => {
                    return Err(Error::Format {
                        field: format!("layer[{i}].tag"),
                        detail: format!("unknown layer tag {other}"),
                    })
                }
            };
            layers.push(layer);
        }

        let n_params = r.u32("param count")? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..n_params {
            let name = r.string("param name")?;
            let trainable = r.u8("trainable flag")? != 0;
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dim")? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4, "tensor data")?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let tensor = Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
                field: format!("param `{name}`"),
                detail: e.to_string(),
            })?;
            params.insert(name, Param { tensor, trainable });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                field: "trailer".into(),
                detail: format!("{} unread trailing bytes", bytes.len() - r.pos),
            });
        }
        Model::from_parts(layers, params, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path)?;
        Model::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                field: field.into(),
                detail: format!(
                    "need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let len = self.u32(field)? as usize;
        let raw = self.take(len, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            field: field.into(),
            detail: "string is not valid utf-8".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> Model {
        let mut m = Model::new(
            vec![
                Layer::conv2d("c1", 1, 4, 3, 2),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::dense("fc", 4, 8),
                Layer::L2Normalize,
            ],
            0xA5A5,
        )
        .unwrap();
        m.params_mut().get_mut("c1.b").unwrap().trainable = false;
        m
    }

    #[test]
    fn round_trip_preserves_model_after_one_cycle() {
        let m = sample_model();
        let bytes = m.to_bytes();
        let loaded = Model::from_bytes(&bytes).unwrap();
        // Values pass through an f32 cast exactly once; a second cycle must
        // be bit-identical.
        assert_eq!(loaded.to_bytes(), bytes);
        let again = Model::from_bytes(&loaded.to_bytes()).unwrap();
        assert_eq!(again, loaded);
        // And the cast itself is the only difference from the original.
        for (name, p) in m.params() {
            let lp = &loaded.params()[name];
            assert_eq!(lp.trainable, p.trainable);
            for (a, b) in p.tensor.data().iter().zip(lp.tensor.data()) {
                assert_eq!(*a as f32, *b as f32, "{name}");
                assert_eq!(*b, (*a as f32) as f64, "{name}");
            }
        }
    }

    #[test]
    fn save_load_file(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("model.asya");
        let m = sample_model();
        m.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), m.to_bytes());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = sample_model().to_bytes();
        bytes[0] = b'X';
        match Model::from_bytes(&bytes) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_version_error() {
        let mut bytes = sample_model().to_bytes();
        bytes[5] = 9;
        assert!(matches!(Model::from_bytes(&bytes), Err(Error::Version(_))));
    }

    #[test]
    fn truncated_file_names_field() {
        let bytes = sample_model().to_bytes();
        let err = Model::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample_model().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Model::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }
}
