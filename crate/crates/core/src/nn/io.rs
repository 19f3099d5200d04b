//! Binary model files.
//!
//! All integers little-endian.
//!
//! ```text
//! magic    4 bytes  "DBNN"
//! version  u32      = 1
//! classes  u32
//! init     u8       0 = glorot-uniform
//! seed     u64
//! rank     u32, then `rank` x u32 input dims
//! layers   u32 count, then one descriptor per layer:
//!            tag u8; dense(0): inputs, outputs; conv2d(1): in, out,
//!            kernel, stride, padding; relu(2); maxpool2d(3): window,
//!            stride; flatten(4); sigmoid_output(5); softmax_output(6)
//! payload  f64 per parameter: each parameterized layer's weights then bias
//! ```

use std::path::Path;

use super::layer::{Conv2d, Dense, Layer, MaxPool2d};
use super::network::{InitScheme, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBNN";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                what: "model file".into(),
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 8)?;
        for (v, chunk) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, net.classes());
    out.push(match net.init_scheme() {
        InitScheme::GlorotUniform => 0,
    });
    out.extend_from_slice(&net.seed().to_le_bytes());
    put_u32(&mut out, net.input_shape().len());
    for &d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(0);
                put_u32(&mut out, d.inputs);
                put_u32(&mut out, d.outputs);
            }
            Layer::Conv2d(c) => {
                out.push(1);
                for v in [c.in_channels, c.out_channels, c.kernel, c.stride, c.padding] {
                    put_u32(&mut out, v);
                }
            }
            Layer::Relu => out.push(2),
            Layer::MaxPool2d(p) => {
                out.push(3);
                put_u32(&mut out, p.window);
                put_u32(&mut out, p.stride);
            }
            Layer::Flatten => out.push(4),
            Layer::SigmoidOutput => out.push(5),
            Layer::SoftmaxOutput => out.push(6),
        }
    }
    out.extend_from_slice(&net.parameter_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "model file".into(),
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            what: "model file".into(),
            found: version,
            supported: VERSION,
        });
    }
    let classes = r.usize()?;
    let init = match r.u8()? {
        0 => InitScheme::GlorotUniform,
        other => {
            return Err(Error::Parse {
                what: "model file".into(),
                message: format!("unknown init scheme tag {other}"),
            })
        }
    };
    let seed = r.u64()?;
    let rank = r.usize()?;
    let input_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.u8()? {
            0 => {
                let (i, o) = (r.usize()?, r.usize()?);
                Layer::Dense(Dense::zeros(i, o))
            }
            1 => {
                let (i, o, k, s, p) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                Layer::Conv2d(Conv2d::zeros(i, o, k, s, p))
            }
            2 => Layer::Relu,
            3 => {
                let (window, stride) = (r.usize()?, r.usize()?);
                Layer::MaxPool2d(MaxPool2d { window, stride })
            }
            4 => Layer::Flatten,
            5 => Layer::SigmoidOutput,
            6 => Layer::SoftmaxOutput,
            other => {
                return Err(Error::Parse {
                    what: "model file".into(),
                    message: format!("unknown layer tag {other}"),
                })
            }
        };
        layers.push(layer);
    }
    let params: usize = layers.iter().map(Layer::param_count).sum();
    let expected = r.pos + params * 8;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            what: "model file".into(),
            expected,
            actual: bytes.len(),
        });
    }
    for layer in layers.iter_mut() {
        if let Some((w, b)) = layer.params_mut() {
            r.f64s(w)?;
            r.f64s(b)?;
        }
    }
    Network::from_layers(input_shape, classes, layers, init, seed)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
