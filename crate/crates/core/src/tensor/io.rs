//! Raw tensor files.
//!
//! Layout (little-endian):
//! - magic `SSTN`
//! - version: u16
//! - rank: u8
//! - dims: rank * u32
//! - data: product(dims) * f32

use std::io::{self, Read, Write};

use super::Tensor;
use crate::error::DecodeError;
use crate::wire::{Reader, Writer};

pub const TENSOR_MAGIC: [u8; 4] = *b"SSTN";
pub const TENSOR_VERSION: u16 = 1;

pub fn write_tensor<W: Write>(mut out: W, tensor: &Tensor) -> io::Result<()> {
    let mut w = Writer::with_capacity(11 + 4 * tensor.rank() + 4 * tensor.len());
    w.bytes(&TENSOR_MAGIC);
    w.u16(TENSOR_VERSION);
    w.u8(tensor.rank() as u8);
    for &d in tensor.shape() {
        w.u32(d as u32);
    }
    for &v in tensor.data() {
        w.f32(v);
    }
    out.write_all(&w.into_inner())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<Tensor, ReadTensorError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    r.magic(TENSOR_MAGIC)?;
    r.version(TENSOR_VERSION)?;
    let rank = r.u8("rank")? as usize;
    let shape = (0..rank)
        .map(|_| r.u32("dims").map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let data = r.f32_vec(n, "payload")?;
    r.finish("payload")?;
    Ok(Tensor::new(shape, data).expect("length checked above"))
}

#[derive(Debug, thiserror::Error)]
pub enum ReadTensorError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}
