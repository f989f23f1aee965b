//! Binary checkpoints (little-endian).
//!
//! ```text
//! magic     8 bytes "SELCCKPT"
//! version   u32     1
//! epoch     u64     next epoch to run
//! student   params block
//! teacher   params block
//! momentum  f64
//! base_lr   f64
//! decay     f64
//! velocity  params block
//! extra     u64 length + bytes (opaque training state)
//!
//! params block: u32 layer count, then per layer
//!   u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 bias
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{Layer, ModelParams, OptimizerState, Teacher};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SELCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub next_epoch: usize,
    pub student: ModelParams,
    pub teacher: Teacher,
    pub optimizer: OptimizerState,
    pub extra: Vec<u8>,
}

fn werr(e: std::io::Error) -> Error {
    Error::format("checkpoint", format!("write failed: {e}"))
}

fn rerr(e: std::io::Error) -> Error {
    Error::format("checkpoint", format!("truncated or unreadable: {e}"))
}

fn write_params<W: Write>(p: &ModelParams, out: &mut W) -> Result<()> {
    out.write_u32::<LittleEndian>(p.layers.len() as u32).map_err(werr)?;
    for l in &p.layers {
        out.write_u32::<LittleEndian>(l.weight.nrows() as u32).map_err(werr)?;
        out.write_u32::<LittleEndian>(l.weight.ncols() as u32).map_err(werr)?;
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.write_f64::<LittleEndian>(*v).map_err(werr)?;
        }
    }
    Ok(())
}

fn read_params<R: Read>(input: &mut R) -> Result<ModelParams> {
    let n = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    if n == 0 {
        return Err(Error::format("checkpoint", "network without layers"));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let cols = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let mut w = vec![0.0; rows * cols];
        input.read_f64_into::<LittleEndian>(&mut w).map_err(rerr)?;
        let mut b = vec![0.0; rows];
        input.read_f64_into::<LittleEndian>(&mut b).map_err(rerr)?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((rows, cols), w).expect("sized above"),
            bias: Array1::from(b),
        });
    }
    let params = ModelParams { layers };
    if params.layers.windows(2).any(|w| w[0].weight.nrows() != w[1].weight.ncols()) {
        return Err(Error::format("checkpoint", "layer dimensions do not chain"));
    }
    Ok(params)
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC).map_err(werr)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(werr)?;
        out.write_u64::<LittleEndian>(self.next_epoch as u64).map_err(werr)?;
        write_params(&self.student, &mut out)?;
        write_params(self.teacher.params(), &mut out)?;
        out.write_f64::<LittleEndian>(self.optimizer.momentum).map_err(werr)?;
        out.write_f64::<LittleEndian>(self.optimizer.base_lr).map_err(werr)?;
        out.write_f64::<LittleEndian>(self.optimizer.weight_decay).map_err(werr)?;
        write_params(&self.optimizer.velocity, &mut out)?;
        out.write_u64::<LittleEndian>(self.extra.len() as u64).map_err(werr)?;
        out.write_all(&self.extra).map_err(werr)?;
        out.flush().map_err(werr)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(rerr)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic header"));
        }
        let version = input.read_u32::<LittleEndian>().map_err(rerr)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let next_epoch = input.read_u64::<LittleEndian>().map_err(rerr)? as usize;
        let student = read_params(&mut input)?;
        let teacher = read_params(&mut input)?;
        let momentum = input.read_f64::<LittleEndian>().map_err(rerr)?;
        let base_lr = input.read_f64::<LittleEndian>().map_err(rerr)?;
        let weight_decay = input.read_f64::<LittleEndian>().map_err(rerr)?;
        let velocity = read_params(&mut input)?;
        if !student.same_shape(&teacher) || !student.same_shape(&velocity) {
            return Err(Error::format("checkpoint", "student, teacher and optimizer shapes differ"));
        }
        let len = input.read_u64::<LittleEndian>().map_err(rerr)? as usize;
        let mut extra = Vec::new();
        input.by_ref().take(len as u64).read_to_end(&mut extra).map_err(rerr)?;
        if extra.len() != len {
            return Err(Error::format("checkpoint", "truncated state section"));
        }
        Ok(Self {
            next_epoch,
            student,
            teacher: Teacher::from_params(teacher),
            optimizer: OptimizerState {
                velocity,
                momentum,
                base_lr,
                weight_decay,
            },
            extra,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let student = ModelParams::init(&[2, 5, 3], 1);
        let mut teacher = Teacher::from_student(&student);
        teacher.update(&ModelParams::init(&[2, 5, 3], 2), 0.5);
        let mut optimizer = OptimizerState::new(&student, 0.05, 5e-4);
        optimizer.velocity = ModelParams::init(&[2, 5, 3], 3);
        let ck = Checkpoint {
            next_epoch: 7,
            student,
            teacher,
            optimizer,
            extra: b"{\"k\":1}".to_vec(),
        };
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        assert_eq!(Checkpoint::read(bytes.as_slice()).unwrap(), ck);
        assert!(Checkpoint::read(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(Checkpoint::read(bad.as_slice()).is_err());
    }
}
