//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "CFMF"
//! version      u32      1
//! num_users    u64
//! num_items    u64
//! rank         u64
//! lambda       f64
//! seed         u64
//! global_mean  f64
//! scale_min    f64
//! scale_max    f64
//! user_known   num_users bytes (0 or 1)
//! item_known   num_items bytes (0 or 1)
//! P            num_users * rank f64, row-major
//! Q            num_items * rank f64, row-major
//! ```

use std::io::{Read, Write};

use super::{FactorMatrix, FactorModel};
use crate::error::{Error, Result};
use crate::ratings::RatingScale;

const MAGIC: &[u8; 4] = b"CFMF";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &FactorModel, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [model.num_users(), model.num_items(), model.rank()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&model.lambda.to_le_bytes())?;
    out.write_all(&model.seed.to_le_bytes())?;
    for v in [model.global_mean, model.scale.min, model.scale.max] {
        out.write_all(&v.to_le_bytes())?;
    }
    let flags: Vec<u8> = model
        .user_known
        .iter()
        .chain(&model.item_known)
        .map(|&b| b as u8)
        .collect();
    out.write_all(&flags)?;
    let mut buf = Vec::with_capacity(8 * (model.user_factors.as_slice().len() + model.item_factors.as_slice().len()));
    for v in model
        .user_factors
        .as_slice()
        .iter()
        .chain(model.item_factors.as_slice())
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_model<R: Read>(mut input: R) -> Result<FactorModel> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidModel("bad magic".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        return Err(Error::InvalidModel(format!(
            "unsupported version {}",
            u32::from_le_bytes(v)
        )));
    }
    let num_users = read_u64(&mut input)? as usize;
    let num_items = read_u64(&mut input)? as usize;
    let rank = read_u64(&mut input)? as usize;
    if rank == 0 {
        return Err(Error::InvalidModel("rank 0".into()));
    }
    let lambda = read_f64(&mut input)?;
    let seed = read_u64(&mut input)?;
    let global_mean = read_f64(&mut input)?;
    let scale = RatingScale::new(read_f64(&mut input)?, read_f64(&mut input)?);
    let mut flags = vec![0u8; num_users + num_items];
    input.read_exact(&mut flags)?;
    if flags.iter().any(|&f| f > 1) {
        return Err(Error::InvalidModel("bad known-flag byte".into()));
    }
    let user_known = flags[..num_users].iter().map(|&f| f == 1).collect();
    let item_known = flags[num_users..].iter().map(|&f| f == 1).collect();
    let user_factors = FactorMatrix::from_vec(num_users, rank, read_f64s(&mut input, num_users * rank)?)?;
    let item_factors = FactorMatrix::from_vec(num_items, rank, read_f64s(&mut input, num_items * rank)?)?;
    Ok(FactorModel {
        user_factors,
        item_factors,
        lambda,
        seed,
        global_mean,
        scale,
        user_known,
        item_known,
    })
}
