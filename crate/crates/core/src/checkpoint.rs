//! Versioned binary checkpoints.
//!
//! All integers are little-endian `u64` unless noted, all reals are
//! little-endian IEEE-754 `f64`. Strings are a `u64` byte length followed
//! by UTF-8 bytes. A tensor is `rows`, `cols`, then `rows * cols` reals in
//! row-major order.
//!
//! ```text
//! magic        8 bytes  "PRCACKPT"
//! version      u32      1
//! config_hash  string
//! seed         u64
//! epoch        u64
//! n_params     u64
//! n_params x { name: string, value: tensor }
//! has_optim    u8       0 or 1
//! if has_optim:
//!   learning_rate, beta1, beta2, epsilon, weight_decay   5 x f64
//!   step       u64
//!   n_params x { first_moment: tensor, second_moment: tensor,
//!                n_rows: u64, n_rows x row_step: u64 }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{AdamW, Tensor};

pub const MAGIC: &[u8; 8] = b"PRCACKPT";
pub const VERSION: u32 = 1;
const MAX_STRING: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: Option<&AdamW>, epoch: u64, seed: u64) -> Self {
        Checkpoint {
            config_hash: String::new(),
            seed,
            epoch,
            params: model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Copies parameter values into `model`; names and shapes must match.
    pub fn restore(&self, model: &mut Model) -> Result<()> {
        if self.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter `{name}`")))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?} in the checkpoint and {:?} in the model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_str(&mut w, &self.config_hash)?;
        put_u64(&mut w, self.seed)?;
        put_u64(&mut w, self.epoch)?;
        put_u64(&mut w, self.params.len() as u64)?;
        for (name, t) in &self.params {
            put_str(&mut w, name)?;
            put_tensor(&mut w, t)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(o) => {
                w.write_all(&[1])?;
                for x in [o.learning_rate, o.beta1, o.beta2, o.epsilon, o.weight_decay] {
                    w.write_all(&x.to_le_bytes())?;
                }
                put_u64(&mut w, o.step)?;
                if o.first_moment.len() != self.params.len() {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                for k in 0..self.params.len() {
                    put_tensor(&mut w, &o.first_moment[k])?;
                    put_tensor(&mut w, &o.second_moment[k])?;
                    put_u64(&mut w, o.row_steps[k].len() as u64)?;
                    for &s in &o.row_steps[k] {
                        put_u64(&mut w, s)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = get_str(&mut r)?;
        let seed = get_u64(&mut r)?;
        let epoch = get_u64(&mut r)?;
        let n = get_u64(&mut r)? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = get_str(&mut r)?;
            params.push((name, get_tensor(&mut r)?));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let mut h = [0.0; 5];
                for x in &mut h {
                    *x = get_f64(&mut r)?;
                }
                let step = get_u64(&mut r)?;
                let (mut m, mut s, mut rows) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    m.push(get_tensor(&mut r)?);
                    s.push(get_tensor(&mut r)?);
                    let k = get_u64(&mut r)? as usize;
                    rows.push((0..k).map(|_| get_u64(&mut r)).collect::<Result<Vec<_>>>()?);
                }
                Some(AdamW {
                    learning_rate: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    epsilon: h[3],
                    weight_decay: h[4],
                    step,
                    first_moment: m,
                    second_moment: s,
                    row_steps: rows,
                })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        Ok(Checkpoint {
            config_hash,
            seed,
            epoch,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn put_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    put_u64(w, t.rows() as u64)?;
    put_u64(w, t.cols() as u64)?;
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u64(r)?;
    if n > MAX_STRING {
        return Err(Error::Checkpoint(format!("string of {n} bytes")));
    }
    let mut b = vec![0u8; n as usize];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn get_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rows = get_u64(r)? as usize;
    let cols = get_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&l| l <= 1 << 32)
        .ok_or_else(|| Error::Checkpoint(format!("tensor of {rows} x {cols}")))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::from_vec(rows, cols, data)?)
}
