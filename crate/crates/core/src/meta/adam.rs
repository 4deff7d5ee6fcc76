use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

const MAGIC: &[u8; 4] = b"MDA1";

/// Adam moments for an ordered list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn check(&self, tensors: &[Tensor<T>], what: &str) -> Result<()> {
        if tensors.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "adam holds {} moments, got {} {what}",
                self.m.len(),
                tensors.len()
            )));
        }
        for (i, (t, m)) in tensors.iter().zip(&self.m).enumerate() {
            if t.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    detail: format!(
                        "{what} {i} has shape {:?}, moment {:?}",
                        t.shape(),
                        m.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// One bias-corrected update of `params` against `grads` with step size `lr`.
    pub fn update(
        &mut self,
        params: &[Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<Vec<Tensor<T>>> {
        self.check(params, "parameters")?;
        self.check(grads, "gradients")?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let (one, eps) = (T::one(), T::lit(EPSILON));
        let step = T::lit(lr / c1);
        let c2 = T::lit(c2);
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i].data();
            let (m0, v0) = (self.m[i].data(), self.v[i].data());
            let m = Tensor::from_fn(g_shape(&grads[i]), |j| b1 * m0[j] + (one - b1) * g[j]);
            let v = Tensor::from_fn(g_shape(&grads[i]), |j| {
                b2 * v0[j] + (one - b2) * g[j] * g[j]
            });
            let p = params[i].data();
            let (md, vd) = (m.data(), v.data());
            let next = Tensor::from_fn(g_shape(&grads[i]), |j| {
                p[j] - step * md[j] / ((vd[j] / c2).sqrt() + eps)
            });
            if !next.all_finite() {
                return Err(Error::NonFinite { op: "adam" });
            }
            self.m[i] = m;
            self.v[i] = v;
            out.push(next);
        }
        Ok(out)
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&self.step.to_le_bytes())?;
        out.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for t in self.m.iter().chain(&self.v) {
            t.write_to(out)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(
                "optimizer state",
                format!("bad magic {magic:?}"),
            ));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut read = |count: usize| -> Result<Vec<Tensor<T>>> {
            (0..count).map(|_| Tensor::read_from(input)).collect()
        };
        let m = read(n)?;
        let v = read(n)?;
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(Error::format(
                    "optimizer state",
                    "first and second moments differ in shape",
                ));
            }
        }
        Ok(AdamState { m, v, step })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn g_shape<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    t.shape().to_vec()
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}
