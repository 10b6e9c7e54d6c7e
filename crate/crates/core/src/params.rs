//! Named parameter storage, gradient buffers and the Adam optimizer.

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    mats: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mat: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.mats.push(mat);
        ParamId(self.mats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.mats[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.mats[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.mats.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.mats)
    }

    /// Overwrite `id` with `mat`, checking the shape.
    pub fn assign(&mut self, id: ParamId, mat: &Mat) -> Result<()> {
        let dst = &mut self.mats[id.0];
        if dst.shape() != mat.shape() {
            return Err(Error::Shape(format!(
                "parameter {} is {:?}, got {:?}",
                self.names[id.0],
                dst.shape(),
                mat.shape()
            )));
        }
        dst.data.copy_from_slice(&mat.data);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.mats.iter().map(|m| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }
}

/// Dense gradient buffers, one optional slot per parameter.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Grads {
            slots: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    pub(crate) fn slot_or_zeros(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Mat {
        self.slots[id.0].get_or_insert_with(|| Mat::zeros(rows, cols))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: Grads) {
        for (i, slot) in other.slots.into_iter().enumerate() {
            if let Some(g) = slot {
                match &mut self.slots[i] {
                    Some(acc) => acc.add_assign(&g),
                    dst @ None => *dst = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Mat::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    frozen: Vec<bool>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
            frozen: vec![false; n_params],
        }
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in params.ids() {
            if self.frozen[id.0] {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.rows, g.cols));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.rows, g.cols));
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Mat::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(ps.len(), 0.1);
        for _ in 0..500 {
            let mut g = Grads::new(ps.len());
            g.accumulate(x, &ps.get(x).map(|v| 2.0 * v));
            opt.step(&mut ps, &g);
        }
        assert!(ps.get(x).norm() < 1e-2);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Mat::row_vector(vec![1.5, 0.5]));
        let mut opt = Adam::new(ps.len(), 0.0);
        let mut g = Grads::new(ps.len());
        g.accumulate(x, &Mat::row_vector(vec![1.0, -1.0]));
        opt.step(&mut ps, &g);
        assert_eq!(ps.get(x).data, vec![1.5, 0.5]);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Mat::row_vector(vec![1.0]));
        let mut opt = Adam::new(ps.len(), 0.1);
        opt.freeze(x);
        let mut g = Grads::new(ps.len());
        g.accumulate(x, &Mat::row_vector(vec![1.0]));
        opt.step(&mut ps, &g);
        assert_eq!(ps.get(x).data, vec![1.0]);
    }
}
