use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut1, ArrayViewMut2, ArrayViewMut4, Ix1, Ix2, Ix4, IxDyn};
use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param(pub usize);

/// Ordered, named collection of tensors. Gradients and optimizer moments
/// use the same layout as the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    names: Vec<String>,
    tensors: Vec<ArrayD<F>>,
}

impl<F> Default for ParamSet<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: ArrayD<F>) -> Param {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        Param(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, p: Param) -> &str {
        &self.names[p.0]
    }

    pub fn find(&self, name: &str) -> Option<Param> {
        self.names.iter().position(|n| n == name).map(Param)
    }

    pub fn tensors(&self) -> &[ArrayD<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<F>] {
        &mut self.tensors
    }

    pub fn get(&self, p: Param) -> &ArrayD<F> {
        &self.tensors[p.0]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut ArrayD<F> {
        &mut self.tensors[p.0]
    }

    pub fn set(&mut self, p: Param, tensor: ArrayD<F>) {
        self.tensors[p.0] = tensor;
    }

    pub fn v1(&self, p: Param) -> ArrayView1<'_, F> {
        self.tensors[p.0].view().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn v2(&self, p: Param) -> ArrayView2<'_, F> {
        self.tensors[p.0].view().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn v4(&self, p: Param) -> ArrayView4<'_, F> {
        self.tensors[p.0].view().into_dimensionality::<Ix4>().expect("rank-4 parameter")
    }

    pub fn m1(&mut self, p: Param) -> ArrayViewMut1<'_, F> {
        self.tensors[p.0].view_mut().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn m2(&mut self, p: Param) -> ArrayViewMut2<'_, F> {
        self.tensors[p.0].view_mut().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn m4(&mut self, p: Param) -> ArrayViewMut4<'_, F> {
        self.tensors[p.0].view_mut().into_dimensionality::<Ix4>().expect("rank-4 parameter")
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(F::zero());
        }
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: F, other: &Self) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    /// Global L2 norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| {
                let x = x.f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.mapv(|x| G::c(x.f64()))).collect(),
        }
    }

    pub fn shape(&self, p: Param) -> &[usize] {
        self.tensors[p.0].shape()
    }

    pub fn zeros(shape: &[usize]) -> ArrayD<F> {
        ArrayD::zeros(IxDyn(shape))
    }
}
