//! Local Lagrange interpolation on rectilinear grids.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Strictly increasing sample coordinates along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis<T> {
    nodes: Vec<T>,
}

impl<T: Real> Axis<T> {
    pub fn new(nodes: Vec<T>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invariant("axis", "needs at least one node"));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::invariant("axis", "nodes must be finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invariant("axis", "nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    /// `n` evenly spaced nodes on `[a, b]`; a single node sits at `a`.
    pub fn uniform(a: T, b: T, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invariant("axis", "needs at least one node"));
        }
        if n == 1 {
            return Self::new(vec![a]);
        }
        let h = (b - a) / lit::<T>((n - 1) as f64);
        Self::new((0..n).map(|i| a + h * lit::<T>(i as f64)).collect())
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// An axis with one node is treated as an invariant direction.
    pub fn is_invariant(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn first(&self) -> T {
        self.nodes[0]
    }

    pub fn last(&self) -> T {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn contains(&self, x: T) -> bool {
        if self.is_invariant() {
            return x.is_finite();
        }
        let slack = (self.last() - self.first()) * lit::<T>(1e-12);
        x >= self.first() - slack && x <= self.last() + slack
    }

    /// Index `i` of the interval `[x_i, x_{i+1}]` holding `x`.
    fn interval(&self, x: T) -> usize {
        let n = self.nodes.len();
        match self
            .nodes
            .binary_search_by(|p| p.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Lagrange stencil of the requested polynomial order around `x`.
    pub fn stencil(&self, x: T, order: usize) -> Option<(usize, Vec<T>)> {
        if !self.contains(x) {
            return None;
        }
        if self.is_invariant() {
            return Some((0, vec![T::one()]));
        }
        let n = self.nodes.len();
        let width = (order + 1).min(n);
        let i = self.interval(x);
        let start = i.saturating_sub((width - 1).saturating_sub(1) / 2).min(n - width);
        let pts = &self.nodes[start..start + width];
        let w = pts
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                pts.iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .fold(T::one(), |acc, (_, &xm)| acc * (x - xm) / (xj - xm))
            })
            .collect();
        Some((start, w))
    }
}

/// Samples on a tensor product of axes, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid<T> {
    axes: Vec<Axis<T>>,
    strides: Vec<usize>,
    order: usize,
}

/// Precomputed interpolation weights at one query point.
#[derive(Debug, Clone)]
pub struct Weights<T> {
    offsets: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Real> Weights<T> {
    pub fn apply(&self, values: &[T]) -> T {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(&o, &w)| w * values[o])
            .sum()
    }
}

impl<T: Real> TensorGrid<T> {
    pub fn new(axes: Vec<Axis<T>>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invariant("order", "interpolation order must be at least 1"));
        }
        let mut strides = vec![1; axes.len()];
        for d in (0..axes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].len();
        }
        Ok(Self { axes, strides, order })
    }

    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Multi-index of a flat offset.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let i = flat / s;
                flat %= s;
                i
            })
            .collect()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn contains(&self, p: &[T]) -> bool {
        p.len() == self.axes.len() && self.axes.iter().zip(p).all(|(a, &x)| a.contains(x))
    }

    pub fn weights(&self, p: &[T]) -> Option<Weights<T>> {
        if p.len() != self.axes.len() {
            return None;
        }
        let mut offsets = vec![0usize];
        let mut weights = vec![T::one()];
        for (d, (axis, &x)) in self.axes.iter().zip(p).enumerate() {
            let (start, w) = axis.stencil(x, self.order)?;
            let mut no = Vec::with_capacity(offsets.len() * w.len());
            let mut nw = Vec::with_capacity(offsets.len() * w.len());
            for (&o, &ow) in offsets.iter().zip(&weights) {
                for (k, &wk) in w.iter().enumerate() {
                    no.push(o + (start + k) * self.strides[d]);
                    nw.push(ow * wk);
                }
            }
            offsets = no;
            weights = nw;
        }
        Some(Weights { offsets, weights })
    }

    pub fn interpolate(&self, values: &[T], p: &[T]) -> Option<T> {
        self.weights(p).map(|w| w.apply(values))
    }
}
