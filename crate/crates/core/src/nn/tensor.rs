use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;

/// Batch of planar feature maps, `n × c × h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Converts element type, e.g. `f32 → f64` for gradient checks.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { n: self.n, c: self.c, h: self.h, w: self.w, data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    /// Concatenates single-sample tensors along the batch axis.
    pub fn stack(items: &[&Self]) -> Self {
        let first = items[0];
        let mut data = Vec::with_capacity(items.len() * first.sample_len() * first.n);
        for t in items {
            assert_eq!([t.c, t.h, t.w], [first.c, first.h, first.w]);
            data.extend_from_slice(&t.data);
        }
        let n = items.iter().map(|t| t.n).sum();
        Self { n, c: first.c, h: first.h, w: first.w, data }
    }

    /// Per-pixel softmax over channels.
    pub fn softmax(&self) -> Self {
        let mut out = self.clone();
        let plane = self.plane();
        for s in 0..self.n {
            let d = out.sample_mut(s);
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for c in 0..self.c {
                    m = m.max(d[c * plane + p]);
                }
                let mut sum = T::zero();
                for c in 0..self.c {
                    let e = (d[c * plane + p] - m).exp();
                    d[c * plane + p] = e;
                    sum += e;
                }
                for c in 0..self.c {
                    d[c * plane + p] /= sum;
                }
            }
        }
        out
    }

    /// Per-pixel argmax over channels, first maximum wins.
    pub fn argmax(&self) -> Vec<usize> {
        let plane = self.plane();
        let mut out = Vec::with_capacity(self.n * plane);
        for s in 0..self.n {
            let d = self.sample(s);
            for p in 0..plane {
                let mut best = 0;
                for c in 1..self.c {
                    if d[c * plane + p] > d[best * plane + p] {
                        best = c;
                    }
                }
                out.push(best);
            }
        }
        out
    }
}
