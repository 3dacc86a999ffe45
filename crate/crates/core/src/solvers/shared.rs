//! Lock-free shared state for the asynchronous solvers.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

/// An `f64` stored as its bit pattern in an `AtomicU64`.
///
/// Loads and stores never tear; `fetch_add` is a compare-and-swap loop. All
/// operations use relaxed ordering: the solvers tolerate stale reads and need
/// only per-coordinate atomicity.
#[derive(Debug, Default)]
pub struct AtomicF64 {
    bits: AtomicU64,
}

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64 {
            bits: AtomicU64::new(v.to_bits()),
        }
    }

    #[inline]
    pub fn load(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn store(&self, v: f64) {
        self.bits.store(v.to_bits(), Ordering::Relaxed);
    }

    #[inline]
    pub fn swap(&self, v: f64) -> f64 {
        f64::from_bits(self.bits.swap(v.to_bits(), Ordering::Relaxed))
    }

    /// Atomically adds `delta`, returning the previous value.
    #[inline]
    pub fn fetch_add(&self, delta: f64) -> f64 {
        let mut current = self.bits.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(current) + delta).to_bits();
            match self
                .bits
                .compare_exchange_weak(current, next, Ordering::Relaxed, Ordering::Relaxed)
            {
                Ok(prev) => return f64::from_bits(prev),
                Err(actual) => current = actual,
            }
        }
    }
}

/// Dense vector of [`AtomicF64`].
#[derive(Debug)]
pub struct AtomicVec(Vec<AtomicF64>);

impl AtomicVec {
    pub fn from_slice(values: &[f64]) -> Self {
        AtomicVec(values.iter().map(|&v| AtomicF64::new(v)).collect())
    }

    pub fn zeros(len: usize) -> Self {
        AtomicVec((0..len).map(|_| AtomicF64::new(0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize) -> &AtomicF64 {
        &self.0[k]
    }

    /// Coordinate-by-coordinate (inconsistent) read.
    pub fn read_into(&self, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.0) {
            *o = a.load();
        }
    }

    /// Inconsistent read of the listed coordinates.
    #[inline]
    pub fn gather_into(&self, indices: &[usize], out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(indices) {
            *o = self.0[k].load();
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().map(AtomicF64::load).collect()
    }

    pub fn store_all(&self, values: &[f64]) {
        for (a, &v) in self.0.iter().zip(values) {
            a.store(v);
        }
    }
}

/// The iterate `x`, the running average `x̄` and the inner-loop counter
/// shared by all workers of an asynchronous epoch.
#[derive(Debug)]
pub struct SharedIterate {
    pub x: AtomicVec,
    pub xbar: AtomicVec,
    counter: AtomicUsize,
}

impl SharedIterate {
    pub fn new(x0: &[f64]) -> Self {
        SharedIterate {
            x: AtomicVec::from_slice(x0),
            xbar: AtomicVec::zeros(x0.len()),
            counter: AtomicUsize::new(0),
        }
    }

    /// Claims the next inner-iteration label (1-based).
    #[inline]
    pub fn next_step(&self) -> usize {
        self.counter.fetch_add(1, Ordering::Relaxed) + 1
    }

    #[inline]
    pub fn steps_taken(&self) -> usize {
        self.counter.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.counter.store(0, Ordering::Relaxed);
    }

    pub fn zero_xbar(&self) {
        for k in 0..self.xbar.len() {
            self.xbar.get(k).store(0.0);
        }
    }

    pub fn copy_x_to_xbar(&self) {
        for k in 0..self.x.len() {
            self.xbar.get(k).store(self.x.get(k).load());
        }
    }
}
