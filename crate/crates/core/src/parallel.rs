//! Index-ordered parallel map with a sequential fallback.
//!
//! Every sweep in the crate (grid points, feasibility-map cells, batch
//! validation queries) is an independent map over an index range whose
//! results are merged in index order, so both execution modes produce
//! identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for data-parallel sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Rayon work-stealing when the `parallel` feature is compiled in,
    /// otherwise identical to [`Exec::Sequential`].
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// Whether this mode actually runs on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..len`, returning results in index order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Like [`Exec::map`] for fallible work. The reported error is the one
    /// with the lowest index in both modes.
    pub fn try_map<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        if self.is_parallel() {
            return self.map(len, f).into_iter().collect();
        }
        (0..len).map(f).collect()
    }
}
