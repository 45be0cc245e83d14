//! Parallel / sequential execution switch.
//!
//! With the `parallel` feature the index maps below run on the rayon pool
//! unless [`set`] selected [`Exec::Sequential`]. Without the feature every
//! map is sequential. Results are collected in index order either way, so
//! outputs do not depend on the mode.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Parallel,
    Sequential,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn set(mode: Exec) {
    MODE.store(if mode == Exec::Parallel { 0 } else { 1 }, Ordering::Relaxed);
}

pub fn current() -> Exec {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 0 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if current() == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}
