//! Data-parallel map over independent cells (seeds, ε values, probe points).
//!
//! With the `parallel` feature the map runs on the rayon pool; without it, or
//! with [`Execution::Sequential`], it is a plain iterator. Results keep input
//! order either way, so output is independent of the execution mode.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` only when the crate was built with the `parallel` feature.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

#[cfg(feature = "parallel")]
pub fn map_cells<T, R, F>(mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        Execution::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        Execution::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_cells<T, R, F>(_mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..257).collect();
        let f = |i: usize, v: &u64| (i as u64) * 1000 + v * v;
        let a = map_cells(Execution::Sequential, &items, f);
        let b = map_cells(Execution::Parallel, &items, f);
        assert_eq!(a, b);
        assert_eq!(a[3], 3009);
    }
}
