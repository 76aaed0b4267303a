//! Data-parallel helpers with a sequential fallback.
//!
//! Every sweep in the crate funnels through [`map`], so switching between rayon
//! and the calling thread is a runtime choice ([`Execution`]) as well as a
//! compile-time one (the `parallel` feature). Results are always returned in
//! input order, which keeps downstream reductions independent of scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over owned chunks. Each chunk is processed
/// sequentially by `f` so it can carry state (e.g. a solver warm start) from
/// one element to the next; chunks themselves run concurrently.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Vec<R> + Sync + Send,
{
    let chunk = chunk.max(1);
    let chunks: Vec<&[T]> = items.chunks(chunk).collect();
    map(exec, &chunks, |c| f(c)).into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map(Execution::Sequential, &xs, |x| x * x);
        let par = map(Execution::Parallel, &xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }

    #[test]
    fn chunks_flatten_in_order() {
        let xs: Vec<usize> = (0..103).collect();
        let out = map_chunks(Execution::Parallel, &xs, 10, |c| c.iter().map(|x| x + 1).collect());
        assert_eq!(out, (1..104).collect::<Vec<_>>());
    }
}
