//! Replication fan-out. With the `parallel` feature replications run on the
//! rayon pool; otherwise, or with [`Execution::Serial`], they run in order on
//! the calling thread. Results are always returned in replication order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
/// Without the `parallel` feature this just calls `f`.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let want: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(map_indexed(100, Execution::Serial, |i| i * i), want);
        assert_eq!(map_indexed(100, Execution::Parallel, |i| i * i), want);
        let pooled = with_threads(3, || map_indexed(100, Execution::Parallel, |i| i * i));
        assert_eq!(pooled, want);
    }
}
