//! Data-parallel helpers.
//!
//! Every batch loop in the crate (study cells, random-instance sweeps,
//! brute-force grids) goes through [`Execution`]. With the `parallel`
//! feature the `Parallel` variant fans out on the rayon pool; without it
//! both variants run sequentially on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Minimum of `f` over `0..n` by a total order on the key; ties go to the
    /// lowest index so the result does not depend on scheduling.
    pub fn argmin_range<F>(self, n: usize, f: F) -> Option<(usize, f64)>
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let pick = |a: (usize, f64), b: (usize, f64)| {
            match a.1.total_cmp(&b.1) {
                std::cmp::Ordering::Less => a,
                std::cmp::Ordering::Greater => b,
                std::cmp::Ordering::Equal => {
                    if a.0 <= b.0 {
                        a
                    } else {
                        b
                    }
                }
            }
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n)
                .into_par_iter()
                .map(|i| (i, f(i)))
                .reduce_with(pick);
        }
        (0..n).map(|i| (i, f(i))).reduce(pick)
    }
}

/// Size the global worker pool. Only the first call has an effect.
pub fn init_workers(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Execution::Sequential.map(&xs, |x| x * x);
        let b = Execution::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
    }

    #[test]
    fn argmin_prefers_lowest_index_on_ties() {
        let f = |i: usize| if i % 7 == 3 { -1.0 } else { i as f64 };
        assert_eq!(Execution::Parallel.argmin_range(100, f), Some((3, -1.0)));
        assert_eq!(Execution::Sequential.argmin_range(100, f), Some((3, -1.0)));
        assert_eq!(Execution::Sequential.argmin_range(0, f), None);
    }
}
