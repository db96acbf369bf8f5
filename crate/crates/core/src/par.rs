//! Execution policy for element loops.
//!
//! Every parallel map collects results in index order; callers reduce the
//! collected values sequentially. Switching policy therefore never changes
//! the floating-point result.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items the parallel policy runs sequentially anyway.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    #[cfg(feature = "parallel")]
    fn parallel_for(self, len: usize) -> bool {
        self == Exec::Parallel && len >= MIN_PARALLEL_LEN
    }

    /// `(0..n).map(f).collect()`, possibly on the rayon pool.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel_for(n) {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fills `out[i] = f(i)`.
    pub fn fill<R, F>(self, out: &mut [R], f: F)
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel_for(out.len()) {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let seq = Exec::Sequential.map_range(1000, |i| (i as f64).sqrt());
        let par = Exec::Parallel.map_range(1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        let mut a = vec![0.0; 700];
        let mut b = vec![0.0; 700];
        Exec::Sequential.fill(&mut a, |i| i as f64 * 0.5);
        Exec::Parallel.fill(&mut b, |i| i as f64 * 0.5);
        assert_eq!(a, b);
    }
}
