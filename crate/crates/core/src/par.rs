//! Execution policy for the data-parallel kernels.
//!
//! With the `parallel` feature the kernels fan out over rayon's pool;
//! without it every policy runs sequentially. Kernels only parallelize over
//! independent output elements, each reduced in a fixed order, so results are
//! bitwise identical across policies and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    /// Rayon data parallelism; sequential when the feature is disabled.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Fill `out[i] = f(i)`.
pub(crate) fn fill_indexed<F>(exec: Execution, out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_iter_mut()
            .with_min_len(256)
            .enumerate()
            .for_each(|(i, o)| *o = f(i));
        return;
    }
    let _ = exec;
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}

/// Order-preserving map over a slice of independent work items.
pub fn map_items<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Cap the global worker pool. Must run before any parallel kernel; a no-op
/// without the `parallel` feature.
pub fn configure_workers(n: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::Config(format!("worker pool: {e}")))?;
    }
    let _ = n;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let mut a = vec![0.0; 1000];
        let mut b = vec![0.0; 1000];
        fill_indexed(Execution::Sequential, &mut a, |i| (i as f64).sqrt());
        fill_indexed(Execution::Parallel, &mut b, |i| (i as f64).sqrt());
        assert_eq!(a, b);
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(
            map_items(Execution::Parallel, &items, |x| x * 2),
            map_items(Execution::Sequential, &items, |x| x * 2)
        );
    }
}
