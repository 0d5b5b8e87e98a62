use crate::error::{Error, Result};

/// How realizations are distributed. Both modes give bit-identical results:
/// realizations are computed independently and folded in index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon data parallelism; `workers: None` uses the global pool.
    /// Without the `parallel` feature this runs sequentially.
    #[default]
    Parallel,
    Workers(usize),
}

#[cfg(feature = "parallel")]
fn collect<F>(n: usize, exec: Execution, f: &F) -> Result<Vec<Result<Vec<f64>>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    use rayon::prelude::*;
    match exec {
        Execution::Sequential => Ok((0..n).map(f).collect()),
        Execution::Parallel => Ok((0..n).into_par_iter().map(f).collect()),
        Execution::Workers(w) => {
            if w == 0 {
                return Err(Error::invalid("worker count must be at least 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn collect<F>(n: usize, exec: Execution, f: &F) -> Result<Vec<Result<Vec<f64>>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    if exec == Execution::Workers(0) {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    Ok((0..n).map(f).collect())
}

/// Mean and standard error over `n` realizations of a per-realization trace.
///
/// `f(i)` must depend only on `i`. Every trace must have the same length.
pub fn ensemble_average<F>(n: usize, exec: Execution, f: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("need at least one realization"));
    }
    let traces = collect(n, exec, &f)?;
    // Welford, in index order.
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for (i, t) in traces.into_iter().enumerate() {
        let t = t.map_err(|e| Error::Realization { index: i, source: Box::new(e) })?;
        if i == 0 {
            mean = vec![0.0; t.len()];
            m2 = vec![0.0; t.len()];
        } else if t.len() != mean.len() {
            return Err(Error::Realization {
                index: i,
                source: Box::new(Error::invalid(format!("trace length {} differs from {}", t.len(), mean.len()))),
            });
        }
        let k = (i + 1) as f64;
        for (j, &x) in t.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Realization { index: i, source: Box::new(Error::numeric(format!("non-finite value at point {j}"))) });
            }
            let d = x - mean[j];
            mean[j] += d / k;
            m2[j] += d * (x - mean[j]);
        }
    }
    let stderr = if n > 1 { m2.iter().map(|s| (s / (n - 1) as f64 / n as f64).sqrt()).collect() } else { vec![0.0; mean.len()] };
    Ok((mean, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(i: usize) -> Result<Vec<f64>> {
        Ok((0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 * 0.1 + (i as f64).sin()).collect())
    }

    #[test]
    fn modes_agree_bitwise() {
        let seq = ensemble_average(37, Execution::Sequential, trace).unwrap();
        for exec in [Execution::Parallel, Execution::Workers(1), Execution::Workers(3)] {
            assert_eq!(ensemble_average(37, exec, trace).unwrap(), seq);
        }
    }

    #[test]
    fn matches_two_pass_statistics() {
        let n = 37;
        let (mean, se) = ensemble_average(n, Execution::Sequential, trace).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| trace(i).unwrap()).collect();
        for j in 0..4 {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean[j] - m).abs() < 1e-14);
            assert!((se[j] - (var / n as f64).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn failure_names_the_realization() {
        let err = ensemble_average(5, Execution::Sequential, |i| if i == 3 { Err(Error::numeric("boom")) } else { trace(i) })
            .unwrap_err();
        assert!(matches!(err, Error::Realization { index: 3, .. }));
        let err = ensemble_average(3, Execution::Sequential, |i| Ok(vec![0.0; i + 1])).unwrap_err();
        assert!(matches!(err, Error::Realization { index: 1, .. }));
        assert!(ensemble_average(0, Execution::Sequential, trace).is_err());
        assert!(ensemble_average(2, Execution::Workers(0), trace).is_err());
    }

    #[test]
    fn single_realization_has_zero_error() {
        let (m, s) = ensemble_average(1, Execution::Parallel, trace).unwrap();
        assert_eq!(m, trace(0).unwrap());
        assert!(s.iter().all(|&x| x == 0.0));
    }
}
