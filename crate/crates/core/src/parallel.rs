//! Deterministic fan-out over independent work items.
//!
//! Results are keyed by index and concatenated in order, so the output is
//! identical regardless of worker count; `jobs = 1` runs everything on the
//! calling thread.

/// Map `f` over `0..n`, optionally across `jobs` worker threads.
pub fn par_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let chunk = n.div_ceil(jobs);
    let mut out = Vec::with_capacity(n);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(jobs);
        for w in 0..jobs {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n);
            handles.push(scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>()));
        }
        for h in handles {
            out.extend(h.join().expect("parallel worker panicked"));
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_across_job_counts() {
        let serial = par_map(100, 1, |i| i * i);
        for jobs in [2, 3, 8, 100] {
            assert_eq!(par_map(100, jobs, |i| i * i), serial);
        }
    }

    #[test]
    fn empty_input_is_fine() {
        let out: Vec<usize> = par_map(0, 4, |i| i);
        assert!(out.is_empty());
    }
}
