//! Order-preserving map over independent work items (videos, seeds).
//!
//! With the `parallel` feature the work runs on a rayon pool; without it,
//! every strategy runs sequentially.

/// How a batch of independent items is processed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Applies `f` to every item; results keep the input order.
    pub fn map<I, R, F>(self, items: Vec<I>, f: F) -> Vec<R>
    where
        I: Send,
        R: Send,
        F: Fn(I) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            _ => items.into_iter().map(f).collect(),
        }
    }
}

/// Runs `f` with a worker pool of `threads` workers, or the default pool
/// when `None`.
pub fn with_threads<R: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> crate::Result<R> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| {
                crate::Error::InvalidArgument(format!("cannot start {n} worker threads: {e}"))
            })?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(f())
}

/// Pulls up to `batch` items at a time from `items`, maps each batch with
/// `exec`, and hands results to `sink` in input order. Stops at the first
/// error, whether from the source, the mapping or the sink.
pub fn process_in_batches<I, R, F, S>(
    items: impl Iterator<Item = crate::Result<I>>,
    batch: usize,
    exec: Execution,
    f: F,
    mut sink: S,
) -> crate::Result<()>
where
    I: Send,
    R: Send,
    F: Fn(I) -> crate::Result<R> + Sync + Send,
    S: FnMut(R) -> crate::Result<()>,
{
    let mut items = items.peekable();
    let batch = batch.max(1);
    while items.peek().is_some() {
        let mut chunk = Vec::with_capacity(batch);
        let mut pending_err = None;
        for item in items.by_ref().take(batch) {
            match item {
                Ok(i) => chunk.push(i),
                Err(e) => {
                    pending_err = Some(e);
                    break;
                }
            }
        }
        for r in exec.map(chunk, &f) {
            sink(r?)?;
        }
        if let Some(e) = pending_err {
            return Err(e);
        }
    }
    Ok(())
}
