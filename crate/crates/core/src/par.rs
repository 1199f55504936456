//! Data-parallel helpers with a sequential fallback.
//!
//! All helpers preserve input order, so reductions done over their output
//! are bit-identical whichever mode produced it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    /// Rayon work-stealing pool. Runs sequentially when the `parallel`
    /// feature is disabled.
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sequential" | "seq" => Some(Parallelism::Sequential),
            "rayon" | "parallel" => Some(Parallelism::Rayon),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parallelism::Sequential => "sequential",
            Parallelism::Rayon => "rayon",
        }
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps fixed-size chunks of `items`. Chunk boundaries depend only on
    /// `chunk`, never on the thread count.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => {
                use rayon::prelude::*;
                items.par_chunks(chunk).map(f).collect()
            }
            _ => items.chunks(chunk).map(f).collect(),
        }
    }
}
