//! Concurrent fitting of independent samples.

use rayon::prelude::*;

use super::{FitError, FitReport, Fitter};
use crate::likelihood::LandmarkObservation;

/// Outcome of one sample of a batch.
pub type BatchItem = (String, Result<FitReport, FitError>);

/// Fit every observation on at most `jobs` threads; results sorted by
/// `source_id`.
pub fn fit_batch(fitter: &Fitter, observations: &[LandmarkObservation], jobs: usize) -> Vec<BatchItem> {
    let work = |o: &LandmarkObservation| (o.source_id.clone(), fitter.fit(o));
    let mut out: Vec<BatchItem> = if jobs <= 1 {
        observations.iter().map(work).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).stack_size(16 << 20).build() {
            Ok(pool) => pool.install(|| observations.par_iter().map(work).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}), fitting sequentially");
                observations.iter().map(work).collect()
            }
        }
    };
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
