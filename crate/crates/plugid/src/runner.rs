//! Parallel dataset generation and experiment runs.
//!
//! Work items are independent and seeded by position, so results are
//! collected in index order and reduced sequentially. The thread count never
//! affects the output.

use plugid_core::dataset::{generate_sample, SimContext};
use plugid_core::eval::{
    EvalError, EvalReport, MotReport, OmissionReport, Prepared, RunScores,
};
use plugid_core::{Catalog, Dataset, DatasetError, DatasetSpec, DimmingSchedule, SupplyConfig};
use rayon::prelude::*;

pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    /// `jobs == 0` uses every available core.
    pub fn new(jobs: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool starts");
        Runner { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Evaluates `f` on `0..n` in parallel, returning results by index or the
    /// lowest-indexed error.
    pub fn ordered<T: Send, E: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<T, E> + Sync,
    ) -> Result<Vec<T>, E> {
        let results: Vec<Result<T, E>> =
            self.pool.install(|| (0..n).into_par_iter().map(&f).collect());
        results.into_iter().collect()
    }

    pub fn generate(
        &self,
        spec: &DatasetSpec,
        catalog: &Catalog,
        supply: &SupplyConfig,
        schedule: &DimmingSchedule,
    ) -> Result<Dataset, DatasetError> {
        spec.validate()?;
        catalog.validate()?;
        let ctx = SimContext {
            catalog,
            supply,
            schedule,
            drift_interval: spec.drift_interval,
        };
        let jobs = spec.jobs();
        let samples = self.ordered(jobs.len(), |i| generate_sample(&jobs[i], &ctx))?;
        Ok(Dataset { samples })
    }

    fn runs(
        &self,
        p: &Prepared<'_>,
        f: fn(&Prepared<'_>, usize) -> Result<RunScores, EvalError>,
    ) -> Result<EvalReport, EvalError> {
        let runs = self.ordered(p.settings.runs, |r| f(p, r))?;
        Ok(EvalReport::from_runs(&runs))
    }

    pub fn e1(&self, p: &Prepared<'_>) -> Result<EvalReport, EvalError> {
        self.runs(p, |p, r| p.e1_run(r))
    }

    pub fn e2(&self, p: &Prepared<'_>) -> Result<EvalReport, EvalError> {
        self.runs(p, |p, r| p.e2_run(r))
    }

    /// Every (omitted combination, run) pair is one work item.
    pub fn e3(&self, p: &Prepared<'_>) -> Result<OmissionReport, EvalError> {
        let targets = p.omission_targets()?;
        let per = p.settings.omit_runs_per_combo;
        let mut flat = self
            .ordered(targets.len() * per, |i| p.omit_run(&targets[i / per], i % per))?
            .into_iter();
        let rows = targets
            .into_iter()
            .map(|c| (c, flat.by_ref().take(per).collect()))
            .collect();
        Ok(OmissionReport::from_runs(rows))
    }

    pub fn mot(&self, p: &Prepared<'_>) -> Result<MotReport, EvalError> {
        let runs = self.ordered(p.settings.runs, |r| p.mot_run(r))?;
        Ok(MotReport::from_runs(&runs))
    }
}
