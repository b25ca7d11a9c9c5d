//! Design-based inference for randomized experiments: finite populations of
//! potential outcomes, assignment mechanisms, the difference-in-means
//! estimator and its variances, an exact enumeration oracle, and a Monte
//! Carlo study harness.

pub mod config;
pub mod design;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod normal;
pub mod oracle;
pub mod population;
pub mod scalar;
pub mod study;

pub use design::{Assignment, Design, Layout, DEFAULT_CAP};
pub use error::{Error, Result};
pub use estimator::{estimate, observe, EstimateReport, ObservedData};
pub use model::{draw_population, model_moments, ModelMoments, SuperPopulationModel};
pub use oracle::{enumerate_moments, frt_exact, frt_monte_carlo, Enumerated, EnumerationReport, FrtStatistic};
pub use population::{summarize, FinitePopulation, Outcome, PopulationSummary, Unit};
pub use study::{run_study, StudyConfig, StudyMode, StudyReport, Target};

/// Runs `work` on a dedicated pool of `threads` workers, or on the ambient
/// rayon pool when `threads` is `None`.
pub fn with_workers<R: Send>(threads: Option<usize>, work: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(work()),
        Some(0) => Err(Error::Config("threads must be ≥ 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|pool| pool.install(work))
            .map_err(|e| Error::Config(format!("cannot start {k} workers: {e}"))),
    }
}
