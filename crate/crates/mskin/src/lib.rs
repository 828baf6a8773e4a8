//! Scenario files, runs and verification suites for the `mskin` binary.

pub mod config;
pub mod scenario;
pub mod verify;

pub use config::{parse_config, parse_config_str, ConfigError, Mode, ScenarioConfig};
pub use scenario::{run_scenario, RunError, RunManifest};
pub use verify::{verify_all, Status, Summary};

/// Build the global rayon pool, capped by `MSKIN_THREADS` when set.
pub fn init_threads() {
    let n = std::env::var("MSKIN_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()).filter(|n| *n > 0);
    if let Some(n) = n {
        // a second call (tests) finds the pool already built; that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
