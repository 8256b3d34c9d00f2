//! Figure presets and the Monte Carlo driver.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{aggregate, cdf_rows, emit_plot_data, write_csv, RawRow, AGG_HEADER, CDF_HEADER, RAW_HEADER};
use super::trial::{run_on, TrialResult};
use crate::algorithms::{compute_delta, Algorithm, EfficiencyProfile, Traffic};
use crate::error::{Error, Result};
use crate::scenario::{sample_realization, BlockageMode, SystemConfig};

/// Environment variable holding the work-pool size (0 or unset: one thread per core).
pub const THREADS_ENV: &str = "COOPSPLIT_THREADS";

pub const DESK_TRIALS: usize = 30;
pub const FIG4_GRID: [f64; 6] = [0.1, 0.2, 0.3, 0.5, 0.7, 0.9];

/// Parameter on the x-axis of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Number of mUEs.
    K,
    /// ECO hyperparameter.
    S,
    /// Number of blocks.
    T,
    /// Blockage probability.
    P,
    /// Frameworks compared over the number of mUEs; variants select the traffic.
    Framework,
}

impl SweepVariable {
    pub fn apply(self, config: &mut SystemConfig, x: f64) -> Result<()> {
        let count = |x: f64| {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::InvalidConfig(format!("{self:?} grid value {x} is not a positive integer")))
            }
        };
        match self {
            SweepVariable::K | SweepVariable::Framework => config.n_mues = count(x)?,
            SweepVariable::T => config.n_blocks = count(x)?,
            SweepVariable::S => config.eco_s = x,
            SweepVariable::P => config.blockage_p = x,
        }
        Ok(())
    }

    /// Whether results of `algorithm` change along this sweep.
    pub fn affects(self, algorithm: Algorithm) -> bool {
        self != SweepVariable::S || algorithm == Algorithm::Eco
    }
}

/// Per-curve modification applied on top of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Blockage(BlockageMode),
    Traffic(Traffic),
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Blockage(BlockageMode::Independent) => "ind",
            Variant::Blockage(BlockageMode::DistanceDependent) => "dep",
            Variant::Traffic(Traffic::Full) => "full",
            Variant::Traffic(Traffic::MueOnly) => "ma",
            Variant::Traffic(Traffic::DueOnly) => "re",
        }
    }

    pub fn apply(self, config: &mut SystemConfig) {
        match self {
            Variant::Base => {}
            Variant::Blockage(mode) => config.blockage_mode = mode,
            Variant::Traffic(traffic) => {
                let (mue, due) = traffic.demands(config);
                config.throughput_mue = mue.first().copied().unwrap_or(0.0);
                config.throughput_due = due;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    /// Figure id used for the series files.
    pub name: String,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    pub variants: Vec<Variant>,
    pub algorithms: Vec<Algorithm>,
    /// Fixed parameters; the sweep and variants override their fields.
    pub base: SystemConfig,
    pub trials: usize,
    /// Trial `i` uses seed `seed + i` at every grid point.
    pub seed: u64,
}

const FOUR: [Algorithm; 4] = [Algorithm::Genie, Algorithm::Eco, Algorithm::Edt, Algorithm::Crs];

impl ExperimentPreset {
    /// Desk-scale preset for a figure id (`fig3` … `fig7`) on top of `base`.
    pub fn named(name: &str, base: SystemConfig) -> Result<Self> {
        let preset = |sweep, grid: &[f64], variants: Vec<Variant>, algorithms: &[Algorithm]| Self {
            name: name.to_string(),
            sweep,
            grid: grid.to_vec(),
            variants,
            algorithms: algorithms.to_vec(),
            base: base.clone(),
            trials: DESK_TRIALS,
            seed: base.seed,
        };
        let blockage = vec![
            Variant::Blockage(BlockageMode::Independent),
            Variant::Blockage(BlockageMode::DistanceDependent),
        ];
        let p = match name {
            "fig3" => preset(SweepVariable::K, &[2.0, 3.0, 4.0], blockage, &FOUR),
            "fig4" => preset(SweepVariable::S, &FIG4_GRID, vec![Variant::Base], &FOUR),
            "fig5" => preset(SweepVariable::T, &[6.0, 10.0, 14.0], vec![Variant::Base], &FOUR),
            "fig6" => preset(SweepVariable::P, &[0.1, 0.3, 0.5], vec![Variant::Base], &FOUR),
            "fig7" => {
                let mut p = preset(
                    SweepVariable::Framework,
                    &[2.0, 3.0, 4.0],
                    [Traffic::Full, Traffic::MueOnly, Traffic::DueOnly].map(Variant::Traffic).to_vec(),
                    &[Algorithm::Genie, Algorithm::DecrsGenie],
                );
                p.base.throughput_mue = 20.0;
                p.base.throughput_due = 5.0;
                p
            }
            _ => return Err(Error::Usage(format!("unknown preset '{name}'"))),
        };
        p.validate()?;
        Ok(p)
    }

    /// A single grid point at the scenario's own K.
    pub fn custom(base: SystemConfig) -> Result<Self> {
        let p = Self {
            name: "custom".into(),
            sweep: SweepVariable::K,
            grid: vec![base.n_mues as f64],
            variants: vec![Variant::Base],
            algorithms: FOUR.to_vec(),
            trials: DESK_TRIALS,
            seed: base.seed,
            base,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn config_for(&self, x: f64, variant: Variant) -> Result<SystemConfig> {
        let mut config = self.base.clone();
        config.seed = self.seed;
        self.sweep.apply(&mut config, x)?;
        variant.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("preset {}: {m}", self.name)));
        if self.grid.is_empty() {
            return fail("empty grid");
        }
        if self.variants.is_empty() {
            return fail("no variants");
        }
        if self.algorithms.is_empty() {
            return fail("no algorithms");
        }
        if self.trials == 0 {
            return fail("zero trials");
        }
        for &x in &self.grid {
            for &v in &self.variants {
                self.config_for(x, v)?;
            }
        }
        Ok(())
    }
}

/// One trial of one algorithm at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub x: f64,
    pub variant: Variant,
    /// ECO-UP bound of the grid point for ECO rows.
    pub eco_bound: Option<f64>,
    pub result: TrialResult,
}

impl TrialRecord {
    pub fn raw_row(&self) -> RawRow {
        let r = &self.result;
        RawRow {
            x: self.x,
            variant: self.variant.label().to_string(),
            seed: r.seed,
            algorithm: r.algorithm.id().to_string(),
            energy_j: r.energy_j,
            feasible: r.feasible,
            flush_share: r.flush_share,
            delivered_mue: r.delivered_mue.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            delivered_due: r.delivered_due,
            sca_iterations: r.total_iterations(),
            max_violation: r.max_violation,
            eco_skips: r.eco_skips,
            failed_blocks: r.failed_blocks.len(),
            eco_bound_j: self.eco_bound,
            reason: r.reason.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub preset: ExperimentPreset,
    /// Ordered by (grid value, seed, variant, algorithm).
    pub records: Vec<TrialRecord>,
}

impl PresetRun {
    pub fn raw_rows(&self) -> Vec<RawRow> {
        self.records.iter().map(TrialRecord::raw_row).collect()
    }

    /// Records of one curve.
    pub fn curve(&self, x: f64, variant: Variant, algorithm: Algorithm) -> Vec<&TrialResult> {
        self.records
            .iter()
            .filter(|r| r.x == x && r.variant == variant && r.result.algorithm == algorithm)
            .map(|r| &r.result)
            .collect()
    }

    /// Writes `raw.csv`, `agg.csv`, `cdf.csv` (s-sweeps) and the figure's series files.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let raw = self.raw_rows();
        let mut files = vec![dir.join("raw.csv"), dir.join("agg.csv")];
        write_csv(&files[0], &raw, &RAW_HEADER)?;
        write_csv(&files[1], &aggregate(&raw), &AGG_HEADER)?;
        if self.preset.sweep == SweepVariable::S {
            let path = dir.join("cdf.csv");
            write_csv(&path, &cdf_rows(&raw, Algorithm::Eco.id()), &CDF_HEADER)?;
            files.push(path);
        }
        files.extend(emit_plot_data(&raw, &self.preset.name, dir)?);
        Ok(files)
    }
}

/// Work pool sized by [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build work pool: {e}")))
}

/// Δ is independent of s, so calibrations are keyed by the config with s masked.
fn calibration_key(config: &SystemConfig) -> String {
    let mut c = config.clone();
    c.eco_s = 1.0;
    serde_json::to_string(&c).expect("config serializes")
}

/// Runs every grid point, variant and trial of `preset` in the work pool.
///
/// Algorithms that the sweep does not affect run once per trial and are reported at every
/// grid point. Trial failures are recorded in the rows, never raised.
pub fn run_preset(preset: &ExperimentPreset) -> Result<PresetRun> {
    preset.validate()?;
    let pool = thread_pool()?;
    let mut points = Vec::new();
    for (xi, &x) in preset.grid.iter().enumerate() {
        for (vi, &variant) in preset.variants.iter().enumerate() {
            points.push((xi, x, vi, variant, preset.config_for(x, variant)?));
        }
    }

    let mut deltas: HashMap<String, std::result::Result<f64, String>> = HashMap::new();
    if preset.algorithms.contains(&Algorithm::Eco) {
        let mut unique: Vec<(String, SystemConfig)> = Vec::new();
        for (.., config) in &points {
            let key = calibration_key(config);
            if !unique.iter().any(|(k, _)| *k == key) {
                unique.push((key, config.clone()));
            }
        }
        let found: Vec<_> = pool.install(|| {
            unique
                .par_iter()
                .map(|(key, config)| {
                    log::info!("calibrating Δ for K = {}, T = {}, p = {}", config.n_mues, config.n_blocks, config.blockage_p);
                    let delta = compute_delta(config, config.calibration_trials).map(|p| p.delta);
                    (key.clone(), delta.map_err(|e| e.to_string()))
                })
                .collect()
        });
        deltas.extend(found);
    }
    let profile_for = |config: &SystemConfig| -> std::result::Result<EfficiencyProfile, String> {
        let delta = deltas
            .get(&calibration_key(config))
            .cloned()
            .unwrap_or_else(|| Err("Δ was not calibrated".into()))?;
        EfficiencyProfile::new(delta, config.eco_s, config.total_demand()).map_err(|e| e.to_string())
    };

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..preset.trials).map(move |i| (p, preset.seed.wrapping_add(i as u64))))
        .collect();
    let results: Vec<Vec<TrialRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, seed)| {
                let (xi, x, _, variant, ref config) = points[p];
                let (_, channels) = sample_realization(config, seed);
                let profile = if preset.algorithms.contains(&Algorithm::Eco) {
                    profile_for(config)
                } else {
                    Err(String::new())
                };
                preset
                    .algorithms
                    .iter()
                    .filter(|&&a| xi == 0 || preset.sweep.affects(a))
                    .map(|&a| {
                        let result = match (a, &profile) {
                            (Algorithm::Eco, Err(reason)) => {
                                TrialResult::failed(seed, a, channels.noise_power, reason.clone(), Duration::ZERO)
                            }
                            (Algorithm::Eco, Ok(pr)) => run_on(config, a, seed, &channels, Some(pr)),
                            _ => run_on(config, a, seed, &channels, None),
                        };
                        let eco_bound = (a == Algorithm::Eco).then(|| profile.as_ref().ok().map(|p| p.bound)).flatten();
                        TrialRecord { x, variant, eco_bound, result }
                    })
                    .collect()
            })
            .collect()
    });

    let mut records: Vec<(usize, usize, TrialRecord)> = Vec::new();
    for (&(p, _), recs) in jobs.iter().zip(results) {
        let (xi, _, vi, ..) = points[p];
        records.extend(recs.into_iter().map(|r| (xi, vi, r)));
    }
    let copies: Vec<(usize, usize, TrialRecord)> = records
        .iter()
        .filter(|(xi, _, r)| *xi == 0 && !preset.sweep.affects(r.result.algorithm))
        .flat_map(|(_, vi, r)| {
            preset.grid.iter().enumerate().skip(1).map(move |(xj, &x)| (xj, *vi, TrialRecord { x, ..r.clone() }))
        })
        .collect();
    records.extend(copies);
    let rank = |a: Algorithm| Algorithm::ALL.iter().position(|&b| b == a);
    records.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.2.result.seed.cmp(&b.2.result.seed))
            .then(a.1.cmp(&b.1))
            .then(rank(a.2.result.algorithm).cmp(&rank(b.2.result.algorithm)))
    });
    Ok(PresetRun { preset: preset.clone(), records: records.into_iter().map(|(.., r)| r).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_preset() -> ExperimentPreset {
        let base = SystemConfig {
            n_mues: 2,
            n_blocks: 3,
            throughput_mue: 2.0,
            throughput_due: 0.5,
            eco_delta: Some(1e6),
            ..SystemConfig::default()
        };
        let mut p = ExperimentPreset::named("fig4", base).unwrap();
        p.grid = vec![0.2, 0.7];
        p.trials = 2;
        p
    }

    #[test]
    fn named_presets_validate() {
        for name in ["fig3", "fig4", "fig5", "fig6", "fig7"] {
            let p = ExperimentPreset::named(name, SystemConfig::default()).unwrap();
            assert_eq!(p.trials, DESK_TRIALS);
        }
        let fig3 = ExperimentPreset::named("fig3", SystemConfig::default()).unwrap();
        assert_eq!(fig3.variants.len() * fig3.algorithms.len(), 8);
        assert!(ExperimentPreset::named("fig8", SystemConfig::default()).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut p = ExperimentPreset::named("fig5", SystemConfig::default()).unwrap();
        p.grid.clear();
        assert!(matches!(p.validate(), Err(Error::InvalidConfig(_))));
        p.grid = vec![2.5];
        assert!(p.validate().is_err());
    }

    #[test]
    fn traffic_variants_zero_demands() {
        let p = ExperimentPreset::named("fig7", SystemConfig::default()).unwrap();
        let ma = p.config_for(3.0, Variant::Traffic(Traffic::MueOnly)).unwrap();
        assert_eq!((ma.n_mues, ma.throughput_mue, ma.throughput_due), (3, 20.0, 0.0));
        let re = p.config_for(2.0, Variant::Traffic(Traffic::DueOnly)).unwrap();
        assert_eq!((re.throughput_mue, re.throughput_due), (0.0, 5.0));
    }

    #[test]
    fn s_sweep_copies_unaffected_algorithms() {
        let run = run_preset(&tiny_preset()).unwrap();
        assert_eq!(run.records.len(), 2 * 2 * 4);
        let edt = |x| run.curve(x, Variant::Base, Algorithm::Edt)[0].clone();
        assert_eq!(edt(0.2), edt(0.7));
        let eco = run.curve(0.2, Variant::Base, Algorithm::Eco);
        assert!(eco.iter().all(|r| r.feasible), "{eco:?}");
        let seeds: Vec<u64> = run.records.iter().map(|r| r.result.seed).collect();
        assert_eq!(&seeds[..8], &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn output_is_deterministic_and_recomputable() {
        let preset = tiny_preset();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = run_preset(&preset).unwrap().write(a.path()).unwrap();
        run_preset(&preset).unwrap().write(b.path()).unwrap();
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
        }
        let raw = super::super::output::read_raw(a.path().join("raw.csv")).unwrap();
        let mut agg = csv::Reader::from_path(a.path().join("agg.csv")).unwrap();
        for row in agg.deserialize::<super::super::output::AggRow>() {
            let row = row.unwrap();
            let e: Vec<f64> = raw
                .iter()
                .filter(|r| r.x == row.x && r.algorithm == row.algorithm && r.feasible)
                .map(|r| r.energy_j)
                .collect();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            assert!((mean - row.mean_energy_j).abs() <= 1e-12 * mean.abs());
        }
        assert!(a.path().join("cdf.csv").exists());
        assert!(a.path().join("fig4b_eco_up.csv").exists());
    }
}
