//! CSV tables, aggregates and plot-ready series files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::Algorithm;
use crate::error::{Error, Result};

/// One line of `raw.csv`: one algorithm on one trial at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub x: f64,
    pub variant: String,
    pub seed: u64,
    pub algorithm: String,
    pub energy_j: f64,
    pub feasible: bool,
    pub flush_share: f64,
    /// Per-mUE delivered throughput joined by `;`.
    pub delivered_mue: String,
    pub delivered_due: f64,
    pub sca_iterations: usize,
    pub max_violation: f64,
    pub eco_skips: usize,
    pub failed_blocks: usize,
    /// ECO-UP energy bound of the grid point (ECO rows only).
    pub eco_bound_j: Option<f64>,
    pub reason: String,
}

/// One line of `agg.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub x: f64,
    pub variant: String,
    pub algorithm: String,
    pub trials: usize,
    pub feasible_trials: usize,
    pub exclusion_rate: f64,
    /// Means and quantiles are over feasible trials only.
    pub mean_energy_j: f64,
    pub median_energy_j: f64,
    pub q1_energy_j: f64,
    pub q3_energy_j: f64,
    pub mean_flush_share: f64,
    pub eco_up_j: Option<f64>,
}

/// One line of `cdf.csv`: a sorted sample with its empirical probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub x: f64,
    pub variant: String,
    pub algorithm: String,
    pub energy_j: f64,
    pub probability: f64,
}

fn algorithm_rank(id: &str) -> usize {
    Algorithm::ALL
        .iter()
        .position(|a| a.id() == id)
        .unwrap_or(Algorithm::ALL.len())
}

/// Linear-interpolation quantile of a sorted sample; NaN when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Distinct (x, variant, algorithm) groups in table order.
fn groups(rows: &[RawRow]) -> Vec<(f64, String, String)> {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let rank = |v: &str| variants.iter().position(|&w| w == v).unwrap_or(usize::MAX);
    let mut keys: Vec<(f64, String, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(x, v, a)| *x == r.x && *v == r.variant && *a == r.algorithm) {
            keys.push((r.x, r.variant.clone(), r.algorithm.clone()));
        }
    }
    keys.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(rank(&a.1).cmp(&rank(&b.1)))
            .then(algorithm_rank(&a.2).cmp(&algorithm_rank(&b.2)))
            .then(a.2.cmp(&b.2))
    });
    keys
}

fn select<'a>(rows: &'a [RawRow], x: f64, variant: &str, algorithm: &str) -> Vec<&'a RawRow> {
    rows.iter()
        .filter(|r| r.x == x && r.variant == variant && r.algorithm == algorithm)
        .collect()
}

fn feasible_energies(rows: &[&RawRow]) -> Vec<f64> {
    rows.iter().filter(|r| r.feasible).map(|r| r.energy_j).collect()
}

/// Means, quartiles and exclusion rates per (x, variant, algorithm).
pub fn aggregate(rows: &[RawRow]) -> Vec<AggRow> {
    groups(rows)
        .into_iter()
        .map(|(x, variant, algorithm)| {
            let sel = select(rows, x, &variant, &algorithm);
            let energies = feasible_energies(&sel);
            let mut sorted = energies.clone();
            sorted.sort_by(f64::total_cmp);
            let shares: Vec<f64> = sel.iter().filter(|r| r.feasible).map(|r| r.flush_share).collect();
            let bounds: Vec<f64> = sel.iter().filter_map(|r| r.eco_bound_j).collect();
            AggRow {
                x,
                trials: sel.len(),
                feasible_trials: energies.len(),
                exclusion_rate: 1.0 - energies.len() as f64 / sel.len() as f64,
                mean_energy_j: mean(&energies),
                median_energy_j: quantile(&sorted, 0.5),
                q1_energy_j: quantile(&sorted, 0.25),
                q3_energy_j: quantile(&sorted, 0.75),
                mean_flush_share: mean(&shares),
                eco_up_j: bounds.first().copied(),
                variant,
                algorithm,
            }
        })
        .collect()
}

/// Sorted feasible energies per (x, variant, algorithm) with probabilities `i / n`.
pub fn cdf_rows(rows: &[RawRow], algorithm: &str) -> Vec<CdfRow> {
    let mut out = Vec::new();
    for (x, variant, alg) in groups(rows) {
        if alg != algorithm {
            continue;
        }
        let mut energies = feasible_energies(&select(rows, x, &variant, &alg));
        energies.sort_by(f64::total_cmp);
        let n = energies.len() as f64;
        out.extend(energies.into_iter().enumerate().map(|(i, e)| CdfRow {
            x,
            variant: variant.clone(),
            algorithm: alg.clone(),
            energy_j: e,
            probability: (i + 1) as f64 / n,
        }));
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const RAW_HEADER: [&str; 15] = [
    "x",
    "variant",
    "seed",
    "algorithm",
    "energy_j",
    "feasible",
    "flush_share",
    "delivered_mue",
    "delivered_due",
    "sca_iterations",
    "max_violation",
    "eco_skips",
    "failed_blocks",
    "eco_bound_j",
    "reason",
];

pub const AGG_HEADER: [&str; 12] = [
    "x",
    "variant",
    "algorithm",
    "trials",
    "feasible_trials",
    "exclusion_rate",
    "mean_energy_j",
    "median_energy_j",
    "q1_energy_j",
    "q3_energy_j",
    "mean_flush_share",
    "eco_up_j",
];

pub const CDF_HEADER: [&str; 5] = ["x", "variant", "algorithm", "energy_j", "probability"];

pub fn read_raw(path: impl AsRef<Path>) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Serialize)]
struct SeriesPoint {
    x: f64,
    mean_energy_j: f64,
    exclusion_rate: f64,
    feasible_trials: usize,
}

#[derive(Serialize)]
struct BoundPoint {
    x: f64,
    bound_j: f64,
}

#[derive(Serialize)]
struct CdfPoint {
    energy_j: f64,
    probability: f64,
}

/// Curves of a figure: (file stem, algorithm id, variant label).
fn mean_curves(figure: &str, rows: &[RawRow]) -> Vec<(String, String, String)> {
    let four = [Algorithm::Genie, Algorithm::Eco, Algorithm::Edt, Algorithm::Crs];
    let mut curves: Vec<(String, String, String)> = match figure {
        "fig3" => ["ind", "dep"]
            .iter()
            .flat_map(|v| four.iter().map(move |a| (a.id().to_string(), v.to_string())))
            .collect(),
        "fig4b" | "fig5" | "fig6" => four.iter().map(|a| (a.id().to_string(), "base".into())).collect(),
        "fig7" => ["full", "ma", "re"]
            .iter()
            .flat_map(|v| [Algorithm::Genie, Algorithm::DecrsGenie].map(|a| (a.id().to_string(), v.to_string())))
            .collect(),
        _ => Vec::new(),
    }
    .into_iter()
    .map(|(a, v)| (String::new(), a, v))
    .collect();
    for (_, variant, algorithm) in groups(rows) {
        if !curves.iter().any(|(_, a, v)| *a == algorithm && *v == variant) {
            curves.push((String::new(), algorithm, variant));
        }
    }
    for c in &mut curves {
        let name = if figure == "fig7" && c.1 == "genie" { "idecrs" } else { c.1.as_str() };
        c.0 = match c.2.as_str() {
            "base" | "ind" | "full" => format!("{figure}_{name}"),
            v => format!("{figure}_{name}_{v}"),
        };
    }
    curves
}

fn series_file(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.csv"))
}

fn emit_means(rows: &[RawRow], figure: &str, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let agg = aggregate(rows);
    for (stem, algorithm, variant) in mean_curves(figure, rows) {
        let points: Vec<SeriesPoint> = agg
            .iter()
            .filter(|a| a.algorithm == algorithm && a.variant == variant)
            .map(|a| SeriesPoint {
                x: a.x,
                mean_energy_j: a.mean_energy_j,
                exclusion_rate: a.exclusion_rate,
                feasible_trials: a.feasible_trials,
            })
            .collect();
        let path = series_file(dir, &stem);
        write_csv(&path, &points, &["x", "mean_energy_j", "exclusion_rate", "feasible_trials"])?;
        out.push(path);
    }
    Ok(())
}

fn emit_bound(rows: &[RawRow], figure: &str, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let points: Vec<BoundPoint> = aggregate(rows)
        .into_iter()
        .filter(|a| a.algorithm == Algorithm::Eco.id())
        .filter_map(|a| a.eco_up_j.map(|b| BoundPoint { x: a.x, bound_j: b }))
        .collect();
    let path = series_file(dir, &format!("{figure}_eco_up"));
    write_csv(&path, &points, &["x", "bound_j"])?;
    out.push(path);
    Ok(())
}

fn emit_cdfs(rows: &[RawRow], dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let eco = Algorithm::Eco.id();
    let mut grid: BTreeSet<u64> = super::preset::FIG4_GRID.iter().map(|s| s.to_bits()).collect();
    grid.extend(rows.iter().filter(|r| r.algorithm == eco).map(|r| r.x.to_bits()));
    let mut values: Vec<f64> = grid.into_iter().map(f64::from_bits).collect();
    values.sort_by(f64::total_cmp);
    let cdf = cdf_rows(rows, eco);
    for s in values {
        let points: Vec<CdfPoint> = cdf
            .iter()
            .filter(|c| c.x == s)
            .map(|c| CdfPoint { energy_j: c.energy_j, probability: c.probability })
            .collect();
        let path = series_file(dir, &format!("fig4a_cdf_s{s}"));
        write_csv(&path, &points, &["energy_j", "probability"])?;
        out.push(path);
    }
    Ok(())
}

/// Figure ids accepted by [`emit_plot_data`].
pub const FIGURES: [&str; 8] = ["fig3", "fig4", "fig4a", "fig4b", "fig5", "fig6", "fig7", "custom"];

/// Writes one CSV series file per curve of `figure` into `dir` and returns their paths.
///
/// The curve set is fixed by the figure, so an empty table still yields header-only files.
pub fn emit_plot_data(rows: &[RawRow], figure: &str, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if !FIGURES.contains(&figure) {
        return Err(Error::Usage(format!("unknown figure '{figure}' (expected one of {})", FIGURES.join(", "))));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    match figure {
        "fig4" => {
            emit_cdfs(rows, dir, &mut out)?;
            emit_means(rows, "fig4b", dir, &mut out)?;
            emit_bound(rows, "fig4b", dir, &mut out)?;
        }
        "fig4a" => emit_cdfs(rows, dir, &mut out)?,
        "fig4b" => {
            emit_means(rows, figure, dir, &mut out)?;
            emit_bound(rows, figure, dir, &mut out)?;
        }
        _ => emit_means(rows, figure, dir, &mut out)?,
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64, variant: &str, seed: u64, algorithm: &str, energy: f64, feasible: bool) -> RawRow {
        RawRow {
            x,
            variant: variant.into(),
            seed,
            algorithm: algorithm.into(),
            energy_j: energy,
            feasible,
            flush_share: 0.0,
            delivered_mue: String::new(),
            delivered_due: 0.0,
            sca_iterations: 1,
            max_violation: 0.0,
            eco_skips: 0,
            failed_blocks: 0,
            eco_bound_j: (algorithm == "eco").then_some(9.0),
            reason: String::new(),
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn aggregate_excludes_infeasible_rows() {
        let rows = vec![
            row(2.0, "base", 0, "genie", 1.0, true),
            row(2.0, "base", 1, "genie", f64::NAN, false),
            row(2.0, "base", 2, "genie", 3.0, true),
            row(2.0, "base", 0, "eco", 5.0, true),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].algorithm, "genie");
        assert_eq!(agg[0].mean_energy_j, 2.0);
        assert!((agg[0].exclusion_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(agg[1].eco_up_j, Some(9.0));
    }

    #[test]
    fn cdf_is_sorted_and_ends_at_one() {
        let rows = vec![row(0.1, "base", 0, "eco", 3.0, true), row(0.1, "base", 1, "eco", 1.0, true)];
        let cdf = cdf_rows(&rows, "eco");
        assert_eq!(cdf.iter().map(|c| c.energy_j).collect::<Vec<_>>(), vec![1.0, 3.0]);
        assert_eq!(cdf[1].probability, 1.0);
    }

    #[test]
    fn fig3_has_eight_curves_even_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&[], "fig3", dir.path()).unwrap();
        assert_eq!(files.len(), 8);
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1);
        }
    }

    #[test]
    fn fig4a_writes_one_cdf_per_s() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&[], "fig4a", dir.path()).unwrap();
        assert_eq!(files.len(), super::super::preset::FIG4_GRID.len());
    }

    #[test]
    fn unknown_figure_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plot_data(&[], "fig9", dir.path()), Err(Error::Usage(_))));
    }

    #[test]
    fn raw_rows_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        let rows = vec![row(0.1, "base", 0, "eco", 1.0 / 3.0, true), row(0.1, "base", 1, "genie", f64::NAN, false)];
        write_csv(&path, &rows, &RAW_HEADER).unwrap();
        let back = read_raw(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].energy_j.is_nan());
    }
}
