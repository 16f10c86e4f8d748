//! Command implementations behind the `iwmm` binary. Everything is a plain
//! function over paths and parsed options so the same surface is exercised
//! directly by integration tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;

use crate::archive::{
    detect_label_column, grid_to_csv, manifest_text, matrix_to_csv, metrics_to_csv, Archive,
};
use crate::config::RunConfig;
use crate::data::{center, generate, parse_csv, save_csv, Dataset};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, BenchmarkConfig, Method};
use crate::mcmc::{sample_prior, Chain};
use crate::predictive::{density_grid, DensityEstimator};
use crate::rng::{stream_rng, Stream};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_config(config_path: Option<&Path>) -> Result<RunConfig> {
    match config_path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_dataset(data_path: &Path, label_col: Option<&str>) -> Result<(Dataset, String)> {
    let text = std::fs::read_to_string(data_path)
        .map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let label = match label_col {
        Some(c) => Some(c),
        None => detect_label_column(&text),
    };
    let name = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".into());
    let ds = parse_csv(&text, &name, label)?;
    Ok((ds, text))
}

/// `generate`: write one of the named synthetic datasets as CSV.
pub fn cmd_generate(name: &str, seed: u64, out_path: &Path) -> Result<()> {
    let ds = generate(name, seed)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    save_csv(&ds, out_path)
}

/// `fit`: run the sampler on a dataset, producing a self-contained archive.
/// The manifest and the training data are written before sampling starts.
pub fn cmd_fit(
    data_path: &Path,
    config_path: Option<&Path>,
    label_col: Option<&str>,
    out_dir: &Path,
) -> Result<()> {
    let (ds, train_csv) = load_dataset(data_path, label_col)?;
    let config = load_config(config_path)?;
    let centered = center(&ds.y);
    let prior = config.prior.build(config.latent_dim)?;
    let chain = Chain::new(centered.values.clone(), prior, config.sampler_config())?;

    Archive::write_header(out_dir, &config, &train_csv, &ds)?;
    let start = Instant::now();
    let out = chain.run();
    let elapsed = start.elapsed().as_secs_f64();

    let archive = Archive {
        config,
        dataset: ds,
        train_csv,
        samples: out.samples,
        diagnostics: out.diagnostics,
    };
    archive.write_outputs(out_dir)?;
    write_file(
        &out_dir.join("timing.txt"),
        &format!(
            "fit_seconds = {elapsed}\ndivergences_x = {}\ndivergences_theta = {}\n",
            out.divergences_x, out.divergences_theta
        ),
    )
}

/// Default grid bounds: data range padded by five standard deviations per
/// dimension.
fn default_bounds(ds: &Dataset) -> [(f64, f64); 2] {
    let mut bounds = [(0.0, 0.0); 2];
    for j in 0..2 {
        let col = ds.y.column(j);
        let n = ds.n() as f64;
        let mean = col.sum() / n;
        let sd =
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let lo = col.min();
        let hi = col.max();
        bounds[j] = (lo - 5.0 * sd, hi + 5.0 * sd);
    }
    bounds
}

/// `density`: evaluate the posterior predictive density of a fit on a 2-D
/// grid and write it as plottable CSV.
pub fn cmd_density(
    archive_dir: &Path,
    bounds: Option<[f64; 4]>,
    resolution: usize,
    out_path: &Path,
) -> Result<()> {
    let archive = Archive::read_dir(archive_dir)?;
    if archive.dataset.d() != 2 {
        return Err(Error::Data(format!(
            "density grids require 2-D observations, archive has D = {}",
            archive.dataset.d()
        )));
    }
    let config = &archive.config;
    let prior = config.prior.build(config.latent_dim)?;
    let centered = center(&archive.dataset.y);
    let est = DensityEstimator::from_samples(
        &archive.samples,
        &centered.values,
        &centered.means,
        &prior,
        config.predictive_draws,
        config.seed,
    )?;
    let bounds = match bounds {
        Some([x0, x1, y0, y1]) => [(x0, x1), (y0, y1)],
        None => default_bounds(&archive.dataset),
    };
    let grid = density_grid(&est, bounds, resolution)?;
    write_file(
        out_path,
        &grid_to_csv(&grid, config.predictive_draws, config.seed),
    )
}

/// `prior-sample`: simulate the generative process and write X, Z, Y.
pub fn cmd_prior_sample(
    n: usize,
    q: usize,
    d: usize,
    seed: u64,
    config_path: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    if n == 0 || q == 0 || d == 0 {
        return Err(Error::Usage(format!(
            "n, q and d must all be positive, got n={n} q={q} d={d}"
        )));
    }
    let mut config = load_config(config_path)?;
    config.latent_dim = q;
    config.seed = seed;
    let prior = config.prior.build(q)?;
    let mut rng = stream_rng(seed, Stream::PriorSim);
    let draw = sample_prior(n, q, d, &prior, &config.kernel, &mut rng)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_file(&out_dir.join("x.csv"), &matrix_to_csv(&draw.x, "x"))?;
    let z_text = String::from("z\n")
        + &draw
            .z
            .iter()
            .map(|z| z.to_string())
            .collect::<Vec<_>>()
            .join("\n")
        + "\n";
    write_file(&out_dir.join("z.csv"), &z_text)?;
    write_file(&out_dir.join("y.csv"), &matrix_to_csv(&draw.y, "y"))?;
    let ds = Dataset {
        name: "prior-sample".into(),
        y: draw.y.clone(),
        labels: Some(draw.z.clone()),
    };
    let mut manifest = manifest_text(&config, "prior-sample", &matrix_to_csv(&draw.y, "y"), &ds);
    manifest.push_str(&format!("manifest.q = {q}\n"));
    write_file(&out_dir.join("manifest.txt"), &manifest)
}

/// `benchmark`: fold × method grid over one or more datasets, written as one
/// metrics CSV with per-fold and aggregate rows.
pub fn cmd_benchmark(
    data_paths: &[PathBuf],
    method_names: &[String],
    config_path: Option<&Path>,
    label_col: Option<&str>,
    out_path: &Path,
) -> Result<()> {
    if data_paths.is_empty() {
        return Err(Error::Usage("benchmark needs at least one dataset".into()));
    }
    if method_names.is_empty() {
        return Err(Error::Usage("benchmark needs at least one method".into()));
    }
    let config = load_config(config_path)?;
    let mut all_reports = Vec::new();
    for path in data_paths {
        let (ds, _) = load_dataset(path, label_col)?;
        let methods: Vec<Method> = method_names
            .iter()
            .map(|m| Method::parse(m, ds.d()))
            .collect::<Result<_>>()?;
        let bench_cfg = BenchmarkConfig {
            sampler: config.sampler_config(),
            prior: config.prior,
            folds: config.folds,
            fold_seed: config.fold_seed,
            predictive_draws: config.predictive_draws,
        };
        all_reports.extend(run_benchmark(&ds, &methods, &bench_cfg)?);
    }

    let mut text = String::from("# iwmm benchmark\n");
    for line in config.to_text().lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    text.push_str(&metrics_to_csv(&all_reports));
    write_file(out_path, &text)
}

/// Raw y-matrix standard deviations, exposed for bound tests.
pub fn observed_sd(ds: &Dataset) -> DVector<f64> {
    let n = ds.n() as f64;
    DVector::from_fn(ds.d(), |j, _| {
        let mean = ds.y.column(j).sum() / n;
        (ds.y
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0).max(1.0))
        .sqrt()
    })
}
