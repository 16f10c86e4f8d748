//! On-disk sample archives and the other CSV artifacts.
//!
//! An archive directory is self-contained:
//!
//! ```text
//! manifest.txt       resolved config + dataset fingerprint (valid config file)
//! train.csv          verbatim copy of the training data
//! diagnostics.csv    one row per iteration
//! samples/sample_<iter>.csv   one file per thinned sample (X, Z, θ)
//! timing.txt         wall-clock times; the one non-deterministic artifact
//! ```
//!
//! Every float is written in its shortest round-trip form, so archives from
//! identical configs and seeds are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{parse_csv, Dataset};
use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::mcmc::{DiagnosticsRow, SampleRecord};
use crate::predictive::DensityGrid;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAIN_FILE: &str = "train.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SAMPLES_DIR: &str = "samples";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Render the manifest: informational `manifest.*` keys followed by the full
/// resolved configuration. Contains no paths or timestamps.
pub fn manifest_text(config: &RunConfig, command: &str, train_csv: &str, ds: &Dataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# iwmm run manifest");
    let _ = writeln!(s, "manifest.version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "manifest.command = {command}");
    let _ = writeln!(
        s,
        "manifest.dataset_sha256 = {}",
        sha256_hex(train_csv.as_bytes())
    );
    let _ = writeln!(s, "manifest.n = {}", ds.n());
    let _ = writeln!(s, "manifest.d = {}", ds.d());
    s.push_str(&config.to_text());
    s
}

fn sample_to_csv(sample: &SampleRecord) -> String {
    let q = sample.x.ncols();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# iter={} log_joint={} log_alpha={} log_ell={} log_beta={}",
        sample.iter,
        sample.log_joint,
        sample.kernel.log_alpha,
        sample.kernel.log_ell,
        sample.kernel.log_beta
    );
    let headers: Vec<String> = (0..q).map(|j| format!("x{j}")).collect();
    let _ = writeln!(s, "{},z", headers.join(","));
    for i in 0..sample.x.nrows() {
        for j in 0..q {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", sample.x[(i, j)]);
        }
        let _ = writeln!(s, ",{}", sample.z[i]);
    }
    s
}

fn sample_from_csv(text: &str, path: &Path) -> Result<SampleRecord> {
    let mut meta: std::collections::HashMap<String, String> = Default::default();
    for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
        for token in line.trim_start_matches(['#', ' ']).split_whitespace() {
            if let Some((k, v)) = token.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    }
    let want = |key: &str| -> Result<f64> {
        meta.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: missing metadata '{key}'", path.display())))
    };
    let iter = want("iter")? as usize;
    let log_joint = want("log_joint")?;
    let kernel = KernelParams::new(want("log_alpha")?, want("log_ell")?, want("log_beta")?);

    let body = parse_csv(text, &path.display().to_string(), Some("z"))?;
    let z = body
        .labels
        .ok_or_else(|| Error::Data(format!("{}: sample lacks z column", path.display())))?;
    Ok(SampleRecord {
        iter,
        log_joint,
        kernel,
        z,
        x: body.y,
    })
}

fn diagnostics_to_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from("iter,log_joint,n_clusters,accept_x,accept_theta,step_x,step_theta\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iter, r.log_joint, r.n_clusters, r.accept_x, r.accept_theta, r.step_x, r.step_theta
        );
    }
    s
}

fn diagnostics_from_csv(text: &str, path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(Error::Data(format!(
                "{}: line {} has {} cells, expected 7",
                path.display(),
                idx + 1,
                cells.len()
            )));
        }
        let f = |k: usize| -> Result<f64> {
            cells[k].parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: '{}' is not numeric",
                    path.display(),
                    idx + 1,
                    cells[k]
                ))
            })
        };
        rows.push(DiagnosticsRow {
            iter: f(0)? as usize,
            log_joint: f(1)?,
            n_clusters: f(2)? as usize,
            accept_x: f(3)?,
            accept_theta: f(4)?,
            step_x: f(5)?,
            step_theta: f(6)?,
        });
    }
    Ok(rows)
}

/// A fit's outputs plus everything needed to reproduce or extend them.
#[derive(Debug, Clone)]
pub struct Archive {
    pub config: RunConfig,
    /// Training data exactly as stored in `train.csv`.
    pub dataset: Dataset,
    /// Raw bytes of `train.csv` (kept verbatim for fingerprint stability).
    pub train_csv: String,
    pub samples: Vec<SampleRecord>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

impl Archive {
    /// Write manifest and training data only; called before sampling starts.
    pub fn write_header(
        dir: &Path,
        config: &RunConfig,
        train_csv: &str,
        ds: &Dataset,
    ) -> Result<()> {
        std::fs::create_dir_all(dir.join(SAMPLES_DIR))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_file(
            &dir.join(MANIFEST_FILE),
            &manifest_text(config, "fit", train_csv, ds),
        )?;
        write_file(&dir.join(TRAIN_FILE), train_csv)
    }

    /// Write samples and diagnostics after the run.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        write_file(
            &dir.join(DIAGNOSTICS_FILE),
            &diagnostics_to_csv(&self.diagnostics),
        )?;
        for sample in &self.samples {
            let path = dir
                .join(SAMPLES_DIR)
                .join(format!("sample_{:06}.csv", sample.iter));
            write_file(&path, &sample_to_csv(sample))?;
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        Self::write_header(dir, &self.config, &self.train_csv, &self.dataset)?;
        self.write_outputs(dir)
    }

    pub fn read_dir(dir: &Path) -> Result<Archive> {
        let manifest = read_file(&dir.join(MANIFEST_FILE))?;
        let config = RunConfig::parse(&manifest)?;
        let train_csv = read_file(&dir.join(TRAIN_FILE))?;
        let dataset = parse_csv(&train_csv, "train", detect_label_column(&train_csv))?;
        let diagnostics = diagnostics_from_csv(
            &read_file(&dir.join(DIAGNOSTICS_FILE))?,
            &dir.join(DIAGNOSTICS_FILE),
        )?;

        let samples_dir = dir.join(SAMPLES_DIR);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&samples_dir)
            .map_err(|e| Error::io(samples_dir.display().to_string(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        let mut samples = Vec::with_capacity(paths.len());
        for path in paths {
            samples.push(sample_from_csv(&read_file(&path)?, &path)?);
        }
        if samples.is_empty() {
            return Err(Error::Data(format!(
                "{}: archive contains no samples",
                dir.display()
            )));
        }
        Ok(Archive {
            config,
            dataset,
            train_csv,
            samples,
            diagnostics,
        })
    }
}

/// "label" when the CSV header declares such a column, else nothing.
pub fn detect_label_column(csv_text: &str) -> Option<&'static str> {
    let header = csv_text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))?;
    header
        .split(',')
        .any(|c| c.trim() == "label")
        .then_some("label")
}

/// Density grid CSV: a metadata header line, then (x, y, density) rows.
pub fn grid_to_csv(grid: &DensityGrid, draws: usize, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# bounds_x0={} bounds_x1={} bounds_y0={} bounds_y1={} resolution={} mass={} draws={} seed={}",
        grid.bounds[0].0,
        grid.bounds[0].1,
        grid.bounds[1].0,
        grid.bounds[1].1,
        grid.resolution,
        grid.mass,
        draws,
        seed
    );
    s.push_str("x,y,density\n");
    for i in 0..grid.resolution {
        for j in 0..grid.resolution {
            let (x, y) = grid.cell_center(i, j);
            let _ = writeln!(s, "{},{},{}", x, y, grid.value(i, j));
        }
    }
    s
}

/// Metric report CSV with per-fold rows plus mean and stderr aggregate rows.
pub fn metrics_to_csv(reports: &[crate::eval::MetricReport]) -> String {
    let mut s = String::from("dataset,method,fold,metric,value\n");
    for r in reports {
        for (fold, v) in r.per_fold.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{}", r.dataset, r.method, fold, r.metric, v);
        }
        let _ = writeln!(s, "{},{},mean,{},{}", r.dataset, r.method, r.metric, r.mean);
        let _ = writeln!(
            s,
            "{},{},stderr,{},{}",
            r.dataset, r.method, r.metric, r.std_err
        );
    }
    s
}

/// Matrix CSV with generic column names (prior-sample outputs).
pub fn matrix_to_csv(m: &DMatrix<f64>, prefix: &str) -> String {
    let mut s = String::new();
    let headers: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let _ = writeln!(s, "{}", headers.join(","));
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", m[(i, j)]);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_curve;
    use crate::mcmc::{run_chain, Mapping};

    fn tmpdir(tag: &str) -> PathBuf {
        let dir =
            std::env::temp_dir().join(format!("iwmm-archive-test-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_archive() -> Archive {
        let ds = gen_two_curve(3);
        let mut config = RunConfig::default();
        config.mapping = Mapping::Identity;
        config.latent_dim = 2;
        config.total_iters = 12;
        config.burn_in = 6;
        config.thin = 2;
        let centered = crate::data::center(&ds.y);
        let prior = config.prior.build(2).unwrap();
        let out = run_chain(&centered.values, &prior, &config.sampler_config()).unwrap();
        let train_csv = crate::data::dataset_to_csv(&ds);
        Archive {
            config,
            dataset: ds,
            train_csv,
            samples: out.samples,
            diagnostics: out.diagnostics,
        }
    }

    #[test]
    fn archive_round_trips_through_disk() {
        let archive = small_archive();
        let dir = tmpdir("roundtrip");
        archive.write_dir(&dir).unwrap();
        let back = Archive::read_dir(&dir).unwrap();

        assert_eq!(archive.config, back.config);
        assert_eq!(archive.samples.len(), back.samples.len());
        for (a, b) in archive.samples.iter().zip(&back.samples) {
            assert_eq!(a.iter, b.iter);
            assert_eq!(a.z, b.z);
            assert_eq!(a.x, b.x, "latent coordinates must round-trip bitwise");
            assert_eq!(a.kernel, b.kernel);
            assert_eq!(a.log_joint.to_bits(), b.log_joint.to_bits());
        }
        assert_eq!(archive.diagnostics.len(), back.diagnostics.len());
        assert_eq!(archive.dataset.y, back.dataset.y);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn rewriting_an_archive_is_byte_identical() {
        let archive = small_archive();
        let (d1, d2) = (tmpdir("bytes1"), tmpdir("bytes2"));
        archive.write_dir(&d1).unwrap();
        archive.write_dir(&d2).unwrap();
        for name in [MANIFEST_FILE, TRAIN_FILE, DIAGNOSTICS_FILE] {
            assert_eq!(
                std::fs::read(d1.join(name)).unwrap(),
                std::fs::read(d2.join(name)).unwrap(),
                "{name} differs"
            );
        }
        let s1 = std::fs::read_dir(d1.join(SAMPLES_DIR)).unwrap().count();
        let s2 = std::fs::read_dir(d2.join(SAMPLES_DIR)).unwrap().count();
        assert_eq!(s1, s2);
        let _ = std::fs::remove_dir_all(&d1);
        let _ = std::fs::remove_dir_all(&d2);
    }

    #[test]
    fn label_detection_reads_header_only() {
        assert_eq!(detect_label_column("y0,y1,label\n1,2,0\n"), Some("label"));
        assert_eq!(detect_label_column("# meta\ny0,y1\n1,2\n"), None);
        assert_eq!(detect_label_column(""), None);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
