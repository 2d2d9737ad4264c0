//! Heatmaps (CSV + 8-bit PGM) and singular-value spectra.

use crate::error::{Error, Result};
use crate::persist::{write_csv, write_sidecar};
use faer::Mat;
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const ZERO_SV_RATIO: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub pgm: PathBuf,
    pub min: f64,
    pub max: f64,
}

/// Lattice values (index i*(I+1)+j) as an image: rows run from y=+1 down to
/// y=-1, columns from x=-1 to x=+1.
pub fn lattice_to_image(i: usize, values: &[f64]) -> Vec<f64> {
    let n = i + 1;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        let j = i - r;
        for a in 0..n {
            out.push(values[a * n + j]);
        }
    }
    out
}

/// Min-max normalized gray levels; a constant field maps to 128.
pub fn gray_levels(data: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let px = data
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - min) / span).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    (px, min, max)
}

/// Writes `<stem>.csv`, `<stem>.pgm` and `<stem>.pgm.json`.
pub fn export_heatmap(rows: usize, cols: usize, data: &[f64], stem: &Path) -> Result<HeatmapFiles> {
    if rows * cols != data.len() || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("{rows}x{cols} heatmap with {} values", data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("heatmap values must be finite".into()));
    }
    let csv = stem.with_extension("csv");
    let pgm = stem.with_extension("pgm");
    write_csv(&csv, rows, cols, data)?;
    let (px, min, max) = gray_levels(data);
    let mut f = fs::File::create(&pgm)?;
    write!(f, "P5\n{cols} {rows}\n255\n")?;
    f.write_all(&px)?;
    write_sidecar(&pgm, &json!({ "rows": rows, "cols": cols, "min": min, "max": max }))?;
    Ok(HeatmapFiles { csv, pgm, min, max })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    /// descending
    pub values: Vec<f64>,
    pub sigma_max: f64,
    pub zero_count: usize,
}

pub fn spectrum(m: &Mat<f64>) -> Result<Spectrum> {
    let values = m
        .singular_values()
        .map_err(|e| Error::Linalg(format!("svd failed: {e:?}")))?;
    let sigma_max = values.first().cloned().unwrap_or(0.0);
    let zero_count = values.iter().filter(|&&s| s < ZERO_SV_RATIO * sigma_max).count();
    Ok(Spectrum { values, sigma_max, zero_count })
}

/// CSV `index,sigma,sigma/sigma_max` plus a JSON sidecar with the zero count.
pub fn spectrum_report(m: &Mat<f64>, path: &Path) -> Result<Spectrum> {
    let s = spectrum(m)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "index,sigma,relative")?;
    for (k, v) in s.values.iter().enumerate() {
        let rel = if s.sigma_max > 0.0 { v / s.sigma_max } else { 0.0 };
        writeln!(f, "{k},{v:.16e},{rel:.16e}")?;
    }
    f.flush()?;
    write_sidecar(
        path,
        &json!({
            "count": s.values.len(),
            "sigma_max": s.sigma_max,
            "threshold_ratio": ZERO_SV_RATIO,
            "zero_count": s.zero_count,
        }),
    )?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_pixels() {
        let (px, min, max) = gray_levels(&[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(px, vec![0, 255, 255, 0]);
        assert_eq!((min, max), (0.0, 1.0));
    }

    #[test]
    fn image_orientation() {
        // I=1: values at (x,y) = (-1,-1),(-1,1),(1,-1),(1,1)
        let img = lattice_to_image(1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(img, vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn identity_spectrum() {
        let s = spectrum(&Mat::<f64>::identity(5, 5)).unwrap();
        assert_eq!(s.zero_count, 0);
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }
}
