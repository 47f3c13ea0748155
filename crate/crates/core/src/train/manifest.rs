//! Cover/stego manifests and image loading.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::channelrep::{split_rgb, ColorPlanes, Domain};
use crate::jpeg::{decompress_to_ycbcr, parse_jpeg};
use crate::ppm::read_ppm;

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub cover_path: PathBuf,
    pub stego_path: PathBuf,
    pub domain: Domain,
    pub alpha: f64,
    pub seed: u64,
}

/// Parses manifest text. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<PairRecord>, TrainError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| TrainError::Manifest { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let path = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        out.push(PairRecord {
            cover_path: path(cols[0]),
            stego_path: path(cols[1]),
            domain: cols[2].parse().map_err(|_| bad(format!("unknown domain {:?}", cols[2])))?,
            alpha: cols[3].parse().map_err(|_| bad(format!("bad alpha {:?}", cols[3])))?,
            seed: cols[4].parse().map_err(|_| bad(format!("bad seed {:?}", cols[4])))?,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text, base)?;
    if records.is_empty() {
        return Err(TrainError::EmptyManifest(path.to_path_buf()));
    }
    Ok(records)
}

pub fn format_manifest(records: &[PairRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:?}\t{}",
            r.cover_path.display(),
            r.stego_path.display(),
            r.domain,
            r.alpha,
            r.seed
        );
    }
    s
}

/// Loads one image as three planes in the color space of `domain`.
pub fn load_image(path: &Path, domain: Domain) -> Result<ColorPlanes, TrainError> {
    let err = |msg: String| TrainError::Image {
        path: path.to_path_buf(),
        msg,
    };
    match domain {
        Domain::SpatialRgb => {
            let img = read_ppm(path).map_err(|e| err(e.to_string()))?;
            split_rgb(&img).map_err(|e| err(e.to_string()))
        }
        Domain::JpegYcbcr => {
            let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
            let j = parse_jpeg(&bytes).map_err(|e| err(e.to_string()))?;
            decompress_to_ycbcr(&j).map_err(|e| err(e.to_string()))
        }
    }
}

/// A decoded cover/stego pair.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub cover: ColorPlanes,
    pub stego: ColorPlanes,
}

pub fn load_pair(r: &PairRecord) -> Result<LoadedPair, TrainError> {
    let cover = load_image(&r.cover_path, r.domain)?;
    let stego = load_image(&r.stego_path, r.domain)?;
    if cover.height() != stego.height() || cover.width() != stego.width() {
        return Err(TrainError::Image {
            path: r.stego_path.clone(),
            msg: format!(
                "stego is {}x{} but cover is {}x{}",
                stego.width(),
                stego.height(),
                cover.width(),
                cover.height()
            ),
        });
    }
    Ok(LoadedPair { cover, stego })
}
