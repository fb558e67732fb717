//! Image files by extension, and the on-disk dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use morphreg::data_io::{read_nifti, read_pgm, write_nifti, write_pgm, NiftiDatatype, NiftiVolume, PgmDepth};
use morphreg::grid::GridImage;

use crate::error::{CliError, CliResult, WithPath};

pub const FIXED: &str = "fixed.nii";
pub const MOVING: &str = "moving.nii";
pub const FIXED_SEG: &str = "fixed_seg.nii";
pub const MOVING_SEG: &str = "moving_seg.nii";
pub const TRUE_FIELD: &str = "u_true.bin";

#[derive(Debug, Clone, Copy, PartialEq)]
enum ImageKind {
    Nifti,
    Pgm,
}

fn kind(path: &Path) -> CliResult<ImageKind> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("nii") => Ok(ImageKind::Nifti),
        Some("pgm") => Ok(ImageKind::Pgm),
        _ => Err(CliError::Usage(format!("{}: expected a .nii or .pgm file", path.display()))),
    }
}

pub fn read_image(path: &Path) -> CliResult<GridImage<f64>> {
    match kind(path)? {
        ImageKind::Nifti => Ok(read_nifti(path).at(path)?.image().cast()),
        ImageKind::Pgm => read_pgm(path).at(path),
    }
}

/// Intensities: float32 NIfTI or 16-bit PGM (clamped to [0, 1]).
pub fn write_image(path: &Path, img: &GridImage<f64>) -> CliResult<()> {
    match kind(path)? {
        ImageKind::Nifti => write_nifti(path, &NiftiVolume::new(img.cast(), NiftiDatatype::Float32)).at(path),
        ImageKind::Pgm => write_pgm(path, img, PgmDepth::Sixteen).at(path),
    }
}

/// Label maps: uint8 NIfTI or 8-bit PGM holding the raw label codes.
pub fn write_labels(path: &Path, labels: &GridImage<f64>) -> CliResult<()> {
    match kind(path)? {
        ImageKind::Nifti => write_nifti(path, &NiftiVolume::new(labels.cast(), NiftiDatatype::Uint8)).at(path),
        ImageKind::Pgm => {
            let scaled = GridImage::new(labels.geom(), labels.values().iter().map(|v| v / 255.0).collect()).at(path)?;
            write_pgm(path, &scaled, PgmDepth::Eight).at(path)
        }
    }
}

/// Label maps read back as integer codes (PGM samples are un-scaled).
pub fn read_labels(path: &Path) -> CliResult<GridImage<f64>> {
    let img = read_image(path)?;
    if kind(path)? == ImageKind::Pgm {
        return GridImage::new(img.geom(), img.values().iter().map(|v| (v * 255.0).round()).collect()).at(path);
    }
    Ok(img)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::File { path: dir.to_path_buf(), source: e.into() })
}

pub fn pair_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("pair_{index:04}"))
}

/// One pair of a dataset directory; the label maps are optional.
#[derive(Debug, Clone)]
pub struct StoredPair {
    pub id: String,
    pub fixed: GridImage<f64>,
    pub moving: GridImage<f64>,
    pub labels: Option<(GridImage<f64>, GridImage<f64>)>,
}

/// Reads every `pair_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path) -> CliResult<Vec<StoredPair>> {
    let listing = fs::read_dir(root).map_err(|e| CliError::File { path: root.to_path_buf(), source: e.into() })?;
    let mut dirs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("pair_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("{}: no pair_* directories", root.display())));
    }
    dirs.iter()
        .map(|d| {
            let (fs_, ms) = (d.join(FIXED_SEG), d.join(MOVING_SEG));
            let labels = if fs_.exists() && ms.exists() { Some((read_labels(&fs_)?, read_labels(&ms)?)) } else { None };
            Ok(StoredPair {
                id: d.file_name().unwrap().to_string_lossy().into_owned(),
                fixed: read_image(&d.join(FIXED))?,
                moving: read_image(&d.join(MOVING))?,
                labels,
            })
        })
        .collect()
}

/// One more than the largest label code in any map.
pub fn label_count(pairs: &[StoredPair]) -> usize {
    pairs
        .iter()
        .filter_map(|p| p.labels.as_ref())
        .flat_map(|(a, b)| a.values().iter().chain(b.values()))
        .fold(0.0f64, |m, &v| m.max(v)) as usize
        + 1
}

/// Creates the directory an output file goes into.
pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}
