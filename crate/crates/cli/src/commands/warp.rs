use std::path::PathBuf;

use clap::Args;
use morphreg::data_io::read_field;
use morphreg::eval::warp_labels;
use morphreg::grid::GridImage;
use morphreg::warp::warp_image;

use crate::error::{CliError, CliResult, WithPath};
use crate::io;
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Treat the input as a label map (nearest-neighbour resampling).
    #[arg(long)]
    pub labels: bool,
    /// Also write each displacement component to `<prefix>_<axis>.nii`.
    #[arg(long)]
    pub components: Option<PathBuf>,
}

pub fn run(a: &WarpArgs) -> CliResult<()> {
    io::ensure_parent(&a.out)?;
    let u = read_field(&a.field).at(&a.field)?.cast::<f64>();
    if a.labels {
        let labels = io::read_labels(&a.moving)?;
        let count = labels.values().iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1;
        io::write_labels(&a.out, &warp_labels(&labels, &u, count)?)?;
    } else {
        io::write_image(&a.out, &warp_image(&io::read_image(&a.moving)?, &u)?)?;
    }
    if let Some(prefix) = &a.components {
        let n = u.geom().ndim();
        for axis in 0..n {
            let values = u.vectors().iter().skip(axis).step_by(n).copied().collect();
            let img = GridImage::new(u.geom(), values).at(&a.field)?;
            let name = format!("{}_{axis}.nii", prefix.file_name().and_then(|s| s.to_str()).ok_or_else(|| CliError::Usage("invalid --components prefix".into()))?);
            io::write_image(&prefix.with_file_name(name), &img)?;
        }
    }
    let mut m = Manifest::new("warp");
    m.path("moving", &a.moving)
        .path("field", &a.field)
        .path("out", &a.out)
        .flag("labels", a.labels)
        .opt_path("components", a.components.as_ref());
    m.write(&sibling(&a.out, "manifest"))
}
