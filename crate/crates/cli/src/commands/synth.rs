use std::path::PathBuf;

use clap::Args;
use morphreg::data_io::{generate_pair, write_field, SynthSpec};
use morphreg::grid::GridGeometry;
use morphreg::net::NetConfig;

use crate::error::{CliError, CliResult, WithPath};
use crate::io::{self, create_dir, pair_dir};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; pairs go to `pair_NNNN/` below it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Grid extents, e.g. `64x64` or `32x32x32`.
    #[arg(long, default_value = "64x64")]
    pub dims: String,
    /// Largest displacement of the ground-truth field, in voxels.
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Foreground structures per image (2..=4).
    #[arg(long, default_value_t = 3)]
    pub structures: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub blur: f64,
    #[arg(long, default_value_t = 16.0)]
    pub control_spacing: f64,
}

pub fn parse_dims(s: &str) -> CliResult<GridGeometry> {
    let dims: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|d| d.trim().parse().map_err(|_| CliError::Usage(format!("invalid dims '{s}'"))))
        .collect::<CliResult<_>>()?;
    if !(2..=3).contains(&dims.len()) {
        return Err(CliError::Usage(format!("dims '{s}' must have 2 or 3 extents")));
    }
    GridGeometry::new(&dims).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(a: &SynthArgs) -> CliResult<()> {
    let geom = parse_dims(&a.dims)?;
    let spec = SynthSpec {
        structures: a.structures,
        amplitude: a.amplitude,
        control_spacing: a.control_spacing,
        noise: a.noise,
        blur_sigma: a.blur,
        ..SynthSpec::new(geom, a.seed)
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Err(e) = NetConfig::desk(geom.ndim()).check_geometry(geom) {
        eprintln!("warning: these pairs cannot be used for training: {e}");
    }
    create_dir(&a.out)?;
    for i in 0..a.count {
        let pair = generate_pair::<f64>(&spec.for_pair(i as u64))?;
        let dir = pair_dir(&a.out, i);
        create_dir(&dir)?;
        io::write_image(&dir.join(io::FIXED), &pair.fixed)?;
        io::write_image(&dir.join(io::MOVING), &pair.moving)?;
        io::write_labels(&dir.join(io::FIXED_SEG), &pair.fixed_labels)?;
        io::write_labels(&dir.join(io::MOVING_SEG), &pair.moving_labels)?;
        let truth = dir.join(io::TRUE_FIELD);
        write_field(&truth, &pair.u_true).at(&truth)?;
    }
    let mut m = Manifest::new("synth");
    m.path("out", &a.out)
        .arg("count", a.count)
        .arg("dims", geom.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"))
        .arg("amplitude", a.amplitude)
        .arg("seed", a.seed)
        .arg("structures", a.structures)
        .arg("noise", a.noise)
        .arg("blur", a.blur)
        .arg("control-spacing", a.control_spacing)
        .info("label_count", spec.label_count());
    m.write(&a.out.join("manifest.txt"))?;
    println!("wrote {} pairs to {}", a.count, a.out.display());
    Ok(())
}
