use std::path::PathBuf;

use clap::Args;
use morphreg::data_io::read_field;
use morphreg::eval::{describe_row, dice_eval, foreground_mask, jacobian_report, write_report_tsv, EvalRow};

use crate::error::{CliError, CliResult, WithPath};
use crate::io;
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fixed_seg: PathBuf,
    #[arg(long)]
    pub moving_seg: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    /// Count folding only where this image is non-zero.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Number of label codes including background (default: largest code + 1).
    #[arg(long)]
    pub labels: Option<usize>,
    /// Row name in the report (default: the moving segmentation's parent directory).
    #[arg(long)]
    pub pair_id: Option<String>,
    /// Tab-separated report.
    #[arg(long)]
    pub report: PathBuf,
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let fixed = io::read_labels(&a.fixed_seg)?;
    let moving = io::read_labels(&a.moving_seg)?;
    let u = read_field(&a.field).at(&a.field)?.cast::<f64>();
    let largest = fixed.values().iter().chain(moving.values()).fold(0.0f64, |m, &v| m.max(v)) as usize;
    let count = a.labels.unwrap_or(largest + 1).max(2);
    let dice = dice_eval(&fixed, &moving, &u, count)?;
    let mask = a.mask.as_deref().map(io::read_image).transpose()?.map(|m| foreground_mask(&m));
    let reg = jacobian_report(&u, mask.as_ref())?;
    let pair_id = a.pair_id.clone().unwrap_or_else(|| {
        let parent = a.moving_seg.parent().and_then(|p| p.file_name());
        parent.unwrap_or(a.moving_seg.as_os_str()).to_string_lossy().into_owned()
    });
    let row = EvalRow { pair_id, dice, folding_count: reg.folding_count, folding_fraction: reg.folding_fraction };

    io::ensure_parent(&a.report)?;
    let mut buf = Vec::new();
    write_report_tsv(&mut buf, std::slice::from_ref(&row), count)?;
    std::fs::write(&a.report, buf).map_err(|e| CliError::File { path: a.report.clone(), source: e.into() })?;
    println!("{}", describe_row(&row));

    let mut m = Manifest::new("eval");
    m.path("fixed-seg", &a.fixed_seg)
        .path("moving-seg", &a.moving_seg)
        .path("field", &a.field)
        .opt_path("mask", a.mask.as_ref())
        .arg("labels", count)
        .arg("pair-id", &row.pair_id)
        .path("report", &a.report);
    m.write(&sibling(&a.report, "manifest"))
}
