use std::path::PathBuf;

use clap::Args;
use morphreg::data_io::write_field;
use morphreg::grid::identity_displacement;
use morphreg::losses::unsup_loss;
use morphreg::net::io::read_params;
use morphreg::optimize::{optimize_instance, DEFAULT_INSTANCE_ITERS, DEFAULT_INSTANCE_LR};
use morphreg::warp::warp_image;

use super::{default_lambda, parse_sim, unsupervised_weights};
use crate::error::{CliError, CliResult, WithPath};
use crate::io;
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["model", "no_model"]))]
pub struct RegisterArgs {
    /// Trained network producing the initial field.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Classical registration: optimize the field directly, starting from zero.
    #[arg(long)]
    pub no_model: bool,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    /// Refinement iterations (default 0 with a model, 100 without).
    #[arg(long)]
    pub instance_iters: Option<usize>,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Smoothness weight (default 0.02 for mse, 1 for cc).
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_INSTANCE_LR, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = morphreg::losses::DEFAULT_CC_WINDOW)]
    pub cc_window: usize,
    #[arg(long)]
    pub out_field: PathBuf,
    /// Warped moving image (.nii or .pgm).
    #[arg(long)]
    pub out_warped: Option<PathBuf>,
}

pub fn run(a: &RegisterArgs) -> CliResult<()> {
    let sim = parse_sim(&a.loss)?;
    let lambda = a.lambda.unwrap_or(default_lambda(sim));
    let weights = unsupervised_weights(lambda, a.cc_window)?;
    let iters = a.instance_iters.unwrap_or(if a.no_model { DEFAULT_INSTANCE_ITERS } else { 0 });
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(CliError::Usage(format!("learning rate must be positive, got {}", a.lr)));
    }
    let fixed = io::read_image(&a.fixed)?;
    let moving = io::read_image(&a.moving)?;
    if fixed.geom() != moving.geom() {
        return Err(CliError::Core(morphreg::Error::GeometryMismatch {
            left: fixed.geom().dims().to_vec(),
            right: moving.geom().dims().to_vec(),
        }));
    }
    let identity = identity_displacement(fixed.geom());
    let start_loss = unsup_loss(&fixed, &moving, &identity, &weights, sim)?.total;
    let mut u = match &a.model {
        Some(path) => {
            let params = read_params(path).at(path)?.cast::<f64>();
            params.config().check_geometry(fixed.geom()).at(path)?;
            let u = params.forward(&fixed, &moving)?;
            println!("network loss {:.6}", unsup_loss(&fixed, &moving, &u, &weights, sim)?.total);
            u
        }
        None => identity,
    };
    if iters > 0 {
        u = optimize_instance(&fixed, &moving, &u, &weights, sim, iters, a.lr)?.field;
    }
    let final_loss = unsup_loss(&fixed, &moving, &u, &weights, sim)?.total;
    println!("loss {start_loss:.6} at identity, {final_loss:.6} after registration");

    io::ensure_parent(&a.out_field)?;
    write_field(&a.out_field, &u).at(&a.out_field)?;
    if let Some(path) = &a.out_warped {
        io::ensure_parent(path)?;
        io::write_image(path, &warp_image(&moving, &u)?)?;
    }
    let mut m = Manifest::new("register");
    match &a.model {
        Some(p) => m.path("model", p),
        None => m.flag("no-model", true),
    };
    m.path("fixed", &a.fixed)
        .path("moving", &a.moving)
        .arg("instance-iters", iters)
        .arg("loss", sim)
        .arg("lambda", lambda)
        .arg("lr", a.lr)
        .arg("cc-window", a.cc_window)
        .path("out-field", &a.out_field)
        .opt_path("out-warped", a.out_warped.as_ref());
    m.write(&sibling(&a.out_field, "manifest"))
}
