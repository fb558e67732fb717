use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use morphreg::net::io::write_params;
use morphreg::net::{NetConfig, NetParams};
use morphreg::optimize::{
    train, AdamConfig, Dataset, LabelChannels, LogRecord, TrainConfig, TrainExample, TrainObserver, ValidationPair,
    DEFAULT_TRAIN_LR,
};
use morphreg::{AuxWeight, LossWeights};

use super::{default_lambda, parse_sim};
use crate::error::{CliError, CliResult, WithPath};
use crate::io::{self, StoredPair};
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory of `pair_NNNN/` folders.
    #[arg(long)]
    pub data: PathBuf,
    /// Labelled pairs used to keep the best checkpoint by Dice.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Image similarity: mse or cc.
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Smoothness weight (default 0.02 for mse, 1 for cc).
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Segmentation weight, or `seg-only`.
    #[arg(long, default_value = "0", allow_negative_numbers = true)]
    pub gamma: String,
    /// Labels used by the segmentation term: `all` or a comma list such as `1,3`.
    #[arg(long, default_value = "all", conflicts_with = "coarse_map")]
    pub observed_labels: String,
    /// File of `label group` lines merging labels into coarse groups.
    #[arg(long)]
    pub coarse_map: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_LR, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = morphreg::losses::DEFAULT_CC_WINDOW)]
    pub cc_window: usize,
    #[arg(long, default_value_t = 500)]
    pub validate_every: usize,
    /// Write `<out>.iterNNNNN.bin` every this many iterations; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Model file; the log, timing, best checkpoint and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn channels(a: &TrainArgs, label_count: usize) -> CliResult<LabelChannels> {
    let usage = |e: morphreg::Error| CliError::Usage(e.to_string());
    if let Some(path) = &a.coarse_map {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::File { path: path.clone(), source: e.into() })?;
        let mut groups = vec![None; label_count];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let bad = || CliError::Usage(format!("{}: expected `label group`, got '{line}'", path.display()));
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(label)), Some(Ok(group)), None) = (it.next(), it.next(), it.next()) else { return Err(bad()) };
            if label == 0 || label >= label_count {
                return Err(CliError::Usage(format!("{}: label {label} is not a foreground label", path.display())));
            }
            groups[label] = Some(group);
        }
        return LabelChannels::grouped(groups).map_err(usage);
    }
    if a.observed_labels == "all" {
        return Ok(LabelChannels::all(label_count));
    }
    let labels: Vec<usize> = a
        .observed_labels
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("invalid label list '{}'", a.observed_labels))))
        .collect::<CliResult<_>>()?;
    if labels.contains(&0) {
        return Err(CliError::Usage("background (label 0) cannot be observed".into()));
    }
    LabelChannels::subset(label_count, &labels).map_err(usage)
}

struct LogWriter {
    log: BufWriter<File>,
    timing: BufWriter<File>,
    start: Instant,
    iterations: usize,
    out: PathBuf,
    error: Option<std::io::Error>,
}

impl LogWriter {
    fn keep(&mut self, r: std::io::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }
}

impl TrainObserver<f64> for LogWriter {
    fn iteration(&mut self, r: &LogRecord) {
        let l = r.loss;
        let line = writeln!(
            self.log,
            "train it={} pair={} total={} sim={} smooth={} seg={}",
            r.iteration, r.pair, l.total, l.similarity, l.smoothness, l.segmentation
        );
        self.keep(line);
        if r.iteration.is_multiple_of(100) || r.iteration == self.iterations {
            let line = writeln!(self.timing, "it={} wall_s={:.3}", r.iteration, self.start.elapsed().as_secs_f64());
            self.keep(line);
        }
    }

    fn validation(&mut self, iteration: usize, mean_dice: f64) {
        let line = writeln!(self.log, "val it={iteration} dice={mean_dice}");
        self.keep(line);
    }

    fn checkpoint(&mut self, iteration: usize, params: &NetParams<f64>) -> morphreg::Result<()> {
        write_params(sibling(&self.out, &format!("iter{iteration:05}.bin")), params)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::File { path: path.to_path_buf(), source: e.into() })
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let sim = parse_sim(&a.loss)?;
    let lambda = a.lambda.unwrap_or(default_lambda(sim));
    let gamma: AuxWeight = a.gamma.parse().map_err(|e: morphreg::Error| CliError::Usage(e.to_string()))?;
    let weights = LossWeights::new(lambda, gamma, a.cc_window).map_err(|e| CliError::Usage(e.to_string()))?;

    let pairs = io::read_dataset(&a.data)?;
    let val = a.val.as_deref().map(io::read_dataset).transpose()?.unwrap_or_default();
    if val.iter().any(|p| p.labels.is_none()) {
        return Err(CliError::Usage("every validation pair needs label maps".into()));
    }
    let all: Vec<StoredPair> = pairs.iter().chain(&val).cloned().collect();
    let label_count = io::label_count(&all);
    let uses_segs = gamma.uses_segmentations();
    let channels = if uses_segs { Some(channels(a, label_count)?) } else { None };

    let mut examples = Vec::with_capacity(pairs.len());
    for p in pairs {
        examples.push(match (&channels, &p.labels) {
            (Some(c), Some((fl, ml))) => TrainExample::with_labels(p.fixed, p.moving, fl, ml, c).map_err(|e| file_err(&a.data, &p.id, e))?,
            (Some(_), None) => return Err(CliError::Usage(format!("{}: {} has no label maps but gamma > 0", a.data.display(), p.id))),
            (None, _) => TrainExample::unsupervised(p.fixed, p.moving),
        });
    }
    let data = Dataset::new(examples).map_err(|e| CliError::File { path: a.data.clone(), source: e })?;
    let validation: Vec<ValidationPair<f64>> = val
        .into_iter()
        .map(|p| {
            let (fixed_labels, moving_labels) = p.labels.expect("checked");
            ValidationPair { fixed: p.fixed, moving: p.moving, fixed_labels, moving_labels }
        })
        .collect();

    let geom = data.geom();
    let net = NetConfig::desk(geom.ndim());
    net.check_geometry(geom).map_err(|e| CliError::File { path: a.data.clone(), source: e })?;
    let init = NetParams::<f64>::init(net, a.seed)?;
    let mut config = TrainConfig::new(a.iters, sim, weights, a.seed);
    config.adam = AdamConfig::with_lr(a.lr);
    config.validation_every = a.validate_every;
    config.checkpoint_every = a.checkpoint_every;
    config.label_count = label_count;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    io::ensure_parent(&a.out)?;
    let mut observer = LogWriter {
        log: create(&sibling(&a.out, "log"))?,
        timing: create(&sibling(&a.out, "timing"))?,
        start: Instant::now(),
        iterations: a.iters,
        out: a.out.clone(),
        error: None,
    };
    let outcome = train(init, &data, &validation, &config, &mut observer)?;
    let flush = observer.log.flush().and(observer.timing.flush());
    if let Some(e) = observer.error.or(flush.err()) {
        return Err(CliError::File { path: sibling(&a.out, "log"), source: e.into() });
    }
    write_params(&a.out, &outcome.params).at(&a.out)?;
    let best = sibling(&a.out, "best.bin");
    write_params(&best, &outcome.best_params).at(&best)?;

    let mut m = Manifest::new("train");
    m.path("data", &a.data)
        .opt_path("val", a.val.as_ref())
        .arg("loss", sim)
        .arg("lambda", lambda)
        .arg("gamma", &a.gamma);
    match &a.coarse_map {
        Some(p) => m.path("coarse-map", p),
        None => m.arg("observed-labels", &a.observed_labels),
    };
    m.arg("iters", a.iters)
        .arg("seed", a.seed)
        .arg("lr", a.lr)
        .arg("cc-window", a.cc_window)
        .arg("validate-every", a.validate_every)
        .arg("checkpoint-every", a.checkpoint_every)
        .path("out", &a.out)
        .info("pairs", data.len())
        .info("label_count", label_count)
        .info("parameters", outcome.params.parameter_count());
    m.write(&sibling(&a.out, "manifest"))?;

    let last = outcome.log.last().expect("at least one iteration");
    println!("trained {} iterations on {} pairs; final loss {:.6}", a.iters, data.len(), last.loss.total);
    if let Some((it, dice)) = outcome.best_validation {
        println!("best validation Dice {dice:.4} at iteration {it}");
    }
    Ok(())
}

fn file_err(root: &Path, id: &str, source: morphreg::Error) -> CliError {
    CliError::File { path: root.join(id), source }
}
