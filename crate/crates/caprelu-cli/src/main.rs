//! `caprelu`: train, attack, probe and analyze capped-ReLU MNIST classifiers.

use anyhow::{bail, Context, Result};
use caprelu::{
    build_network, evaluate_under_attack, load_checkpoint, load_mnist, save_checkpoint,
    sensitivity_map, train, ActivationKind, AdvAttack, AdvTrainConfig, AttackSpec, CwConfig,
    ImageDataset, LinfAttackConfig, Network, Split, TrainConfig,
};
use caprelu_cli::config::{resolve_data_dir, AdvRegime, CapValue, ExperimentConfig};
use caprelu_cli::experiments::{probe_dataset, run_and_write, ExperimentKind};
use caprelu_cli::plotdata::emit_plot_data;
use caprelu_cli::report::{self, map_to_csv, SmapRow, SMAP_HEADER};
use caprelu_cli::store::ExpContext;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "caprelu", version, about = "Capped-ReLU robustness experiments on MNIST")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a dense classifier and save a checkpoint.
    Train(TrainArgs),
    /// Attack a trained model and report robustness metrics.
    Attack(AttackArgs),
    /// Run the zero-gradient probe against a trained model.
    Probe(ProbeArgs),
    /// Emit sensitivity maps for a trained model.
    Smap(SmapArgs),
    /// Run a full experiment and write its report CSVs.
    Experiment(ExperimentArgs),
    /// Re-serialize report CSVs into per-figure plot data.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Layer sizes from input to output, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "784,392,196,10")]
    dims: Vec<usize>,
    /// One-based hidden layers to cap, comma separated (e.g. 2 or 1,2).
    #[arg(long, value_delimiter = ',')]
    cap_layers: Vec<usize>,
    /// Max value for the capped layers.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Adversarial-training regime after the clean phase: none, fgsm or pgd.
    #[arg(long, default_value = "none")]
    adv: AdvRegime,
    #[arg(long, default_value_t = 10)]
    adv_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    adv_epsilon: f64,
    /// PGD step size for the pgd regime.
    #[arg(long, default_value_t = 0.01)]
    adv_step: f64,
    /// PGD iterations for the pgd regime.
    #[arg(long, default_value_t = 10)]
    adv_iters: usize,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.crlu")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackKind {
    Fgsm,
    Pgd,
    Cw,
}

#[derive(Args)]
struct AttackArgs {
    /// Trained-model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = AttackKind::Pgd)]
    attack: AttackKind,
    /// L∞ bound for FGSM/PGD.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// PGD step size.
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// PGD iterations.
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Start PGD from a random point in the ε-ball.
    #[arg(long)]
    random_start: bool,
    #[arg(long, default_value_t = 10000)]
    cw_iters: usize,
    #[arg(long, default_value_t = 9)]
    cw_searches: usize,
    #[arg(long, default_value_t = 0.01)]
    cw_lr: f64,
    /// Initial CW balancing factor.
    #[arg(long, default_value_t = 0.001)]
    cw_c: f64,
    /// Evaluate on a seeded random subset of the test set; 0 means all.
    #[arg(long, default_value_t = 0)]
    subset: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Trained-model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 2.0 / 256.0)]
    step: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Gradient L∞ norm at or below this counts as zero.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    /// L∞ budget around the clean sample; inf leaves only the [0,1] box.
    #[arg(long, default_value_t = f64::INFINITY)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    subset: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Also write the summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SmapArgs {
    /// Trained-model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Emit maps for the first N evaluation images (plus the first digit 5).
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Emit the map for exactly this evaluation-set image instead.
    #[arg(long)]
    image: Option<usize>,
    #[arg(long, default_value_t = 0)]
    subset: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for smap.csv and the per-image grids.
    #[arg(long, default_value = "reports/smap")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    PerturbationGrowth,
    CapSweep,
    CapOrder,
    ZeroGrad,
    Sensitivity,
    AdvTrainTable,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::PerturbationGrowth => ExperimentKind::PerturbationGrowth,
            KindArg::CapSweep => ExperimentKind::CapSweep,
            KindArg::CapOrder => ExperimentKind::CapOrder,
            KindArg::ZeroGrad => ExperimentKind::ZeroGrad,
            KindArg::Sensitivity => ExperimentKind::Sensitivity,
            KindArg::AdvTrainTable => ExperimentKind::AdvTrainTable,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Which experiment to run.
    #[arg(value_enum)]
    kind: KindArg,
    /// TOML config file; defaults cover every knob.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output root; reports land in <out>/<kind>/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate on a seeded random subset of the test set; 0 means all.
    #[arg(long)]
    subset: Option<usize>,
    /// Override the CW iteration budget.
    #[arg(long)]
    cw_iters: Option<usize>,
    /// Override the CW binary-search steps.
    #[arg(long)]
    cw_searches: Option<usize>,
    /// Override the clean-training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells; 0 means auto.
    #[arg(long)]
    threads: Option<usize>,
    /// Retrain every model instead of using the cache under <out>/models.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding the report CSVs of one experiment.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_test_subset(data_dir: Option<&PathBuf>, subset: usize, seed: u64) -> Result<ImageDataset> {
    let dir = resolve_data_dir(data_dir.map(|p| p.as_path()), None);
    let mut ds = load_mnist(&dir, Split::Test)
        .with_context(|| format!("cannot load MNIST test set from {}", dir.display()))?;
    if subset > 0 && subset < ds.len() {
        ds = ds.seeded_subset(subset, seed);
    }
    Ok(ds)
}

fn load_model(path: &PathBuf) -> Result<Network> {
    load_checkpoint(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if args.cap_layers.is_empty() != args.beta.is_none() {
        bail!("--cap-layers and --beta must be given together");
    }
    if args.dims.len() < 2 {
        bail!("--dims needs at least an input and an output size");
    }

    let mut acts = vec![ActivationKind::Relu; args.dims.len() - 1];
    *acts.last_mut().unwrap() = ActivationKind::Identity;
    let mut net = build_network(&args.dims, &acts, args.seed)?;
    if let Some(beta) = args.beta {
        let layers: Vec<usize> = args
            .cap_layers
            .iter()
            .map(|&l| {
                if l == 0 {
                    bail!("--cap-layers is one-based; 0 is not a hidden layer");
                }
                Ok(l - 1)
            })
            .collect::<Result<_>>()?;
        net.set_cap(&layers, beta)?;
    }

    let dir = resolve_data_dir(args.data_dir.as_deref(), None);
    let data = load_mnist(&dir, Split::Train)
        .with_context(|| format!("cannot load MNIST training set from {}", dir.display()))?;

    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
    };
    let history = train(&mut net, &data, &cfg)?;
    for (i, (loss, acc)) in history
        .epoch_loss
        .iter()
        .zip(&history.epoch_accuracy)
        .enumerate()
    {
        println!("epoch {:>2}: loss {loss:.4}  acc {acc:.4}", i + 1);
    }

    if args.adv != AdvRegime::None {
        let attack = match args.adv {
            AdvRegime::Fgsm => AdvAttack::Fgsm { epsilon: args.adv_epsilon },
            AdvRegime::Pgd => AdvAttack::Pgd(LinfAttackConfig {
                epsilon: args.adv_epsilon,
                step_size: args.adv_step,
                max_iter: args.adv_iters,
                random_start: false,
                seed: args.seed,
            }),
            AdvRegime::None => unreachable!(),
        };
        let adv_cfg = TrainConfig { epochs: args.adv_epochs, seed: args.seed + 1, ..cfg };
        let history = caprelu::adversarial_train(
            &mut net,
            &data,
            &adv_cfg,
            &AdvTrainConfig { attack, mixed: false },
        )?;
        for (i, (loss, acc)) in history
            .epoch_loss
            .iter()
            .zip(&history.epoch_accuracy)
            .enumerate()
        {
            println!("adv epoch {:>2}: loss {loss:.4}  acc {acc:.4}", i + 1);
        }
    }

    save_checkpoint(&net, &args.out)
        .with_context(|| format!("cannot save checkpoint {}", args.out.display()))?;
    println!("saved {}", args.out.display());
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let ds = load_test_subset(args.data_dir.as_ref(), args.subset, args.seed)?;

    let (name, spec) = match args.attack {
        AttackKind::Fgsm => ("fgsm", AttackSpec::Fgsm { epsilon: args.epsilon }),
        AttackKind::Pgd => (
            "pgd",
            AttackSpec::Pgd(LinfAttackConfig {
                epsilon: args.epsilon,
                step_size: args.step,
                max_iter: args.iters,
                random_start: args.random_start,
                seed: args.seed,
            }),
        ),
        AttackKind::Cw => (
            "cw",
            AttackSpec::CwL2(CwConfig {
                max_iter: args.cw_iters,
                lr: args.cw_lr,
                initial_c: args.cw_c,
                binary_search_steps: args.cw_searches,
                confidence: 0.0,
            }),
        ),
    };

    let m = evaluate_under_attack(&net, &ds, &spec)?;
    let out = serde_json::json!({
        "attack": name,
        "n_evaluated": m.n_evaluated,
        "standard_accuracy": m.standard_accuracy,
        "robust_accuracy": m.robust_accuracy,
        "success_rate": m.success_rate,
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    if let Some(path) = &args.out {
        report::write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let ds = load_test_subset(args.data_dir.as_ref(), args.subset, args.seed)?;

    let cfg = LinfAttackConfig {
        epsilon: args.epsilon,
        step_size: args.step,
        max_iter: args.max_iter,
        random_start: false,
        seed: args.seed,
    };
    let results = probe_dataset(&net, &ds, &cfg, args.tolerance)?;
    let (mean_distance, found_fraction) = caprelu::aggregate_zero_grad(&results);
    let found = results.iter().filter(|r| r.found).count();
    let out = serde_json::json!({
        "n": results.len(),
        "found": found,
        "found_fraction": found_fraction,
        "mean_distance": mean_distance,
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    if let Some(path) = &args.out {
        report::write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

/// The model's training-time cap, read back off its layers.
fn model_cap(net: &Network) -> CapValue {
    net.layers
        .iter()
        .find_map(|l| l.activation.cap())
        .map_or(CapValue::Uncapped, CapValue::Beta)
}

fn cmd_smap(args: SmapArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let ds = load_test_subset(args.data_dir.as_ref(), args.subset, args.seed)?;

    let ids: Vec<usize> = match args.image {
        Some(i) => {
            if i >= ds.len() {
                bail!("--image {i} is out of range for {} evaluation images", ds.len());
            }
            vec![i]
        }
        None => {
            let mut ids: Vec<usize> = (0..args.count.min(ds.len())).collect();
            if let Some(five) = ds.labels.iter().position(|&l| l == 5) {
                if !ids.contains(&five) {
                    ids.push(five);
                }
            }
            ids
        }
    };

    let cap = model_cap(&net);
    let tag = match cap {
        CapValue::Uncapped => "uncapped".to_string(),
        CapValue::Beta(b) => format!("{b}"),
    };
    let mut rows = Vec::new();
    for &i in &ids {
        let x = ds.images.select(Axis(0), &[i]);
        let map = sensitivity_map(&net, &x, ds.labels[i] as usize)?;
        rows.push(SmapRow { train_beta: cap, image_id: i as i64, total: map.total });
        report::write_atomic(
            &args.out.join(format!("smap_{tag}_{i}.csv")),
            map_to_csv(&map.map).as_bytes(),
        )?;
    }
    let doc = report::to_csv_doc(SMAP_HEADER, &rows, SmapRow::key, SmapRow::to_csv)?;
    report::write_atomic(&args.out.join("smap.csv"), doc.as_bytes())?;
    println!("wrote {} maps to {}", ids.len(), args.out.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.subset {
        cfg.subset = s;
    }
    if let Some(i) = args.cw_iters {
        cfg.eval.cw.iters = i;
    }
    if let Some(s) = args.cw_searches {
        cfg.eval.cw.searches = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    cfg.validate()?;

    let data_dir = resolve_data_dir(args.data_dir.as_deref(), cfg.data_dir.as_deref());
    let out_root = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("reports"));
    let cache_dir = (!args.no_cache).then(|| out_root.join("models"));

    let ctx = ExpContext::new(&data_dir, cfg.subset, cfg.train.seed, cache_dir, cfg.threads)?;
    let dir = run_and_write(args.kind.into(), &ctx, &cfg, &out_root)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_plotdata(args: PlotArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| args.input.clone());
    let written = emit_plot_data(&args.input, &out)?;
    for name in &written {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Attack(args) => cmd_attack(args),
        Cmd::Probe(args) => cmd_probe(args),
        Cmd::Smap(args) => cmd_smap(args),
        Cmd::Experiment(args) => cmd_experiment(args),
        Cmd::Plotdata(args) => cmd_plotdata(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
