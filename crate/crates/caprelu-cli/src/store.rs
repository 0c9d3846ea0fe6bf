//! Shared experiment context: datasets, the trained-model cache, and the
//! worker pool that schedules independent cells.

use crate::config::{AdvRegime, Arch, PgdSettings, Placement, TrainSettings};
use anyhow::{Context, Result};
use caprelu::{
    adversarial_train, build_network, load_checkpoint, load_mnist, save_checkpoint, train,
    ActivationKind, AdvAttack, AdvTrainConfig, ImageDataset, LinfAttackConfig, Network, Split,
    TrainConfig,
};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

/// Everything an experiment needs besides its own config table. Datasets sit
/// behind `Arc` so derived contexts (different subsets, shared cache) stay
/// cheap.
pub struct ExpContext {
    pub train_ds: Arc<ImageDataset>,
    pub eval_ds: Arc<ImageDataset>,
    /// Directory for trained-model checkpoints; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub threads: usize,
}

impl ExpContext {
    /// Load MNIST and apply the evaluation subset knob (0 keeps everything).
    pub fn new(
        data_dir: &Path,
        subset: usize,
        seed: u64,
        cache_dir: Option<PathBuf>,
        threads: usize,
    ) -> Result<Self> {
        let train_ds = load_mnist(data_dir, Split::Train)
            .with_context(|| format!("cannot load MNIST training set from {}", data_dir.display()))?;
        let test_ds = load_mnist(data_dir, Split::Test)
            .with_context(|| format!("cannot load MNIST test set from {}", data_dir.display()))?;
        Ok(Self::from_datasets(
            Arc::new(train_ds),
            Arc::new(test_ds),
            subset,
            seed,
            cache_dir,
            threads,
        ))
    }

    /// Build a context from already-loaded datasets.
    pub fn from_datasets(
        train_ds: Arc<ImageDataset>,
        test_ds: Arc<ImageDataset>,
        subset: usize,
        seed: u64,
        cache_dir: Option<PathBuf>,
        threads: usize,
    ) -> Self {
        let eval_ds = if subset > 0 && subset < test_ds.len() {
            Arc::new(test_ds.seeded_subset(subset, seed))
        } else {
            test_ds
        };
        let threads = if threads == 0 {
            thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            threads
        };
        ExpContext { train_ds, eval_ds, cache_dir, threads }
    }
}

/// A fully specified trainable model cell.
#[derive(Debug, Clone, Copy)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Cap applied before training; `None` leaves plain ReLU everywhere.
    pub cap: Option<(Placement, f64)>,
    pub train: TrainSettings,
    pub regime: AdvRegime,
    pub adv_epochs: usize,
    pub adv_epsilon: f64,
    /// Step/iteration settings for the PGD regime's inner attack.
    pub adv_pgd: PgdSettings,
}

impl ModelSpec {
    pub fn clean(arch: Arch, cap: Option<(Placement, f64)>, train: TrainSettings) -> Self {
        ModelSpec {
            arch,
            cap,
            train,
            regime: AdvRegime::None,
            adv_epochs: 0,
            adv_epsilon: 0.0,
            adv_pgd: PgdSettings::default(),
        }
    }

    fn cap_tag(&self) -> String {
        match self.cap {
            None => "uncapped".into(),
            Some((p, b)) => format!("{p}x{b}"),
        }
    }

    /// Cache key for the clean-trained stage.
    pub fn clean_key(&self) -> String {
        let t = &self.train;
        format!(
            "{}_{}_e{}_b{}_lr{}_s{}",
            self.arch,
            self.cap_tag(),
            t.epochs,
            t.batch_size,
            t.lr,
            t.seed
        )
    }

    /// Cache key for the final stage (equals `clean_key` without a regime).
    pub fn key(&self) -> String {
        match self.regime {
            AdvRegime::None => self.clean_key(),
            r => format!(
                "{}_{}{}e_eps{}",
                self.clean_key(),
                r.name(),
                self.adv_epochs,
                self.adv_epsilon
            ),
        }
    }
}

/// Build the architecture with ReLU hidden layers, identity output, and the
/// requested cap already applied.
pub fn build_spec_net(spec: &ModelSpec) -> Result<Network> {
    let dims = spec.arch.dims();
    let mut acts = vec![ActivationKind::Relu; dims.len() - 1];
    *acts.last_mut().unwrap() = ActivationKind::Identity;
    let mut net = build_network(dims, &acts, spec.train.seed)?;
    if let Some((placement, beta)) = spec.cap {
        net.set_cap(placement.layers(), beta)?;
    }
    Ok(net)
}

fn cached(dir: &Path, key: &str) -> Option<PathBuf> {
    let path = dir.join(format!("{key}.crlu"));
    path.exists().then_some(path)
}

fn store(dir: &Path, key: &str, net: &Network) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create model cache directory {}", dir.display()))?;
    let path = dir.join(format!("{key}.crlu"));
    save_checkpoint(net, &path)
        .with_context(|| format!("cannot save model checkpoint {}", path.display()))?;
    Ok(())
}

fn clean_model(ctx: &ExpContext, spec: &ModelSpec) -> Result<Network> {
    let key = spec.clean_key();
    if let Some(dir) = &ctx.cache_dir {
        if let Some(path) = cached(dir, &key) {
            return load_checkpoint(&path)
                .with_context(|| format!("cannot load cached model {}", path.display()));
        }
    }
    let mut net = build_spec_net(spec)?;
    train(&mut net, &ctx.train_ds, &spec.train.to_train())?;
    if let Some(dir) = &ctx.cache_dir {
        store(dir, &key, &net)?;
    }
    Ok(net)
}

/// Fetch the trained model for a cell, training (and caching) on a miss.
/// Adversarial regimes continue from the cached clean stage with a fresh
/// optimizer and a shuffle stream one past the clean seed.
pub fn model(ctx: &ExpContext, spec: &ModelSpec) -> Result<Network> {
    if spec.regime == AdvRegime::None {
        return clean_model(ctx, spec);
    }
    let key = spec.key();
    if let Some(dir) = &ctx.cache_dir {
        if let Some(path) = cached(dir, &key) {
            return load_checkpoint(&path)
                .with_context(|| format!("cannot load cached model {}", path.display()));
        }
    }
    let mut net = clean_model(ctx, spec)?;
    let attack = match spec.regime {
        AdvRegime::Fgsm => AdvAttack::Fgsm { epsilon: spec.adv_epsilon },
        AdvRegime::Pgd => AdvAttack::Pgd(LinfAttackConfig {
            epsilon: spec.adv_epsilon,
            step_size: spec.adv_pgd.step,
            max_iter: spec.adv_pgd.iters,
            random_start: false,
            seed: spec.train.seed,
        }),
        AdvRegime::None => unreachable!(),
    };
    let cfg = TrainConfig {
        epochs: spec.adv_epochs,
        batch_size: spec.train.batch_size,
        lr: spec.train.lr,
        seed: spec.train.seed + 1,
    };
    adversarial_train(&mut net, &ctx.train_ds, &cfg, &AdvTrainConfig { attack, mixed: false })?;
    if let Some(dir) = &ctx.cache_dir {
        store(dir, &key, &net)?;
    }
    Ok(net)
}

/// Run independent jobs over a small worker pool, returning results in job
/// order regardless of scheduling.
pub fn run_jobs<J, R, F>(threads: usize, jobs: Vec<J>, f: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync,
{
    let n = jobs.len();
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue: Mutex<VecDeque<(usize, J)>> = Mutex::new(jobs.into_iter().enumerate().collect());
    let done: Mutex<Vec<(usize, R)>> = Mutex::new(Vec::with_capacity(n));
    thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                match job {
                    Some((i, j)) => {
                        let r = f(j);
                        done.lock().unwrap().push((i, r));
                    }
                    None => break,
                }
            });
        }
    });
    let mut out = done.into_inner().unwrap();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}
