//! The experiment pipelines behind `caprelu experiment <kind>`.

use crate::config::{
    AdvRegime, Arch, CapValue, ExperimentConfig, PgdSettings, Placement, Sweep, TrainSettings,
};
use crate::report::{
    self, LayerDistRow, ReportMeta, SmapRow, SweepRow, TableRow, ZeroGradRow, LAYERDIST_HEADER,
    SMAP_HEADER, SWEEP_HEADER, TABLE_HEADER, ZEROGRAD_HEADER,
};
use crate::store::{model, run_jobs, ExpContext, ModelSpec};
use anyhow::Result;
use caprelu::{
    aggregate_zero_grad, attack_batch, evaluate, evaluate_under_attack, sensitivity_map,
    zero_gradient_probe, AttackSpec, DistanceNorm, ImageDataset, Network, RobustnessMetrics,
    ZeroGradProbeResult,
};
use ndarray::{Array2, Axis};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// The experiment kinds exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    PerturbationGrowth,
    CapSweep,
    CapOrder,
    ZeroGrad,
    Sensitivity,
    AdvTrainTable,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::PerturbationGrowth => "perturbation-growth",
            ExperimentKind::CapSweep => "cap-sweep",
            ExperimentKind::CapOrder => "cap-order",
            ExperimentKind::ZeroGrad => "zero-grad",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::AdvTrainTable => "adv-train-table",
        }
    }
}

pub type Timings = BTreeMap<String, f64>;

const CHUNK: usize = 1000;

fn chunks(ds: &ImageDataset) -> impl Iterator<Item = (Array2<f64>, Vec<u8>)> + '_ {
    (0..ds.len()).step_by(CHUNK).map(|start| {
        let end = (start + CHUNK).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        (ds.images.select(Axis(0), &idx), ds.labels[start..end].to_vec())
    })
}

/// Attack the whole evaluation set once, accumulating robustness metrics and
/// the per-layer mean distances in both norms.
fn attack_with_profiles(
    net: &Network,
    ds: &ImageDataset,
    spec: &AttackSpec,
) -> Result<(RobustnessMetrics, Vec<f64>, Vec<f64>)> {
    let mut clean_correct = 0usize;
    let mut adv_correct = 0usize;
    let mut flipped = 0usize;
    let mut linf_sums: Vec<f64> = Vec::new();
    let mut l2_sums: Vec<f64> = Vec::new();

    for (x, labels) in chunks(ds) {
        let clean_preds = net.predict(&x)?;
        let adv = attack_batch(net, &x, &labels, spec)?;
        let adv_preds = net.predict(&adv)?;
        for i in 0..labels.len() {
            let was = clean_preds[i] == labels[i];
            let is = adv_preds[i] == labels[i];
            clean_correct += was as usize;
            adv_correct += is as usize;
            flipped += (was && !is) as usize;
        }
        let n = labels.len() as f64;
        for (sums, norm) in [
            (&mut linf_sums, DistanceNorm::Linf),
            (&mut l2_sums, DistanceNorm::L2),
        ] {
            let profile = caprelu::layer_distance_profile(net, &x, &adv, norm)?;
            if sums.is_empty() {
                sums.resize(profile.distances.len(), 0.0);
            }
            for (s, d) in sums.iter_mut().zip(&profile.distances) {
                *s += d * n;
            }
        }
    }

    let n = ds.len();
    let metrics = RobustnessMetrics {
        standard_accuracy: clean_correct as f64 / n as f64,
        robust_accuracy: adv_correct as f64 / n as f64,
        success_rate: if clean_correct == 0 {
            0.0
        } else {
            flipped as f64 / clean_correct as f64
        },
        n_evaluated: n,
    };
    let scale = |sums: Vec<f64>| sums.into_iter().map(|s| s / n as f64).collect();
    Ok((metrics, scale(linf_sums), scale(l2_sums)))
}

/// Per-layer perturbation growth: one model per (placement, max value) cell,
/// attacked with the dedicated PGD settings; emits distance profiles and the
/// accuracy rows for the same cells.
pub struct GrowthReport {
    pub dist_rows: Vec<LayerDistRow>,
    pub acc_rows: Vec<SweepRow>,
    pub timings: Timings,
}

impl GrowthReport {
    pub fn to_files(&self) -> Result<Vec<(String, String)>> {
        Ok(vec![
            (
                "layerdist.csv".into(),
                report::to_csv_doc(
                    LAYERDIST_HEADER,
                    &self.dist_rows,
                    LayerDistRow::key,
                    LayerDistRow::to_csv,
                )?,
            ),
            (
                "capsweep.csv".into(),
                report::to_csv_doc(SWEEP_HEADER, &self.acc_rows, SweepRow::key, SweepRow::to_csv)?,
            ),
        ])
    }
}

pub fn run_perturbation_growth(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<GrowthReport> {
    let g = &cfg.growth;
    let mut cells = Vec::new();
    for &p in &g.placements {
        for &beta in &g.max_values {
            cells.push((p, beta));
        }
    }

    let attack = AttackSpec::Pgd(g.pgd.to_attack(cfg.train.seed));
    let outs = run_jobs(ctx.threads, cells, |(p, beta)| -> Result<_> {
        let spec = ModelSpec::clean(Arch::Growth, Some((p, beta)), cfg.train);
        let t = Instant::now();
        let net = model(ctx, &spec)?;
        let (metrics, linf, l2) = attack_with_profiles(&net, &ctx.eval_ds, &attack)?;
        Ok((p, beta, metrics, linf, l2, spec.key(), t.elapsed().as_secs_f64()))
    });

    let mut dist_rows = Vec::new();
    let mut acc_rows = Vec::new();
    let mut timings = Timings::new();
    for out in outs {
        let (p, beta, metrics, linf, l2, key, secs) = out?;
        for (norm, dists) in [("linf", &linf), ("l2", &l2)] {
            for (layer_index, &mean_distance) in dists.iter().enumerate() {
                dist_rows.push(LayerDistRow {
                    cap_layers: p,
                    train_beta: beta,
                    norm,
                    layer_index,
                    mean_distance,
                });
            }
        }
        acc_rows.push(SweepRow {
            arch: Arch::Growth,
            cap_layers: p,
            train_beta: beta,
            eval_beta: beta,
            std_acc: metrics.standard_accuracy,
            rob_acc: metrics.robust_accuracy,
            success_rate: metrics.success_rate,
        });
        timings.insert(key, secs);
    }
    Ok(GrowthReport { dist_rows, acc_rows, timings })
}

/// Sweep-style accuracy report (cap-sweep and cap-order share this shape).
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub timings: Timings,
}

impl SweepReport {
    pub fn to_files(&self) -> Result<Vec<(String, String)>> {
        Ok(vec![(
            "capsweep.csv".into(),
            report::to_csv_doc(SWEEP_HEADER, &self.rows, SweepRow::key, SweepRow::to_csv)?,
        )])
    }
}

fn sweep_engine(
    ctx: &ExpContext,
    archs: &[Arch],
    placements: &[Placement],
    train_betas: &[f64],
    eval_betas: &Sweep,
    eval_pgd: &PgdSettings,
    train: TrainSettings,
) -> Result<SweepReport> {
    let mut cells = Vec::new();
    for &arch in archs {
        for &p in placements {
            for &beta in train_betas {
                cells.push((arch, p, beta));
            }
        }
    }
    let points = eval_betas.values();
    let attack = AttackSpec::Pgd(eval_pgd.to_attack(train.seed));

    let outs = run_jobs(ctx.threads, cells, |(arch, p, beta)| -> Result<_> {
        let spec = ModelSpec::clean(arch, Some((p, beta)), train);
        let t = Instant::now();
        let net = model(ctx, &spec)?;
        let mut rows = Vec::with_capacity(points.len());
        for &eval_beta in &points {
            let mut probe_net = net.clone();
            probe_net.set_cap(p.layers(), eval_beta)?;
            let m = evaluate_under_attack(&probe_net, &ctx.eval_ds, &attack)?;
            rows.push(SweepRow {
                arch,
                cap_layers: p,
                train_beta: beta,
                eval_beta,
                std_acc: m.standard_accuracy,
                rob_acc: m.robust_accuracy,
                success_rate: m.success_rate,
            });
        }
        Ok((rows, spec.key(), t.elapsed().as_secs_f64()))
    });

    let mut rows = Vec::new();
    let mut timings = Timings::new();
    for out in outs {
        let (mut cell_rows, key, secs) = out?;
        rows.append(&mut cell_rows);
        timings.insert(key, secs);
    }
    Ok(SweepReport { rows, timings })
}

pub fn run_cap_sweep(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<SweepReport> {
    let s = &cfg.sweep;
    sweep_engine(
        ctx,
        &s.archs,
        &s.placements,
        &s.train_betas,
        &s.eval_betas,
        &cfg.eval.pgd,
        cfg.train,
    )
}

pub fn run_cap_order(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<SweepReport> {
    let o = &cfg.order;
    sweep_engine(
        ctx,
        &[Arch::Equal],
        &o.placements,
        &o.train_betas,
        &o.eval_betas,
        &cfg.eval.pgd,
        cfg.train,
    )
}

/// Zero-gradient distances for every sweep cell.
pub struct ZeroGradReport {
    pub rows: Vec<ZeroGradRow>,
    pub timings: Timings,
}

impl ZeroGradReport {
    pub fn to_files(&self) -> Result<Vec<(String, String)>> {
        Ok(vec![(
            "zerograd.csv".into(),
            report::to_csv_doc(ZEROGRAD_HEADER, &self.rows, ZeroGradRow::key, ZeroGradRow::to_csv)?,
        )])
    }
}

/// Probe a full dataset in chunks and pool the per-sample results.
pub fn probe_dataset(
    net: &Network,
    ds: &ImageDataset,
    cfg: &caprelu::LinfAttackConfig,
    tolerance: f64,
) -> Result<Vec<ZeroGradProbeResult>> {
    let mut all = Vec::with_capacity(ds.len());
    for (x, labels) in chunks(ds) {
        all.extend(zero_gradient_probe(net, &x, &labels, cfg, tolerance)?);
    }
    Ok(all)
}

pub fn run_zero_grad(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<ZeroGradReport> {
    let z = &cfg.zero_grad;
    let mut cells = Vec::new();
    for &arch in &z.archs {
        for &p in &z.placements {
            for &beta in &z.train_betas {
                cells.push((arch, p, beta));
            }
        }
    }
    let points = z.eval_betas.values();
    let probe_cfg = z.probe.to_attack(cfg.train.seed);

    let outs = run_jobs(ctx.threads, cells, |(arch, p, beta)| -> Result<_> {
        let spec = ModelSpec::clean(arch, Some((p, beta)), cfg.train);
        let t = Instant::now();
        let net = model(ctx, &spec)?;
        let mut rows = Vec::with_capacity(points.len());
        for &eval_beta in &points {
            let mut probe_net = net.clone();
            probe_net.set_cap(p.layers(), eval_beta)?;
            let results = probe_dataset(&probe_net, &ctx.eval_ds, &probe_cfg, z.probe.tolerance)?;
            let (mean_distance, found_fraction) = aggregate_zero_grad(&results);
            rows.push(ZeroGradRow {
                arch,
                cap_layers: p,
                train_beta: beta,
                eval_beta,
                mean_distance,
                found_fraction,
            });
        }
        Ok((rows, spec.key(), t.elapsed().as_secs_f64()))
    });

    let mut rows = Vec::new();
    let mut timings = Timings::new();
    for out in outs {
        let (mut cell_rows, key, secs) = out?;
        rows.append(&mut cell_rows);
        timings.insert(key, secs);
    }
    Ok(ZeroGradReport { rows, timings })
}

/// Sensitivity-map totals plus rendered per-image grids.
pub struct SensitivityReport {
    pub rows: Vec<SmapRow>,
    /// `(file name, CSV grid)` for each emitted per-image map.
    pub maps: Vec<(String, String)>,
    pub timings: Timings,
}

impl SensitivityReport {
    pub fn to_files(&self) -> Result<Vec<(String, String)>> {
        let mut files = vec![(
            "smap.csv".into(),
            report::to_csv_doc(SMAP_HEADER, &self.rows, SmapRow::key, SmapRow::to_csv)?,
        )];
        files.extend(self.maps.iter().cloned());
        Ok(files)
    }
}

fn cap_file_tag(cap: CapValue) -> String {
    match cap {
        CapValue::Uncapped => "uncapped".into(),
        CapValue::Beta(b) => format!("{b}"),
    }
}

pub fn run_sensitivity(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<SensitivityReport> {
    let s = &cfg.sensitivity;

    // The configured image set: the first `image_count` evaluation images,
    // plus the first digit-5 image (the per-image slot always emitted).
    let mut image_ids: Vec<usize> = (0..s.image_count.min(ctx.eval_ds.len())).collect();
    if let Some(five) = ctx.eval_ds.labels.iter().position(|&l| l == 5) {
        if !image_ids.contains(&five) {
            image_ids.push(five);
        }
    }

    let outs = run_jobs(ctx.threads, s.betas.clone(), |cap| -> Result<_> {
        let spec = ModelSpec::clean(
            Arch::General,
            cap.beta().map(|b| (s.placement, b)),
            cfg.train,
        );
        let t = Instant::now();
        let net = model(ctx, &spec)?;

        let mut rows = Vec::new();
        let mut maps = Vec::new();
        let mut total_sum = 0.0;
        for i in 0..ctx.eval_ds.len() {
            let x = ctx.eval_ds.images.select(Axis(0), &[i]);
            let label = ctx.eval_ds.labels[i] as usize;
            let map = sensitivity_map(&net, &x, label)?;
            total_sum += map.total;
            if image_ids.contains(&i) {
                rows.push(SmapRow {
                    train_beta: cap,
                    image_id: i as i64,
                    total: map.total,
                });
                maps.push((
                    format!("smap_{}_{}.csv", cap_file_tag(cap), i),
                    report::map_to_csv(&map.map),
                ));
            }
        }
        rows.push(SmapRow {
            train_beta: cap,
            image_id: -1,
            total: total_sum / ctx.eval_ds.len() as f64,
        });
        Ok((rows, maps, spec.key(), t.elapsed().as_secs_f64()))
    });

    let mut rows = Vec::new();
    let mut maps = Vec::new();
    let mut timings = Timings::new();
    for out in outs {
        let (mut cell_rows, mut cell_maps, key, secs) = out?;
        rows.append(&mut cell_rows);
        maps.append(&mut cell_maps);
        timings.insert(key, secs);
    }
    Ok(SensitivityReport { rows, maps, timings })
}

/// The adversarial-training accuracy table.
pub struct TableReport {
    pub rows: Vec<TableRow>,
    pub timings: Timings,
}

impl TableReport {
    pub fn to_files(&self) -> Result<Vec<(String, String)>> {
        Ok(vec![(
            "table1.csv".into(),
            report::to_csv_doc(TABLE_HEADER, &self.rows, TableRow::key, TableRow::to_csv)?,
        )])
    }

    pub fn row(&self, max_val: CapValue, adv: AdvRegime) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.max_val == max_val && r.adv == adv)
    }
}

pub fn run_adv_train_table(ctx: &ExpContext, cfg: &ExperimentConfig) -> Result<TableReport> {
    let t = &cfg.table;
    // Regime cells for one beta reuse its clean stage, so keep them adjacent:
    // with sequential scheduling the None cell warms the cache for the rest.
    let mut cells = Vec::new();
    for &cap in &t.betas {
        for &regime in &t.regimes {
            cells.push((cap, regime));
        }
    }

    let fgsm = AttackSpec::Fgsm { epsilon: cfg.eval.fgsm_epsilon.0 };
    let pgd = AttackSpec::Pgd(cfg.eval.pgd.to_attack(cfg.train.seed));
    let cw = AttackSpec::CwL2(cfg.eval.cw.to_attack());

    let outs = run_jobs(ctx.threads, cells, |(cap, regime)| -> Result<_> {
        let mut spec = ModelSpec::clean(
            Arch::General,
            cap.beta().map(|b| (t.placement, b)),
            cfg.train,
        );
        spec.regime = regime;
        spec.adv_epochs = t.adv_epochs;
        spec.adv_epsilon = t.adv_epsilon;
        spec.adv_pgd = cfg.eval.pgd;

        let timer = Instant::now();
        let net = model(ctx, &spec)?;
        let clean_acc = evaluate(&net, &ctx.eval_ds)?;
        let fgsm_acc = evaluate_under_attack(&net, &ctx.eval_ds, &fgsm)?.robust_accuracy;
        let pgd_acc = evaluate_under_attack(&net, &ctx.eval_ds, &pgd)?.robust_accuracy;
        let cw_acc = if t.cw_enabled {
            Some(evaluate_under_attack(&net, &ctx.eval_ds, &cw)?.robust_accuracy)
        } else {
            None
        };
        let row = TableRow { max_val: cap, adv: regime, clean_acc, fgsm_acc, pgd_acc, cw_acc };
        Ok((row, spec.key(), timer.elapsed().as_secs_f64()))
    });

    let mut rows = Vec::new();
    let mut timings = Timings::new();
    for out in outs {
        let (row, key, secs) = out?;
        rows.push(row);
        timings.insert(key, secs);
    }
    Ok(TableReport { rows, timings })
}

/// Run one experiment kind and write its files under `out_root/<kind>/`.
pub fn run_and_write(
    kind: ExperimentKind,
    ctx: &ExpContext,
    cfg: &ExperimentConfig,
    out_root: &Path,
) -> Result<PathBuf> {
    let (files, timings) = match kind {
        ExperimentKind::PerturbationGrowth => {
            let r = run_perturbation_growth(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
        ExperimentKind::CapSweep => {
            let r = run_cap_sweep(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
        ExperimentKind::CapOrder => {
            let r = run_cap_order(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
        ExperimentKind::ZeroGrad => {
            let r = run_zero_grad(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
        ExperimentKind::Sensitivity => {
            let r = run_sensitivity(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
        ExperimentKind::AdvTrainTable => {
            let r = run_adv_train_table(ctx, cfg)?;
            (r.to_files()?, r.timings)
        }
    };

    let dir = out_root.join(kind.name());
    for (name, content) in &files {
        report::write_atomic(&dir.join(name), content.as_bytes())?;
    }
    let meta = ReportMeta {
        experiment: kind.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        timings_seconds: timings,
    };
    report::write_meta(&dir, &meta)?;
    Ok(dir)
}
