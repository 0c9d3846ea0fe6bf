//! Experiment configuration: TOML-backed, with defaults for every knob.

use anyhow::{bail, Context, Result};
use caprelu::{CwConfig, LinfAttackConfig, TrainConfig};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Named dense architectures used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// 784 → 392 → 196 → 10.
    General,
    /// 784 → 196 → 392 → 10.
    Reversed,
    /// 784 → 784 → 784 → 10.
    Equal,
    /// 784 → 392 → 196 → 98 → 10.
    Growth,
}

impl Arch {
    pub fn dims(&self) -> &'static [usize] {
        match self {
            Arch::General => &[784, 392, 196, 10],
            Arch::Reversed => &[784, 196, 392, 10],
            Arch::Equal => &[784, 784, 784, 10],
            Arch::Growth => &[784, 392, 196, 98, 10],
        }
    }

    pub fn hidden_count(&self) -> usize {
        self.dims().len() - 2
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::General => "general",
            Arch::Reversed => "reversed",
            Arch::Equal => "equal",
            Arch::Growth => "growth",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which hidden layers carry the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Hl1,
    Hl2,
    Hl3,
    Hl12,
    Hl123,
}

impl Placement {
    /// Zero-based hidden-layer indices covered by this placement.
    pub fn layers(&self) -> &'static [usize] {
        match self {
            Placement::Hl1 => &[0],
            Placement::Hl2 => &[1],
            Placement::Hl3 => &[2],
            Placement::Hl12 => &[0, 1],
            Placement::Hl123 => &[0, 1, 2],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Placement::Hl1 => "hl1",
            Placement::Hl2 => "hl2",
            Placement::Hl3 => "hl3",
            Placement::Hl12 => "hl12",
            Placement::Hl123 => "hl123",
        }
    }

    pub fn valid_for(&self, arch: Arch) -> bool {
        self.layers().iter().all(|&l| l < arch.hidden_count())
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hl1" => Ok(Placement::Hl1),
            "hl2" => Ok(Placement::Hl2),
            "hl3" => Ok(Placement::Hl3),
            "hl12" => Ok(Placement::Hl12),
            "hl123" => Ok(Placement::Hl123),
            other => Err(format!(
                "unknown cap placement {other:?} (expected hl1, hl2, hl3, hl12 or hl123)"
            )),
        }
    }
}

/// A training-time cap choice: a concrete max value, or no cap at all.
///
/// Serialized as a number, with the string `"-"` (or `"uncapped"`) standing
/// for the uncapped case, matching the table notation in the reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapValue {
    Uncapped,
    Beta(f64),
}

impl CapValue {
    pub fn beta(&self) -> Option<f64> {
        match self {
            CapValue::Uncapped => None,
            CapValue::Beta(b) => Some(*b),
        }
    }
}

impl fmt::Display for CapValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapValue::Uncapped => f.write_str("-"),
            CapValue::Beta(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for CapValue {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CapValue::Uncapped => ser.serialize_str("-"),
            CapValue::Beta(b) => ser.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for CapValue {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;

        impl Visitor<'_> for V {
            type Value = CapValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive max value, or \"-\" for uncapped")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<CapValue, E> {
                Ok(CapValue::Beta(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CapValue, E> {
                Ok(CapValue::Beta(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CapValue, E> {
                Ok(CapValue::Beta(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CapValue, E> {
                match v {
                    "-" | "uncapped" => Ok(CapValue::Uncapped),
                    other => match other.parse::<f64>() {
                        Ok(b) => Ok(CapValue::Beta(b)),
                        Err(_) => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                    },
                }
            }
        }

        de.deserialize_any(V)
    }
}

/// Adversarial-training regime for the accuracy-table experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvRegime {
    None,
    Fgsm,
    Pgd,
}

impl AdvRegime {
    /// Table cell text: `-` for no adversarial training.
    pub fn label(&self) -> &'static str {
        match self {
            AdvRegime::None => "-",
            AdvRegime::Fgsm => "fgsm",
            AdvRegime::Pgd => "pgd",
        }
    }

    /// Key-safe name.
    pub fn name(&self) -> &'static str {
        match self {
            AdvRegime::None => "none",
            AdvRegime::Fgsm => "fgsm",
            AdvRegime::Pgd => "pgd",
        }
    }
}

impl FromStr for AdvRegime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AdvRegime::None),
            "fgsm" => Ok(AdvRegime::Fgsm),
            "pgd" => Ok(AdvRegime::Pgd),
            other => Err(format!(
                "unknown adversarial-training regime {other:?} (expected none, fgsm or pgd)"
            )),
        }
    }
}

/// An inclusive arithmetic progression of evaluation max values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Sweep {
    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.step.is_finite()) {
            bail!("sweep bounds must be finite");
        }
        if self.start > self.end {
            bail!("sweep start {} exceeds end {}", self.start, self.end);
        }
        if self.step <= 0.0 {
            bail!("sweep step must be positive, got {}", self.step);
        }
        if self.start <= 0.0 {
            bail!("sweep values must be positive, got start {}", self.start);
        }
        Ok(())
    }

    /// The sweep points, rounded to 1e-9 to keep printed values tidy.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| {
                let v = self.start + k as f64 * self.step;
                (v * 1e9).round() / 1e9
            })
            .filter(|v| *v <= self.end + 1e-9)
            .collect()
    }
}

/// PGD settings in config form; converted to an attack config on use.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdSettings {
    pub epsilon: f64,
    pub step: f64,
    pub iters: usize,
    pub random_start: bool,
}

impl Default for PgdSettings {
    fn default() -> Self {
        PgdSettings { epsilon: 0.1, step: 0.01, iters: 10, random_start: false }
    }
}

impl PgdSettings {
    pub fn to_attack(&self, seed: u64) -> LinfAttackConfig {
        LinfAttackConfig {
            epsilon: self.epsilon,
            step_size: self.step,
            max_iter: self.iters,
            random_start: self.random_start,
            seed,
        }
    }
}

/// CW settings in config form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwSettings {
    pub iters: usize,
    pub searches: usize,
    pub lr: f64,
    pub initial_c: f64,
}

impl Default for CwSettings {
    fn default() -> Self {
        CwSettings { iters: 10000, searches: 9, lr: 0.01, initial_c: 0.001 }
    }
}

impl CwSettings {
    pub fn to_attack(&self) -> CwConfig {
        CwConfig {
            max_iter: self.iters,
            lr: self.lr,
            initial_c: self.initial_c,
            binary_search_steps: self.searches,
            confidence: 0.0,
        }
    }
}

/// Zero-gradient probe settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub step: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    /// L∞ budget; infinite by default (the probe wanders freely in `[0,1]`).
    pub epsilon: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            step: 2.0 / 256.0,
            max_iter: 200,
            tolerance: 1e-12,
            epsilon: f64::INFINITY,
        }
    }
}

impl ProbeSettings {
    pub fn to_attack(&self, seed: u64) -> LinfAttackConfig {
        LinfAttackConfig {
            epsilon: self.epsilon,
            step_size: self.step,
            max_iter: self.max_iter,
            random_start: false,
            seed,
        }
    }
}

/// Clean-training settings shared by all experiments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 20, batch_size: 128, lr: 0.001, seed: 42 }
    }
}

impl TrainSettings {
    pub fn to_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

/// Evaluation attack battery for the accuracy table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalAttacks {
    pub fgsm_epsilon: Fgsm,
    pub pgd: PgdSettings,
    pub cw: CwSettings,
}

/// Newtype so the FGSM bound can default independently.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fgsm(pub f64);

impl Default for Fgsm {
    fn default() -> Self {
        Fgsm(0.1)
    }
}

/// Per-layer perturbation-growth experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub placements: Vec<Placement>,
    pub max_values: Vec<f64>,
    pub pgd: PgdSettings,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            placements: vec![
                Placement::Hl1,
                Placement::Hl2,
                Placement::Hl3,
                Placement::Hl123,
            ],
            max_values: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            pgd: PgdSettings {
                epsilon: 20.0 / 256.0,
                step: 2.0 / 256.0,
                iters: 20,
                random_start: false,
            },
        }
    }
}

/// Cap-size sweep (general + reversed nets).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub archs: Vec<Arch>,
    pub placements: Vec<Placement>,
    pub train_betas: Vec<f64>,
    pub eval_betas: Sweep,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            archs: vec![Arch::General, Arch::Reversed],
            placements: vec![Placement::Hl1, Placement::Hl2, Placement::Hl12],
            train_betas: vec![0.01, 0.1, 1.0],
            eval_betas: Sweep { start: 0.01, end: 0.15, step: 0.01 },
        }
    }
}

/// Cap-order experiment: the sweep on the equal-width net.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderConfig {
    pub placements: Vec<Placement>,
    pub train_betas: Vec<f64>,
    pub eval_betas: Sweep,
}

impl Default for OrderConfig {
    fn default() -> Self {
        let s = SweepConfig::default();
        OrderConfig {
            placements: s.placements,
            train_betas: s.train_betas,
            eval_betas: s.eval_betas,
        }
    }
}

/// Zero-gradient distance experiment across the sweep cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroGradConfig {
    pub archs: Vec<Arch>,
    pub placements: Vec<Placement>,
    pub train_betas: Vec<f64>,
    pub eval_betas: Sweep,
    pub probe: ProbeSettings,
}

impl Default for ZeroGradConfig {
    fn default() -> Self {
        let s = SweepConfig::default();
        ZeroGradConfig {
            archs: vec![Arch::General, Arch::Reversed, Arch::Equal],
            placements: s.placements,
            train_betas: s.train_betas,
            eval_betas: s.eval_betas,
            probe: ProbeSettings::default(),
        }
    }
}

/// Sensitivity-map experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub betas: Vec<CapValue>,
    pub placement: Placement,
    /// How many per-image maps to emit (the digit-5 slot is always added).
    pub image_count: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            betas: vec![
                CapValue::Uncapped,
                CapValue::Beta(1.0),
                CapValue::Beta(0.1),
                CapValue::Beta(0.01),
            ],
            placement: Placement::Hl2,
            image_count: 8,
        }
    }
}

/// Adversarial-training accuracy table (`table1.csv`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    pub betas: Vec<CapValue>,
    pub regimes: Vec<AdvRegime>,
    pub placement: Placement,
    pub adv_epochs: usize,
    pub adv_epsilon: f64,
    /// CW evaluation can be disabled for reduced-scale runs; the cell is
    /// then left empty in the CSV.
    pub cw_enabled: bool,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            betas: vec![
                CapValue::Uncapped,
                CapValue::Beta(1.0),
                CapValue::Beta(0.1),
                CapValue::Beta(0.01),
            ],
            regimes: vec![AdvRegime::None, AdvRegime::Fgsm, AdvRegime::Pgd],
            placement: Placement::Hl2,
            adv_epochs: 10,
            adv_epsilon: 0.1,
            cw_enabled: true,
        }
    }
}

/// The full experiment configuration file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Evaluate on a seeded random subset of the test set; 0 means all of it.
    pub subset: usize,
    /// Worker threads for independent experiment cells; 0 means auto.
    pub threads: usize,
    pub train: TrainSettings,
    pub eval: EvalAttacks,
    pub growth: GrowthConfig,
    pub sweep: SweepConfig,
    pub order: OrderConfig,
    pub zero_grad: ZeroGradConfig,
    pub sensitivity: SensitivityConfig,
    pub table: TableConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.eval_betas.validate().context("[sweep] eval_betas")?;
        self.order.eval_betas.validate().context("[order] eval_betas")?;
        self.zero_grad.eval_betas.validate().context("[zero_grad] eval_betas")?;

        for (what, betas) in [
            ("[sweep] train_betas", &self.sweep.train_betas),
            ("[order] train_betas", &self.order.train_betas),
            ("[zero_grad] train_betas", &self.zero_grad.train_betas),
            ("[growth] max_values", &self.growth.max_values),
        ] {
            for &b in betas {
                if !(b > 0.0 && b.is_finite()) {
                    bail!("{what}: max values must be positive and finite, got {b}");
                }
            }
        }
        for cap in self
            .sensitivity
            .betas
            .iter()
            .chain(&self.table.betas)
        {
            if let CapValue::Beta(b) = cap {
                if !(*b > 0.0 && b.is_finite()) {
                    bail!("max values must be positive and finite, got {b}");
                }
            }
        }

        for p in &self.growth.placements {
            if !p.valid_for(Arch::Growth) {
                bail!("[growth] placement {p} does not fit the growth architecture");
            }
        }
        for arch in &self.sweep.archs {
            for p in &self.sweep.placements {
                if !p.valid_for(*arch) {
                    bail!("[sweep] placement {p} does not fit the {arch} architecture");
                }
            }
        }
        for p in &self.order.placements {
            if !p.valid_for(Arch::Equal) {
                bail!("[order] placement {p} does not fit the equal architecture");
            }
        }
        for arch in &self.zero_grad.archs {
            for p in &self.zero_grad.placements {
                if !p.valid_for(*arch) {
                    bail!("[zero_grad] placement {p} does not fit the {arch} architecture");
                }
            }
        }
        if !self.sensitivity.placement.valid_for(Arch::General) {
            bail!("[sensitivity] placement does not fit the general architecture");
        }
        if !self.table.placement.valid_for(Arch::General) {
            bail!("[table] placement does not fit the general architecture");
        }

        if self.train.epochs == 0 || self.train.batch_size == 0 {
            bail!("[train] epochs and batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Resolve the MNIST directory: explicit flag, then config, then the
/// `CAPRELU_DATA_DIR` environment variable, then `data/mnist`.
pub fn resolve_data_dir(flag: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("CAPRELU_DATA_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("data/mnist")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn sweep_values_are_tidy() {
        let s = Sweep { start: 0.01, end: 0.15, step: 0.01 };
        let v = s.values();
        assert_eq!(v.len(), 15);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[2], 0.03);
        assert_eq!(v[14], 0.15);
        assert_eq!(format!("{}", v[2]), "0.03");
    }

    #[test]
    fn cap_value_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct Holder {
            caps: Vec<CapValue>,
        }
        let h = Holder {
            caps: vec![CapValue::Uncapped, CapValue::Beta(0.1), CapValue::Beta(100.0)],
        };
        let text = toml::to_string(&h).unwrap();
        let back: Holder = toml::from_str(&text).unwrap();
        assert_eq!(back.caps, h.caps);
        let parsed: Holder = toml::from_str("caps = [\"-\", 0.5, \"uncapped\", 2]").unwrap();
        assert_eq!(
            parsed.caps,
            vec![
                CapValue::Uncapped,
                CapValue::Beta(0.5),
                CapValue::Uncapped,
                CapValue::Beta(2.0)
            ]
        );
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.eval_betas.step = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.growth.max_values.push(-1.0);
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sweep.placements.push(Placement::Hl123);
        assert!(cfg.validate().is_err());

        assert!(toml::from_str::<ExperimentConfig>("no_such_key = 1").is_err());
    }

    #[test]
    fn placement_layers_fit_their_archs() {
        assert_eq!(Placement::Hl12.layers(), &[0, 1]);
        assert!(Placement::Hl123.valid_for(Arch::Growth));
        assert!(!Placement::Hl3.valid_for(Arch::General));
    }
}
