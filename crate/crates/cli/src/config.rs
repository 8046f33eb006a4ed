//! Campaign configuration: TOML schema, validation and digest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ic2vqa::adapters::{AdapterKind, AdapterSpec, Registry};
use ic2vqa::adapters::toy::{DEFAULT_EMBED_DIM, DEFAULT_WIDTH};
use ic2vqa::attack::{AttackConfig, AttackKind, MultiMetricMode, DEFAULT_STEP_SIZE};
use ic2vqa::eval::AttackPlan;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_MAX_FRAMES: usize = 75;
pub const DEFAULT_SCALE: usize = 540;
pub const DEFAULT_QUERY_BUDGET: u64 = 300;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub campaign: RawCampaign,
    #[serde(default)]
    pub dataset: RawDataset,
    #[serde(default)]
    pub adapters: BTreeMap<String, RawAdapter>,
    #[serde(default)]
    pub vqa: RawVqa,
    #[serde(default)]
    pub grid: RawGrid,
    #[serde(default)]
    pub attacks: Vec<RawAttack>,
    #[serde(default)]
    pub report: RawReport,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCampaign {
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDataset {
    /// Directory of Y4M files and/or frame directories.
    pub dir: Option<PathBuf>,
    /// Glob for frame files inside frame directories.
    pub pattern: Option<String>,
    pub max_frames: Option<usize>,
    /// Target frame height; clips are only ever downscaled.
    pub scale: Option<usize>,
    pub synthetic: Option<RawSynthetic>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSynthetic {
    pub count: usize,
    #[serde(default = "default_synthetic_frames")]
    pub frames: usize,
    #[serde(default = "default_synthetic_side")]
    pub height: usize,
    #[serde(default = "default_synthetic_side")]
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_synthetic_frames() -> usize {
    DEFAULT_MAX_FRAMES
}

fn default_synthetic_side() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAdapter {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub width: Option<usize>,
    pub embed_dim: Option<usize>,
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVqa {
    pub adapter: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    #[serde(default)]
    pub epsilons: Vec<EpsilonValue>,
    /// Signed so negative counts reach validation instead of a parse error.
    #[serde(default)]
    pub iterations: Vec<i64>,
}

/// A budget written as a number or as a fraction such as `"10/255"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsilonValue {
    Number(f64),
    Text(String),
}

impl EpsilonValue {
    pub fn value(&self) -> Result<f64, String> {
        match self {
            EpsilonValue::Number(v) => Ok(*v),
            EpsilonValue::Text(s) => {
                let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number or fraction"));
                match s.split_once('/') {
                    Some((n, d)) => {
                        let d = parse(d)?;
                        if d == 0.0 {
                            return Err(format!("`{s}` divides by zero"));
                        }
                        Ok(parse(n)? / d)
                    }
                    None => parse(s),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMetricRef {
    pub adapter: String,
    pub layer: i64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAttack {
    pub label: Option<String>,
    pub kind: String,
    #[serde(default)]
    pub metrics: Vec<RawMetricRef>,
    pub embedder: Option<String>,
    pub use_xlayer: Option<bool>,
    pub use_embed: Option<bool>,
    pub use_temporal: Option<bool>,
    pub step_size: Option<f64>,
    pub clamp_range: Option<bool>,
    pub mode: Option<String>,
    pub query_budget: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReport {
    pub heatmap: Option<RawHeatmap>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeatmap {
    pub vqa_taps: Vec<usize>,
    pub columns: Vec<RawHeatmapColumn>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeatmapColumn {
    pub adapter: String,
    pub layers: Vec<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub max_frames: Option<usize>,
    pub scale: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dir: Option<PathBuf>,
    pub pattern: String,
    pub max_frames: usize,
    pub scale: usize,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRef {
    pub adapter: String,
    pub layer: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub label: String,
    pub kind: AttackKind,
    pub metrics: Vec<MetricRef>,
    pub embedder: Option<String>,
    pub use_xlayer: bool,
    pub use_embed: bool,
    pub use_temporal: bool,
    pub step_size: f64,
    pub clamp_range: bool,
    pub mode: MultiMetricMode,
    pub query_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub vqa_taps: Vec<usize>,
    pub columns: Vec<(String, Vec<usize>)>,
}

/// A validated campaign. Everything that influences results is part of the
/// digest; the output location and worker count are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub adapters: Registry,
    pub vqa: String,
    pub epsilons: Vec<f64>,
    pub iterations: Vec<usize>,
    pub attacks: Vec<AttackSpec>,
    pub heatmap: Option<HeatmapSpec>,
    #[serde(skip)]
    pub output: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl CampaignConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text, overrides)?;
        // Relative dataset paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = cfg.dataset.dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).context("config is not valid TOML for this schema")?;
        resolve(raw, overrides)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn build_plan(&self, spec: &AttackSpec) -> Result<AttackPlan> {
        let mut template = AttackConfig::new(spec.kind, 0.0, 0);
        template.step_size = spec.step_size;
        template.seed = self.seed;
        template.clamp_range = spec.clamp_range;
        template.mode = spec.mode;
        template.loss.use_xlayer = spec.use_xlayer;
        template.loss.use_embed = spec.use_embed;
        template.loss.use_temporal = spec.use_temporal;
        let mut plan = AttackPlan::new(spec.label.clone(), template);
        plan.query_budget = spec.query_budget;
        for m in &spec.metrics {
            let metric = self.adapters.build_iqa(&m.adapter)?;
            plan.template.loss.layer_per_metric.insert(metric.name().to_string(), m.layer);
            plan.template.loss.metric_weights.insert(metric.name().to_string(), m.weight);
            plan.metrics.push(metric);
        }
        if let Some(e) = &spec.embedder {
            plan.embedder = Some(self.adapters.build_embedder(e)?);
        }
        Ok(plan)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(raw: RawConfig, ov: &Overrides) -> Result<CampaignConfig> {
    let mut problems: Vec<String> = Vec::new();

    let name = raw.campaign.name.clone().unwrap_or_else(|| "campaign".into());
    if name.is_empty() || name.contains(['/', '\\']) {
        problems.push(format!("campaign.name: `{name}` must be non-empty and contain no path separators"));
    }

    let max_frames = ov.max_frames.or(raw.dataset.max_frames).unwrap_or(DEFAULT_MAX_FRAMES);
    if max_frames == 0 {
        problems.push("dataset.max_frames: must be at least 1".into());
    }
    let scale = ov.scale.or(raw.dataset.scale).unwrap_or(DEFAULT_SCALE);
    if scale != 0 && (scale < 8 || scale % 2 != 0) {
        problems.push(format!("dataset.scale: {scale} must be 0 (keep) or an even height of at least 8"));
    }
    let synthetic = raw.dataset.synthetic.as_ref().map(|s| SyntheticSpec {
        count: s.count,
        frames: s.frames,
        height: s.height,
        width: s.width,
        seed: s.seed,
    });
    if let Some(s) = &synthetic {
        if s.count == 0 || s.frames == 0 {
            problems.push("dataset.synthetic: count and frames must be at least 1".into());
        }
        if s.height < 8 || s.width < 8 || s.height % 2 != 0 || s.width % 2 != 0 {
            problems.push(format!(
                "dataset.synthetic: {}×{} must have even sides of at least 8",
                s.height, s.width
            ));
        }
    }
    if raw.dataset.dir.is_none() && synthetic.is_none() {
        problems.push("dataset: set `dir` or `synthetic`".into());
    }

    let mut registry = Registry::new();
    for (name, a) in &raw.adapters {
        match a.kind.parse::<AdapterKind>() {
            Ok(kind) => {
                let width = a.width.unwrap_or(DEFAULT_WIDTH);
                let embed_dim = a.embed_dim.unwrap_or(DEFAULT_EMBED_DIM);
                if width == 0 || embed_dim == 0 {
                    problems.push(format!("adapters.{name}: width and embed_dim must be positive"));
                }
                registry.register(
                    name.clone(),
                    AdapterSpec {
                        kind,
                        seed: a.seed,
                        width,
                        embed_dim,
                        weights: a.weights.clone(),
                    },
                );
            }
            Err(e) => problems.push(format!("adapters.{name}.kind: {e}")),
        }
    }
    let kind_of = |name: &str| raw.adapters.get(name).and_then(|a| a.kind.parse::<AdapterKind>().ok());

    let vqa = raw.vqa.adapter.clone().unwrap_or_default();
    match (vqa.is_empty(), kind_of(&vqa)) {
        (true, _) => problems.push("vqa.adapter: required".into()),
        (false, Some(AdapterKind::ToyVqa)) => {}
        (false, Some(k)) => problems.push(format!("vqa.adapter: `{vqa}` is a {k}, not a video metric")),
        (false, None) if !raw.adapters.contains_key(&vqa) => {
            problems.push(format!("vqa.adapter: unknown adapter `{vqa}`"))
        }
        (false, None) => {}
    }

    let mut epsilons = Vec::new();
    if raw.grid.epsilons.is_empty() {
        problems.push("grid.epsilons: must list at least one value".into());
    }
    for (i, e) in raw.grid.epsilons.iter().enumerate() {
        match e.value() {
            Ok(v) if (0.0..=1.0).contains(&v) => epsilons.push(v),
            Ok(v) => problems.push(format!("grid.epsilons[{i}]: {v} is outside [0, 1]")),
            Err(msg) => problems.push(format!("grid.epsilons[{i}]: {msg}")),
        }
    }
    let mut iterations = Vec::new();
    if raw.grid.iterations.is_empty() {
        problems.push("grid.iterations: must list at least one value".into());
    }
    for (i, &it) in raw.grid.iterations.iter().enumerate() {
        if it < 0 {
            problems.push(format!("grid.iterations[{i}]: {it} is negative"));
        } else {
            iterations.push(it as usize);
        }
    }
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    iterations.sort_unstable();
    iterations.dedup();

    if raw.attacks.is_empty() {
        problems.push("attacks: define at least one [[attacks]] entry".into());
    }
    let mut attacks = Vec::new();
    let mut labels = BTreeSet::new();
    for (i, a) in raw.attacks.iter().enumerate() {
        let at = format!("attacks[{i}]");
        let kind = match a.kind.parse::<AttackKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                problems.push(format!("{at}.kind: {e}"));
                None
            }
        };
        let label = a.label.clone().unwrap_or_else(|| a.kind.clone());
        if label.is_empty() || label.contains(['/', '\\']) {
            problems.push(format!("{at}.label: `{label}` must be non-empty and contain no path separators"));
        }
        if !labels.insert(label.clone()) {
            problems.push(format!("{at}.label: duplicate label `{label}`"));
        }
        let mut metrics = Vec::new();
        for (j, m) in a.metrics.iter().enumerate() {
            match kind_of(&m.adapter) {
                Some(AdapterKind::ToyIqa) => {}
                Some(k) => problems.push(format!(
                    "{at}.metrics[{j}].adapter: `{}` is a {k}, not an image metric",
                    m.adapter
                )),
                None => problems.push(format!("{at}.metrics[{j}].adapter: unknown adapter `{}`", m.adapter)),
            }
            if m.layer < 1 {
                problems.push(format!("{at}.metrics[{j}].layer: {} must be at least 1", m.layer));
            }
            if !(m.weight > 0.0 && m.weight.is_finite()) {
                problems.push(format!("{at}.metrics[{j}].weight: {} must be positive", m.weight));
            }
            metrics.push(MetricRef {
                adapter: m.adapter.clone(),
                layer: m.layer.max(0) as usize,
                weight: m.weight,
            });
        }
        if let Some(e) = &a.embedder {
            match kind_of(e) {
                Some(AdapterKind::ToyEmbed) => {}
                Some(k) => problems.push(format!("{at}.embedder: `{e}` is a {k}, not an embedder")),
                None => problems.push(format!("{at}.embedder: unknown adapter `{e}`")),
            }
        }
        let use_xlayer = a.use_xlayer.unwrap_or(true);
        let use_embed = a.use_embed.unwrap_or(a.embedder.is_some());
        let use_temporal = a.use_temporal.unwrap_or(true);
        match kind {
            Some(AttackKind::Ic2vqa) => {
                if use_xlayer && metrics.is_empty() {
                    problems.push(format!("{at}.metrics: ic2vqa with use_xlayer needs at least one metric"));
                }
                if use_embed && a.embedder.is_none() {
                    problems.push(format!("{at}.embedder: required when use_embed is set"));
                }
                if !(use_xlayer || use_embed || use_temporal) {
                    problems.push(format!("{at}: enable at least one loss term"));
                }
            }
            Some(AttackKind::Pgd) if metrics.len() != 1 => {
                problems.push(format!("{at}.metrics: pgd takes exactly one metric, got {}", metrics.len()));
            }
            _ => {}
        }
        let step_size = a.step_size.unwrap_or(DEFAULT_STEP_SIZE);
        if !(step_size > 0.0 && step_size.is_finite()) {
            problems.push(format!("{at}.step_size: {step_size} must be positive"));
        }
        let mode = match a.mode.as_deref() {
            None | Some("sequential") => MultiMetricMode::Sequential,
            Some("summed") => MultiMetricMode::Summed,
            Some(other) => {
                problems.push(format!("{at}.mode: `{other}` (expected sequential or summed)"));
                MultiMetricMode::Sequential
            }
        };
        if let Some(kind) = kind {
            attacks.push(AttackSpec {
                label,
                kind,
                metrics,
                embedder: a.embedder.clone(),
                use_xlayer,
                use_embed,
                use_temporal,
                step_size,
                clamp_range: a.clamp_range.unwrap_or(true),
                mode,
                query_budget: a.query_budget.unwrap_or(DEFAULT_QUERY_BUDGET),
            });
        }
    }

    let heatmap = raw.report.heatmap.as_ref().map(|h| {
        if h.vqa_taps.is_empty() || h.columns.is_empty() {
            problems.push("report.heatmap: needs vqa_taps and at least one column".into());
        }
        for (i, c) in h.columns.iter().enumerate() {
            if kind_of(&c.adapter) != Some(AdapterKind::ToyIqa) {
                problems.push(format!(
                    "report.heatmap.columns[{i}].adapter: `{}` is not a known image metric",
                    c.adapter
                ));
            }
        }
        HeatmapSpec {
            vqa_taps: h.vqa_taps.clone(),
            columns: h.columns.iter().map(|c| (c.adapter.clone(), c.layers.clone())).collect(),
        }
    });

    if !problems.is_empty() {
        bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
    }

    let output = ov
        .output
        .clone()
        .or(raw.campaign.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&name));
    let output = match std::env::var_os(crate::OUTPUT_ROOT_ENV) {
        Some(root) if output.is_relative() => PathBuf::from(root).join(output),
        _ => output,
    };
    Ok(CampaignConfig {
        name,
        seed: ov.seed.or(raw.campaign.seed).unwrap_or(0),
        dataset: DatasetSpec {
            dir: raw.dataset.dir.clone(),
            pattern: raw.dataset.pattern.clone().unwrap_or_else(|| "*.png".into()),
            max_frames,
            scale,
            synthetic,
        },
        adapters: registry,
        vqa,
        epsilons,
        iterations,
        attacks,
        heatmap,
        output,
        workers: ov.workers.or(raw.campaign.workers).unwrap_or_else(default_workers).max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[campaign]
name = "t"
seed = 3

[dataset]
synthetic = { count = 2, frames = 3, height = 16, width = 16 }

[adapters.iqa]
kind = "toy-iqa"
seed = 7

[adapters.vqa]
kind = "toy-vqa"
seed = 7

[vqa]
adapter = "vqa"

[grid]
epsilons = ["2/255", 0.0, "1/255"]
iterations = [2, 1]

[[attacks]]
kind = "ic2vqa"
metrics = [{ adapter = "iqa", layer = 2 }]
"#;

    #[test]
    fn parses_and_sorts_grids() {
        let c = CampaignConfig::parse(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(c.epsilons, vec![0.0, 1.0 / 255.0, 2.0 / 255.0]);
        assert_eq!(c.iterations, vec![1, 2]);
        assert_eq!(c.attacks[0].label, "ic2vqa");
        assert!(!c.attacks[0].use_embed);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn digest_ignores_output_and_workers_but_not_seed() {
        let a = CampaignConfig::parse(MINIMAL, &Overrides::default()).unwrap();
        let b = CampaignConfig::parse(
            MINIMAL,
            &Overrides {
                output: Some("elsewhere".into()),
                workers: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = CampaignConfig::parse(
            MINIMAL,
            &Overrides {
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn lists_every_invalid_field() {
        let text = MINIMAL
            .replace("\"2/255\"", "1.5")
            .replace("[2, 1]", "[-1, 1]")
            .replace("kind = \"ic2vqa\"", "kind = \"fgsm\"")
            .replace("adapter = \"vqa\"", "adapter = \"nope\"");
        let err = format!("{:#}", CampaignConfig::parse(&text, &Overrides::default()).unwrap_err());
        for needle in ["grid.epsilons[0]", "grid.iterations[0]", "attacks[0].kind", "vqa.adapter"] {
            assert!(err.contains(needle), "missing {needle} in {err}");
        }
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(EpsilonValue::Text("10/255".into()).value().unwrap(), 10.0 / 255.0);
        assert!(EpsilonValue::Text("1/0".into()).value().is_err());
        assert!(EpsilonValue::Text("x".into()).value().is_err());
    }
}
