//! Discrete hyper-parameter space for budgeted performance estimation.
//!
//! A [`HyperSpace`] is an ordered list of [`Dimension`]s; each dimension has a
//! small ordered set of levels (label + numeric encoding) and a per-level
//! relative cost proxy. A [`BpeConfig`] picks one level per dimension, a
//! [`PinMask`] freezes a subset of dimensions, and [`sample_config`] draws the
//! free dimensions with a bias toward cheap levels: per dimension the level
//! probabilities are `softmax(-c̃)` where `c̃` are the level costs min-max
//! normalized to `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One selectable value of a dimension: a human-readable label plus the
/// numeric encoding used for model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub label: String,
    pub encoding: f64,
}

impl Level {
    pub fn new(label: impl Into<String>, encoding: f64) -> Self {
        Level {
            label: label.into(),
            encoding,
        }
    }
}

/// A named hyper-parameter with ordered levels and per-level cost proxies.
///
/// Invariants (enforced on construction and deserialization): at least one
/// level, encodings strictly increasing, one finite non-negative cost per
/// level, non-empty unique labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDimension")]
pub struct Dimension {
    name: String,
    levels: Vec<Level>,
    costs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDimension {
    name: String,
    levels: Vec<Level>,
    costs: Vec<f64>,
}

impl TryFrom<RawDimension> for Dimension {
    type Error = Error;

    fn try_from(raw: RawDimension) -> Result<Self> {
        Dimension::new(raw.name, raw.levels, raw.costs)
    }
}

impl Dimension {
    pub fn new(name: impl Into<String>, levels: Vec<Level>, costs: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Space("dimension name must be non-empty".into()));
        }
        if levels.is_empty() {
            return Err(Error::Space(format!("dimension {name}: no levels")));
        }
        if levels.len() != costs.len() {
            return Err(Error::Space(format!(
                "dimension {name}: {} levels but {} costs",
                levels.len(),
                costs.len()
            )));
        }
        for pair in levels.windows(2) {
            if !(pair[1].encoding > pair[0].encoding) {
                return Err(Error::Space(format!(
                    "dimension {name}: level encodings must be strictly increasing \
                     ({} then {})",
                    pair[0].encoding, pair[1].encoding
                )));
            }
        }
        for level in &levels {
            if level.label.is_empty() {
                return Err(Error::Space(format!("dimension {name}: empty level label")));
            }
            if !level.encoding.is_finite() {
                return Err(Error::Space(format!(
                    "dimension {name}: non-finite encoding for level {}",
                    level.label
                )));
            }
        }
        for (i, a) in levels.iter().enumerate() {
            if levels[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::Space(format!(
                    "dimension {name}: duplicate level label {}",
                    a.label
                )));
            }
        }
        for (&c, level) in costs.iter().zip(&levels) {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::Space(format!(
                    "dimension {name}: cost for level {} must be finite and >= 0, got {c}",
                    level.label
                )));
            }
        }
        Ok(Dimension {
            name,
            levels,
            costs,
        })
    }

    /// Builds a dimension whose labels are the display form of its encodings.
    pub fn numeric(name: impl Into<String>, values: &[f64], costs: &[f64]) -> Result<Self> {
        let levels = values
            .iter()
            .map(|&v| Level::new(v.to_string(), v))
            .collect();
        Dimension::new(name, levels, costs.to_vec())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the cheapest level; ties resolve to the lowest index.
    pub fn min_cost_level(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.costs.iter().enumerate().skip(1) {
            if c < self.costs[best] {
                best = i;
            }
        }
        best
    }

    pub fn level_index_by_label(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }
}

/// One selected level index per dimension of a space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BpeConfig {
    assignment: Vec<usize>,
}

impl BpeConfig {
    pub fn new(assignment: Vec<usize>) -> Self {
        BpeConfig { assignment }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn level(&self, dim: usize) -> usize {
        self.assignment[dim]
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// The expensive config used as ranking ground truth and cost yardstick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig(pub BpeConfig);

/// A per-dimension freeze: `Some(level)` pins the dimension, `None` leaves it
/// free for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinMask {
    pins: Vec<Option<usize>>,
}

impl PinMask {
    /// A mask over `n` dimensions with nothing pinned.
    pub fn empty(n: usize) -> Self {
        PinMask {
            pins: vec![None; n],
        }
    }

    /// Pins `dim` to `level`. Pinning an already-pinned dimension is an
    /// error: pins only accumulate.
    pub fn pin(&mut self, dim: usize, level: usize) -> Result<()> {
        let slot = self
            .pins
            .get_mut(dim)
            .ok_or_else(|| Error::Invalid(format!("pin: dimension {dim} out of range")))?;
        if slot.is_some() {
            return Err(Error::Invalid(format!("dimension {dim} is already pinned")));
        }
        *slot = Some(level);
        Ok(())
    }

    pub fn get(&self, dim: usize) -> Option<usize> {
        self.pins.get(dim).copied().flatten()
    }

    pub fn is_pinned(&self, dim: usize) -> bool {
        self.get(dim).is_some()
    }

    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn pinned_count(&self) -> usize {
        self.pins.iter().filter(|p| p.is_some()).count()
    }

    /// Indices of dimensions still free, in ascending order.
    pub fn unpinned(&self) -> Vec<usize> {
        self.pins
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// An ordered collection of dimensions with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperSpace")]
pub struct HyperSpace {
    dims: Vec<Dimension>,
}

#[derive(Deserialize)]
struct RawHyperSpace {
    dims: Vec<Dimension>,
}

impl TryFrom<RawHyperSpace> for HyperSpace {
    type Error = Error;

    fn try_from(raw: RawHyperSpace) -> Result<Self> {
        HyperSpace::new(raw.dims)
    }
}

impl HyperSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Space("space has no dimensions".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|other| other.name == d.name) {
                return Err(Error::Space(format!("duplicate dimension name {}", d.name)));
            }
        }
        Ok(HyperSpace { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn dim(&self, i: usize) -> &Dimension {
        &self.dims[i]
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    /// Checks that `config` selects a valid level in every dimension.
    pub fn validate_config(&self, config: &BpeConfig) -> Result<()> {
        if config.len() != self.len() {
            return Err(Error::Invalid(format!(
                "config has {} entries for a {}-dimension space",
                config.len(),
                self.len()
            )));
        }
        for (i, (&sel, dim)) in config.assignment().iter().zip(&self.dims).enumerate() {
            if sel >= dim.len() {
                return Err(Error::Invalid(format!(
                    "config selects level {sel} in dimension {} ({}), which has {} levels",
                    i,
                    dim.name,
                    dim.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks that `mask` matches this space and pins only valid levels.
    pub fn validate_mask(&self, mask: &PinMask) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::Invalid(format!(
                "mask has {} entries for a {}-dimension space",
                mask.len(),
                self.len()
            )));
        }
        for (i, dim) in self.dims.iter().enumerate() {
            if let Some(level) = mask.get(i) {
                if level >= dim.len() {
                    return Err(Error::Invalid(format!(
                        "mask pins dimension {} ({}) to level {level}, which has {} levels",
                        i,
                        dim.name,
                        dim.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a config from `name = label` pairs; every dimension must appear
    /// exactly once.
    pub fn config_from_labels<'a, I>(&self, pairs: I) -> Result<BpeConfig>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut assignment: Vec<Option<usize>> = vec![None; self.len()];
        for (name, label) in pairs {
            let dim = self
                .dim_index(name)
                .ok_or_else(|| Error::Invalid(format!("unknown dimension {name}")))?;
            let level = self.dims[dim]
                .level_index_by_label(label)
                .ok_or_else(|| Error::Invalid(format!("dimension {name} has no level {label}")))?;
            if assignment[dim].replace(level).is_some() {
                return Err(Error::Invalid(format!("dimension {name} given twice")));
            }
        }
        let assignment = assignment
            .into_iter()
            .enumerate()
            .map(|(i, sel)| {
                sel.ok_or_else(|| Error::Invalid(format!("dimension {} not set", self.dims[i].name)))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(BpeConfig::new(assignment))
    }

    /// Renders a config as `name=label` pairs in dimension order.
    pub fn config_labels(&self, config: &BpeConfig) -> Vec<(String, String)> {
        self.dims
            .iter()
            .zip(config.assignment())
            .map(|(dim, &sel)| (dim.name.clone(), dim.levels[sel].label.clone()))
            .collect()
    }

    /// One-line human-readable form of a config.
    pub fn render_config(&self, config: &BpeConfig) -> String {
        self.config_labels(config)
            .into_iter()
            .map(|(name, label)| format!("{name}={label}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Level probabilities biased toward cheap levels: `softmax(-c̃)` with costs
/// min-max normalized to `[0, 1]` (all-equal costs normalize to all-zero).
pub fn sampling_distribution(dim: &Dimension) -> Vec<f64> {
    let costs = dim.costs();
    let lo = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = if hi > lo {
        costs.iter().map(|c| (-((c - lo) / (hi - lo))).exp()).collect()
    } else {
        vec![1.0; costs.len()]
    };
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Draws one config: pinned dimensions keep their pinned level, free ones are
/// sampled independently from [`sampling_distribution`].
pub fn sample_config<R: Rng + ?Sized>(
    space: &HyperSpace,
    mask: &PinMask,
    rng: &mut R,
) -> BpeConfig {
    let assignment = space
        .dims()
        .iter()
        .enumerate()
        .map(|(i, dim)| match mask.get(i) {
            Some(level) => level,
            None => sample_level(&sampling_distribution(dim), rng),
        })
        .collect();
    BpeConfig::new(assignment)
}

fn sample_level<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Multiplicative cost of a config: the product of `(1 + cost)` over the
/// selected levels. The all-zero-cost config costs exactly 1.
pub fn config_cost(space: &HyperSpace, config: &BpeConfig) -> f64 {
    space
        .dims()
        .iter()
        .zip(config.assignment())
        .map(|(dim, &sel)| 1.0 + dim.costs()[sel])
        .product()
}

/// The built-in training-recipe space: epochs, batch size, learning rate,
/// layer count, numeric precision, channel width, cutout augmentation, and
/// train image size, together with the full-fidelity reference config.
pub fn default_preset() -> (HyperSpace, ReferenceConfig) {
    let epoch_values = [10.0, 30.0, 50.0, 100.0, 600.0];
    let batch_values = [32.0, 64.0, 96.0, 128.0, 256.0];
    let lr_values = [0.01, 0.025, 0.03, 0.1];
    let layer_values = [6.0, 8.0, 16.0, 20.0];
    let channel_values = [8.0, 16.0, 36.0];
    let image_values = [8.0, 16.0, 32.0];

    let dims = vec![
        // Training time scales linearly with epochs.
        Dimension::numeric(
            "epoch",
            &epoch_values,
            &epoch_values.map(|v| v / 600.0),
        )
        .expect("preset epoch dimension"),
        // Larger batches cut per-epoch wall time; cost shrinks with size.
        Dimension::numeric(
            "batch",
            &batch_values,
            &batch_values.map(|v| 0.2 * (32.0 / v)),
        )
        .expect("preset batch dimension"),
        // Learning rate does not change compute cost.
        Dimension::numeric("learning_rate", &lr_values, &[0.0; 4])
            .expect("preset learning_rate dimension"),
        // Depth scales compute roughly linearly.
        Dimension::numeric("layers", &layer_values, &layer_values.map(|v| v / 20.0))
            .expect("preset layers dimension"),
        // Half precision roughly halves compute.
        Dimension::new(
            "float_point",
            vec![Level::new("half", 0.0), Level::new("full", 1.0)],
            vec![0.5, 1.0],
        )
        .expect("preset float_point dimension"),
        // Compute scales with the square of channel width.
        Dimension::numeric(
            "channels",
            &channel_values,
            &channel_values.map(|v| (v / 36.0) * (v / 36.0)),
        )
        .expect("preset channels dimension"),
        // Cutout augmentation is effectively free at train time.
        Dimension::new(
            "cutout",
            vec![Level::new("off", 0.0), Level::new("on", 1.0)],
            vec![0.0, 0.0],
        )
        .expect("preset cutout dimension"),
        // Compute scales with the square of image side length.
        Dimension::numeric(
            "image_size",
            &image_values,
            &image_values.map(|v| (v / 32.0) * (v / 32.0)),
        )
        .expect("preset image_size dimension"),
    ];
    let space = HyperSpace::new(dims).expect("preset space");
    let reference = space
        .config_from_labels([
            ("epoch", "600"),
            ("batch", "96"),
            ("learning_rate", "0.025"),
            ("layers", "20"),
            ("float_point", "full"),
            ("channels", "36"),
            ("cutout", "on"),
            ("image_size", "32"),
        ])
        .expect("preset reference config");
    (space, ReferenceConfig(reference))
}

/// The cheap 10-epoch recipe that still ranks architectures usefully.
pub fn bpe1_config(space: &HyperSpace) -> Result<BpeConfig> {
    space.config_from_labels([
        ("epoch", "10"),
        ("batch", "128"),
        ("learning_rate", "0.03"),
        ("layers", "6"),
        ("float_point", "full"),
        ("channels", "8"),
        ("cutout", "off"),
        ("image_size", "16"),
    ])
}

/// The 30-epoch recipe trading a little cost for better rank agreement.
pub fn bpe2_config(space: &HyperSpace) -> Result<BpeConfig> {
    space.config_from_labels([
        ("epoch", "30"),
        ("batch", "128"),
        ("learning_rate", "0.03"),
        ("layers", "16"),
        ("float_point", "full"),
        ("channels", "16"),
        ("cutout", "off"),
        ("image_size", "16"),
    ])
}

/// The proxy recipe commonly used by differentiable-search pipelines.
pub fn darts_proxy_config(space: &HyperSpace) -> Result<BpeConfig> {
    space.config_from_labels([
        ("epoch", "50"),
        ("batch", "64"),
        ("learning_rate", "0.025"),
        ("layers", "8"),
        ("float_point", "full"),
        ("channels", "16"),
        ("cutout", "off"),
        ("image_size", "32"),
    ])
}

// --- space file (TOML) -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    #[serde(rename = "dimension")]
    dimensions: Vec<SpaceFileDimension>,
}

#[derive(Serialize, Deserialize)]
struct SpaceFileDimension {
    name: String,
    levels: Vec<SpaceFileLevel>,
    costs: Vec<f64>,
    /// Level index the reference config selects in this dimension.
    reference: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceFileLevel {
    Number(f64),
    Labeled { label: String, value: f64 },
}

/// Parses a space definition from TOML text.
///
/// Each `[[dimension]]` table carries `name`, `levels` (numbers, or
/// `{ label, value }` tables), `costs`, and `reference` (the level index the
/// reference config uses).
pub fn space_from_toml(text: &str) -> Result<(HyperSpace, ReferenceConfig)> {
    let file: SpaceFile =
        toml::from_str(text).map_err(|e| Error::Parse(format!("space file: {e}")))?;
    let mut dims = Vec::with_capacity(file.dimensions.len());
    let mut reference = Vec::with_capacity(file.dimensions.len());
    for d in file.dimensions {
        let levels = d
            .levels
            .into_iter()
            .map(|l| match l {
                SpaceFileLevel::Number(v) => Level::new(v.to_string(), v),
                SpaceFileLevel::Labeled { label, value } => Level::new(label, value),
            })
            .collect();
        let dim = Dimension::new(d.name, levels, d.costs)?;
        if d.reference >= dim.len() {
            return Err(Error::Space(format!(
                "dimension {}: reference level {} out of range",
                dim.name(),
                d.reference
            )));
        }
        reference.push(d.reference);
        dims.push(dim);
    }
    let space = HyperSpace::new(dims)?;
    Ok((space, ReferenceConfig(BpeConfig::new(reference))))
}

/// Renders a space and its reference config as TOML accepted by
/// [`space_from_toml`].
pub fn space_to_toml(space: &HyperSpace, reference: &ReferenceConfig) -> String {
    let file = SpaceFile {
        dimensions: space
            .dims()
            .iter()
            .zip(reference.0.assignment())
            .map(|(dim, &sel)| SpaceFileDimension {
                name: dim.name().to_string(),
                levels: dim
                    .levels()
                    .iter()
                    .map(|l| {
                        if l.label == l.encoding.to_string() {
                            SpaceFileLevel::Number(l.encoding)
                        } else {
                            SpaceFileLevel::Labeled {
                                label: l.label.clone(),
                                value: l.encoding,
                            }
                        }
                    })
                    .collect(),
                costs: dim.costs().to_vec(),
                reference: sel,
            })
            .collect(),
    };
    toml::to_string_pretty(&file).expect("space serializes to TOML")
}

// --- config file (bpe.cfg) ---------------------------------------------------

/// Renders a config as `name = label` lines in dimension order — the format
/// written into evaluator work directories.
pub fn config_to_text(space: &HyperSpace, config: &BpeConfig) -> String {
    let mut out = String::new();
    for (name, label) in space.config_labels(config) {
        out.push_str(&name);
        out.push_str(" = ");
        out.push_str(&label);
        out.push('\n');
    }
    out
}

/// Parses `name = label` lines back into a config. Blank lines and `#`
/// comments are ignored; every dimension must appear exactly once.
pub fn config_from_text(space: &HyperSpace, text: &str) -> Result<BpeConfig> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, label) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("config line {}: expected name = label", lineno + 1))
        })?;
        pairs.push((name.trim(), label.trim()));
    }
    space.config_from_labels(pairs)
}
