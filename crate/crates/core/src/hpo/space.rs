use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HpoError;

/// A single hyperparameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DimKind {
    Categorical {
        choices: Vec<ParamValue>,
    },
    Boolean,
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        scale: Scale,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
    /// Fixed for a trial's lifetime because it changes parameter shapes or
    /// optimizer state; exploit still copies it from the donor.
    #[serde(default)]
    pub structural: bool,
}

impl Dimension {
    pub fn continuous(name: &str, lo: f64, hi: f64, scale: Scale) -> Self {
        Self { name: name.into(), kind: DimKind::Continuous { lo, hi, scale }, structural: false }
    }

    pub fn categorical(name: &str, choices: Vec<ParamValue>) -> Self {
        Self { name: name.into(), kind: DimKind::Categorical { choices }, structural: false }
    }

    pub fn boolean(name: &str) -> Self {
        Self { name: name.into(), kind: DimKind::Boolean, structural: false }
    }

    pub fn structural(mut self) -> Self {
        self.structural = true;
        self
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, DimKind::Continuous { .. })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match &self.kind {
            DimKind::Categorical { choices } => choices.choose(rng).expect("validated non-empty").clone(),
            DimKind::Boolean => ParamValue::Bool(rng.random_bool(0.5)),
            DimKind::Continuous { .. } => ParamValue::Float(self.denormalize(rng.random::<f64>())),
        }
    }

    /// Maps a continuous value onto `[0, 1]`, logarithmically for log scales.
    pub fn normalize(&self, v: f64) -> f64 {
        match self.kind {
            DimKind::Continuous { lo, hi, scale: Scale::Linear } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            DimKind::Continuous { lo, hi, scale: Scale::Log } => ((v.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimKind::Continuous { lo, hi, scale: Scale::Linear } => (lo + u * (hi - lo)).clamp(lo, hi),
            DimKind::Continuous { lo, hi, scale: Scale::Log } => (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi),
            _ => 0.0,
        }
    }

    /// Clips a continuous value into bounds.
    pub fn clip(&self, v: f64) -> f64 {
        match self.kind {
            DimKind::Continuous { lo, hi, .. } => v.clamp(lo, hi),
            _ => v,
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParamSpace {
    pub dimensions: Vec<Dimension>,
}

impl HyperParamSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self, HpoError> {
        let s = Self { dimensions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        let mut names = BTreeSet::new();
        for d in &self.dimensions {
            if !names.insert(d.name.as_str()) {
                return Err(HpoError::Space(format!("duplicate dimension {}", d.name)));
            }
            match &d.kind {
                DimKind::Categorical { choices } if choices.is_empty() => {
                    return Err(HpoError::Space(format!("{}: empty categorical domain", d.name)));
                }
                DimKind::Continuous { lo, hi, scale } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(HpoError::Space(format!("{}: bounds must satisfy lo < hi", d.name)));
                    }
                    if *scale == Scale::Log && *lo <= 0.0 {
                        return Err(HpoError::Space(format!("{}: log scale needs a positive lower bound", d.name)));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Config {
        self.dimensions.iter().map(|d| (d.name.clone(), d.sample(rng))).collect()
    }

    /// Continuous, non-structural dimensions: the ones the bandit models.
    pub fn continuous(&self) -> Vec<&Dimension> {
        self.dimensions.iter().filter(|d| d.is_continuous() && !d.structural).collect()
    }

    /// Position of `config` in the unit cube over [`HyperParamSpace::continuous`].
    pub fn embed(&self, config: &Config) -> Vec<f64> {
        self.continuous().iter().map(|d| d.normalize(config.get(&d.name).and_then(ParamValue::as_f64).unwrap_or(0.0))).collect()
    }

    /// Reads a space from JSON or TOML text (a `dimensions` array).
    pub fn from_toml_or_json(text: &str) -> Result<Self, HpoError> {
        let s: Self = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(json_err) => toml::from_str(text).map_err(|e| HpoError::Space(format!("not JSON ({json_err}) or TOML ({e})")))?,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Independent draws from `space`, deterministic in `seed`.
pub fn sample_initial_population(space: &HyperParamSpace, n: usize, seed: u64) -> Result<Vec<Config>, HpoError> {
    if n < 2 {
        return Err(HpoError::Population(n));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| space.sample(&mut rng)).collect())
}

/// Search spaces of the three model families. Epoch counts are left out:
/// the tuner's budget decides them.
pub mod presets {
    use super::*;

    fn ints(v: &[i64]) -> Vec<ParamValue> {
        v.iter().map(|&i| ParamValue::Int(i)).collect()
    }

    fn texts(v: &[&str]) -> Vec<ParamValue> {
        v.iter().map(|s| ParamValue::Text(s.to_string())).collect()
    }

    const WIDTHS: [i64; 7] = [8, 24, 40, 64, 88, 104, 128];
    const KS: [i64; 7] = [2, 3, 4, 5, 6, 7, 8];

    fn graph_dims() -> Vec<Dimension> {
        vec![
            Dimension::categorical("k_noncov", ints(&KS)).structural(),
            Dimension::categorical("k_cov", ints(&KS)).structural(),
            Dimension::continuous("noncov_threshold", 1.2, 5.9, Scale::Linear).structural(),
            Dimension::continuous("cov_threshold", 1.2, 5.9, Scale::Linear).structural(),
            Dimension::categorical("gather_width_noncov", ints(&WIDTHS)).structural(),
            Dimension::categorical("gather_width_cov", ints(&WIDTHS)).structural(),
        ]
    }

    pub fn cnn3d() -> HyperParamSpace {
        HyperParamSpace::new(vec![
            Dimension::categorical("batch_size", ints(&[8, 12, 24])),
            Dimension::continuous("learning_rate", 1e-6, 1e-4, Scale::Log),
            Dimension::boolean("batch_norm").structural(),
            Dimension::categorical("dense_nodes", ints(&[40, 64, 88, 104, 128])).structural(),
            Dimension::boolean("residual_1").structural(),
            Dimension::boolean("residual_2").structural(),
            Dimension::categorical("conv_filters_1", ints(&[32, 64, 96])).structural(),
            Dimension::categorical("conv_filters_2", ints(&[64, 96, 128])).structural(),
        ])
        .expect("valid preset")
    }

    pub fn sg_cnn() -> HyperParamSpace {
        let mut dims = vec![Dimension::categorical("batch_size", ints(&[4, 8, 12, 16])), Dimension::continuous("learning_rate", 2e-4, 2e-2, Scale::Log)];
        dims.extend(graph_dims());
        HyperParamSpace::new(dims).expect("valid preset")
    }

    pub fn fusion() -> HyperParamSpace {
        let mut dims = vec![
            Dimension::categorical("optimizer", texts(&["adam", "adamw", "rmsprop", "adadelta"])).structural(),
            Dimension::categorical("activation", texts(&["relu", "leaky-relu", "selu"])),
            Dimension::categorical("batch_size", ints(&[1, 2, 4, 5, 8, 12, 16, 24, 28, 34, 38, 48, 56])),
            Dimension::continuous("learning_rate", 1e-8, 1e-3, Scale::Log),
            Dimension::boolean("model_specific_layers").structural(),
            Dimension::boolean("pre_trained").structural(),
            Dimension::boolean("batch_norm").structural(),
            Dimension::continuous("dropout_early", 0.0, 0.5, Scale::Linear),
            Dimension::continuous("dropout_mid", 0.0, 0.25, Scale::Linear),
            Dimension::continuous("dropout_late", 0.0, 0.125, Scale::Linear),
            Dimension::categorical("n_fusion_layers", ints(&[3, 4, 5])).structural(),
            Dimension::categorical("dense_nodes", ints(&WIDTHS)).structural(),
            Dimension::boolean("residual_1").structural(),
            Dimension::boolean("residual_2").structural(),
            Dimension::categorical("conv_filters_1", ints(&[32, 64, 96])).structural(),
            Dimension::categorical("conv_filters_2", ints(&[64, 96, 128])).structural(),
        ];
        dims.extend(graph_dims());
        HyperParamSpace::new(dims).expect("valid preset")
    }

    /// Fusion-block hyperparameters tuned at desk scale on a fixed
    /// architecture.
    pub fn desk_fusion() -> HyperParamSpace {
        HyperParamSpace::new(vec![
            Dimension::continuous("learning_rate", 1e-4, 1e-2, Scale::Log),
            Dimension::categorical("activation", texts(&["relu", "leaky-relu", "selu"])),
            Dimension::categorical("batch_size", ints(&[8, 12, 16, 24])),
            Dimension::continuous("dropout_early", 0.0, 0.5, Scale::Linear),
            Dimension::continuous("dropout_mid", 0.0, 0.25, Scale::Linear),
            Dimension::continuous("dropout_late", 0.0, 0.125, Scale::Linear),
        ])
        .expect("valid preset")
    }

    /// One learning-rate dimension on `[0, 1]`, for the quadratic trainable.
    pub fn quadratic() -> HyperParamSpace {
        HyperParamSpace::new(vec![Dimension::continuous("lr", 0.0, 1.0, Scale::Linear)]).expect("valid preset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rates_within_bounds() {
        for space in [presets::cnn3d(), presets::sg_cnn(), presets::fusion()] {
            let DimKind::Continuous { lo, hi, .. } = space.get("learning_rate").unwrap().kind else { panic!() };
            for c in sample_initial_population(&space, 200, 3).unwrap() {
                let lr = c["learning_rate"].as_f64().unwrap();
                assert!(lr >= lo && lr <= hi);
            }
        }
    }

    #[test]
    fn seeds_differ() {
        let s = presets::fusion();
        assert_ne!(sample_initial_population(&s, 4, 1).unwrap(), sample_initial_population(&s, 4, 2).unwrap());
        assert_eq!(sample_initial_population(&s, 4, 1).unwrap(), sample_initial_population(&s, 4, 1).unwrap());
    }

    #[test]
    fn graph_k_values_in_listed_set() {
        for c in sample_initial_population(&presets::sg_cnn(), 90, 7).unwrap() {
            for k in ["k_cov", "k_noncov"] {
                let v = c[k].as_f64().unwrap();
                assert!((2.0..=8.0).contains(&v) && v.fract() == 0.0);
            }
        }
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(HyperParamSpace::new(vec![Dimension::boolean("a"), Dimension::boolean("a")]).is_err());
        assert!(HyperParamSpace::new(vec![Dimension::continuous("a", 1.0, 1.0, Scale::Linear)]).is_err());
        assert!(HyperParamSpace::new(vec![Dimension::continuous("a", 0.0, 1.0, Scale::Log)]).is_err());
        assert!(HyperParamSpace::new(vec![Dimension::categorical("a", vec![])]).is_err());
        assert!(matches!(sample_initial_population(&presets::quadratic(), 1, 0), Err(HpoError::Population(1))));
    }

    #[test]
    fn normalize_round_trips() {
        let d = Dimension::continuous("lr", 1e-6, 1e-2, Scale::Log);
        for u in [0.0, 0.3, 0.77, 1.0] {
            assert!((d.normalize(d.denormalize(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn text_round_trip() {
        let s = presets::fusion();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(HyperParamSpace::from_toml_or_json(&json).unwrap(), s);
        let toml_text = toml::to_string(&s).unwrap();
        assert_eq!(HyperParamSpace::from_toml_or_json(&toml_text).unwrap(), s);
    }
}
