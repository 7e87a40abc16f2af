//! Functional classification of parameters into modules.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Functional module of a parameter. The declaration order is the
/// tie-break order used when picking the reference module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModuleTag {
    Emb,
    Head,
    QK,
    VO,
    Attn,
    MLP,
    Norm,
    Other,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 8] = [
        ModuleTag::Emb,
        ModuleTag::Head,
        ModuleTag::QK,
        ModuleTag::VO,
        ModuleTag::Attn,
        ModuleTag::MLP,
        ModuleTag::Norm,
        ModuleTag::Other,
    ];

    /// Tags that receive an SNR-derived multiplier. Norm and Other stay at 1.
    pub fn is_scalable(self) -> bool {
        !matches!(self, ModuleTag::Norm | ModuleTag::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::Emb => "Emb",
            ModuleTag::Head => "Head",
            ModuleTag::QK => "QK",
            ModuleTag::VO => "VO",
            ModuleTag::Attn => "Attn",
            ModuleTag::MLP => "MLP",
            ModuleTag::Norm => "Norm",
            ModuleTag::Other => "Other",
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown module tag {s:?}")))
    }
}

/// Grouping granularities, coarsest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeName {
    #[serde(rename = "attn-mlp")]
    AttnMlp,
    #[serde(rename = "attn-mlp-emb")]
    AttnMlpEmb,
    #[serde(rename = "qk-vo-mlp-emb")]
    QkVoMlpEmb,
    #[serde(rename = "full", alias = "qk-vo-mlp-emb-head")]
    Full,
}

impl SchemeName {
    pub const ALL: [SchemeName; 4] = [
        SchemeName::AttnMlp,
        SchemeName::AttnMlpEmb,
        SchemeName::QkVoMlpEmb,
        SchemeName::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::AttnMlp => "attn-mlp",
            SchemeName::AttnMlpEmb => "attn-mlp-emb",
            SchemeName::QkVoMlpEmb => "qk-vo-mlp-emb",
            SchemeName::Full => "full",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str() == s || (s == "qk-vo-mlp-emb-head" && *n == SchemeName::Full))
            .ok_or_else(|| Error::Config(format!("unknown grouping scheme {s:?}")))
    }
}

/// How a rule matches a parameter name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Exact(&'static str),
    Suffix(&'static str),
}

impl Pattern {
    fn matches(&self, name: &str) -> bool {
        match self {
            Pattern::Exact(s) => name == *s,
            Pattern::Suffix(s) => name.ends_with(s),
        }
    }
}

/// Ordered rule table; the first matching rule wins and unmatched names are `Other`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingScheme {
    name: SchemeName,
    rules: Vec<(Pattern, ModuleTag)>,
}

impl GroupingScheme {
    pub fn new(name: SchemeName) -> Self {
        use ModuleTag::*;
        use Pattern::*;
        let norms = [
            (Suffix(".gain"), Norm),
            (Suffix(".bias"), Norm),
        ];
        let (qk, vo) = match name {
            SchemeName::AttnMlp | SchemeName::AttnMlpEmb => (Attn, Attn),
            SchemeName::QkVoMlpEmb | SchemeName::Full => (QK, VO),
        };
        let mut rules: Vec<(Pattern, ModuleTag)> = norms.into();
        rules.extend([
            (Suffix(".attn.w_q"), qk),
            (Suffix(".attn.w_k"), qk),
            (Suffix(".attn.w_v"), vo),
            (Suffix(".attn.w_o"), vo),
            (Suffix(".mlp.w_ff1"), MLP),
            (Suffix(".mlp.w_ff2"), MLP),
        ]);
        if name != SchemeName::AttnMlp {
            rules.push((Exact("token_embedding"), Emb));
        }
        if name == SchemeName::Full {
            rules.push((Exact("head"), Head));
        }
        GroupingScheme { name, rules }
    }

    /// Scheme that sends every parameter to `Other`.
    pub fn empty(name: SchemeName) -> Self {
        GroupingScheme {
            name,
            rules: Vec::new(),
        }
    }

    pub fn name(&self) -> SchemeName {
        self.name
    }

    pub fn rules(&self) -> &[(Pattern, ModuleTag)] {
        &self.rules
    }

    pub fn classify(&self, param_name: &str) -> ModuleTag {
        self.rules
            .iter()
            .find(|(p, _)| p.matches(param_name))
            .map_or(ModuleTag::Other, |(_, t)| *t)
    }

    /// Element counts per tag; tags with no parameters are omitted.
    pub fn tag_counts(&self, params: &ParamSet) -> BTreeMap<ModuleTag, usize> {
        let mut counts = BTreeMap::new();
        for (name, t) in params.iter() {
            *counts.entry(self.classify(name)).or_insert(0) += t.len();
        }
        counts
    }

    /// Parameter-count-weighted fraction of elements in scalable tags.
    pub fn coverage(&self, params: &ParamSet) -> Result<f64> {
        let total = params.numel();
        if total == 0 {
            return Err(Error::InvalidArgument("empty parameter set".into()));
        }
        let covered: usize = self
            .tag_counts(params)
            .iter()
            .filter(|(t, _)| t.is_scalable())
            .map(|(_, n)| n)
            .sum();
        Ok(covered as f64 / total as f64)
    }
}

impl From<SchemeName> for GroupingScheme {
    fn from(name: SchemeName) -> Self {
        GroupingScheme::new(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::{Rng, Tensor};

    #[test]
    fn direct_lookups() {
        let full = GroupingScheme::new(SchemeName::Full);
        assert_eq!(full.classify("layers.0.attn.w_q"), ModuleTag::QK);
        assert_eq!(full.classify("token_embedding"), ModuleTag::Emb);
        assert_eq!(full.classify("head"), ModuleTag::Head);
        assert_eq!(full.classify("layers.1.ln2.gain"), ModuleTag::Norm);
        assert_eq!(full.classify("pos_embedding"), ModuleTag::Other);
        let coarse = GroupingScheme::new(SchemeName::AttnMlp);
        assert_eq!(coarse.classify("layers.1.attn.w_v"), ModuleTag::Attn);
        assert_eq!(coarse.classify("token_embedding"), ModuleTag::Other);
    }

    #[test]
    fn default_model_coverage() {
        let params = ModelConfig::default().init_params(&mut Rng::new(0)).unwrap();
        // parameter-count oracle: everything but pos_embedding and the norms
        let c = ModelConfig::default();
        let d = c.d_model;
        let total = params.numel();
        let uncovered = c.seq_len * d + (2 * c.n_layers + 1) * 2 * d;
        let expected = (total - uncovered) as f64 / total as f64;
        let got = GroupingScheme::new(SchemeName::Full).coverage(&params).unwrap();
        assert_eq!(got, expected);
        assert!(got >= 0.95, "coverage {got}");
    }

    #[test]
    fn coverage_extremes() {
        let params = ModelConfig::default().init_params(&mut Rng::new(0)).unwrap();
        assert_eq!(
            GroupingScheme::empty(SchemeName::Full).coverage(&params).unwrap(),
            0.0
        );
        let mut single = ParamSet::new();
        single.insert("token_embedding", Tensor::zeros(&[4, 2])).unwrap();
        assert_eq!(
            GroupingScheme::new(SchemeName::Full).coverage(&single).unwrap(),
            1.0
        );
        assert!(GroupingScheme::new(SchemeName::Full)
            .coverage(&ParamSet::new())
            .is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for n in SchemeName::ALL {
            assert_eq!(n.as_str().parse::<SchemeName>().unwrap(), n);
        }
        assert!("depthwise".parse::<SchemeName>().is_err());
    }
}
