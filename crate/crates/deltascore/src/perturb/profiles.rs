//! Aspect taxonomy and the default perturbation profiles.

use serde::{Deserialize, Serialize};

use super::{PerturbError, PerturbationKind, PerturbationSpec};

/// The five rated story-quality aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aspect {
    Fluency,
    Coherence,
    Relatedness,
    Logicality,
    Interestingness,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [
        Aspect::Fluency,
        Aspect::Coherence,
        Aspect::Relatedness,
        Aspect::Logicality,
        Aspect::Interestingness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Fluency => "fluency",
            Aspect::Coherence => "coherence",
            Aspect::Relatedness => "relatedness",
            Aspect::Logicality => "logicality",
            Aspect::Interestingness => "interestingness",
        }
    }

    /// Column header used in report tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Aspect::Fluency => "Flu.",
            Aspect::Coherence => "Coh.",
            Aspect::Relatedness => "Rel.",
            Aspect::Logicality => "Log.",
            Aspect::Interestingness => "Int.",
        }
    }
}

impl std::fmt::Display for Aspect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Aspect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown aspect '{s}'"))
    }
}

/// One perturbation spec targeted at one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectProfile {
    pub aspect: Aspect,
    pub spec: PerturbationSpec,
}

/// The quality aspect each perturbation kind targets.
pub fn aspect_of(kind: PerturbationKind) -> Aspect {
    match kind {
        PerturbationKind::Typo | PerturbationKind::SubjVerbDis => Aspect::Fluency,
        PerturbationKind::Jumble | PerturbationKind::SentReorder => Aspect::Coherence,
        PerturbationKind::RmRelWords | PerturbationKind::StoryReplace => Aspect::Relatedness,
        PerturbationKind::Antonym | PerturbationKind::Commonsense => Aspect::Logicality,
        PerturbationKind::BlanderNarrative => Aspect::Interestingness,
    }
}

/// Production degree for a kind: 0.4 / 0.9 / 0.8 for typo / jumble /
/// antonym, 1.0 for the all-or-nothing kinds.
pub fn production_degree(kind: PerturbationKind) -> f64 {
    match kind {
        PerturbationKind::Typo => 0.4,
        PerturbationKind::Jumble => 0.9,
        PerturbationKind::Antonym => 0.8,
        _ => 1.0,
    }
}

/// The three production perturbations (typo@0.4, jumble@0.9, antonym@0.8),
/// each applied across every aspect.
pub fn production_specs(seed: u64) -> Vec<PerturbationSpec> {
    [
        PerturbationKind::Typo,
        PerturbationKind::Jumble,
        PerturbationKind::Antonym,
    ]
    .into_iter()
    .map(|kind| {
        PerturbationSpec::new(kind, production_degree(kind), seed).expect("valid production spec")
    })
    .collect()
}

/// The aspect-targeted alternative: one spec per aspect, using the first
/// perturbation listed for that aspect.
pub fn aspect_targeted_profiles(seed: u64) -> Result<Vec<AspectProfile>, PerturbError> {
    let picks = [
        (Aspect::Fluency, PerturbationKind::Typo),
        (Aspect::Coherence, PerturbationKind::Jumble),
        (Aspect::Relatedness, PerturbationKind::RmRelWords),
        (Aspect::Logicality, PerturbationKind::Antonym),
        (Aspect::Interestingness, PerturbationKind::BlanderNarrative),
    ];
    picks
        .into_iter()
        .map(|(aspect, kind)| {
            Ok(AspectProfile {
                aspect,
                spec: PerturbationSpec::new(kind, production_degree(kind), seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn production_degrees_match_defaults() {
        let specs = production_specs(0);
        assert_eq!(specs.len(), 3);
        let degree_of = |kind| {
            specs
                .iter()
                .find(|s| s.kind == kind)
                .map(|s| s.degree)
                .unwrap()
        };
        assert_eq!(degree_of(PerturbationKind::Typo), 0.4);
        assert_eq!(degree_of(PerturbationKind::Jumble), 0.9);
        assert_eq!(degree_of(PerturbationKind::Antonym), 0.8);
    }

    #[test]
    fn aspect_targeted_set_covers_each_aspect_once() {
        let profiles = aspect_targeted_profiles(0).unwrap();
        assert_eq!(profiles.len(), 5);
        let mut aspects: Vec<Aspect> = profiles.iter().map(|p| p.aspect).collect();
        aspects.sort();
        aspects.dedup();
        assert_eq!(aspects.len(), 5);
    }

    #[test]
    fn table_groupings() {
        assert_eq!(aspect_of(PerturbationKind::SentReorder), Aspect::Coherence);
        assert_eq!(aspect_of(PerturbationKind::StoryReplace), Aspect::Relatedness);
        assert_eq!(aspect_of(PerturbationKind::Commonsense), Aspect::Logicality);
        assert_eq!(aspect_of(PerturbationKind::BlanderNarrative), Aspect::Interestingness);
    }
}
