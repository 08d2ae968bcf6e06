use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The fourteen propaganda techniques of the shared-task label set.
///
/// Variant order is the enum index used for deterministic tie-breaking
/// (most frequent technique first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technique {
    LoadedLanguage,
    NameCalling,
    Repetition,
    Exaggeration,
    Doubt,
    AppealToFear,
    FlagWaving,
    CausalOversimplification,
    Slogans,
    AppealToAuthority,
    BlackAndWhite,
    ThoughtTerminatingCliche,
    Whataboutism,
    Bandwagon,
}

pub const NUM_TECHNIQUES: usize = 14;

impl Technique {
    pub const ALL: [Technique; NUM_TECHNIQUES] = [
        Technique::LoadedLanguage,
        Technique::NameCalling,
        Technique::Repetition,
        Technique::Exaggeration,
        Technique::Doubt,
        Technique::AppealToFear,
        Technique::FlagWaving,
        Technique::CausalOversimplification,
        Technique::Slogans,
        Technique::AppealToAuthority,
        Technique::BlackAndWhite,
        Technique::ThoughtTerminatingCliche,
        Technique::Whataboutism,
        Technique::Bandwagon,
    ];

    /// Label string as written in the official annotation files.
    pub fn name(self) -> &'static str {
        match self {
            Technique::LoadedLanguage => "Loaded_Language",
            Technique::NameCalling => "Name_Calling,Labeling",
            Technique::Repetition => "Repetition",
            Technique::Exaggeration => "Exaggeration,Minimisation",
            Technique::Doubt => "Doubt",
            Technique::AppealToFear => "Appeal_to_fear-prejudice",
            Technique::FlagWaving => "Flag-Waving",
            Technique::CausalOversimplification => "Causal_Oversimplification",
            Technique::Slogans => "Slogans",
            Technique::AppealToAuthority => "Appeal_to_Authority",
            Technique::BlackAndWhite => "Black-and-White_Fallacy",
            Technique::ThoughtTerminatingCliche => "Thought-terminating_Cliches",
            Technique::Whataboutism => "Whataboutism,Straw_Men,Red_Herring",
            Technique::Bandwagon => "Bandwagon,Reductio_ad_hitlerum",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Technique> {
        Self::ALL.get(index).copied()
    }

    pub fn from_name(name: &str) -> Option<Technique> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown technique {0:?}")]
pub struct UnknownTechnique(pub String);

impl FromStr for Technique {
    type Err = UnknownTechnique;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::from_name(s).ok_or_else(|| UnknownTechnique(s.to_string()))
    }
}
