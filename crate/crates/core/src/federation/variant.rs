use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcp::{Behavior, CpnInput, Routing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Fedcp,
    Fedavg,
    WoCs,
    WoSs,
    WoCsSs,
    WoGfm,
    WoCpn,
    WoCpnGfm,
    WoCpnGh,
    WoCpnGfmGh,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Fedcp,
        Algorithm::Fedavg,
        Algorithm::WoCs,
        Algorithm::WoSs,
        Algorithm::WoCsSs,
        Algorithm::WoGfm,
        Algorithm::WoCpn,
        Algorithm::WoCpnGfm,
        Algorithm::WoCpnGh,
        Algorithm::WoCpnGfmGh,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Fedcp => "fedcp",
            Algorithm::Fedavg => "fedavg",
            Algorithm::WoCs => "wo_cs",
            Algorithm::WoSs => "wo_ss",
            Algorithm::WoCsSs => "wo_cs_ss",
            Algorithm::WoGfm => "wo_gfm",
            Algorithm::WoCpn => "wo_cpn",
            Algorithm::WoCpnGfm => "wo_cpn_gfm",
            Algorithm::WoCpnGh => "wo_cpn_gh",
            Algorithm::WoCpnGfmGh => "wo_cpn_gfm_gh",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.id()).collect();
                Error::config(
                    "algorithm",
                    format!("unknown algorithm `{s}`; expected one of {}", known.join(", ")),
                )
            })
    }
}

/// What each selected client sends back to the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Upload {
    /// Extractor, fused head and CPN.
    ExtractorHeadCpn,
    /// Extractor and fused head.
    ExtractorHead,
    /// Extractor only; heads stay local.
    Extractor,
    /// The client's copy of the single shared model, unfused.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub behavior: Behavior,
    pub upload: Upload,
}

impl Variant {
    pub fn has_cpn(&self) -> bool {
        self.behavior.uses_cpn()
    }

    pub fn uses_global_head(&self) -> bool {
        matches!(
            self.behavior.routing,
            Routing::Policy(_) | Routing::DualHead
        )
    }

    pub fn is_fedavg(&self) -> bool {
        self.upload == Upload::Model
    }
}

pub fn make_variant(algorithm: Algorithm) -> Variant {
    let policy = |input| Routing::Policy(input);
    let (routing, align, upload) = match algorithm {
        Algorithm::Fedcp => (policy(CpnInput::Combined), true, Upload::ExtractorHeadCpn),
        Algorithm::WoCs => (policy(CpnInput::SampleOnly), true, Upload::ExtractorHeadCpn),
        Algorithm::WoSs => (policy(CpnInput::ClientOnly), true, Upload::ExtractorHeadCpn),
        Algorithm::WoCsSs => (policy(CpnInput::Random), true, Upload::ExtractorHeadCpn),
        Algorithm::WoGfm => (policy(CpnInput::Combined), false, Upload::ExtractorHeadCpn),
        Algorithm::WoCpn => (Routing::DualHead, true, Upload::ExtractorHead),
        Algorithm::WoCpnGfm => (Routing::DualHead, false, Upload::ExtractorHead),
        Algorithm::WoCpnGh => (Routing::PersonalOnly, true, Upload::Extractor),
        Algorithm::WoCpnGfmGh => (Routing::PersonalOnly, false, Upload::Extractor),
        Algorithm::Fedavg => (Routing::PersonalOnly, false, Upload::Model),
    };
    Variant {
        algorithm,
        behavior: Behavior { routing, align },
        upload,
    }
}

/// Parses an id and builds its variant.
pub fn variant_by_id(id: &str) -> Result<Variant> {
    Ok(make_variant(id.parse()?))
}
