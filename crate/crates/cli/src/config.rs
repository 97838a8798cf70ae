//! TOML experiment configuration: typed sections per experiment, unknown
//! keys rejected so a misspelled tolerance cannot silently default.

use serde::Deserialize;

use conewave_core::experiment::FamilySpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub n: usize,
    pub period: f64,
    pub grid_points: usize,
}

impl Default for DomainSection {
    fn default() -> DomainSection {
        DomainSection {
            n: 2,
            period: 32.0,
            grid_points: 128,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    pub r_list: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlueconeSection {
    pub big_r_list: Vec<f64>,
    pub family: FamilySpec,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleconeSection {
    pub r_list: Vec<f64>,
    pub family: FamilySpec,
    pub cube_side: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KscalingSection {
    pub k_list: Vec<u32>,
    pub p: f64,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default = "default_kslices")]
    pub slices: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AratioSection {
    pub big_r_list: Vec<f64>,
    pub p: f64,
    pub family: FamilySpec,
    /// Pairs drawn from the family per cube size.
    pub pairs: usize,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

fn default_g() -> usize {
    64
}
fn default_slices() -> usize {
    16
}
fn default_kslices() -> usize {
    64
}
fn default_resolution() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    #[serde(default)]
    pub domain: Option<DomainSection>,
    #[serde(default)]
    pub mock: Option<MockSection>,
    #[serde(default)]
    pub bluecone: Option<BlueconeSection>,
    #[serde(default)]
    pub doublecone: Option<DoubleconeSection>,
    #[serde(default)]
    pub kscaling: Option<KscalingSection>,
    #[serde(default)]
    pub aratio: Option<AratioSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(format!("sweep grid `{name}` is empty"))
            } else {
                Ok(())
            }
        };
        match self.experiment.as_str() {
            "mock" => {
                let s = self.mock.as_ref().ok_or("missing [mock] section")?;
                nonempty("mock.r_list", s.r_list.len())?;
                nonempty("mock.trials", s.trials)?;
            }
            "bluecone" => {
                let s = self.bluecone.as_ref().ok_or("missing [bluecone] section")?;
                nonempty("bluecone.big_r_list", s.big_r_list.len())?;
            }
            "doublecone" => {
                let s = self
                    .doublecone
                    .as_ref()
                    .ok_or("missing [doublecone] section")?;
                nonempty("doublecone.r_list", s.r_list.len())?;
            }
            "kscaling" => {
                let s = self.kscaling.as_ref().ok_or("missing [kscaling] section")?;
                nonempty("kscaling.k_list", s.k_list.len())?;
            }
            "aratio" => {
                let s = self.aratio.as_ref().ok_or("missing [aratio] section")?;
                nonempty("aratio.big_r_list", s.big_r_list.len())?;
                nonempty("aratio.pairs", s.pairs)?;
            }
            other => {
                return Err(format!(
                    "unknown experiment `{other}`; expected mock, bluecone, doublecone, kscaling, or aratio"
                ))
            }
        }
        Ok(())
    }
}
