//! Versioned TOML snapshots of filter states. Matrices are stored row-major
//! next to their dimension, so files diff cleanly and parse back bit-exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterState, Modality, UEPosterior};
use crate::geometry::LandmarkKind;
use crate::rfs::{Bernoulli, Gaussian, ModelHypothesis, PMBMap, PPPIntensity, PppComponent};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub schema_version: u32,
    pub bs: [f64; 3],
    pub states: Vec<StateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub modality: String,
    pub next_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue_track: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue: Option<GaussianRecord>,
    #[serde(default)]
    pub ppp: Vec<PppRecord>,
    #[serde(default)]
    pub bernoullis: Vec<BernoulliRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major, `dim * dim` entries.
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PppRecord {
    pub weight: f64,
    pub density: GaussianRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BernoulliRecord {
    pub id: u64,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub hypotheses: Vec<HypothesisRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisRecord {
    pub kind: String,
    pub weight: f64,
    pub density: GaussianRecord,
}

impl GaussianRecord {
    fn from_gaussian(g: &Gaussian) -> Self {
        let n = g.dim();
        Self {
            dim: n,
            mean: g.mean.iter().copied().collect(),
            cov: (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|rc| g.cov[rc]).collect(),
        }
    }

    fn to_gaussian(&self) -> Result<Gaussian> {
        let n = self.dim;
        if self.mean.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.mean.len(),
            });
        }
        if self.cov.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: self.cov.len(),
            });
        }
        Gaussian::new(
            DVector::from_column_slice(&self.mean),
            DMatrix::from_row_slice(n, n, &self.cov),
        )
    }
}

fn parse_kind(s: &str) -> Result<LandmarkKind> {
    LandmarkKind::parse(s).ok_or_else(|| Error::Config(format!("unknown landmark kind `{s}`")))
}

fn parse_modality(s: &str) -> Result<Modality> {
    match s {
        "bistatic" => Ok(Modality::Bistatic),
        "monostatic" => Ok(Modality::Monostatic),
        _ => Err(Error::Config(format!("unknown modality `{s}`"))),
    }
}

impl StateRecord {
    pub fn from_state(fs: &FilterState) -> Self {
        Self {
            modality: fs.modality.as_str().to_owned(),
            next_id: fs.map.next_id,
            ue_track: fs.ue_track,
            ue: fs.ue.as_ref().map(|u| GaussianRecord::from_gaussian(&u.density)),
            ppp: fs
                .map
                .ppp
                .components
                .iter()
                .map(|c| PppRecord {
                    weight: c.weight,
                    density: GaussianRecord::from_gaussian(&c.density),
                })
                .collect(),
            bernoullis: fs
                .map
                .bernoullis
                .iter()
                .map(|b| BernoulliRecord {
                    id: b.id,
                    r: b.r,
                    class: b.class.map(|k| k.as_str().to_owned()),
                    hypotheses: b
                        .hypotheses
                        .iter()
                        .map(|h| HypothesisRecord {
                            kind: h.kind.as_str().to_owned(),
                            weight: h.weight,
                            density: GaussianRecord::from_gaussian(&h.density),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_state(&self) -> Result<FilterState> {
        let ppp = self
            .ppp
            .iter()
            .map(|c| {
                Ok(PppComponent {
                    weight: c.weight,
                    density: c.density.to_gaussian()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bernoullis = self
            .bernoullis
            .iter()
            .map(|b| {
                let hypotheses = b
                    .hypotheses
                    .iter()
                    .map(|h| {
                        Ok(ModelHypothesis {
                            kind: parse_kind(&h.kind)?,
                            weight: h.weight,
                            density: h.density.to_gaussian()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut out = Bernoulli::new(b.id, b.r, hypotheses);
                out.class = b.class.as_deref().map(parse_kind).transpose()?;
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut map = PMBMap::new(PPPIntensity::new(ppp));
        map.bernoullis = bernoullis;
        map.next_id = self.next_id;
        let fs = FilterState {
            modality: parse_modality(&self.modality)?,
            map,
            ue: self
                .ue
                .as_ref()
                .map(|g| g.to_gaussian().and_then(UEPosterior::new))
                .transpose()?,
            ue_track: self.ue_track,
        };
        fs.validate()?;
        Ok(fs)
    }
}

impl Snapshot {
    pub fn new(bs: &Vector3<f64>, states: &[&FilterState]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            bs: [bs.x, bs.y, bs.z],
            states: states.iter().map(|s| StateRecord::from_state(s)).collect(),
        }
    }

    pub fn bs(&self) -> Vector3<f64> {
        Vector3::from(self.bs)
    }

    pub fn states(&self) -> Result<Vec<FilterState>> {
        self.states.iter().map(StateRecord::to_state).collect()
    }

    /// The single state of `modality` held by this snapshot.
    pub fn state(&self, modality: Modality) -> Result<FilterState> {
        let mut found = self
            .states
            .iter()
            .filter(|s| s.modality == modality.as_str());
        match (found.next(), found.next()) {
            (Some(s), None) => s.to_state(),
            (None, _) => Err(Error::Config(format!("snapshot holds no {} state", modality.as_str()))),
            _ => Err(Error::Config(format!("snapshot holds several {} states", modality.as_str()))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: v.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::contract(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g3(x: f64, var: f64) -> Gaussian {
        Gaussian::new(
            DVector::from_vec(vec![x, 1.0 / 3.0, 10.1]),
            DMatrix::from_fn(3, 3, |r, c| if r == c { var } else { 0.1 * var / 7.0 }),
        )
        .unwrap()
    }

    fn state() -> FilterState {
        let mut map = PMBMap::new(PPPIntensity::new(vec![PppComponent {
            weight: 1e-3,
            density: g3(-3.0, 400.0),
        }]));
        let mut b = Bernoulli::new(
            4,
            0.87654321,
            vec![
                ModelHypothesis {
                    kind: LandmarkKind::Sp,
                    weight: 0.3,
                    density: g3(25.0, 0.01),
                },
                ModelHypothesis {
                    kind: LandmarkKind::Va,
                    weight: 0.7,
                    density: g3(100.0, 0.04),
                },
            ],
        );
        b.class = Some(LandmarkKind::Va);
        map.bernoullis.push(b);
        map.next_id = 5;
        let ue = Gaussian::new(
            DVector::from_vec(vec![20.0, 0.1, 0.0, 1.5707963267948966, 3.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.09, 0.09, 0.01, 2.7e-5, 0.09])),
        )
        .unwrap();
        FilterState {
            modality: Modality::Bistatic,
            map,
            ue: Some(UEPosterior::new(ue).unwrap()),
            ue_track: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let fs = state();
        let snap = Snapshot::new(&Vector3::new(0.0, 0.0, 10.0), &[&fs]);
        let text = snap.to_toml_string().unwrap();
        let back = Snapshot::from_toml_str(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.state(Modality::Bistatic).unwrap(), fs);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn rejects_other_schema_versions() {
        let fs = state();
        let mut snap = Snapshot::new(&Vector3::zeros(), &[&fs]);
        snap.schema_version = 2;
        let text = toml::to_string(&snap).unwrap();
        assert!(matches!(
            Snapshot::from_toml_str(&text),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }

    #[test]
    fn rejects_bad_layout() {
        let fs = state();
        let mut snap = Snapshot::new(&Vector3::zeros(), &[&fs]);
        snap.states[0].bernoullis[0].hypotheses[0].density.cov.pop();
        assert!(snap.states().is_err());
        assert!(snap.state(Modality::Monostatic).is_err());
    }
}
