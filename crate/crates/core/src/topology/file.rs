//! JSON form of a topology specification.
//!
//! Connection rows keep the short relation field names (`t1`, `t2`, `o`, `d`,
//! `q`, `f`, `r`). Multiplicity is a positive integer or the string `"inf"`.
//! Rigid topologies name a locator registered in code.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    ConnectionType, ContextRule, ContingentGroup, Delivery, Multiplicity, NodeType, NodeTypeMask,
    SelectionPolicy, TopologyConnection, TopologySpec,
};
use crate::locator::Locator;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed topology JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad multiplicity {0:?}: expected a positive integer or \"inf\"")]
    BadMultiplicity(String),
    #[error("unknown locator: {0}")]
    UnknownLocator(String),
    #[error("unknown context rule: {0}")]
    UnknownContextRule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub name: String,
    pub node_types: Vec<String>,
    pub connection_types: Vec<ConnectionTypeFile>,
    pub connections: Vec<ConnectionFile>,
    #[serde(default)]
    pub groups: Vec<GroupFile>,
    pub wiring: BTreeMap<String, String>,
    pub selection_policy: SelectionPolicyFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub type_change_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionTypeFile {
    pub name: String,
    pub delivery: Delivery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskFile {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MultiplicityFile {
    Count(u32),
    Token(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionFile {
    pub name: String,
    pub t1: MaskFile,
    pub t2: MaskFile,
    pub o: String,
    pub d: Option<String>,
    pub q: MultiplicityFile,
    pub f: bool,
    pub r: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    #[serde(rename = "ref")]
    pub reference: String,
    pub members: Vec<String>,
    pub owner: String,
    #[serde(default)]
    pub rigid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicyFile {
    pub initial: String,
    pub join_default: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_rule: Option<String>,
}

impl MaskFile {
    fn into_mask(self) -> NodeTypeMask {
        match self {
            MaskFile::One(n) => NodeTypeMask::new([n]),
            MaskFile::Many(ns) => NodeTypeMask::new(ns),
        }
    }

    fn from_mask(mask: &NodeTypeMask) -> Self {
        let names: Vec<String> = mask.names().map(str::to_string).collect();
        match names.as_slice() {
            [one] => MaskFile::One(one.clone()),
            _ => MaskFile::Many(names),
        }
    }
}

impl MultiplicityFile {
    fn parse(&self) -> Result<Multiplicity, LoadError> {
        match self {
            MultiplicityFile::Count(n) => {
                Multiplicity::finite(*n).ok_or_else(|| LoadError::BadMultiplicity(n.to_string()))
            }
            MultiplicityFile::Token(t) if t == "inf" => Ok(Multiplicity::Unbounded),
            MultiplicityFile::Token(t) => Err(LoadError::BadMultiplicity(t.clone())),
        }
    }
}

impl From<Multiplicity> for MultiplicityFile {
    fn from(m: Multiplicity) -> Self {
        match m {
            Multiplicity::Finite(n) => MultiplicityFile::Count(n.get()),
            Multiplicity::Unbounded => MultiplicityFile::Token("inf".into()),
        }
    }
}

impl TryFrom<TopologyFile> for TopologySpec {
    type Error = LoadError;

    fn try_from(file: TopologyFile) -> Result<Self, Self::Error> {
        let connections = file
            .connections
            .into_iter()
            .map(|c| {
                Ok(TopologyConnection {
                    multiplicity: c.q.parse()?,
                    name: c.name,
                    local: c.t1.into_mask(),
                    remote: c.t2.into_mask(),
                    connection_type: c.o,
                    direction: c.d,
                    required: c.f,
                    group: c.r,
                })
            })
            .collect::<Result<Vec<_>, LoadError>>()?;
        let locator = file
            .locator
            .map(|name| Locator::named(&name).ok_or(LoadError::UnknownLocator(name)))
            .transpose()?;
        let p = file.selection_policy;
        let context_rule = p
            .context_rule
            .map(|name| {
                ContextRule::named(&name, &p.initial).ok_or(LoadError::UnknownContextRule(name))
            })
            .transpose()?;
        Ok(TopologySpec {
            name: file.name,
            node_types: file.node_types.into_iter().map(NodeType::new).collect(),
            connection_types: file
                .connection_types
                .into_iter()
                .map(|t| ConnectionType {
                    name: t.name,
                    delivery: t.delivery,
                })
                .collect(),
            connections,
            groups: file
                .groups
                .into_iter()
                .map(|g| ContingentGroup {
                    reference: g.reference,
                    members: g.members.into_iter().collect(),
                    owner: g.owner,
                    rigid: g.rigid,
                })
                .collect(),
            wiring: file.wiring,
            selection_policy: SelectionPolicy {
                initial: p.initial,
                join_default: p.join_default,
                context_rule,
            },
            locator,
            type_change_map: file.type_change_map,
        })
    }
}

impl From<&TopologySpec> for TopologyFile {
    fn from(spec: &TopologySpec) -> Self {
        TopologyFile {
            name: spec.name.clone(),
            node_types: spec.node_types.iter().map(|t| t.name.clone()).collect(),
            connection_types: spec
                .connection_types
                .iter()
                .map(|t| ConnectionTypeFile {
                    name: t.name.clone(),
                    delivery: t.delivery,
                })
                .collect(),
            connections: spec
                .connections
                .iter()
                .map(|c| ConnectionFile {
                    name: c.name.clone(),
                    t1: MaskFile::from_mask(&c.local),
                    t2: MaskFile::from_mask(&c.remote),
                    o: c.connection_type.clone(),
                    d: c.direction.clone(),
                    q: c.multiplicity.into(),
                    f: c.required,
                    r: c.group.clone(),
                })
                .collect(),
            groups: spec
                .groups
                .iter()
                .map(|g| GroupFile {
                    reference: g.reference.clone(),
                    // keep relation order so files read like the tables they come from
                    members: spec
                        .group_members(g)
                        .map(|c| c.name.clone())
                        .chain(
                            g.members
                                .iter()
                                .filter(|m| spec.connection(m).is_none())
                                .cloned(),
                        )
                        .collect(),
                    owner: g.owner.clone(),
                    rigid: g.rigid,
                })
                .collect(),
            wiring: spec.wiring.clone(),
            selection_policy: SelectionPolicyFile {
                initial: spec.selection_policy.initial.clone(),
                join_default: spec.selection_policy.join_default.clone(),
                context_rule: spec
                    .selection_policy
                    .context_rule
                    .as_ref()
                    .map(|r| r.name.clone()),
            },
            locator: spec.locator.as_ref().map(|l| l.name.clone()),
            type_change_map: spec.type_change_map.clone(),
        }
    }
}

impl TopologySpec {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let file: TopologyFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&TopologyFile::from(self))
            .expect("topology file serialization is infallible");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topologies::{mesh4, mesh6, star};

    #[test]
    fn builtins_round_trip_through_json() {
        for spec in [star(), mesh4(), mesh6()] {
            let back = TopologySpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn multiplicity_encoding() {
        let text = star().to_json();
        assert!(text.contains("\"q\": \"inf\""));
        assert!(text.contains("\"q\": 1"));
    }

    #[test]
    fn zero_multiplicity_is_rejected() {
        let text = star().to_json().replace("\"q\": 1", "\"q\": 0");
        assert!(matches!(
            TopologySpec::from_json(&text),
            Err(LoadError::BadMultiplicity(_))
        ));
    }

    #[test]
    fn unknown_locator_is_a_load_error() {
        let text = mesh4().to_json().replace("\"mesh4\"", "\"torus\"");
        assert!(matches!(
            TopologySpec::from_json(&text),
            Err(LoadError::UnknownLocator(l)) if l == "torus"
        ));
    }

    #[test]
    fn not_json() {
        assert!(matches!(
            TopologySpec::from_json("star: yes"),
            Err(LoadError::Json(_))
        ));
    }
}
