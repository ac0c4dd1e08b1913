//! Relative coordinates for rigidly structured topologies.
//!
//! A [`Locator`] gives every direction token a unit vector. Coordinates only
//! ever describe a node relative to some origin node; there is no global
//! frame. Reciprocal directions have opposite vectors.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use thiserror::Error;

use crate::node::NodeId;
use crate::topology::{TopologyError, TopologySpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocatorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("via and want are the same connection: {0}")]
    SameConnection(String),
    #[error("{via} and {want} are not members of one rigid contingent group")]
    NotRigidlyContingent { via: String, want: String },
    #[error("topology has no locator")]
    NoLocator,
    #[error("connection {0} has no direction known to the locator")]
    NoDirection(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// A fixed-length integer vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coordinates(pub Vec<i64>);

impl Coordinates {
    pub fn new(components: impl Into<Vec<i64>>) -> Self {
        Self(components.into())
    }

    pub fn zero(dimension: usize) -> Self {
        Self(vec![0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, LocatorError> {
        if self.dimension() != other.dimension() {
            return Err(LocatorError::DimensionMismatch(
                self.dimension(),
                other.dimension(),
            ));
        }
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl Add for &Coordinates {
    type Output = Coordinates;

    /// Panics on dimension mismatch; use [`Coordinates::checked_add`] otherwise.
    fn add(self, rhs: &Coordinates) -> Coordinates {
        self.checked_add(rhs).expect("coordinate dimensions agree")
    }
}

impl Sub for &Coordinates {
    type Output = Coordinates;

    fn sub(self, rhs: &Coordinates) -> Coordinates {
        self.checked_add(&rhs.negated())
            .expect("coordinate dimensions agree")
    }
}

impl Neg for &Coordinates {
    type Output = Coordinates;

    fn neg(self) -> Coordinates {
        self.negated()
    }
}

impl fmt::Display for Coordinates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Locates a destination from an origin: where it is, and which of its
/// connections faces back along the path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Address {
    pub offset: Coordinates,
    pub target_connection: String,
}

impl Address {
    pub fn new(offset: Coordinates, target_connection: impl Into<String>) -> Self {
        Self {
            offset,
            target_connection: target_connection.into(),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.offset, self.target_connection)
    }
}

/// Step-count metric used to keep walks minimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    /// Square lattice with axis-aligned unit steps.
    Manhattan,
    /// Axial hex lattice whose steps include (1,-1) and (-1,1).
    AxialHex,
}

impl Metric {
    fn steps(self, offset: &Coordinates) -> u64 {
        match self {
            Metric::Manhattan => offset.0.iter().map(|c| c.unsigned_abs()).sum(),
            Metric::AxialHex => {
                let (q, r) = (offset.0[0], offset.0[1]);
                if (q >= 0) == (r >= 0) {
                    q.unsigned_abs() + r.unsigned_abs()
                } else {
                    q.unsigned_abs().max(r.unsigned_abs())
                }
            }
        }
    }
}

/// Assigns coordinates to the direction tokens of a rigid topology.
#[derive(Debug, Clone)]
pub struct Locator {
    pub name: String,
    pub dimension: usize,
    directions: BTreeMap<String, Coordinates>,
    metric: Metric,
}

impl PartialEq for Locator {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dimension == other.dimension
            && self.directions == other.directions
    }
}

impl Locator {
    /// Square lattice: north=(0,1), south=(0,-1), east=(1,0), west=(-1,0).
    pub fn mesh4() -> Self {
        Self::build(
            "mesh4",
            Metric::Manhattan,
            [
                ("north", [0, 1]),
                ("south", [0, -1]),
                ("east", [1, 0]),
                ("west", [-1, 0]),
            ],
        )
    }

    /// Axial hex lattice with basis vectors at 0 and 60 degrees.
    pub fn hex6() -> Self {
        Self::build(
            "hex6",
            Metric::AxialHex,
            [
                ("deg0", [1, 0]),
                ("deg60", [0, 1]),
                ("deg120", [-1, 1]),
                ("deg180", [-1, 0]),
                ("deg240", [0, -1]),
                ("deg300", [1, -1]),
            ],
        )
    }

    fn build<const N: usize>(name: &str, metric: Metric, dirs: [(&str, [i64; 2]); N]) -> Self {
        Self {
            name: name.to_string(),
            dimension: 2,
            directions: dirs
                .into_iter()
                .map(|(d, v)| (d.to_string(), Coordinates::new(v)))
                .collect(),
            metric,
        }
    }

    /// Looks up a locator registered in code.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "mesh4" => Some(Self::mesh4()),
            "hex6" => Some(Self::hex6()),
            _ => None,
        }
    }

    pub fn vector(&self, direction: &str) -> Option<&Coordinates> {
        self.directions.get(direction)
    }

    pub fn directions(&self) -> impl Iterator<Item = (&str, &Coordinates)> {
        self.directions.iter().map(|(d, v)| (d.as_str(), v))
    }

    /// Number of hops on a minimal walk covering `offset`.
    pub fn hop_count(&self, offset: &Coordinates) -> u64 {
        self.metric.steps(offset)
    }

    pub fn add(&self, a: &Address, b: &Address) -> Result<Address, LocatorError> {
        for c in [&a.offset, &b.offset] {
            if c.dimension() != self.dimension {
                return Err(LocatorError::DimensionMismatch(
                    self.dimension,
                    c.dimension(),
                ));
            }
        }
        Ok(Address {
            offset: a.offset.checked_add(&b.offset)?,
            target_connection: b.target_connection.clone(),
        })
    }

    /// The address of the origin as seen from the destination.
    pub fn inverse(&self, spec: &TopologySpec, a: &Address) -> Result<Address, LocatorError> {
        Ok(Address {
            offset: a.offset.negated(),
            target_connection: spec.reciprocal(&a.target_connection)?.name.clone(),
        })
    }

    fn direction_of(
        &self,
        spec: &TopologySpec,
        connection: &str,
    ) -> Result<&Coordinates, LocatorError> {
        let conn = spec
            .connection(connection)
            .ok_or_else(|| TopologyError::UnknownConnection(connection.to_string()))?;
        conn.direction
            .as_deref()
            .and_then(|d| self.vector(d))
            .ok_or_else(|| LocatorError::NoDirection(connection.to_string()))
    }

    /// Where the node that must satisfy `want` sits, relative to the
    /// neighbour reached through `via`.
    ///
    /// The joiner is at `-dir(via)` from that neighbour and its `want`
    /// neighbour is at `dir(want)` from the joiner.
    pub fn contingent_address(
        &self,
        spec: &TopologySpec,
        via: &str,
        want: &str,
    ) -> Result<Address, LocatorError> {
        if via == want {
            return Err(LocatorError::SameConnection(via.to_string()));
        }
        let rigid = spec
            .group_of(via)
            .filter(|g| g.rigid && g.members.contains(want));
        if rigid.is_none() {
            return Err(LocatorError::NotRigidlyContingent {
                via: via.to_string(),
                want: want.to_string(),
            });
        }
        let offset = self.direction_of(spec, want)? - self.direction_of(spec, via)?;
        Ok(Address {
            offset,
            target_connection: spec.reciprocal(want)?.name.clone(),
        })
    }

    /// Walks live edges from `origin` along a minimal walk covering `offset`.
    ///
    /// Hop orderings are tried in direction-map order, so the result is
    /// deterministic; the first walk that completes wins.
    pub fn resolve<V>(&self, origin: NodeId, offset: &Coordinates, mut view: V) -> Option<NodeId>
    where
        V: FnMut(NodeId, &str) -> Option<NodeId>,
    {
        let mut walker = Walker::new(self, &mut view, true);
        walker.walk(origin, offset.clone());
        walker.found.into_iter().next()
    }

    /// Every node reachable from `origin` by some minimal walk covering `offset`.
    ///
    /// On a consistent configuration this has at most one element.
    pub fn resolve_all<V>(
        &self,
        origin: NodeId,
        offset: &Coordinates,
        mut view: V,
    ) -> BTreeSet<NodeId>
    where
        V: FnMut(NodeId, &str) -> Option<NodeId>,
    {
        let mut walker = Walker::new(self, &mut view, false);
        walker.walk(origin, offset.clone());
        walker.found
    }
}

/// Depth-first search over minimal walks, memoised on (node, remaining offset).
struct Walker<'a, V> {
    locator: &'a Locator,
    view: &'a mut V,
    first_only: bool,
    seen: HashSet<(NodeId, Coordinates)>,
    found: BTreeSet<NodeId>,
}

impl<'a, V> Walker<'a, V>
where
    V: FnMut(NodeId, &str) -> Option<NodeId>,
{
    fn new(locator: &'a Locator, view: &'a mut V, first_only: bool) -> Self {
        Self {
            locator,
            view,
            first_only,
            seen: HashSet::new(),
            found: BTreeSet::new(),
        }
    }

    fn walk(&mut self, at: NodeId, remaining: Coordinates) {
        if self.first_only && !self.found.is_empty() {
            return;
        }
        if remaining.dimension() != self.locator.dimension {
            return;
        }
        if remaining.is_zero() {
            self.found.insert(at);
            return;
        }
        if !self.seen.insert((at, remaining.clone())) {
            return;
        }
        let here = self.locator.hop_count(&remaining);
        let steps: Vec<(String, Coordinates)> = self
            .locator
            .directions
            .iter()
            .map(|(d, v)| (d.clone(), &remaining - v))
            .filter(|(_, rest)| self.locator.hop_count(rest) + 1 == here)
            .collect();
        for (direction, rest) in steps {
            if let Some(next) = (self.view)(at, &direction) {
                self.walk(next, rest);
            }
        }
    }
}
