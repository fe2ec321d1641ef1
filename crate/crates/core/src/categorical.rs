//! Neighborhoods of the three categorical headers and the extended poll.
//!
//! Each neighbor changes exactly one block. Conv neighbors add or remove a
//! group at the right of the convolution block, fc neighbors add or remove
//! a layer at the left of the fully connected block, and the optimizer
//! neighbor advances the optimizer choice cyclically.

use std::fmt;

use crate::hpspace::{default_conv_layer, default_optimizer_block, Keyword, Point, SpaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborKind {
    ConvAdd,
    ConvSub,
    FcAdd,
    FcSub,
    OptimizerCycle,
}

impl NeighborKind {
    /// Header keyword of the block the neighbor modifies.
    pub fn header(self) -> Keyword {
        match self {
            NeighborKind::ConvAdd | NeighborKind::ConvSub => Keyword::NumConLayers,
            NeighborKind::FcAdd | NeighborKind::FcSub => Keyword::NumFcLayers,
            NeighborKind::OptimizerCycle => Keyword::OptimizerChoice,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NeighborKind::ConvAdd => "ConvAdd",
            NeighborKind::ConvSub => "ConvSub",
            NeighborKind::FcAdd => "FcAdd",
            NeighborKind::FcSub => "FcSub",
            NeighborKind::OptimizerCycle => "OptimizerCycle",
        }
    }
}

impl fmt::Display for NeighborKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub point: Point,
    pub kind: NeighborKind,
}

/// Ordered neighbors with their provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn kinds(&self) -> Vec<NeighborKind> {
        self.neighbors.iter().map(|n| n.kind).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Neighbor> {
        self.neighbors.iter()
    }
}

fn header_allows(spec: &SpaceSpec, keyword: Keyword, count: usize) -> bool {
    spec.def(keyword).contains(count as f64)
}

/// Add-neighbor then sub-neighbor of the convolution block.
pub fn conv_neighbors(p: &Point, spec: &SpaceSpec) -> Vec<Neighbor> {
    let mut out = Vec::with_capacity(2);
    let n1 = p.n_conv();
    if header_allows(spec, Keyword::NumConLayers, n1 + 1) {
        let group = p.conv.last().copied().unwrap_or_else(|| default_conv_layer(spec));
        let mut q = p.clone();
        q.conv.push(group);
        out.push(Neighbor {
            point: q,
            kind: NeighborKind::ConvAdd,
        });
    }
    if n1 > 0 && header_allows(spec, Keyword::NumConLayers, n1 - 1) {
        let mut q = p.clone();
        q.conv.pop();
        out.push(Neighbor {
            point: q,
            kind: NeighborKind::ConvSub,
        });
    }
    out
}

/// Add-neighbor then sub-neighbor of the fully connected block.
pub fn fc_neighbors(p: &Point, spec: &SpaceSpec) -> Vec<Neighbor> {
    let mut out = Vec::with_capacity(2);
    let n2 = p.n_fc();
    if header_allows(spec, Keyword::NumFcLayers, n2 + 1) {
        let size =
            p.fc.first()
                .copied()
                .unwrap_or_else(|| spec.def(Keyword::SizeFcLayer).default.round() as u32);
        let mut q = p.clone();
        q.fc.insert(0, size);
        out.push(Neighbor {
            point: q,
            kind: NeighborKind::FcAdd,
        });
    }
    if n2 > 0 && header_allows(spec, Keyword::NumFcLayers, n2 - 1) {
        let mut q = p.clone();
        q.fc.remove(0);
        out.push(Neighbor {
            point: q,
            kind: NeighborKind::FcSub,
        });
    }
    out
}

/// Next optimizer within the header bounds, with the associated values reset
/// to their defaults.
pub fn optimizer_neighbor(p: &Point, spec: &SpaceSpec) -> Point {
    let def = spec.def(Keyword::OptimizerChoice);
    let (lower, upper) = (def.lower.max(1.0) as i64, def.upper.min(4.0) as i64);
    let code = p.optimizer.kind.code() as i64;
    let next = if code < upper && code >= lower { code + 1 } else { lower };
    let mut q = p.clone();
    q.optimizer = default_optimizer_block(spec, next);
    q
}

/// Every structural neighbor: conv, fc, then optimizer, add before sub.
/// Header bounds are honored; fixedness is not (see [`admissible_neighbors`]).
pub fn neighbor_set(p: &Point, spec: &SpaceSpec) -> NeighborSet {
    let mut neighbors = conv_neighbors(p, spec);
    neighbors.extend(fc_neighbors(p, spec));
    let q = optimizer_neighbor(p, spec);
    if q != *p {
        neighbors.push(Neighbor {
            point: q,
            kind: NeighborKind::OptimizerCycle,
        });
    }
    NeighborSet { neighbors }
}

/// Neighbors whose block header is not fixed.
pub fn admissible_neighbors(p: &Point, spec: &SpaceSpec) -> NeighborSet {
    let mut set = neighbor_set(p, spec);
    set.neighbors.retain(|n| !spec.def(n.kind.header()).fixed);
    set
}

/// First-improvement scan of the admissible neighbors.
///
/// `evaluate` returns the objective of a neighbor (failures as `+inf`), or
/// `None` once no further evaluation is possible, which ends the scan.
pub fn extended_poll<F>(
    incumbent: &Point,
    incumbent_value: f64,
    mut evaluate: F,
    spec: &SpaceSpec,
) -> Option<(Neighbor, f64)>
where
    F: FnMut(&Point) -> Option<f64>,
{
    for neighbor in admissible_neighbors(incumbent, spec).neighbors {
        let value = evaluate(&neighbor.point)?;
        if value < incumbent_value {
            return Some((neighbor, value));
        }
    }
    None
}
