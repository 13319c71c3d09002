//! Discrete architecture encodings: the 4-node/6-edge cell space and the
//! macro-topology generators (chain, highway, look-ahead, dense).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operation choices on a cell edge, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeOp {
    None,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

pub const EDGE_OPS: [EdgeOp; 5] = [
    EdgeOp::None,
    EdgeOp::Skip,
    EdgeOp::Conv1x1,
    EdgeOp::Conv3x3,
    EdgeOp::AvgPool3x3,
];

/// Ordered node pairs (i, j) with 0 <= i < j <= 3, matching edge positions.
pub const EDGE_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Number of distinct cell genotypes: 5^6.
pub const CELL_SPACE_SIZE: u64 = 15_625;

impl EdgeOp {
    pub fn name(self) -> &'static str {
        match self {
            EdgeOp::None => "none",
            EdgeOp::Skip => "skip",
            EdgeOp::Conv1x1 => "conv1x1",
            EdgeOp::Conv3x3 => "conv3x3",
            EdgeOp::AvgPool3x3 => "avgpool3x3",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        EDGE_OPS
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown edge op {s:?} (expected one of none, skip, conv1x1, conv3x3, avgpool3x3)"
                ))
            })
    }

    fn digit(self) -> u64 {
        EDGE_OPS.iter().position(|&op| op == self).unwrap() as u64
    }
}

/// A 4-node cell: one op per ordered node pair. Node 0 is the cell input,
/// node 3 the output, and every node sums its incoming edge results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellGenotype {
    pub edges: [EdgeOp; 6],
}

impl CellGenotype {
    /// Canonical index: base-5 over the edges in `EDGE_PAIRS` order, with
    /// `EDGE_OPS` order as digit values. Edge (0,1) is the most significant
    /// digit.
    pub fn index(&self) -> u64 {
        self.edges.iter().fold(0, |acc, op| acc * 5 + op.digit())
    }

    pub fn from_index(index: u64) -> Result<Self> {
        if index >= CELL_SPACE_SIZE {
            return Err(Error::contract(format!(
                "cell index {index} outside 0..{CELL_SPACE_SIZE}"
            )));
        }
        let mut rem = index;
        let mut edges = [EdgeOp::None; 6];
        for slot in (0..6).rev() {
            edges[slot] = EDGE_OPS[(rem % 5) as usize];
            rem /= 5;
        }
        Ok(CellGenotype { edges })
    }

    pub fn all_none() -> Self {
        CellGenotype {
            edges: [EdgeOp::None; 6],
        }
    }
}

impl fmt::Display for CellGenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.edges.iter().map(|op| op.name()).collect();
        write!(f, "{}", names.join("|"))
    }
}

impl FromStr for CellGenotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!(
                "genotype needs 6 '|'-separated ops, got {}",
                parts.len()
            )));
        }
        let mut edges = [EdgeOp::None; 6];
        for (i, part) in parts.iter().enumerate() {
            edges[i] = EdgeOp::from_name(part.trim())?;
        }
        Ok(CellGenotype { edges })
    }
}

impl Serialize for CellGenotype {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CellGenotype {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 15,625 genotypes in canonical order.
pub fn enumerate_cells() -> impl Iterator<Item = CellGenotype> {
    (0..CELL_SPACE_SIZE).map(|i| CellGenotype::from_index(i).expect("index in range"))
}

/// `n` genotypes drawn without replacement, reproducible per seed.
pub fn sample_cells(seed: u64, n: usize) -> Result<Vec<CellGenotype>> {
    if n as u64 > CELL_SPACE_SIZE {
        return Err(Error::contract(format!(
            "cannot sample {n} distinct cells from a space of {CELL_SPACE_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, CELL_SPACE_SIZE as usize, n);
    Ok(picks
        .into_iter()
        .map(|i| CellGenotype::from_index(i as u64).expect("index in range"))
        .collect())
}

/// Macro-topology of a blueprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Stem, stacked cells, global average pool, head.
    Chain,
    /// Chained linear+relu blocks; the cell's final layer also takes the
    /// first block's output.
    Highway,
    /// Chained blocks; the cell's final layer takes every inner output
    /// (cell input included).
    Lookahead,
    /// Chained blocks per cell; each cell consumes the outputs of all
    /// previous cells plus the stem.
    Dense,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Chain => "chain",
            Topology::Highway => "highway",
            Topology::Lookahead => "lookahead",
            Topology::Dense => "dense",
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Topology::Chain),
            "highway" => Ok(Topology::Highway),
            "lookahead" => Ok(Topology::Lookahead),
            "dense" => Ok(Topology::Dense),
            other => Err(Error::Parse(format!("unknown topology {other:?}"))),
        }
    }
}

/// Input description for a blueprint's stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputSpec {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector {
        dim: usize,
    },
}

impl InputSpec {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            InputSpec::Image {
                channels,
                height,
                width,
            } => vec![*channels, *height, *width],
            InputSpec::Vector { dim } => vec![*dim],
        }
    }
}

/// Output head of a blueprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Linear classifier over the pooled features.
    Classifier { classes: usize },
    /// Scalar regression output: a sum layer over the pooled features.
    Scalar,
}

/// Range of per-cell layer counts for the block topologies.
pub const LAYERS_PER_CELL_RANGE: std::ops::RangeInclusive<usize> = 2..=11;

/// A complete architecture description, ready for lowering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub topology: Topology,
    pub input: InputSpec,
    /// Feature width: channels for chain cells, block width otherwise.
    pub width: usize,
    pub num_cells: usize,
    /// Cell genotype; required by (and only used for) the chain topology.
    pub cell: Option<CellGenotype>,
    /// Layers per cell for the block topologies.
    pub layers_per_cell: Option<usize>,
    pub head: Head,
}

pub const DEFAULT_NUM_CELLS: usize = 3;

impl Blueprint {
    /// Chain blueprint: stem conv3x3, `num_cells` copies of `cell`, global
    /// average pool, head.
    pub fn chain(cell: CellGenotype, input: InputSpec, width: usize, num_cells: usize, head: Head) -> Self {
        Blueprint {
            topology: Topology::Chain,
            input,
            width,
            num_cells,
            cell: Some(cell),
            layers_per_cell: None,
            head,
        }
    }
}

/// Generates blueprints for a topology.
///
/// Block topologies yield one blueprint per layers-per-cell value in
/// [`LAYERS_PER_CELL_RANGE`] (ten in total). Chain yields a single blueprint
/// around the given cell and requires one.
pub fn make_blueprints(
    topology: Topology,
    input: InputSpec,
    width: usize,
    head: Head,
    cell: Option<CellGenotype>,
) -> Result<Vec<Blueprint>> {
    match topology {
        Topology::Chain => {
            let cell = cell.ok_or_else(|| {
                Error::contract("chain topology needs a cell genotype")
            })?;
            Ok(vec![Blueprint::chain(
                cell,
                input,
                width,
                DEFAULT_NUM_CELLS,
                head,
            )])
        }
        Topology::Highway | Topology::Lookahead | Topology::Dense => Ok(LAYERS_PER_CELL_RANGE
            .map(|layers| Blueprint {
                topology,
                input: input.clone(),
                width,
                num_cells: DEFAULT_NUM_CELLS,
                cell: None,
                layers_per_cell: Some(layers),
                head,
            })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn space_counts_out_to_15625() {
        assert_eq!(enumerate_cells().count() as u64, CELL_SPACE_SIZE);
    }

    #[test]
    fn first_genotype_is_all_none() {
        let first = enumerate_cells().next().unwrap();
        assert_eq!(first, CellGenotype::all_none());
        assert_eq!(first.index(), 0);
    }

    #[test]
    fn index_roundtrip_midpoint() {
        let g = CellGenotype::from_index(7_812).unwrap();
        assert_eq!(g.index(), 7_812);
    }

    #[test]
    fn encode_decode_is_identity_everywhere() {
        for (i, g) in enumerate_cells().enumerate() {
            assert_eq!(g.index(), i as u64);
            assert_eq!(CellGenotype::from_index(i as u64).unwrap(), g);
        }
    }

    #[test]
    fn text_format_roundtrip() {
        let s = "none|skip|conv3x3|conv1x1|avgpool3x3|skip";
        let g: CellGenotype = s.parse().unwrap();
        assert_eq!(g.to_string(), s);
        assert_eq!(g.edges[2], EdgeOp::Conv3x3);
    }

    #[test]
    fn parse_names_bad_token() {
        let err = "none|skip|conv3x3|bogus|avgpool3x3|skip"
            .parse::<CellGenotype>()
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!("none|skip".parse::<CellGenotype>().is_err());
    }

    #[test]
    fn sampling_is_distinct_and_deterministic() {
        let a = sample_cells(1, 100).unwrap();
        let b = sample_cells(1, 100).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<u64> = a.iter().map(|g| g.index()).collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn sampling_everything_permutes_the_space() {
        let all = sample_cells(1, CELL_SPACE_SIZE as usize).unwrap();
        let set: HashSet<u64> = all.iter().map(|g| g.index()).collect();
        assert_eq!(set.len() as u64, CELL_SPACE_SIZE);
    }

    #[test]
    fn oversampling_is_rejected() {
        assert!(sample_cells(1, CELL_SPACE_SIZE as usize + 1).is_err());
    }

    #[test]
    fn block_topologies_yield_ten_blueprints() {
        for topo in [Topology::Highway, Topology::Lookahead, Topology::Dense] {
            let bps = make_blueprints(
                topo,
                InputSpec::Vector { dim: 8 },
                16,
                Head::Classifier { classes: 2 },
                None,
            )
            .unwrap();
            assert_eq!(bps.len(), 10);
            let layers: Vec<usize> = bps.iter().map(|b| b.layers_per_cell.unwrap()).collect();
            assert_eq!(layers, (2..=11).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chain_requires_a_cell() {
        let err = make_blueprints(
            Topology::Chain,
            InputSpec::Image {
                channels: 3,
                height: 8,
                width: 8,
            },
            8,
            Head::Classifier { classes: 4 },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn genotype_serde_uses_text_encoding() {
        let g = CellGenotype::from_index(321).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, format!("\"{g}\""));
        let back: CellGenotype = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }
}
