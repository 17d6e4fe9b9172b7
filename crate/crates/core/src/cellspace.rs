//! Cell-based architecture genotypes.
//!
//! A cell has `M` intermediate nodes. Node `j` (1-based) receives one edge
//! from each earlier node and from the two cell inputs (`-1` and `0`), so it
//! has `j + 1` incoming edges and a cell has `M(M+3)/2` edges in total. Every
//! edge carries exactly one operation out of [`OpKind::ALL`]. An architecture
//! ([`Genotype`]) is a pair of cells — one normal, one reduction — giving
//! `2 · K^edges` distinct architectures for `K` operations.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The candidate operations an edge can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    DilConv3x3,
    DilConv5x5,
    SepConv3x3,
    SepConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    /// The zero operation: the edge passes nothing.
    Zero,
    SkipConnect,
}

impl OpKind {
    pub const COUNT: usize = 8;

    pub const ALL: [OpKind; OpKind::COUNT] = [
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::Zero,
        OpKind::SkipConnect,
    ];

    /// Stable position of this op in [`OpKind::ALL`].
    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|&op| op == self).expect("op listed")
    }

    /// The text token used by the genotype codec.
    pub fn token(self) -> &'static str {
        match self {
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::Zero => "none",
            OpKind::SkipConnect => "skip_connect",
        }
    }

    pub fn from_token(token: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|op| op.token() == token)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::from_token(s).ok_or_else(|| Error::Parse(format!("unknown operation {s}")))
    }
}

/// A directed edge `src -> dst` carrying one operation. Sources `-1` and `0`
/// are the cell inputs; positive indices are intermediate nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: i32,
    pub dst: i32,
    pub op: OpKind,
}

/// Number of edges in an `m`-node cell: `sum_{j=1..m} (j + 1) = m(m+3)/2`.
pub fn edge_count(m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::Invalid("a cell needs at least one node".into()));
    }
    Ok(m * (m + 3) / 2)
}

/// Exact number of distinct genotypes: `2 · k^edge_count(m)` — the factor 2
/// tallies architectures that differ only in which cell layout (normal or
/// reduction) dominates the final network; it is exact, not an estimate.
pub fn space_size(m: usize, k: usize) -> Result<BigUint> {
    if k == 0 {
        return Err(Error::Invalid("need at least one operation".into()));
    }
    let edges = edge_count(m)? as u32;
    Ok(BigUint::from(2u32) * BigUint::from(k).pow(edges))
}

/// The canonical edge slots of an `m`-node cell: for each destination
/// `1..=m`, sources `-1, 0, .., dst-1` in order.
fn canonical_pairs(m: usize) -> impl Iterator<Item = (i32, i32)> {
    (1..=m as i32).flat_map(|dst| (-1..dst).map(move |src| (src, dst)))
}

/// One cell: an operation for every `(src, dst)` slot, stored in canonical
/// order (by destination, then source).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCell")]
pub struct CellGenotype {
    m: usize,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawCell {
    m: usize,
    edges: Vec<Edge>,
}

impl TryFrom<RawCell> for CellGenotype {
    type Error = Error;

    fn try_from(raw: RawCell) -> Result<Self> {
        CellGenotype::new(raw.m, raw.edges)
    }
}

impl CellGenotype {
    /// Builds a cell from edges in any order; they must cover every canonical
    /// `(src, dst)` slot exactly once.
    pub fn new(m: usize, mut edges: Vec<Edge>) -> Result<Self> {
        let expected = edge_count(m)?;
        if edges.len() != expected {
            return Err(Error::Invalid(format!(
                "a {m}-node cell has {expected} edges, got {}",
                edges.len()
            )));
        }
        edges.sort_by_key(|e| (e.dst, e.src));
        for (edge, (src, dst)) in edges.iter().zip(canonical_pairs(m)) {
            if (edge.src, edge.dst) != (src, dst) {
                return Err(Error::Invalid(format!(
                    "edge set does not cover slot {src}->{dst} exactly once \
                     (found {}->{})",
                    edge.src, edge.dst
                )));
            }
        }
        Ok(CellGenotype { m, edges })
    }

    /// Builds a cell from one op per canonical slot.
    pub fn from_ops(m: usize, ops: &[OpKind]) -> Result<Self> {
        let expected = edge_count(m)?;
        if ops.len() != expected {
            return Err(Error::Invalid(format!(
                "a {m}-node cell has {expected} edge slots, got {} ops",
                ops.len()
            )));
        }
        let edges = canonical_pairs(m)
            .zip(ops)
            .map(|((src, dst), &op)| Edge { src, dst, op })
            .collect();
        Ok(CellGenotype { m, edges })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Edges in canonical slot order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn ops(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.edges.iter().map(|e| e.op)
    }

    fn set_op(&mut self, slot: usize, op: OpKind) {
        self.edges[slot].op = op;
    }
}

/// A full architecture: a normal cell and a reduction cell of the same size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGenotype")]
pub struct Genotype {
    normal: CellGenotype,
    reduction: CellGenotype,
}

#[derive(Deserialize)]
struct RawGenotype {
    normal: CellGenotype,
    reduction: CellGenotype,
}

impl TryFrom<RawGenotype> for Genotype {
    type Error = Error;

    fn try_from(raw: RawGenotype) -> Result<Self> {
        Genotype::new(raw.normal, raw.reduction)
    }
}

impl Genotype {
    pub fn new(normal: CellGenotype, reduction: CellGenotype) -> Result<Self> {
        if normal.m() != reduction.m() {
            return Err(Error::Invalid(format!(
                "normal cell has {} nodes but reduction cell has {}",
                normal.m(),
                reduction.m()
            )));
        }
        Ok(Genotype { normal, reduction })
    }

    pub fn m(&self) -> usize {
        self.normal.m()
    }

    pub fn normal(&self) -> &CellGenotype {
        &self.normal
    }

    pub fn reduction(&self) -> &CellGenotype {
        &self.reduction
    }

    /// Total edge slots across both cells.
    pub fn slot_count(&self) -> usize {
        2 * self.normal.edges().len()
    }

    /// The op in `slot`, counting the normal cell's slots first.
    pub fn op_at(&self, slot: usize) -> OpKind {
        let per_cell = self.normal.edges().len();
        if slot < per_cell {
            self.normal.edges()[slot].op
        } else {
            self.reduction.edges()[slot - per_cell].op
        }
    }

    fn set_op(&mut self, slot: usize, op: OpKind) {
        let per_cell = self.normal.edges().len();
        if slot < per_cell {
            self.normal.set_op(slot, op);
        } else {
            self.reduction.set_op(slot - per_cell, op);
        }
    }
}

/// Draws a genotype uniformly: every edge slot gets an independent uniform
/// operation.
pub fn random_genotype<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Genotype> {
    let edges = edge_count(m)?;
    let draw_cell = |rng: &mut R| {
        let ops: Vec<OpKind> = (0..edges)
            .map(|_| OpKind::ALL[rng.random_range(0..OpKind::COUNT)])
            .collect();
        CellGenotype::from_ops(m, &ops)
    };
    let normal = draw_cell(rng)?;
    let reduction = draw_cell(rng)?;
    Genotype::new(normal, reduction)
}

/// Replaces the op on one uniformly chosen edge slot (across both cells) with
/// a uniformly chosen *different* op. Exactly one slot changes.
pub fn mutate<R: Rng + ?Sized>(genotype: &Genotype, rng: &mut R) -> Genotype {
    let mut child = genotype.clone();
    let slot = rng.random_range(0..genotype.slot_count());
    let old = genotype.op_at(slot);
    let mut pick = rng.random_range(0..OpKind::COUNT - 1);
    if pick >= old.index() {
        pick += 1;
    }
    child.set_op(slot, OpKind::ALL[pick]);
    child
}

/// Number of edge slots where two genotypes of the same size disagree.
pub fn hamming(a: &Genotype, b: &Genotype) -> Result<usize> {
    if a.m() != b.m() {
        return Err(Error::Invalid(format!(
            "cannot compare a {}-node genotype with a {}-node one",
            a.m(),
            b.m()
        )));
    }
    Ok((0..a.slot_count())
        .filter(|&slot| a.op_at(slot) != b.op_at(slot))
        .count())
}

/// Renders a genotype as two lines — normal cell, then reduction cell — each
/// a `;`-joined list of `src->dst:op` entries in canonical slot order.
pub fn encode(genotype: &Genotype) -> String {
    let line = |cell: &CellGenotype| {
        cell.edges()
            .iter()
            .map(|e| format!("{}->{}:{}", e.src, e.dst, e.op))
            .collect::<Vec<_>>()
            .join(";")
    };
    format!("{}\n{}\n", line(genotype.normal()), line(genotype.reduction()))
}

/// Parses the two-line format produced by [`encode`]. Edge order within a
/// line does not matter; coverage of every slot exactly once does.
pub fn decode(text: &str) -> Result<Genotype> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() != 2 {
        return Err(Error::Parse(format!(
            "genotype text must have exactly 2 non-empty lines, got {}",
            lines.len()
        )));
    }
    let parse_cell = |line: &str| -> Result<CellGenotype> {
        let mut edges = Vec::new();
        for entry in line.split(';') {
            let entry = entry.trim();
            let (pair, op) = entry
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("edge {entry}: missing ':'")))?;
            let (src, dst) = pair
                .split_once("->")
                .ok_or_else(|| Error::Parse(format!("edge {entry}: missing '->'")))?;
            let src: i32 = src
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("edge {entry}: bad source")))?;
            let dst: i32 = dst
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("edge {entry}: bad destination")))?;
            if src >= dst || src < -1 || dst < 1 {
                return Err(Error::Parse(format!(
                    "edge {entry}: source must precede destination (inputs are -1 and 0)"
                )));
            }
            edges.push(Edge {
                src,
                dst,
                op: op.trim().parse()?,
            });
        }
        let m = edges.iter().map(|e| e.dst).max().unwrap_or(0) as usize;
        CellGenotype::new(m, edges)
    };
    Genotype::new(parse_cell(lines[0])?, parse_cell(lines[1])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arb_genotype(m: usize) -> impl Strategy<Value = Genotype> {
        proptest::collection::vec(0usize..OpKind::COUNT, 2 * edge_count(m).unwrap()).prop_map(
            move |ops| {
                let kinds: Vec<OpKind> = ops.iter().map(|&i| OpKind::ALL[i]).collect();
                let half = kinds.len() / 2;
                Genotype::new(
                    CellGenotype::from_ops(m, &kinds[..half]).unwrap(),
                    CellGenotype::from_ops(m, &kinds[half..]).unwrap(),
                )
                .unwrap()
            },
        )
    }

    #[test]
    fn edge_counts_follow_the_closed_form() {
        assert_eq!(edge_count(1).unwrap(), 2);
        assert_eq!(edge_count(2).unwrap(), 5);
        assert_eq!(edge_count(3).unwrap(), 9);
        assert_eq!(edge_count(4).unwrap(), 14);
        assert!(edge_count(0).is_err());
    }

    #[test]
    fn space_size_is_exact() {
        // 2 · 8^14 for the standard 4-node, 8-op cell.
        assert_eq!(
            space_size(4, 8).unwrap(),
            BigUint::from(8_796_093_022_208u64)
        );
        // 2 · 8^5 for a 2-node cell.
        assert_eq!(space_size(2, 8).unwrap(), BigUint::from(65_536u32));
        // A single op still leaves the factor 2.
        assert_eq!(space_size(1, 1).unwrap(), BigUint::from(2u32));
        assert!(space_size(4, 0).is_err());
    }

    #[test]
    fn space_size_outgrows_u64_without_overflow() {
        let big = space_size(8, 8).unwrap();
        assert_eq!(big, BigUint::from(2u8) * BigUint::from(8u8).pow(44));
        assert!(big > BigUint::from(u64::MAX));
    }

    #[test]
    fn canonical_slots_count_and_order() {
        let pairs: Vec<(i32, i32)> = canonical_pairs(2).collect();
        assert_eq!(pairs, vec![(-1, 1), (0, 1), (-1, 2), (0, 2), (1, 2)]);
    }

    #[test]
    fn random_genotypes_have_the_right_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random_genotype(4, &mut rng).unwrap();
        assert_eq!(g.m(), 4);
        assert_eq!(g.normal().edges().len(), 14);
        assert_eq!(g.reduction().edges().len(), 14);
        assert_eq!(g.slot_count(), 28);
        for edge in g.normal().edges().iter().chain(g.reduction().edges()) {
            assert!(edge.src < edge.dst);
            assert!(edge.src >= -1);
            assert!(edge.dst >= 1 && edge.dst <= 4);
        }
    }

    #[test]
    fn random_genotype_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            assert_eq!(
                random_genotype(3, &mut a).unwrap(),
                random_genotype(3, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn each_op_is_roughly_uniform_on_a_fixed_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut counts = [0usize; OpKind::COUNT];
        for _ in 0..n {
            let g = random_genotype(4, &mut rng).unwrap();
            counts[g.normal().edges()[0].op.index()] += 1;
        }
        for (op, &count) in OpKind::ALL.iter().zip(&counts) {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 0.125).abs() < 0.01,
                "{op}: frequency {freq} too far from 1/8"
            );
        }
    }

    #[test]
    fn slots_are_sampled_pairwise_independently() {
        // Joint frequency of a fixed (op, op) pair on two slots should be
        // close to 1/64 if the slots are independent.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut joint = 0usize;
        for _ in 0..n {
            let g = random_genotype(2, &mut rng).unwrap();
            let a = g.normal().edges()[1].op;
            let b = g.reduction().edges()[3].op;
            if a == OpKind::Zero && b == OpKind::SepConv3x3 {
                joint += 1;
            }
        }
        let freq = joint as f64 / n as f64;
        assert!(
            (freq - 1.0 / 64.0).abs() < 0.005,
            "joint frequency {freq} too far from 1/64"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn mutation_changes_exactly_one_slot(g in arb_genotype(3), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = mutate(&g, &mut rng);
            prop_assert_eq!(hamming(&g, &child).unwrap(), 1);
        }

        #[test]
        fn codec_round_trips(g in arb_genotype(4)) {
            let text = encode(&g);
            let back = decode(&text).unwrap();
            prop_assert_eq!(g, back);
        }

        #[test]
        fn codec_round_trips_small_cells(g in arb_genotype(1)) {
            prop_assert_eq!(decode(&encode(&g)).unwrap(), g);
        }
    }

    #[test]
    fn repeated_mutation_walks_far_from_the_start() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = random_genotype(4, &mut rng).unwrap();
            let mut current = start.clone();
            for _ in 0..10_000 {
                current = mutate(&current, &mut rng);
            }
            assert!(
                hamming(&start, &current).unwrap() >= 10,
                "seed {seed}: walk stayed too close"
            );
        }
    }

    #[test]
    fn encode_produces_the_documented_layout() {
        let ops = [OpKind::Zero, OpKind::SkipConnect];
        let cell = CellGenotype::from_ops(1, &ops).unwrap();
        let g = Genotype::new(cell.clone(), cell).unwrap();
        assert_eq!(
            encode(&g),
            "-1->1:none;0->1:skip_connect\n-1->1:none;0->1:skip_connect\n"
        );
    }

    #[test]
    fn decode_accepts_shuffled_edges() {
        let text = "0->1:none;-1->1:skip_connect\n-1->1:none;0->1:none\n";
        let g = decode(text).unwrap();
        assert_eq!(g.normal().edges()[0].op, OpKind::SkipConnect);
        assert_eq!(g.normal().edges()[1].op, OpKind::Zero);
    }

    #[test]
    fn decode_rejects_malformed_text() {
        // Wrong line count.
        assert!(decode("-1->1:none;0->1:none\n").is_err());
        // Unknown op.
        assert!(decode("-1->1:conv7;0->1:none\n-1->1:none;0->1:none\n").is_err());
        // Missing slot / duplicate slot.
        assert!(decode("-1->1:none;-1->1:none\n-1->1:none;0->1:none\n").is_err());
        // Source after destination.
        assert!(decode("1->1:none;0->1:none\n-1->1:none;0->1:none\n").is_err());
        // Mismatched cell sizes.
        let small = "-1->1:none;0->1:none";
        let big = "-1->1:none;0->1:none;-1->2:none;0->2:none;1->2:none";
        assert!(decode(&format!("{small}\n{big}\n")).is_err());
        // Wrong edge count for the implied size.
        assert!(decode("-1->2:none;0->1:none\n-1->1:none;0->1:none\n").is_err());
    }

    #[test]
    fn cell_constructors_reject_bad_shapes() {
        assert!(CellGenotype::from_ops(2, &[OpKind::Zero; 4]).is_err());
        assert!(CellGenotype::from_ops(2, &[OpKind::Zero; 5]).is_ok());
        let edges: Vec<Edge> = vec![
            Edge { src: -1, dst: 1, op: OpKind::Zero },
            Edge { src: -1, dst: 1, op: OpKind::Zero },
        ];
        assert!(CellGenotype::new(1, edges).is_err());
    }

    #[test]
    fn mutation_preserves_all_other_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = random_genotype(4, &mut rng).unwrap();
        let child = mutate(&g, &mut rng);
        let changed: Vec<usize> = (0..g.slot_count())
            .filter(|&s| g.op_at(s) != child.op_at(s))
            .collect();
        assert_eq!(changed.len(), 1);
        assert_ne!(g.op_at(changed[0]), child.op_at(changed[0]));
    }

    #[test]
    fn op_tokens_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(OpKind::from_token(op.token()), Some(op));
            assert_eq!(op.token().parse::<OpKind>().unwrap(), op);
        }
        assert!(OpKind::from_token("conv_9x9").is_none());
    }
}
