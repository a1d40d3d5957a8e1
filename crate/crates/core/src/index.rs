//! Binary index files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   : "P2HT" | u32 version | u8 kind | u32 n | u32 d | u32 leaf_size | u64 seed
//! node     : u8 tag (0 internal, 1 leaf) | u32 size | f64 radius | d x f64 center
//! leaf     : node | size x u32 ids
//! BC leaf  : leaf | size x f32 r_x | size x f32 x_cos | size x f32 x_sin
//! ```
//!
//! Nodes are written in pre-order, so an internal node is followed by its
//! whole left subtree and then its right subtree. Point coordinates are not
//! stored; loading takes the same [`PointSet`] the index was built from.

use std::fs;
use std::path::Path;

use crate::ball_tree::BallTree;
use crate::bc_tree::{BcTree, LeafArrays};
use crate::data::{HyperplaneQuery, PointSet};
use crate::error::{Error, Result};
use crate::tree::{Node, P2hIndex, SearchParams, SearchResult, Topology};

pub const INDEX_MAGIC: &[u8; 4] = b"P2HT";
pub const INDEX_VERSION: u32 = 1;
/// Size of the fixed header in bytes.
pub const HEADER_BYTES: usize = 4 + 4 + 1 + 4 + 4 + 4 + 8;

const TAG_INTERNAL: u8 = 0;
const TAG_LEAF: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Ball = 0,
    Bc = 1,
}

impl TreeKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(TreeKind::Ball),
            1 => Ok(TreeKind::Bc),
            other => Err(Error::malformed(
                "P2HT",
                format!("unknown tree kind {other}"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TreeKind::Ball => "ball",
            TreeKind::Bc => "bc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub version: u32,
    pub kind: TreeKind,
    pub n: usize,
    pub dim: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl IndexHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::malformed("P2HT", "bad magic"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::malformed(
                "P2HT",
                format!("unsupported version {version}"),
            ));
        }
        let kind = TreeKind::from_byte(r.u8()?)?;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let leaf_size = r.u32()? as usize;
        let seed = r.u64()?;
        Ok(IndexHeader {
            version,
            kind,
            n,
            dim,
            leaf_size,
            seed,
        })
    }
}

fn encode(kind: TreeKind, topo: &Topology, leaf: Option<&LeafArrays>) -> Vec<u8> {
    let dim = topo.dim;
    let mut out = Vec::with_capacity(
        HEADER_BYTES
            + topo.nodes.len() * (13 + 8 * dim)
            + topo.len() * if leaf.is_some() { 16 } else { 4 },
    );
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(topo.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(topo.leaf_size as u32).to_le_bytes());
    out.extend_from_slice(&topo.seed.to_le_bytes());

    for (index, node) in topo.nodes.iter().enumerate() {
        out.push(if node.is_leaf() {
            TAG_LEAF
        } else {
            TAG_INTERNAL
        });
        out.extend_from_slice(&node.size.to_le_bytes());
        out.extend_from_slice(&node.radius.to_le_bytes());
        for c in topo.center(index) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if node.is_leaf() {
            let span = node.span();
            for id in &topo.ids[span.clone()] {
                out.extend_from_slice(&id.to_le_bytes());
            }
            if let Some(leaf) = leaf {
                for arr in [&leaf.r_x, &leaf.x_cos, &leaf.x_sin] {
                    for v in &arr[span.clone()] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    out
}

fn decode(
    bytes: &[u8],
    data: &PointSet,
    expect: TreeKind,
) -> Result<(Topology, Option<LeafArrays>)> {
    let header = IndexHeader::parse(bytes)?;
    if header.kind != expect {
        return Err(Error::malformed(
            "P2HT",
            format!(
                "file holds a {} tree, expected {}",
                header.kind.name(),
                expect.name()
            ),
        ));
    }
    if header.n != data.len() || header.dim != data.dim() {
        return Err(Error::InvalidInput(format!(
            "index was built over {} points of dimension {}, dataset has {} of dimension {}",
            header.n,
            header.dim,
            data.len(),
            data.dim()
        )));
    }
    let mut decoder = Decoder {
        r: Reader::new(&bytes[HEADER_BYTES..]),
        dim: header.dim,
        n: header.n,
        with_leaf_arrays: expect == TreeKind::Bc,
        nodes: Vec::new(),
        centers: Vec::new(),
        ids: Vec::with_capacity(header.n),
        leaf: LeafArrays::default(),
    };
    decoder.node(0)?;
    if !decoder.r.is_empty() {
        return Err(Error::malformed(
            "P2HT",
            "trailing bytes after the last node",
        ));
    }
    if decoder.ids.len() != header.n {
        return Err(Error::malformed(
            "P2HT",
            format!(
                "leaves hold {} ids, header says {}",
                decoder.ids.len(),
                header.n
            ),
        ));
    }
    let mut seen = vec![false; header.n];
    for &id in &decoder.ids {
        let slot = seen
            .get_mut(id as usize)
            .ok_or_else(|| Error::malformed("P2HT", format!("id {id} out of range")))?;
        if *slot {
            return Err(Error::malformed("P2HT", format!("id {id} appears twice")));
        }
        *slot = true;
    }
    let points = Topology::gather_points(data, &decoder.ids);
    let topo = Topology {
        dim: header.dim,
        leaf_size: header.leaf_size,
        seed: header.seed,
        nodes: decoder.nodes,
        centers: decoder.centers,
        ids: decoder.ids,
        points,
    };
    let leaf = (expect == TreeKind::Bc).then_some(decoder.leaf);
    Ok((topo, leaf))
}

struct Decoder<'a> {
    r: Reader<'a>,
    dim: usize,
    n: usize,
    with_leaf_arrays: bool,
    nodes: Vec<Node>,
    centers: Vec<f64>,
    ids: Vec<u32>,
    leaf: LeafArrays,
}

impl Decoder<'_> {
    /// Reads the subtree rooted at the next record; returns its node index.
    fn node(&mut self, depth: usize) -> Result<usize> {
        if depth > self.n {
            return Err(Error::malformed("P2HT", "tree deeper than its point count"));
        }
        let index = self.nodes.len();
        let tag = self.r.u8()?;
        let size = self.r.u32()?;
        let radius = self.r.f64()?;
        let mut center_norm_sq = 0.0;
        for _ in 0..self.dim {
            let c = self.r.f64()?;
            center_norm_sq += c * c;
            self.centers.push(c);
        }
        if size == 0 {
            return Err(Error::malformed("P2HT", "empty node"));
        }
        self.nodes.push(Node {
            start: self.ids.len() as u32,
            size,
            radius,
            center_norm: center_norm_sq.sqrt(),
            right: 0,
        });
        match tag {
            TAG_LEAF => {
                let size = size as usize;
                if self.ids.len() + size > self.n {
                    return Err(Error::malformed("P2HT", "leaves hold more ids than points"));
                }
                for _ in 0..size {
                    let id = self.r.u32()?;
                    self.ids.push(id);
                }
                if self.with_leaf_arrays {
                    for arr in [
                        &mut self.leaf.r_x,
                        &mut self.leaf.x_cos,
                        &mut self.leaf.x_sin,
                    ] {
                        for _ in 0..size {
                            arr.push(self.r.f32()?);
                        }
                    }
                }
            }
            TAG_INTERNAL => {
                let left = self.node(depth + 1)?;
                let right = self.node(depth + 1)?;
                if self.nodes[left].size + self.nodes[right].size != size {
                    return Err(Error::malformed(
                        "P2HT",
                        format!("children of node {index} do not add up to its size"),
                    ));
                }
                self.nodes[index].right = right as u32;
            }
            other => {
                return Err(Error::malformed(
                    "P2HT",
                    format!("unknown node tag {other}"),
                ))
            }
        }
        Ok(index)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, at: 0 }
    }

    fn is_empty(&self) -> bool {
        self.at == self.bytes.len()
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.at..self.at + len)
            .ok_or_else(|| Error::malformed("P2HT", "unexpected end of file"))?;
        self.at += len;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl BallTree {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(TreeKind::Ball, &self.topo, None)
    }

    pub fn from_bytes(bytes: &[u8], data: &PointSet) -> Result<Self> {
        let (topo, _) = decode(bytes, data, TreeKind::Ball)?;
        Ok(BallTree { topo })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, data: &PointSet) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, data)
    }
}

impl BcTree {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(TreeKind::Bc, &self.topo, Some(&self.leaf))
    }

    pub fn from_bytes(bytes: &[u8], data: &PointSet) -> Result<Self> {
        let (topo, leaf) = decode(bytes, data, TreeKind::Bc)?;
        Ok(BcTree {
            topo,
            leaf: leaf.unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, data: &PointSet) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, data)
    }
}

/// Either tree kind, as read back from an index file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTree {
    Ball(BallTree),
    Bc(BcTree),
}

impl AnyTree {
    pub fn build(kind: TreeKind, data: &PointSet, leaf_size: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            TreeKind::Ball => AnyTree::Ball(BallTree::build(data, leaf_size, seed)?),
            TreeKind::Bc => AnyTree::Bc(BcTree::build(data, leaf_size, seed)?),
        })
    }

    pub fn kind(&self) -> TreeKind {
        match self {
            AnyTree::Ball(_) => TreeKind::Ball,
            AnyTree::Bc(_) => TreeKind::Bc,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyTree::Ball(t) => t.to_bytes(),
            AnyTree::Bc(t) => t.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8], data: &PointSet) -> Result<Self> {
        match IndexHeader::parse(bytes)?.kind {
            TreeKind::Ball => Ok(AnyTree::Ball(BallTree::from_bytes(bytes, data)?)),
            TreeKind::Bc => Ok(AnyTree::Bc(BcTree::from_bytes(bytes, data)?)),
        }
    }

    pub fn load(path: impl AsRef<Path>, data: &PointSet) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, data)
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            AnyTree::Ball(t) => t.num_nodes(),
            AnyTree::Bc(t) => t.num_nodes(),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            AnyTree::Ball(t) => t.num_leaves(),
            AnyTree::Bc(t) => t.num_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            AnyTree::Ball(t) => t.depth(),
            AnyTree::Bc(t) => t.depth(),
        }
    }
}

impl P2hIndex for AnyTree {
    fn search(&self, query: &HyperplaneQuery, params: &SearchParams) -> Result<SearchResult> {
        match self {
            AnyTree::Ball(t) => t.search(query, params),
            AnyTree::Bc(t) => t.search(query, params),
        }
    }

    fn len(&self) -> usize {
        match self {
            AnyTree::Ball(t) => t.len(),
            AnyTree::Bc(t) => t.len(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnyTree::Ball(t) => t.dim(),
            AnyTree::Bc(t) => t.dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_points;

    #[test]
    fn header_layout() {
        let data = gaussian_points(100, 3, 1).unwrap();
        let tree = BallTree::build(&data, 10, 0xdead_beef).unwrap();
        let bytes = tree.to_bytes();
        assert_eq!(&bytes[..4], b"P2HT");
        let h = IndexHeader::parse(&bytes).unwrap();
        assert_eq!(h.kind, TreeKind::Ball);
        assert_eq!((h.n, h.dim, h.leaf_size, h.seed), (100, 4, 10, 0xdead_beef));
        let expected =
            HEADER_BYTES + tree.num_nodes() * (1 + 4 + 8 + 8 * data.dim()) + 4 * data.len();
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let data = gaussian_points(400, 5, 1).unwrap();
        let ball = BallTree::build(&data, 16, 3).unwrap();
        let bytes = ball.to_bytes();
        let back = BallTree::from_bytes(&bytes, &data).unwrap();
        assert_eq!(back, ball);
        assert_eq!(back.to_bytes(), bytes);

        let bc = BcTree::build(&data, 16, 3).unwrap();
        let bytes = bc.to_bytes();
        let back = BcTree::from_bytes(&bytes, &data).unwrap();
        assert_eq!(back, bc);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bc_adds_three_arrays() {
        let data = gaussian_points(777, 6, 1).unwrap();
        let ball = BallTree::build(&data, 20, 5).unwrap().to_bytes();
        let bc = BcTree::build(&data, 20, 5).unwrap().to_bytes();
        assert_eq!(
            bc.len() - ball.len(),
            3 * data.len() * std::mem::size_of::<f32>()
        );
    }

    #[test]
    fn rejects_corruption() {
        let data = gaussian_points(100, 3, 1).unwrap();
        let bytes = BcTree::build(&data, 10, 0).unwrap().to_bytes();
        assert!(BcTree::from_bytes(&bytes[..bytes.len() - 1], &data).is_err());
        assert!(BallTree::from_bytes(&bytes, &data).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(AnyTree::from_bytes(&bad, &data).is_err());
        let other = gaussian_points(99, 3, 1).unwrap();
        assert!(BcTree::from_bytes(&bytes, &other).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(BcTree::from_bytes(&extra, &data).is_err());
    }
}
