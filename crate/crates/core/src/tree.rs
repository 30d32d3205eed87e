//! Hierarchical bipartitions of an ordered variable set.
//!
//! Every node owns a contiguous range of variable positions; internal nodes
//! split their range into a left and right child. Nodes are stored in
//! depth-first preorder with the root at index 0, so children always have
//! larger indices than their parent.
//!
//! Indices are 0-based inside this crate. The two helpers that mirror the
//! published notation, [`joint_position`] and [`GridMap::site_rank`], take
//! and return 1-based values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub start: usize,
    pub end: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn vars(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartitionTree {
    num_vars: usize,
    nodes: Vec<TreeNode>,
    leaf_of_var: Vec<usize>,
}

impl BipartitionTree {
    /// Balanced bipartition: each node splits with left size `⌈len/2⌉`.
    /// For `num_vars = 2^k` this is the dyadic partition.
    pub fn balanced(num_vars: usize) -> Result<Self> {
        if num_vars < 2 {
            return Err(Error::InvalidArgument(format!(
                "a bipartition needs at least 2 variables, got {num_vars}"
            )));
        }
        Ok(Self::from_split_fn(num_vars, |_, len| len.div_ceil(2)))
    }

    /// Tree over the interlaced joint variable `(x_1, y_1, …, x_d, y_d)`:
    /// the balanced tree over `d` sites with every site leaf expanded into
    /// an `(x_j, y_j)` pair node.
    pub fn interlaced(num_sites: usize) -> Result<Self> {
        if num_sites == 0 {
            return Err(Error::InvalidArgument("interlaced tree needs a site".into()));
        }
        Ok(Self::from_split_fn(2 * num_sites, |_, len| {
            let sites = len / 2;
            if sites == 1 {
                1
            } else {
                2 * sites.div_ceil(2)
            }
        }))
    }

    /// A tree with one variable whose root is also its leaf.
    pub fn single() -> Self {
        BipartitionTree {
            num_vars: 1,
            nodes: vec![TreeNode {
                start: 0,
                end: 1,
                level: 0,
                parent: None,
                children: None,
            }],
            leaf_of_var: vec![0],
        }
    }

    fn from_split_fn(num_vars: usize, split: impl Fn(usize, usize) -> usize) -> Self {
        let mut sizes = Vec::with_capacity(num_vars.saturating_sub(1));
        fn walk(start: usize, len: usize, split: &dyn Fn(usize, usize) -> usize, out: &mut Vec<usize>) {
            if len <= 1 {
                return;
            }
            let left = split(start, len);
            out.push(left);
            walk(start, left, split, out);
            walk(start + left, len - left, split, out);
        }
        walk(0, num_vars, &split, &mut sizes);
        Self::from_left_sizes(num_vars, &sizes).expect("split function yields a valid tree")
    }

    /// Rebuilds a tree from the preorder list of left-subtree sizes of its
    /// internal nodes (the serialized form).
    pub fn from_left_sizes(num_vars: usize, left_sizes: &[usize]) -> Result<Self> {
        if num_vars == 0 {
            return Err(Error::InvalidArgument("tree needs at least one variable".into()));
        }
        if left_sizes.len() != num_vars - 1 {
            return Err(Error::InvalidArgument(format!(
                "{num_vars} variables need {} split sizes, got {}",
                num_vars - 1,
                left_sizes.len()
            )));
        }
        let mut nodes = Vec::with_capacity(2 * num_vars - 1);
        let mut cursor = 0usize;
        fn build(
            start: usize,
            end: usize,
            level: usize,
            parent: Option<usize>,
            sizes: &[usize],
            cursor: &mut usize,
            nodes: &mut Vec<TreeNode>,
        ) -> Result<usize> {
            let id = nodes.len();
            nodes.push(TreeNode {
                start,
                end,
                level,
                parent,
                children: None,
            });
            if end - start > 1 {
                let left = sizes[*cursor];
                *cursor += 1;
                if left == 0 || left >= end - start {
                    return Err(Error::InvalidArgument(format!(
                        "split size {left} invalid for a node of {} variables",
                        end - start
                    )));
                }
                let l = build(start, start + left, level + 1, Some(id), sizes, cursor, nodes)?;
                let r = build(start + left, end, level + 1, Some(id), sizes, cursor, nodes)?;
                nodes[id].children = Some((l, r));
            }
            Ok(id)
        }
        build(0, num_vars, 0, None, left_sizes, &mut cursor, &mut nodes)?;
        let mut leaf_of_var = vec![0; num_vars];
        for (id, n) in nodes.iter().enumerate() {
            if n.is_leaf() {
                leaf_of_var[n.start] = id;
            }
        }
        Ok(BipartitionTree {
            num_vars,
            nodes,
            leaf_of_var,
        })
    }

    pub fn left_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| n.children.map(|(l, _)| self.nodes[l].len()))
            .collect()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn leaf_of_var(&self, var: usize) -> usize {
        self.leaf_of_var[var]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Node index sets at a given level, left to right. Leaves shallower
    /// than `level` do not appear.
    pub fn level_sets(&self, level: usize) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .filter(|n| n.level == level)
            .map(|n| n.vars().collect())
            .collect()
    }

    pub fn node_complement(&self, id: usize) -> Vec<usize> {
        let n = &self.nodes[id];
        (0..self.num_vars).filter(|v| !n.vars().contains(v)).collect()
    }

    /// Level of the deepest common ancestor of a variable and a node.
    pub fn common_ancestor_level(&self, var: usize, id: usize) -> usize {
        let mut cur = id;
        loop {
            let n = &self.nodes[cur];
            if n.vars().contains(&var) {
                return n.level;
            }
            match n.parent {
                Some(p) => cur = p,
                None => return 0,
            }
        }
    }

    /// Node ids in postorder (children before parents).
    pub fn postorder(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).rev()
    }
}

/// Role of a joint-variable coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    /// Initial-time coordinate.
    X,
    /// Later-time coordinate.
    Y,
}

/// 1-based position of `x_site` or `y_site` in the interlaced ordering
/// `(x_1, y_1, …, x_d, y_d)`.
pub fn joint_position(kind: VarKind, site: usize) -> usize {
    match kind {
        VarKind::X => 2 * site - 1,
        VarKind::Y => 2 * site,
    }
}

/// Kind of a 0-based interlaced position.
pub fn kind_of_position(pos: usize) -> VarKind {
    if pos.is_multiple_of(2) {
        VarKind::X
    } else {
        VarKind::Y
    }
}

/// Bit-interleaving map from a `Δ`-dimensional grid with `m = 2^μ` points
/// per axis onto site ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridMap {
    dims: usize,
    side: usize,
    bits: u32,
}

impl GridMap {
    pub fn new(dims: usize, side: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("grid dimension must be positive".into()));
        }
        if side == 0 || !side.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid side {side} is not a power of two"
            )));
        }
        let bits = side.trailing_zeros();
        if (bits as usize) * dims >= usize::BITS as usize {
            return Err(Error::InvalidArgument("grid too large".into()));
        }
        Ok(GridMap { dims, side, bits })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dims as u32)
    }

    /// 1-based coordinates to 1-based site rank. The binary digits of
    /// `i_δ − 1` are interleaved most-significant first, cycling through
    /// the axes at each digit position.
    pub fn site_rank(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims {
            return Err(Error::InvalidArgument(format!(
                "expected {} grid coordinates, got {}",
                self.dims,
                coords.len()
            )));
        }
        if let Some(&c) = coords.iter().find(|&&c| c == 0 || c > self.side) {
            return Err(Error::InvalidArgument(format!(
                "grid coordinate {c} outside 1..={}",
                self.side
            )));
        }
        let mut k = 0usize;
        for digit in (0..self.bits).rev() {
            for &c in coords {
                k = (k << 1) | (((c - 1) >> digit) & 1);
            }
        }
        Ok(k + 1)
    }

    /// Inverse of [`GridMap::site_rank`].
    pub fn coords_of_rank(&self, rank: usize) -> Result<Vec<usize>> {
        if rank == 0 || rank > self.num_sites() {
            return Err(Error::InvalidArgument(format!("site rank {rank} out of range")));
        }
        let k = rank - 1;
        let mut coords = vec![0usize; self.dims];
        let total = self.bits as usize * self.dims;
        for pos in 0..total {
            let bit = (k >> (total - 1 - pos)) & 1;
            let axis = pos % self.dims;
            coords[axis] = (coords[axis] << 1) | bit;
        }
        Ok(coords.into_iter().map(|c| c + 1).collect())
    }

    /// Row-major physical index (0-based) of the site at each tree rank:
    /// `order[rank − 1] = Σ (i_δ − 1)·m^(Δ−δ)`.
    pub fn physical_order(&self) -> Vec<usize> {
        (1..=self.num_sites())
            .map(|r| {
                self.coords_of_rank(r)
                    .expect("rank in range")
                    .iter()
                    .fold(0, |acc, &c| acc * self.side + (c - 1))
            })
            .collect()
    }
}
