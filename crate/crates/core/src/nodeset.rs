//! Compact sets of node indices.
//!
//! Graphs with at most 64 nodes store sets as a single `u64` bitmask; larger
//! graphs fall back to sorted index vectors. The representation is picked from
//! the universe size, so two sets built for the same graph always share it.

use alloc::vec::Vec;
use core::fmt;

const BITSET_LIMIT: usize = 64;

#[derive(Clone, Eq, Hash)]
pub enum NodeSet {
    Bits(u64),
    Sorted(Vec<usize>),
}

impl NodeSet {
    pub fn empty(universe: usize) -> Self {
        if universe <= BITSET_LIMIT {
            NodeSet::Bits(0)
        } else {
            NodeSet::Sorted(Vec::new())
        }
    }

    pub fn singleton(universe: usize, node: usize) -> Self {
        let mut s = Self::empty(universe);
        s.insert(node);
        s
    }

    pub fn from_nodes<I: IntoIterator<Item = usize>>(universe: usize, nodes: I) -> Self {
        let mut s = Self::empty(universe);
        for n in nodes {
            s.insert(n);
        }
        s
    }

    pub fn insert(&mut self, node: usize) {
        match self {
            NodeSet::Bits(b) => {
                debug_assert!(node < BITSET_LIMIT);
                *b |= 1u64 << node;
            }
            NodeSet::Sorted(v) => {
                if let Err(pos) = v.binary_search(&node) {
                    v.insert(pos, node);
                }
            }
        }
    }

    pub fn contains(&self, node: usize) -> bool {
        match self {
            NodeSet::Bits(b) => node < BITSET_LIMIT && (b >> node) & 1 == 1,
            NodeSet::Sorted(v) => v.binary_search(&node).is_ok(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NodeSet::Bits(b) => b.count_ones() as usize,
            NodeSet::Sorted(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ascending iteration.
    pub fn iter(&self) -> Iter<'_> {
        match self {
            NodeSet::Bits(b) => Iter::Bits(*b),
            NodeSet::Sorted(v) => Iter::Sorted(v.iter()),
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// The unique element, if the set is a singleton.
    pub fn single(&self) -> Option<usize> {
        let mut it = self.iter();
        match (it.next(), it.next()) {
            (Some(n), None) => Some(n),
            _ => None,
        }
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        match (self, other) {
            (NodeSet::Bits(a), NodeSet::Bits(b)) => NodeSet::Bits(a & b),
            _ => self.filtered(|n| other.contains(n)),
        }
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        match (self, other) {
            (NodeSet::Bits(a), NodeSet::Bits(b)) => NodeSet::Bits(a & !b),
            _ => self.filtered(|n| !other.contains(n)),
        }
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        match (self, other) {
            (NodeSet::Bits(a), NodeSet::Bits(b)) => NodeSet::Bits(a | b),
            _ => {
                let mut out = self.clone();
                for n in other.iter() {
                    out.insert(n);
                }
                out
            }
        }
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        match (self, other) {
            (NodeSet::Bits(a), NodeSet::Bits(b)) => a & !b == 0,
            _ => self.iter().all(|n| other.contains(n)),
        }
    }

    fn filtered<F: Fn(usize) -> bool>(&self, keep: F) -> NodeSet {
        match self {
            NodeSet::Bits(b) => {
                let mut out = 0u64;
                for n in Iter::Bits(*b) {
                    if keep(n) {
                        out |= 1 << n;
                    }
                }
                NodeSet::Bits(out)
            }
            NodeSet::Sorted(v) => NodeSet::Sorted(v.iter().copied().filter(|&n| keep(n)).collect()),
        }
    }
}

impl PartialEq for NodeSet {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (NodeSet::Bits(a), NodeSet::Bits(b)) => a == b,
            (NodeSet::Sorted(a), NodeSet::Sorted(b)) => a == b,
            _ => self.iter().eq(other.iter()),
        }
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

pub enum Iter<'a> {
    Bits(u64),
    Sorted(core::slice::Iter<'a, usize>),
}

impl Iterator for Iter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Iter::Bits(b) => {
                if *b == 0 {
                    None
                } else {
                    let n = b.trailing_zeros() as usize;
                    *b &= *b - 1;
                    Some(n)
                }
            }
            Iter::Sorted(it) => it.next().copied(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_representations_agree() {
        let a_small = NodeSet::from_nodes(10, [1, 3, 5, 7]);
        let b_small = NodeSet::from_nodes(10, [3, 4, 5]);
        let a_big = NodeSet::from_nodes(100, [1, 3, 5, 7]);
        let b_big = NodeSet::from_nodes(100, [3, 4, 5]);
        assert!(matches!(a_small, NodeSet::Bits(_)));
        assert!(matches!(a_big, NodeSet::Sorted(_)));
        assert_eq!(a_small.intersection(&b_small).to_vec(), a_big.intersection(&b_big).to_vec());
        assert_eq!(a_small.difference(&b_small).to_vec(), vec![1, 7]);
        assert_eq!(a_big.difference(&b_big).to_vec(), vec![1, 7]);
        assert_eq!(a_small.union(&b_small), a_big.union(&b_big));
        assert_eq!(NodeSet::singleton(100, 70).single(), Some(70));
        assert_eq!(a_small.single(), None);
        assert!(NodeSet::from_nodes(10, [3, 5]).is_subset(&a_small));
    }
}
