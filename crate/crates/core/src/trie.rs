//! Pointer-based prefix tree over a constraint set.
//!
//! Every node owns a separately allocated, token-sorted child list, so a
//! lookup is a binary search followed by a jump to an unrelated heap
//! location. This is the structure the offline flattening starts from and
//! the one the CPU-trie baseline walks at decode time.

use crate::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::types::ConstraintSet;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrieNode {
    children: Box<[(u32, NodeId)]>,
    level: u16,
}

impl TrieNode {
    /// `(token, child)` pairs sorted by token.
    pub fn children(&self) -> &[(u32, NodeId)] {
        &self.children
    }

    pub fn level(&self) -> usize {
        self.level as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerTrie {
    vocab_size: usize,
    sid_length: usize,
    nodes: Vec<TrieNode>,
    /// Node count per level, index 0 is the root level.
    level_counts: Vec<usize>,
}

pub const ROOT: NodeId = 0;

impl PointerTrie {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sid_length(&self) -> usize {
        self.sid_length
    }

    pub fn root(&self) -> NodeId {
        ROOT
    }

    pub fn node(&self, id: NodeId) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn children(&self, id: NodeId) -> &[(u32, NodeId)] {
        &self.nodes[id as usize].children
    }

    pub fn child(&self, id: NodeId, token: u32) -> Option<NodeId> {
        let children = self.children(id);
        children
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| children[i].1)
    }

    /// Follows `prefix` from the root.
    pub fn walk(&self, prefix: &[u32]) -> Option<NodeId> {
        prefix.iter().try_fold(ROOT, |node, &t| self.child(node, t))
    }

    /// Distinct prefixes per level `1..=L`.
    pub fn level_counts(&self) -> &[usize] {
        &self.level_counts[1..]
    }

    /// Node ids grouped by level `0..=L`, each level in lexicographic prefix order.
    pub fn nodes_by_level(&self) -> Vec<Vec<NodeId>> {
        let mut levels = vec![vec![ROOT]];
        for _ in 0..self.sid_length {
            let next: Vec<NodeId> = levels
                .last()
                .unwrap()
                .iter()
                .flat_map(|&n| self.children(n).iter().map(|&(_, c)| c))
                .collect();
            levels.push(next);
        }
        levels
    }

    /// Maximum child count over the nodes of each level `0..L`.
    ///
    /// Entry `t` is the slice width the sparse kernel uses at decode step `t`.
    pub fn max_branch_factors(&self) -> Vec<u32> {
        let mut b = vec![0u32; self.sid_length];
        for node in &self.nodes {
            let level = node.level as usize;
            if level < self.sid_length {
                b[level] = b[level].max(node.children.len() as u32);
            }
        }
        b
    }
}

/// Inserts every id of a non-empty constraint set into a fresh trie.
pub fn build_pointer_trie(constraints: &ConstraintSet, config: &DecoderConfig) -> Result<PointerTrie> {
    if constraints.is_empty() {
        return Err(Error::EmptyConstraints);
    }
    constraints.check_config(config)?;
    let length = config.sid_length;
    let mut children: Vec<Vec<(u32, NodeId)>> = vec![Vec::new()];
    let mut levels: Vec<u16> = vec![0];
    let mut level_counts = vec![0usize; length + 1];
    level_counts[0] = 1;
    let mut path = vec![ROOT; length + 1];
    let mut prev: Option<&[u32]> = None;

    for sid in constraints.iter() {
        // Sorted input: only the suffix after the shared prefix is new.
        let common = prev.map_or(0, |p| p.iter().zip(sid).take_while(|(a, b)| a == b).count());
        for pos in common..length {
            let id = children.len();
            if id > u32::MAX as usize {
                return Err(Error::StateOverflow(id as u128));
            }
            children.push(Vec::new());
            levels.push((pos + 1) as u16);
            children[path[pos] as usize].push((sid[pos], id as NodeId));
            path[pos + 1] = id as NodeId;
            level_counts[pos + 1] += 1;
        }
        prev = Some(sid);
    }

    let nodes = children
        .into_iter()
        .zip(levels)
        .map(|(c, level)| TrieNode { children: c.into_boxed_slice(), level })
        .collect();
    Ok(PointerTrie { vocab_size: config.vocab_size, sid_length: length, nodes, level_counts })
}

/// Free-function form of [`PointerTrie::max_branch_factors`].
pub fn max_branch_factors(trie: &PointerTrie) -> Vec<u32> {
    trie.max_branch_factors()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> (ConstraintSet, DecoderConfig) {
        // Labels 1..3 shifted to 0-based tokens.
        let cfg = DecoderConfig::new(3, 3, 0);
        let set = ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap();
        (set, cfg)
    }

    #[test]
    fn example_level_counts_and_branching() {
        let (set, cfg) = example();
        let trie = build_pointer_trie(&set, &cfg).unwrap();
        assert_eq!(trie.level_counts(), &[2, 2, 3]);
        assert_eq!(trie.max_branch_factors(), vec![2, 1, 2]);
        let node = trie.walk(&[2, 0]).unwrap();
        let tokens: Vec<u32> = trie.children(node).iter().map(|&(t, _)| t).collect();
        assert_eq!(tokens, vec![1, 2]);
        assert_eq!(trie.walk(&[0, 0]), None);
    }

    #[test]
    fn single_id_is_a_chain() {
        let cfg = DecoderConfig::new(5, 4, 1);
        let set = ConstraintSet::from_sids([[4, 0, 3, 3]], &cfg).unwrap();
        let trie = build_pointer_trie(&set, &cfg).unwrap();
        assert_eq!(trie.level_counts(), &[1, 1, 1, 1]);
        assert_eq!(trie.num_nodes(), 5);
        assert_eq!(trie.max_branch_factors(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn full_product_space() {
        let cfg = DecoderConfig::new(2, 3, 0);
        let all: Vec<[u32; 3]> =
            (0..8u32).map(|x| [(x >> 2) & 1, (x >> 1) & 1, x & 1]).collect();
        let set = ConstraintSet::from_sids(all, &cfg).unwrap();
        let trie = build_pointer_trie(&set, &cfg).unwrap();
        assert_eq!(trie.level_counts(), &[2, 4, 8]);
        assert_eq!(trie.max_branch_factors(), vec![2, 2, 2]);
    }

    #[test]
    fn empty_set_is_rejected() {
        let cfg = DecoderConfig::new(2, 3, 0);
        let set = ConstraintSet::from_flat(vec![], 3, 2).unwrap();
        assert!(matches!(build_pointer_trie(&set, &cfg), Err(Error::EmptyConstraints)));
    }
}
