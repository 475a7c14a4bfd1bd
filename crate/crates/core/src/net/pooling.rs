//! Joint pooling hierarchies.
//!
//! Each level is a surjective map from the joints of one level to the
//! super-joints of the next. Every super-joint's preimage must be a connected
//! subtree, which lets the coarse level inherit a tree structure.

use std::sync::Arc;

use crate::autodiff::{ConvLayout, JointMap};
use crate::error::{Error, Result};
use crate::skeleton::{tree_neighborhoods, validate_tree, Skeleton};

/// Tree and convolution layout at one level of the hierarchy.
#[derive(Debug, Clone)]
pub struct LevelTopology {
    pub parent: Vec<Option<usize>>,
    pub layout: Arc<ConvLayout>,
}

impl LevelTopology {
    fn new(parent: Vec<Option<usize>>, d: usize) -> Self {
        let layout = ConvLayout::new(tree_neighborhoods(&parent, d));
        Self { parent, layout }
    }

    pub fn joints(&self) -> usize {
        self.parent.len()
    }
}

/// A skeleton with its pooling maps and per-level topologies.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub maps: Vec<Arc<JointMap>>,
    /// `levels[0]` is the skeleton itself; `levels[k + 1]` is the image of `maps[k]`.
    pub levels: Vec<LevelTopology>,
}

impl Hierarchy {
    /// Uses the skeleton's explicit maps when present, otherwise derives
    /// `levels` maps with [`auto_pooling`].
    pub fn for_skeleton(skeleton: &Skeleton, levels: usize) -> Result<Self> {
        let maps = match skeleton.pooling() {
            Some(m) => m.to_vec(),
            None => auto_pooling(skeleton, levels),
        };
        if maps.len() != levels {
            return Err(Error::IncompleteMap(format!(
                "skeleton '{}' ships {} pooling levels, the network needs {levels}",
                skeleton.name(),
                maps.len()
            )));
        }
        Self::from_maps(&skeleton.parents(), &maps, skeleton.neighbor_distance())
    }

    pub fn from_maps(parent: &[Option<usize>], maps: &[Vec<usize>], d: usize) -> Result<Self> {
        let mut levels = vec![LevelTopology::new(parent.to_vec(), d)];
        let mut joint_maps = Vec::with_capacity(maps.len());
        for (k, map) in maps.iter().enumerate() {
            let fine = &levels[k].parent;
            let coarse = coarse_parents(fine, map).map_err(|e| match e {
                Error::IncompleteMap(m) => Error::IncompleteMap(format!("level {k}: {m}")),
                other => other,
            })?;
            joint_maps.push(Arc::new(JointMap { map: map.clone(), groups: coarse.len() }));
            levels.push(LevelTopology::new(coarse, d));
        }
        Ok(Self { maps: joint_maps, levels })
    }

    pub fn prototypes(&self) -> usize {
        self.levels.last().unwrap().joints()
    }

    pub fn raw_maps(&self) -> Vec<Vec<usize>> {
        self.maps.iter().map(|m| m.map.clone()).collect()
    }
}

/// Validates `map` against the fine tree and returns the coarse parent array.
pub fn coarse_parents(parent: &[Option<usize>], map: &[usize]) -> Result<Vec<Option<usize>>> {
    if map.len() != parent.len() {
        return Err(Error::IncompleteMap(format!("map has {} entries for {} joints", map.len(), parent.len())));
    }
    let groups = map.iter().max().map_or(0, |m| m + 1);
    let mut tops: Vec<Vec<usize>> = vec![Vec::new(); groups];
    let mut sizes = vec![0usize; groups];
    for (j, &g) in map.iter().enumerate() {
        sizes[g] += 1;
        let outside = parent[j].map_or(true, |p| map[p] != g);
        if outside {
            tops[g].push(j);
        }
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::IncompleteMap(format!("super-joint {g} has no members")));
    }
    let mut coarse = Vec::with_capacity(groups);
    for (g, t) in tops.iter().enumerate() {
        let &[top] = t.as_slice() else {
            return Err(Error::IncompleteMap(format!("super-joint {g} is not a connected subtree")));
        };
        coarse.push(parent[top].map(|p| map[p]));
    }
    validate_tree(&coarse).map_err(|e| Error::IncompleteMap(format!("coarse level is not a tree: {e}")))?;
    Ok(coarse)
}

/// Collapses a skeleton onto limb prototypes: the torso (root plus every
/// joint on a path from the root to a branching joint) and the subtrees
/// hanging off it. Beyond four limbs the smallest ones fold into the torso.
/// Limbs are ordered left arm, right arm, left leg, right leg using the rest
/// pose (z up, +y left). Later levels are identity maps.
pub fn auto_pooling(skeleton: &Skeleton, levels: usize) -> Vec<Vec<usize>> {
    let n = skeleton.joint_count();
    let root = skeleton.root();
    let mut torso = vec![false; n];
    torso[root] = true;
    for i in 0..n {
        if skeleton.children(i).len() >= 2 {
            let mut j = Some(i);
            while let Some(k) = j {
                if torso[k] {
                    break;
                }
                torso[k] = true;
                j = skeleton.parent(k);
            }
        }
    }
    let subtree = |top: usize| {
        let mut out = vec![top];
        let mut k = 0;
        while k < out.len() {
            out.extend_from_slice(skeleton.children(out[k]));
            k += 1;
        }
        out
    };
    let mut limbs: Vec<Vec<usize>> = (0..n)
        .filter(|&i| !torso[i] && skeleton.parent(i).is_some_and(|p| torso[p]))
        .map(subtree)
        .collect();
    while limbs.len() > 4 {
        let (idx, _) = limbs.iter().enumerate().rev().min_by_key(|(_, l)| l.len()).unwrap();
        for j in limbs.remove(idx) {
            torso[j] = true;
        }
    }
    let rest = skeleton.rest_positions();
    let mut keyed: Vec<(bool, bool, usize, Vec<usize>)> = limbs
        .into_iter()
        .enumerate()
        .map(|(k, limb)| {
            let mean_y = limb.iter().map(|&j| rest[j][1]).sum::<f64>() / limb.len() as f64;
            let min_z = limb.iter().map(|&j| rest[j][2]).fold(f64::INFINITY, f64::min);
            let is_leg = min_z < rest[root][2];
            (is_leg, mean_y <= 0.0, k, limb)
        })
        .collect();
    keyed.sort_by_key(|(leg, right, k, _)| (*leg, *right, *k));
    let mut map = vec![0usize; n];
    for (g, (_, _, _, limb)) in keyed.iter().enumerate() {
        for &j in limb {
            map[j] = g + 1;
        }
    }
    let groups = keyed.len() + 1;
    let mut maps = vec![map];
    for _ in 1..levels {
        maps.push((0..groups).collect());
    }
    maps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io;

    #[test]
    fn toy_and_g1_reduce_to_five_prototypes() {
        for text in [io::TOY_HUMAN, io::TOY_ROBOT, io::G1_LIKE] {
            let s = io::skeleton_from_json(text).unwrap();
            let auto = auto_pooling(&s, 2);
            let h = Hierarchy::from_maps(&s.parents(), &auto, 1).unwrap();
            assert_eq!(h.prototypes(), 5, "{}", s.name());
            assert_eq!(h.levels[1].parent, vec![None, Some(0), Some(0), Some(0), Some(0)]);
            let shipped = Hierarchy::for_skeleton(&s, 2).unwrap();
            assert_eq!(shipped.prototypes(), 5);
        }
    }

    #[test]
    fn auto_limb_order_matches_shipped_maps() {
        for text in [io::TOY_HUMAN, io::TOY_ROBOT] {
            let s = io::skeleton_from_json(text).unwrap();
            assert_eq!(auto_pooling(&s, 2), s.pooling().unwrap().to_vec(), "{}", s.name());
        }
    }

    #[test]
    fn rejects_disconnected_or_incomplete_maps() {
        // 0 - 1 - 2 chain; grouping {0, 2} is not connected
        let parent = [None, Some(0), Some(1)];
        assert!(matches!(coarse_parents(&parent, &[0, 1, 0]), Err(Error::IncompleteMap(_))));
        assert!(matches!(coarse_parents(&parent, &[0, 1]), Err(Error::IncompleteMap(_))));
        assert!(matches!(coarse_parents(&parent, &[0, 2, 2]), Err(Error::IncompleteMap(_))));
        assert_eq!(coarse_parents(&parent, &[0, 0, 1]).unwrap(), vec![None, Some(0)]);
    }

    #[test]
    fn single_joint_hierarchy() {
        let h = Hierarchy::from_maps(&[None], &[vec![0], vec![0]], 1).unwrap();
        assert_eq!(h.prototypes(), 1);
        assert_eq!(h.levels[2].layout.neighbors, vec![vec![0]]);
    }
}
