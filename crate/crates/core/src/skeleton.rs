//! Kinematic skeleton topology: joint tree, rest offsets and neighborhoods.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::quat::{add3, norm3, Vec3};

const AXIS_UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
    /// Dominant rotation axis, used by the dynamics filter and data generation.
    pub axis: Vec3,
}

/// A validated joint tree.
///
/// The root's offset is the zero vector and every end effector is a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    name: String,
    joints: Vec<Joint>,
    end_effectors: Vec<usize>,
    neighbor_distance: usize,
    key_joints: Vec<usize>,
    pooling: Option<Vec<Vec<usize>>>,
    root: usize,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

/// Builder-side description of a skeleton, mirrors the on-disk layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonDesc {
    pub name: String,
    pub joints: Vec<Joint>,
    pub end_effectors: Vec<usize>,
    pub neighbor_distance: usize,
    pub key_joints: Option<Vec<usize>>,
    pub pooling: Option<Vec<Vec<usize>>>,
}

impl Skeleton {
    pub fn new(desc: SkeletonDesc) -> Result<Self> {
        let SkeletonDesc { name, joints, end_effectors, neighbor_distance, key_joints, pooling } = desc;
        let n = joints.len();
        if n == 0 {
            return Err(Error::InvalidSkeleton("skeleton has no joints".into()));
        }
        if neighbor_distance < 1 {
            return Err(Error::InvalidSkeleton("neighbor_distance must be >= 1".into()));
        }
        let parents: Vec<Option<usize>> = joints.iter().map(|j| j.parent).collect();
        let (root, children, order) = validate_tree(&parents)?;
        if norm3(joints[root].offset) != 0.0 {
            return Err(Error::InvalidSkeleton("root offset must be the zero vector".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            if j.offset.iter().chain(j.axis.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSkeleton(format!("joint {i} has a non-finite offset or axis")));
            }
            if norm3(j.axis) < 1e-9 {
                return Err(Error::InvalidSkeleton(format!("joint {i} has a zero axis")));
            }
        }
        for &e in &end_effectors {
            if e >= n {
                return Err(Error::InvalidSkeleton(format!("end effector {e} out of range")));
            }
            if !children[e].is_empty() {
                return Err(Error::InvalidSkeleton(format!("end effector {e} ('{}') is not a leaf", joints[e].name)));
            }
        }
        let mut seen = vec![false; n];
        for &e in &end_effectors {
            if std::mem::replace(&mut seen[e], true) {
                return Err(Error::InvalidSkeleton(format!("end effector {e} listed twice")));
            }
        }
        let key_joints = match key_joints {
            Some(k) => {
                if let Some(&bad) = k.iter().find(|&&k| k >= n) {
                    return Err(Error::InvalidSkeleton(format!("key joint {bad} out of range")));
                }
                k
            }
            None => std::iter::once(root).chain(end_effectors.iter().copied()).collect(),
        };
        let joints = joints
            .into_iter()
            .map(|mut j| {
                // already-unit axes are kept so that reloading a written skeleton is lossless
                let a = norm3(j.axis);
                if (a - 1.0).abs() > AXIS_UNIT_TOLERANCE {
                    j.axis = [j.axis[0] / a, j.axis[1] / a, j.axis[2] / a];
                }
                j
            })
            .collect();
        Ok(Self { name, joints, end_effectors, neighbor_distance, key_joints, pooling, root, children, order })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }
    pub fn joint_names(&self) -> impl Iterator<Item = &str> {
        self.joints.iter().map(|j| j.name.as_str())
    }
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }
    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }
    pub fn offset(&self, i: usize) -> Vec3 {
        self.joints[i].offset
    }
    pub fn axis(&self, i: usize) -> Vec3 {
        self.joints[i].axis
    }
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }
    pub fn root(&self) -> usize {
        self.root
    }
    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }
    pub fn end_effectors(&self) -> &[usize] {
        &self.end_effectors
    }
    pub fn key_joints(&self) -> &[usize] {
        &self.key_joints
    }
    pub fn neighbor_distance(&self) -> usize {
        self.neighbor_distance
    }
    /// Explicit pooling levels shipped with the configuration, if any.
    pub fn pooling(&self) -> Option<&[Vec<usize>]> {
        self.pooling.as_deref()
    }

    /// Neighborhoods `N_i` at the skeleton's configured distance.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        tree_neighborhoods(&self.parents(), self.neighbor_distance)
    }

    /// Offsets as a `J x 3` row-major buffer.
    pub fn offsets_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| j.offset).collect()
    }

    /// World positions of all joints in the rest pose with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![[0.0; 3]; self.joints.len()];
        for &i in &self.order {
            if let Some(p) = self.joints[i].parent {
                pos[i] = add3(pos[p], self.joints[i].offset);
            }
        }
        pos
    }

    /// Replaces the explicit pooling maps. They are checked when a hierarchy is built.
    pub fn with_pooling(mut self, maps: Vec<Vec<usize>>) -> Result<Self> {
        if maps.iter().any(|m| m.is_empty()) {
            return Err(Error::InvalidSkeleton("empty pooling map".into()));
        }
        self.pooling = Some(maps);
        Ok(self)
    }

    pub(crate) fn desc(&self) -> SkeletonDesc {
        SkeletonDesc {
            name: self.name.clone(),
            joints: self.joints.clone(),
            end_effectors: self.end_effectors.clone(),
            neighbor_distance: self.neighbor_distance,
            key_joints: Some(self.key_joints.clone()),
            pooling: self.pooling.clone(),
        }
    }
}

/// Checks that `parent` describes a single rooted tree. Returns the root,
/// child lists and a breadth-first order.
pub fn validate_tree(parent: &[Option<usize>]) -> Result<(usize, Vec<Vec<usize>>, Vec<usize>)> {
    let n = parent.len();
    let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(Error::InvalidSkeleton("no root joint".into())),
        _ => return Err(Error::InvalidSkeleton(format!("multiple roots: {roots:?}"))),
    };
    let mut children = vec![Vec::new(); n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n {
                return Err(Error::InvalidSkeleton(format!("joint {i} has out-of-range parent {p}")));
            }
            if p == i {
                return Err(Error::InvalidSkeleton(format!("joint {i} is its own parent")));
            }
            children[p].push(i);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        queue.extend(children[i].iter().copied());
    }
    if order.len() != n {
        return Err(Error::InvalidSkeleton("parent array contains a cycle".into()));
    }
    Ok((root, children, order))
}

/// All nodes within graph distance `d` of each node (including itself),
/// sorted ascending. The tree is treated as undirected.
pub fn tree_neighborhoods(parent: &[Option<usize>], d: usize) -> Vec<Vec<usize>> {
    let n = parent.len();
    let mut adj = vec![Vec::new(); n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if dist[u] == d {
                    continue;
                }
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            (0..n).filter(|&v| dist[v] != usize::MAX).collect()
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn joint(name: &str, parent: Option<usize>, offset: Vec3) -> Joint {
        Joint { name: name.into(), parent, offset, axis: [1.0, 0.0, 0.0] }
    }

    pub fn chain(name: &str, n: usize) -> Skeleton {
        let joints = (0..n)
            .map(|i| joint(&format!("j{i}"), i.checked_sub(1), if i == 0 { [0.0; 3] } else { [0.0, 0.0, 1.0] }))
            .collect();
        Skeleton::new(SkeletonDesc {
            name: name.into(),
            joints,
            end_effectors: vec![n - 1],
            neighbor_distance: 1,
            key_joints: None,
            pooling: None,
        })
        .unwrap()
    }

    #[test]
    fn rejects_cycles_and_second_roots() {
        assert!(validate_tree(&[None, Some(2), Some(1)]).is_err());
        assert!(validate_tree(&[None, None]).is_err());
        assert!(validate_tree(&[Some(0)]).is_err());
        assert!(validate_tree(&[None, Some(0), Some(1)]).is_ok());
    }

    #[test]
    fn end_effector_must_be_leaf() {
        let mut desc = chain("c", 3).desc();
        desc.end_effectors = vec![1];
        assert!(matches!(Skeleton::new(desc), Err(Error::InvalidSkeleton(_))));
    }

    #[test]
    fn axis_normalization_is_idempotent() {
        let mut desc = chain("c", 2).desc();
        desc.joints[1].axis = [0.3, -1.7, 0.2];
        let once = Skeleton::new(desc).unwrap();
        let twice = Skeleton::new(once.desc()).unwrap();
        assert_eq!(once, twice);
        assert!((norm3(once.axis(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_joint_skeleton() {
        let s = Skeleton::new(SkeletonDesc {
            name: "dot".into(),
            joints: vec![joint("root", None, [0.0; 3])],
            end_effectors: vec![0],
            neighbor_distance: 1,
            key_joints: None,
            pooling: None,
        })
        .unwrap();
        assert_eq!(s.neighborhoods(), vec![vec![0]]);
    }

    #[test]
    fn distance_one_is_parent_children_and_self() {
        let parent = [None, Some(0), Some(1), Some(1), Some(0), Some(4)];
        let nb = tree_neighborhoods(&parent, 1);
        for i in 0..parent.len() {
            let mut expected: Vec<usize> = vec![i];
            expected.extend(parent[i]);
            expected.extend((0..parent.len()).filter(|&c| parent[c] == Some(i)));
            expected.sort();
            assert_eq!(nb[i], expected);
        }
    }

    proptest! {
        #[test]
        fn neighborhoods_are_symmetric(seed in prop::collection::vec(0usize..100, 1..20), d in 1usize..4) {
            let parent: Vec<Option<usize>> = seed.iter().enumerate()
                .map(|(i, &s)| if i == 0 { None } else { Some(s % i) }).collect();
            let nb = tree_neighborhoods(&parent, d);
            for i in 0..parent.len() {
                prop_assert!(nb[i].contains(&i));
                for &j in &nb[i] { prop_assert!(nb[j].contains(&i)); }
            }
        }
    }
}
