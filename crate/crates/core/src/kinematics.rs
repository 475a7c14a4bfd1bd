//! Forward kinematics from local rotations and rest offsets.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::quat::{add3, Quaternion, Vec3};
use crate::skeleton::Skeleton;

/// World-frame joint positions indexed `[frame][joint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub positions: Vec<Vec<Vec3>>,
}

impl JointPositions {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn joint_count(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Keeps only the listed joint columns, in the given order.
    pub fn select(&self, joints: &[usize]) -> JointPositions {
        JointPositions { positions: self.positions.iter().map(|f| joints.iter().map(|&j| f[j]).collect()).collect() }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.positions.iter().flatten().flatten().copied().collect();
        Tensor::new(vec![self.frames(), self.joint_count(), 3], data).unwrap()
    }
}

/// Global rotations and positions for every frame.
///
/// `position[i] = position[parent] + global_rot[parent] * offset[i]`, the root
/// sits at the clip's root translation and its rotation is applied about it.
pub fn fk(skeleton: &Skeleton, clip: &MotionClip) -> Result<JointPositions> {
    clip.check_skeleton(skeleton)?;
    let n = skeleton.joint_count();
    let positions = (0..clip.frames())
        .map(|t| {
            let mut global = vec![Quaternion::IDENTITY; n];
            let mut pos = vec![[0.0; 3]; n];
            for &i in skeleton.topological_order() {
                let local = clip.rotation(t, i);
                match skeleton.parent(i) {
                    None => {
                        global[i] = local;
                        pos[i] = clip.root_translation()[t];
                    }
                    Some(p) => {
                        global[i] = global[p].mul(local);
                        pos[i] = add3(pos[p], global[p].rotate(skeleton.offset(i)));
                    }
                }
            }
            pos
        })
        .collect();
    Ok(JointPositions { positions })
}

/// End-effector trajectories in declaration order.
pub fn end_effector_positions(skeleton: &Skeleton, clip: &MotionClip) -> Result<JointPositions> {
    if skeleton.end_effectors().is_empty() {
        return Err(Error::EmptyEndEffectorSet);
    }
    Ok(fk(skeleton, clip)?.select(skeleton.end_effectors()))
}

/// Differentiable forward kinematics.
///
/// `rotations` is `[T, J, 4]` of raw, possibly unnormalized 4-vectors (they
/// are normalized inside the graph); `root_translation` is `[T, 3]`. Returns
/// `[T, J, 3]` positions.
pub fn fk_differentiable(g: &mut Graph, skeleton: &Skeleton, rotations: Var, root_translation: Var) -> Result<Var> {
    let n = skeleton.joint_count();
    let &[frames, joints, 4] = g.shape(rotations) else {
        return Err(Error::ShapeMismatch(format!("rotations must be [T, J, 4], got {:?}", g.shape(rotations))));
    };
    if joints != n {
        return Err(Error::ShapeMismatch(format!("rotations have {joints} joints, skeleton '{}' has {n}", skeleton.name())));
    }
    if g.shape(root_translation) != [frames, 3] {
        return Err(Error::ShapeMismatch(format!("root translation must be [{frames}, 3], got {:?}", g.shape(root_translation))));
    }
    let unit = g.normalize_rows(rotations)?;
    let mut global: Vec<Option<Var>> = vec![None; n];
    let mut pos: Vec<Option<Var>> = vec![None; n];
    for &i in skeleton.topological_order() {
        let local = g.index_select(unit, 1, &[i])?;
        let local = g.reshape(local, &[frames, 4])?;
        match skeleton.parent(i) {
            None => {
                global[i] = Some(local);
                pos[i] = Some(root_translation);
            }
            Some(p) => {
                let gp = global[p].expect("parents are visited first");
                global[i] = Some(g.quat_mul(gp, local)?);
                let offset = g.constant(Tensor::new(vec![frames, 3], skeleton.offset(i).repeat(frames)).unwrap());
                let rotated = g.quat_rotate(gp, offset)?;
                pos[i] = Some(g.add(pos[p].unwrap(), rotated)?);
            }
        }
    }
    let cols: Vec<Var> = pos
        .into_iter()
        .map(|p| g.reshape(p.unwrap(), &[frames, 1, 3]))
        .collect::<Result<_>>()?;
    g.concat(&cols, 1)
}
