//! Rigid skeleton: a tree of bodies rooted at the floating base, connected
//! by revolute (or welded) joints.
//!
//! Body frames follow `H_child = H_parent · mount · Rot(axis, q)`, so a
//! revolute joint axis always passes through the child frame origin.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{adjoint_inv, bracket, rotation_about, skew, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub name: String,
    /// kg
    pub mass: f64,
    /// Centre of mass in the body frame, m.
    pub com: Vector3<f64>,
    /// Rotational inertia about the centre of mass, kg·m².
    pub inertia: Matrix3<f64>,
}

impl BodySpec {
    /// 6×6 spatial inertia about the body frame origin, `(angular, linear)`.
    pub fn spatial_inertia(&self) -> Matrix6<f64> {
        let c = skew(&self.com);
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.inertia + c * c.transpose() * self.mass));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * self.mass));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * self.mass));
        out.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * self.mass));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    /// Welds the child to the parent; contributes no coordinate.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub parent: usize,
    pub child: usize,
    /// Joint frame in the parent body frame at zero angle.
    pub mount: Pose,
    /// rad
    pub lower: f64,
    /// rad
    pub upper: f64,
    /// N·m
    pub torque_limit: f64,
}

/// Where a tracked point lives: on a rigid body or along the rod.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PointHost {
    Body { body: usize, point: Vector3<f64> },
    Rod { s: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub name: String,
    pub host: PointHost,
}

/// Mount of the prosthesis root on the skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Socket {
    pub body: usize,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub bodies: Vec<BodySpec>,
    /// Topologically ordered: a joint's parent body is the base or the
    /// child of an earlier joint.
    pub joints: Vec<JointSpec>,
    pub end_effectors: Vec<EndEffector>,
    pub socket: Option<Socket>,
    /// Coordinate index of each joint, `None` for fixed joints.
    dof_index: Vec<Option<usize>>,
    /// Joint whose child is the body, `None` for the base.
    parent_joint: Vec<Option<usize>>,
}

impl SkeletonSpec {
    /// Validates the tree and reorders joints parent-first.
    pub fn new(
        bodies: Vec<BodySpec>,
        joints: Vec<JointSpec>,
        end_effectors: Vec<EndEffector>,
        socket: Option<Socket>,
    ) -> Result<Self> {
        let nb = bodies.len();
        if nb == 0 {
            return Err(Error::Model("skeleton has no bodies".into()));
        }
        let mut names = std::collections::HashSet::new();
        for b in &bodies {
            if !names.insert(b.name.as_str()) {
                return Err(Error::Model(format!("duplicate body name '{}'", b.name)));
            }
            if !(b.mass > 0.0 && b.mass.is_finite()) {
                return Err(Error::Model(format!("body '{}' needs positive mass", b.name)));
            }
            let sym = (b.inertia - b.inertia.transpose()).amax() <= 1e-12 * b.inertia.amax().max(1.0);
            let pd = b.inertia.cholesky().is_some();
            if !sym || !pd || !b.com.iter().all(|v| v.is_finite()) {
                return Err(Error::Model(format!(
                    "body '{}' inertia must be symmetric positive definite",
                    b.name
                )));
            }
        }

        let mut parent_joint: Vec<Option<usize>> = vec![None; nb];
        let mut joints = joints;
        for (j, joint) in joints.iter_mut().enumerate() {
            if joint.parent >= nb || joint.child >= nb {
                return Err(Error::Model(format!("joint '{}' references a missing body", joint.name)));
            }
            if joint.child == 0 {
                return Err(Error::Model(format!("joint '{}' makes the base a child", joint.name)));
            }
            if parent_joint[joint.child].is_some() {
                return Err(Error::Model(format!(
                    "body '{}' has more than one parent joint",
                    bodies[joint.child].name
                )));
            }
            parent_joint[joint.child] = Some(j);
            if joint.kind == JointKind::Revolute {
                let n = joint.axis.norm();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Model(format!("joint '{}' axis must be unit length", joint.name)));
                }
                joint.axis /= n;
            }
            if !(joint.lower < joint.upper) {
                return Err(Error::Model(format!("joint '{}' needs lower < upper", joint.name)));
            }
            if !(joint.torque_limit >= 0.0) {
                return Err(Error::Model(format!("joint '{}' torque limit must be >= 0", joint.name)));
            }
            if !joint.mount.is_valid(1e-9) {
                return Err(Error::Model(format!("joint '{}' mount is not a valid pose", joint.name)));
            }
        }
        if let Some(orphan) = (1..nb).find(|&b| parent_joint[b].is_none()) {
            return Err(Error::Model(format!("body '{}' is not attached", bodies[orphan].name)));
        }
        // Stable parent-first order: joints already in order keep their
        // position; anything left over after a pass without progress is a cycle.
        let mut placed = vec![false; nb];
        placed[0] = true;
        let mut done = vec![false; joints.len()];
        let mut order = Vec::with_capacity(joints.len());
        while order.len() < joints.len() {
            let before = order.len();
            for (j, joint) in joints.iter().enumerate() {
                if !done[j] && placed[joint.parent] {
                    done[j] = true;
                    placed[joint.child] = true;
                    order.push(j);
                }
            }
            if order.len() == before {
                return Err(Error::Model("skeleton joints form a cycle".into()));
            }
        }
        let joints: Vec<JointSpec> = order.iter().map(|&j| joints[j].clone()).collect();
        let mut parent_joint = vec![None; nb];
        let mut dof_index = Vec::with_capacity(joints.len());
        let mut next = 0;
        for (j, joint) in joints.iter().enumerate() {
            parent_joint[joint.child] = Some(j);
            if joint.kind == JointKind::Revolute {
                dof_index.push(Some(next));
                next += 1;
            } else {
                dof_index.push(None);
            }
        }

        for ee in &end_effectors {
            if let PointHost::Body { body, .. } = ee.host {
                if body >= nb {
                    return Err(Error::Model(format!("end effector '{}' on missing body", ee.name)));
                }
            }
        }
        if let Some(s) = &socket {
            if s.body >= nb || !s.pose.is_valid(1e-9) {
                return Err(Error::Model("invalid prosthesis socket".into()));
            }
        }
        Ok(Self {
            bodies,
            joints,
            end_effectors,
            socket,
            dof_index,
            parent_joint,
        })
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_index.iter().flatten().count()
    }

    pub fn dof_of_joint(&self, joint: usize) -> Option<usize> {
        self.dof_index[joint]
    }

    pub fn parent_joint(&self, body: usize) -> Option<usize> {
        self.parent_joint[body]
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Actuated joints in coordinate order.
    pub fn actuated_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints
            .iter()
            .zip(&self.dof_index)
            .filter(|(_, d)| d.is_some())
            .map(|(j, _)| j)
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    fn joint_transform(&self, j: usize, q: &[f64]) -> Pose {
        let joint = &self.joints[j];
        match self.dof_index[j] {
            Some(i) => joint.mount * Pose::from_rotation(rotation_about(&joint.axis, q[i])),
            None => joint.mount,
        }
    }

    /// Body poses relative to the base frame.
    pub fn relative_poses(&self, q: &[f64]) -> Vec<Pose> {
        let mut out = vec![Pose::identity(); self.bodies.len()];
        for (j, joint) in self.joints.iter().enumerate() {
            out[joint.child] = out[joint.parent] * self.joint_transform(j, q);
        }
        out
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.num_dofs() {
            return Err(Error::InvalidArgument(format!(
                "expected {} joint angles, got {}",
                self.num_dofs(),
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("joint angles must be finite".into()));
        }
        Ok(())
    }
}

/// World-frame kinematic snapshot of the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonPose {
    pub bodies: Vec<Pose>,
    pub socket: Option<Pose>,
    /// Positions of body-hosted end effectors; rod-hosted ones are `None`.
    pub end_effectors: Vec<Option<Vector3<f64>>>,
    /// Set when some angle was outside its limits and got clamped.
    pub clamped: bool,
}

pub fn skeleton_fk(spec: &SkeletonSpec, base: &Pose, q: &[f64]) -> Result<SkeletonPose> {
    spec.check_q(q)?;
    let mut clamped = false;
    let mut qc = q.to_vec();
    for joint in spec.actuated_joints().collect::<Vec<_>>().iter().enumerate() {
        let (i, j) = joint;
        let v = qc[i].clamp(j.lower, j.upper);
        clamped |= v != qc[i];
        qc[i] = v;
    }
    let bodies: Vec<Pose> = spec
        .relative_poses(&qc)
        .into_iter()
        .map(|p| *base * p)
        .collect();
    let socket = spec.socket.as_ref().map(|s| bodies[s.body] * s.pose);
    let end_effectors = spec
        .end_effectors
        .iter()
        .map(|ee| match &ee.host {
            PointHost::Body { body, point } => Some(bodies[*body].transform_point(point)),
            PointHost::Rod { .. } => None,
        })
        .collect();
    Ok(SkeletonPose {
        bodies,
        socket,
        end_effectors,
        clamped,
    })
}

/// Per-body quantities from one parent-to-child sweep, all in body frames
/// relative to the base, with `ncols` generalized-velocity columns
/// (`6` base columns first, then joint coordinates).
#[derive(Clone, Debug)]
pub(crate) struct ChainFrame {
    pub pose: Pose,
    pub jac: DMatrix<f64>,
    /// Columns where `jac` can be non-zero.
    pub support: Vec<usize>,
    pub velocity: Vector6<f64>,
    /// `J̇ ν`: acceleration of the frame at zero generalized acceleration.
    pub bias: Vector6<f64>,
}

pub(crate) fn propagate_chain(
    spec: &SkeletonSpec,
    q: &[f64],
    qd: &[f64],
    base_velocity: &Vector6<f64>,
    ncols: usize,
) -> Vec<ChainFrame> {
    let mut base_jac = DMatrix::zeros(6, ncols);
    base_jac.view_mut((0, 0), (6, 6)).fill_with_identity();
    let mut frames: Vec<Option<ChainFrame>> = vec![None; spec.bodies.len()];
    frames[0] = Some(ChainFrame {
        pose: Pose::identity(),
        jac: base_jac,
        support: (0..6).collect(),
        velocity: *base_velocity,
        bias: Vector6::zeros(),
    });
    for (j, joint) in spec.joints.iter().enumerate() {
        let x = spec.joint_transform(j, q);
        let ad = adjoint_inv(&x);
        let parent = frames[joint.parent].as_ref().expect("parent-first order");
        let mut jac = DMatrix::zeros(6, ncols);
        for &c in &parent.support {
            let col = ad * parent.jac.fixed_view::<6, 1>(0, c);
            jac.fixed_view_mut::<6, 1>(0, c).copy_from(&col);
        }
        let mut support = parent.support.clone();
        let mut velocity = ad * parent.velocity;
        let mut bias = ad * parent.bias;
        if let Some(i) = spec.dof_index[j] {
            let axis = Vector6::new(joint.axis.x, joint.axis.y, joint.axis.z, 0.0, 0.0, 0.0);
            let col = 6 + i;
            jac.fixed_view_mut::<6, 1>(0, col).copy_from(&axis);
            support.push(col);
            let rel = axis * qd[i];
            velocity += rel;
            bias += bracket(&velocity, &rel);
        }
        frames[joint.child] = Some(ChainFrame {
            pose: parent.pose * x,
            jac,
            support,
            velocity,
            bias,
        });
    }
    frames.into_iter().map(|f| f.expect("every body reached")).collect()
}

/// Jacobian of a point fixed on `body`, mapping `[η₀; q̇_R]` to the
/// world-frame `(angular velocity, point linear velocity)`.
///
/// `η₀` is the base twist in the base frame.
pub fn point_jacobian(
    spec: &SkeletonSpec,
    base: &Pose,
    q: &[f64],
    body: usize,
    local_point: &Vector3<f64>,
) -> Result<DMatrix<f64>> {
    spec.check_q(q)?;
    if body >= spec.bodies.len() {
        return Err(Error::InvalidArgument(format!("unknown body index {body}")));
    }
    let n = 6 + spec.num_dofs();
    let frames = propagate_chain(spec, q, &vec![0.0; q.len()], &Vector6::zeros(), n);
    let frame = &frames[body];
    Ok(world_point_jacobian(&(*base * frame.pose), &frame.jac, local_point))
}

/// Converts a body-frame twist Jacobian into world `(ω, ṗ)` rows for a
/// point given in body coordinates.
pub(crate) fn world_point_jacobian(world: &Pose, body_jac: &DMatrix<f64>, point: &Vector3<f64>) -> DMatrix<f64> {
    let r = world.rotation;
    let mut t = DMatrix::zeros(6, 6);
    t.view_mut((0, 0), (3, 3)).copy_from(&r);
    t.view_mut((3, 0), (3, 3)).copy_from(&(-(r * skew(point))));
    t.view_mut((3, 3), (3, 3)).copy_from(&r);
    t * body_jac
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::liegroup::{exp_unchecked, Twist};
    use proptest::prelude::*;

    fn body(name: &str, mass: f64, com: Vector3<f64>) -> BodySpec {
        BodySpec {
            name: name.into(),
            mass,
            com,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.02, 0.01, 0.02)) * mass,
        }
    }

    fn revolute(name: &str, parent: usize, child: usize, at: Vector3<f64>) -> JointSpec {
        JointSpec {
            name: name.into(),
            kind: JointKind::Revolute,
            axis: Vector3::z(),
            parent,
            child,
            mount: Pose::from_translation(at),
            lower: -3.0,
            upper: 3.0,
            torque_limit: 300.0,
        }
    }

    /// Base with two legs of two links each; a tilted joint axis exercises
    /// the general case.
    pub(crate) fn two_leg_skeleton() -> SkeletonSpec {
        let down = Vector3::new(0.0, -0.2, 0.0);
        let bodies = vec![
            body("base", 10.0, Vector3::new(0.0, 0.1, 0.0)),
            body("thigh_r", 3.0, down),
            body("shank_r", 2.0, down),
            body("thigh_l", 3.0, down),
            body("shank_l", 2.0, down),
        ];
        let mut tilted = revolute("knee_l", 3, 4, Vector3::new(0.0, -0.4, 0.0));
        tilted.axis = Vector3::new(0.3, 0.0, 1.0).normalize();
        let joints = vec![
            // deliberately out of order
            revolute("knee_r", 1, 2, Vector3::new(0.0, -0.4, 0.0)),
            revolute("hip_r", 0, 1, Vector3::new(0.0, 0.0, 0.1)),
            revolute("hip_l", 0, 3, Vector3::new(0.0, 0.0, -0.1)),
            tilted,
        ];
        let ees = vec![
            EndEffector { name: "foot_r".into(), host: PointHost::Body { body: 2, point: Vector3::new(0.0, -0.4, 0.0) } },
            EndEffector { name: "foot_l".into(), host: PointHost::Body { body: 4, point: Vector3::new(0.05, -0.4, 0.0) } },
        ];
        SkeletonSpec::new(bodies, joints, ees, Some(Socket { body: 2, pose: Pose::from_translation(Vector3::new(0.0, -0.3, 0.0)) })).unwrap()
    }

    fn body_velocity_fd(minus: &Pose, center: &Pose, plus: &Pose, h: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let dr = (plus.rotation - minus.rotation) / (2.0 * h);
        let w = center.rotation.transpose() * dr;
        (Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]), dr)
    }

    #[test]
    fn joints_are_reordered_parent_first() {
        let s = two_leg_skeleton();
        let names: Vec<_> = s.joints.iter().map(|j| j.name.as_str()).collect();
        assert_eq!(names, ["hip_r", "hip_l", "knee_l", "knee_r"]);
        assert_eq!(s.num_dofs(), 4);
    }

    #[test]
    fn zero_pose_is_composition_of_mounts() {
        let s = two_leg_skeleton();
        let fk = skeleton_fk(&s, &Pose::identity(), &[0.0; 4]).unwrap();
        let foot_r = fk.end_effectors[0].unwrap();
        assert!((foot_r - Vector3::new(0.0, -0.8, 0.1)).norm() < 1e-15);
        assert!((fk.socket.unwrap().position - Vector3::new(0.0, -0.7, 0.1)).norm() < 1e-15);
        assert!(!fk.clamped);
    }

    #[test]
    fn hip_flexion_rotates_the_leg() {
        let s = two_leg_skeleton();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let fk = skeleton_fk(&s, &Pose::identity(), &[half_pi, 0.0, 0.0, 0.0]).unwrap();
        // hand-composed: hip mount, Rz(π/2), knee mount, foot offset
        let hip = Pose::from_translation(Vector3::new(0.0, 0.0, 0.1))
            * Pose::from_rotation(rotation_about(&Vector3::z(), half_pi));
        let expected = hip.transform_point(&Vector3::new(0.0, -0.8, 0.0));
        let got = fk.end_effectors[0].unwrap();
        assert!((got - expected).norm() < 1e-14);
        assert!((got - Vector3::new(0.8, 0.0, 0.1)).norm() < 1e-14);
    }

    #[test]
    fn limits_are_clamped_and_flagged() {
        let s = two_leg_skeleton();
        let fk = skeleton_fk(&s, &Pose::identity(), &[5.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(fk.clamped);
        let at_limit = skeleton_fk(&s, &Pose::identity(), &[3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(fk.end_effectors, at_limit.end_effectors);
        assert!(matches!(skeleton_fk(&s, &Pose::identity(), &[0.0; 3]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn base_angular_velocity_gives_cross_product() {
        let s = two_leg_skeleton();
        let p = Vector3::new(0.1, 0.2, -0.3);
        let j = point_jacobian(&s, &Pose::identity(), &[0.0; 4], 0, &p).unwrap();
        let w = Vector3::new(0.4, -1.0, 2.0);
        let mut nu = nalgebra::DVector::zeros(10);
        nu.rows_mut(0, 3).copy_from_slice(w.as_slice());
        let v = j * nu;
        assert!((Vector3::new(v[3], v[4], v[5]) - w.cross(&p)).norm() < 1e-15);
        assert!(point_jacobian(&s, &Pose::identity(), &[0.0; 4], 9, &p).is_err());
    }

    #[test]
    fn validation_rejects_bad_trees() {
        let s = two_leg_skeleton();
        let mut joints = s.joints.clone();
        joints[1].child = 1; // two parents for thigh_r, thigh_l orphaned
        assert!(SkeletonSpec::new(s.bodies.clone(), joints, vec![], None).is_err());
        let mut joints = s.joints.clone();
        joints[0].parent = 2; // hip_r hangs off its own grandchild
        assert!(SkeletonSpec::new(s.bodies.clone(), joints, vec![], None).is_err());
        let mut joints = s.joints.clone();
        joints.pop(); // shank_l orphaned
        assert!(SkeletonSpec::new(s.bodies.clone(), joints, vec![], None).is_err());
        let mut bodies = s.bodies.clone();
        bodies[1].mass = 0.0;
        assert!(SkeletonSpec::new(bodies, s.joints.clone(), vec![], None).is_err());
    }

    fn fd_check(base: Pose, q: [f64; 4], eta: Vector6<f64>, qd: [f64; 4]) -> f64 {
        let s = two_leg_skeleton();
        let mut worst: f64 = 0.0;
        let h = 1e-6;
        let pose_at = |t: f64, b: usize, p: &Vector3<f64>| {
            let bt = base * exp_unchecked(&Twist(eta * t));
            let qt: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a + b * t).collect();
            let fk = skeleton_fk(&s, &bt, &qt).unwrap();
            (fk.bodies[b], fk.bodies[b].transform_point(p))
        };
        for (b, p) in [(2, Vector3::new(0.0, -0.4, 0.0)), (4, Vector3::new(0.05, -0.4, 0.02)), (0, Vector3::new(0.3, 0.1, 0.0))] {
            let j = point_jacobian(&s, &base, &q, b, &p).unwrap();
            let mut nu = nalgebra::DVector::zeros(10);
            nu.rows_mut(0, 6).copy_from_slice(eta.as_slice());
            nu.rows_mut(6, 4).copy_from_slice(&qd);
            let v = j * nu;
            let (m, pm) = pose_at(-h, b, &p);
            let (c, _) = pose_at(0.0, b, &p);
            let (pl, pp) = pose_at(h, b, &p);
            let (w_body, _) = body_velocity_fd(&m, &c, &pl, h);
            let w = c.rotation * w_body;
            let lin = (pp - pm) / (2.0 * h);
            let fd = Vector6::new(w.x, w.y, w.z, lin.x, lin.y, lin.z);
            let an = Vector6::from_column_slice(v.as_slice());
            worst = worst.max((fd - an).norm() / fd.norm().max(1e-12));
        }
        worst
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let base = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5).normalize(), 0.7)
            * Pose::from_translation(Vector3::new(0.3, 1.0, -0.2));
        let err = fd_check(
            base,
            [0.3, -0.8, 1.1, 0.4],
            Vector6::new(0.3, -0.5, 0.8, 1.2, -0.3, 0.4),
            [1.0, -2.0, 0.5, 1.5],
        );
        assert!(err < 1e-5, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn jacobian_fd_on_random_states(
            q in prop::array::uniform4(-2.0f64..2.0),
            qd in prop::array::uniform4(-3.0f64..3.0),
            eta in prop::array::uniform6(-2.0f64..2.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..3.0,
        ) {
            let ax = Vector3::from(axis);
            prop_assume!(ax.norm() > 1e-3);
            let base = Pose::from_axis_angle(&ax.normalize(), angle);
            let err = fd_check(base, q, Vector6::from(eta), qd);
            prop_assert!(err < 1e-5, "{}", err);
        }

        #[test]
        fn world_translation_is_equivariant(
            q in prop::array::uniform4(-2.0f64..2.0),
            d in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let s = two_leg_skeleton();
            let base = Pose::from_axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.3);
            let moved = Pose::from_translation(Vector3::from(d)) * base;
            let a = skeleton_fk(&s, &base, &q).unwrap();
            let b = skeleton_fk(&s, &moved, &q).unwrap();
            for (x, y) in a.end_effectors.iter().zip(&b.end_effectors) {
                let diff = y.unwrap() - x.unwrap() - Vector3::from(d);
                prop_assert!(diff.norm() < 1e-12);
            }
        }
    }
}
