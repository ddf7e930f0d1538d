//! Hybrid model description: skeleton, optional prosthesis rod, contact
//! points and controller settings, loaded from a TOML model file.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{adjoint_inv, rotation_about, vee, Pose, Twist};
use crate::rod::{
    rod_forward_kinematics, segment_inertia, Coupling, RodSpec, RodState, SegmentSpec, StrainMask,
};
use crate::skeleton::{
    BodySpec, EndEffector, JointKind, JointSpec, PointHost, SkeletonSpec, Socket,
};

pub const HUMANOID_JOINTS: usize = 9;
pub const HUMANOID_END_EFFECTORS: usize = 5;

const HUMANOID_TOML: &str = include_str!("../models/humanoid.toml");
const TOY_TOML: &str = include_str!("../models/toy.toml");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    #[default]
    Floating,
    /// Base pose is held; only joint and strain coordinates move.
    Fixed,
}

/// `Humanoid` enforces the 9-joint / 5-end-effector layout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Humanoid,
    #[default]
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// N/m
    pub k_n: f64,
    /// N·s/m
    pub d_n: f64,
    pub mu: f64,
    /// N·s/m
    pub k_t: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            k_n: 5e4,
            d_n: 500.0,
            mu: 0.8,
            k_t: 2e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub name: String,
    pub side: Side,
    pub host: PointHost,
}

/// Controller settings stored with the model; the run config may override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub stabilizer_kp: f64,
    pub stabilizer_kd: f64,
    /// Penalty stiffness beyond joint limits, N·m/rad.
    pub limit_stiffness: f64,
    /// N·m·s/rad
    pub limit_damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub name: String,
    pub profile: Profile,
    pub base_mode: BaseMode,
    pub skeleton: SkeletonSpec,
    /// Mounted at `skeleton.socket`; its `attachment` is relative to the socket frame.
    pub rod: Option<RodSpec>,
    pub contacts: Vec<ContactSpec>,
    pub contact: ContactParams,
    pub control: ControlSpec,
    pub gravity: Vector3<f64>,
    pub ground_height: f64,
    /// Base pose of the nominal standing configuration.
    pub initial_base: Pose,
    pub initial_q: Vec<f64>,
    /// Correct the base velocity after each step so the world linear
    /// momentum changes by exactly `dt` times the external force.
    pub project_momentum: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub base: Pose,
    /// Base twist in the base frame.
    pub base_velocity: Twist,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Empty when the model has no rod.
    pub rod: RodState,
}

impl HybridState {
    pub fn is_finite(&self) -> bool {
        self.base.is_finite()
            && self.base_velocity.is_finite()
            && self.q.iter().chain(&self.qd).all(|v| v.is_finite())
            && self.rod.is_finite()
    }
}

impl HybridModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text)?;
        file.build()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Model(format!("cannot read model {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Models shipped with the library: `humanoid` and `toy`.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "humanoid" => Self::from_toml_str(HUMANOID_TOML),
            "toy" => Self::from_toml_str(TOY_TOML),
            other => Err(Error::InvalidArgument(format!("no bundled model named '{other}'"))),
        }
    }

    /// A bundled model name or a path to a model file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "humanoid" | "toy" => Self::bundled(name_or_path),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_dofs()
    }

    /// Active strain coordinates.
    pub fn num_strains(&self) -> usize {
        self.rod.as_ref().map_or(0, RodSpec::dof)
    }

    /// Length of the generalized velocity `[η₀; q̇_R; q̇_S(active)]`.
    pub fn nv(&self) -> usize {
        6 + self.num_joints() + self.num_strains()
    }

    pub fn rod_offset(&self) -> usize {
        6 + self.num_joints()
    }

    pub fn total_mass(&self) -> f64 {
        self.skeleton.total_mass() + self.rod.as_ref().map_or(0.0, RodSpec::total_mass)
    }

    /// Rod root pose in the socket body frame (socket offset ∘ attachment).
    pub fn rod_mount(&self) -> Option<(usize, Pose)> {
        let rod = self.rod.as_ref()?;
        let socket = self.skeleton.socket.as_ref()?;
        Some((socket.body, socket.pose * rod.attachment))
    }

    pub fn rest_state(&self) -> HybridState {
        HybridState {
            base: self.initial_base,
            base_velocity: Twist::zero(),
            q: self.initial_q.clone(),
            qd: vec![0.0; self.num_joints()],
            rod: self.rod.as_ref().map_or(
                RodState {
                    strains: vec![],
                    strain_rates: vec![],
                },
                RodSpec::rest_state,
            ),
        }
    }

    pub fn check_state(&self, state: &HybridState) -> Result<()> {
        let n = self.num_joints();
        if state.q.len() != n || state.qd.len() != n {
            return Err(Error::InvalidArgument(format!(
                "state has {}/{} joint entries, model has {n}",
                state.q.len(),
                state.qd.len()
            )));
        }
        let segs = self.rod.as_ref().map_or(0, RodSpec::num_segments);
        if state.rod.strains.len() != segs || state.rod.strain_rates.len() != segs {
            return Err(Error::InvalidArgument(format!(
                "state has {} rod segments, model has {segs}",
                state.rod.strains.len()
            )));
        }
        Ok(())
    }

    /// Same model with rod stiffness scaled by `k` and damping by `d`.
    pub fn scale_rod(&self, k: f64, d: f64) -> Result<Self> {
        if !(k > 0.0 && d >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stiffness scale must be > 0 and damping scale >= 0 (got {k}, {d})"
            )));
        }
        let mut out = self.clone();
        out.rod = self.rod.as_ref().map(|r| r.scaled(k, d));
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_joints();
        if self.initial_q.len() != n {
            return Err(Error::Model(format!(
                "initial joint vector has {} entries, model has {n} joints",
                self.initial_q.len()
            )));
        }
        if self.control.kp.len() != n || self.control.kd.len() != n {
            return Err(Error::Model(format!("control gains must have {n} entries")));
        }
        if self
            .control
            .kp
            .iter()
            .chain(&self.control.kd)
            .chain([&self.control.stabilizer_kp, &self.control.stabilizer_kd])
            .any(|g| !(*g >= 0.0))
        {
            return Err(Error::Model("control gains must be non-negative".into()));
        }
        let c = &self.contact;
        if !(c.k_n >= 0.0 && c.d_n >= 0.0 && c.mu >= 0.0 && c.k_t >= 0.0) {
            return Err(Error::Model("contact parameters must be non-negative".into()));
        }
        if let Some(rod) = &self.rod {
            rod.validate()?;
            if self.skeleton.socket.is_none() {
                return Err(Error::Model("a rod needs a socket on the skeleton".into()));
            }
        }
        let rod_len = self.rod.as_ref().map(RodSpec::total_length);
        let hosts = self
            .contacts
            .iter()
            .map(|c| (&c.name, &c.host))
            .chain(self.skeleton.end_effectors.iter().map(|e| (&e.name, &e.host)));
        for (name, host) in hosts {
            if let PointHost::Rod { s } = host {
                match rod_len {
                    None => return Err(Error::Model(format!("'{name}' is on a rod but the model has none"))),
                    Some(l) if !(*s >= 0.0 && *s <= l + 1e-12) => {
                        return Err(Error::Model(format!("'{name}' arclength {s} outside rod [0, {l}]")))
                    }
                    _ => {}
                }
            }
        }
        if self.profile == Profile::Humanoid {
            if n != HUMANOID_JOINTS {
                return Err(Error::Model(format!(
                    "humanoid profile needs {HUMANOID_JOINTS} actuated joints, found {n}"
                )));
            }
            let ne = self.skeleton.end_effectors.len();
            if ne != HUMANOID_END_EFFECTORS {
                return Err(Error::Model(format!(
                    "humanoid profile needs {HUMANOID_END_EFFECTORS} end effectors, found {ne}"
                )));
            }
        }
        if !self.initial_base.is_valid(1e-9) || !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Model("initial base pose or gravity is invalid".into()));
        }
        Ok(())
    }

    /// Replaces the rod with one rigid body welded to the socket, frozen at
    /// rest strain with the same mass distribution. Rod-hosted contacts and
    /// end effectors move onto that body.
    pub fn make_rigid_variant(&self) -> Result<Self> {
        let Some(rod) = &self.rod else {
            return Ok(self.clone());
        };
        let (socket_body, mount) = self.rod_mount().expect("validated rod has a socket");
        let rest = rod.rest_state();
        let kin = rod_forward_kinematics(rod, &rest, &Pose::identity())?;
        // Spatial inertia about the rod root: Σ Ad_{G⁻¹}ᵀ Λ_i Ad_{G⁻¹}.
        let mut inertia = Matrix6::zeros();
        for (i, seg) in rod.segments.iter().enumerate() {
            let local = segment_inertia(seg, &seg.rest_strain);
            let ad = adjoint_inv(&kin.boundaries[i]);
            inertia += ad.transpose() * local * ad;
        }
        let body = body_from_spatial_inertia("prosthesis", &inertia)?;

        let mut bodies = self.skeleton.bodies.clone();
        let new_index = bodies.len();
        bodies.push(body);
        let mut joints = self.skeleton.joints.clone();
        joints.push(JointSpec {
            name: "prosthesis_weld".into(),
            kind: JointKind::Fixed,
            axis: Vector3::z(),
            parent: socket_body,
            child: new_index,
            mount,
            lower: -1.0,
            upper: 1.0,
            torque_limit: 0.0,
        });
        let remap = |host: &PointHost| -> Result<PointHost> {
            Ok(match host {
                PointHost::Rod { s } => PointHost::Body {
                    body: new_index,
                    point: kin.query(*s)?.position,
                },
                other => other.clone(),
            })
        };
        let end_effectors = self
            .skeleton
            .end_effectors
            .iter()
            .map(|e| {
                Ok(EndEffector {
                    name: e.name.clone(),
                    host: remap(&e.host)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let contacts = self
            .contacts
            .iter()
            .map(|c| {
                Ok(ContactSpec {
                    name: c.name.clone(),
                    side: c.side,
                    host: remap(&c.host)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let skeleton = SkeletonSpec::new(bodies, joints, end_effectors, self.skeleton.socket.clone())?;
        let out = Self {
            name: format!("{}-rigid", self.name),
            skeleton,
            rod: None,
            contacts,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }
}

/// Recovers mass, centre of mass and central inertia from a 6×6 spatial
/// inertia about the body origin.
pub fn body_from_spatial_inertia(name: &str, inertia: &Matrix6<f64>) -> Result<BodySpec> {
    let mass = inertia[(3, 3)];
    if !(mass > 0.0) {
        return Err(Error::Model(format!("'{name}' would have no mass")));
    }
    let mc = inertia.fixed_view::<3, 3>(0, 3).into_owned();
    let com = vee(&mc) / mass;
    let c = crate::liegroup::skew(&com);
    let mut central: Matrix3<f64> = inertia.fixed_view::<3, 3>(0, 0) - c * c.transpose() * mass;
    central = 0.5 * (central + central.transpose());
    // A straight rod with no cross-section inertia has a zero principal moment.
    if central.cholesky().is_none() {
        central += Matrix3::identity() * (1e-9 * mass);
    }
    Ok(BodySpec {
        name: name.into(),
        mass,
        com,
        inertia: central,
    })
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default)]
    profile: Profile,
    #[serde(default)]
    base: BaseMode,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    #[serde(default)]
    ground_height: f64,
    #[serde(default)]
    initial: InitialFile,
    bodies: Vec<BodyFile>,
    #[serde(default)]
    joints: Vec<JointFile>,
    #[serde(default)]
    end_effectors: Vec<PointFile>,
    socket: Option<SocketFile>,
    rod: Option<RodFile>,
    #[serde(default)]
    contacts: Vec<PointFile>,
    #[serde(default)]
    contact: ContactParams,
    #[serde(default)]
    control: ControlFile,
    #[serde(default = "default_true")]
    project_momentum: bool,
}

fn default_true() -> bool {
    true
}

fn default_gravity() -> [f64; 3] {
    [0.0, -9.81, 0.0]
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    #[serde(default)]
    base_position: [f64; 3],
    /// Axis-angle `[x, y, z, angle]`.
    base_rotation: Option<[f64; 4]>,
    q: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyFile {
    name: String,
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    /// Principal moments `[ixx, iyy, izz]` or a row-major 3×3.
    inertia: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    #[serde(default = "default_kind")]
    kind: JointKind,
    parent: String,
    child: String,
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    #[serde(default)]
    origin: [f64; 3],
    rotation: Option<[f64; 4]>,
    #[serde(default = "default_lower")]
    lower: f64,
    #[serde(default = "default_upper")]
    upper: f64,
    #[serde(default = "default_torque_limit")]
    torque_limit: f64,
}

fn default_kind() -> JointKind {
    JointKind::Revolute
}
fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_lower() -> f64 {
    -std::f64::consts::PI
}
fn default_upper() -> f64 {
    std::f64::consts::PI
}
fn default_torque_limit() -> f64 {
    300.0
}

/// A point on a body (`body` + `point`) or on the rod (`rod_s`).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointFile {
    name: String,
    body: Option<String>,
    point: Option<[f64; 3]>,
    rod_s: Option<f64>,
    side: Option<Side>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SocketFile {
    body: String,
    #[serde(default)]
    origin: [f64; 3],
    rotation: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RodFile {
    #[serde(default)]
    origin: [f64; 3],
    rotation: Option<[f64; 4]>,
    /// Subset of `kx ky kz ux uy uz`; all six when absent.
    active: Option<Vec<String>>,
    segments: Vec<SegmentFile>,
    /// Row-major `6N × 6N`; overrides the per-segment blocks.
    coupling_stiffness: Option<Vec<f64>>,
    coupling_damping: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentFile {
    length: f64,
    linear_density: f64,
    /// Diagonal `[3]` or row-major `[9]`, kg·m.
    #[serde(default = "default_cross_section")]
    rotational_inertia_density: Vec<f64>,
    #[serde(default = "default_rest_strain")]
    rest_strain: [f64; 6],
    /// Diagonal `[6]` or row-major `[36]`.
    stiffness: Vec<f64>,
    damping: Vec<f64>,
    /// Number of identical consecutive segments this entry stands for.
    #[serde(default = "default_repeat")]
    repeat: usize,
}

fn default_cross_section() -> Vec<f64> {
    vec![0.0; 3]
}
fn default_rest_strain() -> [f64; 6] {
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
}
fn default_repeat() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlFile {
    #[serde(default = "default_kp")]
    kp: ScalarOrVec,
    #[serde(default = "default_kd")]
    kd: ScalarOrVec,
    #[serde(default = "default_stabilizer_kp")]
    stabilizer_kp: f64,
    #[serde(default = "default_stabilizer_kd")]
    stabilizer_kd: f64,
    #[serde(default = "default_limit_stiffness")]
    limit_stiffness: f64,
    #[serde(default = "default_limit_damping")]
    limit_damping: f64,
}

impl Default for ControlFile {
    fn default() -> Self {
        Self {
            kp: default_kp(),
            kd: default_kd(),
            stabilizer_kp: default_stabilizer_kp(),
            stabilizer_kd: default_stabilizer_kd(),
            limit_stiffness: default_limit_stiffness(),
            limit_damping: default_limit_damping(),
        }
    }
}

fn default_kp() -> ScalarOrVec {
    ScalarOrVec::Scalar(100.0)
}
fn default_kd() -> ScalarOrVec {
    ScalarOrVec::Scalar(1.0)
}
fn default_stabilizer_kp() -> f64 {
    2000.0
}
fn default_stabilizer_kd() -> f64 {
    100.0
}
fn default_limit_stiffness() -> f64 {
    500.0
}
fn default_limit_damping() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Self::Scalar(v) => Ok(vec![*v; n]),
            Self::Vector(v) if v.len() == n => Ok(v.clone()),
            Self::Vector(v) => Err(Error::Model(format!(
                "{what} has {} entries, expected {n}",
                v.len()
            ))),
        }
    }
}

fn frame(origin: [f64; 3], rotation: Option<[f64; 4]>) -> Result<Pose> {
    let rot = match rotation {
        None => Matrix3::identity(),
        Some([x, y, z, angle]) => {
            let axis = Vector3::new(x, y, z);
            let n = axis.norm();
            if !(n > 0.0) {
                return Err(Error::Model("rotation axis must be non-zero".into()));
            }
            rotation_about(&(axis / n), angle)
        }
    };
    Ok(Pose::new(rot, Vector3::from(origin)))
}

fn matrix3(v: &[f64], what: &str) -> Result<Matrix3<f64>> {
    match v.len() {
        3 => Ok(Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2]))),
        9 => Ok(Matrix3::from_row_slice(v)),
        n => Err(Error::Model(format!("{what} needs 3 or 9 entries, got {n}"))),
    }
}

fn matrix6(v: &[f64], what: &str) -> Result<Matrix6<f64>> {
    match v.len() {
        6 => Ok(Matrix6::from_diagonal(&Vector6::from_column_slice(v))),
        36 => Ok(Matrix6::from_row_slice(v)),
        n => Err(Error::Model(format!("{what} needs 6 or 36 entries, got {n}"))),
    }
}

fn strain_mask(names: &[String]) -> Result<StrainMask> {
    const NAMES: [&str; 6] = ["kx", "ky", "kz", "ux", "uy", "uz"];
    let mut mask = [false; 6];
    for n in names {
        let i = NAMES
            .iter()
            .position(|k| k == n)
            .ok_or_else(|| Error::Model(format!("unknown strain component '{n}'")))?;
        mask[i] = true;
    }
    Ok(StrainMask(mask))
}

impl ModelFile {
    fn build(self) -> Result<HybridModel> {
        let body_index = |name: &str| {
            self.bodies
                .iter()
                .position(|b| b.name == name)
                .ok_or_else(|| Error::Model(format!("unknown body '{name}'")))
        };
        let bodies = self
            .bodies
            .iter()
            .map(|b| {
                Ok(BodySpec {
                    name: b.name.clone(),
                    mass: b.mass,
                    com: Vector3::from(b.com),
                    inertia: matrix3(&b.inertia, &format!("body '{}' inertia", b.name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let joints = self
            .joints
            .iter()
            .map(|j| {
                Ok(JointSpec {
                    name: j.name.clone(),
                    kind: j.kind,
                    axis: Vector3::from(j.axis),
                    parent: body_index(&j.parent)?,
                    child: body_index(&j.child)?,
                    mount: frame(j.origin, j.rotation)?,
                    lower: j.lower,
                    upper: j.upper,
                    torque_limit: j.torque_limit,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let host = |p: &PointFile| -> Result<PointHost> {
            match (&p.body, p.point, p.rod_s) {
                (Some(b), point, None) => Ok(PointHost::Body {
                    body: body_index(b)?,
                    point: Vector3::from(point.unwrap_or_default()),
                }),
                (None, None, Some(s)) => Ok(PointHost::Rod { s }),
                _ => Err(Error::Model(format!(
                    "point '{}' needs either body (+ point) or rod_s",
                    p.name
                ))),
            }
        };
        let end_effectors = self
            .end_effectors
            .iter()
            .map(|p| {
                Ok(EndEffector {
                    name: p.name.clone(),
                    host: host(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let contacts = self
            .contacts
            .iter()
            .map(|p| {
                Ok(ContactSpec {
                    name: p.name.clone(),
                    side: p
                        .side
                        .ok_or_else(|| Error::Model(format!("contact '{}' needs a side", p.name)))?,
                    host: host(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let socket = self
            .socket
            .as_ref()
            .map(|s| -> Result<Socket> {
                Ok(Socket {
                    body: body_index(&s.body)?,
                    pose: frame(s.origin, s.rotation)?,
                })
            })
            .transpose()?;
        let skeleton = SkeletonSpec::new(bodies, joints, end_effectors, socket)?;

        let rod = self.rod.as_ref().map(build_rod).transpose()?;
        let n = skeleton.num_dofs();
        let control = ControlSpec {
            kp: self.control.kp.expand(n, "control.kp")?,
            kd: self.control.kd.expand(n, "control.kd")?,
            stabilizer_kp: self.control.stabilizer_kp,
            stabilizer_kd: self.control.stabilizer_kd,
            limit_stiffness: self.control.limit_stiffness,
            limit_damping: self.control.limit_damping,
        };
        let model = HybridModel {
            name: self.name,
            profile: self.profile,
            base_mode: self.base,
            skeleton,
            rod,
            contacts,
            contact: self.contact,
            control,
            gravity: Vector3::from(self.gravity),
            ground_height: self.ground_height,
            initial_base: frame(self.initial.base_position, self.initial.base_rotation)?,
            initial_q: self.initial.q.unwrap_or_else(|| vec![0.0; n]),
            project_momentum: self.project_momentum,
        };
        model.validate()?;
        Ok(model)
    }
}

fn build_rod(r: &RodFile) -> Result<RodSpec> {
    let mut segments = Vec::new();
    for (i, s) in r.segments.iter().enumerate() {
        let seg = SegmentSpec {
            length: s.length,
            linear_density: s.linear_density,
            rotational_inertia_density: matrix3(&s.rotational_inertia_density, "rod cross-section inertia")?,
            rest_strain: Twist(Vector6::from(s.rest_strain)),
            stiffness: matrix6(&s.stiffness, &format!("rod segment {i} stiffness"))?,
            damping: matrix6(&s.damping, &format!("rod segment {i} damping"))?,
        };
        if s.repeat == 0 {
            return Err(Error::Model("segment repeat must be >= 1".into()));
        }
        segments.extend(std::iter::repeat(seg).take(s.repeat));
    }
    let dense = |v: &Option<Vec<f64>>, what: &str| -> Result<Option<DMatrix<f64>>> {
        let n = 6 * segments.len();
        v.as_ref()
            .map(|v| {
                if v.len() != n * n {
                    Err(Error::Model(format!("{what} needs {} entries", n * n)))
                } else {
                    Ok(DMatrix::from_row_slice(n, n, v))
                }
            })
            .transpose()
    };
    let coupling = match (
        dense(&r.coupling_stiffness, "coupling_stiffness")?,
        dense(&r.coupling_damping, "coupling_damping")?,
    ) {
        (Some(stiffness), Some(damping)) => Some(Coupling { stiffness, damping }),
        (None, None) => None,
        _ => {
            return Err(Error::Model(
                "coupling_stiffness and coupling_damping must be given together".into(),
            ))
        }
    };
    let spec = RodSpec {
        segments,
        attachment: frame(r.origin, r.rotation)?,
        active: match &r.active {
            Some(names) => strain_mask(names)?,
            None => StrainMask::all(),
        },
        coupling,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::skeleton_fk;

    #[test]
    fn bundled_models_load() {
        let h = HybridModel::bundled("humanoid").unwrap();
        assert_eq!(h.num_joints(), 9);
        assert_eq!(h.skeleton.end_effectors.len(), 5);
        assert_eq!(h.rod.as_ref().unwrap().num_segments(), 6);
        assert_eq!(h.nv(), 33);
        let toy = HybridModel::bundled("toy").unwrap();
        assert_eq!(toy.base_mode, BaseMode::Fixed);
        assert_eq!(toy.num_joints(), 2);
        assert_eq!(toy.rod.as_ref().unwrap().num_segments(), 2);
        assert!(HybridModel::bundled("nope").is_err());
    }

    #[test]
    fn humanoid_stands_on_the_ground() {
        let h = HybridModel::bundled("humanoid").unwrap();
        let fk = skeleton_fk(&h.skeleton, &h.initial_base, &h.initial_q).unwrap();
        let (body, mount) = h.rod_mount().unwrap();
        let rod = h.rod.as_ref().unwrap();
        let kin = rod_forward_kinematics(rod, &rod.rest_state(), &(fk.bodies[body] * mount)).unwrap();
        assert!(kin.tip().position.y.abs() < 5e-3, "tip height {}", kin.tip().position.y);
        let heel = &h.contacts.iter().find(|c| c.name == "heel_l").unwrap().host;
        if let PointHost::Body { body, point } = heel {
            let y = fk.bodies[*body].transform_point(point).y;
            assert!(y.abs() < 5e-3, "heel height {y}");
        }
        assert!((h.total_mass() - 53.0).abs() < 1e-9, "mass {}", h.total_mass());
    }

    #[test]
    fn humanoid_profile_is_enforced() {
        let text = HUMANOID_TOML.replace("profile = \"humanoid\"", "profile = \"humanoid\"\n# edited");
        let mut file: toml::Value = toml::from_str(&text).unwrap();
        let ees = file.get_mut("end_effectors").unwrap().as_array_mut().unwrap();
        ees.pop();
        let err = HybridModel::from_toml_str(&toml::to_string(&file).unwrap()).unwrap_err();
        assert!(err.to_string().contains("end effectors"), "{err}");
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(HybridModel::from_toml_str("name = 3"), Err(Error::Model(_))));
        let cyclic = r#"
            name = "bad"
            [[bodies]]
            name = "a"
            mass = 1.0
            inertia = [1, 1, 1]
            [[bodies]]
            name = "b"
            mass = 1.0
            inertia = [1, 1, 1]
            [[joints]]
            name = "j"
            parent = "b"
            child = "b"
        "#;
        assert!(HybridModel::from_toml_str(cyclic).is_err());
        let unknown = cyclic.replace("parent = \"b\"", "parent = \"zzz\"");
        assert!(HybridModel::from_toml_str(&unknown).is_err());
    }

    #[test]
    fn rigid_variant_preserves_mass_and_tip() {
        for name in ["humanoid", "toy"] {
            let h = HybridModel::bundled(name).unwrap();
            let r = h.make_rigid_variant().unwrap();
            assert!(r.rod.is_none());
            assert_eq!(r.nv(), 6 + h.num_joints());
            assert!((r.total_mass() - h.total_mass()).abs() < 1e-10);
            assert_eq!(r.contacts.len(), h.contacts.len());

            let fk_h = skeleton_fk(&h.skeleton, &h.initial_base, &h.initial_q).unwrap();
            let (body, mount) = h.rod_mount().unwrap();
            let rod = h.rod.as_ref().unwrap();
            let tip = rod_forward_kinematics(rod, &rod.rest_state(), &(fk_h.bodies[body] * mount))
                .unwrap()
                .tip()
                .position;
            let fk_r = skeleton_fk(&r.skeleton, &r.initial_base, &r.initial_q).unwrap();
            let prosthesis = r.skeleton.body_index("prosthesis").unwrap();
            let tip_local = rod_forward_kinematics(rod, &rod.rest_state(), &Pose::identity())
                .unwrap()
                .tip()
                .position;
            let tip_r = fk_r.bodies[prosthesis].transform_point(&tip_local);
            assert!((tip - tip_r).norm() < 1e-12);
        }
    }

    #[test]
    fn stiffness_scaling() {
        let h = HybridModel::bundled("humanoid").unwrap();
        let s = h.scale_rod(1.1, 1.0).unwrap();
        let k0 = h.rod.as_ref().unwrap().segments[0].stiffness;
        let k1 = s.rod.as_ref().unwrap().segments[0].stiffness;
        assert!((k1 - k0 * 1.1).norm() < 1e-12);
        assert_eq!(
            h.rod.as_ref().unwrap().segments[0].damping,
            s.rod.as_ref().unwrap().segments[0].damping
        );
        assert!(h.scale_rod(-1.0, 1.0).is_err());
    }
}
