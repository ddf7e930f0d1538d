//! Gait energetics and ground-reaction analysis over recorded
//! trajectories: positive joint work, cost of transport, per-side contact
//! statistics and rod strain summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Side;
use crate::table::Table;
use crate::trajectory::side_key;

/// Default muscle efficiency used to turn joint work into metabolic cost.
pub const DEFAULT_EFFICIENCY: f64 = 0.8;

/// Normal force above which a side counts as in contact, N.
pub const CONTACT_THRESHOLD: f64 = 5.0;

/// Smallest net forward displacement for which distance-normalised
/// metrics are reported, m.
pub const MIN_DISTANCE: f64 = 0.1;

/// Sample spacing of the `t` column; must be uniform to 1e-6 relative.
pub fn uniform_dt(table: &Table) -> Result<f64> {
    let t = table.column("t")?;
    if t.len() < 2 {
        return table
            .meta_f64("dt")
            .ok_or_else(|| Error::Format("need two samples or a 'dt' entry".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format("time column must increase".into()));
    }
    if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Format("time column is not uniformly spaced".into()));
    }
    Ok(dt)
}

/// Trapezoidal integral of uniformly spaced samples.
fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// `∫ Σ_j max(0, τ_j θ̇_j) dt` over the `tau_<joint>` / `qd_<joint>`
/// columns, J.
pub fn joint_work(table: &Table) -> Result<f64> {
    let taus = table.columns_with_prefix("tau_");
    if taus.is_empty() {
        return Err(Error::Format("trajectory has no tau_ columns".into()));
    }
    let dt = uniform_dt(table)?;
    let mut power = vec![0.0; table.rows.len()];
    for name in taus {
        let joint = &name["tau_".len()..];
        let tau = table.column(&name)?;
        let qd = table.column(&format!("qd_{joint}"))?;
        for (p, (t, w)) in power.iter_mut().zip(tau.iter().zip(&qd)) {
            *p += (t * w).max(0.0);
        }
    }
    Ok(trapezoid(&power, dt))
}

/// `E_joint / (α_e m d)`, J/(kg·m).
pub fn cost_of_transport(work: f64, mass: f64, distance: f64, efficiency: f64) -> Result<f64> {
    if !(distance > MIN_DISTANCE) {
        return Err(Error::UndefinedMetric(format!(
            "distance {distance} m is below {MIN_DISTANCE} m"
        )));
    }
    if !(mass > 0.0 && efficiency > 0.0) {
        return Err(Error::InvalidArgument("mass and efficiency must be positive".into()));
    }
    Ok(work / (efficiency * mass * distance))
}

/// Net forward (x) base displacement, m.
pub fn forward_distance(table: &Table) -> Result<f64> {
    let x = table.column("base_x")?;
    Ok(match (x.first(), x.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    })
}

/// Model mass from the trajectory metadata unless overridden.
pub fn body_mass(table: &Table, mass: Option<f64>) -> Result<f64> {
    mass.or_else(|| table.meta_f64("mass"))
        .ok_or_else(|| Error::Format("no body mass given or recorded".into()))
}

pub fn trajectory_cot(table: &Table, mass: Option<f64>, efficiency: f64) -> Result<f64> {
    cost_of_transport(
        joint_work(table)?,
        body_mass(table, mass)?,
        forward_distance(table)?,
        efficiency,
    )
}

/// One stance interval of a side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactInterval {
    /// s
    pub start: f64,
    /// s
    pub contact_time: f64,
    /// From contact start to the peak normal force, s.
    pub time_to_peak: f64,
    /// N
    pub peak_force: f64,
    /// Mean positive forward force over the second half of stance, N.
    pub propulsion: f64,
    /// Mean backward force magnitude over the second half of stance, N.
    pub braking: f64,
}

/// Per-side ground reaction statistics; interval values are averaged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GrfStats {
    pub intervals: Vec<ContactInterval>,
    pub avg_propulsion_late_stance: f64,
    pub avg_braking_late_stance: f64,
    pub contact_time: f64,
    pub time_to_peak: f64,
    /// No contact was found.
    pub empty: bool,
}

/// Summed world force `(forward, vertical)` of one side's contacts.
pub fn side_forces(table: &Table, side: Side) -> Result<(Vec<f64>, Vec<f64>)> {
    let names: Vec<String> = table
        .meta(side_key(side))
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .unwrap_or_default();
    let mut fx = vec![0.0; table.rows.len()];
    let mut fy = vec![0.0; table.rows.len()];
    for name in names {
        for (acc, axis) in [(&mut fx, "fx"), (&mut fy, "fy")] {
            for (a, v) in acc.iter_mut().zip(table.column(&format!("c_{name}_{axis}"))?) {
                *a += v;
            }
        }
    }
    Ok((fx, fy))
}

pub fn grf_stats(table: &Table, side: Side) -> Result<GrfStats> {
    grf_stats_with(table, side, CONTACT_THRESHOLD)
}

pub fn grf_stats_with(table: &Table, side: Side, threshold: f64) -> Result<GrfStats> {
    let (fx, fy) = side_forces(table, side)?;
    let dt = uniform_dt(table)?;
    let t = table.column("t")?;
    grf_from_series(&t, &fx, &fy, dt, threshold)
}

/// Contact intervals are maximal runs of samples with normal force above
/// `threshold`; each spans `samples · dt`.
pub fn grf_from_series(t: &[f64], fx: &[f64], fy: &[f64], dt: f64, threshold: f64) -> Result<GrfStats> {
    if fx.len() != fy.len() || t.len() != fy.len() {
        return Err(Error::InvalidArgument("force series lengths differ".into()));
    }
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < fy.len() {
        if fy[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < fy.len() && fy[i] > threshold {
            i += 1;
        }
        let n = i - start;
        let mut peak = start;
        for k in start..i {
            if fy[k] > fy[peak] {
                peak = k;
            }
        }
        let late = &fx[start + n / 2..i];
        let mean = |f: &dyn Fn(f64) -> f64| late.iter().map(|&v| f(v)).sum::<f64>() / late.len() as f64;
        intervals.push(ContactInterval {
            start: t[start],
            contact_time: n as f64 * dt,
            time_to_peak: (peak - start) as f64 * dt,
            peak_force: fy[peak],
            propulsion: mean(&|v| v.max(0.0)),
            braking: mean(&|v| (-v).max(0.0)),
        });
    }
    if intervals.is_empty() {
        return Ok(GrfStats {
            empty: true,
            ..GrfStats::default()
        });
    }
    let avg = |f: fn(&ContactInterval) -> f64| intervals.iter().map(f).sum::<f64>() / intervals.len() as f64;
    Ok(GrfStats {
        avg_propulsion_late_stance: avg(|c| c.propulsion),
        avg_braking_late_stance: avg(|c| c.braking),
        contact_time: avg(|c| c.contact_time),
        time_to_peak: avg(|c| c.time_to_peak),
        intervals,
        empty: false,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrainSummary {
    /// Active strain component names, e.g. `["kz", "ux", "uy"]`.
    pub components: Vec<String>,
    /// `[segment][component]` maximum of `|strain − rest|`.
    pub max_deviation: Vec<Vec<f64>>,
    /// Largest curvature deviation over all segments, 1/m.
    pub max_bending: f64,
    /// J
    pub peak_elastic_energy: f64,
    /// Peak elastic energy per body mass and distance, J/(kg·m); absent
    /// when the distance is below [`MIN_DISTANCE`].
    pub mechanical_cost: Option<f64>,
}

/// Reduces the `e<seg>_<comp>` and `elastic_energy` columns.
pub fn strain_summary(table: &Table, mass: Option<f64>) -> Result<StrainSummary> {
    let mut components: Vec<String> = Vec::new();
    let mut max_deviation: Vec<Vec<f64>> = Vec::new();
    for (i, name) in table.columns.iter().enumerate() {
        let Some(rest) = name.strip_prefix('e') else { continue };
        let Some((seg, comp)) = rest.split_once('_') else { continue };
        let Ok(seg) = seg.parse::<usize>() else { continue };
        if seg == 0 {
            components.push(comp.to_string());
        }
        if max_deviation.len() <= seg {
            max_deviation.resize(seg + 1, Vec::new());
        }
        let peak = table.rows.iter().map(|r| r[i].abs()).fold(0.0, f64::max);
        max_deviation[seg].push(peak);
    }
    let max_bending = max_deviation
        .iter()
        .flat_map(|seg| {
            seg.iter()
                .zip(&components)
                .filter(|(_, c)| c.starts_with('k'))
                .map(|(v, _)| *v)
        })
        .fold(0.0, f64::max);
    let peak_elastic_energy = match table.column_index("elastic_energy") {
        Some(i) => table.rows.iter().map(|r| r[i]).fold(0.0, f64::max),
        None => 0.0,
    };
    let distance = forward_distance(table).unwrap_or(0.0);
    let mechanical_cost = if distance > MIN_DISTANCE {
        Some(peak_elastic_energy / (body_mass(table, mass)? * distance))
    } else {
        None
    };
    Ok(StrainSummary {
        components,
        max_deviation,
        max_bending,
        peak_elastic_energy,
        mechanical_cost,
    })
}

/// Everything the metrics command reports for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration: f64,
    pub distance: f64,
    pub mass: f64,
    pub joint_work: f64,
    pub cost_of_transport: Option<f64>,
    pub grf_left: GrfStats,
    pub grf_right: GrfStats,
    pub strain: StrainSummary,
}

pub fn report(table: &Table, mass: Option<f64>, efficiency: f64) -> Result<MetricsReport> {
    if table.rows.is_empty() {
        return Err(Error::Format("trajectory has no samples".into()));
    }
    let t = table.column("t")?;
    let mass = body_mass(table, mass)?;
    let work = joint_work(table)?;
    let distance = forward_distance(table)?;
    Ok(MetricsReport {
        duration: t[t.len() - 1] - t[0],
        distance,
        mass,
        joint_work: work,
        cost_of_transport: cost_of_transport(work, mass, distance, efficiency).ok(),
        grf_left: grf_stats(table, Side::Left)?,
        grf_right: grf_stats(table, Side::Right)?,
        strain: strain_summary(table, Some(mass))?,
    })
}
