//! Unbalanced three-phase backward/forward sweep and the voltage metrics the
//! engines act on (violation count, phase unbalance).
//!
//! Everything here works in per-unit on the feeder's line-to-neutral voltage
//! base and per-phase power base. Closed tie switches that create loops are
//! handled by breaking each loop at a non-tree branch and injecting a
//! compensation current pair there, updated from the loop impedance matrix
//! until the breakpoint voltage mismatch vanishes.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{FeederModel, Phase, PhaseSet, TopologyView};

type C3 = [Complex64; 3];
type M3 = [[Complex64; 3]; 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default convergence tolerance on power mismatch, per unit.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
/// Unbalance level above which protection or monitoring is assumed to react.
pub const UNBALANCE_LIMIT_PCT: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("load set has {got} entries, model has {expected} buses")]
    LoadSetMismatch { expected: usize, got: usize },
    #[error("load override on de-energized bus `{0}`")]
    OverrideOnDeenergized(String),
    #[error("bus `{bus}` carries load on absent phase {phase}")]
    LoadOnAbsentPhase { bus: String, phase: Phase },
    #[error("loop impedance matrix is singular (zero-impedance loop)")]
    SingularLoop,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("voltage band is inverted or invalid: [{low}, {high}]")]
    BandInverted { low: f64, high: f64 },
    #[error("unbalance undefined for non-positive magnitude {0}")]
    NonPositiveMagnitude(f64),
    #[error("no energized three-phase bus to evaluate unbalance on")]
    NoThreePhaseBus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Per-bus, per-phase constant-power loads in kW / kvar.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSet {
    kw: Vec<[f64; 3]>,
    kvar: Vec<[f64; 3]>,
    overridden: Vec<bool>,
}

impl LoadSet {
    /// The model's nominal loads.
    pub fn base(model: &FeederModel) -> Self {
        LoadSet {
            kw: model.buses().iter().map(|b| b.load_kw).collect(),
            kvar: model.buses().iter().map(|b| b.load_kvar).collect(),
            overridden: vec![false; model.buses().len()],
        }
    }

    pub fn zero(model: &FeederModel) -> Self {
        let n = model.buses().len();
        LoadSet {
            kw: vec![[0.0; 3]; n],
            kvar: vec![[0.0; 3]; n],
            overridden: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kw.is_empty()
    }

    pub fn kw(&self, bus: usize) -> [f64; 3] {
        self.kw[bus]
    }

    pub fn kvar(&self, bus: usize) -> [f64; 3] {
        self.kvar[bus]
    }

    pub fn is_overridden(&self, bus: usize) -> bool {
        self.overridden[bus]
    }

    pub fn set(&mut self, bus: usize, kw: [f64; 3], kvar: [f64; 3]) {
        self.kw[bus] = kw;
        self.kvar[bus] = kvar;
        self.overridden[bus] = true;
    }

    pub fn set_phase(&mut self, bus: usize, phase: Phase, kw: f64, kvar: f64) {
        self.kw[bus][phase.index()] = kw;
        self.kvar[bus][phase.index()] = kvar;
        self.overridden[bus] = true;
    }

    /// Every load multiplied by `k` (overrides are kept as marked).
    pub fn scaled(&self, k: f64) -> Self {
        LoadSet {
            kw: self.kw.iter().map(|p| p.map(|v| v * k)).collect(),
            kvar: self.kvar.iter().map(|p| p.map(|v| v * k)).collect(),
            overridden: self.overridden.clone(),
        }
    }

    pub fn total_kw(&self) -> f64 {
        self.kw.iter().flatten().sum()
    }
}

/// Voltages of one bus. Absent or unfed phases are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusVoltage {
    pub id: String,
    pub phases: PhaseSet,
    pub energized: bool,
    pub v: [Complex64; 3],
}

impl BusVoltage {
    pub fn magnitude(&self, p: Phase) -> f64 {
        self.v[p.index()].norm()
    }

    pub fn magnitudes(&self) -> [f64; 3] {
        self.v.map(|v| v.norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    pub buses: Vec<BusVoltage>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Complex power delivered by the source per phase, per unit.
    pub source_power: [Complex64; 3],
    /// Branch currents in the from -> to direction, per unit.
    pub branch_currents: Vec<[Complex64; 3]>,
}

impl VoltageSolution {
    pub fn bus(&self, id: &str) -> Option<&BusVoltage> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Per-bus largest phase magnitude (zero when de-energized).
    pub fn bus_magnitudes(&self) -> Vec<f64> {
        self.buses
            .iter()
            .map(|b| b.magnitudes().into_iter().fold(0.0, f64::max))
            .collect()
    }

    /// Lowest magnitude over energized (bus, phase) points.
    pub fn min_magnitude(&self) -> Option<f64> {
        self.buses
            .iter()
            .flat_map(|b| b.phases.iter().map(move |p| b.magnitude(p)))
            .filter(|m| *m > 0.0)
            .min_by(f64::total_cmp)
    }
}

fn source_voltage() -> C3 {
    [
        Complex64::from_polar(1.0, 0.0),
        Complex64::from_polar(1.0, -2.0 * PI / 3.0),
        Complex64::from_polar(1.0, 2.0 * PI / 3.0),
    ]
}

fn mat_vec(m: &M3, v: &C3, phases: PhaseSet) -> C3 {
    let mut out = [ZERO; 3];
    for i in phases.iter() {
        for j in phases.iter() {
            out[i.index()] += m[i.index()][j.index()] * v[j.index()];
        }
    }
    out
}

struct Tree {
    /// Energized buses in BFS order from the source.
    order: Vec<usize>,
    /// (parent bus, branch) for every non-source energized bus.
    parent: Vec<Option<(usize, usize)>>,
    /// Active branches inside the energized set not used by the tree.
    chords: Vec<usize>,
    /// Phases actually fed along the tree.
    fed: Vec<PhaseSet>,
}

impl Tree {
    fn build(model: &FeederModel, view: &TopologyView) -> Tree {
        let n = model.buses().len();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut in_tree = vec![false; model.branches().len()];
        let mut order = Vec::new();
        let mut fed = vec![PhaseSet::empty(); n];
        let src = model.source();
        seen[src] = true;
        fed[src] = model.bus(src).phases;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, br) in model.adjacency(u) {
                if !view.is_active(br) || seen[v] {
                    continue;
                }
                seen[v] = true;
                in_tree[br] = true;
                parent[v] = Some((u, br));
                fed[v] = model.bus(v).phases.intersection(model.branches()[br].phases).intersection(fed[u]);
                queue.push_back(v);
            }
        }
        let chords = view
            .active_branches()
            .filter(|&br| !in_tree[br] && seen[model.branches()[br].from])
            .collect();
        Tree { order, parent, chords, fed }
    }
}

/// A chord whose compensation current is drawn out of `p` and injected into `q`.
struct Breakpoint {
    p: usize,
    q: usize,
    phases: PhaseSet,
    z: M3,
}

/// Dense complex LU with partial pivoting for the loop impedance matrix.
struct ComplexLu {
    n: usize,
    a: Vec<Complex64>,
    piv: Vec<usize>,
}

impl ComplexLu {
    fn factor(mut a: Vec<Complex64>, n: usize) -> Option<ComplexLu> {
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|r| (r, a[r * n + k].norm()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            if best <= scale * 1e-14 {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
            }
            let d = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                a[r * n + k] = f;
                for c in k + 1..n {
                    let t = a[k * n + c];
                    a[r * n + c] -= f * t;
                }
            }
        }
        Some(ComplexLu { n, a, piv })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.piv.iter().map(|&i| b[i]).collect();
        for r in 0..n {
            for c in 0..r {
                let t = x[c];
                x[r] -= self.a[r * n + c] * t;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let t = x[c];
                x[r] -= self.a[r * n + c] * t;
            }
            x[r] /= self.a[r * n + r];
        }
        x
    }
}

struct Sweep<'m> {
    model: &'m FeederModel,
    tree: Tree,
    z: Vec<M3>,
    breakpoints: Vec<Breakpoint>,
}

impl<'m> Sweep<'m> {
    /// Backward sweep from bus current draws, forward sweep from `v_src`.
    /// Returns (voltages, per-bus current of the branch feeding it).
    fn run(&self, draw: &[C3], v_src: &C3) -> (Vec<C3>, Vec<C3>) {
        let n = self.model.buses().len();
        let mut through = draw.to_vec();
        for &u in self.tree.order.iter().rev() {
            if let Some((p, _)) = self.tree.parent[u] {
                let iu = through[u];
                for k in 0..3 {
                    through[p][k] += iu[k];
                }
            }
        }
        let mut v = vec![[ZERO; 3]; n];
        let src = self.model.source();
        for p in self.tree.fed[src].iter() {
            v[src][p.index()] = v_src[p.index()];
        }
        for &u in &self.tree.order {
            if let Some((p, br)) = self.tree.parent[u] {
                let fed = self.tree.fed[u];
                let drop = mat_vec(&self.z[br], &through[u], fed);
                for ph in fed.iter() {
                    let k = ph.index();
                    v[u][k] = v[p][k] - drop[k];
                }
            }
        }
        (v, through)
    }

    fn add_compensation(&self, draw: &mut [C3], j: &[Complex64]) {
        let mut k = 0;
        for bp in &self.breakpoints {
            for ph in bp.phases.iter() {
                draw[bp.p][ph.index()] += j[k];
                draw[bp.q][ph.index()] -= j[k];
                k += 1;
            }
        }
    }

    /// Breakpoint KVL residual: V_p - V_q - Z_chord * J.
    fn residual(&self, v: &[C3], j: &[Complex64]) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(j.len());
        let mut k0 = 0;
        for bp in &self.breakpoints {
            let idx: Vec<Phase> = bp.phases.iter().collect();
            for pa in &idx {
                let mut zj = ZERO;
                for (b, pb) in idx.iter().enumerate() {
                    zj += bp.z[pa.index()][pb.index()] * j[k0 + b];
                }
                out.push(v[bp.p][pa.index()] - v[bp.q][pa.index()] - zj);
            }
            k0 += idx.len();
        }
        out
    }

    /// Loop impedance matrix by unit injections into the passive tree.
    fn loop_matrix(&self) -> Option<ComplexLu> {
        let m: usize = self.breakpoints.iter().map(|b| b.phases.len()).sum();
        if m == 0 {
            return None;
        }
        let n = self.model.buses().len();
        let zero_src = [ZERO; 3];
        let mut mat = vec![ZERO; m * m];
        for col in 0..m {
            let mut unit = vec![ZERO; m];
            unit[col] = Complex64::new(1.0, 0.0);
            let mut draw = vec![[ZERO; 3]; n];
            self.add_compensation(&mut draw, &unit);
            let (v, _) = self.run(&draw, &zero_src);
            // residual = -(Z_tree + Z_chord) * unit
            let r = self.residual(&v, &unit);
            for row in 0..m {
                mat[row * m + col] = -r[row];
            }
        }
        ComplexLu::factor(mat, m)
    }
}

/// Solves the network for the given loads.
///
/// Non-convergence is not an error: the solution comes back with
/// `converged == false` and the caller decides what to do with it.
pub fn solve(
    model: &FeederModel,
    view: &TopologyView,
    loads: &LoadSet,
    opts: &SolverOptions,
) -> Result<VoltageSolution, SolveError> {
    let n = model.buses().len();
    if loads.len() != n {
        return Err(SolveError::LoadSetMismatch {
            expected: n,
            got: loads.len(),
        });
    }
    for (i, bus) in model.buses().iter().enumerate() {
        if loads.is_overridden(i) && !view.is_energized(i) {
            return Err(SolveError::OverrideOnDeenergized(bus.id.clone()));
        }
        for p in Phase::ALL {
            let k = p.index();
            if (loads.kw[i][k] != 0.0 || loads.kvar[i][k] != 0.0) && !bus.phases.contains(p) {
                return Err(SolveError::LoadOnAbsentPhase {
                    bus: bus.id.clone(),
                    phase: p,
                });
            }
        }
    }

    let z_base = model.base_impedance_ohm();
    let s_base = model.base_va_per_phase();
    let z: Vec<M3> = model
        .branches()
        .iter()
        .map(|b| b.impedance_ohm().map(|row| row.map(|x| x / z_base)))
        .collect();
    let s: Vec<C3> = (0..n)
        .map(|i| {
            let mut out = [ZERO; 3];
            for k in 0..3 {
                out[k] = Complex64::new(loads.kw[i][k], loads.kvar[i][k]) * (1e3 / s_base);
            }
            out
        })
        .collect();

    let tree = Tree::build(model, view);
    let breakpoints = tree
        .chords
        .iter()
        .filter_map(|&br| {
            let b = &model.branches()[br];
            let phases = b.phases.intersection(tree.fed[b.from]).intersection(tree.fed[b.to]);
            (!phases.is_empty()).then(|| Breakpoint {
                p: b.from,
                q: b.to,
                phases,
                z: z[br],
            })
        })
        .collect::<Vec<_>>();
    let chord_of_bp: Vec<usize> = tree
        .chords
        .iter()
        .copied()
        .filter(|&br| {
            let b = &model.branches()[br];
            !b.phases.intersection(tree.fed[b.from]).intersection(tree.fed[b.to]).is_empty()
        })
        .collect();
    let sweep = Sweep {
        model,
        tree,
        z,
        breakpoints,
    };
    let lu = sweep.loop_matrix();
    let m: usize = sweep.breakpoints.iter().map(|b| b.phases.len()).sum();
    if m > 0 && lu.is_none() {
        return Err(SolveError::SingularLoop);
    }

    let v_src = source_voltage();
    let mut v = vec![[ZERO; 3]; n];
    for &u in &sweep.tree.order {
        for p in sweep.tree.fed[u].iter() {
            v[u][p.index()] = v_src[p.index()];
        }
    }
    let mut j = vec![ZERO; m];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;

    let load_draw = |v: &[C3]| -> Vec<C3> {
        let mut draw = vec![[ZERO; 3]; n];
        for &u in &sweep.tree.order {
            for p in sweep.tree.fed[u].iter() {
                let k = p.index();
                if s[u][k] != ZERO && v[u][k] != ZERO {
                    draw[u][k] = (s[u][k] / v[u][k]).conj();
                }
            }
        }
        draw
    };

    for it in 1..=opts.max_iterations {
        iterations = it;
        let mut draw = load_draw(&v);
        sweep.add_compensation(&mut draw, &j);
        let (v_new, _) = sweep.run(&draw, &v_src);

        let mut mismatch: f64 = 0.0;
        for &u in &sweep.tree.order {
            for p in sweep.tree.fed[u].iter() {
                let k = p.index();
                if s[u][k] != ZERO && v[u][k] != ZERO {
                    // Power actually drawn by the current used in this sweep.
                    let i_used = (s[u][k] / v[u][k]).conj();
                    mismatch = mismatch.max((v_new[u][k] * i_used.conj() - s[u][k]).norm());
                }
            }
        }
        if let Some(lu) = &lu {
            let r = sweep.residual(&v_new, &j);
            mismatch = r.iter().map(|x| x.norm()).fold(mismatch, f64::max);
            let dj = lu.solve(&r);
            for (a, b) in j.iter_mut().zip(dj) {
                *a += b;
            }
        }
        v = v_new;
        max_mismatch = mismatch;
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= opts.tolerance {
            converged = true;
            break;
        }
    }

    // Final consistent currents for reporting.
    let mut draw = load_draw(&v);
    sweep.add_compensation(&mut draw, &j);
    let (_, through) = sweep.run(&draw, &v_src);
    let mut branch_currents = vec![[ZERO; 3]; model.branches().len()];
    for &u in &sweep.tree.order {
        if let Some((p, br)) = sweep.tree.parent[u] {
            let sign = if model.branches()[br].from == p { 1.0 } else { -1.0 };
            branch_currents[br] = through[u].map(|x| x * sign);
        }
    }
    let mut k0 = 0;
    for (bp, &br) in sweep.breakpoints.iter().zip(&chord_of_bp) {
        for (a, ph) in bp.phases.iter().enumerate() {
            branch_currents[br][ph.index()] = j[k0 + a];
        }
        k0 += bp.phases.len();
    }
    let src = model.source();
    let mut out_of_src = draw[src];
    for &(_, br) in model.adjacency(src) {
        if sweep.tree.parent.iter().any(|p| *p == Some((src, br))) {
            let child = model.branches()[br].other(src);
            for k in 0..3 {
                out_of_src[k] += through[child][k];
            }
        }
    }
    let mut source_power = [ZERO; 3];
    for k in 0..3 {
        source_power[k] = v[src][k] * out_of_src[k].conj();
    }

    let buses = model
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| BusVoltage {
            id: b.id.clone(),
            phases: b.phases,
            energized: view.is_energized(i),
            v: v[i],
        })
        .collect();

    Ok(VoltageSolution {
        buses,
        converged,
        iterations,
        max_mismatch,
        source_power,
        branch_currents,
    })
}

/// Acceptable service-voltage band in per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageBand {
    pub low: f64,
    pub high: f64,
}

impl VoltageBand {
    pub fn new(low: f64, high: f64) -> Result<Self, MetricError> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(MetricError::BandInverted { low, high });
        }
        Ok(VoltageBand { low, high })
    }

    pub fn contains(&self, pu: f64) -> bool {
        pu >= self.low && pu <= self.high
    }
}

impl Default for VoltageBand {
    /// ANSI C84.1 Range A.
    fn default() -> Self {
        VoltageBand { low: 0.95, high: 1.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationPoint {
    pub bus: String,
    pub phase: Phase,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub count: usize,
    pub points: Vec<ViolationPoint>,
    /// Points with zero voltage; not counted as violations.
    pub outages: Vec<(String, Phase)>,
    pub band: VoltageBand,
}

pub fn count_violations(
    solution: &VoltageSolution,
    band: VoltageBand,
) -> Result<ViolationReport, MetricError> {
    let band = VoltageBand::new(band.low, band.high)?;
    let mut points = Vec::new();
    let mut outages = Vec::new();
    for b in &solution.buses {
        for p in b.phases.iter() {
            let m = b.magnitude(p);
            if m == 0.0 {
                outages.push((b.id.clone(), p));
            } else if !band.contains(m) {
                points.push(ViolationPoint {
                    bus: b.id.clone(),
                    phase: p,
                    magnitude: m,
                });
            }
        }
    }
    Ok(ViolationReport {
        count: points.len(),
        points,
        outages,
        band,
    })
}

/// Percent unbalance: largest phase deviation from the three-phase mean
/// magnitude, relative to that mean.
pub fn unbalance_at(v: [f64; 3]) -> Result<f64, MetricError> {
    if let Some(bad) = v.iter().find(|m| !(**m > 0.0)) {
        return Err(MetricError::NonPositiveMagnitude(*bad));
    }
    let avg = (v[0] + v[1] + v[2]) / 3.0;
    let dev = v.iter().map(|m| (m - avg).abs()).fold(0.0, f64::max);
    Ok(dev / avg * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalanceReport {
    pub per_bus: Vec<(String, f64)>,
    pub max_pct: f64,
    pub max_bus: String,
}

/// Unbalance over every energized three-phase bus with all phases live.
pub fn max_unbalance(solution: &VoltageSolution) -> Result<UnbalanceReport, MetricError> {
    let per_bus: Vec<(String, f64)> = solution
        .buses
        .iter()
        .filter(|b| b.energized && b.phases.len() == 3)
        .filter_map(|b| unbalance_at(b.magnitudes()).ok().map(|u| (b.id.clone(), u)))
        .collect();
    let (max_bus, max_pct) = per_bus
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or(MetricError::NoThreePhaseBus)?;
    Ok(UnbalanceReport {
        per_bus,
        max_pct,
        max_bus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{apply_switch_config, load_feeder};

    #[test]
    fn unbalance_examples() {
        assert_eq!(unbalance_at([1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(unbalance_at([0.98, 0.98, 0.98]).unwrap(), 0.0);
        // mean 0.98, deviation 0.04
        let u = unbalance_at([1.0, 1.0, 0.94]).unwrap();
        assert!((u - 0.04 / 0.98 * 100.0).abs() < 1e-12);
        assert!((u - 4.081632653).abs() < 1e-8);
        assert!(unbalance_at([1.0, 0.0, 1.0]).is_err());
        assert!(unbalance_at([1.0, -0.5, 1.0]).is_err());
    }

    fn flat(values: &[(&str, &str, [f64; 3])]) -> VoltageSolution {
        VoltageSolution {
            buses: values
                .iter()
                .map(|(id, ph, m)| BusVoltage {
                    id: id.to_string(),
                    phases: PhaseSet::parse(ph).unwrap(),
                    energized: true,
                    v: m.map(|x| Complex64::new(x, 0.0)),
                })
                .collect(),
            converged: true,
            iterations: 1,
            max_mismatch: 0.0,
            source_power: [ZERO; 3],
            branch_currents: vec![],
        }
    }

    #[test]
    fn violation_counting() {
        let band = VoltageBand::default();
        let s = flat(&[("X", "ABC", [1.0; 3]), ("Y", "A", [1.0, 0.0, 0.0])]);
        assert_eq!(count_violations(&s, band).unwrap().count, 0);

        let s = flat(&[("X", "ABC", [1.0, 1.0, 0.94]), ("Y", "A", [1.0, 0.0, 0.0])]);
        let r = count_violations(&s, band).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.points[0].bus, "X");
        assert_eq!(r.points[0].phase, Phase::C);

        let s = flat(&[("X", "ABC", [0.0, 0.0, 0.0])]);
        let r = count_violations(&s, band).unwrap();
        assert_eq!(r.count, 0);
        assert_eq!(r.outages.len(), 3);

        assert!(count_violations(&s, VoltageBand { low: 1.05, high: 0.95 }).is_err());
        assert!(VoltageBand::new(1.0, 1.0).is_err());
    }

    #[test]
    fn max_unbalance_picks_worst_bus() {
        let s = flat(&[("X", "ABC", [1.0; 3]), ("Y", "ABC", [1.0, 1.0, 0.94]), ("Z", "A", [0.5, 0.0, 0.0])]);
        let r = max_unbalance(&s).unwrap();
        assert_eq!(r.max_bus, "Y");
        assert!((r.max_pct - 4.0816326530).abs() < 1e-8);
        assert_eq!(r.per_bus.len(), 2);

        let s = flat(&[("Z", "A", [0.5, 0.0, 0.0])]);
        assert_eq!(max_unbalance(&s), Err(MetricError::NoThreePhaseBus));
    }

    #[test]
    fn zero_load_is_flat_in_one_iteration() {
        let m = load_feeder(
            r#"{"base_kv_ln":2.4,"base_kva":1000,"source":"S",
            "buses":[{"id":"S","phases":"ABC"},{"id":"T","phases":"ABC"},{"id":"U","phases":"B"}],
            "branches":[
              {"from":"S","to":"T","r_ohm":[[0.3,0.1,0.1],[0.1,0.3,0.1],[0.1,0.1,0.3]],"x_ohm":[[0.6,0.2,0.2],[0.2,0.6,0.2],[0.2,0.2,0.6]]},
              {"from":"T","to":"U","r_ohm":[[0,0,0],[0,0.5,0],[0,0,0]],"x_ohm":[[0,0,0],[0,0.5,0],[0,0,0]]}
            ]}"#,
        )
        .unwrap();
        let view = apply_switch_config(&m, &m.normal_config()).unwrap();
        let sol = solve(&m, &view, &LoadSet::zero(&m), &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        for b in &sol.buses {
            for p in b.phases.iter() {
                assert!((b.magnitude(p) - 1.0).abs() < 1e-15);
            }
        }
        // source angles exact
        let src = &sol.buses[0];
        assert_eq!(src.v, source_voltage());
    }

    #[test]
    fn override_on_dead_bus_rejected() {
        let m = load_feeder(
            r#"{"base_kv_ln":2.4,"base_kva":1000,"source":"S",
            "buses":[{"id":"S","phases":"ABC"},{"id":"T","phases":"ABC","load_kw":[10,10,10]}],
            "branches":[{"from":"S","to":"T","switch":"S1","normal":"open"}]}"#,
        )
        .unwrap();
        let view = apply_switch_config(&m, &m.normal_config()).unwrap();
        let mut loads = LoadSet::base(&m);
        // base loads on a dead bus are fine; it is simply unserved
        let sol = solve(&m, &view, &loads, &SolverOptions::default()).unwrap();
        assert_eq!(sol.buses[1].magnitudes(), [0.0; 3]);
        loads.set(1, [5.0; 3], [0.0; 3]);
        assert_eq!(
            solve(&m, &view, &loads, &SolverOptions::default()),
            Err(SolveError::OverrideOnDeenergized("T".into()))
        );
    }

    #[test]
    fn lu_solves_small_system() {
        let c = |r: f64, i: f64| Complex64::new(r, i);
        let a = vec![c(2.0, 1.0), c(1.0, 0.0), c(0.0, 1.0), c(3.0, -1.0)];
        let lu = ComplexLu::factor(a.clone(), 2).unwrap();
        let b = vec![c(1.0, 0.0), c(0.0, 2.0)];
        let x = lu.solve(&b);
        let r0 = a[0] * x[0] + a[1] * x[1] - b[0];
        let r1 = a[2] * x[0] + a[3] * x[1] - b[1];
        assert!(r0.norm() < 1e-14 && r1.norm() < 1e-14);
        assert!(ComplexLu::factor(vec![ZERO; 4], 2).is_none());
    }
}
