//! Independent dense nodal solve used as a reference for the sweep solver.
//!
//! Builds the full bus admittance matrix over every (bus, phase) point and
//! iterates the constant-power load currents to a fixed point. Closed
//! switches merge their endpoints; open ones drop out.

use modgrid_core::feeder::{FeederModel, Phase, SwitchConfig};
use modgrid_core::LoadSet;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn source_voltage() -> [Complex64; 3] {
    let a = 2.0 * std::f64::consts::PI / 3.0;
    [
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -a),
        Complex64::from_polar(1.0, a),
    ]
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

/// Per-bus phase voltages in per unit; absent phases are zero. Assumes every
/// bus is reachable from the source.
pub fn nodal_solve(model: &FeederModel, config: &SwitchConfig, loads: &LoadSet) -> Vec<[Complex64; 3]> {
    let n = model.buses().len();
    let mut parent: Vec<usize> = (0..n).collect();
    for br in model.branches() {
        if let Some(name) = br.switch_name() {
            if config.get(name).is_some_and(|s| s.is_closed()) {
                let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let root: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let src = root[model.source()];

    // Unknowns: (representative bus, phase) for every non-source point.
    let mut slot = vec![[None; 3]; n];
    let mut points = Vec::new();
    for i in 0..n {
        if root[i] != i {
            continue;
        }
        for p in model.bus(i).phases.iter() {
            let k = p.index();
            slot[i][k] = Some(points.len());
            points.push((i, k));
        }
    }
    let m = points.len();
    let mut y = DMatrix::<Complex64>::zeros(m, m);
    let zb = model.base_impedance_ohm();
    for br in model.branches() {
        if br.is_switch() {
            continue;
        }
        let ph: Vec<usize> = br.phases.iter().map(Phase::index).collect();
        let z = br.impedance_ohm();
        let zs = DMatrix::from_fn(ph.len(), ph.len(), |r, c| z[ph[r]][ph[c]] / zb);
        let ys = zs.try_inverse().expect("branch impedance invertible");
        let (f, t) = (root[br.from], root[br.to]);
        for (r, &pr) in ph.iter().enumerate() {
            for (c, &pc) in ph.iter().enumerate() {
                let v = ys[(r, c)];
                let (fr, fc) = (slot[f][pr].unwrap(), slot[f][pc].unwrap());
                let (tr, tc) = (slot[t][pr].unwrap(), slot[t][pc].unwrap());
                y[(fr, fc)] += v;
                y[(tr, tc)] += v;
                y[(fr, tc)] -= v;
                y[(tr, fc)] -= v;
            }
        }
    }

    let s_base = model.base_va_per_phase();
    let mut s = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        for k in 0..3 {
            let (p, q) = (loads.kw(i)[k], loads.kvar(i)[k]);
            if let Some(j) = slot[root[i]][k] {
                s[j] += Complex64::new(p, q) * (1e3 / s_base);
            }
        }
    }

    let unknown: Vec<usize> = (0..m).filter(|&j| points[j].0 != src).collect();
    let fixed: Vec<usize> = (0..m).filter(|&j| points[j].0 == src).collect();
    let vs = source_voltage();
    let v_fixed = DVector::from_iterator(fixed.len(), fixed.iter().map(|&j| vs[points[j].1]));
    let y_uu = DMatrix::from_fn(unknown.len(), unknown.len(), |r, c| y[(unknown[r], unknown[c])]);
    let y_uf = DMatrix::from_fn(unknown.len(), fixed.len(), |r, c| y[(unknown[r], fixed[c])]);
    let lu = y_uu.lu();
    let rhs0 = -(&y_uf * &v_fixed);

    let mut v = DVector::from_iterator(unknown.len(), unknown.iter().map(|&j| vs[points[j].1]));
    for _ in 0..500 {
        let inj = DVector::from_iterator(
            unknown.len(),
            unknown.iter().enumerate().map(|(r, &j)| -(s[j] / v[r]).conj()),
        );
        let next = lu.solve(&(&rhs0 + inj)).expect("nodal matrix nonsingular");
        let delta = (&next - &v).iter().map(|d| d.norm()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-14 {
            break;
        }
    }

    let mut out = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for i in 0..n {
        for k in 0..3 {
            let r = root[i];
            if let Some(j) = slot[r][k] {
                out[i][k] = if r == src {
                    vs[k]
                } else {
                    v[unknown.iter().position(|&u| u == j).unwrap()]
                };
            }
        }
    }
    out
}
