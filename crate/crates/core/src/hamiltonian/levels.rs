use num_complex::Complex64;

use super::{build_total, DipoleGeometry, HamiltonianError, JointState, PhysicalConstants, SystemParams};
use super::CompositeHamiltonian;
use crate::spin::Eigh;
use crate::sweep::{check_strictly_monotone, Series, SweepResult};

const OVERLAP_FLOOR: f64 = 0.5;
const LABEL_WEIGHT_FLOOR: f64 = 0.7;

/// Eigenvalues versus field, each column continued adiabatically by maximum
/// eigenvector overlap between neighbouring grid points.
///
/// Column labels name the dominant product state at the last grid point.
pub fn level_diagram(
    params: &SystemParams,
    geometry: Option<&DipoleGeometry>,
    b_grid: &[f64],
    constants: &PhysicalConstants,
) -> Result<SweepResult, HamiltonianError> {
    check_strictly_monotone(b_grid).map_err(HamiltonianError::BadGrid)?;
    let n = params.dim();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(b_grid.len()); n];
    let mut tracked: Vec<Vec<Complex64>> = Vec::new();
    let mut tracked_values: Vec<f64> = Vec::new();

    for &b in b_grid {
        let h = build_total(&params.with_field(b), geometry, constants)?;
        let eig = h.eigh()?;
        let assignment = if tracked.is_empty() {
            (0..n).collect()
        } else {
            assign_by_overlap(&tracked, &tracked_values, &eig, b)?
        };
        tracked = assignment.iter().map(|&j| eig.vector(j)).collect();
        tracked_values = assignment.iter().map(|&j| eig.values[j]).collect();
        for (col, &j) in assignment.iter().enumerate() {
            columns[col].push(eig.values[j]);
        }
    }

    let basis = JointState::basis(params.include_nucleus);
    let mut labels: Vec<String> = tracked
        .iter()
        .map(|v| {
            let k = dominant_component(v).0;
            format!("E{}", basis[k])
        })
        .collect();
    dedupe_labels(&mut labels);

    let series = labels
        .into_iter()
        .zip(columns)
        .map(|(label, values)| Series {
            label: format!("{label} [MHz]"),
            values,
        })
        .collect();
    SweepResult::with_series("B [G]", b_grid.to_vec(), series).map_err(HamiltonianError::BadGrid)
}

fn clusters(values: &[f64]) -> Vec<usize> {
    // cluster id per index; values are ascending
    let mut ids = Vec::with_capacity(values.len());
    let mut id = 0;
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            let tol = 1e-7 + 1e-12 * v.abs();
            if (v - values[k - 1]).abs() > tol {
                id += 1;
            }
        }
        ids.push(id);
    }
    ids
}

fn assign_by_overlap(
    prev: &[Vec<Complex64>],
    prev_values: &[f64],
    eig: &Eigh,
    field: f64,
) -> Result<Vec<usize>, HamiltonianError> {
    let n = prev.len();
    let raw: Vec<Vec<f64>> = prev
        .iter()
        .map(|p| {
            (0..n)
                .map(|j| {
                    let v = eig.vector(j);
                    p.iter().zip(&v).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr()
                })
                .collect()
        })
        .collect();

    // Degenerate clusters carry an arbitrary basis, so score a pair by the
    // weight inside the partner's whole cluster.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| prev_values[a].total_cmp(&prev_values[b]));
    let mut prev_cluster = vec![0; n];
    let sorted_vals: Vec<f64> = order.iter().map(|&i| prev_values[i]).collect();
    for (pos, id) in clusters(&sorted_vals).into_iter().enumerate() {
        prev_cluster[order[pos]] = id;
    }
    let new_cluster = clusters(&eig.values);

    let mut score = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let into_new: f64 = (0..n)
                .filter(|&k| new_cluster[k] == new_cluster[j])
                .map(|k| raw[i][k])
                .sum();
            let from_prev: f64 = (0..n)
                .filter(|&k| prev_cluster[k] == prev_cluster[i])
                .map(|k| raw[k][j])
                .sum();
            score[i][j] = into_new.max(from_prev);
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    pairs.sort_by(|&(a, b), &(c, d)| {
        score[c][d]
            .total_cmp(&score[a][b])
            .then(raw[c][d].total_cmp(&raw[a][b]))
            .then((a, b).cmp(&(c, d)))
    });
    let mut assigned = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (i, j) in pairs {
        if assigned[i] == usize::MAX && !used[j] {
            if score[i][j] < OVERLAP_FLOOR {
                return Err(HamiltonianError::TrackingLost {
                    field,
                    overlap: score[i][j],
                });
            }
            assigned[i] = j;
            used[j] = true;
        }
    }
    Ok(assigned)
}

fn dominant_component(v: &[Complex64]) -> (usize, f64) {
    v.iter()
        .map(|z| z.norm_sqr())
        .enumerate()
        .fold((0, -1.0), |best, (k, w)| if w > best.1 { (k, w) } else { best })
}

fn dedupe_labels(labels: &mut [String]) {
    for i in 0..labels.len() {
        let dupes: Vec<usize> = (i + 1..labels.len()).filter(|&j| labels[j] == labels[i]).collect();
        if !dupes.is_empty() {
            let base = labels[i].clone();
            labels[i] = format!("{base}#1");
            for (k, j) in dupes.into_iter().enumerate() {
                labels[j] = format!("{base}#{}", k + 2);
            }
        }
    }
}

/// Eigenvector whose dominant product-basis component is `label`.
fn resolve(h: &CompositeHamiltonian, eig: &Eigh, label: &JointState) -> Result<usize, HamiltonianError> {
    let idx = h.index_of(label)?;
    let (best, weight) = (0..eig.dim())
        .map(|k| (k, eig.vectors[(idx, k)].norm_sqr()))
        .fold((0, -1.0), |acc, (k, w)| if w > acc.1 { (k, w) } else { acc });
    if weight < LABEL_WEIGHT_FLOOR {
        return Err(HamiltonianError::AmbiguousLabel {
            label: *label,
            weight,
        });
    }
    Ok(best)
}

/// E(to) − E(from) in MHz, with states matched by dominant basis component.
pub fn transition_frequency(
    h: &CompositeHamiltonian,
    from: &JointState,
    to: &JointState,
) -> Result<f64, HamiltonianError> {
    let eig = h.eigh()?;
    let i = resolve(h, &eig, from)?;
    let j = resolve(h, &eig, to)?;
    Ok(eig.values[j] - eig.values[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::dipolar_prefactor;
    use crate::sweep::arange_inclusive;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn uncoupled_transition_at_100_gauss() {
        let p = SystemParams::default().with_field(100.0);
        let h = build_total(&p, None, &consts()).unwrap();
        let f = transition_frequency(&h, &JointState::new(0, 1), &JointState::new(-1, 1)).unwrap();
        assert!((f - 2600.1).abs() < 0.05, "{f}");
    }

    #[test]
    fn zero_field_nv_transitions_are_d() {
        let h = build_total(&SystemParams::default(), None, &consts()).unwrap();
        for m in [1, -1] {
            let f = transition_frequency(&h, &JointState::new(0, 1), &JointState::new(m, 1)).unwrap();
            assert!((f - 2880.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zz_coupling_shifts_lines_by_minus_c_m_n() {
        let p = SystemParams::default().with_field(100.0);
        let g = DipoleGeometry::new(5.0, 0.0, 0.0);
        let c = -2.0 * dipolar_prefactor(5.0, &p, &consts()).unwrap();
        let bare = build_total(&p, None, &consts()).unwrap();
        let coupled = build_total(&p, Some(&g), &consts()).unwrap();
        for two_mn in [1i8, -1] {
            let from = JointState::new(0, two_mn);
            let to = JointState::new(-1, two_mn);
            let shift = transition_frequency(&coupled, &from, &to).unwrap()
                - transition_frequency(&bare, &from, &to).unwrap();
            let expected = -c * two_mn as f64 / 2.0;
            // non-secular terms enter at second order, ~d₀²/(2600 MHz)
            assert!((shift - expected).abs() < 1e-3 * c.abs(), "{shift} vs {expected}");
        }
    }

    #[test]
    fn ambiguous_label_is_an_error() {
        // Exactly at the matching field the (0,+1/2) and (-1,-1/2) states mix 50/50.
        let p = SystemParams::default().with_field(2880.0 / (4.0 * consts().bohr_mhz_per_gauss));
        let g = DipoleGeometry::new(2.0, 54.7356, 0.0);
        let h = build_total(&p, Some(&g), &consts()).unwrap();
        let err = transition_frequency(&h, &JointState::new(0, 1), &JointState::new(-1, 1));
        assert!(matches!(err, Err(HamiltonianError::AmbiguousLabel { .. })), "{err:?}");
    }

    #[test]
    fn unknown_label_is_an_error() {
        let h = build_total(&SystemParams::default(), None, &consts()).unwrap();
        let err = transition_frequency(&h, &JointState::with_nucleus(0, 1, 0), &JointState::new(-1, 1));
        assert!(matches!(err, Err(HamiltonianError::UnknownLabel(_))));
    }

    #[test]
    fn level_diagram_slopes_and_zero_field() {
        let p = SystemParams::default();
        let grid = arange_inclusive(0.0, 300.0, 5.0);
        let sweep = level_diagram(&p, None, &grid, &consts()).unwrap();
        assert_eq!(sweep.series.len(), 6);
        let find = |name: &str| {
            sweep
                .series
                .iter()
                .find(|s| s.label.starts_with(name))
                .unwrap_or_else(|| panic!("{name} missing: {:?}", sweep.series.iter().map(|s| &s.label).collect::<Vec<_>>()))
        };
        let gmu = 2.0 * consts().bohr_mhz_per_gauss;
        let up = find("E(+0,+1/2)");
        let down = find("E(+0,-1/2)");
        let last = grid.len() - 1;
        let slope_up = (up.values[last] - up.values[0]) / 300.0;
        let slope_down = (down.values[last] - down.values[0]) / 300.0;
        assert!((slope_up - 0.5 * gmu).abs() < 1e-9);
        assert!((slope_down + 0.5 * gmu).abs() < 1e-9);

        let mut at_zero: Vec<f64> = sweep.series.iter().map(|s| s.values[0]).collect();
        at_zero.sort_by(f64::total_cmp);
        assert!(at_zero[0].abs() < 1e-9 && at_zero[1].abs() < 1e-9);
        for v in &at_zero[2..] {
            assert!((v - 2880.0).abs() < 1e-9);
        }
    }

    #[test]
    fn level_diagram_tracks_through_anticrossing() {
        let p = SystemParams::default();
        let g = DipoleGeometry::new(2.3, 54.7356, 0.0);
        let grid = arange_inclusive(500.0, 530.0, 0.05);
        let sweep = level_diagram(&p, Some(&g), &grid, &consts()).unwrap();
        assert_eq!(sweep.series.len(), 6);
        for s in &sweep.series {
            assert_eq!(s.values.len(), grid.len());
        }
    }

    #[test]
    fn spread_overlap_below_floor_fails() {
        // Each new eigenvector has weight 1/3 on every previous one.
        use crate::spin::{eigh, ComplexMatrix};
        let n = 3;
        let w = std::f64::consts::TAU / n as f64;
        let mut f = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                f[(i, j)] = Complex64::from_polar(1.0 / (n as f64).sqrt(), w * (i * j) as f64);
            }
        }
        let h = &(&f * &ComplexMatrix::from_diagonal(&[1.0, 2.0, 3.0])) * &f.adjoint();
        let eig = eigh(&h).unwrap();
        let prev: Vec<Vec<Complex64>> = (0..n)
            .map(|k| (0..n).map(|i| Complex64::new(if i == k { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        let err = assign_by_overlap(&prev, &[1.0, 2.0, 3.0], &eig, 42.0);
        assert!(matches!(err, Err(HamiltonianError::TrackingLost { .. })), "{err:?}");
    }

    #[test]
    fn non_monotone_grid_is_rejected() {
        let err = level_diagram(&SystemParams::default(), None, &[0.0, 2.0, 1.0], &consts());
        assert!(matches!(err, Err(HamiltonianError::BadGrid(_))));
    }

    #[test]
    fn full_space_diagram_has_eighteen_columns() {
        let p = SystemParams {
            include_nucleus: true,
            ..SystemParams::default()
        };
        let grid = arange_inclusive(0.0, 1000.0, 1.0);
        let sweep = level_diagram(&p, None, &grid, &consts()).unwrap();
        assert_eq!(sweep.series.len(), 18);
    }
}
