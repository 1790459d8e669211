//! Active-set enumeration oracle for small QPs and a random problem generator.

use kst::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Inequality rows `a' x <= b` collected from boxes and general rows.
fn rows_of(qp: &QuadraticProgram) -> Vec<(DVector<f64>, f64, Option<usize>)> {
    let n = qp.n();
    let mut rows = Vec::new();
    for i in 0..n {
        if qp.ub[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            rows.push((a, qp.ub[i], Some(i)));
        }
        if qp.lb[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            rows.push((a, -qp.lb[i], Some(i)));
        }
    }
    for k in 0..qp.m() {
        rows.push((qp.c.row(k).transpose(), qp.d[k], None));
    }
    rows
}

/// Minimum objective over all active sets whose equality-constrained minimizer is feasible.
pub fn enumeration_oracle(qp: &QuadraticProgram) -> Option<(f64, DVector<f64>)> {
    let n = qp.n();
    let rows = rows_of(qp);
    let r = rows.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << r) {
        let set: Vec<usize> = (0..r).filter(|j| mask & (1 << j) != 0).collect();
        if set.len() > n {
            continue;
        }
        // lower and upper of the same variable together only when they coincide, skip
        let vars: Vec<usize> = set.iter().filter_map(|&j| rows[j].2).collect();
        let mut dedup = vars.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != vars.len() {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for i in 0..n {
            rhs[i] = -qp.g[i];
        }
        for (c, &j) in set.iter().enumerate() {
            for i in 0..n {
                kkt[(n + c, i)] = rows[j].0[i];
                kkt[(i, n + c)] = rows[j].0[i];
            }
            rhs[n + c] = rows[j].1;
        }
        let lu = kkt.lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        // reject solutions of singular systems that lu did not catch
        if (&qp.h * &x - (-&qp.g) + {
            let mut acc = DVector::zeros(n);
            for (c, &j) in set.iter().enumerate() {
                acc += &rows[j].0 * sol[n + c];
            }
            acc
        })
        .amax()
            > 1e-7
        {
            continue;
        }
        let feasible = rows.iter().all(|(a, b, _)| a.dot(&x) <= b + 1e-9 * (1.0 + b.abs()));
        if !feasible {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best
}

pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, boxed: usize) -> QuadraticProgram {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let mut qp = QuadraticProgram::unconstrained(h, g);
    for i in 0..boxed.min(n) {
        let lo = rng.gen_range(-1.5..0.5);
        qp.lb[i] = lo;
        qp.ub[i] = lo + rng.gen_range(0.1..2.0);
    }
    qp.c = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    qp.d = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..1.5));
    qp
}
