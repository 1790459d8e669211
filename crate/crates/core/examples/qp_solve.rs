//! Box- and row-constrained QP solved twice: cold, then warm-started from
//! the previous optimum.

use kst::qp::{kkt_residual, QpSettings, QpSolver, QuadraticProgram};
use nalgebra::{dmatrix, dvector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // min 1/2 x'Hx + g'x  s.t.  -1 <= x <= 1,  x0 + x1 + x2 <= 0.5,  x0 - x2 <= 0.2
    let qp = QuadraticProgram {
        h: dmatrix![4.0, 1.0, 0.0; 1.0, 3.0, 0.5; 0.0, 0.5, 2.0],
        g: dvector![-3.0, -2.0, -1.0],
        lb: dvector![-1.0, -1.0, -1.0],
        ub: dvector![1.0, 1.0, 1.0],
        c: dmatrix![1.0, 1.0, 1.0; 1.0, 0.0, -1.0],
        d: dvector![0.5, 0.2],
    };
    qp.validate()?;

    let mut solver = QpSolver::new(QpSettings::default());
    let cold = solver.solve(&qp, None)?;
    println!("status      {:?} after {} iterations", cold.status, cold.iterations);
    println!("x           {:.6?}", cold.x.as_slice());
    println!("objective   {:.9}", qp.objective(&cold.x));
    println!("active set  {:?}", cold.active_set);
    println!("row duals   {:.6?}", cold.multipliers.rows.as_slice());
    println!("kkt         {:.2e}", kkt_residual(&qp, &cold.x, &cold.multipliers));

    let warm = solver.solve(&qp, Some(&cold.x))?;
    println!("warm start  {} iterations, same x: {}", warm.iterations, (warm.x - cold.x).amax() < 1e-12);
    Ok(())
}
