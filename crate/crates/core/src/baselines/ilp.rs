//! Integer-programming model of the depot-anchored GTSP, in textual LP
//! format, plus a row-by-row checker for candidate assignments.
//!
//! Variables: binary arc indicators `x_i_j` (i != j), binary node selectors
//! `y_i`, and continuous MTZ position variables `u_i` (1-based position when
//! node i is visited, 0 otherwise; the depot holds position 1).
//!
//! Rows:
//!   select_p:  sum_{i in V_p} y_i = 1                    (one node per cluster)
//!   indeg_i:   sum_{j != i} x_j_i - y_i = 0              (arc in iff selected)
//!   outdeg_i:  sum_{j != i} x_i_j - y_i = 0              (arc out iff selected)
//!   ulo_i:     u_i - y_i >= 0
//!   uhi_i:     u_i - m y_i <= 0
//!   mtz_i_j:   u_i - u_j + m x_i_j + y_j <= m            (i, j != depot, i != j)
//!
//! The MTZ rows exclude the depot so the single closed tour through it stays
//! feasible, and carry a `y_j` slack so pairs with an unselected head are
//! unconstrained; any cycle avoiding the depot violates some row. This also
//! forces the depot's selection, matching the tour semantics everywhere else
//! in this crate.

use crate::instance::{GtspInstance, Tour};
use std::io::Write;

/// Candidate solution in the model's variable space.
#[derive(Debug, Clone)]
pub struct IlpAssignment {
    /// `x[i][j]`: arc i -> j used. The diagonal is ignored.
    pub x: Vec<Vec<bool>>,
    /// `y[i]`: node i selected.
    pub y: Vec<bool>,
    /// `u[i]`: MTZ position.
    pub u: Vec<f64>,
}

/// Induced assignment of a node sequence: arcs along consecutive nodes plus
/// the closing arc, selected nodes marked, `u` = 1-based visit position.
pub fn assignment_from_nodes(instance: &GtspInstance, nodes: &[usize]) -> IlpAssignment {
    let n = instance.n;
    let mut x = vec![vec![false; n]; n];
    let mut y = vec![false; n];
    let mut u = vec![0.0; n];
    for (pos, &v) in nodes.iter().enumerate() {
        y[v] = true;
        u[v] = (pos + 1) as f64;
        let next = nodes[(pos + 1) % nodes.len()];
        if v != next {
            x[v][next] = true;
        }
    }
    IlpAssignment { x, y, u }
}

/// One verified constraint row.
#[derive(Debug, Clone)]
pub struct ConstraintCheck {
    pub label: String,
    pub pass: bool,
}

/// Row-by-row verification outcome.
#[derive(Debug, Clone)]
pub struct IlpReport {
    pub checks: Vec<ConstraintCheck>,
}

impl IlpReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.label.as_str())
            .collect()
    }
}

const TOL: f64 = 1e-9;

/// Verifies every model row against an assignment.
pub fn check_ilp_constraints(instance: &GtspInstance, assignment: &IlpAssignment) -> IlpReport {
    let n = instance.n;
    let m = instance.m as f64;
    let depot = instance.depot;
    let members = instance.cluster_members();
    let IlpAssignment { x, y, u } = assignment;
    let mut checks = Vec::new();

    for (p, nodes) in members.iter().enumerate() {
        let total: usize = nodes.iter().filter(|&&i| y[i]).count();
        checks.push(ConstraintCheck {
            label: format!("select_{p}"),
            pass: total == 1,
        });
    }
    for i in 0..n {
        let indeg: usize = (0..n).filter(|&j| j != i && x[j][i]).count();
        checks.push(ConstraintCheck {
            label: format!("indeg_{i}"),
            pass: indeg == usize::from(y[i]),
        });
        let outdeg: usize = (0..n).filter(|&j| j != i && x[i][j]).count();
        checks.push(ConstraintCheck {
            label: format!("outdeg_{i}"),
            pass: outdeg == usize::from(y[i]),
        });
    }
    for i in 0..n {
        let yi = f64::from(u8::from(y[i]));
        checks.push(ConstraintCheck {
            label: format!("ubound_{i}"),
            pass: yi - TOL <= u[i] && u[i] <= m * yi + TOL,
        });
    }
    for i in 0..n {
        for j in 0..n {
            if i == j || i == depot || j == depot {
                continue;
            }
            let xij = f64::from(u8::from(x[i][j]));
            let yj = f64::from(u8::from(y[j]));
            checks.push(ConstraintCheck {
                label: format!("mtz_{i}_{j}"),
                pass: u[i] - u[j] + m * xij + yj <= m + TOL,
            });
        }
    }
    checks.push(ConstraintCheck {
        label: "u_nonneg".into(),
        pass: u.iter().all(|&v| v >= -TOL),
    });
    IlpReport { checks }
}

/// Convenience wrapper: checks a feasible tour's induced assignment.
pub fn check_tour_against_ilp(instance: &GtspInstance, tour: &Tour) -> IlpReport {
    check_ilp_constraints(instance, &assignment_from_nodes(instance, tour.nodes()))
}

/// Formats a coefficient with 12 significant digits.
fn coeff(value: f64) -> String {
    format!("{value:.11e}")
}

/// Emits the model as LP-format text. Byte-stable for a fixed instance.
pub fn export_ilp_string(instance: &GtspInstance) -> String {
    let n = instance.n;
    let m = instance.m;
    let depot = instance.depot;
    let members = instance.cluster_members();
    let mut out = String::new();

    out.push_str("Minimize\n obj:");
    let mut terms = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if terms > 0 {
                out.push_str(" +");
            }
            out.push_str(&format!(" {} x_{i}_{j}", coeff(instance.dist(i, j))));
            terms += 1;
            if terms % 6 == 0 {
                out.push_str("\n     ");
            }
        }
    }
    out.push('\n');

    out.push_str("Subject To\n");
    for (p, nodes) in members.iter().enumerate() {
        let sum = nodes
            .iter()
            .map(|i| format!("y_{i}"))
            .collect::<Vec<_>>()
            .join(" + ");
        out.push_str(&format!(" select_{p}: {sum} = 1\n"));
    }
    for i in 0..n {
        let arcs_in = (0..n)
            .filter(|&j| j != i)
            .map(|j| format!("x_{j}_{i}"))
            .collect::<Vec<_>>()
            .join(" + ");
        out.push_str(&format!(" indeg_{i}: {arcs_in} - y_{i} = 0\n"));
        let arcs_out = (0..n)
            .filter(|&j| j != i)
            .map(|j| format!("x_{i}_{j}"))
            .collect::<Vec<_>>()
            .join(" + ");
        out.push_str(&format!(" outdeg_{i}: {arcs_out} - y_{i} = 0\n"));
    }
    for i in 0..n {
        out.push_str(&format!(" ulo_{i}: u_{i} - y_{i} >= 0\n"));
        out.push_str(&format!(" uhi_{i}: u_{i} - {m} y_{i} <= 0\n"));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j || i == depot || j == depot {
                continue;
            }
            out.push_str(&format!(
                " mtz_{i}_{j}: u_{i} - u_{j} + {m} x_{i}_{j} + y_{j} <= {m}\n"
            ));
        }
    }

    out.push_str("Bounds\n");
    for i in 0..n {
        out.push_str(&format!(" u_{i} >= 0\n"));
    }

    out.push_str("Binaries\n");
    let mut names: Vec<String> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                names.push(format!("x_{i}_{j}"));
            }
        }
    }
    for i in 0..n {
        names.push(format!("y_{i}"));
    }
    for chunk in names.chunks(10) {
        out.push(' ');
        out.push_str(&chunk.join(" "));
        out.push('\n');
    }
    out.push_str("End\n");
    out
}

pub fn export_ilp<W: Write>(instance: &GtspInstance, mut sink: W) -> std::io::Result<()> {
    sink.write_all(export_ilp_string(instance).as_bytes())
}

/// Constraint-row count of the emitted model:
/// `m` selection rows, `2n` degree rows, `2n` position-bound rows, and
/// `(n-1)(n-2)` depot-free MTZ rows.
pub fn expected_row_count(n: usize, m: usize) -> usize {
    m + 2 * n + 2 * n + (n - 1) * (n - 2)
}
