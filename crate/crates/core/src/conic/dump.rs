use std::io::{self, Write};

use super::{Cone, ConicProgram};

/// Writes `program` as plain text with one block per cone, for
/// cross-checking against external solvers.
///
/// ```text
/// vars <n>
/// objective <offset> <c_0> ... <c_{n-1}>
/// eq <rows>
/// <rhs> | <col>:<val> ...
/// nonneg <dim> | soc <dim>
/// <h> | <col>:<val> ...          (rows of G; the constraint is h - G v ∈ K)
/// ```
pub fn write_text<W: Write>(program: &ConicProgram, mut out: W) -> io::Result<()> {
    writeln!(out, "vars {}", program.num_vars)?;
    write!(out, "objective {:e}", program.objective_offset)?;
    for c in &program.objective {
        write!(out, " {c:e}")?;
    }
    writeln!(out)?;

    let eq_rows = rows_of(&program.eq_matrix.entries, program.eq_matrix.nrows);
    writeln!(out, "eq {}", program.eq_matrix.nrows)?;
    for (r, row) in eq_rows.iter().enumerate() {
        write_row(&mut out, program.eq_rhs[r], row)?;
    }

    let g_rows = rows_of(&program.cone_matrix.entries, program.cone_matrix.nrows);
    let mut at = 0;
    for cone in &program.cones {
        match cone {
            Cone::NonNegative(d) => writeln!(out, "nonneg {d}")?,
            Cone::SecondOrder(d) => writeln!(out, "soc {d}")?,
        }
        let span = at..at + cone.dim();
        for (rhs, row) in program.cone_rhs[span.clone()].iter().zip(&g_rows[span]) {
            write_row(&mut out, *rhs, row)?;
        }
        at += cone.dim();
    }
    Ok(())
}

fn rows_of(entries: &[(usize, usize, f64)], nrows: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); nrows];
    for &(i, j, a) in entries {
        rows[i].push((j, a));
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    rows
}

fn write_row<W: Write>(out: &mut W, rhs: f64, row: &[(usize, f64)]) -> io::Result<()> {
    write!(out, "{rhs:e} |")?;
    for (j, a) in row {
        write!(out, " {j}:{a:e}")?;
    }
    writeln!(out)
}
