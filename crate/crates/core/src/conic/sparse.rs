//! Plain-text sparse dump of a [`ConicProblem`] for offline cross-checking.
//!
//! ```text
//! # comment lines start with '#'
//! <num_scalars> <num_blocks>
//! <dim_1> … <dim_B>                      (empty line when B = 0)
//! <num_constraints>
//! <i> <L|G|E> <rhs>                      one line per constraint, i = 1…m
//! <con> <block> <row> <col> <value>      coefficient triplets
//! ```
//!
//! In triplets `con = 0` is the objective and `con = i` the i-th constraint;
//! `block = 0` addresses scalar variable `row` (with `col = row`) and
//! `block = b ≥ 1` the b-th matrix block. Only `row ≤ col` is written; the
//! lower triangle is implied by symmetry. Indices inside blocks are 0-based.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{ConicProblem, LinearConstraint, LinearForm, Sense};
use crate::error::{Error, Result};

fn write_form(out: &mut String, con: usize, form: &LinearForm) {
    for &(i, v) in &form.scalars {
        let _ = writeln!(out, "{con} 0 {i} {i} {v}");
    }
    for (b, m) in &form.blocks {
        for col in 0..m.ncols() {
            for row in 0..=col {
                let v = m[(row, col)];
                if v != 0.0 {
                    let _ = writeln!(out, "{con} {} {row} {col} {v}", b + 1);
                }
            }
        }
    }
}

pub fn write_sparse(problem: &ConicProblem) -> String {
    let mut out = String::from("# robust-miso conic problem\n");
    let _ = writeln!(out, "{} {}", problem.num_scalars, problem.block_dims.len());
    let dims: Vec<String> = problem.block_dims.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "{}", dims.join(" "));
    let _ = writeln!(out, "{}", problem.constraints.len());
    for (i, c) in problem.constraints.iter().enumerate() {
        let sense = match c.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        let _ = writeln!(out, "{} {sense} {}", i + 1, c.rhs);
    }
    write_form(&mut out, 0, &problem.objective);
    for (i, c) in problem.constraints.iter().enumerate() {
        write_form(&mut out, i + 1, &c.form);
    }
    out
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::InvalidArgument(format!("sparse dump line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, "malformed number"))
}

/// Parses the output of [`write_sparse`]. Repeated triplets are summed.
pub fn read_sparse(text: &str) -> Result<ConicProblem> {
    // Keep blank lines: the block-size line is empty when there are no blocks.
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim()));

    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
    let mut it = header.split_whitespace();
    let num_scalars: usize = num(it.next(), ln)?;
    let num_blocks: usize = num(it.next(), ln)?;

    let (ln, dims_line) = lines.next().ok_or_else(|| parse_err(ln, "missing block sizes"))?;
    let block_dims = dims_line
        .split_whitespace()
        .map(|t| num::<usize>(Some(t), ln))
        .collect::<Result<Vec<_>>>()?;
    if block_dims.len() != num_blocks {
        return Err(parse_err(ln, "block count mismatch"));
    }

    let (ln, m_line) = lines.next().ok_or_else(|| parse_err(ln, "missing constraint count"))?;
    let m: usize = num(Some(m_line), ln)?;

    let mut constraints = Vec::with_capacity(m);
    for expect in 1..=m {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "missing constraint line"))?;
        let mut it = line.split_whitespace();
        let idx: usize = num(it.next(), ln)?;
        if idx != expect {
            return Err(parse_err(ln, "constraints out of order"));
        }
        let sense = match it.next() {
            Some("L") => Sense::Le,
            Some("G") => Sense::Ge,
            Some("E") => Sense::Eq,
            _ => return Err(parse_err(ln, "unknown sense")),
        };
        let rhs: f64 = num(it.next(), ln)?;
        constraints.push(LinearConstraint {
            form: LinearForm::default(),
            sense,
            rhs,
        });
    }

    let mut objective = LinearForm::default();
    // Dense accumulators per (form, block), materialized lazily.
    let mut dense: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; num_blocks]; m + 1];
    let mut scalars: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m + 1];
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let con: usize = num(it.next(), ln)?;
        let blk: usize = num(it.next(), ln)?;
        let row: usize = num(it.next(), ln)?;
        let col: usize = num(it.next(), ln)?;
        let v: f64 = num(it.next(), ln)?;
        if con > m {
            return Err(parse_err(ln, "constraint index out of range"));
        }
        if blk == 0 {
            if row >= num_scalars || row != col {
                return Err(parse_err(ln, "bad scalar index"));
            }
            scalars[con].push((row, v));
            continue;
        }
        let b = blk - 1;
        let d = *block_dims
            .get(b)
            .ok_or_else(|| parse_err(ln, "block index out of range"))?;
        if row > col || col >= d {
            return Err(parse_err(ln, "entry outside upper triangle"));
        }
        let mat = dense[con][b].get_or_insert_with(|| DMatrix::zeros(d, d));
        mat[(row, col)] += v;
        if row != col {
            mat[(col, row)] += v;
        }
    }

    for (con, (blocks, sc)) in dense.into_iter().zip(scalars).enumerate() {
        let form = if con == 0 {
            &mut objective
        } else {
            &mut constraints[con - 1].form
        };
        form.scalars = sc;
        form.blocks = blocks
            .into_iter()
            .enumerate()
            .filter_map(|(b, m)| m.map(|m| (b, m)))
            .collect();
    }

    Ok(ConicProblem {
        num_scalars,
        block_dims,
        objective,
        constraints,
    })
}
