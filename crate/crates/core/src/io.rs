/*
Copyright 2026 The opfl Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Plain-text container for federated problems.
//!
//! ```text
//! opfl-problem 1
//! seed-scheme opfl-seed-v1
//! provenance <free text, one line>
//! users <m> dim <d>
//! weights <λ_1> … <λ_m>
//! user quadratic <rows> <cols>
//! <row-major A, one row per line>
//! <b>
//! user logistic <rows> <cols> <reg>
//! <row-major A> / <labels>
//! user scalar_shifted <curvature> <center>
//! user absolute_deviation <anchor…>
//! user neg_part_quadratic
//! solution <values…> | solution none
//! optimum <value> | optimum none
//! end
//! ```
//!
//! Numbers are printed in Rust's shortest round-trip form, so a write/read
//! cycle is lossless.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::consensus::WeightVector;
use crate::error::{Error, Result};
use crate::losses::UserLoss;
use crate::problem::FederatedProblem;
use crate::scheme::SEED_SCHEME;

pub const FORMAT_MAGIC: &str = "opfl-problem";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_matrix(out: &mut impl Write, a: &DMatrix<f64>) -> std::io::Result<()> {
    for r in 0..a.nrows() {
        writeln!(out, "{}", join(a.row(r).iter().copied()))?;
    }
    Ok(())
}

/// Serializes `problem`; `provenance` is a single descriptive line such as
/// the generator specification.
pub fn write_problem(
    out: &mut impl Write,
    problem: &FederatedProblem,
    provenance: &str,
) -> Result<()> {
    if provenance.contains('\n') {
        return Err(Error::Format("provenance must be a single line".into()));
    }
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
        writeln!(out, "seed-scheme {SEED_SCHEME}")?;
        writeln!(out, "provenance {provenance}")?;
        writeln!(out, "users {} dim {}", problem.num_users(), problem.dim())?;
        writeln!(
            out,
            "weights {}",
            join(problem.weights().as_slice().iter().copied())
        )?;
        for u in problem.users() {
            match u {
                UserLoss::Quadratic(q) => {
                    let a = q.design();
                    writeln!(out, "user quadratic {} {}", a.nrows(), a.ncols())?;
                    write_matrix(out, a)?;
                    writeln!(out, "{}", join(q.response().iter().copied()))?;
                }
                UserLoss::Logistic(l) => {
                    let a = l.design();
                    writeln!(
                        out,
                        "user logistic {} {} {:?}",
                        a.nrows(),
                        a.ncols(),
                        l.reg_weight()
                    )?;
                    write_matrix(out, a)?;
                    writeln!(out, "{}", join(l.labels().iter().copied()))?;
                }
                UserLoss::ScalarShiftedQuadratic { curvature, center } => {
                    writeln!(out, "user scalar_shifted {curvature:?} {center:?}")?;
                }
                UserLoss::AbsoluteDeviation { anchor } => {
                    writeln!(
                        out,
                        "user absolute_deviation {}",
                        join(anchor.iter().copied())
                    )?;
                }
                UserLoss::NegPartQuadratic => writeln!(out, "user neg_part_quadratic")?,
            }
        }
        match &problem.true_solution {
            Some(w) => writeln!(out, "solution {}", join(w.iter().copied()))?,
            None => writeln!(out, "solution none")?,
        }
        match problem.true_optimum {
            Some(v) => writeln!(out, "optimum {v:?}")?,
            None => writeln!(out, "optimum none")?,
        }
        writeln!(out, "end")
    };
    body().map_err(io_err)
}

/// A problem read back from the container, with its provenance line.
#[derive(Debug, Clone)]
pub struct StoredProblem {
    pub problem: FederatedProblem,
    pub provenance: String,
    pub seed_scheme: String,
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.number += 1;
        match self.inner.next() {
            Some(l) => l.map_err(io_err),
            None => Err(Error::Format(format!(
                "unexpected end of input at line {}",
                self.number
            ))),
        }
    }

    fn fail<T>(&self, what: impl std::fmt::Display) -> Result<T> {
        Err(Error::Format(format!("line {}: {what}", self.number)))
    }

    fn keyword<'a>(&self, line: &'a str, key: &str) -> Result<&'a str> {
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok(rest.trim_start()),
            _ => self.fail(format!("expected `{key}`")),
        }
    }

    fn numbers(&self, text: &str, expected: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .or_else(|e| self.fail(format!("bad number: {e}")))?;
        if v.len() != expected {
            return self.fail(format!("expected {expected} values, found {}", v.len()));
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            data.extend(self.numbers(&line, cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn count(&self, token: Option<&str>) -> Result<usize> {
        match token.map(str::parse::<usize>) {
            Some(Ok(v)) => Ok(v),
            _ => self.fail("expected a count"),
        }
    }
}

pub fn read_problem(input: impl BufRead) -> Result<StoredProblem> {
    let mut lines = Lines {
        inner: input.lines(),
        number: 0,
    };
    let first = lines.next_line()?;
    let version = lines.keyword(&first, FORMAT_MAGIC)?;
    if version != FORMAT_VERSION.to_string() {
        return lines.fail(format!("unsupported version `{version}`"));
    }
    let l = lines.next_line()?;
    let seed_scheme = lines.keyword(&l, "seed-scheme")?.to_string();
    let l = lines.next_line()?;
    let provenance = lines.keyword(&l, "provenance")?.to_string();

    let l = lines.next_line()?;
    let dims: Vec<&str> = lines.keyword(&l, "users")?.split_whitespace().collect();
    if dims.len() != 3 || dims[1] != "dim" {
        return lines.fail("expected `users <m> dim <d>`");
    }
    let m = lines.count(Some(dims[0]))?;
    let d = lines.count(Some(dims[2]))?;
    let l = lines.next_line()?;
    let weights = lines.numbers(lines.keyword(&l, "weights")?, m)?;

    let mut users = Vec::with_capacity(m);
    for _ in 0..m {
        let l = lines.next_line()?;
        let rest = lines.keyword(&l, "user")?;
        let mut tokens = rest.split_whitespace();
        let kind = tokens.next().unwrap_or("");
        let user = match kind {
            "quadratic" | "logistic" => {
                let rows = lines.count(tokens.next())?;
                let cols = lines.count(tokens.next())?;
                let reg = if kind == "logistic" {
                    Some(lines.numbers(tokens.next().unwrap_or(""), 1)?[0])
                } else {
                    None
                };
                let a = lines.matrix(rows, cols)?;
                let tail = lines.next_line()?;
                let b = DVector::from_vec(lines.numbers(&tail, rows)?);
                match reg {
                    Some(r) => UserLoss::logistic(a, b, r)?,
                    None => UserLoss::quadratic(a, b)?,
                }
            }
            "scalar_shifted" => {
                let v = lines.numbers(&tokens.collect::<Vec<_>>().join(" "), 2)?;
                UserLoss::scalar_shifted(v[0], v[1])?
            }
            "absolute_deviation" => {
                let v = lines.numbers(&tokens.collect::<Vec<_>>().join(" "), d)?;
                UserLoss::absolute_deviation(DVector::from_vec(v))
            }
            "neg_part_quadratic" => UserLoss::NegPartQuadratic,
            other => return lines.fail(format!("unknown loss kind `{other}`")),
        };
        users.push(user);
    }
    let mut problem = FederatedProblem::new(users, WeightVector::new(weights)?)?;
    if problem.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: problem.dim(),
        });
    }
    let l = lines.next_line()?;
    let sol = lines.keyword(&l, "solution")?;
    if sol != "none" {
        problem.true_solution = Some(DVector::from_vec(lines.numbers(sol, d)?));
    }
    let l = lines.next_line()?;
    let opt = lines.keyword(&l, "optimum")?;
    if opt != "none" {
        problem.true_optimum = Some(lines.numbers(opt, 1)?[0]);
    }
    let l = lines.next_line()?;
    if l.trim() != "end" {
        return lines.fail("expected `end`");
    }
    Ok(StoredProblem {
        problem,
        provenance,
        seed_scheme,
    })
}
