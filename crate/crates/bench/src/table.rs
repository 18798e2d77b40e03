//! Convergence-proportion table over every applicable (algorithm, example) pair.

use std::fmt;

use ncdecomp::examples::{Algorithm, AlgorithmParams, Variant};

use crate::experiment::{run_experiment, Experiment, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableOptions {
    pub blocks: usize,
    pub samples: usize,
    pub inits: usize,
    pub seed: u64,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionTable {
    /// `None` where the algorithm does not apply.
    pub cells: Vec<(Algorithm, Vec<Option<f64>>)>,
}

pub fn proportion_table(opts: &TableOptions) -> ProportionTable {
    let cells = Algorithm::ALL
        .into_iter()
        .map(|a| {
            let row = Variant::ALL
                .into_iter()
                .map(|v| {
                    let params = AlgorithmParams::tuned(a, v)?;
                    let e = Experiment {
                        variant: v,
                        algorithm: a,
                        params,
                        blocks: opts.blocks,
                        samples: opts.samples,
                        inits: opts.inits,
                        seed: opts.seed,
                        max_iters: 10,
                        parallelism: opts.parallelism,
                    };
                    RunReport { rows: run_experiment(&e), timing: false }.proportion()
                })
                .collect();
            (a, row)
        })
        .collect();
    ProportionTable { cells }
}

impl fmt::Display for ProportionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<6}", "")?;
        for v in Variant::ALL {
            write!(f, "{:>8}", format!("ex{}", v.number()))?;
        }
        writeln!(f)?;
        for (a, row) in &self.cells {
            write!(f, "{:<6}", a.name())?;
            for cell in row {
                match cell {
                    Some(p) => write!(f, "{:>7.0}%", 100.0 * p)?,
                    None => write!(f, "{:>8}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl ProportionTable {
    /// Same layout as the display, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm");
        for v in Variant::ALL {
            out.push_str(&format!(",ex{}", v.number()));
        }
        out.push('\n');
        for (a, row) in &self.cells {
            out.push_str(a.name());
            for cell in row {
                out.push(',');
                out.push_str(&cell.map_or_else(|| "NA".to_string(), |p| format!("{p:.2}")));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inapplicable_cells_are_empty() {
        let t = proportion_table(&TableOptions { blocks: 3, samples: 1, inits: 1, seed: 1, parallelism: 2 });
        for (a, row) in &t.cells {
            for (v, cell) in Variant::ALL.into_iter().zip(row) {
                assert_eq!(cell.is_some(), a.applies_to(v), "{a} {v}");
            }
        }
        let text = t.to_string();
        assert!(text.starts_with("      "));
        assert_eq!(text.lines().count(), 5);
        assert!(t.to_csv().lines().nth(2).unwrap().starts_with("spd,NA,"));
    }
}
