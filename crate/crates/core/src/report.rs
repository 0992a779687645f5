//! CSV and plot-script output. Every number is written with 17 significant
//! digits (`{:.16e}`), so files round-trip to the same `f64`.
//!
//! | file | columns |
//! |------|---------|
//! | `mse.csv` | `t, mse_central, mse_node_1 .. mse_node_N` (sampled steps) |
//! | `cov_gap.csv` | `t, node, frob_gap` (node is 1-based) |
//! | `trace.csv` | `t, x_1.., central_1.., node1_1.., ...` (one realization) |

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::simulator::{McSummary, SimulationTrace};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out
}

pub fn write_mse_csv(out: &mut impl Write, summary: &McSummary) -> io::Result<()> {
    let nodes = summary.mse_nodes.first().map_or(0, Vec::len);
    let mut header = String::from("t,mse_central");
    for i in 1..=nodes {
        let _ = write!(header, ",mse_node_{i}");
    }
    writeln!(out, "{header}")?;
    for &k in &summary.sample_steps {
        let row = std::iter::once(summary.time(k))
            .chain(std::iter::once(summary.mse_central[k]))
            .chain(summary.mse_nodes[k].iter().copied());
        writeln!(out, "{}", join(row))?;
    }
    Ok(())
}

pub fn write_cov_gap_csv(out: &mut impl Write, summary: &McSummary) -> io::Result<()> {
    writeln!(out, "t,node,frob_gap")?;
    for (t, row) in summary.sample_times.iter().zip(&summary.cov_gap) {
        for (i, gap) in row.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt_f64(*t), i + 1, fmt_f64(*gap))?;
        }
    }
    Ok(())
}

pub fn write_trace_csv(out: &mut impl Write, trace: &SimulationTrace) -> io::Result<()> {
    let n = trace.truth.first().map_or(0, |x| x.len());
    let nodes = trace.node_estimates.first().map_or(0, Vec::len);
    let mut header = String::from("t");
    for j in 1..=n {
        let _ = write!(header, ",x_{j}");
    }
    for j in 1..=n {
        let _ = write!(header, ",central_{j}");
    }
    for i in 1..=nodes {
        for j in 1..=n {
            let _ = write!(header, ",node{i}_{j}");
        }
    }
    writeln!(out, "{header}")?;
    for (s, t) in trace.times.iter().enumerate() {
        let row = std::iter::once(*t)
            .chain(trace.truth[s].iter().copied())
            .chain(trace.central_estimate[s].iter().copied())
            .chain(trace.node_estimates[s].iter().flat_map(|v| v.iter().copied()));
        writeln!(out, "{}", join(row))?;
    }
    Ok(())
}

/// Gnuplot script drawing every node's MSE (solid) against the centralized
/// MSE (dashed) on a log scale, reading `data_file`.
pub fn plot_script(data_file: &str, nodes: usize, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot -persist mse.gp");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key top right");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "set xlabel 't [s]'");
    let _ = writeln!(s, "set ylabel 'MSE'");
    let _ = writeln!(s, "set title '{}'", title.replace('\'', ""));
    let _ = write!(s, "plot '{data_file}' using 1:2 with lines dashtype 2 linewidth 2 title 'centralized'");
    for i in 1..=nodes {
        let _ = write!(s, ", \\\n     '' using 1:{} with lines dashtype 1 title 'node {i}'", i + 2);
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let text = fmt_f64(v);
            assert_eq!(text.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn plot_script_lists_every_node() {
        let script = plot_script("mse.csv", 3, "demo");
        assert!(script.contains("using 1:2"));
        assert!(script.contains("using 1:5"));
        assert!(!script.contains("using 1:6"));
    }
}
