//! Plot-ready output files. Floats carry 17 significant digits and every file names the
//! config hash, the seed and the schema version.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use etsim::harness::{LambdaRow, RunStat, StatRow};
use etsim::trace::TraceSample;
use etsim::{EventRecord, RunOutput, RunSummary};
use serde::Serialize;

use crate::config::SCHEMA_VERSION;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        format!(
            "# etsim schema_version={} config_sha256={} seed={}\n",
            SCHEMA_VERSION, self.config_hash, self.seed
        )
    }
}

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Compact JSON with `{:.16e}` floats.
struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    config_sha256: &'a str,
    seed: u64,
    data: &'a T,
}

pub fn to_json<T: Serialize>(prov: &Provenance, data: &T) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        config_sha256: &prov.config_hash,
        seed: prov.seed,
        data,
    };
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    env.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("json is utf-8")
}

fn csv(prov: &Provenance, columns: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = prov.header();
    s.push_str(&columns.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn cols(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    let mut c: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    c.extend((1..=n).map(|i| format!("{prefix}{i}")));
    c
}

pub fn events_csv(prov: &Provenance, events: &[EventRecord], n: usize) -> String {
    let mut columns = cols(&["neuron", "time", "cause"], "x", n);
    columns.push("sampled_grad".into());
    csv(
        prov,
        &columns,
        events.iter().map(|e| {
            let mut r = vec![(e.neuron + 1).to_string(), num(e.time), e.cause.as_str().to_string()];
            r.extend(e.state_snapshot.iter().map(|&v| num(v)));
            r.push(num(e.new_sampled_grad_component));
            r
        }),
    )
}

/// One column of trigger times per neuron (including `t = 0`); shorter columns are padded
/// with empty cells.
pub fn trigger_times_csv(prov: &Provenance, out: &RunOutput, n: usize) -> String {
    let times = out.trigger_times();
    let rows = times.iter().map(Vec::len).max().unwrap_or(0);
    csv(
        prov,
        &cols(&["k"], "neuron", n),
        (0..rows).map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(times.iter().map(|t| t.get(k).map(|&v| num(v)).unwrap_or_default()));
            r
        }),
    )
}

pub fn trace_csv(prov: &Provenance, samples: &[TraceSample], n: usize) -> String {
    let mut columns = cols(&["t"], "x", n);
    columns.extend(["lyapunov", "drift_energy", "event"].map(String::from));
    csv(
        prov,
        &columns,
        samples.iter().map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.x.iter().map(|&v| num(v)));
            r.push(num(s.lyapunov));
            r.push(num(s.drift_energy));
            r.push(u8::from(s.event).to_string());
            r
        }),
    )
}

pub fn summary_csv(prov: &Provenance, s: &RunSummary) -> String {
    let n = s.x_star.len();
    let mut columns: Vec<String> = ["outcome", "final_time", "residual", "eta_sim", "eta_theory", "t_first"]
        .map(String::from)
        .to_vec();
    columns.extend(["N", "N_total", "trajectory_length", "max_gap", "audit_failures"].map(String::from));
    columns.extend((1..=n).map(|i| format!("x_star{i}")));
    let outcome = s.outcome.as_str().to_string();
    let mut r = vec![
        outcome,
        num(s.final_time),
        num(s.residual),
        opt(s.eta_sim),
        num(s.eta_theory),
        opt(s.t_first),
        num(s.mean_events_to_t_first()),
        num(s.mean_events_per_neuron()),
        num(s.trajectory_length),
        opt(s.max_gap),
        s.audit_failures.to_string(),
    ];
    r.extend(s.x_star.iter().map(|&v| num(v)));
    csv(prov, &columns, std::iter::once(r))
}

pub fn stat_rows_csv(prov: &Provenance, rows: &[StatRow]) -> String {
    let columns = ["gamma", "eta_sim", "eta", "N", "T_first", "N_total", "runs", "non_converged"].map(String::from);
    csv(
        prov,
        &columns,
        rows.iter().map(|r| {
            vec![
                num(r.gamma),
                num(r.eta_sim_mean),
                num(r.eta_theory),
                num(r.n_mean),
                num(r.t_first_mean),
                num(r.n_total_mean),
                r.runs.to_string(),
                r.non_converged.to_string(),
            ]
        }),
    )
}

pub fn run_stats_csv(prov: &Provenance, runs: &[RunStat], n: usize) -> String {
    let mut columns = cols(&["gamma", "run", "outcome", "eta_sim", "N", "N_total", "T_first"], "x0_", n);
    columns.extend((1..=n).map(|i| format!("x_star{i}")));
    csv(
        prov,
        &columns,
        runs.iter().map(|s| {
            let outcome = s.outcome.as_str().to_string();
            let mut r = vec![
                num(s.gamma),
                s.run.to_string(),
                outcome,
                opt(s.eta_sim),
                num(s.n_events),
                num(s.n_events_total),
                opt(s.t_first),
            ];
            r.extend(s.x0.iter().map(|&v| num(v)));
            r.extend(s.x_star.iter().map(|&v| num(v)));
            r
        }),
    )
}

pub fn lambda_rows_csv(prov: &Provenance, rows: &[LambdaRow], n: usize) -> String {
    let columns = cols(&["lambda", "trial", "outcome", "distance", "vertex"], "y_bar", n);
    csv(
        prov,
        &columns,
        rows.iter().map(|l| {
            let outcome = l.outcome.as_str().to_string();
            let vertex: String = l.vertex.iter().map(|b| b.to_string()).collect();
            let mut r = vec![num(l.lambda), l.trial.to_string(), outcome, num(l.distance), vertex];
            r.extend(l.y_bar.iter().map(|&v| num(v)));
            r
        }),
    )
}

/// Writes `contents` to `dir/name`, creating `dir` when needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            config_hash: "ab".into(),
            seed: 7,
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(num(f64::NAN), "nan");
        let j = to_json(&prov(), &vec![0.1, 2.0]);
        assert!(j.contains("1.0000000000000001e-1"), "{j}");
        assert!(j.contains("\"config_sha256\":\"ab\""));
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["data"][1].as_f64(), Some(2.0));
    }

    #[test]
    fn empty_tables_keep_their_headers() {
        let s = stat_rows_csv(&prov(), &[]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# etsim schema_version=1 config_sha256=ab seed=7"));
        assert_eq!(lines[1], "gamma,eta_sim,eta,N,T_first,N_total,runs,non_converged");
    }
}
