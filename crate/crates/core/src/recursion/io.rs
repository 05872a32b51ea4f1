//! Text serialization of catalogs.
//!
//! ```text
//! # adaptive-mm catalog
//! format = 1
//! n_steps = <N>
//! step_seconds = <real>
//! map_kind = G1|G2|G3|Constant|Custom
//! lag = <int>
//! scenario_count = <int>
//! lambda = <real>
//! phi = <real>
//! mode = martingale|one-step-drift|multi-step-drift
//! xi_horizon = <int>
//! known_drift = none|<real>;<real>;...
//! [map]                      (Custom maps only)
//! encode = <id>;<id>;...     (4^lag entries, indexed by history code)
//! [moments]
//! side,mu_c,mu_p,mu_c2,mu_cp,mu_c2p,mu_c2p2
//! plus,...
//! minus,...
//! [arrivals]
//! scenario,pi_plus,pi_minus,pi_11
//! [records]
//! step,scenario,alpha,h,g,a1p,a1m,a2p,a2m,a3p,a3m,drift_coef_p,drift_coef_m
//! ```
//!
//! Reals use 17 significant digits so reading and re-writing is byte-identical.
//! Records cover steps `0..=N`; the terminal layer follows from `lambda`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    ArrivalModel, ArrivalProbs, DemandMoments, ObjectiveParams, ScenarioKind, ScenarioMap,
    SideMoments, TradingSchedule,
};

use super::{solve_step, Catalog, CatalogSpec, DriftMode, PolicyCoefs, ValueCoefs, DEFAULT_XI_ENTRY_CAP};

/// Fixed-width scientific notation with 17 significant digits.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("invalid number {s:?} for {what}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("invalid integer {s:?} for {what}")))
}

impl Catalog {
    /// Serialize to the catalog text format.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        let io = |e: std::io::Error| Error::io("<catalog stream>", e);
        let spec = &self.spec;
        let horizon = match spec.mode {
            DriftMode::MultiStep { horizon } => horizon,
            _ => 0,
        };
        let drift = match &self.known_drift {
            None => "none".to_string(),
            Some(d) => d.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(";"),
        };
        write!(
            w,
            "# adaptive-mm catalog\nformat = 1\nn_steps = {}\nstep_seconds = {}\nmap_kind = {}\nlag = {}\n\
             scenario_count = {}\nlambda = {}\nphi = {}\nmode = {}\nxi_horizon = {}\nknown_drift = {}\n",
            spec.schedule.n_steps(),
            fmt_real(spec.schedule.step_seconds()),
            spec.map.kind(),
            spec.map.lag(),
            spec.map.scenario_count(),
            fmt_real(spec.objective.lambda),
            fmt_real(spec.objective.phi),
            spec.mode.name(),
            horizon,
            drift,
        )
        .map_err(io)?;
        if spec.map.kind() == ScenarioKind::Custom {
            let enc: Vec<String> = spec.map.encode_table().iter().map(|x| x.to_string()).collect();
            writeln!(w, "[map]\nencode = {}", enc.join(";")).map_err(io)?;
        }
        writeln!(w, "[moments]\nside,mu_c,mu_p,mu_c2,mu_cp,mu_c2p,mu_c2p2").map_err(io)?;
        for (name, side) in [("plus", &spec.moments.plus), ("minus", &spec.moments.minus)] {
            let vals: Vec<String> = side.as_array().iter().map(|x| fmt_real(*x)).collect();
            writeln!(w, "{name},{}", vals.join(",")).map_err(io)?;
        }
        writeln!(w, "[arrivals]\nscenario,pi_plus,pi_minus,pi_11").map_err(io)?;
        for (s, p) in spec.arrivals.all().iter().enumerate() {
            writeln!(w, "{s},{},{},{}", fmt_real(p.pi_plus), fmt_real(p.pi_minus), fmt_real(p.pi_11))
                .map_err(io)?;
        }
        writeln!(
            w,
            "[records]\nstep,scenario,alpha,h,g,a1p,a1m,a2p,a2m,a3p,a3m,drift_coef_p,drift_coef_m"
        )
        .map_err(io)?;
        let n = self.scenario_count();
        let mut line = String::with_capacity(400);
        for k in 0..=self.n_steps() {
            for s in 0..n {
                let v = self.value(k, s);
                let p = self.policy(k, s);
                line.clear();
                line.push_str(&format!("{k},{s}"));
                for x in [
                    v.alpha,
                    v.h,
                    v.g,
                    p.a1p,
                    p.a1m,
                    p.a2p,
                    p.a2m,
                    p.a3p,
                    p.a3m,
                    p.drift_coef_p(),
                    p.drift_coef_m(),
                ] {
                    line.push(',');
                    line.push_str(&fmt_real(x));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Parse the catalog text format.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut header: HashMap<String, String> = HashMap::new();
        let mut section = String::new();
        let mut map_fields: HashMap<String, String> = HashMap::new();
        let mut moment_rows: Vec<Vec<String>> = Vec::new();
        let mut arrival_rows: Vec<Vec<String>> = Vec::new();
        let mut records: Vec<(usize, usize, [f64; 9])> = Vec::new();
        let mut seen_table_header = false;

        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<catalog stream>", e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                seen_table_header = false;
                continue;
            }
            match section.as_str() {
                "" | "map" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| {
                        Error::Parse(format!("line {}: expected key = value", lineno + 1))
                    })?;
                    let target = if section.is_empty() { &mut header } else { &mut map_fields };
                    target.insert(k.trim().to_string(), v.trim().to_string());
                }
                "moments" | "arrivals" | "records" => {
                    if !seen_table_header {
                        seen_table_header = true;
                        continue;
                    }
                    let cols: Vec<&str> = line.split(',').collect();
                    match section.as_str() {
                        "moments" => moment_rows.push(cols.iter().map(|s| s.to_string()).collect()),
                        "arrivals" => arrival_rows.push(cols.iter().map(|s| s.to_string()).collect()),
                        _ => {
                            if cols.len() != 13 {
                                return Err(Error::Parse(format!(
                                    "line {}: record needs 13 columns, got {}",
                                    lineno + 1,
                                    cols.len()
                                )));
                            }
                            let mut vals = [0.0; 9];
                            for (slot, col) in vals.iter_mut().zip(&cols[2..11]) {
                                *slot = parse_real(col, "record")?;
                            }
                            records.push((parse_usize(cols[0], "step")?, parse_usize(cols[1], "scenario")?, vals));
                        }
                    }
                }
                other => return Err(Error::Parse(format!("unknown section [{other}]"))),
            }
        }

        let get = |key: &str| {
            header
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("catalog header is missing {key:?}")))
        };
        let n_steps = parse_usize(get("n_steps")?, "n_steps")?;
        let schedule = TradingSchedule::new(n_steps, parse_real(get("step_seconds")?, "step_seconds")?)?;
        let kind: ScenarioKind = get("map_kind")?.parse()?;
        let lag = parse_usize(get("lag")?, "lag")?;
        let encode = match kind {
            ScenarioKind::Custom => Some(
                map_fields
                    .get("encode")
                    .ok_or_else(|| Error::Parse("custom map needs an encode table".into()))?
                    .split(';')
                    .map(|s| parse_usize(s, "encode"))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        let map = ScenarioMap::from_kind(kind, lag, encode).map_err(|e| Error::Parse(e.to_string()))?;
        let count = parse_usize(get("scenario_count")?, "scenario_count")?;
        if count != map.scenario_count() {
            return Err(Error::Parse(format!(
                "scenario_count {count} does not match map ({})",
                map.scenario_count()
            )));
        }
        let objective = ObjectiveParams::new(parse_real(get("lambda")?, "lambda")?, parse_real(get("phi")?, "phi")?)?;
        let horizon = parse_usize(get("xi_horizon")?, "xi_horizon")?;
        let mode = match get("mode")? {
            "martingale" => DriftMode::Martingale,
            "one-step-drift" => DriftMode::OneStep,
            "multi-step-drift" => DriftMode::MultiStep { horizon },
            other => return Err(Error::Parse(format!("unknown mode {other:?}"))),
        };
        let known_drift = match get("known_drift")? {
            "none" => None,
            list => Some(
                list.split(';')
                    .map(|s| parse_real(s, "known_drift"))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };

        let side = |name: &str| -> Result<SideMoments> {
            let row = moment_rows
                .iter()
                .find(|r| r.first().map(String::as_str) == Some(name))
                .ok_or_else(|| Error::Parse(format!("missing {name} moments row")))?;
            if row.len() != 7 {
                return Err(Error::Parse(format!("{name} moments row needs 7 columns")));
            }
            let v = row[1..]
                .iter()
                .map(|s| parse_real(s, "moment"))
                .collect::<Result<Vec<_>>>()?;
            Ok(SideMoments {
                mu_c: v[0],
                mu_p: v[1],
                mu_c2: v[2],
                mu_cp: v[3],
                mu_c2p: v[4],
                mu_c2p2: v[5],
            })
        };
        let moments = DemandMoments::new(side("plus")?, side("minus")?)?;

        let mut probs = vec![None; count];
        for row in &arrival_rows {
            if row.len() != 4 {
                return Err(Error::Parse("arrival rows need 4 columns".into()));
            }
            let s = parse_usize(&row[0], "scenario")?;
            if s >= count {
                return Err(Error::Parse(format!("arrival scenario {s} out of range")));
            }
            probs[s] = Some(ArrivalProbs::new(
                parse_real(&row[1], "pi_plus")?,
                parse_real(&row[2], "pi_minus")?,
                parse_real(&row[3], "pi_11")?,
            ));
        }
        let probs = probs
            .into_iter()
            .enumerate()
            .map(|(s, p)| p.ok_or_else(|| Error::Parse(format!("missing arrivals for scenario {s}"))))
            .collect::<Result<Vec<_>>>()?;
        let arrivals = ArrivalModel::new(probs)?;

        let expected = (n_steps + 1) * count;
        if records.len() != expected {
            return Err(Error::Parse(format!(
                "expected {expected} records, found {}",
                records.len()
            )));
        }
        let mut values = vec![ValueCoefs { alpha: 0.0, h: 0.0, g: 0.0 }; (n_steps + 2) * count];
        let mut stored = vec![[0.0f64; 6]; expected];
        let mut filled = vec![false; expected];
        for (k, s, v) in &records {
            if *k > n_steps || *s >= count {
                return Err(Error::Parse(format!("record ({k}, {s}) out of range")));
            }
            let idx = k * count + s;
            if filled[idx] {
                return Err(Error::Parse(format!("duplicate record ({k}, {s})")));
            }
            filled[idx] = true;
            values[idx] = ValueCoefs { alpha: v[0], h: v[1], g: v[2] };
            stored[idx].copy_from_slice(&v[3..9]);
        }
        for v in &mut values[(n_steps + 1) * count..] {
            v.alpha = -objective.lambda;
        }

        let spec = CatalogSpec {
            schedule,
            map,
            arrivals,
            moments,
            objective,
            mode,
        };
        let cat = Catalog {
            spec,
            values,
            policy: Vec::new(),
            known_drift,
            xi: None,
        };
        // Auxiliaries are recomputed from the stored layers; the quote
        // coefficients come from the file.
        let mut policy = Vec::with_capacity(expected);
        for k in 0..=n_steps {
            for s in 0..count {
                let inputs = cat.step_inputs(k, s);
                let (aux, _) = solve_step(&inputs, &cat.spec.moments);
                let a = stored[k * count + s];
                policy.push(PolicyCoefs {
                    a1p: a[0],
                    a1m: a[1],
                    a2p: a[2],
                    a2m: a[3],
                    a3p: a[4],
                    a3m: a[5],
                    ..aux
                });
            }
        }
        Catalog::from_parts(cat.spec, cat.values, policy, cat.known_drift, DEFAULT_XI_ENTRY_CAP)
    }
}
