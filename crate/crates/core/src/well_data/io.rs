use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    CumulativeRecord, PressureSample, PressureSeries, RateHistory, RateStep, Scenario, Well,
    WellId, WellRole,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionSign {
    #[default]
    NegativeInFile,
    PositiveInFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellConfig {
    pub id: String,
    pub role: WellRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeConfig {
    pub wells: Vec<String>,
    pub start_day: f64,
    pub end_day: f64,
    pub volume_m3: f64,
}

/// Scenario configuration file (TOML).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub injection_sign: InjectionSign,
    pub wells: Vec<WellConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cumulative: Vec<CumulativeConfig>,
    /// `(observed well, source well)` pairs excluded from deconvolution.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inactive_pairs: Vec<[String; 2]>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Canonical config for an in-memory scenario (injection stored negative).
    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioConfig {
            injection_sign: InjectionSign::NegativeInFile,
            wells: s
                .wells
                .iter()
                .zip(&s.p0)
                .map(|(w, p0)| WellConfig {
                    id: w.id.to_string(),
                    role: w.role,
                    p0_bar: *p0,
                })
                .collect(),
            cumulative: s
                .cumulative_reference
                .iter()
                .map(|c| CumulativeConfig {
                    wells: c.wells.iter().map(|w| w.to_string()).collect(),
                    start_day: c.start_day,
                    end_day: c.end_day,
                    volume_m3: c.volume_m3,
                })
                .collect(),
            inactive_pairs: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        for (i, w) in self.wells.iter().enumerate() {
            WellId::new(w.id.clone())
                .map_err(|_| Error::InvalidConfig(format!("well #{i} has an empty id")))?;
            if self.wells[..i].iter().any(|o| o.id == w.id) {
                return Err(Error::InvalidConfig(format!("duplicate well id `{}`", w.id)));
            }
        }
        Ok(())
    }
}

struct ParsedRow {
    line: u64,
    well: usize,
    time: f64,
    value: f64,
    weight: f64,
}

fn parse_number(path: &Path, line: u64, field: &str, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: format!("{column}: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{column}: `{field}` is not finite"),
        });
    }
    Ok(v)
}

fn read_rows(
    path: &Path,
    header: &[&str],
    optional_last: bool,
    ids: &BTreeMap<&str, usize>,
) -> Result<Vec<ParsedRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("{other:?}"),
            },
        })?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let required = if optional_last { header.len() - 1 } else { header.len() };
    let header_ok = found.len() >= required
        && found.len() <= header.len()
        && found.iter().zip(header).all(|(a, b)| a == b);
    if !header_ok {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    let has_weight = optional_last && found.len() == header.len();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let expected = if has_weight { header.len() } else { required };
        if record.len() != expected {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let name = &record[0];
        let well = *ids.get(name).ok_or_else(|| Error::UnknownWell {
            path: path.to_path_buf(),
            line,
            well: name.to_string(),
        })?;
        let time = parse_number(path, line, &record[1], header[1])?;
        let value = parse_number(path, line, &record[2], header[2])?;
        let weight = if has_weight {
            parse_number(path, line, &record[3], header[3])?
        } else {
            1.0
        };
        rows.push(ParsedRow {
            line,
            well,
            time,
            value,
            weight,
        });
    }
    Ok(rows)
}

/// Reads rate and pressure CSV files into a validated scenario.
pub fn load_scenario<P: AsRef<Path>>(
    rate_files: &[P],
    pressure_files: &[P],
    config: &ScenarioConfig,
) -> Result<Scenario> {
    config.check()?;
    let ids: BTreeMap<&str, usize> = config
        .wells
        .iter()
        .enumerate()
        .map(|(i, w)| (w.id.as_str(), i))
        .collect();
    let n = config.wells.len();

    let mut rate_steps: Vec<Vec<RateStep>> = vec![Vec::new(); n];
    for path in rate_files {
        let path = path.as_ref();
        for row in read_rows(path, &["well", "time_days", "rate_m3d"], false, &ids)? {
            let mut rate = row.value;
            if config.wells[row.well].role == WellRole::Injector
                && config.injection_sign == InjectionSign::PositiveInFile
            {
                rate = -rate.abs();
            }
            if row.time < 0.0 {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: row.line,
                    reason: "negative time".into(),
                });
            }
            rate_steps[row.well].push(RateStep {
                time: row.time,
                rate,
            });
        }
    }

    let mut pressure_samples: Vec<Vec<PressureSample>> = vec![Vec::new(); n];
    for path in pressure_files {
        let path = path.as_ref();
        let header = ["well", "time_days", "pressure_bar", "weight"];
        for row in read_rows(path, &header, true, &ids)? {
            if row.weight < 0.0 {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: row.line,
                    reason: "negative weight".into(),
                });
            }
            pressure_samples[row.well].push(PressureSample {
                time: row.time,
                pressure: row.value,
                weight: row.weight,
            });
        }
    }

    let mut wells = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    let mut pressures = Vec::with_capacity(n);
    for (i, wc) in config.wells.iter().enumerate() {
        wells.push(Well {
            id: WellId::new(wc.id.clone())?,
            role: wc.role,
        });
        rates.push(RateHistory::new(&wc.id, std::mem::take(&mut rate_steps[i]))?);
        pressures.push(PressureSeries::new(
            &wc.id,
            std::mem::take(&mut pressure_samples[i]),
        )?);
    }
    let cumulative_reference = config
        .cumulative
        .iter()
        .map(|c| {
            Ok(CumulativeRecord {
                wells: c
                    .wells
                    .iter()
                    .map(|w| {
                        if ids.contains_key(w.as_str()) {
                            WellId::new(w.clone())
                        } else {
                            Err(Error::InvalidConfig(format!(
                                "cumulative record names unknown well `{w}`"
                            )))
                        }
                    })
                    .collect::<Result<_>>()?,
                start_day: c.start_day,
                end_day: c.end_day,
                volume_m3: c.volume_m3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(
        wells,
        rates,
        pressures,
        config.wells.iter().map(|w| w.p0_bar).collect(),
        cumulative_reference,
    )
}

/// Canonical file names produced by [`write_scenario`].
pub const RATES_FILE: &str = "rates.csv";
pub const PRESSURES_FILE: &str = "pressures.csv";
pub const CONFIG_FILE: &str = "scenario.toml";

pub fn rates_csv(s: &Scenario) -> String {
    let mut out = String::from("well,time_days,rate_m3d\n");
    for (w, r) in s.wells.iter().zip(&s.rates) {
        for step in r.steps() {
            let _ = writeln!(out, "{},{},{}", w.id, step.time, step.rate);
        }
    }
    out
}

pub fn pressures_csv(s: &Scenario) -> String {
    let mut out = String::from("well,time_days,pressure_bar,weight\n");
    for (w, p) in s.wells.iter().zip(&s.pressures) {
        for sample in p.samples() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                w.id, sample.time, sample.pressure, sample.weight
            );
        }
    }
    out
}

/// Writes `rates.csv`, `pressures.csv` and `scenario.toml` into `dir`.
pub fn write_scenario(s: &Scenario, dir: impl AsRef<Path>) -> Result<[PathBuf; 3]> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rates = dir.join(RATES_FILE);
    let pressures = dir.join(PRESSURES_FILE);
    let config = dir.join(CONFIG_FILE);
    fs::write(&rates, rates_csv(s)).map_err(|e| Error::io(&rates, e))?;
    fs::write(&pressures, pressures_csv(s)).map_err(|e| Error::io(&pressures, e))?;
    fs::write(&config, ScenarioConfig::from_scenario(s).to_toml_string())
        .map_err(|e| Error::io(&config, e))?;
    Ok([rates, pressures, config])
}
