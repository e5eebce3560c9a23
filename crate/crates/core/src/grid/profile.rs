use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GridError, RadialGrid};

/// Required spacing of profile timestamps.
pub const PROFILE_STEP_MINUTES: i64 = 10;

/// Generation and consumption at one bus for one timestep, in kW / kvar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BusInjection {
    pub p_gen_kw: f64,
    pub p_load_kw: f64,
    pub q_gen_kvar: f64,
    pub q_load_kvar: f64,
}

impl BusInjection {
    pub fn net_kw(&self) -> f64 {
        self.p_gen_kw - self.p_load_kw
    }

    pub fn net_kvar(&self) -> f64 {
        self.q_gen_kvar - self.q_load_kvar
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ProfileRow {
    timestamp: String,
    bus_id: String,
    p_gen_kw: f64,
    p_load_kw: f64,
    q_gen_kvar: f64,
    q_load_kvar: f64,
}

/// Per-bus injection series on a uniform 10-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionProfile {
    pub timestamps: Vec<DateTime<FixedOffset>>,
    pub bus_ids: Vec<String>,
    /// Indexed `[timestep][bus]`, aligned with `bus_ids`.
    pub data: Vec<Vec<BusInjection>>,
    index: HashMap<String, usize>,
}

fn profile_error(path: &str, line: u64, message: impl Into<String>) -> GridError {
    GridError::Parse {
        path: path.to_string(),
        line: line as usize,
        column: 0,
        message: message.into(),
    }
}

impl InjectionProfile {
    pub fn new(
        timestamps: Vec<DateTime<FixedOffset>>,
        bus_ids: Vec<String>,
        data: Vec<Vec<BusInjection>>,
    ) -> Result<Self, GridError> {
        if data.len() != timestamps.len() || data.iter().any(|row| row.len() != bus_ids.len()) {
            return Err(GridError::invariant("profile", "<series>", "series lengths differ across buses"));
        }
        for pair in timestamps.windows(2) {
            if (pair[1] - pair[0]).num_minutes() != PROFILE_STEP_MINUTES || (pair[1] - pair[0]).num_seconds() % 60 != 0 {
                return Err(GridError::invariant(
                    "profile",
                    &pair[1].to_rfc3339(),
                    format!("timestamps must be spaced {PROFILE_STEP_MINUTES} minutes apart"),
                ));
            }
        }
        let index = bus_ids.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();
        Ok(Self {
            timestamps,
            bus_ids,
            data,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(reader: R, origin: &str) -> Result<Self, GridError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut timestamps: Vec<DateTime<FixedOffset>> = Vec::new();
        let mut bus_ids: Vec<String> = Vec::new();
        let mut bus_index: HashMap<String, usize> = HashMap::new();
        let mut rows: Vec<HashMap<usize, BusInjection>> = Vec::new();

        let headers = rdr
            .headers()
            .map_err(|e| profile_error(origin, 1, e.to_string()))?
            .clone();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                profile_error(origin, line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row: ProfileRow = record
                .deserialize(Some(&headers))
                .map_err(|e| profile_error(origin, line, e.to_string()))?;
            let ts = DateTime::parse_from_rfc3339(&row.timestamp)
                .map_err(|e| profile_error(origin, line, format!("timestamp '{}': {e}", row.timestamp)))?;
            if timestamps.last() != Some(&ts) {
                if timestamps.contains(&ts) {
                    return Err(profile_error(origin, line, format!("rows for {ts} are not contiguous")));
                }
                timestamps.push(ts);
                rows.push(HashMap::new());
            }
            let b = *bus_index.entry(row.bus_id.clone()).or_insert_with(|| {
                bus_ids.push(row.bus_id.clone());
                bus_ids.len() - 1
            });
            let value = BusInjection {
                p_gen_kw: row.p_gen_kw,
                p_load_kw: row.p_load_kw,
                q_gen_kvar: row.q_gen_kvar,
                q_load_kvar: row.q_load_kvar,
            };
            if rows.last_mut().expect("pushed above").insert(b, value).is_some() {
                return Err(profile_error(origin, line, format!("duplicate row for bus '{}'", row.bus_id)));
            }
        }

        let mut data = Vec::with_capacity(rows.len());
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != bus_ids.len() {
                let missing: Vec<&str> = bus_ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !row.contains_key(i))
                    .map(|(_, b)| b.as_str())
                    .collect();
                return Err(GridError::invariant(
                    "profile",
                    &timestamps[t].to_rfc3339(),
                    format!("missing buses {missing:?}; series must have equal length"),
                ));
            }
            let mut values = vec![BusInjection::default(); bus_ids.len()];
            for (b, v) in row {
                values[b] = v;
            }
            data.push(values);
        }
        Self::new(timestamps, bus_ids, data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for (t, ts) in self.timestamps.iter().enumerate() {
            for (b, bus) in self.bus_ids.iter().enumerate() {
                let v = self.data[t][b];
                w.serialize(ProfileRow {
                    timestamp: ts.to_rfc3339(),
                    bus_id: bus.clone(),
                    p_gen_kw: v.p_gen_kw,
                    p_load_kw: v.p_load_kw,
                    q_gen_kvar: v.q_gen_kvar,
                    q_load_kvar: v.q_load_kvar,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Value at a bus; buses absent from the profile inject nothing.
    pub fn get(&self, t: usize, bus: &str) -> BusInjection {
        self.index
            .get(bus)
            .map(|&b| self.data[t][b])
            .unwrap_or_default()
    }

    pub fn set(&mut self, t: usize, bus: &str, value: BusInjection) {
        let b = match self.index.get(bus) {
            Some(&b) => b,
            None => {
                self.bus_ids.push(bus.to_string());
                self.index.insert(bus.to_string(), self.bus_ids.len() - 1);
                for row in &mut self.data {
                    row.push(BusInjection::default());
                }
                self.bus_ids.len() - 1
            }
        };
        self.data[t][b] = value;
    }

    /// Net complex injections in per-unit for every bus of `grid`.
    pub fn injections(&self, t: usize, grid: &RadialGrid, s_base_kva: f64) -> Vec<Complex64> {
        grid.buses()
            .iter()
            .map(|bus| {
                let v = self.get(t, &bus.id);
                Complex64::new(v.net_kw() / s_base_kva, v.net_kvar() / s_base_kva)
            })
            .collect()
    }
}
