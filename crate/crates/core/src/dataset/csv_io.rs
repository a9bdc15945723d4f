//! CSV interchange for driving traces.
//!
//! Canonical columns: `client_id,t,v_T,v_P,I_P,I_TL,d_P,d_TL,s_TL,v_S,I_S,d_S,
//! throttle,brake,steer,r1,r2,r3` followed by `s_TL_f1..s_TL_fH`. Booleans are
//! `0`/`1`, signal states `0` red, `1` yellow, `2` green. `client_id` is
//! optional; without it the whole file is one client.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::record::DrivingRecord;
use crate::error::{Error, Result};
use crate::ClientId;

pub const SCALAR_COLUMNS: [&str; 17] = [
    "t", "v_T", "v_P", "I_P", "I_TL", "d_P", "d_TL", "s_TL", "v_S", "I_S", "d_S", "throttle",
    "brake", "steer", "r1", "r2", "r3",
];

pub fn future_column(j: usize) -> String {
    format!("s_TL_f{j}")
}

/// Maps canonical column names to the names used in a particular file.
pub type ColumnMap = HashMap<String, String>;

pub fn write_csv<W: Write>(out: W, clients: &[(ClientId, Vec<DrivingRecord>)]) -> Result<()> {
    let horizon = clients
        .iter()
        .flat_map(|(_, r)| r.first())
        .map(|r| r.light_future.len())
        .next()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["client_id".to_string()];
    header.extend(SCALAR_COLUMNS.iter().map(|s| s.to_string()));
    header.extend((1..=horizon).map(future_column));
    w.write_record(&header)?;
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    for (id, records) in clients {
        for r in records {
            if r.light_future.len() != horizon {
                return Err(Error::Validation(format!(
                    "client {id} t={}: {} future signal states, expected {horizon}",
                    r.t,
                    r.light_future.len()
                )));
            }
            let mut row = vec![
                id.to_string(),
                r.t.to_string(),
                r.v_target.to_string(),
                r.v_preceding.to_string(),
                b(r.has_preceding),
                b(r.has_light),
                r.d_preceding.to_string(),
                r.d_light.to_string(),
                r.light_state.to_string(),
                r.v_side.to_string(),
                b(r.has_side),
                r.d_side.to_string(),
                r.throttle.to_string(),
                r.brake.to_string(),
                r.steer.to_string(),
                r.r_cars.to_string(),
                r.r_heavy.to_string(),
                r.r_lights.to_string(),
            ];
            row.extend(r.light_future.iter().map(|s| s.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(path: &Path, clients: &[(ClientId, Vec<DrivingRecord>)]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), clients)
}

struct Columns {
    client: Option<usize>,
    scalars: [usize; 17],
    futures: Vec<usize>,
}

fn resolve(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Columns> {
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let name = |canon: &str| map.get(canon).map(String::as_str).unwrap_or(canon).to_string();
    let find = |canon: &str| index.get(name(canon).as_str()).copied();
    let mut scalars = [0; 17];
    for (slot, canon) in scalars.iter_mut().zip(SCALAR_COLUMNS) {
        *slot = find(canon).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{}`", name(canon)),
        })?;
    }
    let mut futures = Vec::new();
    while let Some(i) = find(&future_column(futures.len() + 1)) {
        futures.push(i);
    }
    Ok(Columns {
        client: find("client_id"),
        scalars,
        futures,
    })
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse {
        line: line as usize,
        message,
    }
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str> {
    row.get(i)
        .map(str::trim)
        .ok_or_else(|| parse_err(line, format!("missing field {}", i + 1)))
}

fn num(row: &csv::StringRecord, i: usize, line: u64, col: &str) -> Result<f64> {
    let s = field(row, i, line)?;
    s.parse::<f64>()
        .map_err(|_| parse_err(line, format!("column `{col}`: `{s}` is not a number")))
}

fn flag(row: &csv::StringRecord, i: usize, line: u64, col: &str) -> Result<bool> {
    match field(row, i, line)? {
        "0" | "false" | "False" => Ok(false),
        "1" | "true" | "True" => Ok(true),
        s => Err(parse_err(line, format!("column `{col}`: `{s}` is not a boolean"))),
    }
}

fn state(row: &csv::StringRecord, i: usize, line: u64, col: &str) -> Result<u8> {
    let s = field(row, i, line)?;
    match s.parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 || v == 2.0 => Ok(v as u8),
        _ => Err(parse_err(line, format!("column `{col}`: `{s}` is not a signal state"))),
    }
}

/// Reads per-client traces sorted by client id then time.
///
/// Records are canonicalised (detection cutoff, sentinels) and validated.
pub fn read_csv<R: Read>(input: R, map: &ColumnMap) -> Result<Vec<(ClientId, Vec<DrivingRecord>)>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = resolve(&headers, map)?;
    let mut clients: BTreeMap<ClientId, Vec<DrivingRecord>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let s = &cols.scalars;
        let c = SCALAR_COLUMNS;
        let t = num(&row, s[0], line, c[0])?;
        if t < 0.0 || t.fract() != 0.0 || t > f64::from(u32::MAX) {
            return Err(parse_err(line, format!("column `t`: {t} is not a whole second")));
        }
        let id = match cols.client {
            Some(i) => {
                let v = field(&row, i, line)?;
                ClientId(v.parse().map_err(|_| parse_err(line, format!("bad client id `{v}`")))?)
            }
            None => ClientId(0),
        };
        let mut r = DrivingRecord {
            t: t as u32,
            v_target: num(&row, s[1], line, c[1])?,
            v_preceding: num(&row, s[2], line, c[2])?,
            has_preceding: flag(&row, s[3], line, c[3])?,
            has_light: flag(&row, s[4], line, c[4])?,
            d_preceding: num(&row, s[5], line, c[5])?,
            d_light: num(&row, s[6], line, c[6])?,
            light_state: state(&row, s[7], line, c[7])?,
            light_future: Vec::with_capacity(cols.futures.len()),
            v_side: num(&row, s[8], line, c[8])?,
            has_side: flag(&row, s[9], line, c[9])?,
            d_side: num(&row, s[10], line, c[10])?,
            throttle: num(&row, s[11], line, c[11])?,
            brake: num(&row, s[12], line, c[12])?,
            steer: num(&row, s[13], line, c[13])?,
            r_cars: num(&row, s[14], line, c[14])?,
            r_heavy: num(&row, s[15], line, c[15])?,
            r_lights: num(&row, s[16], line, c[16])?,
        };
        for (j, &i) in cols.futures.iter().enumerate() {
            r.light_future.push(state(&row, i, line, &future_column(j + 1))?);
        }
        r.canonicalize();
        r.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
            e => e,
        })?;
        clients.entry(id).or_default().push(r);
    }
    let mut out: Vec<_> = clients.into_iter().collect();
    for (id, records) in &mut out {
        records.sort_by_key(|r| r.t);
        if let Some(w) = records.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::Validation(format!("client {id}: duplicate timestamp {}", w[0].t)));
        }
    }
    Ok(out)
}

pub fn load_csv(path: &Path, map: &ColumnMap) -> Result<Vec<(ClientId, Vec<DrivingRecord>)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::record::sample_record;

    #[test]
    fn round_trip_preserves_records() {
        let mut a = sample_record(0, 3.5, 2);
        a.has_preceding = true;
        a.d_preceding = 12.25;
        a.v_preceding = 4.0;
        a.light_future = vec![0, 1];
        let b = sample_record(1, 0.1 + 0.2, 2);
        let data = vec![(ClientId(4), vec![a, b])];
        let mut buf = Vec::new();
        write_csv(&mut buf, &data).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnMap::new()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn header_only_gives_no_clients() {
        let header = format!("{}\n", SCALAR_COLUMNS.join(","));
        assert!(read_csv(header.as_bytes(), &ColumnMap::new()).unwrap().is_empty());
    }

    #[test]
    fn malformed_number_reports_line() {
        let header = SCALAR_COLUMNS.join(",");
        let good = "0,1,1,0,0,100,100,2,1,0,100,0,0,0,0,0,0";
        let bad = "1,x,1,0,0,100,100,2,1,0,100,0,0,0,0,0,0";
        let text = format!("{header}\n{good}\n{bad}\n");
        match read_csv(text.as_bytes(), &ColumnMap::new()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn column_map_renames() {
        let header = SCALAR_COLUMNS.join(",").replace("v_T", "speed");
        let text = format!("{header}\n0,2,2,0,0,100,100,2,2,0,100,0,0,0,0,0,0\n");
        let mut map = ColumnMap::new();
        map.insert("v_T".into(), "speed".into());
        let got = read_csv(text.as_bytes(), &map).unwrap();
        assert_eq!(got[0].1[0].v_target, 2.0);
    }
}
