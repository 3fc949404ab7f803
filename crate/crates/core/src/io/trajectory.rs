//! Trajectory table: `tick,id,class,i,l,v,influenced,coalition`, one row per
//! active vehicle per tick, sorted by `(tick, id)`. `influenced` is `0`/`1`;
//! `coalition` holds the central vehicle's id or is empty.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{VehicleClass, VehicleId};
use crate::engine::TrajectoryRow;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    tick: u32,
    id: u32,
    class: VehicleClass,
    i: i32,
    l: i32,
    v: i32,
    influenced: u8,
    coalition: Option<u32>,
}

pub fn write<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(Record {
            tick: r.tick,
            id: r.id.0,
            class: r.class,
            i: r.i,
            l: r.l,
            v: r.v,
            influenced: u8::from(r.influenced),
            coalition: r.coalition.map(|c| c.0),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_string(rows: &[TrajectoryRow]) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads a table and checks its ordering.
pub fn read<R: Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<Record>() {
        let r = rec?;
        rows.push(TrajectoryRow {
            tick: r.tick,
            id: VehicleId(r.id),
            class: r.class,
            i: r.i,
            l: r.l,
            v: r.v,
            influenced: r.influenced != 0,
            coalition: r.coalition.map(VehicleId),
        });
    }
    if let Some(k) = rows.windows(2).position(|w| (w[0].tick, w[0].id) >= (w[1].tick, w[1].id)) {
        return Err(Error::Parse(format!(
            "trajectory rows {} and {} are not sorted by (tick, id)",
            k + 1,
            k + 2
        )));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tick: u32, id: u32, coalition: Option<u32>) -> TrajectoryRow {
        TrajectoryRow {
            tick,
            id: VehicleId(id),
            class: if id == 0 { VehicleClass::Emv } else { VehicleClass::Ov },
            i: 3 + tick as i32,
            l: 2,
            v: 1,
            influenced: coalition.is_some(),
            coalition: coalition.map(VehicleId),
        }
    }

    #[test]
    fn header_and_round_trip() {
        let rows = vec![row(0, 0, None), row(0, 1, Some(1)), row(1, 0, None)];
        let text = to_string(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tick,id,class,i,l,v,influenced,coalition"));
        assert_eq!(lines.next(), Some("0,0,EMV,3,2,1,0,"));
        assert_eq!(lines.next(), Some("0,1,OV,3,2,1,1,1"));
        assert_eq!(read(text.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn unsorted_rows_are_rejected() {
        let text = to_string(&[row(1, 0, None), row(0, 1, None)]).unwrap();
        assert!(read(text.as_bytes()).is_err());
    }
}
