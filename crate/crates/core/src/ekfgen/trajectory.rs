use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tracks longer than this many steps are dropped on ingestion.
pub const DEFAULT_TRACK_CAP: usize = 3000;

const SYNTH_TS: f64 = 1.0 / 25.0;

/// A 2-D position track sampled at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    track_id: String,
    positions: Vec<[f64; 2]>,
}

impl TrajectoryRecord {
    pub fn new(track_id: impl Into<String>, positions: Vec<[f64; 2]>) -> Result<Self> {
        let track_id = track_id.into();
        if positions.len() < 2 {
            return Err(Error::Parse(format!(
                "track {track_id} has {} positions, need at least 2",
                positions.len()
            )));
        }
        if let Some(k) = positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Parse(format!("track {track_id}: non-finite position at step {k}")));
        }
        Ok(Self { track_id, positions })
    }

    pub fn track_id(&self) -> &str {
        &self.track_id
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Piecewise constant-speed, constant-turn-rate tracks sampled at 25 Hz.
/// Each segment lasts 25 to 250 steps with speed in [0, 15] m/s and turn
/// rate in [-0.5, 0.5] rad/s.
pub fn synth_trajectories(count: usize, length: usize, seed: u64) -> Vec<TrajectoryRecord> {
    let length = length.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| {
            let (mut x, mut y) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let mut heading: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let mut positions = Vec::with_capacity(length);
            positions.push([x, y]);
            while positions.len() < length {
                let steps = rng.gen_range(25..=250);
                let speed = rng.gen_range(0.0..=15.0);
                let turn = rng.gen_range(-0.5..=0.5);
                for _ in 0..steps {
                    if positions.len() == length {
                        break;
                    }
                    x += SYNTH_TS * speed * heading.cos();
                    y += SYNTH_TS * speed * heading.sin();
                    heading += SYNTH_TS * turn;
                    positions.push([x, y]);
                }
            }
            TrajectoryRecord {
                track_id: format!("synth-{id}"),
                positions,
            }
        })
        .collect()
}

/// Reads a track table with `trackId`, `xCenter` and `yCenter` columns.
/// Rows of one track are kept in file order; single-row tracks and tracks
/// longer than `cap` are dropped.
pub fn ingest_csv(path: impl AsRef<Path>, cap: usize) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(e).context(format!("opening {}", path.display())))?;
    ingest_csv_reader(file, cap).map_err(|e| e.context(path.display().to_string()))
}

pub fn ingest_csv_reader<R: Read>(reader: R, cap: usize) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (c_id, c_x, c_y) = (column("trackId")?, column("xCenter")?, column("yCenter")?);

    let mut order: Vec<String> = Vec::new();
    let mut tracks: HashMap<String, Vec<[f64; 2]>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let cell = |c: usize, name: &str| {
            record
                .get(c)
                .ok_or_else(|| Error::Parse(format!("row {row}: missing `{name}`")))
        };
        let number = |c: usize, name: &str| -> Result<f64> {
            let text = cell(c, name)?;
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("row {row}: `{name}` is not a number: {text:?}")))
        };
        let id = cell(c_id, "trackId")?.to_string();
        let pos = [number(c_x, "xCenter")?, number(c_y, "yCenter")?];
        tracks
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(pos);
    }
    Ok(order
        .into_iter()
        .filter_map(|id| {
            let positions = tracks.remove(&id)?;
            (positions.len() >= 2 && positions.len() <= cap).then_some(TrajectoryRecord {
                track_id: id,
                positions,
            })
        })
        .collect())
}
