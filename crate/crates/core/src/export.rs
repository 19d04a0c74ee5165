//! Artifact dumps written by missions and their conversion to PGM and CSV.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{CellIndex, CumulativeMap};
use crate::planner::TraceNode;
use crate::sim::{write_exec_csv, ExecRecord};

/// Grey level used for never-observed cells: the uninformative prior 0.5.
pub const UNKNOWN_GREY: u8 = 128;

/// Serialised cumulative map; `None` marks unknown cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDump {
    pub resolution: f64,
    pub dim: usize,
    /// World position of the map frame origin.
    pub origin: Vec<f64>,
    pub lo: CellIndex,
    pub size: [usize; 3],
    pub data: Vec<Option<f64>>,
}

impl MapDump {
    pub fn from_map(map: &CumulativeMap) -> Self {
        let g = map.grid();
        MapDump {
            resolution: map.resolution(),
            dim: map.dim(),
            origin: map.frame().position().to_vec(),
            lo: g.lo,
            size: g.size,
            data: g.data.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
        }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.size[1] + j) * self.size[2] + k
    }

    /// Probability at an integer cell, `None` outside the grid or unknown.
    pub fn get(&self, c: &CellIndex) -> Option<f64> {
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let o = c[d] - self.lo[d];
            if o < 0 || o as usize >= self.size[d] {
                return None;
            }
            idx[d] = o as usize;
        }
        self.data[self.index(idx[0], idx[1], idx[2])]
    }

    /// World coordinates of a cell centre.
    pub fn cell_center(&self, c: &CellIndex) -> Vec<f64> {
        (0..self.dim).map(|d| (c[d] as f64 + 0.5) * self.resolution + self.origin.get(d).copied().unwrap_or(0.0)).collect()
    }

    /// Cell containing a world point.
    pub fn cell_of(&self, p: &[f64]) -> CellIndex {
        let mut c = [0i64; 3];
        for d in 0..self.dim {
            c[d] = ((p[d] - self.origin[d]) / self.resolution).floor() as i64;
        }
        c
    }

    /// 8-bit image of one z layer (the middle one when `z` is `None`);
    /// rows run from high to low y. Returns `(width, height, pixels)`.
    pub fn slice(&self, z: Option<i64>) -> (usize, usize, Vec<u8>) {
        let k = z.unwrap_or(self.lo[2] + self.size[2] as i64 / 2);
        let (w, h) = (self.size[0], self.size[1]);
        let mut px = Vec::with_capacity(w * h);
        for row in 0..h {
            let j = self.lo[1] + (h - 1 - row) as i64;
            for col in 0..w {
                let i = self.lo[0] + col as i64;
                px.push(match self.get(&[i, j, k]) {
                    Some(p) => (p.clamp(0.0, 1.0) * 255.0).round() as u8,
                    None => UNKNOWN_GREY,
                });
            }
        }
        (w, h, px)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, value).map_err(|e| Error::Invariant(e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    serde_json::from_reader(f).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Binary PGM (P5).
pub fn write_pgm(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::invalid("pixel count does not match image size"));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Parse a binary PGM into `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = || Error::invalid(format!("{} is not a binary PGM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

/// Known cells as `x,y[,z],p` rows in world coordinates.
pub fn write_map_csv(map: &MapDump, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let axes = ["x", "y", "z"];
    writeln!(f, "{},p", axes[..map.dim].join(","))?;
    for i in 0..map.size[0] {
        for j in 0..map.size[1] {
            for k in 0..map.size[2] {
                if let Some(p) = map.data[map.index(i, j, k)] {
                    let c = [map.lo[0] + i as i64, map.lo[1] + j as i64, map.lo[2] + k as i64];
                    let xyz: Vec<String> = map.cell_center(&c).iter().map(|v| format!("{v:.4}")).collect();
                    writeln!(f, "{},{p:.6}", xyz.join(","))?;
                }
            }
        }
    }
    Ok(())
}

/// One row per node: `id,parent,x,y[,z],cost,active`.
pub fn write_tree_csv(nodes: &[TraceNode], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = nodes.first().map_or(2, |n| n.position.len());
    let axes = ["x", "y", "z"];
    writeln!(f, "id,parent,{},cost,active", axes[..dim.min(3)].join(","))?;
    for n in nodes {
        let pos: Vec<String> = n.position.iter().map(|v| format!("{v:.6}")).collect();
        let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
        writeln!(f, "{},{parent},{},{:.6},{}", n.id, pos.join(","), n.cost, n.active)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Map,
    Tree,
    Trajectory,
}

impl FromStr for Artifact {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Artifact::Map),
            "tree" => Ok(Artifact::Tree),
            "trajectory" => Ok(Artifact::Trajectory),
            _ => Err(Error::invalid(format!("unknown artifact '{s}' (map, tree, trajectory)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Pgm,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(Format::Pgm),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::invalid(format!("unknown format '{s}' (pgm, csv)"))),
        }
    }
}

/// Convert a JSON dump written by a mission to PGM or CSV.
pub fn export(artifact: Artifact, format: Format, input: &Path, output: &Path, z: Option<i64>) -> Result<()> {
    match (artifact, format) {
        (Artifact::Map, Format::Pgm) => {
            let m: MapDump = read_json(input)?;
            let (w, h, px) = m.slice(z);
            write_pgm(w, h, &px, output)
        }
        (Artifact::Map, Format::Csv) => write_map_csv(&read_json(input)?, output),
        (Artifact::Tree, Format::Csv) => write_tree_csv(&read_json::<Vec<TraceNode>>(input)?, output),
        (Artifact::Trajectory, Format::Csv) => write_exec_csv(&read_json::<Vec<ExecRecord>>(input)?, output),
        (a, f) => Err(Error::invalid(format!("{a:?} cannot be exported as {f:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PoseBelief, PoseGroup};
    use crate::mapping::{DenseGrid, FusionParams};

    #[test]
    fn pgm_round_trip_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = DenseGrid::new([0, 0, 0], [3, 2, 1], f64::NAN);
        *g.get_mut(&[0, 1, 0]).unwrap() = 1.0;
        *g.get_mut(&[2, 0, 0]).unwrap() = 0.0;
        let map = CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.5, 0.0).unwrap();
        let dump = MapDump::from_map(&map);
        let (w, h, px) = dump.slice(None);
        assert_eq!((w, h), (3, 2));
        // top-left pixel is (x 0, y 1)
        assert_eq!(px, vec![255, UNKNOWN_GREY, UNKNOWN_GREY, UNKNOWN_GREY, UNKNOWN_GREY, 0]);
        let p = dir.path().join("m.pgm");
        write_pgm(w, h, &px, &p).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (w, h, px));
    }

    #[test]
    fn empty_map_is_uniform_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let map = CumulativeMap::empty(PoseBelief::identity(PoseGroup::Se2), 0.5, &FusionParams::default());
        let js = dir.path().join("map.json");
        write_json(&MapDump::from_map(&map), &js).unwrap();
        let out = dir.path().join("map.pgm");
        export(Artifact::Map, Format::Pgm, &js, &out, None).unwrap();
        let (_, _, px) = read_pgm(&out).unwrap();
        assert!(px.iter().all(|v| *v == UNKNOWN_GREY));
    }

    #[test]
    fn tree_csv_has_one_row_per_node() {
        let dir = tempfile::tempdir().unwrap();
        let nodes: Vec<TraceNode> = (0..7)
            .map(|id| TraceNode { id, parent: id.checked_sub(1), position: vec![id as f64, 0.0], cost: id as f64, active: true })
            .collect();
        let js = dir.path().join("tree.json");
        write_json(&nodes, &js).unwrap();
        let out = dir.path().join("tree.csv");
        export(Artifact::Tree, Format::Csv, &js, &out, None).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 1 + nodes.len());
        assert!(export(Artifact::Tree, Format::Pgm, &js, &out, None).is_err());
        assert!("mesh".parse::<Artifact>().is_err());
        assert!("png".parse::<Format>().is_err());
    }
}
