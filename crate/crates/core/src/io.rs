//! JSON formats for MDPs and feature maps, and the CSV layout of solver traces.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::saddle::FeatureMaps;

/// On-disk MDP: `transitions[x][a][x']`, `rewards[x][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    /// Allows rewards outside `[0, 1]`.
    #[serde(default)]
    pub relaxed_rewards: bool,
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            transitions: mdp.transitions_nested(),
            rewards: mdp.rewards_nested(),
            relaxed_rewards: mdp.has_relaxed_rewards(),
        }
    }
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<Mdp> {
        if self.transitions.len() != self.num_states || self.rewards.len() != self.num_states {
            return Err(Error::InvalidMdp(format!(
                "num_states = {} but transitions/rewards have {}/{} rows",
                self.num_states,
                self.transitions.len(),
                self.rewards.len()
            )));
        }
        if let Some(x) = self.transitions.iter().position(|t| t.len() != self.num_actions) {
            return Err(Error::InvalidMdp(format!("transitions[{x}] does not have num_actions entries")));
        }
        if self.relaxed_rewards {
            Mdp::with_relaxed_rewards(&self.transitions, &self.rewards)
        } else {
            Mdp::new(&self.transitions, &self.rewards)
        }
    }
}

/// On-disk features: row-major `f` (`|X| x N`) and `w` (`M x |X||A|`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesFile {
    pub f: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl From<&FeatureMaps> for FeaturesFile {
    fn from(features: &FeatureMaps) -> Self {
        Self { f: to_rows(features.f()), w: to_rows(features.w()) }
    }
}

impl FeaturesFile {
    pub fn into_features(self) -> Result<FeatureMaps> {
        FeatureMaps::new(from_rows("f", &self.f)?, from_rows("w", &self.w)?)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidFeatures(format!("{name}[{i}] has {} entries, expected {ncols}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_mdp(path: &Path) -> Result<Mdp> {
    let file: MdpFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.into_mdp()
}

pub fn write_mdp(path: &Path, mdp: &Mdp) -> Result<()> {
    write_json(path, &MdpFile::from(mdp))
}

pub fn read_features(path: &Path) -> Result<FeatureMaps> {
    let file: FeaturesFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.into_features()
}

pub fn write_features(path: &Path, features: &FeatureMaps) -> Result<()> {
    write_json(path, &FeaturesFile::from(features))
}

/// Pretty-printed JSON, written to a sibling temp file and renamed into place.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Column names of a trace CSV, after the leading `t`.
pub const TRACE_COLUMNS: [&str; 6] =
    ["gap", "suboptimality", "flow_residual_l1", "bound_rhs", "rho_t", "last_suboptimality"];

/// Writes `t` followed by [`TRACE_COLUMNS`], values with 17 significant digits.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    writeln!(out, "t,{}", TRACE_COLUMNS.join(","))?;
    for (t, values) in rows {
        write!(out, "{t}")?;
        for v in values {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mdp_round_trip_is_exact() {
        let mdp = Mdp::new(
            &[vec![vec![0.1, 0.9], vec![1.0 / 3.0, 2.0 / 3.0]], vec![vec![0.7, 0.3], vec![0.0, 1.0]]],
            &[vec![0.123456789, 0.0], vec![1.0, 0.1]],
        )
        .unwrap();
        let text = serde_json::to_string(&MdpFile::from(&mdp)).unwrap();
        let back = serde_json::from_str::<MdpFile>(&text).unwrap().into_mdp().unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn ragged_features_are_rejected() {
        let file = FeaturesFile { f: vec![vec![1.0], vec![]], w: vec![vec![1.0]] };
        assert!(file.into_features().is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[(1, vec![0.5; 6])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
        assert!(lines.next().unwrap().starts_with("1,5.0000000000000000e-1"));
    }
}
