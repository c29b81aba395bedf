//! Versioned JSON and CSV artifacts.
//!
//! Every artifact records the schema version, the config hash and the seed.
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back and writing it again reproduces the same bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eth::FTable;
use crate::expansion::GTermLedger;
use crate::linalg::{c64, CMat};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    data: T,
}

fn check_version(found: u32) -> Result<()> {
    if found > SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found, supported: SCHEMA_VERSION });
    }
    Ok(())
}

pub fn to_json_string<T: Serialize>(meta: &ArtifactMeta, data: &T) -> Result<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, config_hash: meta.config_hash.clone(), seed: meta.seed, data };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<(ArtifactMeta, T)> {
    let v: serde_json::Value = serde_json::from_str(s)?;
    let found = v
        .get("schema_version")
        .and_then(|x| x.as_u64())
        .ok_or_else(|| Error::Format("missing schema_version".into()))?;
    check_version(u32::try_from(found).unwrap_or(u32::MAX))?;
    let env: Envelope<T> = serde_json::from_value(v)?;
    Ok((ArtifactMeta { config_hash: env.config_hash, seed: env.seed }, env.data))
}

pub fn write_json<T: Serialize>(path: &Path, meta: &ArtifactMeta, data: &T) -> Result<()> {
    std::fs::write(path, to_json_string(meta, data)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactMeta, T)> {
    from_json_str(&std::fs::read_to_string(path)?)
}

fn header(meta: &ArtifactMeta) -> String {
    format!("# schema_version={} config_hash={} seed={}\n", SCHEMA_VERSION, meta.config_hash, meta.seed)
}

fn parse_header(line: &str) -> Result<ArtifactMeta> {
    let rest = line.strip_prefix("# ").ok_or_else(|| Error::Format("missing CSV metadata line".into()))?;
    let mut version = None;
    let mut hash = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("schema_version", v)) => version = v.parse::<u32>().ok(),
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse::<u64>().ok(),
            _ => {}
        }
    }
    check_version(version.ok_or_else(|| Error::Format("bad schema_version in CSV".into()))?)?;
    Ok(ArtifactMeta {
        config_hash: hash.ok_or_else(|| Error::Format("missing config_hash in CSV".into()))?,
        seed: seed.ok_or_else(|| Error::Format("missing seed in CSV".into()))?,
    })
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")))
}

/// Columns `t, re_a_b, im_a_b` for every (a, b), a slow.
pub fn rdm_csv(meta: &ArtifactMeta, times: &[f64], rho: &[CMat]) -> Result<String> {
    if times.len() != rho.len() {
        return Err(Error::Dimension("times and trajectory differ in length".into()));
    }
    let d = rho.first().map_or(0, |r| r.nrows());
    let mut s = header(meta);
    s.push('t');
    for a in 0..d {
        for b in 0..d {
            s.push_str(&format!(",re_{a}_{b},im_{a}_{b}"));
        }
    }
    s.push('\n');
    for (t, r) in times.iter().zip(rho) {
        s.push_str(&num(*t));
        for a in 0..d {
            for b in 0..d {
                s.push(',');
                s.push_str(&num(r[(a, b)].re));
                s.push(',');
                s.push_str(&num(r[(a, b)].im));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub type RdmSeries = (ArtifactMeta, Vec<f64>, Vec<CMat>);

pub fn parse_rdm_csv(s: &str) -> Result<RdmSeries> {
    let mut lines = s.lines();
    let meta = parse_header(lines.next().unwrap_or(""))?;
    let cols = lines.next().ok_or_else(|| Error::Format("missing CSV column header".into()))?.split(',').count();
    let d = ((cols.saturating_sub(1) / 2) as f64).sqrt().round() as usize;
    if cols != 1 + 2 * d * d {
        return Err(Error::Format(format!("{cols} columns do not describe a square RDM")));
    }
    let mut times = Vec::new();
    let mut rho = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let v: Vec<f64> = line.split(',').map(parse_num).collect::<Result<_>>()?;
        if v.len() != cols {
            return Err(Error::Format(format!("row has {} fields, expected {cols}", v.len())));
        }
        times.push(v[0]);
        rho.push(CMat::from_fn(d, d, |a, b| {
            let k = 1 + 2 * (a * d + b);
            c64::new(v[k], v[k + 1])
        }));
    }
    Ok((meta, times, rho))
}

pub fn write_rdm_csv(path: &Path, meta: &ArtifactMeta, times: &[f64], rho: &[CMat]) -> Result<()> {
    std::fs::write(path, rdm_csv(meta, times, rho)?)?;
    Ok(())
}

pub fn read_rdm_csv(path: &Path) -> Result<RdmSeries> {
    parse_rdm_csv(&std::fs::read_to_string(path)?)
}

/// Columns `t_m, k, l, eta, alpha, beta, re, im`.
pub fn ledger_csv(meta: &ArtifactMeta, ledgers: &[GTermLedger]) -> String {
    let mut s = header(meta);
    s.push_str("t_m,k,l,eta,alpha,beta,re,im\n");
    for led in ledgers {
        for r in led.rows() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                num(r.t),
                r.k,
                r.l,
                r.eta,
                r.alpha,
                r.beta,
                num(r.re),
                num(r.im)
            ));
        }
    }
    s
}

/// Columns `e0, omega, f2, count` at the cell centers, e0 slow.
pub fn f_table_csv(meta: &ArtifactMeta, ft: &FTable) -> String {
    let mut s = header(meta);
    s.push_str("e0,omega,f2,count\n");
    for a in 0..ft.grid.n_e0() {
        for b in 0..ft.grid.n_omega() {
            let k = ft.index(a, b);
            s.push_str(&format!("{},{},{},{}\n", num(ft.e0_center(a)), num(ft.omega_center(b)), num(ft.f2[k]), ft.count[k]));
        }
    }
    s
}

/// Reads the metadata line of any CSV artifact.
pub fn csv_meta(s: &str) -> Result<ArtifactMeta> {
    parse_header(s.lines().next().unwrap_or(""))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn meta() -> ArtifactMeta {
        ArtifactMeta { config_hash: "ab12".into(), seed: 9 }
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let data = vec![0.1, 1.0 / 3.0, 1e-300, -2.5e10];
        let s = to_json_string(&meta(), &data).unwrap();
        let (m, back): (ArtifactMeta, Vec<f64>) = from_json_str(&s).unwrap();
        assert_eq!(m, meta());
        assert_eq!(back, data);
        assert_eq!(to_json_string(&m, &back).unwrap(), s);
    }

    #[test]
    fn future_versions_are_rejected() {
        let s = to_json_string(&meta(), &1.0).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(from_json_str::<f64>(&s), Err(Error::SchemaVersion { found: 2, supported: 1 })));
        let c = rdm_csv(&meta(), &[0.0], &[CMat::zeros(1, 1)]).unwrap().replace("schema_version=1", "schema_version=7");
        assert!(matches!(parse_rdm_csv(&c), Err(Error::SchemaVersion { found: 7, .. })));
        assert!(matches!(from_json_str::<f64>("{\"data\": 1.0}"), Err(Error::Format(_))));
    }

    #[test]
    fn rdm_csv_round_trip() {
        let rho: Vec<CMat> = (0..5)
            .map(|k| CMat::from_fn(2, 2, |a, b| c64::new(0.1 * k as f64 + a as f64 / 3.0, b as f64 * 1e-17)))
            .collect();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
        let s = rdm_csv(&meta(), &times, &rho).unwrap();
        let (m, t2, r2) = parse_rdm_csv(&s).unwrap();
        assert_eq!(m, meta());
        assert_eq!(t2, times);
        for (a, b) in rho.iter().zip(&r2) {
            assert_eq!(max_abs_diff(a, b), 0.0);
        }
        assert_eq!(rdm_csv(&m, &t2, &r2).unwrap(), s);
        assert!(parse_rdm_csv(&s.replace("re_1_1,", "")).is_err());
    }
}
