//! Run directories: field and front CSV dumps, metadata, reports.
//!
//! Layout of a run directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.echo` | resolved config with every default written out |
//! | `metadata.json` | schema version, content hash of `config.echo`, grid, time axis, scenario, run statistics |
//! | `field.csv` | `x1..xn,t,u,mask`, one row per node and stored level |
//! | `front.csv` | `t,x1..x_{n-1},s`, one row per front column and stored level |
//! | `report.json` | run summary or analysis report |
//! | `dashboard.svg` | analysis plots |
//! | `certificates/*.json` | barrier certificates |
//!
//! Floats are written in shortest round-trip form, so a loaded run is
//! bit-identical to the one saved.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, SpaceTimeField, TimeAxis};
use crate::stefan::{FrontGraph, RunStats, SpaceTimeSolution, StefanScenario};

pub const SCHEMA_VERSION: u32 = 1;

pub const CONFIG_ECHO: &str = "config.echo";
pub const METADATA: &str = "metadata.json";
pub const FIELD_CSV: &str = "field.csv";
pub const FRONT_CSV: &str = "front.csv";
pub const REPORT: &str = "report.json";
pub const DASHBOARD: &str = "dashboard.svg";
pub const CERTIFICATES: &str = "certificates";

/// Git-style blob hash: `sha256("blob <len>\0" + content)`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("sha256:{}", hex::encode(h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontLayout {
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub h: f64,
    pub orientation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema_version: u32,
    pub input_hash: String,
    pub grid: Grid,
    pub time: TimeAxis,
    pub front: FrontLayout,
    pub scenario: StefanScenario,
    pub stats: RunStats,
    pub artifacts: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: format!("{}: {message}", path.display()),
    }
}

pub fn write_field_csv(field: &SpaceTimeField, path: &Path) -> Result<()> {
    let n = field.dim();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (1..=n).map(|d| format!("x{d}")).collect();
    header.extend(["t", "u", "mask"].map(String::from));
    let mut line = header.join(",");
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    let ns = field.nodes();
    let mut x = vec![0.0; n];
    for k in 0..field.time.levels {
        let t = field.time.time(k);
        for node in 0..ns {
            field.fill_position(node, &mut x);
            line.clear();
            for v in &x {
                write!(line, "{v:?},").expect("string write");
            }
            writeln!(
                line,
                "{t:?},{:?},{}",
                field.value(k, node),
                u8::from(field.masked(k, node))
            )
            .expect("string write");
            w.write_all(line.as_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("bad number {s:?}: {e}")))
}

/// Reads a field dump laid out on `grid` and `time`.
pub fn read_field_csv(path: &Path, grid: Grid, time: TimeAxis) -> Result<SpaceTimeField> {
    let n = grid.dim();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let ns = grid.len();
    let total = ns * time.levels;
    let mut values = Vec::with_capacity(total);
    let mut mask = Vec::with_capacity(total);
    let tol = 1e-9 * grid.h;
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.split(',').count() == n + 3 => {}
        Some(Ok(h)) => {
            return Err(parse_err(
                path,
                1,
                format!("header {h:?} does not have {} columns", n + 3),
            ))
        }
        Some(Err(e)) => return Err(io_err(path)(e)),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    for (i, l) in lines.enumerate() {
        let lineno = i + 2;
        let l = l.map_err(io_err(path))?;
        if l.is_empty() {
            continue;
        }
        let idx = values.len();
        if idx >= total {
            return Err(parse_err(
                path,
                lineno,
                format!("more than the expected {total} rows"),
            ));
        }
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != n + 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} columns, found {}", n + 3, cols.len()),
            ));
        }
        let (k, node) = (idx / ns, idx % ns);
        let pos = grid.position_of(node);
        for d in 0..n {
            let v = parse_f64(path, lineno, cols[d])?;
            if (v - pos[d]).abs() > tol {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("coordinate {v} does not match grid node {:?}", pos),
                ));
            }
        }
        let t = parse_f64(path, lineno, cols[n])?;
        if (t - time.time(k)).abs() > 1e-9 * time.dt.max(1e-300) + 1e-15 {
            return Err(parse_err(
                path,
                lineno,
                format!("time {t} does not match level {k}"),
            ));
        }
        values.push(parse_f64(path, lineno, cols[n + 1])?);
        mask.push(match cols[n + 2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("mask must be 0 or 1, found {other:?}"),
                ))
            }
        });
    }
    if values.len() != total {
        return Err(parse_err(
            path,
            values.len() + 2,
            format!("truncated: {} of {total} rows", values.len()),
        ));
    }
    SpaceTimeField::from_parts(grid, time, values, mask)
}

pub fn write_front_csv(front: &FrontGraph, path: &Path) -> Result<()> {
    let m = front.shape.len();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|d| format!("x{d}")));
    header.push("s".into());
    let mut line = header.join(",");
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    for k in 0..front.time.levels {
        let t = front.time.time(k);
        for c in 0..front.ncols() {
            line.clear();
            write!(line, "{t:?},").expect("string write");
            for v in front.column_position(c) {
                write!(line, "{v:?},").expect("string write");
            }
            writeln!(line, "{:?}", front.height(k, c)).expect("string write");
            w.write_all(line.as_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_front_csv(path: &Path, layout: &FrontLayout, time: TimeAxis) -> Result<FrontGraph> {
    let m = layout.shape.len();
    let ncols: usize = layout.shape.iter().product();
    let total = ncols * time.levels;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.split(',').count() == m + 2 => {}
        Some(h) => {
            return Err(parse_err(
                path,
                1,
                format!("header {h:?} does not have {} columns", m + 2),
            ))
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let mut heights = Vec::with_capacity(total);
    for (i, l) in lines.enumerate() {
        let lineno = i + 2;
        if l.is_empty() {
            continue;
        }
        if heights.len() >= total {
            return Err(parse_err(
                path,
                lineno,
                format!("more than the expected {total} rows"),
            ));
        }
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != m + 2 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} columns, found {}", m + 2, cols.len()),
            ));
        }
        parse_f64(path, lineno, cols[0])?;
        for c in &cols[1..=m] {
            parse_f64(path, lineno, c)?;
        }
        heights.push(parse_f64(path, lineno, cols[m + 1])?);
    }
    if heights.len() != total {
        return Err(parse_err(
            path,
            heights.len() + 2,
            format!("truncated: {} of {total} rows", heights.len()),
        ));
    }
    Ok(FrontGraph {
        origin: layout.origin.clone(),
        shape: layout.shape.clone(),
        h: layout.h,
        time,
        heights,
        orientation: layout.orientation.clone(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e))
}

/// Writes `config.echo`, `metadata.json`, `field.csv` and `front.csv` into `dir`.
pub fn save_run(dir: &Path, config_echo: &str, sol: &SpaceTimeSolution) -> Result<RunMetadata> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let echo_path = dir.join(CONFIG_ECHO);
    fs::write(&echo_path, config_echo).map_err(io_err(&echo_path))?;
    write_field_csv(&sol.field, &dir.join(FIELD_CSV))?;
    write_front_csv(&sol.front, &dir.join(FRONT_CSV))?;
    let meta = RunMetadata {
        schema_version: SCHEMA_VERSION,
        input_hash: content_hash(config_echo.as_bytes()),
        grid: sol.field.grid.clone(),
        time: sol.field.time.clone(),
        front: FrontLayout {
            origin: sol.front.origin.clone(),
            shape: sol.front.shape.clone(),
            h: sol.front.h,
            orientation: sol.front.orientation.clone(),
        },
        scenario: sol.scenario.clone(),
        stats: sol.stats.clone(),
        artifacts: vec![CONFIG_ECHO.into(), FIELD_CSV.into(), FRONT_CSV.into()],
    };
    write_json(&meta, &dir.join(METADATA))?;
    Ok(meta)
}

/// Metadata of an output directory that holds no stored solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputMetadata {
    pub schema_version: u32,
    pub input_hash: String,
    pub artifacts: Vec<String>,
}

/// Writes `config.echo` and a `metadata.json` carrying its hash.
pub fn save_echo(dir: &Path, config_echo: &str) -> Result<OutputMetadata> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let echo_path = dir.join(CONFIG_ECHO);
    fs::write(&echo_path, config_echo).map_err(io_err(&echo_path))?;
    let meta = OutputMetadata {
        schema_version: SCHEMA_VERSION,
        input_hash: content_hash(config_echo.as_bytes()),
        artifacts: vec![CONFIG_ECHO.into()],
    };
    write_json(&meta, &dir.join(METADATA))?;
    Ok(meta)
}

/// Adds `name` to the artifact list in `metadata.json`, whichever kind it is.
pub fn register_artifact(dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(METADATA);
    let mut meta: serde_json::Value = read_json(&path)?;
    let list = meta
        .get_mut("artifacts")
        .and_then(|a| a.as_array_mut())
        .ok_or_else(|| Error::Config(format!("{} has no artifact list", path.display())))?;
    if !list.iter().any(|a| a.as_str() == Some(name)) {
        list.push(name.into());
        write_json(&meta, &path)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// Loads a run saved by [`save_run`], refusing other schema versions.
pub fn load_run(dir: &Path) -> Result<(RunMetadata, String, SpaceTimeSolution)> {
    let meta_path = dir.join(METADATA);
    let probe: VersionProbe = read_json(&meta_path)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let meta: RunMetadata = read_json(&meta_path)?;
    let echo_path = dir.join(CONFIG_ECHO);
    let echo = fs::read_to_string(&echo_path).map_err(io_err(&echo_path))?;
    if content_hash(echo.as_bytes()) != meta.input_hash {
        return Err(Error::Config(format!(
            "{} does not match the recorded input hash",
            echo_path.display()
        )));
    }
    let field = read_field_csv(&dir.join(FIELD_CSV), meta.grid.clone(), meta.time.clone())?;
    let front = read_front_csv(&dir.join(FRONT_CSV), &meta.front, meta.time.clone())?;
    let sol = SpaceTimeSolution {
        field,
        front,
        scenario: meta.scenario.clone(),
        stats: meta.stats.clone(),
    };
    Ok((meta, echo, sol))
}

/// `certificates/<index>-<candidate>.json` for each certificate; returns the relative names.
pub fn write_certificates(
    dir: &Path,
    certs: &[crate::barrier::BarrierCertificate],
) -> Result<Vec<String>> {
    let cdir = dir.join(CERTIFICATES);
    fs::create_dir_all(&cdir).map_err(io_err(&cdir))?;
    let mut names = Vec::new();
    for (i, c) in certs.iter().enumerate() {
        let name = format!("{CERTIFICATES}/{i:02}-{}.json", c.candidate);
        write_json(c, &dir.join(&name))?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stefan::{simulate, StefanScenario};
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("stefanlab-io-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    fn small_run() -> SpaceTimeSolution {
        let mut sc = StefanScenario::traveling_wave(2, 0.5, 0.5, 4.0, 1.0 / 16.0);
        sc.t_start = -0.2;
        sc.t_end = -0.1;
        sc.store_dt = 0.025;
        simulate(&sc).unwrap()
    }

    #[test]
    fn hash_matches_git_blob_format() {
        let expected = {
            let mut h = Sha256::new();
            h.update(b"blob 5\0hello");
            hex::encode(h.finalize())
        };
        assert_eq!(content_hash(b"hello"), format!("sha256:{expected}"));
        assert_ne!(content_hash(b"hello"), content_hash(b"hello\n"));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let sol = small_run();
        let dir = tmp("rt");
        save_run(&dir, "echo = 1\n", &sol).unwrap();
        let (meta, echo, back) = load_run(&dir).unwrap();
        assert_eq!(echo, "echo = 1\n");
        assert_eq!(meta.schema_version, SCHEMA_VERSION);
        assert_eq!(back.field, sol.field);
        assert_eq!(back.front, sol.front);
        assert_eq!(back.scenario, sol.scenario);
        assert!(back
            .field
            .values
            .iter()
            .zip(&sol.field.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn truncated_csv_reports_line() {
        let sol = small_run();
        let dir = tmp("trunc");
        save_run(&dir, "", &sol).unwrap();
        let path = dir.join(FIELD_CSV);
        let text = fs::read_to_string(&path).unwrap();
        let keep: Vec<&str> = text.lines().take(100).collect();
        fs::write(&path, keep.join("\n") + "\n").unwrap();
        match load_run(&dir) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 101),
            other => panic!("{other:?}"),
        }
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[7] = "0.1,abc".into();
        fs::write(&path, lines.join("\n")).unwrap();
        match load_run(&dir) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn schema_bump_is_refused() {
        let sol = small_run();
        let dir = tmp("schema");
        save_run(&dir, "", &sol).unwrap();
        let path = dir.join(METADATA);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        fs::write(&path, text).unwrap();
        let e = load_run(&dir).unwrap_err();
        assert!(matches!(
            e,
            Error::Schema {
                found: 2,
                expected: 1
            }
        ));
        assert!(e.to_string().contains("re-run"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn tampered_echo_is_detected() {
        let sol = small_run();
        let dir = tmp("hash");
        save_run(&dir, "a = 1\n", &sol).unwrap();
        fs::write(dir.join(CONFIG_ECHO), "a = 2\n").unwrap();
        assert!(matches!(load_run(&dir), Err(Error::Config(_))));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn artifacts_register_once_in_both_metadata_kinds() {
        let dir = tmp("echo");
        let meta = save_echo(&dir, "x = 1\n").unwrap();
        assert_eq!(meta.input_hash, content_hash(b"x = 1\n"));
        register_artifact(&dir, REPORT).unwrap();
        register_artifact(&dir, REPORT).unwrap();
        let back: OutputMetadata = read_json(&dir.join(METADATA)).unwrap();
        assert_eq!(
            back.artifacts,
            vec![CONFIG_ECHO.to_string(), REPORT.to_string()]
        );
        fs::remove_dir_all(&dir).unwrap();

        let dir = tmp("runreg");
        save_run(&dir, "", &small_run()).unwrap();
        register_artifact(&dir, DASHBOARD).unwrap();
        assert!(load_run(&dir)
            .unwrap()
            .0
            .artifacts
            .contains(&DASHBOARD.to_string()));
        fs::remove_dir_all(&dir).unwrap();
    }
}
