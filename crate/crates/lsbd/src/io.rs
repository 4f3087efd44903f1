//! On-disk interchange formats used by the CLI: UTF-8 CSV for encodings,
//! raw 8-bit blobs plus JSON manifests for image grids, and the JSON report
//! document. All writers are deterministic byte for byte; floats in CSV use
//! the shortest representation that re-parses exactly, floats in reports use
//! 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_gen::ImageGrid;
use crate::group::{Factor, FactorStructure};
use crate::metric::{EncodingGrid, LsbdReport, OmegaRange};
use crate::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";
pub const KIND_IMAGE_GRID: &str = "image_grid";
pub const KIND_ENCODING_GRID: &str = "encoding_grid";

/// Lowercase hex SHA-256 of a byte string; used to fingerprint data files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("writing to a string cannot fail");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFactor {
    pub name: String,
    pub size: usize,
}

/// Sidecar JSON describing a data file (`<data path>.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    /// `image_grid` (raw pixel blob) or `encoding_grid` (CSV).
    pub kind: String,
    pub factors: Vec<ManifestFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
}

impl Manifest {
    pub fn factor_structure(&self) -> Result<FactorStructure> {
        FactorStructure::new(
            self.factors
                .iter()
                .map(|f| Factor { name: f.name.clone(), size: f.size })
                .collect(),
        )
    }

    fn factors_of(fs: &FactorStructure) -> Vec<ManifestFactor> {
        fs.factors()
            .iter()
            .map(|f| ManifestFactor { name: f.name.clone(), size: f.size })
            .collect()
    }
}

/// Manifest location for a data file: the same path with `.json` appended.
pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut os = data_path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

pub fn write_manifest(data_path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    fs::write(manifest_path(data_path), text + "\n")?;
    Ok(())
}

pub fn read_manifest(data_path: &Path) -> Result<Manifest> {
    let path = manifest_path(data_path);
    let text = fs::read_to_string(&path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: invalid manifest: {e}", path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported schema version {:?}",
            path.display(),
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

/// Write an image grid as a raw blob plus its manifest; returns the manifest.
pub fn write_image_grid(
    path: &Path,
    grid: &ImageGrid,
    seed: Option<u64>,
    note: Option<&str>,
) -> Result<Manifest> {
    fs::write(path, grid.pixels())?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: KIND_IMAGE_GRID.to_string(),
        factors: Manifest::factors_of(grid.factor_structure()),
        image_size: Some(grid.image_size()),
        latent_dim: None,
        seed,
        note: note.map(str::to_string),
        data_sha256: Some(sha256_hex(grid.pixels())),
    };
    write_manifest(path, &manifest)?;
    Ok(manifest)
}

/// Read an image grid written by [`write_image_grid`]; the manifest supplies
/// the dimensions and the digest is verified when present.
pub fn read_image_grid(path: &Path) -> Result<(ImageGrid, Manifest)> {
    let manifest = read_manifest(path)?;
    if manifest.kind != KIND_IMAGE_GRID {
        return Err(Error::Format(format!(
            "{}: manifest describes {:?}, expected an image grid",
            path.display(),
            manifest.kind
        )));
    }
    let image_size = manifest.image_size.ok_or_else(|| {
        Error::Format(format!("{}: manifest is missing the image size", path.display()))
    })?;
    let bytes = fs::read(path)?;
    if let Some(expected) = &manifest.data_sha256 {
        let actual = sha256_hex(&bytes);
        if &actual != expected {
            return Err(Error::Format(format!(
                "{}: content digest {actual} does not match manifest digest {expected}",
                path.display()
            )));
        }
    }
    let fs_ = manifest.factor_structure()?;
    let grid = ImageGrid::new(fs_, image_size, bytes)?;
    Ok((grid, manifest))
}

/// Render an encoding grid as CSV: header `g0,…,z0,…`, one row per grid
/// point in row-major order, indices as integers, latents as shortest
/// round-trip decimals.
pub fn encoding_csv_string(grid: &EncodingGrid) -> String {
    let fs_ = grid.factor_structure();
    let k = fs_.num_factors();
    let d = grid.latent_dim();
    let mut out = String::new();
    for j in 0..k {
        if j > 0 {
            out.push(',');
        }
        write!(out, "g{j}").unwrap();
    }
    for j in 0..d {
        write!(out, ",z{j}").unwrap();
    }
    out.push('\n');
    for (row, g) in fs_.indices().enumerate() {
        for (j, idx) in g.components().iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{idx}").unwrap();
        }
        for j in 0..d {
            write!(out, ",{}", grid.data()[(row, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Write encodings as CSV plus manifest; returns the manifest.
pub fn write_encoding_grid(
    path: &Path,
    grid: &EncodingGrid,
    seed: Option<u64>,
    note: Option<&str>,
) -> Result<Manifest> {
    let csv = encoding_csv_string(grid);
    fs::write(path, &csv)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: KIND_ENCODING_GRID.to_string(),
        factors: Manifest::factors_of(grid.factor_structure()),
        image_size: None,
        latent_dim: Some(grid.latent_dim()),
        seed,
        note: note.map(str::to_string),
        data_sha256: Some(sha256_hex(csv.as_bytes())),
    };
    write_manifest(path, &manifest)?;
    Ok(manifest)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let names: Vec<&str> = header.split(',').collect();
    let k = names.iter().take_while(|n| n.starts_with('g')).count();
    if k == 0 || k == names.len() {
        return Err(Error::Format(
            "header must list group-index columns g0,… then latent columns z0,…".into(),
        ));
    }
    for (j, name) in names.iter().enumerate() {
        let expected = if j < k { format!("g{j}") } else { format!("z{}", j - k) };
        if *name != expected {
            return Err(Error::Format(format!(
                "header column {} is {:?}, expected {:?}",
                j + 1,
                name,
                expected
            )));
        }
    }
    Ok((k, names.len() - k))
}

/// Parse a CSV produced by [`encoding_csv_string`]. Rows may appear in any
/// order; factor sizes are inferred from the largest index seen and the grid
/// must be complete. Non-numeric and non-finite cells are rejected with a
/// row/column diagnostic.
pub fn parse_encoding_csv(text: &str) -> Result<EncodingGrid> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let (k, d) = parse_header(header)?;

    let mut indices: Vec<Vec<usize>> = Vec::new();
    let mut latents: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let row_label = line_no + 2; // 1-based, after the header line
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != k + d {
            return Err(Error::Format(format!(
                "row {row_label}: {} cells, expected {}",
                cells.len(),
                k + d
            )));
        }
        let mut idx = Vec::with_capacity(k);
        for (j, cell) in cells[..k].iter().enumerate() {
            let v: usize = cell.parse().map_err(|_| {
                Error::Format(format!(
                    "row {row_label}, column g{j}: {cell:?} is not a nonnegative integer"
                ))
            })?;
            idx.push(v);
        }
        let mut row = Vec::with_capacity(d);
        for (j, cell) in cells[k..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Format(format!("row {row_label}, column z{j}: {cell:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "row {row_label}, column z{j}: non-finite value {cell:?}"
                )));
            }
            row.push(v);
        }
        indices.push(idx);
        latents.push(row);
    }
    if indices.is_empty() {
        return Err(Error::Format("CSV has a header but no data rows".into()));
    }

    let mut sizes = vec![0usize; k];
    for idx in &indices {
        for (j, &v) in idx.iter().enumerate() {
            sizes[j] = sizes[j].max(v + 1);
        }
    }
    let fs_ = FactorStructure::from_sizes(&sizes)?;
    if indices.len() != fs_.total_points() {
        return Err(Error::Format(format!(
            "{} data rows, but the index ranges imply a grid of {} points",
            indices.len(),
            fs_.total_points()
        )));
    }
    let mut data = nalgebra::DMatrix::zeros(fs_.total_points(), d);
    let mut seen = vec![false; fs_.total_points()];
    for (idx, row) in indices.iter().zip(&latents) {
        let g = crate::group::GroupIndex::new(idx.clone(), &fs_)?;
        let flat = fs_.flat_index(&g);
        if seen[flat] {
            return Err(Error::Format(format!("grid point {idx:?} appears more than once")));
        }
        seen[flat] = true;
        for (j, &v) in row.iter().enumerate() {
            data[(flat, j)] = v;
        }
    }
    EncodingGrid::new(fs_, data)
}

pub fn read_encoding_csv(path: &Path) -> Result<EncodingGrid> {
    let text = fs::read_to_string(path)?;
    parse_encoding_csv(&text)
        .map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Check an encoding grid against the manifest that shipped with its file.
pub fn check_encoding_manifest(manifest: &Manifest, grid: &EncodingGrid) -> Result<()> {
    if manifest.kind != KIND_ENCODING_GRID {
        return Err(Error::Format(format!(
            "manifest describes {:?}, expected an encoding grid",
            manifest.kind
        )));
    }
    let declared = manifest.factor_structure()?;
    if &declared != grid.factor_structure() {
        return Err(Error::Format(format!(
            "manifest factors {:?} do not match the CSV grid {:?}",
            declared.sizes(),
            grid.factor_structure().sizes()
        )));
    }
    if let Some(dim) = manifest.latent_dim {
        if dim != grid.latent_dim() {
            return Err(Error::Format(format!(
                "manifest latent dimension {dim} does not match the CSV's {}",
                grid.latent_dim()
            )));
        }
    }
    Ok(())
}

/// A float as a JSON number with 17 significant digits (lossless for f64).
fn json_float(x: f64) -> serde_json::Value {
    debug_assert!(x.is_finite());
    let mut literal = format!("{x:.16e}");
    // write nonnegative exponents with an explicit sign so the stored text
    // matches what the JSON serializer emits
    if let Some(pos) = literal.find('e') {
        if !matches!(literal.as_bytes()[pos + 1], b'-' | b'+') {
            literal.insert(pos + 1, '+');
        }
    }
    let number: serde_json::Number =
        serde_json::from_str(&literal).expect("a finite float formats as a valid JSON number");
    serde_json::Value::Number(number)
}

/// Context recorded alongside the numeric results in a report.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub tool_version: String,
    pub input_path: String,
    pub input_sha256: String,
    pub omega_ranges: Vec<OmegaRange>,
    pub duration_seconds: f64,
    /// Include the full per-frequency loss table.
    pub include_table: bool,
}

/// Assemble the report JSON document. Keys are emitted in sorted order and
/// all floats carry 17 significant digits, so rendering is deterministic.
pub fn report_to_json(
    report: &LsbdReport,
    fs_: &FactorStructure,
    meta: &ReportMeta,
) -> serde_json::Value {
    let mut root = serde_json::Map::new();
    root.insert("schema_version".into(), SCHEMA_VERSION.into());
    root.insert("tool_version".into(), meta.tool_version.clone().into());
    root.insert(
        "input".into(),
        serde_json::json!({ "path": meta.input_path, "sha256": meta.input_sha256 }),
    );
    root.insert(
        "factors".into(),
        serde_json::Value::Array(
            fs_.factors()
                .iter()
                .map(|f| serde_json::json!({ "name": f.name, "size": f.size }))
                .collect(),
        ),
    );
    root.insert(
        "omega_range".into(),
        serde_json::Value::Array(
            meta.omega_ranges
                .iter()
                .map(|r| serde_json::json!({ "lo": r.lo(), "hi": r.hi() }))
                .collect(),
        ),
    );
    root.insert("whitening".into(), report.whitening.into());
    root.insert(
        "best_omega".into(),
        serde_json::Value::Array(
            report.best.components().iter().map(|&w| serde_json::Value::from(w)).collect(),
        ),
    );
    root.insert("l_lsbd".into(), json_float(report.l_lsbd));
    root.insert("duration_seconds".into(), json_float(meta.duration_seconds));
    if meta.include_table {
        root.insert(
            "table".into(),
            serde_json::Value::Array(
                report
                    .table
                    .iter()
                    .map(|(w, loss)| {
                        serde_json::json!({
                            "omega": w.components(),
                            "loss": json_float(*loss),
                        })
                    })
                    .collect(),
            ),
        );
    }
    serde_json::Value::Object(root)
}

/// Pretty-printed report with a trailing newline — the exact bytes the CLI
/// emits.
pub fn render_report(report: &LsbdReport, fs_: &FactorStructure, meta: &ReportMeta) -> String {
    let value = report_to_json(report, fs_, meta);
    let mut text = serde_json::to_string_pretty(&value)
        .expect("report values contain no non-serializable data");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_gen::gen_square_translation;
    use crate::metric::{evaluate, EvaluateOptions};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_grid(sizes: &[usize], d: usize, seed: u64) -> EncodingGrid {
        let fs_ = FactorStructure::from_sizes(sizes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(fs_.total_points(), d, |_, _| rng.sample(StandardNormal));
        EncodingGrid::new(fs_, data).unwrap()
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn csv_round_trip_is_bitwise_exact() {
        let grid = random_grid(&[5, 3], 4, 17);
        let csv = encoding_csv_string(&grid);
        let back = parse_encoding_csv(&csv).unwrap();
        assert_eq!(back.factor_structure().sizes(), vec![5, 3]);
        assert_eq!(back.data(), grid.data());
    }

    #[test]
    fn csv_rows_may_be_reordered() {
        let grid = random_grid(&[3, 3], 4, 2);
        let csv = encoding_csv_string(&grid);
        let mut lines: Vec<&str> = csv.lines().collect();
        lines[1..].reverse();
        let shuffled = lines.join("\n") + "\n";
        let back = parse_encoding_csv(&shuffled).unwrap();
        assert_eq!(back.data(), grid.data());
    }

    #[test]
    fn csv_parser_reports_cell_diagnostics() {
        let base = "g0,g1,z0,z1,z2,z3\n";
        let bad_number = format!("{base}0,0,1.0,abc,0,0\n");
        let err = parse_encoding_csv(&bad_number).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(err.contains("z1"), "{err}");

        let nan = format!("{base}0,0,NaN,0,0,0\n");
        let err = parse_encoding_csv(&nan).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");

        let inf = format!("{base}0,0,inf,0,0,0\n");
        assert!(parse_encoding_csv(&inf).is_err());

        let bad_index = format!("{base}0,-1,0,0,0,0\n");
        let err = parse_encoding_csv(&bad_index).unwrap_err().to_string();
        assert!(err.contains("g1"), "{err}");
    }

    #[test]
    fn csv_parser_validates_structure() {
        assert!(parse_encoding_csv("").is_err());
        assert!(parse_encoding_csv("g0,g1\n0,0\n").is_err(), "no latent columns");
        assert!(parse_encoding_csv("z0,z1\n0,0\n").is_err(), "no index columns");
        assert!(parse_encoding_csv("g0,z9\n0,0\n").is_err(), "misnamed column");
        let short_row = "g0,z0,z1,z2,z3\n0,1,2,3\n";
        let err = parse_encoding_csv(short_row).unwrap_err().to_string();
        assert!(err.contains("4 cells"), "{err}");

        // duplicate point
        let dup = "g0,z0,z1\n0,1,2\n0,3,4\n";
        assert!(parse_encoding_csv(dup).is_err());
        // incomplete grid: max index 2 implies 3 points but only 2 rows
        let incomplete = "g0,z0,z1\n0,1,2\n2,3,4\n";
        assert!(parse_encoding_csv(incomplete).is_err());
    }

    #[test]
    fn encoding_file_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.csv");
        let grid = random_grid(&[4, 4], 6, 8);
        let manifest = write_encoding_grid(&path, &grid, Some(8), Some("test data")).unwrap();
        assert_eq!(manifest.latent_dim, Some(6));
        assert!(manifest_path(&path).exists());

        let back = read_encoding_csv(&path).unwrap();
        assert_eq!(back.data(), grid.data());
        let read_back = read_manifest(&path).unwrap();
        assert_eq!(read_back, manifest);
        check_encoding_manifest(&read_back, &back).unwrap();

        let other = random_grid(&[2, 8], 6, 8);
        assert!(check_encoding_manifest(&read_back, &other).is_err());
    }

    #[test]
    fn image_file_round_trip_verifies_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.bin");
        let grid = gen_square_translation(4, 4, 8, 2).unwrap();
        write_image_grid(&path, &grid, Some(0), None).unwrap();
        let (back, manifest) = read_image_grid(&path).unwrap();
        assert_eq!(back, grid);
        assert_eq!(manifest.image_size, Some(8));

        // flip one byte → digest check must fail
        let mut bytes = fs::read(&path).unwrap();
        bytes[5] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        match read_image_grid(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("digest"), "{msg}"),
            other => panic!("expected a digest failure, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_surface_as_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.csv");
        match read_encoding_csv(&path) {
            Err(Error::Io(_)) => {}
            other => panic!("expected an I/O error, got {other:?}"),
        }
        match read_manifest(&path) {
            Err(Error::Io(_)) => {}
            other => panic!("expected an I/O error, got {other:?}"),
        }
    }

    #[test]
    fn report_renders_deterministically_with_full_precision() {
        let grid = random_grid(&[4, 4], 4, 3);
        let ranges = vec![OmegaRange::new(-2, 2).unwrap()];
        let report = evaluate(&grid, &ranges, EvaluateOptions::default()).unwrap();
        let meta = ReportMeta {
            tool_version: "0.0.0-test".into(),
            input_path: "enc.csv".into(),
            input_sha256: sha256_hex(b"enc"),
            omega_ranges: vec![OmegaRange::new(-2, 2).unwrap(), OmegaRange::new(-2, 2).unwrap()],
            duration_seconds: 0.125,
            include_table: true,
        };
        let fs_ = grid.factor_structure();
        let a = render_report(&report, fs_, &meta);
        let b = render_report(&report, fs_, &meta);
        assert_eq!(a, b);
        assert!(a.ends_with('\n'));

        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(value["schema_version"], "1");
        assert_eq!(value["table"].as_array().unwrap().len(), 25);
        assert_eq!(value["omega_range"][0]["lo"], -2);
        let parsed = value["l_lsbd"].as_f64().unwrap();
        assert_eq!(parsed, report.l_lsbd, "17 significant digits round-trip exactly");
        assert_eq!(value["best_omega"].as_array().unwrap().len(), 2);

        let meta_no_table = ReportMeta { include_table: false, ..meta };
        let slim: serde_json::Value =
            serde_json::from_str(&render_report(&report, fs_, &meta_no_table)).unwrap();
        assert!(slim.get("table").is_none());
    }

    #[test]
    fn seventeen_digit_floats_in_report_text() {
        let text = serde_json::to_string(&json_float(0.1)).unwrap();
        assert_eq!(text, "1.0000000000000001e-1");
        let text = serde_json::to_string(&json_float(2.0)).unwrap();
        assert_eq!(text, "2.0000000000000000e+0");
        let parsed: f64 = text.parse().unwrap();
        assert_eq!(parsed, 2.0);
    }
}
