//! File formats: PFM for float images, PGM/PPM display copies, the
//! `SPKV-SURF` facet-surface and `SPKV-MAT` transfer-matrix binaries, and
//! CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Vector3};

use crate::analysis::SweepResult;
use crate::error::{Result, SparkleError};
use crate::image::{Grid, PixelMask};
use crate::render::{Provenance, TransferMatrix};
use crate::scene::{FacetSurface, OrientationDistribution, Pose, SurfaceConfig};

pub const SURFACE_MAGIC: &[u8] = b"SPKV-SURF";
pub const MATRIX_MAGIC: &[u8] = b"SPKV-MAT";
pub const FORMAT_VERSION: u8 = 1;

fn format_err(msg: impl Into<String>) -> SparkleError {
    SparkleError::Format(msg.into())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Writes a little-endian PFM (`Pf` for one channel, `PF` for three).
/// Values are stored as `f32`, bottom row first.
pub fn write_pfm<W: Write>(out: &mut W, grid: &Grid) -> Result<()> {
    let tag = match grid.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err(format!("PFM cannot hold {c} channels"))),
    };
    write!(out, "{tag}\n{} {}\n-1.0\n", grid.width, grid.height)?;
    let mut buf = Vec::with_capacity(grid.len() * 4);
    for row in (0..grid.height).rev() {
        for col in 0..grid.width {
            for c in 0..grid.channels {
                buf.extend_from_slice(&(grid.get(c, row, col) as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm<R: BufRead>(input: &mut R) -> Result<Grid> {
    let mut tokens = Vec::new();
    // header: tag, width, height, scale, each whitespace separated, then
    // exactly one whitespace byte before the payload
    let mut current = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8];
        if input.read(&mut byte)? == 0 {
            return Err(format_err("truncated PFM header"));
        }
        if byte[0].is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(String::from_utf8_lossy(&current).into_owned());
                current.clear();
            }
        } else {
            current.push(byte[0]);
        }
    }
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format_err(format!("not a PFM file (tag {t:?})"))),
    };
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| format_err(format!("bad PFM {what}: {s:?}")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| format_err(format!("bad PFM scale: {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM scale must be nonzero"));
    }
    let little = scale < 0.0;
    let mut payload = vec![0u8; width * height * channels * 4];
    input
        .read_exact(&mut payload)
        .map_err(|_| format_err("truncated PFM payload"))?;
    let mut grid = Grid::zeros(width, height, channels);
    let mut chunks = payload.chunks_exact(4);
    for row in (0..height).rev() {
        for col in 0..width {
            for c in 0..channels {
                let b: [u8; 4] = chunks.next().expect("sized").try_into().expect("4 bytes");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                let i = grid.index(c, row, col);
                grid.data[i] = v as f64;
            }
        }
    }
    Ok(grid)
}

pub fn save_pfm(path: &Path, grid: &Grid) -> Result<()> {
    let mut out = create(path)?;
    write_pfm(&mut out, grid)?;
    out.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<Grid> {
    read_pfm(&mut open(path)?)
}

/// 8-bit PGM/PPM copy for viewing. Values are divided by `white` (the
/// grid maximum when `None`) and clamped to `[0, 1]`.
pub fn write_display<W: Write>(out: &mut W, grid: &Grid, white: Option<f64>) -> Result<()> {
    let tag = match grid.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(format_err(format!("PGM/PPM cannot hold {c} channels"))),
    };
    let white = white.unwrap_or_else(|| grid.data.iter().copied().fold(0.0, f64::max));
    let scale = if white > 0.0 { 255.0 / white } else { 0.0 };
    write!(out, "{tag}\n{} {}\n255\n", grid.width, grid.height)?;
    let mut buf = Vec::with_capacity(grid.len());
    for row in 0..grid.height {
        for col in 0..grid.width {
            for c in 0..grid.channels {
                buf.push((grid.get(c, row, col) * scale).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_display(path: &Path, grid: &Grid, white: Option<f64>) -> Result<()> {
    let mut out = create(path)?;
    write_display(&mut out, grid, white)?;
    out.flush()?;
    Ok(())
}

fn take<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|_| format_err("unexpected end of file"))?;
    Ok(b)
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(take(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(take(input)?))
}

fn check_magic<R: Read>(input: &mut R, magic: &[u8]) -> Result<()> {
    let mut m = vec![0u8; magic.len()];
    input
        .read_exact(&mut m)
        .map_err(|_| format_err("file too short"))?;
    if m != magic {
        return Err(format_err(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let [version] = take::<_, 1>(input)?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    Ok(())
}

/// `SPKV-SURF` layout: magic, version byte, `cols` and `rows` as u32, the
/// pose as 12 f64, seed u64, `sigma_theta`, plane width and height as f64,
/// then one local-frame normal (x, y, z) per facet in row-major order.
/// Everything is little-endian.
pub fn write_surface<W: Write>(out: &mut W, surface: &FacetSurface) -> Result<()> {
    let cfg = &surface.config;
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| format_err("facet grid too large"));
    out.write_all(SURFACE_MAGIC)?;
    out.write_all(&[FORMAT_VERSION])?;
    out.write_all(&to_u32(cfg.cols)?.to_le_bytes())?;
    out.write_all(&to_u32(cfg.rows)?.to_le_bytes())?;
    for v in cfg.pose.to_array() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&surface.seed.to_le_bytes())?;
    out.write_all(&surface.distribution.sigma_theta.to_le_bytes())?;
    out.write_all(&cfg.width.to_le_bytes())?;
    out.write_all(&cfg.height.to_le_bytes())?;
    let mut buf = Vec::with_capacity(surface.normals.len() * 24);
    for n in &surface.normals {
        for v in [n.x, n.y, n.z] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_surface<R: Read>(input: &mut R) -> Result<FacetSurface> {
    check_magic(input, SURFACE_MAGIC)?;
    let cols = u32::from_le_bytes(take(input)?) as usize;
    let rows = u32::from_le_bytes(take(input)?) as usize;
    let mut pose = [0.0; 12];
    for p in pose.iter_mut() {
        *p = read_f64(input)?;
    }
    let seed = read_u64(input)?;
    let sigma = read_f64(input)?;
    let width = read_f64(input)?;
    let height = read_f64(input)?;
    let config = SurfaceConfig {
        cols,
        rows,
        width,
        height,
        pose: Pose::from_array(&pose),
    };
    config.validate()?;
    let mut normals = Vec::with_capacity(config.facet_count());
    for _ in 0..config.facet_count() {
        normals.push(Vector3::new(
            read_f64(input)?,
            read_f64(input)?,
            read_f64(input)?,
        ));
    }
    FacetSurface::from_normals(config, OrientationDistribution::new(sigma)?, seed, normals)
}

pub fn save_surface(path: &Path, surface: &FacetSurface) -> Result<()> {
    let mut out = create(path)?;
    write_surface(&mut out, surface)?;
    out.flush()?;
    Ok(())
}

pub fn load_surface(path: &Path) -> Result<FacetSurface> {
    read_surface(&mut open(path)?)
}

fn provenance_byte(p: Provenance) -> u8 {
    match p {
        Provenance::Simulated => 0,
        Provenance::Calibrated => 1,
    }
}

/// `SPKV-MAT` layout: magic, version byte, provenance byte (0 simulated,
/// 1 calibrated), rows and cols as u64, mask length as u64 (0 when the
/// matrix is unmasked) followed by that many u64 sensor indices, then the
/// entries row-major as f64. Everything is little-endian.
///
/// The lightmap shape is not part of the format.
pub fn write_matrix<W: Write>(out: &mut W, a: &TransferMatrix) -> Result<()> {
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&[FORMAT_VERSION, provenance_byte(a.provenance)])?;
    out.write_all(&(a.rows() as u64).to_le_bytes())?;
    out.write_all(&(a.cols() as u64).to_le_bytes())?;
    let mask = a.mask.as_ref().map(|m| m.indices()).unwrap_or(&[]);
    out.write_all(&(mask.len() as u64).to_le_bytes())?;
    for &i in mask {
        out.write_all(&(i as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(a.rows() * a.cols() * 8);
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            buf.extend_from_slice(&a.matrix[(r, c)].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a `SPKV-MAT` stream. Without an explicit `screen_shape` the
/// columns are taken to index a square single-channel lightmap.
pub fn read_matrix<R: Read>(
    input: &mut R,
    screen_shape: Option<(usize, usize, usize)>,
) -> Result<TransferMatrix> {
    check_magic(input, MATRIX_MAGIC)?;
    let [prov] = take::<_, 1>(input)?;
    let provenance = match prov {
        0 => Provenance::Simulated,
        1 => Provenance::Calibrated,
        b => return Err(format_err(format!("unknown provenance byte {b}"))),
    };
    let rows = read_u64(input)? as usize;
    let cols = read_u64(input)? as usize;
    let mask_len = read_u64(input)? as usize;
    let mask = if mask_len > 0 {
        let mut idx = Vec::with_capacity(mask_len);
        for _ in 0..mask_len {
            idx.push(read_u64(input)? as usize);
        }
        Some(PixelMask::new(idx))
    } else {
        None
    };
    let mut payload = vec![0u8; rows * cols * 8];
    input
        .read_exact(&mut payload)
        .map_err(|_| format_err("truncated matrix payload"))?;
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let matrix = DMatrix::from_row_iterator(rows, cols, values);
    let shape = match screen_shape {
        Some(s) => s,
        None => {
            let side = (cols as f64).sqrt().round() as usize;
            if side * side != cols {
                return Err(format_err(format!(
                    "{cols} columns is not a square lightmap; give the screen shape explicitly"
                )));
            }
            (side, side, 1)
        }
    };
    TransferMatrix::new(matrix, provenance, mask, shape)
}

pub fn save_matrix(path: &Path, a: &TransferMatrix) -> Result<()> {
    let mut out = create(path)?;
    write_matrix(&mut out, a)?;
    out.flush()?;
    Ok(())
}

pub fn load_matrix(
    path: &Path,
    screen_shape: Option<(usize, usize, usize)>,
) -> Result<TransferMatrix> {
    read_matrix(&mut open(path)?, screen_shape)
}

/// Sweep table: a `# config_hash=` comment line, a column header, then one
/// `value,seed,metric` row per record.
pub fn write_sweep_csv<W: Write>(
    out: &mut W,
    result: &SweepResult,
    config_hash: &str,
) -> Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "{},seed,{}", result.variable, result.metric)?;
    for r in &result.records {
        writeln!(out, "{},{},{}", r.value, r.seed, r.metric)?;
    }
    Ok(())
}

/// Descending singular values, one per row.
pub fn write_spectrum_csv<W: Write>(
    out: &mut W,
    singular_values: &[f64],
    config_hash: &str,
) -> Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "index,singular_value")?;
    for (i, s) in singular_values.iter().enumerate() {
        writeln!(out, "{i},{s}")?;
    }
    Ok(())
}

/// Square matrix, one row per line.
pub fn write_matrix_csv<W: Write>(out: &mut W, m: &DMatrix<f64>, config_hash: &str) -> Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Per-pixel values of a `width`-wide row-major grid as `row,col,value`.
pub fn write_grid_csv<W: Write>(
    out: &mut W,
    width: usize,
    values: &[f64],
    column: &str,
) -> Result<()> {
    writeln!(out, "row,col,{column}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{},{},{v}", i / width, i % width)?;
    }
    Ok(())
}
