//! File formats.
//!
//! Grid fields use the "AGF1" container: one ASCII header line
//! `AGF1 <nx> <nz> <dx> <dz> <kind>\n` with `kind` either `real64` or
//! `complex64x2`, followed by the raw little-endian payload, row-major with x
//! fastest. Complex samples are interleaved (re, im) 64-bit pairs. Round
//! trips are bit-exact.
//!
//! Data tables use "ADT1": header `ADT1 <n_freq> <n_src> <n_rec>\n`, then one
//! record of `n_rec` little-endian complex pairs per (frequency, source),
//! frequency-major then source.
//!
//! Acquisition geometry is a line-oriented text file with coordinates in
//! meters relative to the top-left corner of the physical (non-absorbing)
//! region: `freq <hz>`, `source <x> <z> <amp_re> <amp_im>`,
//! `receiver <x> <z>`; `#` starts a comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fwi::HistoryRow;
use crate::grid::{ComplexField2D, Grid2D, ScalarField2D};
use crate::helmholtz::{Acquisition, DataTable, Pml, Source};

const AGF1: &str = "AGF1";
const ADT1: &str = "ADT1";

fn open_read(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CoreError::io(path, e))
}

fn open_write(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CoreError::io(path, e))
}

fn read_header_line(r: &mut impl BufRead, path: &Path, format: &'static str) -> Result<String> {
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        match r.read_exact(&mut byte) {
            Ok(()) => {
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
                if line.len() > 256 {
                    return Err(CoreError::format(path, format, "unterminated header line"));
                }
            }
            Err(e) => return Err(CoreError::io(path, e)),
        }
    }
    String::from_utf8(line).map_err(|_| CoreError::format(path, format, "non-UTF8 header"))
}

/// Writes a real-valued field; the payload preserves the exact f64 bits.
pub fn write_agf1_real(path: impl AsRef<Path>, field: &ScalarField2D) -> Result<()> {
    let path = path.as_ref();
    let g = field.grid();
    let mut w = open_write(path)?;
    let hdr = format!("{AGF1} {} {} {} {} real64\n", g.nx, g.nz, g.dx, g.dz);
    w.write_all(hdr.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    for &v in field.values() {
        w.write_all(&v.to_le_bytes()).map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Writes a complex-valued field as interleaved (re, im) pairs.
pub fn write_agf1_complex(path: impl AsRef<Path>, field: &ComplexField2D) -> Result<()> {
    let path = path.as_ref();
    let g = field.grid();
    let mut w = open_write(path)?;
    let hdr = format!("{AGF1} {} {} {} {} complex64x2\n", g.nx, g.nz, g.dx, g.dz);
    w.write_all(hdr.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    for v in field.values() {
        w.write_all(&v.re.to_le_bytes()).map_err(|e| CoreError::io(path, e))?;
        w.write_all(&v.im.to_le_bytes()).map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

fn parse_agf1_header(path: &Path, line: &str) -> Result<(Grid2D, String)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != AGF1 {
        return Err(CoreError::format(
            path,
            AGF1,
            format!("bad header `{line}`"),
        ));
    }
    let nx: usize = toks[1]
        .parse()
        .map_err(|_| CoreError::format(path, AGF1, "bad nx"))?;
    let nz: usize = toks[2]
        .parse()
        .map_err(|_| CoreError::format(path, AGF1, "bad nz"))?;
    let dx: f64 = toks[3]
        .parse()
        .map_err(|_| CoreError::format(path, AGF1, "bad dx"))?;
    let dz: f64 = toks[4]
        .parse()
        .map_err(|_| CoreError::format(path, AGF1, "bad dz"))?;
    let grid = Grid2D::new(nx, nz, dx, dz)
        .map_err(|e| CoreError::format(path, AGF1, e.to_string()))?;
    Ok((grid, toks[5].to_string()))
}

/// Reads a `real64` field, validating finiteness.
pub fn read_agf1_real(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let path = path.as_ref();
    let mut r = open_read(path)?;
    let header = read_header_line(&mut r, path, AGF1)?;
    let (grid, kind) = parse_agf1_header(path, &header)?;
    if kind != "real64" {
        return Err(CoreError::format(
            path,
            AGF1,
            format!("expected kind real64, found {kind}"),
        ));
    }
    let mut buf = vec![0u8; grid.n() * 8];
    r.read_exact(&mut buf).map_err(|e| CoreError::io(path, e))?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            what: format!("{}", path.display()),
            index: idx,
        });
    }
    ScalarField2D::new(grid, values)
}

/// Reads a `complex64x2` field, validating finiteness.
pub fn read_agf1_complex(path: impl AsRef<Path>) -> Result<ComplexField2D> {
    let path = path.as_ref();
    let mut r = open_read(path)?;
    let header = read_header_line(&mut r, path, AGF1)?;
    let (grid, kind) = parse_agf1_header(path, &header)?;
    if kind != "complex64x2" {
        return Err(CoreError::format(
            path,
            AGF1,
            format!("expected kind complex64x2, found {kind}"),
        ));
    }
    let mut buf = vec![0u8; grid.n() * 16];
    r.read_exact(&mut buf).map_err(|e| CoreError::io(path, e))?;
    let values: Vec<Complex64> = buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    if let Some(idx) = values
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(CoreError::NonFinite {
            what: format!("{}", path.display()),
            index: idx,
        });
    }
    ComplexField2D::new(grid, values)
}

/// Writes an observed-data table.
pub fn write_adt1(path: impl AsRef<Path>, table: &DataTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_write(path)?;
    let hdr = format!(
        "{ADT1} {} {} {}\n",
        table.n_freq, table.n_src, table.n_rec
    );
    w.write_all(hdr.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    for v in table.values() {
        w.write_all(&v.re.to_le_bytes()).map_err(|e| CoreError::io(path, e))?;
        w.write_all(&v.im.to_le_bytes()).map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Reads an observed-data table.
pub fn read_adt1(path: impl AsRef<Path>) -> Result<DataTable> {
    let path = path.as_ref();
    let mut r = open_read(path)?;
    let header = read_header_line(&mut r, path, ADT1)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != ADT1 {
        return Err(CoreError::format(
            path,
            ADT1,
            format!("bad header `{header}`"),
        ));
    }
    let parse = |s: &str, what: &'static str| -> Result<usize> {
        s.parse()
            .map_err(|_| CoreError::format(path, ADT1, format!("bad {what}")))
    };
    let n_freq = parse(toks[1], "n_freq")?;
    let n_src = parse(toks[2], "n_src")?;
    let n_rec = parse(toks[3], "n_rec")?;
    let count = n_freq * n_src * n_rec;
    let mut buf = vec![0u8; count * 16];
    r.read_exact(&mut buf).map_err(|e| CoreError::io(path, e))?;
    let values: Vec<Complex64> = buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    DataTable::from_values(n_freq, n_src, n_rec, values)
}

/// Acquisition geometry in physical coordinates (meters from the top-left
/// corner of the non-absorbing interior).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AcquisitionFile {
    pub sources: Vec<(f64, f64, Complex64)>,
    pub receivers: Vec<(f64, f64)>,
    pub frequencies_hz: Vec<f64>,
}

impl AcquisitionFile {
    /// Maps physical coordinates onto the padded computational grid. The
    /// interior origin sits `npml` samples in from the grid corner.
    pub fn to_grid(&self, padded_grid: Grid2D, pml: &Pml) -> Result<Acquisition> {
        let to_index = |x: f64, z: f64, what: &'static str| -> Result<(usize, usize)> {
            let fi = x / padded_grid.dx;
            let fj = z / padded_grid.dz;
            let i = fi.round();
            let j = fj.round();
            if (fi - i).abs() > 0.26 || (fj - j).abs() > 0.26 {
                return Err(CoreError::InvalidParam {
                    name: "acquisition",
                    reason: format!(
                        "{what} at ({x} m, {z} m) is more than a quarter cell off the grid"
                    ),
                });
            }
            if i < 0.0 || j < 0.0 {
                return Err(CoreError::InvalidParam {
                    name: "acquisition",
                    reason: format!("{what} at ({x} m, {z} m) has negative coordinates"),
                });
            }
            Ok((i as usize + pml.npml, j as usize + pml.npml))
        };
        let mut sources = Vec::with_capacity(self.sources.len());
        for &(x, z, amp) in &self.sources {
            let (ix, iz) = to_index(x, z, "source")?;
            sources.push(Source {
                ix,
                iz,
                amplitude: amp,
            });
        }
        let mut receivers = Vec::with_capacity(self.receivers.len());
        for &(x, z) in &self.receivers {
            receivers.push(to_index(x, z, "receiver")?);
        }
        let acq = Acquisition {
            sources,
            receivers,
            frequencies_hz: self.frequencies_hz.clone(),
        };
        acq.validate(padded_grid, pml)?;
        Ok(acq)
    }
}

pub fn write_acquisition(path: impl AsRef<Path>, acq: &AcquisitionFile) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_write(path)?;
    let mut out = String::new();
    for &f in &acq.frequencies_hz {
        out.push_str(&format!("freq {f}\n"));
    }
    for &(x, z, amp) in &acq.sources {
        out.push_str(&format!("source {x} {z} {} {}\n", amp.re, amp.im));
    }
    for &(x, z) in &acq.receivers {
        out.push_str(&format!("receiver {x} {z}\n"));
    }
    w.write_all(out.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn read_acquisition(path: impl AsRef<Path>) -> Result<AcquisitionFile> {
    let path = path.as_ref();
    let r = open_read(path)?;
    let mut acq = AcquisitionFile::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| CoreError::format(path, "acquisition", format!("line {}: {reason}", lineno + 1));
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| bad(format!("bad number `{s}`")))
        };
        match toks[0] {
            "freq" if toks.len() == 2 => acq.frequencies_hz.push(num(toks[1])?),
            "source" if toks.len() == 5 => {
                let (x, z) = (num(toks[1])?, num(toks[2])?);
                let amp = Complex64::new(num(toks[3])?, num(toks[4])?);
                acq.sources.push((x, z, amp));
            }
            "receiver" if toks.len() == 3 => {
                acq.receivers.push((num(toks[1])?, num(toks[2])?));
            }
            other => {
                return Err(bad(format!(
                    "expected `freq`, `source`, or `receiver`, found `{other}` with {} fields",
                    toks.len()
                )))
            }
        }
    }
    Ok(acq)
}

/// Inversion history with the fixed column set
/// `iteration,cycle,freq_hz,relative_error,data_residual,waveeq_residual,reg_value`.
pub fn write_history_csv(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_write(path)?;
    let mut out = String::from(
        "iteration,cycle,freq_hz,relative_error,data_residual,waveeq_residual,reg_value\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            r.cycle,
            r.freq_hz,
            r.relative_error,
            r.data_residual,
            r.waveeq_residual,
            r.reg_value
        ));
    }
    w.write_all(out.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Two-column `metric,value` report.
pub fn write_report_csv(path: impl AsRef<Path>, metrics: &[(&str, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_write(path)?;
    let mut out = String::from("metric,value\n");
    for (name, value) in metrics {
        out.push_str(&format!("{name},{value}\n"));
    }
    w.write_all(out.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}
