//! The `RSTF1` binary tensor container, CSV emitters and particle files.
//!
//! `RSTF1` layout (little endian): the five magic bytes, `u32 d`, `u32 R`,
//! `d × u32` mode sizes, `R × f64` weights, then each mode's `n × R` matrix
//! column-major as `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rs::ParticleSystem;
use crate::tensor::CanonicalTensor;

pub const MAGIC: &[u8; 5] = b"RSTF1";

pub fn write_rstf<W: Write>(t: &CanonicalTensor, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let d = u32::try_from(t.order()).map_err(|_| Error::InvalidParameter("order too large".into()))?;
    let r = u32::try_from(t.rank()).map_err(|_| Error::InvalidParameter("rank too large".into()))?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&r.to_le_bytes())?;
    for &n in t.dims() {
        let n = u32::try_from(n).map_err(|_| Error::InvalidParameter("mode size too large".into()))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for x in t.weights() {
        w.write_all(&x.to_le_bytes())?;
    }
    for f in t.factors() {
        for x in f.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse { line: 0, msg: msg.into() }
}

pub fn read_rstf<R: Read>(mut r: R) -> Result<CanonicalTensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| parse_err("truncated header"))?;
    if &magic != MAGIC {
        return Err(parse_err("not an RSTF1 file"));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<usize> {
        r.read_exact(&mut u32_buf).map_err(|_| parse_err("truncated header"))?;
        Ok(u32::from_le_bytes(u32_buf) as usize)
    };
    let d = read_u32(&mut r)?;
    let rank = read_u32(&mut r)?;
    if d == 0 {
        return Err(parse_err("order must be positive"));
    }
    let dims = (0..d).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|_| parse_err("truncated data"))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let weights = read_f64s(rank)?;
    let mut factors = Vec::with_capacity(d);
    for &n in &dims {
        factors.push(DMatrix::from_vec(n, rank, read_f64s(n * rank)?));
    }
    if d > 0 && rank == 0 {
        return Ok(CanonicalTensor::zeros(&dims));
    }
    CanonicalTensor::new(weights, factors)
}

pub fn save_rstf(t: &CanonicalTensor, path: &Path) -> Result<()> {
    let f = fs::File::create(path)?;
    write_rstf(t, std::io::BufWriter::new(f))
}

pub fn load_rstf(path: &Path) -> Result<CanonicalTensor> {
    read_rstf(BufReader::new(fs::File::open(path)?))
}

/// Per-term 1D mode profiles: `index,coordinate,term0,term1,…`.
pub fn mode_profiles_csv(t: &CanonicalTensor, mode: usize, grid: &GridSpec) -> String {
    let mut s = String::from("index,coordinate");
    for k in 0..t.rank() {
        let _ = write!(s, ",term{k}");
    }
    s.push('\n');
    for i in 0..t.dims()[mode] {
        let _ = write!(s, "{i},{}", grid.cell_center(i));
        for k in 0..t.rank() {
            let _ = write!(s, ",{:e}", t.column(mode, k)[i]);
        }
        s.push('\n');
    }
    s
}

/// Singular-value spectra: `mode,index,value`.
pub fn spectra_csv(spectra: &[Vec<f64>]) -> String {
    let mut s = String::from("mode,index,value\n");
    for (l, sv) in spectra.iter().enumerate() {
        for (i, v) in sv.iter().enumerate() {
            let _ = writeln!(s, "{l},{i},{v:e}");
        }
    }
    s
}

/// Plane `z = z_index` of a 3D Galerkin tensor as point values per cell:
/// `x,y,value`, evaluated from the mode vectors without dense assembly.
pub fn cross_section_csv(t: &CanonicalTensor, grid: &GridSpec, z_index: usize) -> Result<String> {
    if t.order() != 3 {
        return Err(Error::DimensionMismatch("cross sections need a 3D tensor".into()));
    }
    if z_index >= t.dims()[2] {
        return Err(Error::OutOfRange(format!("plane {z_index} outside 0..{}", t.dims()[2])));
    }
    let h3 = grid.h().powi(3);
    let (nx, ny) = (t.dims()[0], t.dims()[1]);
    // fold the z factor into the weights once
    let w: Vec<f64> = (0..t.rank()).map(|k| t.weights()[k] * t.factor(2)[(z_index, k)]).collect();
    let mut s = String::from("x,y,value\n");
    for j in 0..ny {
        for i in 0..nx {
            let v: f64 = (0..t.rank()).map(|k| w[k] * t.factor(0)[(i, k)] * t.factor(1)[(j, k)]).sum();
            let _ = writeln!(s, "{},{},{:e}", grid.cell_center(i), grid.cell_center(j), v / h3);
        }
    }
    Ok(s)
}

/// Values along the first axis through the central cell of the other axes,
/// one column per named 3D tensor: `index,coordinate,<name>…`.
pub fn center_line_csv(grid: &GridSpec, tensors: &[(&str, &CanonicalTensor)]) -> Result<String> {
    let n = grid.points();
    for (name, t) in tensors {
        if t.order() != 3 || t.dims().iter().any(|&m| m != n) {
            return Err(Error::DimensionMismatch(format!("`{name}` does not live on a {n}^3 grid")));
        }
    }
    let h3 = grid.h().powi(3);
    let c = n / 2;
    let mut s = String::from("index,coordinate");
    for (name, _) in tensors {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for i in 0..n {
        let _ = write!(s, "{i},{}", grid.cell_center(i));
        for (_, t) in tensors {
            let _ = write!(s, ",{:e}", t.entry(&[i, c, c]) / h3);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Per-particle forces: `index,Fx,Fy,Fz`.
pub fn forces_csv(forces: &[[f64; 3]]) -> String {
    let mut s = String::from("index,Fx,Fy,Fz\n");
    for (i, f) in forces.iter().enumerate() {
        let _ = writeln!(s, "{i},{:e},{:e},{:e}", f[0], f[1], f[2]);
    }
    s
}

/// Particle records `(position, charge)` from text lines `x y z q`; blank
/// lines and `#` comments are skipped.
pub fn parse_particle_records<R: BufRead>(r: R) -> Result<Vec<([f64; 3], f64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 4 fields `x y z q`, found {}", fields.len()),
            });
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("`{f}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("`{f}` is not finite"),
                });
            }
        }
        out.push(([vals[0], vals[1], vals[2]], vals[3]));
    }
    Ok(out)
}

/// Read a particle file and snap it onto `grid`.
pub fn parse_particles(path: &Path, grid: &GridSpec) -> Result<ParticleSystem> {
    let records = parse_particle_records(BufReader::new(fs::File::open(path)?))?;
    let (pos, q): (Vec<[f64; 3]>, Vec<f64>) = records.into_iter().unzip();
    ParticleSystem::new(grid, &pos, &q)
}

/// Text form that [`parse_particle_records`] reads back exactly.
pub fn particles_to_string(positions: &[[f64; 3]], charges: &[f64]) -> String {
    let mut s = String::from("# x y z q\n");
    for (p, q) in positions.iter().zip(charges) {
        let _ = writeln!(s, "{:?} {:?} {:?} {:?}", p[0], p[1], p[2], q);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rstf_round_trip() {
        let t = CanonicalTensor::from_terms(
            &[2, 3],
            vec![1.5, -0.25],
            &[vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0]], vec![vec![-1.0, 0.5], vec![0.0, 1e-300, 7.0]]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_rstf(&t, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"RSTF1");
        assert_eq!(buf.len(), 5 + 4 * 4 + 8 * (2 + 2 * 2 + 3 * 2));
        assert_eq!(read_rstf(&buf[..]).unwrap(), t);
        assert!(read_rstf(&buf[..20]).is_err());
        assert!(read_rstf(&b"RSTF2xxxxxxxx"[..]).is_err());
    }

    #[test]
    fn particle_parsing() {
        let text = "# header\n0 0 0 1\n\n 1.5 -2 3e-1 -0.5 # trailing\n";
        let recs = parse_particle_records(text.as_bytes()).unwrap();
        assert_eq!(recs, vec![([0.0, 0.0, 0.0], 1.0), ([1.5, -2.0, 0.3], -0.5)]);
        assert!(parse_particle_records("".as_bytes()).unwrap().is_empty());
        match parse_particle_records("0 0 0 1\n1 2 3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_particle_records("0 0 x 1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cross_section_of_ones_is_constant() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let csv = cross_section_csv(&CanonicalTensor::ones(&[4, 4, 4]), &g, 1).unwrap();
        let h3 = g.h().powi(3);
        let vals: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 16);
        assert!(vals.iter().all(|&v| (v * h3 - 1.0).abs() < 1e-14));
        assert!(cross_section_csv(&CanonicalTensor::ones(&[4, 4, 4]), &g, 4).is_err());
    }
}
