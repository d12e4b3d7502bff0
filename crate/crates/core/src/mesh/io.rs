//! OFF, OBJ (read only) and legacy ASCII VTK polydata.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Vtk,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "off" => Ok(Self::Off),
            "obj" => Ok(Self::Obj),
            "vtk" => Ok(Self::Vtk),
            _ => Err(Error::UnsupportedFormat(path.display().to_string())),
        }
    }
}

/// Loads a mesh, picking the format from the file extension. Orientation
/// problems are logged, not rejected; see [`TriMesh::check_registration_input`].
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mesh = match MeshFormat::from_path(path)? {
        MeshFormat::Off => parse_off(&text)?,
        MeshFormat::Obj => parse_obj(&text)?,
        MeshFormat::Vtk => parse_vtk(&text)?.0,
    };
    match mesh.orientation() {
        Ok(o) => {
            if let Some((a, b)) = o.boundary_edge {
                log::warn!("{}: open surface, boundary edge ({a}, {b})", path.display());
            }
        }
        Err(e) => log::warn!("{}: {e}", path.display()),
    }
    Ok(mesh)
}

/// Writes OFF or VTK depending on the extension. The scalar field, when given,
/// is written as VTK point data; OFF cannot carry it.
pub fn save_mesh(mesh: &TriMesh, scalars: Option<&[f64]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match MeshFormat::from_path(path)? {
        MeshFormat::Off if scalars.is_none() => save_off(mesh, path),
        MeshFormat::Vtk => save_vtk(mesh, scalars, path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} (writable: .off without scalars, .vtk)",
            path.display()
        ))),
    }
}

pub fn save_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, off_string(mesh))?;
    Ok(())
}

pub fn save_vtk(mesh: &TriMesh, scalars: Option<&[f64]>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, vtk_string(mesh, scalars)?)?;
    Ok(())
}

/// Reads a legacy VTK polydata file with its first point-data scalar array.
pub fn read_vtk(path: impl AsRef<Path>) -> Result<(TriMesh, Option<Vec<f64>>)> {
    parse_vtk(&fs::read_to_string(path)?)
}

fn off_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    writeln!(s, "OFF").unwrap();
    writeln!(s, "{} {} 0", mesh.n_vertices(), mesh.n_faces()).unwrap();
    for x in mesh.vertices() {
        writeln!(s, "{} {} {}", x.x, x.y, x.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    s
}

fn vtk_string(mesh: &TriMesh, scalars: Option<&[f64]>) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "atroreg surface").unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET POLYDATA").unwrap();
    writeln!(s, "POINTS {} double", mesh.n_vertices()).unwrap();
    for x in mesh.vertices() {
        writeln!(s, "{} {} {}", x.x, x.y, x.z).unwrap();
    }
    writeln!(s, "POLYGONS {} {}", mesh.n_faces(), 4 * mesh.n_faces()).unwrap();
    for f in mesh.faces() {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    if let Some(values) = scalars {
        if values.len() != mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: mesh.n_vertices(),
                got: values.len(),
            });
        }
        writeln!(s, "POINT_DATA {}", mesh.n_vertices()).unwrap();
        writeln!(s, "SCALARS normal_displacement double 1").unwrap();
        writeln!(s, "LOOKUP_TABLE default").unwrap();
        for v in values {
            writeln!(s, "{v}").unwrap();
        }
    }
    Ok(s)
}

/// Whitespace tokens tagged with their 1-based line number, comments removed.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| {
                let line = line.split('#').next().unwrap_or("");
                line.split_whitespace().map(move |t| (i + 1, t))
            })
            .collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |&(l, _)| l)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.line();
        let tok = self.items.get(self.pos).ok_or(Error::Parse {
            line,
            msg: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok(tok.1)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let line = self.line();
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found '{tok}'"),
        })
    }

    fn expect(&mut self, keyword: &str) -> Result<()> {
        let line = self.line();
        let tok = self.next()?;
        if tok.eq_ignore_ascii_case(keyword) {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                msg: format!("expected '{keyword}', found '{tok}'"),
            })
        }
    }

    fn point(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(
            self.parse("coordinate")?,
            self.parse("coordinate")?,
            self.parse("coordinate")?,
        ))
    }

    fn triangle(&mut self) -> Result<[usize; 3]> {
        let line = self.line();
        let count: usize = self.parse("vertex count")?;
        if count != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("only triangular faces are supported, found {count}-gon"),
            });
        }
        Ok([
            self.parse("vertex index")?,
            self.parse("vertex index")?,
            self.parse("vertex index")?,
        ])
    }
}

fn build(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, face_lines: &[usize]) -> Result<TriMesh> {
    TriMesh::new(vertices, faces).map_err(|e| match e {
        Error::FaceIndexOutOfRange { face, .. } | Error::DegenerateFace(face) => Error::Parse {
            line: face_lines[face],
            msg: e.to_string(),
        },
        e => e,
    })
}

fn parse_off(text: &str) -> Result<TriMesh> {
    let mut toks = Tokens::new(text);
    toks.expect("OFF")?;
    let nv: usize = toks.parse("vertex count")?;
    let nf: usize = toks.parse("face count")?;
    let _ne: usize = toks.parse("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = toks.line();
        vertices.push(toks.point()?);
        // skip per-vertex extras (colors) on the same line
        while toks.pos < toks.items.len() && toks.items[toks.pos].0 == line {
            toks.pos += 1;
        }
    }
    let mut faces = Vec::with_capacity(nf);
    let mut lines = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = toks.line();
        lines.push(line);
        faces.push(toks.triangle()?);
        while toks.pos < toks.items.len() && toks.items[toks.pos].0 == line {
            toks.pos += 1;
        }
    }
    build(vertices, faces, &lines)
}

fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut it = raw.split('#').next().unwrap_or("").split_whitespace();
        let err = |msg: String| Error::Parse { line: line_no, msg };
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse().map_err(|_| err(format!("bad coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let v: i64 = first
                            .parse()
                            .map_err(|_| err(format!("bad face index '{t}'")))?;
                        let resolved = if v < 0 { vertices.len() as i64 + v } else { v - 1 };
                        usize::try_from(resolved).map_err(|_| err(format!("face index '{t}' out of range")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(format!(
                        "only triangular faces are supported, found {}-gon",
                        idx.len()
                    )));
                }
                faces.push([idx[0], idx[1], idx[2]]);
                lines.push(line_no);
            }
            _ => {}
        }
    }
    build(vertices, faces, &lines)
}

fn parse_vtk(text: &str) -> Result<(TriMesh, Option<Vec<f64>>)> {
    let mut header = text.lines();
    let first = header.next().unwrap_or("");
    if !first.starts_with("# vtk DataFile") {
        return Err(Error::Parse {
            line: 1,
            msg: "missing '# vtk DataFile' header".into(),
        });
    }
    // title line is free text; tokenize from line 3 onwards
    let body: String = text.lines().skip(2).collect::<Vec<_>>().join("\n");
    let mut toks = Tokens::new(&body);
    for item in &mut toks.items {
        item.0 += 2;
    }
    toks.expect("ASCII")?;
    toks.expect("DATASET")?;
    toks.expect("POLYDATA")?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut lines = Vec::new();
    let mut scalars = None;
    while let Some(kw) = toks.peek() {
        let line = toks.line();
        match kw.to_ascii_uppercase().as_str() {
            "POINTS" => {
                toks.next()?;
                let n: usize = toks.parse("point count")?;
                toks.next()?; // data type
                vertices = (0..n).map(|_| toks.point()).collect::<Result<_>>()?;
            }
            "POLYGONS" => {
                toks.next()?;
                let n: usize = toks.parse("polygon count")?;
                let _size: usize = toks.parse("polygon list size")?;
                for _ in 0..n {
                    lines.push(toks.line());
                    faces.push(toks.triangle()?);
                }
            }
            "POINT_DATA" => {
                toks.next()?;
                let n: usize = toks.parse("point data count")?;
                toks.expect("SCALARS")?;
                toks.next()?; // name
                toks.next()?; // type
                if toks.peek().is_some_and(|t| t.parse::<usize>().is_ok()) {
                    let comps: usize = toks.parse("component count")?;
                    if comps != 1 {
                        return Err(Error::Parse {
                            line,
                            msg: "only single-component scalars are supported".into(),
                        });
                    }
                }
                if toks.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                    toks.next()?;
                    toks.next()?;
                }
                scalars = Some((0..n).map(|_| toks.parse("scalar")).collect::<Result<Vec<f64>>>()?);
                // any further arrays are ignored
                break;
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unsupported section '{other}'"),
                })
            }
        }
    }
    Ok((build(vertices, faces, &lines)?, scalars))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    const TET_OFF: &str = "OFF\n# unit tetrahedron\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn parses_off_tetrahedron() {
        let m = parse_off(TET_OFF).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_faces(), 4);
        assert!((m.volume().value - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn off_errors_carry_line_numbers() {
        let bad = TET_OFF.replace("0 1 0\n", "0 x 0\n");
        match parse_off(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let bad = TET_OFF.replace("3 1 2 3", "3 1 2 9");
        match parse_off(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("{other:?}"),
        }
        let quad = TET_OFF.replace("3 1 2 3", "4 1 2 3 0");
        assert!(matches!(parse_off(&quad), Err(Error::Parse { line: 11, .. })));
    }

    #[test]
    fn parses_obj_with_slashes_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1/1 3/2 2/3\nf 1 2 4\nf 1 4 3\nf -3 -2 -1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.faces(), parse_off(TET_OFF).unwrap().faces());
    }

    #[test]
    fn vtk_round_trip_with_scalars() {
        let m = icosphere(1);
        let values: Vec<f64> = (0..m.n_vertices()).map(|i| i as f64 * 0.25 - 3.0).collect();
        let text = vtk_string(&m, Some(&values)).unwrap();
        let (back, scalars) = parse_vtk(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(scalars.unwrap(), values);
    }

    #[test]
    fn vtk_rejects_wrong_scalar_length() {
        let m = icosphere(0);
        assert!(vtk_string(&m, Some(&[1.0])).is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(MeshFormat::from_path(Path::new("a/b.OFF")).unwrap(), MeshFormat::Off);
        assert!(MeshFormat::from_path(Path::new("a.stl")).is_err());
    }
}
