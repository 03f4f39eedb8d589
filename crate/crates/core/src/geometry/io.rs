//! OBJ, PLY (ASCII and binary little-endian) and XYZ readers.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryFormat {
    Obj,
    Ply,
    Xyz,
}

impl GeometryFormat {
    pub fn from_path(path: &Path) -> Result<Self, GeometryError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "xyz" | "txt" => Ok(Self::Xyz),
            _ => Err(GeometryError::UnknownFormat(path.display().to_string())),
        }
    }
}

impl std::str::FromStr for GeometryFormat {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "xyz" => Ok(Self::Xyz),
            other => Err(GeometryError::UnknownFormat(other.to_string())),
        }
    }
}

/// Where in the input a parse failure occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    #[default]
    Z,
    Y,
}

/// Unit and axis conversion applied to every loaded coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisRemap {
    pub up: UpAxis,
    /// Multiplier converting file units to meters.
    pub scale: f64,
}

impl Default for AxisRemap {
    fn default() -> Self {
        Self {
            up: UpAxis::Z,
            scale: 1.0,
        }
    }
}

impl AxisRemap {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let p = p * self.scale;
        match self.up {
            UpAxis::Z => p,
            UpAxis::Y => Vec3::new(p.x, -p.z, p.y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Mesh(TriMesh),
    Cloud(PointCloud),
}

impl Geometry {
    pub fn points(&self) -> &[Vec3] {
        match self {
            Geometry::Mesh(m) => &m.vertices,
            Geometry::Cloud(c) => &c.points,
        }
    }

    pub fn into_mesh(self) -> Option<TriMesh> {
        match self {
            Geometry::Mesh(m) => Some(m),
            Geometry::Cloud(_) => None,
        }
    }
}

/// Reads a geometry file. The format is inferred from the extension when not given.
pub fn load_geometry(
    path: &Path,
    format: Option<GeometryFormat>,
    remap: &AxisRemap,
) -> Result<Geometry, GeometryError> {
    let format = match format {
        Some(f) => f,
        None => GeometryFormat::from_path(path)?,
    };
    let bytes = std::fs::read(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_geometry(&bytes, format, remap)
}

pub fn parse_geometry(
    bytes: &[u8],
    format: GeometryFormat,
    remap: &AxisRemap,
) -> Result<Geometry, GeometryError> {
    let geometry = match format {
        GeometryFormat::Obj => parse_obj(bytes)?,
        GeometryFormat::Xyz => parse_xyz(bytes)?,
        GeometryFormat::Ply => parse_ply(bytes)?,
    };
    let geometry = match geometry {
        Geometry::Mesh(m) => {
            let vertices = m.vertices.into_iter().map(|p| remap.apply(p)).collect();
            Geometry::Mesh(TriMesh::new(vertices, m.faces)?)
        }
        Geometry::Cloud(c) => {
            Geometry::Cloud(PointCloud::new(c.points.into_iter().map(|p| remap.apply(p)).collect())?)
        }
    };
    if geometry.points().is_empty() {
        return Err(GeometryError::Empty);
    }
    Ok(geometry)
}

fn text(bytes: &[u8]) -> Result<&str, GeometryError> {
    std::str::from_utf8(bytes).map_err(|e| GeometryError::Parse {
        location: Location::Byte(e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })
}

fn parse_f64(tok: Option<&str>, location: Location, what: &str) -> Result<f64, GeometryError> {
    let tok = tok.ok_or_else(|| GeometryError::Parse {
        location,
        message: format!("missing {what}"),
    })?;
    tok.parse::<f64>().map_err(|_| GeometryError::Parse {
        location,
        message: format!("invalid {what} '{tok}'"),
    })
}

fn parse_obj(bytes: &[u8]) -> Result<Geometry, GeometryError> {
    let src = text(bytes)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in src.lines().enumerate() {
        let loc = Location::Line(n + 1);
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), loc, "x coordinate")?;
                let y = parse_f64(toks.next(), loc, "y coordinate")?;
                let z = parse_f64(toks.next(), loc, "z coordinate")?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| GeometryError::Parse {
                        location: loc,
                        message: format!("invalid face index '{tok}'"),
                    })?;
                    let idx = match raw {
                        r if r > 0 => r - 1,
                        r if r < 0 => vertices.len() as i64 + r,
                        _ => -1,
                    };
                    if idx < 0 || idx >= vertices.len() as i64 {
                        return Err(GeometryError::Parse {
                            location: loc,
                            message: format!("face index {raw} out of range"),
                        });
                    }
                    poly.push(idx as u32);
                }
                if poly.len() < 3 {
                    return Err(GeometryError::Parse {
                        location: loc,
                        message: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        Ok(Geometry::Cloud(PointCloud { points: vertices }))
    } else {
        Ok(Geometry::Mesh(TriMesh { vertices, faces }))
    }
}

fn parse_xyz(bytes: &[u8]) -> Result<Geometry, GeometryError> {
    let src = text(bytes)?;
    let mut points = Vec::new();
    for (n, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = Location::Line(n + 1);
        let mut toks = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
        let x = parse_f64(toks.next(), loc, "x coordinate")?;
        let y = parse_f64(toks.next(), loc, "y coordinate")?;
        let z = parse_f64(toks.next(), loc, "z coordinate")?;
        points.push(Vec3::new(x, y, z));
    }
    Ok(Geometry::Cloud(PointCloud { points }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
}

fn ply_err(offset: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        location: Location::Byte(offset),
        message: message.into(),
    }
}

fn parse_ply(bytes: &[u8]) -> Result<Geometry, GeometryError> {
    let mut offset = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ply_err(bytes.len(), "header ended without end_header"))?;
        let line_start = offset;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| ply_err(line_start, "non-text header line"))?
            .trim_end_matches('\r');
        offset += end + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if first {
            if line != "ply" {
                return Err(ply_err(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLe),
            ["format", other, _] => {
                return Err(ply_err(line_start, format!("unsupported PLY encoding '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| ply_err(line_start, format!("invalid element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(line_start, "property before element"))?;
                let (count, item) = Scalar::parse(count)
                    .zip(Scalar::parse(item))
                    .ok_or_else(|| ply_err(line_start, "unknown list property type"))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(line_start, "property before element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| ply_err(line_start, format!("unknown property type '{ty}'")))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(ply_err(line_start, format!("unrecognized header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| ply_err(0, "missing format line"))?;
    let mut reader: Box<dyn PlyReader> = match encoding {
        PlyEncoding::Ascii => Box::new(AsciiReader { bytes, offset }),
        PlyEncoding::BinaryLe => Box::new(BinaryReader { bytes, offset }),
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let axis_slot = |axis: &str| {
            el.properties
                .iter()
                .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
        };
        let slots = [axis_slot("x"), axis_slot("y"), axis_slot("z")];
        for _ in 0..el.count {
            reader.begin_record()?;
            let mut xyz = [0.0; 3];
            let mut poly: Option<Vec<u32>> = None;
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = reader.scalar(*ty)?;
                        for (k, slot) in slots.iter().enumerate() {
                            if *slot == Some(pi) {
                                xyz[k] = v;
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let at = reader.offset();
                        let n = reader.scalar(*count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(ply_err(at, format!("invalid list length {n}")));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(reader.scalar(*item)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            poly = Some(items.iter().map(|&v| v as u32).collect());
                        }
                    }
                }
            }
            reader.end_record()?;
            if el.name == "vertex" {
                if slots.iter().any(Option::is_none) {
                    return Err(ply_err(offset, "vertex element lacks x/y/z properties"));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            } else if let Some(poly) = poly {
                let at = reader.offset();
                if poly.len() < 3 {
                    return Err(ply_err(at, "face needs at least three vertices"));
                }
                if let Some(bad) = poly.iter().find(|&&v| v as usize >= vertices.len()) {
                    return Err(ply_err(at, format!("face index {bad} out of range")));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
        }
    }
    if faces.is_empty() {
        Ok(Geometry::Cloud(PointCloud { points: vertices }))
    } else {
        Ok(Geometry::Mesh(TriMesh { vertices, faces }))
    }
}

trait PlyReader {
    fn offset(&self) -> usize;
    fn begin_record(&mut self) -> Result<(), GeometryError>;
    fn scalar(&mut self, ty: Scalar) -> Result<f64, GeometryError>;
    fn end_record(&mut self) -> Result<(), GeometryError>;
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl PlyReader for BinaryReader<'_> {
    fn offset(&self) -> usize {
        self.offset
    }

    fn begin_record(&mut self) -> Result<(), GeometryError> {
        Ok(())
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64, GeometryError> {
        let size = ty.size();
        let chunk = self
            .bytes
            .get(self.offset..self.offset + size)
            .ok_or_else(|| ply_err(self.offset, "unexpected end of binary data"))?;
        self.offset += size;
        Ok(ty.read_le(chunk))
    }

    fn end_record(&mut self) -> Result<(), GeometryError> {
        Ok(())
    }
}

/// ASCII records are one per line; the reader tracks byte offsets so errors
/// point into the file.
struct AsciiReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl AsciiReader<'_> {
    fn skip_spaces(&mut self) {
        while self.offset < self.bytes.len() && matches!(self.bytes[self.offset], b' ' | b'\t' | b'\r') {
            self.offset += 1;
        }
    }
}

impl PlyReader for AsciiReader<'_> {
    fn offset(&self) -> usize {
        self.offset
    }

    fn begin_record(&mut self) -> Result<(), GeometryError> {
        // skip blank lines between records
        loop {
            self.skip_spaces();
            if self.offset < self.bytes.len() && self.bytes[self.offset] == b'\n' {
                self.offset += 1;
            } else {
                break;
            }
        }
        if self.offset >= self.bytes.len() {
            return Err(ply_err(self.offset, "unexpected end of data: missing record"));
        }
        Ok(())
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64, GeometryError> {
        self.skip_spaces();
        let start = self.offset;
        while self.offset < self.bytes.len() && !self.bytes[self.offset].is_ascii_whitespace() {
            self.offset += 1;
        }
        if start == self.offset {
            return Err(ply_err(start, "unexpected end of record"));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.offset]).unwrap_or("");
        let v: f64 = tok
            .parse()
            .map_err(|_| ply_err(start, format!("invalid number '{tok}'")))?;
        if !matches!(ty, Scalar::F32 | Scalar::F64) && v.fract() != 0.0 {
            return Err(ply_err(start, format!("expected integer, found '{tok}'")));
        }
        Ok(v)
    }

    fn end_record(&mut self) -> Result<(), GeometryError> {
        self.skip_spaces();
        match self.bytes.get(self.offset) {
            None => Ok(()),
            Some(b'\n') => {
                self.offset += 1;
                Ok(())
            }
            Some(_) => Err(ply_err(self.offset, "trailing data in record")),
        }
    }
}

/// Wavefront OBJ text for a mesh. Coordinates use the shortest round-trip form.
pub fn write_obj(mesh: &TriMesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI_OBJ: &str = "# triangle\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";

    #[test]
    fn minimal_obj() {
        let g = parse_geometry(TRI_OBJ.as_bytes(), GeometryFormat::Obj, &AxisRemap::default()).unwrap();
        let m = g.into_mesh().unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_quads_slashes_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3//3 -1\n";
        let m = parse_geometry(src.as_bytes(), GeometryFormat::Obj, &AxisRemap::default())
            .unwrap()
            .into_mesh()
            .unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_bad_line_reports_line_number() {
        let src = "v 0 0 0\nv 1 zero 0\n";
        let err = parse_geometry(src.as_bytes(), GeometryFormat::Obj, &AxisRemap::default()).unwrap_err();
        match err {
            GeometryError::Parse { location, .. } => assert_eq!(location, Location::Line(2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn xyz_lines_become_points() {
        let src = "0 0 0\n1 2 3\n\n# c\n4,5,6 255 0 0\n";
        let g = parse_geometry(src.as_bytes(), GeometryFormat::Xyz, &AxisRemap::default()).unwrap();
        assert_eq!(g.points().len(), 3);
        assert_eq!(g.points()[2], Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn empty_geometry_is_distinct_error() {
        let err = parse_geometry(b"# nothing\n", GeometryFormat::Xyz, &AxisRemap::default()).unwrap_err();
        assert!(matches!(err, GeometryError::Empty));
    }

    const ASCII_PLY: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn ascii_ply_mesh() {
        let m = parse_geometry(ASCII_PLY.as_bytes(), GeometryFormat::Ply, &AxisRemap::default())
            .unwrap()
            .into_mesh()
            .unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn truncated_ply_reports_byte_offset() {
        let cut = ASCII_PLY.find("0 1 0\n").unwrap();
        let truncated = &ASCII_PLY[..cut];
        let err = parse_geometry(truncated.as_bytes(), GeometryFormat::Ply, &AxisRemap::default()).unwrap_err();
        match err {
            GeometryError::Parse { location, .. } => assert_eq!(location, Location::Byte(cut)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn binary_ply_matches_ascii() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for p in [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] {
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            bytes.push(200);
        }
        bytes.push(3);
        for i in 0u32..3 {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let bin = parse_geometry(&bytes, GeometryFormat::Ply, &AxisRemap::default()).unwrap();
        let asc = parse_geometry(ASCII_PLY.as_bytes(), GeometryFormat::Ply, &AxisRemap::default()).unwrap();
        assert_eq!(bin, asc);

        let err = parse_geometry(&bytes[..bytes.len() - 2], GeometryFormat::Ply, &AxisRemap::default()).unwrap_err();
        assert!(matches!(err, GeometryError::Parse { location: Location::Byte(_), .. }));
    }

    #[test]
    fn y_up_remap() {
        let remap = AxisRemap {
            up: UpAxis::Y,
            scale: 0.01,
        };
        let g = parse_geometry(b"0 100 200\n", GeometryFormat::Xyz, &remap).unwrap();
        let p = g.points()[0];
        assert!((p - Vec3::new(0.0, -2.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn obj_writer_round_trips() {
        let mesh = TriMesh::cuboid(Vec3::new(0.1, -0.25, 0.0), Vec3::new(1.0 / 3.0, 0.5, 2.0));
        let text = write_obj(&mesh);
        let back = parse_geometry(text.as_bytes(), GeometryFormat::Obj, &AxisRemap::default())
            .unwrap()
            .into_mesh()
            .unwrap();
        assert_eq!(back, mesh);
    }
}
