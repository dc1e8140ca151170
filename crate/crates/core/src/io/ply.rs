//! Minimal PLY reader/writer: ASCII and binary little-endian, scalar
//! properties plus at most one list property per element.

use std::io::Write;
use std::path::Path;

use crate::mesh::TriangleMesh;
use crate::surfel::{Scene, Surfel};
use crate::{sh, Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

impl std::str::FromStr for PlyFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ascii" => Ok(PlyFormat::Ascii),
            "binary" | "binary_little_endian" => Ok(PlyFormat::BinaryLittleEndian),
            other => Err(format!(
                "unknown PLY format `{other}` (expected ascii or binary)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Scalar {
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Scalar::I8 => "char",
            Scalar::U8 => "uchar",
            Scalar::I16 => "short",
            Scalar::U16 => "ushort",
            Scalar::I32 => "int",
            Scalar::U32 => "uint",
            Scalar::F32 => "float",
            Scalar::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Scalar::I8 => out.push(v as i8 as u8),
            Scalar::U8 => out.push(v as u8),
            Scalar::I16 => out.extend((v as i16).to_le_bytes()),
            Scalar::U16 => out.extend((v as u16).to_le_bytes()),
            Scalar::I32 => out.extend((v as i32).to_le_bytes()),
            Scalar::U32 => out.extend((v as u32).to_le_bytes()),
            Scalar::F32 => out.extend((v as f32).to_le_bytes()),
            Scalar::F64 => out.extend(v.to_le_bytes()),
        }
    }

    fn ascii(self, v: f64) -> String {
        match self {
            Scalar::F32 => format!("{}", v as f32),
            Scalar::F64 => format!("{v}"),
            _ => format!("{}", v as i64),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Property {
    pub name: String,
    pub kind: Scalar,
    /// Count type of a list property.
    pub list: Option<Scalar>,
}

/// One element block, values widened to f64. `scalars` is row-major over the
/// scalar properties, `lists` holds one entry per row for the list property.
#[derive(Clone, Debug)]
pub(crate) struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub scalars: Vec<f64>,
    pub lists: Vec<Vec<f64>>,
}

impl Element {
    fn scalar_props(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| p.list.is_none())
    }

    fn scalar_count(&self) -> usize {
        self.scalar_props().count()
    }

    /// Column of a scalar property among the scalar properties.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.scalar_props().position(|p| p.name == name)
    }

    pub fn value(&self, row: usize, column: usize) -> f64 {
        self.scalars[row * self.scalar_count() + column]
    }
}

pub(crate) struct Ply {
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl Ply {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub(crate) fn read(path: &Path) -> Result<Ply> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::format("PLY", path, reason);
    let end = b"end_header";
    let header_end = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| fail("missing end_header".into()))?;
    let mut body = header_end + end.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| fail("header is not UTF-8".into()))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(fail("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(fail(format!("unsupported format `{other}`"))),
                })
            }
            ["comment", ..] => comments.push(line["comment".len()..].trim().to_string()),
            ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| fail(format!("bad element count `{count}`")))?,
                properties: Vec::new(),
                scalars: Vec::new(),
                lists: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| fail("property before element".into()))?;
                if el.properties.iter().any(|p| p.list.is_some()) {
                    return Err(fail(format!(
                        "element `{}` has more than one list property",
                        el.name
                    )));
                }
                let c =
                    Scalar::parse(count).ok_or_else(|| fail(format!("unknown type `{count}`")))?;
                let k =
                    Scalar::parse(item).ok_or_else(|| fail(format!("unknown type `{item}`")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: k,
                    list: Some(c),
                });
            }
            ["property", kind, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| fail("property before element".into()))?;
                let k =
                    Scalar::parse(kind).ok_or_else(|| fail(format!("unknown type `{kind}`")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: k,
                    list: None,
                });
            }
            _ => return Err(fail(format!("unrecognized header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| fail("missing format line".into()))?;
    let body = &bytes[body..];
    match format {
        PlyFormat::Ascii => {
            let text =
                std::str::from_utf8(body).map_err(|_| fail("ASCII body is not UTF-8".into()))?;
            let mut tokens = text.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tokens
                    .next()
                    .ok_or_else(|| fail(format!("truncated body while reading {what}")))?;
                t.parse::<f64>()
                    .map_err(|_| fail(format!("bad number `{t}` in {what}")))
            };
            for el in &mut elements {
                for _ in 0..el.count {
                    for p in &el.properties {
                        if p.list.is_some() {
                            let n = next(&p.name)? as usize;
                            let items = (0..n)
                                .map(|_| next(&p.name))
                                .collect::<Result<Vec<f64>>>()?;
                            el.lists.push(items);
                        } else {
                            el.scalars.push(next(&p.name)?);
                        }
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut at = 0usize;
            let mut take = |k: Scalar, what: &str| -> Result<f64> {
                let b = body
                    .get(at..at + k.size())
                    .ok_or_else(|| fail(format!("truncated body while reading {what}")))?;
                at += k.size();
                Ok(k.decode(b))
            };
            for el in &mut elements {
                for _ in 0..el.count {
                    for p in &el.properties {
                        if let Some(c) = p.list {
                            let n = take(c, &p.name)? as usize;
                            let items = (0..n)
                                .map(|_| take(p.kind, &p.name))
                                .collect::<Result<Vec<f64>>>()?;
                            el.lists.push(items);
                        } else {
                            el.scalars.push(take(p.kind, &p.name)?);
                        }
                    }
                }
            }
        }
    }
    Ok(Ply { comments, elements })
}

pub(crate) fn write(path: &Path, format: PlyFormat, ply: &Ply) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\n");
    for c in &ply.comments {
        header += &format!("comment {c}\n");
    }
    for el in &ply.elements {
        header += &format!("element {} {}\n", el.name, el.count);
        for p in &el.properties {
            match p.list {
                Some(c) => {
                    header += &format!("property list {} {} {}\n", c.name(), p.kind.name(), p.name)
                }
                None => header += &format!("property {} {}\n", p.kind.name(), p.name),
            }
        }
    }
    header += "end_header\n";
    out.extend(header.as_bytes());
    for el in &ply.elements {
        let ns = el.scalar_count();
        let mut line = String::new();
        for row in 0..el.count {
            let mut col = 0;
            line.clear();
            for p in &el.properties {
                match (p.list, format) {
                    (Some(c), PlyFormat::Ascii) => {
                        let items = &el.lists[row];
                        line += &c.ascii(items.len() as f64);
                        for v in items {
                            line.push(' ');
                            line += &p.kind.ascii(*v);
                        }
                        line.push(' ');
                    }
                    (Some(c), PlyFormat::BinaryLittleEndian) => {
                        let items = &el.lists[row];
                        c.encode(items.len() as f64, &mut out);
                        items.iter().for_each(|v| p.kind.encode(*v, &mut out));
                    }
                    (None, PlyFormat::Ascii) => {
                        line += &p.kind.ascii(el.scalars[row * ns + col]);
                        line.push(' ');
                        col += 1;
                    }
                    (None, PlyFormat::BinaryLittleEndian) => {
                        p.kind.encode(el.scalars[row * ns + col], &mut out);
                        col += 1;
                    }
                }
            }
            if format == PlyFormat::Ascii {
                out.extend(line.trim_end().as_bytes());
                out.push(b'\n');
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn scalar_element(
    name: &str,
    names: &[String],
    kind: Scalar,
    rows: usize,
    scalars: Vec<f64>,
) -> Element {
    Element {
        name: name.into(),
        count: rows,
        properties: names
            .iter()
            .map(|n| Property {
                name: n.clone(),
                kind,
                list: None,
            })
            .collect(),
        scalars,
        lists: Vec::new(),
    }
}

/// Per-vertex property names of a surfel file with `sh_count` SH coefficients.
pub fn surfel_property_names(sh_count: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "x", "y", "z", "tu_x", "tu_y", "tu_z", "tv_x", "tv_y", "tv_z", "su", "sv", "opacity",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..3 * sh_count).map(|i| format!("sh_{i}")));
    names
}

/// Saves every surfel field as a double, so a round trip is bit-exact. The
/// background color and scene radius ride along as header comments.
pub fn write_scene(path: &Path, scene: &Scene, format: PlyFormat) -> Result<()> {
    scene.validate()?;
    let sh_count = scene.sh_count();
    let names = surfel_property_names(sh_count);
    let mut scalars = Vec::with_capacity(scene.len() * names.len());
    for s in &scene.surfels {
        scalars.extend(
            s.center
                .iter()
                .chain(s.tangent_u.iter())
                .chain(s.tangent_v.iter()),
        );
        scalars.extend([s.scale[0], s.scale[1], s.opacity]);
        scalars.extend(s.sh_coeffs.iter().flat_map(|c| c.iter().copied()));
    }
    let b = scene.background;
    let ply = Ply {
        comments: vec![
            format!("background {} {} {}", b.x, b.y, b.z),
            format!("scene_radius {}", scene.scene_radius),
        ],
        elements: vec![scalar_element(
            "vertex",
            &names,
            Scalar::F64,
            scene.len(),
            scalars,
        )],
    };
    write(path, format, &ply)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let ply = read(path)?;
    let fail = |reason: String| Error::format("PLY", path, reason);
    let el = ply
        .element("vertex")
        .ok_or_else(|| fail("no vertex element".into()))?;
    let n_sh = el
        .scalar_props()
        .filter(|p| p.name.starts_with("sh_"))
        .count();
    if n_sh == 0 || n_sh % 3 != 0 || sh::degree_for(n_sh / 3).is_none() {
        return Err(fail(format!(
            "{n_sh} sh_* properties do not form a complete SH basis"
        )));
    }
    let names = surfel_property_names(n_sh / 3);
    let cols = names
        .iter()
        .map(|n| {
            el.column(n)
                .ok_or_else(|| fail(format!("missing vertex property `{n}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let surfels = (0..el.count)
        .map(|r| {
            let v = |i: usize| el.value(r, cols[i]);
            let v3 = |i: usize| Vec3::new(v(i), v(i + 1), v(i + 2));
            Surfel {
                center: v3(0),
                tangent_u: v3(3),
                tangent_v: v3(6),
                scale: [v(9), v(10)],
                opacity: v(11),
                sh_coeffs: (0..n_sh / 3).map(|k| v3(12 + 3 * k)).collect(),
            }
        })
        .collect();
    let mut background = Vec3::zeros();
    let mut scene_radius = 1.0;
    for c in &ply.comments {
        let tok: Vec<&str> = c.split_whitespace().collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| fail(format!("bad number in comment `{c}`")))
        };
        match tok.as_slice() {
            ["background", r, g, b] => background = Vec3::new(num(r)?, num(g)?, num(b)?),
            ["scene_radius", r] => scene_radius = num(r)?,
            _ => {}
        }
    }
    let scene = Scene::new(surfels, background, scene_radius);
    scene.validate()?;
    Ok(scene)
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    mesh.validate()?;
    let names = ["x", "y", "z"].map(String::from);
    let scalars = mesh
        .vertices
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect();
    let faces = Element {
        name: "face".into(),
        count: mesh.triangles.len(),
        properties: vec![Property {
            name: "vertex_indices".into(),
            kind: Scalar::I32,
            list: Some(Scalar::U8),
        }],
        scalars: Vec::new(),
        lists: mesh
            .triangles
            .iter()
            .map(|t| t.iter().map(|&i| i as f64).collect())
            .collect(),
    };
    let ply = Ply {
        comments: Vec::new(),
        elements: vec![
            scalar_element("vertex", &names, Scalar::F64, mesh.vertices.len(), scalars),
            faces,
        ],
    };
    write(path, format, &ply)
}

fn read_xyz(path: &Path, ply: &Ply) -> Result<Vec<Vec3>> {
    let fail = |reason: String| Error::format("PLY", path, reason);
    let el = ply
        .element("vertex")
        .ok_or_else(|| fail("no vertex element".into()))?;
    let col = |n: &str| {
        el.column(n)
            .ok_or_else(|| fail(format!("missing vertex property `{n}`")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    Ok((0..el.count)
        .map(|r| Vec3::new(el.value(r, cx), el.value(r, cy), el.value(r, cz)))
        .collect())
}

/// Triangle mesh; polygons with more than three corners are fanned. A file
/// without faces reads as a vertex-only mesh.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let ply = read(path)?;
    let vertices = read_xyz(path, &ply)?;
    let mut triangles = Vec::new();
    if let Some(faces) = ply.element("face") {
        for f in &faces.lists {
            for k in 1..f.len().saturating_sub(1) {
                triangles.push([f[0] as usize, f[k] as usize, f[k + 1] as usize]);
            }
        }
    }
    let mesh = TriangleMesh {
        vertices,
        triangles,
    };
    mesh.validate()
        .map_err(|e| Error::format("PLY", path, e.to_string()))?;
    Ok(mesh)
}

/// Point cloud with optional 8-bit colors (`red`, `green`, `blue`).
pub fn write_points(
    path: &Path,
    points: &[Vec3],
    colors: Option<&[Vec3]>,
    format: PlyFormat,
) -> Result<()> {
    let mut el = scalar_element(
        "vertex",
        &["x", "y", "z"].map(String::from),
        Scalar::F64,
        points.len(),
        Vec::new(),
    );
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for {} points",
                c.len(),
                points.len()
            )));
        }
        for n in ["red", "green", "blue"] {
            el.properties.push(Property {
                name: n.into(),
                kind: Scalar::U8,
                list: None,
            });
        }
    }
    for (i, p) in points.iter().enumerate() {
        el.scalars.extend(p.iter());
        if let Some(c) = colors {
            el.scalars
                .extend(c[i].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round()));
        }
    }
    write(
        path,
        format,
        &Ply {
            comments: Vec::new(),
            elements: vec![el],
        },
    )
}

/// Points and, when present, colors scaled to [0, 1] (integer channels are
/// divided by 255, float channels taken as is).
pub fn read_points(path: &Path) -> Result<(Vec<Vec3>, Option<Vec<Vec3>>)> {
    let ply = read(path)?;
    let points = read_xyz(path, &ply)?;
    let el = ply.element("vertex").expect("checked by read_xyz");
    let cols: Option<Vec<usize>> = ["red", "green", "blue"]
        .iter()
        .map(|n| el.column(n))
        .collect();
    let colors = cols.map(|c| {
        let kind = el.scalar_props().nth(c[0]).unwrap().kind;
        let s = if matches!(kind, Scalar::F32 | Scalar::F64) {
            1.0
        } else {
            255.0
        };
        (0..el.count)
            .map(|r| Vec3::new(el.value(r, c[0]), el.value(r, c[1]), el.value(r, c[2])) / s)
            .collect()
    });
    Ok((points, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfel_strategy(sh_count: usize) -> impl Strategy<Value = Surfel> {
        (
            prop::array::uniform3(-1e3..1e3f64),
            prop::array::uniform2(1e-9..10.0f64),
            0.0..=1.0f64,
            prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), sh_count),
            0.0..std::f64::consts::TAU,
        )
            .prop_map(|(c, s, o, sh, a)| Surfel {
                center: Vec3::from(c),
                tangent_u: Vec3::new(a.cos(), a.sin(), 0.0),
                tangent_v: Vec3::new(-a.sin(), a.cos(), 0.0),
                scale: s,
                opacity: o,
                sh_coeffs: sh.into_iter().map(Vec3::from).collect(),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scene_round_trip_is_bit_exact(surfels in prop::collection::vec(surfel_strategy(9), 0..20), r in 0.1..10.0f64) {
            let dir = tempfile::tempdir().unwrap();
            let scene = Scene::new(surfels, Vec3::new(0.1, 0.2, 1.0 / 3.0), r);
            for (i, fmt) in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian].into_iter().enumerate() {
                let path = dir.path().join(format!("s{i}.ply"));
                write_scene(&path, &scene, fmt).unwrap();
                prop_assert_eq!(&read_scene(&path).unwrap(), &scene);
            }
        }
    }

    #[test]
    fn mesh_and_points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::zeros(),
                Vec3::x(),
                Vec3::new(0.1, 0.7, 1e-9),
                Vec3::z(),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        };
        let colors = vec![
            Vec3::new(1.0, 0.0, 0.2),
            Vec3::zeros(),
            Vec3::repeat(0.5),
            Vec3::x(),
        ];
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let p = dir.path().join("m.ply");
            write_mesh(&p, &mesh, fmt).unwrap();
            assert_eq!(read_mesh(&p).unwrap(), mesh);
            write_points(&p, &mesh.vertices, Some(&colors), fmt).unwrap();
            let (pts, cols) = read_points(&p).unwrap();
            assert_eq!(pts, mesh.vertices);
            let cols = cols.unwrap();
            assert!((cols[0] - Vec3::new(1.0, 0.0, 51.0 / 255.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn reads_foreign_float_files_and_fans_quads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.ply");
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\nproperty float x\nproperty float y\n\
                    property float z\nproperty float nx\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n\
                    0 0 0 1\n1 0 0 1\n1 1 0 1\n0 1 0 1\n4 0 1 2 3\n";
        std::fs::write(&p, text).unwrap();
        let m = read_mesh(&p).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.vertices[2], Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn malformed_files_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ply");
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nend_header\n1.0\n",
        )
        .unwrap();
        let err = read_points(&p).unwrap_err().to_string();
        assert!(
            err.contains("truncated") && err.contains("bad.ply"),
            "{err}"
        );
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nend_header\n1.0\n",
        )
        .unwrap();
        assert!(read_scene(&p).unwrap_err().to_string().contains("sh_"));
        assert!(read_scene(&dir.path().join("missing.ply"))
            .unwrap_err()
            .to_string()
            .contains("missing.ply"));
    }
}
