use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{SceneView, SynthError, SyntheticScene};
use crate::geometry::{CameraIntrinsics, Correspondence, CorrespondenceSet, Image, PointCloud, Pose};

pub const FEATURE_MAGIC: &[u8; 8] = b"FEATF32\x01";

fn io_err(path: &Path, e: std::io::Error) -> SynthError {
    SynthError::Io(format!("{}: {e}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, SynthError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn parse_err(offset: usize, msg: impl Into<String>) -> SynthError {
    SynthError::Parse { offset: offset as u64, msg: msg.into() }
}

fn range_err(offset: usize, msg: impl Into<String>) -> SynthError {
    SynthError::Range { offset: offset as u64, msg: msg.into() }
}

fn utf8(bytes: &[u8]) -> Result<&str, SynthError> {
    std::str::from_utf8(bytes).map_err(|e| parse_err(e.valid_up_to(), "invalid UTF-8"))
}

/// Whitespace-separated tokens of a line, with their absolute byte offsets.
fn tokens(line: &str, base: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_ascii_whitespace(), start) {
            (true, Some(s)) => {
                out.push((base + s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((base + s, &line[s..]));
    }
    out
}

/// `\n`-terminated lines with their starting offsets. A missing final newline is a
/// truncation.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), SynthError> {
        let rest = &self.text[self.pos..];
        let Some(end) = rest.find('\n') else {
            return Err(parse_err(self.pos, format!("truncated before end of {what}")));
        };
        let start = self.pos;
        self.pos += end + 1;
        Ok((start, &rest[..end]))
    }

    fn finish(&self) -> Result<(), SynthError> {
        if self.pos == self.text.len() { Ok(()) } else { Err(parse_err(self.pos, "trailing data")) }
    }
}

fn parse_num<T: FromStr>(tok: (usize, &str), what: &str) -> Result<T, SynthError> {
    tok.1.parse().map_err(|_| parse_err(tok.0, format!("bad {what} `{}`", tok.1)))
}

fn expect_count(toks: &[(usize, &str)], n: usize, line_at: usize, what: &str) -> Result<(), SynthError> {
    if toks.len() == n {
        Ok(())
    } else {
        let at = toks.get(n).map_or(line_at, |t| t.0);
        Err(parse_err(at, format!("{what}: expected {n} fields, found {}", toks.len())))
    }
}

// ---------------------------------------------------------------- point clouds

pub fn cloud_to_string(cloud: &PointCloud) -> String {
    let has = cloud.labels.is_some();
    let mut s = format!("PCTXT v1 {} {}\n", cloud.len(), has as u8);
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.positions[i];
        let [r, g, b] = cloud.colors[i];
        write!(s, "{x:.8e} {y:.8e} {z:.8e} {r:.8e} {g:.8e} {b:.8e}").expect("write to String");
        if let Some(l) = &cloud.labels {
            write!(s, " {}", l[i]).expect("write to String");
        }
        s.push('\n');
    }
    s
}

pub fn cloud_from_str(text: &str) -> Result<PointCloud, SynthError> {
    let mut lines = Lines::new(text);
    let (at, header) = lines.next("header")?;
    let h = tokens(header, at);
    if h.len() < 2 || h[0].1 != "PCTXT" || h[1].1 != "v1" {
        return Err(parse_err(at, "expected `PCTXT v1` header"));
    }
    expect_count(&h, 4, at, "header")?;
    let n: usize = parse_num(h[2], "point count")?;
    let has_labels = match h[3].1 {
        "0" => false,
        "1" => true,
        _ => return Err(parse_err(h[3].0, "label flag must be 0 or 1")),
    };
    let fields = if has_labels { 7 } else { 6 };
    let mut positions = Vec::with_capacity(n.min(1 << 20));
    let mut colors = Vec::with_capacity(n.min(1 << 20));
    let mut labels = has_labels.then(Vec::new);
    for _ in 0..n {
        let (at, line) = lines.next("point records")?;
        let t = tokens(line, at);
        expect_count(&t, fields, at, "point record")?;
        let mut v = [0f32; 6];
        for k in 0..6 {
            v[k] = parse_num(t[k], "coordinate")?;
            if !v[k].is_finite() {
                return Err(range_err(t[k].0, "non-finite value"));
            }
        }
        for k in 3..6 {
            if !(0.0..=1.0).contains(&v[k]) {
                return Err(range_err(t[k].0, format!("colour {} outside [0, 1]", v[k])));
            }
        }
        positions.push([v[0], v[1], v[2]]);
        colors.push([v[3], v[4], v[5]]);
        if let Some(l) = labels.as_mut() {
            l.push(parse_num(t[6], "label")?);
        }
    }
    lines.finish()?;
    PointCloud::new(positions, colors, labels).map_err(|e| range_err(0, e.to_string()))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), SynthError> {
    write_bytes(path.as_ref(), cloud_to_string(cloud).as_bytes())
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud, SynthError> {
    cloud_from_str(utf8(&read_bytes(path.as_ref())?)?)
}

// ---------------------------------------------------------------------- images

/// Binary PPM; every channel is quantised to `round(255·x)`.
pub fn image_to_ppm(img: &Image) -> Vec<u8> {
    let q = img.quantized();
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(q.pixels.iter().map(|&x| (x * 255.0).round() as u8));
    out
}

pub fn image_from_ppm(bytes: &[u8]) -> Result<Image, SynthError> {
    let mut pos = 0;
    let mut header = [0usize; 3];
    if bytes.get(..2) != Some(b"P6") {
        return Err(parse_err(0, "expected `P6` magic"));
    }
    pos += 2;
    for (k, what) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(parse_err(pos, format!("truncated before {what}"))),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ASCII digits");
        header[k] = digits.parse().map_err(|_| parse_err(start, format!("bad {what}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(pos, "expected whitespace after maxval")),
    }
    let [w, h, maxval] = header;
    if maxval != 255 {
        return Err(range_err(pos, format!("maxval {maxval}, only 255 is supported")));
    }
    let n = w.checked_mul(h).and_then(|x| x.checked_mul(3)).ok_or_else(|| range_err(0, "image too large"))?;
    let data = &bytes[pos..];
    if data.len() < n {
        return Err(parse_err(bytes.len(), format!("truncated pixel data: {} of {n} bytes", data.len())));
    }
    if data.len() > n {
        return Err(parse_err(pos + n, "trailing data"));
    }
    Image::new(w, h, data.iter().map(|&b| b as f64 / 255.0).collect()).map_err(|e| range_err(pos, e.to_string()))
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<(), SynthError> {
    write_bytes(path.as_ref(), &image_to_ppm(img))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image, SynthError> {
    image_from_ppm(&read_bytes(path.as_ref())?)
}

// --------------------------------------------------------------------- cameras

pub fn camera_to_string(pose: &Pose, intr: &CameraIntrinsics) -> String {
    let mut s = String::from("CAMTXT v1\n");
    for (k, v) in [("fx", intr.fx), ("fy", intr.fy), ("cx", intr.cx), ("cy", intr.cy)] {
        writeln!(s, "{k}={v:.16e}").expect("write to String");
    }
    writeln!(s, "width={}\nheight={}", intr.width, intr.height).expect("write to String");
    s.push_str("pose=");
    let r = &pose.rotation;
    let t = &pose.translation;
    let vals = [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]];
    let body: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
    s.push_str(&body.join(" "));
    s.push('\n');
    s
}

pub fn camera_from_str(text: &str) -> Result<(Pose, CameraIntrinsics), SynthError> {
    let mut lines = Lines::new(text);
    let (at, header) = lines.next("header")?;
    if header.trim_end() != "CAMTXT v1" {
        return Err(parse_err(at, "expected `CAMTXT v1` header"));
    }
    let mut field = |key: &str| -> Result<(usize, &str), SynthError> {
        let (at, line) = lines.next(key)?;
        match line.split_once('=') {
            Some((k, v)) if k == key => Ok((at + k.len() + 1, v)),
            _ => Err(parse_err(at, format!("expected `{key}=`"))),
        }
    };
    let fx: f64 = parse_num(field("fx")?, "fx")?;
    let fy: f64 = parse_num(field("fy")?, "fy")?;
    let cx: f64 = parse_num(field("cx")?, "cx")?;
    let cy: f64 = parse_num(field("cy")?, "cy")?;
    let width: u32 = parse_num(field("width")?, "width")?;
    let (h_at, h) = field("height")?;
    let height: u32 = parse_num((h_at, h), "height")?;
    let (p_at, p) = field("pose")?;
    let toks = tokens(p, p_at);
    expect_count(&toks, 12, p_at, "pose")?;
    let mut v = [0f64; 12];
    for k in 0..12 {
        v[k] = parse_num(toks[k], "pose entry")?;
    }
    lines.finish()?;
    let intr = CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| range_err(0, e.to_string()))?;
    let pose = Pose::new(
        [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
        [v[3], v[7], v[11]],
    )
    .map_err(|e| range_err(p_at, e.to_string()))?;
    Ok((pose, intr))
}

pub fn write_camera(path: impl AsRef<Path>, pose: &Pose, intr: &CameraIntrinsics) -> Result<(), SynthError> {
    write_bytes(path.as_ref(), camera_to_string(pose, intr).as_bytes())
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<(Pose, CameraIntrinsics), SynthError> {
    camera_from_str(utf8(&read_bytes(path.as_ref())?)?)
}

// -------------------------------------------------------------------- features

/// `rows × dim` single-precision features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureDump {
    pub fn from_f64(dim: usize, data: &[f64]) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "feature length {} vs dim {dim}", data.len());
        Self { rows: data.len() / dim, dim, data: data.iter().map(|&x| x as f32).collect() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = FEATURE_MAGIC.to_vec();
        out.extend((self.rows as u32).to_le_bytes());
        out.extend((self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend(x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SynthError> {
        if bytes.len() < FEATURE_MAGIC.len() || &bytes[..8] != FEATURE_MAGIC {
            return Err(parse_err(0, "bad feature magic"));
        }
        let word = |at: usize| -> Result<u32, SynthError> {
            let b = bytes.get(at..at + 4).ok_or_else(|| parse_err(bytes.len(), "truncated feature header"))?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let rows = word(8)? as usize;
        let dim = word(12)? as usize;
        let n = rows.checked_mul(dim).and_then(|x| x.checked_mul(4)).ok_or_else(|| range_err(8, "feature size overflows"))?;
        let body = &bytes[16..];
        if body.len() < n {
            return Err(parse_err(bytes.len(), format!("truncated features: {} of {n} bytes", body.len())));
        }
        if body.len() > n {
            return Err(parse_err(16 + n, "trailing data"));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Self { rows, dim, data })
    }
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureDump) -> Result<(), SynthError> {
    write_bytes(path.as_ref(), &f.to_bytes())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureDump, SynthError> {
    FeatureDump::from_bytes(&read_bytes(path.as_ref())?)
}

// ------------------------------------------------------------- correspondences

pub fn correspondences_to_string(c: &CorrespondenceSet) -> String {
    let mut s = format!("CORRTXT v1 {} {}\n", c.len(), c.camera_id);
    for e in &c.entries {
        writeln!(s, "{} {} {} {:.16e} {:.16e} {:.16e}", e.point_index, e.pixel[0], e.pixel[1], e.u, e.v, e.depth)
            .expect("write to String");
    }
    s
}

pub fn correspondences_from_str(text: &str) -> Result<CorrespondenceSet, SynthError> {
    let mut lines = Lines::new(text);
    let (at, header) = lines.next("header")?;
    let h = tokens(header, at);
    if h.len() < 2 || h[0].1 != "CORRTXT" || h[1].1 != "v1" {
        return Err(parse_err(at, "expected `CORRTXT v1` header"));
    }
    expect_count(&h, 4, at, "header")?;
    let n: usize = parse_num(h[2], "entry count")?;
    let camera_id = parse_num(h[3], "camera id")?;
    let mut entries = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let (at, line) = lines.next("entries")?;
        let t = tokens(line, at);
        expect_count(&t, 6, at, "entry")?;
        let depth: f64 = parse_num(t[5], "depth")?;
        if !(depth > 0.0) {
            return Err(range_err(t[5].0, "depth must be positive"));
        }
        entries.push(Correspondence {
            point_index: parse_num(t[0], "point index")?,
            pixel: [parse_num(t[1], "column")?, parse_num(t[2], "row")?],
            u: parse_num(t[3], "u")?,
            v: parse_num(t[4], "v")?,
            depth,
        });
    }
    lines.finish()?;
    Ok(CorrespondenceSet { camera_id, entries })
}

pub fn write_correspondences(path: impl AsRef<Path>, c: &CorrespondenceSet) -> Result<(), SynthError> {
    write_bytes(path.as_ref(), correspondences_to_string(c).as_bytes())
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet, SynthError> {
    correspondences_from_str(utf8(&read_bytes(path.as_ref())?)?)
}

// ---------------------------------------------------------------------- scenes

pub const CLOUD_FILE: &str = "cloud.pctxt";

pub fn view_file(k: usize, ext: &str) -> String {
    format!("view_{k}.{ext}")
}

/// Writes `cloud.pctxt` and `view_<k>.{camtxt,ppm,corrtxt}` into `dir` (created if
/// missing).
pub fn write_scene(dir: impl AsRef<Path>, scene: &SyntheticScene) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_cloud(dir.join(CLOUD_FILE), &scene.cloud)?;
    for (k, v) in scene.views.iter().enumerate() {
        write_camera(dir.join(view_file(k, "camtxt")), &v.pose, &v.intrinsics)?;
        write_image(dir.join(view_file(k, "ppm")), &v.image)?;
        write_correspondences(dir.join(view_file(k, "corrtxt")), &v.correspondences)?;
    }
    Ok(())
}

/// Reads a scene written by [`write_scene`]. Images come back 8-bit quantised.
pub fn read_scene(dir: impl AsRef<Path>) -> Result<SyntheticScene, SynthError> {
    let dir = dir.as_ref();
    let cloud = read_cloud(dir.join(CLOUD_FILE))?;
    let mut views = Vec::new();
    while dir.join(view_file(views.len(), "camtxt")).exists() {
        let k = views.len();
        let (pose, intrinsics) = read_camera(dir.join(view_file(k, "camtxt")))?;
        let image = read_image(dir.join(view_file(k, "ppm")))?;
        let correspondences = read_correspondences(dir.join(view_file(k, "corrtxt")))?;
        if image.width != intrinsics.width as usize || image.height != intrinsics.height as usize {
            return Err(range_err(0, format!("view {k}: image size does not match camera")));
        }
        if let Some(e) = correspondences.entries.iter().find(|e| e.point_index >= cloud.len()) {
            return Err(range_err(0, format!("view {k}: point index {} out of range", e.point_index)));
        }
        views.push(SceneView { pose, intrinsics, image, correspondences });
    }
    Ok(SyntheticScene { cloud, views })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::new(
            vec![[0.1, -2.5e-7, 3.0], [-0.0, 1e30, 0.333_333_34]],
            vec![[0.0, 1.0, 0.5], [0.2, 0.4, 0.6]],
            Some(vec![0, 7]),
        )
        .unwrap()
    }

    #[test]
    fn cloud_round_trip() {
        let c = cloud();
        let back = cloud_from_str(&cloud_to_string(&c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.positions[1][0].to_bits(), (-0.0f32).to_bits());
        let empty = PointCloud::default();
        assert_eq!(cloud_from_str(&cloud_to_string(&empty)).unwrap(), empty);
    }

    #[test]
    fn cloud_errors_have_offsets() {
        let s = cloud_to_string(&cloud());
        let cut = &s[..s.len() - 5];
        assert!(matches!(cloud_from_str(cut), Err(SynthError::Parse { .. })));
        let bad = s.replace("5.00000000e-1", "1.50000000e0");
        match cloud_from_str(&bad) {
            Err(SynthError::Range { offset, .. }) => assert_eq!(&bad[offset as usize..offset as usize + 4], "1.50"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(cloud_from_str("PCTXT v2 0 0\n"), Err(SynthError::Parse { offset: 0, .. })));
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::filled(3, 2, [0.5, 0.0, 1.0]);
        img.set(1, 1, [0.1, 0.2, 0.3]);
        let q = image_from_ppm(&image_to_ppm(&img)).unwrap();
        assert_eq!(q, img.quantized());
        assert_eq!(image_from_ppm(&image_to_ppm(&q)).unwrap(), q);
        let bytes = image_to_ppm(&img);
        assert!(matches!(image_from_ppm(&bytes[..bytes.len() - 1]), Err(SynthError::Parse { .. })));
        assert!(image_from_ppm(b"P6\n# c\n1 1\n255\n\x01\x02\x03").is_ok());
    }

    #[test]
    fn camera_round_trip() {
        let pose = Pose::look_at([0.3, 0.7, 1.4], [1.5, 1.5, 0.8], [0.0, 0.0, 1.0]).unwrap();
        let intr = CameraIntrinsics::from_fov(64, 48, 1.2).unwrap();
        let (p, i) = camera_from_str(&camera_to_string(&pose, &intr)).unwrap();
        assert_eq!((p, i), (pose, intr));
    }

    #[test]
    fn feature_round_trip() {
        let f = FeatureDump { rows: 2, dim: 3, data: vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e30, -2.25] };
        assert_eq!(FeatureDump::from_bytes(&f.to_bytes()).unwrap(), f);
        assert!(matches!(FeatureDump::from_bytes(&f.to_bytes()[..20]), Err(SynthError::Parse { .. })));
    }
}
