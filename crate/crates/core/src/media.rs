//! Video ingestion and emission: YUV4MPEG2 streams, PNG sequences and
//! unit-range frame tensors.
//!
//! Colour conversion is BT.601 limited range (luma 16..=235, chroma
//! 16..=240). Only 4:2:0 chroma subsampling is read or written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;

/// A stack of RGB frames, `N×3×H×W`, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Tensor,
    /// Frames per second as `numerator / denominator`.
    pub frame_rate: (u32, u32),
    pub source_id: String,
}

impl VideoClip {
    pub fn new(frames: Tensor, frame_rate: (u32, u32), source_id: impl Into<String>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[0] < 1 || s[1] != CHANNELS || s[2] < MIN_SIDE || s[3] < MIN_SIDE {
            return Err(Error::Shape(format!(
                "video clip must be N×3×H×W with N≥1, H,W≥{MIN_SIDE}; got {s:?}"
            )));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("video clip value {v} outside [0,1]")));
        }
        Ok(Self {
            frames,
            frame_rate,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame(&self, i: usize) -> FrameTensor {
        FrameTensor(self.frames.sub_tensor(i))
    }

    /// The clip with `delta` added and the result clamped to `[0, 1]`.
    pub fn perturbed(&self, delta: &Tensor) -> Result<VideoClip> {
        let frames = clamp_unit(&self.frames.add(delta)?);
        Ok(VideoClip {
            frames,
            frame_rate: self.frame_rate,
            source_id: self.source_id.clone(),
        })
    }

    /// Keeps at most the first `max_frames` frames.
    pub fn trimmed(&self, max_frames: usize) -> Result<VideoClip> {
        let n = self.num_frames().min(max_frames.max(1));
        let frames: Vec<Tensor> = (0..n).map(|i| self.frames.sub_tensor(i)).collect();
        VideoClip::new(Tensor::stack(&frames)?, self.frame_rate, self.source_id.clone())
    }

    /// Bilinear resize of every frame.
    pub fn resized(&self, height: usize, width: usize) -> Result<VideoClip> {
        if height == self.height() && width == self.width() {
            return Ok(self.clone());
        }
        let frames: Vec<Tensor> = (0..self.num_frames())
            .map(|i| {
                let data = nn::resize_bilinear(
                    self.frames.slice(i),
                    CHANNELS,
                    self.height(),
                    self.width(),
                    height,
                    width,
                );
                Tensor::new(vec![CHANNELS, height, width], data).map(|t| clamp_unit(&t))
            })
            .collect::<Result<_>>()?;
        VideoClip::new(Tensor::stack(&frames)?, self.frame_rate, self.source_id.clone())
    }
}

/// A single `3×H×W` frame in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor(Tensor);

impl FrameTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::Shape(format!("frame must be C×H×W, got {:?}", data.shape())));
        }
        if data.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("frame value outside [0,1]".into()));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Elementwise `min(max(t, 0), 1)`.
pub fn clamp_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// Round half away from zero and saturate to a byte.
fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [f64; 3] {
    let yl = (y as f64 - 16.0) / 219.0;
    let cb = (u as f64 - 128.0) / 224.0;
    let cr = (v as f64 - 128.0) / 224.0;
    let r = yl + 2.0 * (1.0 - KR) * cr;
    let b = yl + 2.0 * (1.0 - KB) * cb;
    let g = (yl - KR * r - KB * b) / KG;
    [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
}

/// Unquantized limited-range `(Y, Cb, Cr)` code values.
fn rgb_to_yuv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let yl = KR * r + KG * g + KB * b;
    let cb = (b - yl) / (2.0 * (1.0 - KB));
    let cr = (r - yl) / (2.0 * (1.0 - KR));
    (16.0 + 219.0 * yl, 128.0 + 224.0 * cb, 128.0 + 224.0 * cr)
}

/// Planar 8-bit 4:2:0 picture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Yuv420Frame {
    pub width: usize,
    pub height: usize,
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

fn chroma_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

impl Yuv420Frame {
    pub fn payload_len(width: usize, height: usize) -> usize {
        let (cw, ch) = chroma_dims(width, height);
        width * height + 2 * cw * ch
    }

    /// Converts a `3×H×W` RGB buffer; chroma is the mean over each 2×2 block.
    pub fn from_rgb(rgb: &[f64], height: usize, width: usize) -> Self {
        let plane = height * width;
        let (cw, chh) = chroma_dims(width, height);
        let mut y = vec![0u8; plane];
        let mut u_acc = vec![0.0; cw * chh];
        let mut v_acc = vec![0.0; cw * chh];
        let mut count = vec![0u32; cw * chh];
        for row in 0..height {
            for col in 0..width {
                let i = row * width + col;
                let (yy, cb, cr) = rgb_to_yuv(rgb[i], rgb[plane + i], rgb[2 * plane + i]);
                y[i] = quantize(yy);
                let ci = (row / 2) * cw + col / 2;
                u_acc[ci] += cb;
                v_acc[ci] += cr;
                count[ci] += 1;
            }
        }
        let u = u_acc.iter().zip(&count).map(|(s, &n)| quantize(s / n as f64)).collect();
        let v = v_acc.iter().zip(&count).map(|(s, &n)| quantize(s / n as f64)).collect();
        Self {
            width,
            height,
            y,
            u,
            v,
        }
    }

    pub fn to_rgb(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let (cw, _) = chroma_dims(self.width, self.height);
        let mut out = vec![0.0; 3 * plane];
        for row in 0..self.height {
            for col in 0..self.width {
                let i = row * self.width + col;
                let ci = (row / 2) * cw + col / 2;
                let [r, g, b] = yuv_to_rgb(self.y[i], self.u[ci], self.v[ci]);
                out[i] = r;
                out[plane + i] = g;
                out[2 * plane + i] = b;
            }
        }
        out
    }
}

/// Parsed YUV4MPEG2 stream header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub frame_rate: (u32, u32),
}

const MAGIC: &str = "YUV4MPEG2";
const MAX_HEADER: usize = 4096;

fn read_line<R: BufRead>(reader: &mut R) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader
        .take(MAX_HEADER as u64)
        .read_until(b'\n', &mut buf)
        .map_err(|e| Error::io("<y4m stream>", e))?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::Format("header line not terminated by newline".into()));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Format("header is not ASCII".into()))
}

fn parse_ratio(token: &str, body: &str) -> Result<(u32, u32)> {
    let bad = || Error::Format(format!("bad token `{token}`"));
    let (a, b) = body.split_once(':').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

pub fn parse_y4m_header(line: &str) -> Result<Y4mHeader> {
    let mut tokens = line.split(' ').filter(|t| !t.is_empty());
    match tokens.next() {
        Some(MAGIC) => {}
        Some(other) => return Err(Error::Format(format!("bad magic `{other}`"))),
        None => return Err(Error::Format("empty header".into())),
    }
    let (mut width, mut height, mut frame_rate) = (None, None, (25, 1));
    for token in tokens {
        let (tag, body) = token.split_at(1);
        match tag {
            "W" => width = Some(body.parse().map_err(|_| Error::Format(format!("bad token `{token}`")))?),
            "H" => height = Some(body.parse().map_err(|_| Error::Format(format!("bad token `{token}`")))?),
            "F" => frame_rate = parse_ratio(token, body)?,
            "A" => {
                parse_ratio(token, body)?;
            }
            "I" => {
                if !matches!(body, "p" | "t" | "b" | "m" | "?") {
                    return Err(Error::Format(format!("bad token `{token}`")));
                }
            }
            "C" => {
                if !matches!(body, "420" | "420jpeg" | "420paldv" | "420mpeg2") {
                    return Err(Error::UnsupportedFormat(format!(
                        "chroma mode `{body}` (only 4:2:0 is supported)"
                    )));
                }
            }
            "X" => {}
            _ => return Err(Error::Format(format!("unknown token `{token}`"))),
        }
    }
    let width: usize = width.ok_or_else(|| Error::Format("missing W token".into()))?;
    let height: usize = height.ok_or_else(|| Error::Format("missing H token".into()))?;
    if width == 0 || height == 0 || frame_rate.1 == 0 {
        return Err(Error::Format("zero dimension or frame-rate denominator".into()));
    }
    Ok(Y4mHeader {
        width,
        height,
        frame_rate,
    })
}

/// Reads every frame of a YUV4MPEG2 stream as raw planes.
pub fn read_y4m_frames<R: Read>(reader: R) -> Result<(Y4mHeader, Vec<Yuv420Frame>)> {
    let mut reader = BufReader::new(reader);
    let line = read_line(&mut reader)?.ok_or_else(|| Error::Format("empty stream".into()))?;
    let header = parse_y4m_header(&line)?;
    let (cw, ch) = chroma_dims(header.width, header.height);
    let luma = header.width * header.height;
    let payload = Yuv420Frame::payload_len(header.width, header.height);
    let mut frames = Vec::new();
    while let Some(marker) = read_line(&mut reader)? {
        if marker != "FRAME" && !marker.starts_with("FRAME ") {
            return Err(Error::Format(format!(
                "expected FRAME marker before frame {}, got `{}`",
                frames.len(),
                marker.chars().take(16).collect::<String>()
            )));
        }
        let mut buf = vec![0u8; payload];
        let mut got = 0;
        while got < payload {
            let n = reader
                .read(&mut buf[got..])
                .map_err(|e| Error::io("<y4m stream>", e))?;
            if n == 0 {
                return Err(Error::Truncated {
                    frame: frames.len(),
                    expected: payload,
                    got,
                });
            }
            got += n;
        }
        let u_end = luma + cw * ch;
        frames.push(Yuv420Frame {
            width: header.width,
            height: header.height,
            y: buf[..luma].to_vec(),
            u: buf[luma..u_end].to_vec(),
            v: buf[u_end..].to_vec(),
        });
    }
    Ok((header, frames))
}

pub fn read_y4m<R: Read>(reader: R, source_id: &str) -> Result<VideoClip> {
    let (header, frames) = read_y4m_frames(reader)?;
    if frames.is_empty() {
        return Err(Error::Format("stream contains no frames".into()));
    }
    let rgb: Vec<Tensor> = frames
        .iter()
        .map(|f| Tensor::new(vec![CHANNELS, header.height, header.width], f.to_rgb()))
        .collect::<Result<_>>()?;
    VideoClip::new(Tensor::stack(&rgb)?, header.frame_rate, source_id)
}

pub fn load_y4m(path: impl AsRef<Path>) -> Result<VideoClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_y4m(file, &id)
}

pub fn write_y4m_to<W: Write>(clip: &VideoClip, mut out: W) -> std::io::Result<()> {
    let (h, w) = (clip.height(), clip.width());
    writeln!(
        out,
        "{MAGIC} W{w} H{h} F{}:{} Ip A1:1 C420jpeg",
        clip.frame_rate.0, clip.frame_rate.1
    )?;
    for i in 0..clip.num_frames() {
        let f = Yuv420Frame::from_rgb(clip.frames().slice(i), h, w);
        out.write_all(b"FRAME\n")?;
        out.write_all(&f.y)?;
        out.write_all(&f.u)?;
        out.write_all(&f.v)?;
    }
    out.flush()
}

pub fn write_y4m(clip: &VideoClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_y4m_to(clip, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// The clip as it reads back after a Y4M round trip.
pub fn quantize_clip(clip: &VideoClip) -> Result<VideoClip> {
    let mut buf = Vec::new();
    write_y4m_to(clip, &mut buf).map_err(|e| Error::io("<memory>", e))?;
    read_y4m(buf.as_slice(), &clip.source_id)
}

/// Loads an image sequence whose file names match `pattern`, ordered by
/// natural sort of the file name.
pub fn load_frame_dir(dir: impl AsRef<Path>, pattern: &str) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let matcher = glob::Pattern::new(pattern)
        .map_err(|e| Error::Config(format!("bad frame pattern `{pattern}`: {e}")))?;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .map(|entry| entry.file_name().to_string_lossy().into_owned())
        .filter(|name| matcher.matches(name))
        .collect();
    if names.is_empty() {
        return Err(Error::NotFound(format!(
            "no files matching `{pattern}` in {}",
            dir.display()
        )));
    }
    names.sort_by(|a, b| natord::compare(a, b));

    let mut frames = Vec::with_capacity(names.len());
    let mut dims: Option<(String, u32, u32)> = None;
    for name in &names {
        let path = dir.join(name);
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        match &dims {
            Some((first, fw, fh)) if (*fw, *fh) != (w, h) => {
                return Err(Error::Shape(format!(
                    "{first} is {fw}×{fh} but {name} is {w}×{h}"
                )));
            }
            None => dims = Some((name.clone(), w, h)),
            _ => {}
        }
        let (w, h) = (w as usize, h as usize);
        let mut data = vec![0.0; CHANNELS * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            for c in 0..CHANNELS {
                data[c * h * w + i] = px[c] as f64 / 255.0;
            }
        }
        frames.push(Tensor::new(vec![CHANNELS, h, w], data)?);
    }
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    VideoClip::new(Tensor::stack(&frames)?, (25, 1), id)
}

/// Deterministic synthetic clip: drifting colour gradients, a moving
/// sinusoidal texture and a moving disc.
pub fn synthetic_clip(seed: u64, frames: usize, height: usize, width: usize) -> Result<VideoClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let tilt: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)));
    let freq = (rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0));
    let texture_amp = rng.gen_range(0.05..0.2);
    let speed = (rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
    let disc_color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let disc_radius = rng.gen_range(0.1..0.25);
    let disc_start = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
    let disc_vel = (rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));

    let plane = height * width;
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let tf = t as f64;
        let mut data = vec![0.0; CHANNELS * plane];
        let (dy, dx) = (disc_start.0 + disc_vel.0 * tf, disc_start.1 + disc_vel.1 * tf);
        for row in 0..height {
            let v = row as f64 / height as f64;
            for col in 0..width {
                let u = col as f64 / width as f64;
                let phase = std::f64::consts::TAU
                    * (freq.0 * (u + speed.0 * tf) + freq.1 * (v + speed.1 * tf));
                let tex = texture_amp * phase.sin();
                let in_disc = (u - dx).powi(2) + (v - dy).powi(2) < disc_radius * disc_radius;
                for c in 0..CHANNELS {
                    let value = if in_disc {
                        disc_color[c]
                    } else {
                        base[c] + tilt[c].0 * (u - 0.5) + tilt[c].1 * (v - 0.5) + tex
                    };
                    data[c * plane + row * width + col] = value.clamp(0.0, 1.0);
                }
            }
        }
        out.push(Tensor::new(vec![CHANNELS, height, width], data)?);
    }
    VideoClip::new(Tensor::stack(&out)?, (25, 1), format!("synthetic-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn black_y4m(frames: usize, w: usize, h: usize) -> Vec<u8> {
        let mut buf = format!("YUV4MPEG2 W{w} H{h} F25:1 C420\n").into_bytes();
        for _ in 0..frames {
            buf.extend_from_slice(b"FRAME\n");
            buf.extend(std::iter::repeat_n(16u8, w * h));
            buf.extend(std::iter::repeat_n(128u8, 2 * (w / 2) * (h / 2)));
        }
        buf
    }

    #[test]
    fn limited_range_black_decodes_to_zero() {
        let clip = read_y4m(black_y4m(2, 16, 16).as_slice(), "black").unwrap();
        assert_eq!(clip.num_frames(), 2);
        assert!(clip.frames().max_abs() <= 1.0 / 255.0);
    }

    #[test]
    fn rejects_444() {
        let mut buf = b"YUV4MPEG2 W16 H16 F25:1 C444\n".to_vec();
        buf.extend_from_slice(b"FRAME\n");
        buf.extend(vec![0u8; 16 * 16 * 3]);
        assert!(matches!(read_y4m(buf.as_slice(), "x"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn malformed_header_names_token() {
        let err = parse_y4m_header("YUV4MPEG2 W16 H16 Qxyz").unwrap_err();
        assert!(err.to_string().contains("Qxyz"), "{err}");
        let err = parse_y4m_header("YUV4MPEG2 Wabc H16").unwrap_err();
        assert!(err.to_string().contains("Wabc"), "{err}");
        assert!(parse_y4m_header("MPEG W16 H16").is_err());
    }

    #[test]
    fn truncated_payload_reports_frame_index() {
        let mut buf = black_y4m(2, 16, 16);
        buf.truncate(buf.len() - 10);
        match read_y4m(buf.as_slice(), "t") {
            Err(Error::Truncated { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zeros_clip_writes_limited_range_black() {
        let clip = VideoClip::new(Tensor::zeros(&[1, 3, 8, 8]), (25, 1), "z").unwrap();
        let mut buf = Vec::new();
        write_y4m_to(&clip, &mut buf).unwrap();
        let (_, frames) = read_y4m_frames(buf.as_slice()).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(frames[0].y.iter().all(|&v| v == 16));
        assert!(frames[0].u.iter().chain(&frames[0].v).all(|&v| v == 128));
        let text = String::from_utf8_lossy(&buf);
        assert_eq!(text.matches("FRAME").count(), 1);
    }

    #[test]
    fn clamp_unit_examples() {
        let t = Tensor::new(vec![3], vec![1.2, -0.3, 0.5]).unwrap();
        assert_eq!(clamp_unit(&t).data(), &[1.0, 0.0, 0.5]);
    }

    #[test]
    fn clip_rejects_small_or_out_of_range() {
        assert!(VideoClip::new(Tensor::zeros(&[1, 3, 4, 8]), (25, 1), "s").is_err());
        assert!(VideoClip::new(Tensor::full(&[1, 3, 8, 8], 1.5), (25, 1), "s").is_err());
        assert!(VideoClip::new(Tensor::zeros(&[1, 1, 8, 8]), (25, 1), "s").is_err());
    }

    #[test]
    fn trim_and_resize() {
        let clip = synthetic_clip(1, 5, 16, 24).unwrap();
        let t = clip.trimmed(3).unwrap();
        assert_eq!(t.num_frames(), 3);
        let r = t.resized(8, 12).unwrap();
        assert_eq!((r.height(), r.width()), (8, 12));
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(synthetic_clip(4, 3, 16, 16).unwrap(), synthetic_clip(4, 3, 16, 16).unwrap());
        assert_ne!(synthetic_clip(4, 3, 16, 16).unwrap(), synthetic_clip(5, 3, 16, 16).unwrap());
    }
}
