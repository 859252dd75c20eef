//! Captured GUI data: view-hierarchy dumps, screenshots and app metadata.
//!
//! A capture is what a tester, an exploration tool or an app vendor hands us
//! for one app page. We parse the uiautomator dump into [`WidgetAttributes`],
//! attach the page identity and keep the raw screenshot for the annotation
//! prompt.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("malformed view hierarchy: {0}")]
    MalformedDocument(String),
    #[error("malformed bounds {0:?}: expected \"[l,t][r,b]\"")]
    MalformedBounds(String),
    #[error("app name and activity name must be non-empty")]
    EmptyIdentity,
    #[error("bounds {bounds} exceed image of {width}x{height}")]
    OutOfRange { bounds: Bounds, width: u32, height: u32 },
    #[error("png codec: {0}")]
    Codec(String),
    #[error("capture directory {path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Widget rectangle in screen pixels. The rectangle is half-open:
/// it covers columns `left..right` and rows `top..bottom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl Bounds {
    pub fn new(left: u32, top: u32, right: u32, bottom: u32) -> Option<Self> {
        (left <= right && top <= bottom).then_some(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.right <= width && self.bottom <= height
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}][{},{}]", self.left, self.top, self.right, self.bottom)
    }
}

impl FromStr for Bounds {
    type Err = CaptureError;

    /// Parses the uiautomator grammar `\[\d+,\d+\]\[\d+,\d+\]`, nothing looser.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CaptureError::MalformedBounds(s.to_string());
        let mut nums = [0u32; 4];
        let mut rest = s;
        for pair in 0..2 {
            rest = rest.strip_prefix('[').ok_or_else(bad)?;
            let close = rest.find(']').ok_or_else(bad)?;
            let (inner, tail) = rest.split_at(close);
            let (a, b) = inner.split_once(',').ok_or_else(bad)?;
            nums[pair * 2] = parse_digits(a).ok_or_else(bad)?;
            nums[pair * 2 + 1] = parse_digits(b).ok_or_else(bad)?;
            rest = &tail[1..];
        }
        if !rest.is_empty() {
            return Err(bad());
        }
        Bounds::new(nums[0], nums[1], nums[2], nums[3]).ok_or_else(bad)
    }
}

fn parse_digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Raw attributes of one widget node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetAttributes {
    pub text: Option<String>,
    pub resource_id: Option<String>,
    pub content_description: Option<String>,
    pub class_name: String,
    pub clickable: bool,
    pub bounds: Bounds,
    pub node_index: usize,
}

impl WidgetAttributes {
    /// Last dotted segment of the class, e.g. `TextView`.
    pub fn class_suffix(&self) -> &str {
        self.class_name.rsplit('.').next().unwrap_or(&self.class_name)
    }
}

/// Parses a uiautomator dump into widgets, in document order.
///
/// Pure layout containers (no text, id or description, and not clickable)
/// are dropped. `node_index` is the position in the returned list.
pub fn parse_view_hierarchy(xml_text: &str) -> Result<Vec<WidgetAttributes>, CaptureError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| CaptureError::MalformedDocument(e.to_string()))?;

    let mut widgets = Vec::new();
    for node in doc
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "node")
    {
        let attr = |name: &str| node.attribute(name).filter(|v| !v.is_empty()).map(str::to_string);
        let text = attr("text");
        let resource_id = attr("resource-id");
        let content_description = attr("content-desc");
        let clickable = node.attribute("clickable") == Some("true");
        if text.is_none() && resource_id.is_none() && content_description.is_none() && !clickable {
            continue;
        }
        let class_name = attr("class").ok_or_else(|| {
            let pos = doc.text_pos_at(node.range().start);
            CaptureError::MalformedDocument(format!("node without class at {pos}"))
        })?;
        let bounds: Bounds = node
            .attribute("bounds")
            .ok_or_else(|| CaptureError::MalformedBounds(String::new()))?
            .parse()?;
        widgets.push(WidgetAttributes {
            text,
            resource_id,
            content_description,
            class_name,
            clickable,
            bounds,
            node_index: widgets.len(),
        });
    }
    Ok(widgets)
}

/// One captured app page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCapture {
    pub app_name: String,
    pub activity_name: String,
    pub screenshot_path: Option<PathBuf>,
    pub widgets: Vec<WidgetAttributes>,
    pub capture_id: String,
}

/// Assembles a page; the id is a SHA-256 over the canonical JSON of the inputs.
pub fn build_page_capture(
    app_name: &str,
    activity_name: &str,
    screenshot_path: Option<&Path>,
    widgets: Vec<WidgetAttributes>,
) -> Result<PageCapture, CaptureError> {
    if app_name.trim().is_empty() || activity_name.trim().is_empty() {
        return Err(CaptureError::EmptyIdentity);
    }
    let identity = serde_json::json!({
        "app_name": app_name,
        "activity_name": activity_name,
        "screenshot": screenshot_path.map(|p| p.to_string_lossy().into_owned()),
        "widgets": &widgets,
    });
    let digest = Sha256::digest(identity.to_string().as_bytes());
    Ok(PageCapture {
        app_name: app_name.to_string(),
        activity_name: activity_name.to_string(),
        screenshot_path: screenshot_path.map(Path::to_path_buf),
        widgets,
        capture_id: hex::encode(&digest[..8]),
    })
}

/// Contents of `app.json` inside a capture directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppMeta {
    pub app_name: String,
    pub activity_name: String,
}

/// Loads a capture directory: `app.json`, one `*.xml` dump and an optional
/// `*.png` screenshot. The screenshot path is stored relative to `base` when
/// possible so capture ids do not depend on where the workspace lives.
pub fn load_capture_dir(dir: &Path, base: &Path) -> Result<PageCapture, CaptureError> {
    let layout = |message: &str| CaptureError::Layout {
        path: dir.to_path_buf(),
        message: message.to_string(),
    };
    let meta: AppMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("app.json"))?)
        .map_err(|e| layout(&format!("app.json: {e}")))?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let with_ext = |ext: &str| {
        entries
            .iter()
            .find(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
            .cloned()
    };
    let xml = with_ext("xml").ok_or_else(|| layout("no view hierarchy (*.xml)"))?;
    let widgets = parse_view_hierarchy(&std::fs::read_to_string(xml)?)?;
    let screenshot = with_ext("png").map(|p| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or(p));
    build_page_capture(&meta.app_name, &meta.activity_name, screenshot.as_deref(), widgets)
}

/// Decoded RGBA8 image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

pub const RED: [u8; 4] = [255, 0, 0, 255];

impl RasterImage {
    /// Returns `None` when the buffer length is not `width * height * 4`.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize * 4).then_some(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        let pixels = rgba
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 4)
            .collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    pub fn pixel(&self, x: u32, y: u32) -> Option<[u8; 4]> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let o = self.offset(x, y);
        Some([
            self.pixels[o],
            self.pixels[o + 1],
            self.pixels[o + 2],
            self.pixels[o + 3],
        ])
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgba: [u8; 4]) {
        if x < self.width && y < self.height {
            let o = self.offset(x, y);
            self.pixels[o..o + 4].copy_from_slice(&rgba);
        }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, CaptureError> {
        let codec = |e: &dyn fmt::Display| CaptureError::Codec(e.to_string());
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| codec(&e))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| CaptureError::Codec("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| codec(&e))?;
        buf.truncate(info.buffer_size());
        let pixels = match info.color_type {
            png::ColorType::Rgba => buf,
            png::ColorType::Rgb => buf.chunks_exact(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|c| [c[0], c[0], c[0], c[1]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g, 255]).collect(),
            other => return Err(CaptureError::Codec(format!("unsupported color type {other:?}"))),
        };
        Self::new(info.width, info.height, pixels)
            .ok_or_else(|| CaptureError::Codec("decoded buffer size mismatch".into()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, CaptureError> {
        let codec = |e: png::EncodingError| CaptureError::Codec(e.to_string());
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgba);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().map_err(codec)?;
            writer.write_image_data(&self.pixels).map_err(codec)?;
        }
        Ok(out)
    }
}

fn check_range(image: &RasterImage, bounds: Bounds) -> Result<(), CaptureError> {
    if bounds.fits(image.width, image.height) {
        Ok(())
    } else {
        Err(CaptureError::OutOfRange {
            bounds,
            width: image.width,
            height: image.height,
        })
    }
}

/// Copies the pixels under `bounds` into a new image.
pub fn crop_widget_image(screenshot: &RasterImage, bounds: Bounds) -> Result<RasterImage, CaptureError> {
    check_range(screenshot, bounds)?;
    let row_bytes = bounds.width() as usize * 4;
    let mut pixels = Vec::with_capacity(row_bytes * bounds.height() as usize);
    for y in bounds.top..bounds.bottom {
        let start = screenshot.offset(bounds.left, y);
        pixels.extend_from_slice(&screenshot.pixels[start..start + row_bytes]);
    }
    Ok(RasterImage {
        width: bounds.width(),
        height: bounds.height(),
        pixels,
    })
}

/// Draws a pure red stroke `stroke_px` wide just inside `bounds`.
pub fn highlight_widget(screenshot: &RasterImage, bounds: Bounds, stroke_px: u32) -> Result<RasterImage, CaptureError> {
    check_range(screenshot, bounds)?;
    let mut out = screenshot.clone();
    if stroke_px == 0 {
        return Ok(out);
    }
    for y in bounds.top..bounds.bottom {
        for x in bounds.left..bounds.right {
            let edge_distance = (x - bounds.left)
                .min(bounds.right - 1 - x)
                .min(y - bounds.top)
                .min(bounds.bottom - 1 - y);
            if edge_distance < stroke_px {
                out.set_pixel(x, y, RED);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RasterImage {
        let mut pixels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                pixels.extend_from_slice(&[x as u8, y as u8, (x * y) as u8, 255]);
            }
        }
        RasterImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn bounds_grammar() {
        assert_eq!(
            "[0,48][1080,1920]".parse::<Bounds>().unwrap(),
            Bounds::new(0, 48, 1080, 1920).unwrap()
        );
        for bad in [
            "",
            "[0,0][1,1",
            "[0,0] [1,1]",
            "[-1,0][1,1]",
            "[0,0][1,1]x",
            "[a,0][1,1]",
            "[5,0][1,1]",
        ] {
            assert!(
                matches!(bad.parse::<Bounds>(), Err(CaptureError::MalformedBounds(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn parses_widgets_in_document_order() {
        let xml = r#"<?xml version='1.0' encoding='UTF-8'?>
<hierarchy rotation="0">
  <node index="0" text="" resource-id="" class="android.widget.FrameLayout" content-desc="" clickable="false" bounds="[0,0][1080,1920]">
    <node index="0" text="Download" resource-id="line" class="android.widget.TextView" content-desc="" clickable="false" bounds="[0,48][1080,1920]"/>
    <node index="1" text="" resource-id="" class="android.widget.ImageButton" content-desc="Search" clickable="true" bounds="[900,0][1080,48]"/>
  </node>
</hierarchy>"#;
        let widgets = parse_view_hierarchy(xml).unwrap();
        assert_eq!(widgets.len(), 2);
        assert_eq!(widgets[0].text.as_deref(), Some("Download"));
        assert_eq!(widgets[0].resource_id.as_deref(), Some("line"));
        assert_eq!(widgets[0].content_description, None);
        assert_eq!(widgets[0].class_name, "android.widget.TextView");
        assert_eq!(widgets[0].bounds, Bounds::new(0, 48, 1080, 1920).unwrap());
        assert!(widgets[1].clickable);
        for (i, w) in widgets.iter().enumerate() {
            assert_eq!(w.node_index, i);
        }
    }

    #[test]
    fn empty_hierarchy_is_empty() {
        assert!(parse_view_hierarchy("<hierarchy/>").unwrap().is_empty());
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            parse_view_hierarchy("<hierarchy><node"),
            Err(CaptureError::MalformedDocument(_))
        ));
        let bad_bounds = r#"<hierarchy><node text="x" class="a.B" bounds="[0,0]"/></hierarchy>"#;
        assert!(matches!(
            parse_view_hierarchy(bad_bounds),
            Err(CaptureError::MalformedBounds(_))
        ));
    }

    #[test]
    fn page_capture_identity() {
        let w = parse_view_hierarchy(
            r#"<hierarchy><node text="Front" class="android.widget.TextView" bounds="[0,0][10,10]"/></hierarchy>"#,
        )
        .unwrap();
        let a = build_page_capture("AnkiDroid", "Previewer", None, w.clone()).unwrap();
        let b = build_page_capture("AnkiDroid", "Previewer", None, w.clone()).unwrap();
        assert_eq!(a.app_name, "AnkiDroid");
        assert_eq!(a.activity_name, "Previewer");
        assert_eq!(a.capture_id, b.capture_id);
        let c = build_page_capture("AnkiDroid", "Reviewer", None, w.clone()).unwrap();
        assert_ne!(a.capture_id, c.capture_id);
        assert!(matches!(
            build_page_capture("", "Main", None, w),
            Err(CaptureError::EmptyIdentity)
        ));
    }

    #[test]
    fn crop_matches_index_arithmetic() {
        let img = gradient(10, 10);
        let b = Bounds::new(2, 2, 5, 5).unwrap();
        let crop = crop_widget_image(&img, b).unwrap();
        assert_eq!((crop.width(), crop.height()), (3, 3));
        for y in 0..3 {
            for x in 0..3 {
                let src = ((y + 2) * 10 + (x + 2)) as usize * 4;
                assert_eq!(crop.pixel(x, y).unwrap(), img.pixels()[src..src + 4]);
            }
        }
        let full = crop_widget_image(&img, Bounds::new(0, 0, 10, 10).unwrap()).unwrap();
        assert_eq!(full, img);
        assert!(matches!(
            crop_widget_image(&img, Bounds::new(0, 0, 20, 5).unwrap()),
            Err(CaptureError::OutOfRange { .. })
        ));
    }

    #[test]
    fn highlight_draws_perimeter_only() {
        let img = gradient(10, 10);
        let b = Bounds::new(2, 2, 8, 8).unwrap();
        let out = highlight_widget(&img, b, 1).unwrap();
        let mut perimeter = std::collections::HashSet::new();
        for i in 2..8 {
            perimeter.extend([(i, 2), (i, 7), (2, i), (7, i)]);
        }
        for y in 0..10 {
            for x in 0..10 {
                let expected = if perimeter.contains(&(x, y)) {
                    RED
                } else {
                    img.pixel(x, y).unwrap()
                };
                assert_eq!(out.pixel(x, y).unwrap(), expected, "({x},{y})");
            }
        }
        assert_eq!(highlight_widget(&img, b, 0).unwrap(), img);
    }

    #[test]
    fn png_round_trip() {
        let img = gradient(7, 5);
        let bytes = img.encode_png().unwrap();
        assert_eq!(RasterImage::decode_png(&bytes).unwrap(), img);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn highlight_never_writes_outside(w in 1u32..24, h in 1u32..24, l in 0u32..24, t in 0u32..24,
                                              dw in 0u32..24, dh in 0u32..24, stroke in 0u32..6) {
                let img = gradient(w, h);
                let b = Bounds::new(l, t, l + dw, t + dh).unwrap();
                match highlight_widget(&img, b, stroke) {
                    Ok(out) => {
                        prop_assert_eq!(out.pixels().len(), img.pixels().len());
                        for y in 0..h {
                            for x in 0..w {
                                let inside = x >= b.left && x < b.right && y >= b.top && y < b.bottom;
                                if !inside {
                                    prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
                                }
                            }
                        }
                    }
                    Err(CaptureError::OutOfRange { .. }) => prop_assert!(!b.fits(w, h)),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }

            #[test]
            fn crop_of_crop_identity(w in 1u32..16, h in 1u32..16, l in 0u32..16, t in 0u32..16, dw in 0u32..16, dh in 0u32..16) {
                let img = gradient(w, h);
                if let Some(b) = Bounds::new(l, t, l + dw, t + dh).filter(|b| b.fits(w, h)) {
                    let once = crop_widget_image(&img, b).unwrap();
                    let whole = Bounds::new(0, 0, once.width(), once.height()).unwrap();
                    prop_assert_eq!(crop_widget_image(&once, whole).unwrap(), once);
                }
            }
        }
    }
}
