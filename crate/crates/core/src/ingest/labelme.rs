//! LabelMe annotation documents.
//!
//! Page metadata lives in the top-level `flags` object (`author`, `layout`,
//! `style`); each shape carries one character label, a rectangle given either
//! as two diagonal points or four corners, and its `column`/`row` position in
//! the reading grid. Rows are numbered per column.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::types::{BBox, CharBox, Layout, PageSample, Style};

use super::{raster_from_base64, raster_to_base64_png};

/// Parses a LabelMe JSON document into a page.
///
/// Missing `flags` are tolerated (layout becomes `unknown`); missing
/// `column`/`row` fields only prevent the reading order from being derived.
/// Coordinates are clamped into the image.
pub fn parse_labelme(text: &str) -> Result<PageSample> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("document", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::parse("document", "top level must be a JSON object"))?;

    let raster = match obj.get("imageData") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.is_empty() => None,
        Some(Value::String(s)) => Some(raster_from_base64(s)?),
        Some(_) => return Err(Error::parse("imageData", "expected a base64 string")),
    };

    let width = dimension(obj, "imageWidth", raster.as_ref().map(|r| r.width))?;
    let height = dimension(obj, "imageHeight", raster.as_ref().map(|r| r.height))?;

    let (layout, style, author) = match obj.get("flags") {
        None | Some(Value::Null) => (Layout::unknown(), None, None),
        Some(Value::Object(flags)) => parse_flags(flags),
        Some(_) => return Err(Error::parse("flags", "expected an object")),
    };

    let shapes = obj
        .get("shapes")
        .ok_or_else(|| Error::parse("shapes", "missing"))?
        .as_array()
        .ok_or_else(|| Error::parse("shapes", "expected an array"))?;

    let mut boxes = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.iter().enumerate() {
        boxes.push(parse_shape(i, shape, width as f64, height as f64)?);
    }

    let id = obj
        .get("imagePath")
        .and_then(Value::as_str)
        .map(file_stem)
        .unwrap_or_default();

    let mut page = PageSample {
        id,
        width,
        height,
        boxes,
        reading_order: None,
        layout,
        style,
        author,
        raster,
    };
    page.reading_order = derive_reading_order(&page).ok();
    page.validate()?;
    Ok(page)
}

fn file_stem(path: &str) -> String {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match name.rfind('.') {
        Some(dot) if dot > 0 => name[..dot].to_string(),
        _ => name.to_string(),
    }
}

fn dimension(obj: &Map<String, Value>, key: &str, fallback: Option<u32>) -> Result<u32> {
    match obj.get(key) {
        None | Some(Value::Null) => {
            fallback.ok_or_else(|| Error::parse(key, "missing and no image data to infer it from"))
        }
        Some(v) => {
            let n = as_index(v).ok_or_else(|| Error::parse(key, "expected a positive integer"))?;
            if n == 0 || n > u32::MAX as u64 {
                return Err(Error::parse(key, "expected a positive integer"));
            }
            Ok(n as u32)
        }
    }
}

fn as_index(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn parse_flags(flags: &Map<String, Value>) -> (Layout, Option<Style>, Option<String>) {
    let mut layout = None;
    let mut style = None;
    let mut author = None;
    for (key, value) in flags {
        match (key.to_ascii_lowercase().as_str(), value) {
            ("layout", Value::String(s)) => layout = Some(Layout::parse_lenient(s)),
            ("style", Value::String(s)) => style = Some(Style::parse_lenient(s)),
            ("author" | "authority", Value::String(s)) => author = Some(s.clone()),
            // Stock LabelMe flags are booleans keyed by class name.
            (_, Value::Bool(true)) => {
                if let l @ (Layout::Banner
                | Layout::SquaredSheet
                | Layout::Album
                | Layout::HangingScroll
                | Layout::MiddleScroll
                | Layout::Couplet
                | Layout::HandScroll) = Layout::parse_lenient(key)
                {
                    layout.get_or_insert(l);
                } else if let s @ (Style::Seal | Style::Clerical | Style::Regular | Style::Running | Style::Cursive) =
                    Style::parse_lenient(key)
                {
                    style.get_or_insert(s);
                }
            }
            _ => {}
        }
    }
    (layout.unwrap_or_else(Layout::unknown), style, author)
}

fn parse_shape(i: usize, shape: &Value, width: f64, height: f64) -> Result<CharBox> {
    let field = |name: &str| format!("shapes[{i}].{name}");
    let obj = shape
        .as_object()
        .ok_or_else(|| Error::parse(format!("shapes[{i}]"), "expected an object"))?;

    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::parse(field("label"), "missing"))?;
    if label.is_empty() {
        return Err(Error::parse(field("label"), "empty label"));
    }

    let points = obj
        .get("points")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(field("points"), "missing"))?;
    if points.len() != 2 && points.len() != 4 {
        return Err(Error::parse(
            field("points"),
            format!("expected 2 or 4 points, got {}", points.len()),
        ));
    }
    let mut xs = Vec::with_capacity(4);
    let mut ys = Vec::with_capacity(4);
    for p in points {
        let pair = p
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::parse(field("points"), "each point must be [x, y]"))?;
        let x = pair[0].as_f64();
        let y = pair[1].as_f64();
        match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => {
                xs.push(x);
                ys.push(y);
            }
            _ => return Err(Error::parse(field("points"), "non-numeric coordinate")),
        }
    }
    let fold = |v: &[f64], f: fn(f64, f64) -> f64| v.iter().copied().reduce(f).unwrap();
    let bbox = BBox {
        x1: fold(&xs, f64::min).clamp(0.0, width),
        y1: fold(&ys, f64::min).clamp(0.0, height),
        x2: fold(&xs, f64::max).clamp(0.0, width),
        y2: fold(&ys, f64::max).clamp(0.0, height),
    };
    if bbox.x1 >= bbox.x2 || bbox.y1 >= bbox.y2 {
        return Err(Error::parse(
            field("points"),
            format!("degenerate rectangle {:?}", bbox.to_array()),
        ));
    }

    let shape_flags = obj.get("flags").and_then(Value::as_object);
    let grid = |key: &str| -> Result<Option<u32>> {
        let v = obj.get(key).or_else(|| shape_flags.and_then(|f| f.get(key)));
        match v {
            None | Some(Value::Null) => Ok(None),
            Some(v) => as_index(v)
                .filter(|&n| n <= u32::MAX as u64)
                .map(|n| Some(n as u32))
                .ok_or_else(|| Error::parse(field(key), "expected a non-negative integer")),
        }
    };

    Ok(CharBox {
        bbox,
        label: Some(label.to_string()),
        column_index: grid("column")?,
        row_index: grid("row")?,
    })
}

/// Reading order from annotated grid positions: sort by (column, row).
pub fn derive_reading_order(page: &PageSample) -> Result<Vec<usize>> {
    let mut keyed = Vec::with_capacity(page.boxes.len());
    for (i, b) in page.boxes.iter().enumerate() {
        match (b.column_index, b.row_index) {
            (Some(c), Some(r)) => keyed.push(((c, r), i)),
            _ => return Err(Error::invalid(format!("box {i} lacks a column or row index"))),
        }
    }
    let mut seen: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for &(key, i) in &keyed {
        seen.entry(key).or_default().push(i);
    }
    let dups: Vec<String> = seen
        .iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|((c, r), v)| format!("(column {c}, row {r}) on boxes {v:?}"))
        .collect();
    if !dups.is_empty() {
        return Err(Error::invalid(format!("duplicate grid positions: {}", dups.join("; "))));
    }
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Serializes a page back into a LabelMe document. Every box needs a label.
pub fn to_labelme(page: &PageSample) -> Result<String> {
    let mut flags = Map::new();
    if let Some(a) = &page.author {
        flags.insert("author".into(), json!(a));
    }
    if page.layout != Layout::unknown() {
        flags.insert("layout".into(), json!(page.layout.as_str()));
    }
    if let Some(s) = &page.style {
        flags.insert("style".into(), json!(s.as_str()));
    }
    let mut shapes = Vec::with_capacity(page.boxes.len());
    for (i, b) in page.boxes.iter().enumerate() {
        let label = b
            .label
            .as_deref()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::invalid(format!("box {i} has no label")))?;
        let mut shape = Map::new();
        shape.insert("label".into(), json!(label));
        shape.insert("points".into(), json!([[b.bbox.x1, b.bbox.y1], [b.bbox.x2, b.bbox.y2]]));
        shape.insert("group_id".into(), Value::Null);
        shape.insert("shape_type".into(), json!("rectangle"));
        shape.insert("flags".into(), json!({}));
        if let Some(c) = b.column_index {
            shape.insert("column".into(), json!(c));
        }
        if let Some(r) = b.row_index {
            shape.insert("row".into(), json!(r));
        }
        shapes.push(Value::Object(shape));
    }
    let image_data = match &page.raster {
        Some(r) => json!(raster_to_base64_png(r)?),
        None => Value::Null,
    };
    let doc = json!({
        "version": "5.2.1",
        "flags": flags,
        "shapes": shapes,
        "imagePath": format!("{}.png", page.id),
        "imageData": image_data,
        "imageHeight": page.height,
        "imageWidth": page.width,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}
