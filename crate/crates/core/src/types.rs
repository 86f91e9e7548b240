//! Geometry and page-level domain types shared by every module.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Axis-aligned box. Pixel units on raw pages, unitless after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting inverted, empty or non-finite coordinates.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        bbox_center(self)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        bbox_union(self, other)
    }

    /// Intersection rectangle, or `None` when the boxes share no area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 < x2 && y1 < y2).then_some(BBox { x1, y1, x2, y2 })
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

pub fn bbox_center(b: &BBox) -> (f64, f64) {
    ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)
}

pub fn bbox_union(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// A character box with its (optional) label and annotated grid position.
///
/// `label` holds the annotation text verbatim; for character annotations it
/// is a single Unicode scalar, but placeholder labels are kept as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_index: Option<u32>,
}

impl CharBox {
    pub fn new(bbox: BBox) -> Self {
        CharBox {
            bbox,
            label: None,
            column_index: None,
            row_index: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_grid(mut self, column: u32, row: u32) -> Self {
        self.column_index = Some(column);
        self.row_index = Some(row);
        self
    }
}

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        $name:ident { $($variant:ident => $text:literal [$($alias:literal),*]),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant,)+
            Other(String),
        }

        impl $name {
            pub const KNOWN: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &str {
                match self {
                    $($name::$variant => $text,)+
                    $name::Other(s) => s.as_str(),
                }
            }

            /// Lenient parse: case-insensitive, spaces and hyphens treated as
            /// underscores, common Chinese names accepted. Unknown values are
            /// kept in `Other`.
            pub fn parse_lenient(raw: &str) -> Self {
                let trimmed = raw.trim();
                let key: String = trimmed
                    .chars()
                    .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
                    .collect();
                match key.as_str() {
                    $($text $(| $alias)* => $name::$variant,)+
                    _ => $name::Other(trimmed.to_string()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Ok($name::parse_lenient(&s))
            }
        }
    };
}

string_enum! {
    /// Traditional calligraphy layout classes.
    Layout {
        Banner => "banner" ["横幅", "banners"],
        SquaredSheet => "squared_sheet" ["斗方", "squared", "square_sheet"],
        Album => "album" ["册页", "calligraphy_album"],
        HangingScroll => "hanging_scroll" ["条幅", "立轴", "hanging"],
        MiddleScroll => "middle_scroll" ["中堂", "middle"],
        Couplet => "couplet" ["对联", "couplets"],
        HandScroll => "hand_scroll" ["手卷", "handscroll"],
    }
}

string_enum! {
    /// The five major script styles.
    Style {
        Seal => "seal" ["篆书", "seal_script"],
        Clerical => "clerical" ["隶书", "clerical_script"],
        Regular => "regular" ["楷书", "regular_script"],
        Running => "running" ["行书", "running_script", "semi_cursive"],
        Cursive => "cursive" ["草书", "cursive_script"],
    }
}

impl Layout {
    pub fn unknown() -> Self {
        Layout::Other("unknown".to_string())
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::dim(format!(
                "raster {}x{} needs {} bytes, got {}",
                width,
                height,
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

// Rasters travel as base64 PNG inside JSON documents.
impl Serialize for Raster {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let encoded = crate::ingest::raster_to_base64_png(self).map_err(serde::ser::Error::custom)?;
        s.serialize_str(&encoded)
    }
}

impl<'de> Deserialize<'de> for Raster {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        crate::ingest::raster_from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// One annotated page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSample {
    #[serde(default)]
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<CharBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reading_order: Option<Vec<usize>>,
    pub layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<Raster>,
}

impl PageSample {
    /// Checks page invariants: positive dimensions, valid in-bounds boxes and
    /// a bijective reading order.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("page dimensions must be positive"));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, cb) in self.boxes.iter().enumerate() {
            cb.bbox
                .validate()
                .map_err(|e| Error::invalid(format!("box {i}: {e}")))?;
            let b = &cb.bbox;
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h {
                return Err(Error::invalid(format!("box {i} {b:?} lies outside the {w}x{h} page")));
            }
        }
        if let Some(order) = &self.reading_order {
            check_permutation(order, self.boxes.len()).map_err(|e| Error::invalid(format!("reading_order: {e}")))?;
        }
        if let Some(r) = &self.raster {
            if r.width != self.width || r.height != self.height {
                return Err(Error::invalid(format!(
                    "raster is {}x{} but page is {}x{}",
                    r.width, r.height, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Labels concatenated in reading order (or box order when no order is
    /// known). Unlabeled boxes contribute nothing.
    pub fn text(&self) -> String {
        let order: Vec<usize> = match &self.reading_order {
            Some(o) => o.clone(),
            None => (0..self.boxes.len()).collect(),
        };
        order.iter().filter_map(|&i| self.boxes[i].label.as_deref()).collect()
    }
}

/// Verifies that `perm` is a permutation of `0..n`.
pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!(
            "expected a permutation of length {n}, got length {}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n {
            return Err(Error::invalid(format!("index {p} out of range 0..{n}")));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("index {p} appears twice")));
        }
    }
    Ok(())
}

/// Inverse of a permutation: `inv[perm[i]] = i`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// A vertical run of character boxes, members ordered top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub member_indices: Vec<usize>,
    pub extent: BBox,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(b(0., 0., 2., 2.).center(), (1.0, 1.0));
        assert_eq!(b(0., 0., 1., 3.).center(), (0.5, 1.5));
        assert_eq!(b(10., 20., 30., 40.).center(), (20.0, 30.0));
    }

    #[test]
    fn union_examples() {
        let a = b(0., 0., 1., 1.);
        assert_eq!(bbox_union(&a, &a), a);
        assert_eq!(bbox_union(&a, &b(2., 2., 3., 3.)), b(0., 0., 3., 3.));
        assert_eq!(bbox_union(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)), b(0., 0., 3., 3.));
    }

    #[test]
    fn rejects_degenerate_and_nonfinite() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn layout_parse_is_lenient() {
        assert_eq!(Layout::parse_lenient("Hanging Scroll"), Layout::HangingScroll);
        assert_eq!(Layout::parse_lenient("对联"), Layout::Couplet);
        assert_eq!(Layout::parse_lenient("fan"), Layout::Other("fan".to_string()));
        assert_eq!(Style::parse_lenient("草书"), Style::Cursive);
    }

    #[test]
    fn validator_rejects_bad_pages() {
        let mut page = PageSample {
            id: "p".into(),
            width: 10,
            height: 10,
            boxes: vec![CharBox::new(b(1., 1., 3., 3.)), CharBox::new(b(5., 5., 8., 8.))],
            reading_order: Some(vec![1, 0]),
            layout: Layout::Banner,
            style: None,
            author: None,
            raster: None,
        };
        page.validate().unwrap();
        page.reading_order = Some(vec![0, 0]);
        assert!(page.validate().is_err());
        page.reading_order = Some(vec![0, 1]);
        page.boxes[1].bbox = b(5., 5., 11., 8.);
        assert!(page.validate().is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.1..50.0f64, 0.1..50.0f64).prop_map(|(x, y, w, h)| BBox {
            x1: x,
            y1: y,
            x2: x + w,
            y2: y + h,
        })
    }

    proptest! {
        #[test]
        fn union_laws(a in arb_box(), b2 in arb_box(), c in arb_box()) {
            prop_assert_eq!(bbox_union(&a, &b2), bbox_union(&b2, &a));
            prop_assert_eq!(
                bbox_union(&bbox_union(&a, &b2), &c),
                bbox_union(&a, &bbox_union(&b2, &c))
            );
            prop_assert_eq!(bbox_union(&a, &a), a);
            let u = bbox_union(&a, &b2);
            prop_assert!(u.contains(&a) && u.contains(&b2));
        }
    }
}
