//! Raw observed pages as produced by a driver.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Axis-aligned box `[xmin, ymin, xmax, ymax]` in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BBox {
    pub fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn is_valid(&self) -> bool {
        self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    pub fn center(&self) -> (i64, i64) {
        ((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)
    }

    /// Closed-interval overlap test; touching edges count as intersecting.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.xmin <= other.xmax && other.xmin <= self.xmax && self.ymin <= other.ymax && other.ymin <= self.ymax
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin && self.ymin <= other.ymin && other.xmax <= self.xmax && other.ymax <= self.ymax
    }
}

impl Serialize for BBoxArray {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.0.xmin, self.0.ymin, self.0.xmax, self.0.ymax].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBoxArray {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [a, b, c, e] = <[i64; 4]>::deserialize(d)?;
        Ok(BBoxArray(BBox::new(a, b, c, e)))
    }
}

/// Compact `[xmin, ymin, xmax, ymax]` serialization of a [`BBox`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBoxArray(pub BBox);

fn bbox_as_array<S: serde::Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
    BBoxArray(*b).serialize(s)
}

fn bbox_from_array<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
    Ok(BBoxArray::deserialize(d)?.0)
}

/// One node of an observed element tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawElement {
    pub id: String,
    pub role: String,
    #[serde(default)]
    pub text: String,
    #[serde(rename = "box", serialize_with = "bbox_as_array", deserialize_with = "bbox_from_array")]
    pub bbox: BBox,
    #[serde(default)]
    pub interactable: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<RawElement>,
}

impl RawElement {
    pub fn new(id: impl Into<String>, role: impl Into<String>, text: impl Into<String>, bbox: BBox) -> Self {
        RawElement {
            id: id.into(),
            role: role.into(),
            text: text.into(),
            bbox,
            interactable: false,
            attributes: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn interactable(mut self) -> Self {
        self.interactable = true;
        self
    }

    pub fn with_attr(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.attributes.insert(k.into(), v.into());
        self
    }

    pub fn with_children(mut self, children: Vec<RawElement>) -> Self {
        self.children = children;
        self
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a RawElement, usize)) {
        fn go<'a>(e: &'a RawElement, depth: usize, f: &mut impl FnMut(&'a RawElement, usize)) {
            f(e, depth);
            for c in &e.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f)
    }

    pub fn find(&self, id: &str) -> Option<&RawElement> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }
}

/// A page as observed by a driver: element tree, bounds and location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPage {
    pub url: String,
    #[serde(default)]
    pub title: String,
    pub width: i64,
    pub height: i64,
    pub root: RawElement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PageError {
    #[error("element `{0}` has an inverted bounding box")]
    InvertedBox(String),
    #[error("element id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("element `{0}` has an empty id")]
    EmptyId(String),
    #[error("element `{0}` lies outside the page bounds")]
    OutOfBounds(String),
}

impl RawPage {
    /// Checks the structural invariants of the element tree.
    pub fn validate(&self) -> Result<(), PageError> {
        let bounds = BBox::new(0, 0, self.width, self.height);
        let mut seen = HashSet::new();
        let mut err = None;
        self.root.walk(&mut |e, _| {
            if err.is_some() {
                return;
            }
            if e.id.is_empty() {
                err = Some(PageError::EmptyId(format!("{} {:?}", e.role, e.text)));
            } else if !e.bbox.is_valid() {
                err = Some(PageError::InvertedBox(e.id.clone()));
            } else if !bounds.contains(&e.bbox) {
                err = Some(PageError::OutOfBounds(e.id.clone()));
            } else if !seen.insert(e.id.as_str()) {
                err = Some(PageError::DuplicateId(e.id.clone()));
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn elements(&self) -> Vec<&RawElement> {
        let mut out = Vec::new();
        self.root.walk(&mut |e, _| out.push(e));
        out
    }

    pub fn find(&self, id: &str) -> Option<&RawElement> {
        self.root.find(id)
    }
}

/// Stable content hash over `(role, text, bbox)` of all elements in tree order.
pub fn fingerprint(page: &RawPage) -> String {
    let mut hasher = Sha256::new();
    page.root.walk(&mut |e, depth| {
        let b = e.bbox;
        hasher.update(format!("{depth}\u{1f}{}\u{1f}{}\u{1f}{},{},{},{}\u{1e}", e.role, e.text, b.xmin, b.ymin, b.xmax, b.ymax));
    });
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(texts: &[&str]) -> RawPage {
        let children = texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawElement::new(format!("e{i}"), "button", *t, BBox::new(0, i as i64 * 10, 50, i as i64 * 10 + 9)))
            .collect();
        RawPage {
            url: "/".into(),
            title: "t".into(),
            width: 100,
            height: 100,
            root: RawElement::new("root", "page", "", BBox::new(0, 0, 100, 100)).with_children(children),
            screenshot: None,
        }
    }

    #[test]
    fn fingerprint_tracks_content_and_order() {
        assert_eq!(fingerprint(&page(&["a", "b"])), fingerprint(&page(&["a", "b"])));
        assert_ne!(fingerprint(&page(&["a", "b"])), fingerprint(&page(&["a", "c"])));
        let mut swapped = page(&["a", "b"]);
        swapped.root.children.swap(0, 1);
        assert_ne!(fingerprint(&page(&["a", "b"])), fingerprint(&swapped));
    }

    #[test]
    fn validation_names_the_offending_node() {
        let mut p = page(&["a", "b"]);
        p.root.children[1].id = "e0".into();
        assert_eq!(p.validate(), Err(PageError::DuplicateId("e0".into())));
        let mut p = page(&["a"]);
        p.root.children[0].bbox = BBox::new(10, 0, 5, 5);
        assert_eq!(p.validate(), Err(PageError::InvertedBox("e0".into())));
    }

    #[test]
    fn bbox_serializes_as_array() {
        let e = RawElement::new("x", "button", "OK", BBox::new(1, 2, 3, 4));
        let j = serde_json::to_string(&e).unwrap();
        assert!(j.contains("\"box\":[1,2,3,4]"), "{j}");
        assert_eq!(serde_json::from_str::<RawElement>(&j).unwrap(), e);
    }
}
