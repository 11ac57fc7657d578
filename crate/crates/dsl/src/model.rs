//! Members of the built-in Session, State and Element types.
//!
//! Host implementations and the static checker both consult this table,
//! so a member is either available everywhere or nowhere.

use crate::schema::FieldKind;

#[derive(Debug, Clone, PartialEq)]
pub enum Ty {
    Unknown,
    None,
    Bool,
    Int,
    Float,
    Str,
    Session,
    State,
    Element,
    List(Box<Ty>),
    Dict,
    Symbol(String),
}

impl Ty {
    pub fn list(inner: Ty) -> Ty {
        Ty::List(Box::new(inner))
    }

    pub fn host(&self) -> Option<HostKind> {
        match self {
            Ty::Session => Some(HostKind::Session),
            Ty::State => Some(HostKind::State),
            Ty::Element => Some(HostKind::Element),
            _ => None,
        }
    }

    pub fn element_type(&self) -> Ty {
        match self {
            Ty::List(inner) => (**inner).clone(),
            Ty::Str => Ty::Str,
            _ => Ty::Unknown,
        }
    }

    pub fn from_field(kind: &FieldKind) -> Ty {
        match kind {
            FieldKind::String => Ty::Str,
            FieldKind::Integer => Ty::Int,
            FieldKind::Number => Ty::Float,
            FieldKind::Boolean => Ty::Bool,
            FieldKind::List(inner) => Ty::list(Ty::from_field(inner)),
            FieldKind::Object(name) => Ty::Symbol(name.clone()),
            FieldKind::Optional(inner) => Ty::from_field(inner),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostKind {
    Session,
    State,
    Element,
}

impl HostKind {
    pub fn name(&self) -> &'static str {
        match self {
            HostKind::Session => "Session",
            HostKind::State => "State",
            HostKind::Element => "Element",
        }
    }

    pub fn attributes(&self) -> &'static [&'static str] {
        match self {
            HostKind::Session => &["history", "state"],
            HostKind::State => &["page_id", "elements", "url", "title", "summary", "step_index"],
            HostKind::Element => &[
                "id",
                "text",
                "role",
                "xmin",
                "ymin",
                "xmax",
                "ymax",
                "interactable",
                "attributes",
                "parent",
                "children",
            ],
        }
    }

    pub fn methods(&self) -> &'static [&'static str] {
        match self {
            HostKind::Session => &[],
            HostKind::State => &["find", "extract"],
            HostKind::Element => &["extract"],
        }
    }

    pub fn has_attribute(&self, name: &str) -> bool {
        self.attributes().contains(&name)
    }

    pub fn has_method(&self, name: &str) -> bool {
        self.methods().contains(&name)
    }

    pub fn attribute_type(&self, name: &str) -> Option<Ty> {
        Some(match (self, name) {
            (HostKind::Session, "history") => Ty::list(Ty::State),
            (HostKind::Session, "state") => Ty::State,
            (HostKind::State, "elements") => Ty::list(Ty::Element),
            (HostKind::State, "step_index") => Ty::Int,
            (HostKind::State, _) if self.has_attribute(name) => Ty::Str,
            (HostKind::Element, "xmin" | "ymin" | "xmax" | "ymax") => Ty::Int,
            (HostKind::Element, "interactable") => Ty::Bool,
            (HostKind::Element, "attributes") => Ty::Dict,
            (HostKind::Element, "parent") => Ty::Element,
            (HostKind::Element, "children") => Ty::list(Ty::Element),
            (HostKind::Element, _) if self.has_attribute(name) => Ty::Str,
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_lives_on_state_and_element_only() {
        assert!(!HostKind::Session.has_method("extract"));
        assert!(HostKind::State.has_method("extract"));
        assert!(HostKind::Element.has_method("extract"));
    }

    #[test]
    fn every_attribute_has_a_type() {
        for host in [HostKind::Session, HostKind::State, HostKind::Element] {
            for a in host.attributes() {
                assert!(host.attribute_type(a).is_some(), "{}.{a}", host.name());
            }
        }
    }
}
