use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::StoreError;

/// Name of the distinguished root branch. The root branch's delta layer is
/// the base directory itself.
pub const ROOT_NAME: &str = "root";

/// Identifier of a branch within one store. Names are unique among live
/// branches, contain no path separators, and never begin with `@` (reserved
/// for virtual directories at the mount root).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(String);

impl BranchId {
    pub fn root() -> Self {
        BranchId(ROOT_NAME.to_string())
    }

    pub fn is_root(&self) -> bool {
        self.0 == ROOT_NAME
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Validates a user-supplied branch name. The root name is reserved.
    pub fn new(name: &str) -> Result<Self, StoreError> {
        if name.is_empty()
            || name == ROOT_NAME
            || name == "."
            || name == ".."
            || name.starts_with('@')
            || name.contains('/')
            || name.contains('\0')
            || name.chars().any(char::is_whitespace)
        {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        Ok(BranchId(name.to_string()))
    }

    /// Accepts any known name including `root`, for lookup arguments.
    pub fn parse(name: &str) -> Result<Self, StoreError> {
        if name == ROOT_NAME {
            return Ok(Self::root());
        }
        Self::new(name)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_names() {
        for bad in ["", "root", "@x", "a/b", "a b", ".", "..", "a\nb"] {
            assert!(BranchId::new(bad).is_err(), "{bad:?} should be invalid");
        }
    }

    #[test]
    fn accepts_ordinary_names() {
        for ok in ["feature-a", "b1", "x.y", "UPPER", "über"] {
            assert!(BranchId::new(ok).is_ok(), "{ok:?} should be valid");
        }
    }

    #[test]
    fn parse_allows_root() {
        assert!(BranchId::parse("root").unwrap().is_root());
    }
}
