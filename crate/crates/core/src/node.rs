use std::fmt;
use std::str::FromStr;

/// Index of a node within one scenario, `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NodeId {
    type Err = crate::text::TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        crate::text::parse_canonical_u64(s)
            .and_then(|v| u32::try_from(v).map_err(|_| crate::text::TokenError::OutOfRange))
            .map(NodeId)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v as u32)
    }
}
