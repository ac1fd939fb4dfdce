use std::fmt;

/// Identifier of a random variable, carrying its dimensionality.
///
/// Ordering and equality are driven by the numeric id; the dimension rides
/// along so factor code can lay out matrices without a side table. A model
/// must never reuse an id with a different dimension.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VarId {
    id: u32,
    dim: u16,
}

impl VarId {
    pub fn new(id: u32, dim: u16) -> Self {
        assert!(dim >= 1, "variable dimension must be at least 1");
        Self { id, dim }
    }

    /// A one-dimensional variable.
    pub fn scalar(id: u32) -> Self {
        Self { id, dim: 1 }
    }

    pub fn id(self) -> u32 {
        self.id
    }

    pub fn dim(self) -> usize {
        self.dim as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.id)
    }
}

/// An ordered set of variables: the domain of a factor.
///
/// Variables are kept sorted by id, so two scopes over the same variables are
/// structurally equal and matrix layouts are canonical.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Scope {
    vars: Vec<VarId>,
}

impl Scope {
    pub fn empty() -> Self {
        Self { vars: Vec::new() }
    }

    pub fn new(mut vars: Vec<VarId>) -> Self {
        vars.sort();
        vars.dedup();
        debug_assert!(
            vars.windows(2).all(|w| w[0].id() != w[1].id()),
            "same variable id declared with two dimensions"
        );
        Self { vars }
    }

    pub fn singleton(v: VarId) -> Self {
        Self { vars: vec![v] }
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }

    pub fn iter(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars.iter().copied()
    }

    /// Number of variables.
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Sum of variable dimensions: the matrix side length of a factor.
    pub fn total_dim(&self) -> usize {
        self.vars.iter().map(|v| v.dim()).sum()
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.vars.binary_search_by_key(&v.id(), |x| x.id()).is_ok()
    }

    /// Row/column offset of `v` within this scope's matrix layout.
    pub fn offset_of(&self, v: VarId) -> Option<usize> {
        let idx = self.vars.binary_search_by_key(&v.id(), |x| x.id()).ok()?;
        Some(self.vars[..idx].iter().map(|x| x.dim()).sum())
    }

    pub fn is_subset_of(&self, other: &Scope) -> bool {
        self.vars.iter().all(|v| other.contains(*v))
    }

    pub fn union(&self, other: &Scope) -> Scope {
        let mut vars = self.vars.clone();
        vars.extend(other.vars.iter().copied());
        Scope::new(vars)
    }

    pub fn intersection(&self, other: &Scope) -> Scope {
        Scope {
            vars: self
                .vars
                .iter()
                .copied()
                .filter(|v| other.contains(*v))
                .collect(),
        }
    }

    pub fn difference(&self, other: &Scope) -> Scope {
        Scope {
            vars: self
                .vars
                .iter()
                .copied()
                .filter(|v| !other.contains(*v))
                .collect(),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<VarId> for Scope {
    fn from_iter<T: IntoIterator<Item = VarId>>(iter: T) -> Self {
        Scope::new(iter.into_iter().collect())
    }
}
