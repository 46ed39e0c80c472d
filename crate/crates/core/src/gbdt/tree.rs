use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// Regression tree node. `feature` indexes the owning ensemble's
/// `feature_names`; rows with `x < threshold` go left, missing cells follow
/// `missing_goes`.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
        cover: u64,
    },
    Split {
        feature: usize,
        threshold: f64,
        missing_goes: Direction,
        cover: u64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(value: f64, cover: u64) -> Self {
        TreeNode::Leaf { value, cover }
    }

    pub fn split(
        feature: usize,
        threshold: f64,
        missing_goes: Direction,
        left: TreeNode,
        right: TreeNode,
    ) -> Self {
        let cover = left.cover() + right.cover();
        TreeNode::Split {
            feature,
            threshold,
            missing_goes,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn cover(&self) -> u64 {
        match self {
            TreeNode::Leaf { cover, .. } | TreeNode::Split { cover, .. } => *cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Which child `value` is routed to at a split.
    #[inline]
    pub fn route(threshold: f64, missing_goes: Direction, value: Option<f64>) -> Direction {
        match value {
            None => missing_goes,
            Some(v) if v < threshold => Direction::Left,
            Some(_) => Direction::Right,
        }
    }

    /// Leaf value reached by `row` (unscaled by the learning rate).
    pub fn eval(&self, row: &[Option<f64>]) -> f64 {
        self.eval_with(|f| row[f])
    }

    pub fn eval_with(&self, cell: impl Fn(usize) -> Option<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split { feature, threshold, missing_goes, left, right, .. } => {
                    node = match Self::route(*threshold, *missing_goes, cell(*feature)) {
                        Direction::Left => left,
                        Direction::Right => right,
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Calls `f` on every node in preorder.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    /// Features split on anywhere in this tree.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let TreeNode::Split { feature, .. } = n {
                if !out.contains(feature) {
                    out.push(*feature);
                }
            }
        });
        out.sort_unstable();
        out
    }

    /// Checks cover consistency and finite leaves. Returns the first
    /// violation found.
    pub fn check(&self) -> Result<(), String> {
        match self {
            TreeNode::Leaf { value, cover } => {
                if *cover < 1 {
                    return Err("leaf with zero cover".into());
                }
                if !value.is_finite() {
                    return Err(format!("non-finite leaf value {value}"));
                }
                Ok(())
            }
            TreeNode::Split { cover, left, right, threshold, .. } => {
                if left.cover() + right.cover() != *cover {
                    return Err(format!(
                        "cover {cover} != {} + {}",
                        left.cover(),
                        right.cover()
                    ));
                }
                if threshold.is_nan() {
                    return Err("NaN threshold".into());
                }
                left.check()?;
                right.check()
            }
        }
    }
}
