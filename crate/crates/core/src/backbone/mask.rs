use crate::error::{contract, Result};

/// Boolean `[n x n]` attention pattern; `allows(i, j)` means position `i`
/// may attend to position `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Validates that every row allows at least one key.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                allowed[i * n + j] = f(i, j);
            }
        }
        let m = Self { n, allowed };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if !self.row(i).iter().any(|&a| a) {
                return Err(contract(format!("attention mask row {i} has no allowed key")));
            }
        }
        Ok(())
    }

    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, |i, j| j <= i).expect("causal rows always include the diagonal")
    }

    /// Full attention over non-padding keys.
    pub fn bidirectional(padding: &[bool]) -> Result<Self> {
        Self::from_fn(padding.len(), |_, j| !padding[j])
    }

    /// Query prefix of length `q` followed by independent blocks. Each block
    /// attends causally to the full prefix and to its own earlier positions,
    /// never to another block.
    pub fn block_isolated(q: usize, block_lens: &[usize]) -> Result<Self> {
        if q == 0 {
            return Err(contract("query prefix must be non-empty"));
        }
        let n = q + block_lens.iter().sum::<usize>();
        let mut block_of = vec![usize::MAX; n];
        let mut off = q;
        for (b, &len) in block_lens.iter().enumerate() {
            block_of[off..off + len].iter_mut().for_each(|x| *x = b);
            off += len;
        }
        Self::from_fn(n, |i, j| {
            if j > i {
                false
            } else if j < q {
                true
            } else {
                block_of[i] == block_of[j]
            }
        })
    }

    /// Mask for `x ∥ MID_1 ∥ … ∥ MID_T`: each MID sees the query and itself.
    pub fn batched_mid(q: usize, models: usize) -> Result<Self> {
        if models == 0 {
            return Err(contract("need at least one model"));
        }
        Self::block_isolated(q, &vec![1; models])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    /// True when no position attends to a later one.
    pub fn is_causal_compatible(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| !self.allows(i, j)))
    }
}
