/// Per-invocation multiply counter threaded through forward passes.
///
/// `matmul_muls` collects dense matrix products, `attention_muls` the
/// logit and weighted-sum products inside attention, and `residual_adds`
/// the element additions of residual connections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    enabled: bool,
    pub matmul_muls: u64,
    pub attention_muls: u64,
    pub residual_adds: u64,
}

impl OpCounter {
    pub fn enabled() -> Self {
        Self { enabled: true, ..Self::default() }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    #[inline]
    pub fn matmul(&mut self, rows: usize, inner: usize, cols: usize) {
        if self.enabled {
            self.matmul_muls += (rows * inner * cols) as u64;
        }
    }

    #[inline]
    pub fn attention(&mut self, muls: usize) {
        if self.enabled {
            self.attention_muls += muls as u64;
        }
    }

    #[inline]
    pub fn residual(&mut self, adds: usize) {
        if self.enabled {
            self.residual_adds += adds as u64;
        }
    }

    /// Every scalar multiply performed.
    pub fn true_muls(&self) -> u64 {
        self.matmul_muls + self.attention_muls
    }

    /// Multiplies plus residual additions, the convention the closed-form
    /// block cost formulas use.
    pub fn formula_comparable(&self) -> u64 {
        self.matmul_muls + self.attention_muls + self.residual_adds
    }
}
