//! Banded LU factorization with partial pivoting, in LAPACK `dgbtrf`
//! band storage. The Newton systems assembled over the structured grid
//! have fixed bandwidth, so a band solver covers the direct solve at
//! desk scale without external dependencies.

/// Column-major band storage with `kl` sub- and `ku` superdiagonals plus
/// `kl` fill rows for pivoting. Entry (i, j) lives at
/// `data[j * ldab + kl + ku + i - j]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> BandMatrix {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            i + self.ku >= j && j + self.kl >= i,
            "entry ({i},{j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        self.data[j * self.ldab + self.kl + self.ku + i - j] += v;
    }

    /// Reads entry (i, j); zero outside the band. Only meaningful before
    /// factorization.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku < j || j + self.kl < i {
            return 0.0;
        }
        self.data[j * self.ldab + self.kl + self.ku + i - j]
    }

    #[inline]
    fn at(&self, r: usize, j: usize) -> f64 {
        self.data[j * self.ldab + r]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.ldab + r]
    }

    /// In-place LU factorization with row pivoting. On failure returns the
    /// index of the column whose pivot vanished.
    pub fn factor(&mut self, ipiv: &mut Vec<usize>) -> Result<(), usize> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let kv = kl + ku;
        ipiv.clear();
        ipiv.resize(n, 0);
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // Pivot search over the active part of column j.
            let mut jp = 0usize;
            let mut best = self.at(kv, j).abs();
            for p in 1..=km {
                let v = self.at(kv + p, j).abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(j);
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                // Swap rows j and j+jp across the affected columns.
                for col in j..=ju {
                    let ra = kv + j - col;
                    let rb = kv + j + jp - col;
                    let a = self.at(ra, col);
                    let b = self.at(rb, col);
                    *self.at_mut(ra, col) = b;
                    *self.at_mut(rb, col) = a;
                }
            }
            if km > 0 {
                let inv = 1.0 / self.at(kv, j);
                for p in 1..=km {
                    *self.at_mut(kv + p, j) *= inv;
                }
                // Rank-1 update of the trailing band.
                let (head, tail) = self.data.split_at_mut((j + 1) * self.ldab);
                let lcol = &head[j * self.ldab + kv + 1..j * self.ldab + kv + 1 + km];
                for col in j + 1..=ju {
                    let base = (col - j - 1) * self.ldab;
                    let urow = kv + j - col;
                    let f = tail[base + urow];
                    if f != 0.0 {
                        let dst = &mut tail[base + urow + 1..base + urow + 1 + km];
                        for (d, l) in dst.iter_mut().zip(lcol) {
                            *d -= f * *l;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves A x = b using a prior [`factor`]; `b` is overwritten by x.
    pub fn solve(&self, ipiv: &[usize], b: &mut [f64]) {
        let n = self.n;
        let kl = self.kl;
        let kv = kl + self.ku;
        debug_assert_eq!(b.len(), n);
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let jp = ipiv[j];
                if jp != j {
                    b.swap(j, jp);
                }
                let bj = b[j];
                if bj != 0.0 {
                    let km = kl.min(n - 1 - j);
                    let col = &self.data[j * self.ldab + kv + 1..j * self.ldab + kv + 1 + km];
                    for (p, l) in col.iter().enumerate() {
                        b[j + 1 + p] -= l * bj;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let bj = b[j] / self.at(kv, j);
            b[j] = bj;
            if bj != 0.0 {
                let lo = j.saturating_sub(kv);
                // Column j's superdiagonal entries sit contiguously above
                // the pivot row in band storage.
                let col = &self.data[j * self.ldab + kv - (j - lo)..j * self.ldab + kv];
                for (bi, u) in b[lo..j].iter_mut().zip(col) {
                    *bi -= u * bj;
                }
            }
        }
    }
}
