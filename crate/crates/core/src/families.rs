//! Point ensembles and their implicit query workloads.
//!
//! Sign conventions: a set bit means a minus sign. Bit `q` of a v-mask is set
//! iff `v_q = -1`, and bit `i` of a predicate mask is set iff `h(i) = -1`, so
//! the zero mask is the all-plus vector. All indices are zero-based.
//!
//! Dense layout for tensor points `e^i ⊗ u^j ⊗ v`: coordinate `(i, p, q)`
//! lives at `(i * k + p) * d + q`. The marginal family uses the same layout
//! with `m = 1`. Slice `r` of any vector is the set of coordinates whose last
//! index equals `r`.

use std::fmt;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::seed::Seed;

/// Largest family that may be explicitly enumerated.
pub const ENUMERATION_LIMIT: u64 = 1 << 24;

/// Sylvester rows of the k×k Hadamard matrix, entry `(a, b) = (-1)^{popcount(a & b)}`.
pub fn hadamard_orthogonal_set(k: usize) -> Result<Vec<Vec<i8>>> {
    if k == 0 || !k.is_power_of_two() {
        return Err(invalid(format!(
            "Hadamard size must be a power of two, got {k}"
        )));
    }
    Ok((0..k)
        .map(|a| {
            (0..k)
                .map(|b| if (a & b).count_ones() % 2 == 0 { 1 } else { -1 })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Hypercube,
    Tensor,
    Marginal,
    MatrixColumns,
}

impl FamilyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::Hypercube => "hypercube",
            FamilyKind::Tensor => "tensor",
            FamilyKind::Marginal => "marginal",
            FamilyKind::MatrixColumns => "matrix-columns",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypercube" => Ok(FamilyKind::Hypercube),
            "tensor" => Ok(FamilyKind::Tensor),
            "marginal" => Ok(FamilyKind::Marginal),
            "matrix-columns" => Ok(FamilyKind::MatrixColumns),
            other => Err(invalid(format!("unknown family kind `{other}`"))),
        }
    }
}

/// Everything needed to rebuild a family. This is what gets written to
/// manifests; the matrix payload is regenerated from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    /// Number of `e^i` blocks (tensor only, 1 otherwise).
    pub m: usize,
    /// Number of orthogonal vectors `u^j` (tensor and marginal, 1 otherwise).
    pub k: usize,
    /// Hypercube block length, or row count for matrix-columns.
    pub d: usize,
    /// Column count (matrix-columns only).
    pub columns: usize,
    pub seed: Option<u64>,
    /// Name space size W when the family is name-extended.
    pub names: Option<u64>,
}

impl FamilySpec {
    pub fn hypercube(d: usize) -> Self {
        FamilySpec {
            kind: FamilyKind::Hypercube,
            m: 1,
            k: 1,
            d,
            columns: 0,
            seed: None,
            names: None,
        }
    }

    pub fn tensor(m: usize, k: usize, d: usize) -> Self {
        FamilySpec {
            kind: FamilyKind::Tensor,
            m,
            k,
            d,
            columns: 0,
            seed: None,
            names: None,
        }
    }

    pub fn marginal(k: usize, d: usize) -> Self {
        FamilySpec {
            kind: FamilyKind::Marginal,
            m: 1,
            k,
            d,
            columns: 0,
            seed: None,
            names: None,
        }
    }

    pub fn matrix_columns(d: usize, columns: usize, seed: u64) -> Self {
        FamilySpec {
            kind: FamilyKind::MatrixColumns,
            m: 1,
            k: 1,
            d,
            columns,
            seed: Some(seed),
            names: None,
        }
    }

    pub fn with_names(mut self, names: u64) -> Self {
        self.names = Some(names);
        self
    }

    /// Text manifest, one `key = value` per line.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("kind = {}\n", self.kind);
        match self.kind {
            FamilyKind::Hypercube => out += &format!("d = {}\n", self.d),
            FamilyKind::Tensor => {
                out += &format!("m = {}\nk = {}\nd = {}\n", self.m, self.k, self.d)
            }
            FamilyKind::Marginal => out += &format!("k = {}\nd = {}\n", self.k, self.d),
            FamilyKind::MatrixColumns => {
                out += &format!("d = {}\ncolumns = {}\n", self.d, self.columns)
            }
        }
        if let Some(s) = self.seed {
            out += &format!("seed = {s}\n");
        }
        if let Some(w) = self.names {
            out += &format!("names = {w}\n");
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut kind = None;
        let (mut m, mut k, mut d, mut columns) = (1usize, 1usize, None, 0usize);
        let (mut seed, mut names) = (None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                invalid(format!(
                    "manifest line {}: expected key = value",
                    lineno + 1
                ))
            })?;
            let value = value.trim();
            let num = |v: &str| -> Result<u64> {
                v.parse().map_err(|_| {
                    invalid(format!("manifest line {}: bad integer `{v}`", lineno + 1))
                })
            };
            match key.trim() {
                "kind" => kind = Some(value.parse::<FamilyKind>()?),
                "m" => m = num(value)? as usize,
                "k" => k = num(value)? as usize,
                "d" => d = Some(num(value)? as usize),
                "columns" => columns = num(value)? as usize,
                "seed" => seed = Some(num(value)?),
                "names" => names = Some(num(value)?),
                other => {
                    return Err(invalid(format!(
                        "manifest line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        let kind = kind.ok_or_else(|| invalid("manifest lacks `kind`"))?;
        let d = d.ok_or_else(|| invalid("manifest lacks `d`"))?;
        Ok(FamilySpec {
            kind,
            m,
            k,
            d,
            columns,
            seed,
            names,
        })
    }
}

/// A ±1 matrix stored column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    /// Independent fair signs, reproducible from `seed`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = Seed(seed).stream("sign-matrix").rng();
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            let word: u64 = rng.random();
            let take = (rows * cols - data.len()).min(64);
            data.extend((0..take).map(|b| if word >> b & 1 == 0 { 1i8 } else { -1 }));
        }
        SignMatrix { rows, cols, data }
    }

    pub fn from_columns(columns: &[Vec<i8>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns
            .iter()
            .any(|c| c.len() != rows || c.iter().any(|&x| x != 1 && x != -1))
        {
            return Err(invalid("columns must share a length and hold ±1 entries"));
        }
        Ok(SignMatrix {
            rows,
            cols: columns.len(),
            data: columns.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, c: usize) -> &[i8] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.data[col * self.rows + row]
    }

    /// Column-major entries as f64, handy for dense linear algebra.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

/// The block part of a point reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Locus {
    Cube { bits: u64 },
    Tensor { i: usize, j: usize, bits: u64 },
    Marginal { j: usize, bits: u64 },
    Column(usize),
}

/// A point of a family, optionally carrying a name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointRef {
    pub locus: Locus,
    pub name: Option<u64>,
}

impl PointRef {
    pub fn new(locus: Locus) -> Self {
        PointRef { locus, name: None }
    }

    pub fn named(locus: Locus, name: u64) -> Self {
        PointRef {
            locus,
            name: Some(name),
        }
    }

    /// v-bits for bit-addressed kinds.
    pub fn bits(&self) -> Option<u64> {
        match self.locus {
            Locus::Cube { bits } | Locus::Tensor { bits, .. } | Locus::Marginal { bits, .. } => {
                Some(bits)
            }
            Locus::Column(_) => None,
        }
    }
}

/// Row of a workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryId {
    /// `h(i) · u^j_p · v_q`; `h` is an m-bit mask.
    Tensor { h: u64, p: usize, q: usize },
    /// `u^j_p · v_q`.
    Marginal { p: usize, q: usize },
    /// A coordinate of a hypercube point or a row of the matrix.
    Row(usize),
}

/// Sign of bit `b` under the set-bit-is-minus convention.
#[inline]
pub fn bit_sign(mask: u64, b: usize) -> f64 {
    if mask >> b & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// An immutable point ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFamily {
    spec: FamilySpec,
    basis: Vec<Vec<i8>>,
    matrix: Option<SignMatrix>,
}

impl PointFamily {
    pub fn new(spec: FamilySpec) -> Result<Self> {
        let positive = spec.m >= 1 && spec.k >= 1 && spec.d >= 1;
        if !positive {
            return Err(invalid("shape parameters must be positive"));
        }
        let bit_addressed = spec.kind != FamilyKind::MatrixColumns;
        if bit_addressed && spec.d > 64 {
            return Err(invalid(format!("d = {} exceeds the 64-bit v-mask", spec.d)));
        }
        if spec.kind == FamilyKind::Tensor && spec.m > 64 {
            return Err(invalid("m exceeds the 64-bit predicate mask"));
        }
        if spec.names == Some(0) {
            return Err(invalid("name space must be nonempty"));
        }
        let (basis, matrix) = match spec.kind {
            FamilyKind::Hypercube => (vec![vec![1]], None),
            FamilyKind::Tensor | FamilyKind::Marginal => (hadamard_orthogonal_set(spec.k)?, None),
            FamilyKind::MatrixColumns => {
                let seed = spec
                    .seed
                    .ok_or_else(|| invalid("matrix-columns family needs a seed"))?;
                if spec.columns == 0 {
                    return Err(invalid("matrix-columns family needs at least one column"));
                }
                (
                    vec![vec![1]],
                    Some(SignMatrix::random(spec.d, spec.columns, seed)),
                )
            }
        };
        let spec = match spec.kind {
            FamilyKind::Hypercube => FamilySpec { m: 1, k: 1, ..spec },
            FamilyKind::Marginal => FamilySpec { m: 1, ..spec },
            _ => spec,
        };
        Ok(PointFamily {
            spec,
            basis,
            matrix,
        })
    }

    /// A matrix-columns family around an explicit matrix (no seed to replay).
    pub fn from_matrix(matrix: SignMatrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(invalid("matrix must be nonempty"));
        }
        Ok(PointFamily {
            spec: FamilySpec {
                kind: FamilyKind::MatrixColumns,
                m: 1,
                k: 1,
                d: matrix.rows(),
                columns: matrix.cols(),
                seed: None,
                names: None,
            },
            basis: vec![vec![1]],
            matrix: Some(matrix),
        })
    }

    pub fn hypercube(d: usize) -> Result<Self> {
        Self::new(FamilySpec::hypercube(d))
    }

    pub fn tensor(m: usize, k: usize, d: usize) -> Result<Self> {
        Self::new(FamilySpec::tensor(m, k, d))
    }

    pub fn marginal(k: usize, d: usize) -> Result<Self> {
        Self::new(FamilySpec::marginal(k, d))
    }

    pub fn matrix_columns(d: usize, columns: usize, seed: u64) -> Result<Self> {
        Self::new(FamilySpec::matrix_columns(d, columns, seed))
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn kind(&self) -> FamilyKind {
        self.spec.kind
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn name_space(&self) -> Option<u64> {
        self.spec.names
    }

    pub fn basis(&self) -> &[Vec<i8>] {
        &self.basis
    }

    pub fn matrix(&self) -> Option<&SignMatrix> {
        self.matrix.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.spec.m * self.spec.k * self.spec.d
    }

    /// Number of `(i, j)` types; 1 for kinds without type structure.
    pub fn type_count(&self) -> usize {
        match self.kind() {
            FamilyKind::Tensor => self.m() * self.k(),
            FamilyKind::Marginal => self.k(),
            _ => 1,
        }
    }

    /// Family size (ignoring names), saturating in f64 for huge families.
    pub fn size(&self) -> f64 {
        match self.kind() {
            FamilyKind::MatrixColumns => self.spec.columns as f64,
            _ => self.type_count() as f64 * 2f64.powi(self.d() as i32),
        }
    }

    /// Number of slices (the last tensor index); the hypercube and matrix
    /// kinds have one coordinate per slice.
    pub fn slice_count(&self) -> usize {
        self.d()
    }

    /// Slice of a dense coordinate.
    pub fn slice_of(&self, index: usize) -> usize {
        index % self.d()
    }

    pub fn tensor_index(&self, i: usize, p: usize, q: usize) -> usize {
        (i * self.k() + p) * self.d() + q
    }

    /// Type index `i * k + j` of a point.
    pub fn type_of(&self, point: &PointRef) -> usize {
        match point.locus {
            Locus::Tensor { i, j, .. } => i * self.k() + j,
            Locus::Marginal { j, .. } => j,
            _ => 0,
        }
    }

    /// Returns a copy whose points carry names from `[0, names)`.
    pub fn with_names(&self, names: u64) -> Result<Self> {
        if names == 0 {
            return Err(invalid("name space must be nonempty"));
        }
        let mut out = self.clone();
        out.spec.names = Some(names);
        Ok(out)
    }

    /// Checks that `point` belongs to this family.
    pub fn validate(&self, point: &PointRef) -> Result<()> {
        let d = self.d();
        let bits_ok = |bits: u64| d == 64 || bits >> d == 0;
        let ok = match (self.kind(), point.locus) {
            (FamilyKind::Hypercube, Locus::Cube { bits }) => bits_ok(bits),
            (FamilyKind::Tensor, Locus::Tensor { i, j, bits }) => {
                i < self.m() && j < self.k() && bits_ok(bits)
            }
            (FamilyKind::Marginal, Locus::Marginal { j, bits }) => j < self.k() && bits_ok(bits),
            (FamilyKind::MatrixColumns, Locus::Column(c)) => c < self.spec.columns,
            _ => false,
        };
        if !ok {
            return Err(invalid(format!(
                "point {point:?} is not in the {} family",
                self.kind()
            )));
        }
        match (self.spec.names, point.name) {
            (None, None) => Ok(()),
            (Some(w), Some(name)) if name < w => Ok(()),
            (Some(w), Some(name)) => Err(invalid(format!("name {name} outside [0, {w})"))),
            (Some(_), None) => Err(invalid("name-extended family requires named points")),
            (None, Some(_)) => Err(invalid("family is not name-extended")),
        }
    }

    /// Dense vector of a point.
    pub fn resolve(&self, point: &PointRef) -> Result<Vec<f64>> {
        self.validate(point)?;
        let mut out = vec![0.0; self.dim()];
        self.resolve_into(point, &mut out);
        Ok(out)
    }

    /// Writes the dense vector of an already validated point into `out`.
    pub fn resolve_into(&self, point: &PointRef, out: &mut [f64]) {
        let d = self.d();
        match point.locus {
            Locus::Cube { bits } => {
                for (q, o) in out.iter_mut().enumerate() {
                    *o = bit_sign(bits, q);
                }
            }
            Locus::Tensor { i, j, bits } => {
                out.fill(0.0);
                let k = self.k();
                for p in 0..k {
                    let u = self.basis[j][p] as f64;
                    let base = (i * k + p) * d;
                    for q in 0..d {
                        out[base + q] = u * bit_sign(bits, q);
                    }
                }
            }
            Locus::Marginal { j, bits } => {
                for p in 0..self.k() {
                    let u = self.basis[j][p] as f64;
                    for q in 0..d {
                        out[p * d + q] = u * bit_sign(bits, q);
                    }
                }
            }
            Locus::Column(c) => {
                let col = self.matrix.as_ref().expect("matrix family").column(c);
                for (o, &a) in out.iter_mut().zip(col) {
                    *o = a as f64;
                }
            }
        }
    }

    /// Inverse of `resolve`; the name (if any) must be supplied separately.
    pub fn locate(&self, vector: &[f64]) -> Result<PointRef> {
        if vector.len() != self.dim() {
            return Err(invalid("vector length differs from family dimension"));
        }
        let sign_bits = |xs: &[f64], scale: f64| -> Result<u64> {
            let mut bits = 0u64;
            for (q, &x) in xs.iter().enumerate() {
                match x * scale {
                    1.0 => {}
                    -1.0 => bits |= 1 << q,
                    _ => return Err(invalid("vector is not a family point")),
                }
            }
            Ok(bits)
        };
        let d = self.d();
        let candidate = match self.kind() {
            FamilyKind::Hypercube => PointRef::new(Locus::Cube {
                bits: sign_bits(vector, 1.0)?,
            }),
            FamilyKind::Tensor | FamilyKind::Marginal => {
                let k = self.k();
                let block = vector
                    .iter()
                    .position(|&x| x != 0.0)
                    .ok_or_else(|| invalid("zero vector is not a family point"))?
                    / (k * d);
                let slab = &vector[block * k * d..(block + 1) * k * d];
                // The p = 0 Sylvester column is all ones, so row 0 of the slab is v itself.
                let bits = sign_bits(&slab[..d], 1.0)?;
                let v0 = bit_sign(bits, 0);
                let pattern: Vec<i8> = (0..k).map(|p| (slab[p * d] * v0) as i8).collect();
                let j = self
                    .basis
                    .iter()
                    .position(|u| *u == pattern)
                    .ok_or_else(|| invalid("vector is not a family point"))?;
                if self.kind() == FamilyKind::Tensor {
                    PointRef::new(Locus::Tensor { i: block, j, bits })
                } else {
                    PointRef::new(Locus::Marginal { j, bits })
                }
            }
            FamilyKind::MatrixColumns => {
                let matrix = self.matrix.as_ref().expect("matrix family");
                let c = (0..matrix.cols())
                    .find(|&c| {
                        matrix
                            .column(c)
                            .iter()
                            .zip(vector)
                            .all(|(&a, &x)| a as f64 == x)
                    })
                    .ok_or_else(|| invalid("vector is not a column"))?;
                PointRef::new(Locus::Column(c))
            }
        };
        if self.resolve(&candidate)? != vector {
            return Err(invalid("vector is not a family point"));
        }
        Ok(candidate)
    }

    /// Every point (without names), in a fixed order.
    pub fn enumerate(&self) -> Result<Vec<PointRef>> {
        let size = self.size();
        if size > ENUMERATION_LIMIT as f64 {
            return Err(Error::Capacity {
                what: "family enumeration",
                requested: size,
                limit: ENUMERATION_LIMIT as f64,
            });
        }
        let patterns = 1u64 << self.d().min(63);
        Ok(match self.kind() {
            FamilyKind::Hypercube => (0..patterns)
                .map(|bits| PointRef::new(Locus::Cube { bits }))
                .collect(),
            FamilyKind::Tensor => {
                let mut out = Vec::with_capacity(size as usize);
                for i in 0..self.m() {
                    for j in 0..self.k() {
                        out.extend(
                            (0..patterns).map(|bits| PointRef::new(Locus::Tensor { i, j, bits })),
                        );
                    }
                }
                out
            }
            FamilyKind::Marginal => {
                let mut out = Vec::with_capacity(size as usize);
                for j in 0..self.k() {
                    out.extend(
                        (0..patterns).map(|bits| PointRef::new(Locus::Marginal { j, bits })),
                    );
                }
                out
            }
            FamilyKind::MatrixColumns => (0..self.spec.columns)
                .map(|c| PointRef::new(Locus::Column(c)))
                .collect(),
        })
    }

    /// Number of workload rows, as f64 since tensor workloads are exponential in m.
    pub fn query_count(&self) -> f64 {
        match self.kind() {
            FamilyKind::Tensor => 2f64.powi(self.m() as i32) * (self.k() * self.d()) as f64,
            FamilyKind::Marginal => (self.k() * self.d()) as f64,
            FamilyKind::Hypercube | FamilyKind::MatrixColumns => self.d() as f64,
        }
    }

    /// Workload entry for `(query, point)`; always ±1.
    pub fn eval_query(&self, query: QueryId, point: &PointRef) -> Result<i8> {
        self.validate(point)?;
        let d = self.d();
        let k = self.k();
        let sign = |x: f64| if x > 0.0 { 1i8 } else { -1 };
        match (query, point.locus) {
            (QueryId::Tensor { h, p, q }, Locus::Tensor { i, j, bits }) => {
                if p >= k || q >= d || (self.m() < 64 && h >> self.m() != 0) {
                    return Err(invalid(format!("query {query:?} out of range")));
                }
                Ok(sign(
                    bit_sign(h, i) * self.basis[j][p] as f64 * bit_sign(bits, q),
                ))
            }
            (QueryId::Marginal { p, q }, Locus::Marginal { j, bits }) => {
                if p >= k || q >= d {
                    return Err(invalid(format!("query {query:?} out of range")));
                }
                Ok(sign(self.basis[j][p] as f64 * bit_sign(bits, q)))
            }
            (QueryId::Row(q), Locus::Cube { bits }) if q < d => Ok(sign(bit_sign(bits, q))),
            (QueryId::Row(row), Locus::Column(c)) if row < d => {
                Ok(self.matrix.as_ref().expect("matrix family").get(row, c))
            }
            _ => Err(invalid(format!(
                "query {query:?} does not apply to {} points",
                self.kind()
            ))),
        }
    }

    /// Uniformly random point (names drawn uniformly when name-extended).
    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> PointRef {
        let d = self.d();
        let bits = if d == 64 {
            rng.random::<u64>()
        } else {
            rng.random::<u64>() & ((1u64 << d) - 1)
        };
        let locus = match self.kind() {
            FamilyKind::Hypercube => Locus::Cube { bits },
            FamilyKind::Tensor => Locus::Tensor {
                i: rng.random_range(0..self.m()),
                j: rng.random_range(0..self.k()),
                bits,
            },
            FamilyKind::Marginal => Locus::Marginal {
                j: rng.random_range(0..self.k()),
                bits,
            },
            FamilyKind::MatrixColumns => Locus::Column(rng.random_range(0..self.spec.columns)),
        };
        PointRef {
            locus,
            name: self.spec.names.map(|w| rng.random_range(0..w)),
        }
    }
}
