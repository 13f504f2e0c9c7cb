//! P1 finite-element assembly on the cross section.
//!
//! The solver state is a two-component field (u, s) = (∂z T, T). Its
//! weighted inner product
//!
//! ```text
//!     ((u,s)|(u',s')) = ∫ c u u' + ∫ σ ∇s·∇s' + ∫_{Γ_R} a s s'
//! ```
//!
//! and the weak form of the duct operator are discretized here into four
//! sparse symmetric matrices: the c-weighted mass `M_c`, the h-weighted
//! mass `M_h`, the σ-weighted stiffness `K_σ` and the Robin boundary mass
//! `R_a`. Lateral Dirichlet conditions are imposed by eliminating the
//! tagged vertices and periodic conditions by identifying slave vertices
//! with their masters, which keeps every matrix symmetric.
//!
//! Coefficients c and σ are piecewise constant per triangle; the axial
//! velocity h is piecewise linear per vertex so that it can vanish
//! continuously at tube walls. `M_h` is integrated exactly for that
//! pairing.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{dot, CsrMat, KSolver};
use crate::mesh::{pair_periodic, BcKind, BoundarySpec, Mesh2D, SOLID};

/// Relative tolerance on ∫h (against ‖h‖_L¹) below which an uncontrolled
/// configuration is classified as balanced.
pub const TOL_BALANCE: f64 = 1e-10;

/// Piecewise-constant material coefficients per triangle.
#[derive(Debug, Clone)]
pub struct MaterialField {
    /// heat capacity × density weight, > 0
    pub c: Vec<f64>,
    /// conductivity, > 0
    pub sigma: Vec<f64>,
}

impl MaterialField {
    pub fn constant(mesh: &Mesh2D, c: f64, sigma: f64) -> Self {
        Self {
            c: vec![c; mesh.n_triangles()],
            sigma: vec![sigma; mesh.n_triangles()],
        }
    }

    /// Coefficients per subdomain label; `default` applies to labels not
    /// listed.
    pub fn per_label(mesh: &Mesh2D, default: (f64, f64), overrides: &[(i32, f64, f64)]) -> Self {
        let map: HashMap<i32, (f64, f64)> = overrides
            .iter()
            .map(|&(l, c, s)| (l, (c, s)))
            .collect();
        let mut c = Vec::with_capacity(mesh.n_triangles());
        let mut sigma = Vec::with_capacity(mesh.n_triangles());
        for t in &mesh.triangles {
            let (ct, st) = map.get(&t.label).copied().unwrap_or(default);
            c.push(ct);
            sigma.push(st);
        }
        Self { c, sigma }
    }

    pub fn validate(&self, mesh: &Mesh2D) -> Result<()> {
        if self.c.len() != mesh.n_triangles() || self.sigma.len() != mesh.n_triangles() {
            return Err(Error::Assembly(
                "material field length does not match triangle count".into(),
            ));
        }
        if self.c.iter().any(|&v| !(v > 0.0)) || self.sigma.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Assembly("c and σ must be positive".into()));
        }
        Ok(())
    }
}

/// Per-tube flow metadata of a [`VelocityField`].
#[derive(Debug, Clone, Copy)]
pub struct TubeFlow {
    pub id: i32,
    pub flow: f64,
}

/// Piecewise-linear axial velocity h (per vertex), zero on the solid
/// subdomain, plus per-tube flow metadata.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub h: Vec<f64>,
    pub tubes: Vec<TubeFlow>,
}

impl VelocityField {
    /// Zero velocity everywhere.
    pub fn still(mesh: &Mesh2D) -> Self {
        Self {
            h: vec![0.0; mesh.n_vertices()],
            tubes: Vec::new(),
        }
    }

    /// Velocity from an arbitrary nodal function (test/tool constructor;
    /// the solid-vertex invariant is the caller's responsibility here).
    pub fn from_fn(mesh: &Mesh2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            h: mesh.vertices.iter().map(|v| f(v[0], v[1])).collect(),
            tubes: Vec::new(),
        }
    }

    /// Quadrature of h over Ω (the total flow ∫ h).
    pub fn total_flow(&self, mesh: &Mesh2D) -> f64 {
        integrate_nodal(mesh, &self.h)
    }

    /// Quadrature of |h| over Ω (nodal absolute value).
    pub fn l1_norm(&self, mesh: &Mesh2D) -> f64 {
        let abs: Vec<f64> = self.h.iter().map(|v| v.abs()).collect();
        integrate_nodal(mesh, &abs)
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Discrete flow through one tube: ∫_{tube} h by P1 quadrature.
    pub fn tube_flow(&self, mesh: &Mesh2D, id: i32) -> f64 {
        integrate_nodal_label(mesh, &self.h, id)
    }

    /// Load vector w_i = ∫_{tube} h φ_i (full vertex space), used for
    /// velocity-weighted (mixed-cup) averages. Exact for h, φ_i both P1:
    /// ∫_T φ_i h = A(2h_i + h_j + h_k)/12.
    pub fn tube_weights(&self, mesh: &Mesh2D, id: i32) -> Vec<f64> {
        let mut w = vec![0.0; mesh.n_vertices()];
        for t in &mesh.triangles {
            if t.label != id {
                continue;
            }
            let a = mesh.area(t);
            let hv = [self.h[t.v[0]], self.h[t.v[1]], self.h[t.v[2]]];
            for i in 0..3 {
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                w[t.v[i]] += a * (2.0 * hv[i] + hv[j] + hv[k]) / 12.0;
            }
        }
        w
    }
}

/// P1 quadrature of a nodal field over the whole mesh.
pub fn integrate_nodal(mesh: &Mesh2D, f: &[f64]) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| mesh.area(t) * (f[t.v[0]] + f[t.v[1]] + f[t.v[2]]) / 3.0)
        .sum()
}

fn integrate_nodal_label(mesh: &Mesh2D, f: &[f64], label: i32) -> f64 {
    mesh.triangles
        .iter()
        .filter(|t| t.label == label)
        .map(|t| mesh.area(t) * (f[t.v[0]] + f[t.v[1]] + f[t.v[2]]) / 3.0)
        .sum()
}

/// Parabolic (Poiseuille) profile in each listed tube with prescribed
/// total flow: h = (2Q/πR²)(1 − |x−x₀|²/R²) inside the tube, 0 elsewhere,
/// then rescaled per tube so the discrete P1 flow equals Q exactly.
pub fn poiseuille(mesh: &Mesh2D, flows: &[(i32, f64)]) -> Result<VelocityField> {
    let labels = mesh.labels();
    let mut v = VelocityField::still(mesh);
    for &(id, q) in flows {
        if id == SOLID || !labels.contains(&id) {
            return Err(Error::Assembly(format!("unknown tube id {id}")));
        }
        // tube geometry from the labeled triangles: center and radius of
        // the polygonal disk
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut area = 0.0;
        for t in mesh.triangles.iter().filter(|t| t.label == id) {
            let a = mesh.area(t);
            let gx = (mesh.vertices[t.v[0]][0] + mesh.vertices[t.v[1]][0] + mesh.vertices[t.v[2]][0]) / 3.0;
            let gy = (mesh.vertices[t.v[0]][1] + mesh.vertices[t.v[1]][1] + mesh.vertices[t.v[2]][1]) / 3.0;
            cx += a * gx;
            cy += a * gy;
            area += a;
        }
        cx /= area;
        cy /= area;
        let mut r2: f64 = 0.0;
        let mut tube_vertices = std::collections::HashSet::new();
        for t in mesh.triangles.iter().filter(|t| t.label == id) {
            for &vi in &t.v {
                tube_vertices.insert(vi);
                let d2 =
                    (mesh.vertices[vi][0] - cx).powi(2) + (mesh.vertices[vi][1] - cy).powi(2);
                r2 = r2.max(d2);
            }
        }
        if q == 0.0 {
            v.tubes.push(TubeFlow { id, flow: 0.0 });
            continue;
        }
        let peak = 2.0 * q / (std::f64::consts::PI * r2);
        for &vi in &tube_vertices {
            let d2 = (mesh.vertices[vi][0] - cx).powi(2) + (mesh.vertices[vi][1] - cy).powi(2);
            v.h[vi] = peak * (1.0 - d2 / r2).max(0.0);
        }
        // rescale so the discrete quadrature matches Q exactly
        let q_disc = v.tube_flow(mesh, id);
        if q_disc.abs() < 1e-300 {
            return Err(Error::Assembly(format!(
                "tube {id}: discrete flow vanished (mesh too coarse?)"
            )));
        }
        let s = q / q_disc;
        for &vi in &tube_vertices {
            v.h[vi] *= s;
        }
        v.tubes.push(TubeFlow { id, flow: q });
    }
    Ok(v)
}

/// Problem class of Definition 2.1: whether constant fields are
/// controlled by the lateral conditions, and if not, the sign of the
/// total flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    ConstantsControlled,
    UnbalancedPositive,
    UnbalancedNegative,
    Balanced,
}

#[derive(Debug, Clone, Copy)]
pub struct CaseClass {
    pub kind: CaseKind,
    /// stored value of ∫ h
    pub flow: f64,
}

impl CaseClass {
    pub fn is_controlled(&self) -> bool {
        self.kind == CaseKind::ConstantsControlled
    }

    pub fn is_balanced(&self) -> bool {
        self.kind == CaseKind::Balanced
    }
}

/// Classifies from the boundary spec and the flow of `v`:
/// `ConstantsControlled` when any Dirichlet or Robin tag exists, else
/// `Balanced` when |∫h| ≤ TOL_BALANCE·‖h‖_L¹, else unbalanced by sign.
pub fn classify_case(bc: &BoundarySpec, mesh: &Mesh2D, v: &VelocityField) -> CaseClass {
    let flow = v.total_flow(mesh);
    if bc.controls_constants() {
        return CaseClass {
            kind: CaseKind::ConstantsControlled,
            flow,
        };
    }
    let l1 = v.l1_norm(mesh);
    if flow.abs() <= TOL_BALANCE * l1.max(1e-300) {
        CaseClass {
            kind: CaseKind::Balanced,
            flow,
        }
    } else if flow > 0.0 {
        CaseClass {
            kind: CaseKind::UnbalancedPositive,
            flow,
        }
    } else {
        CaseClass {
            kind: CaseKind::UnbalancedNegative,
            flow,
        }
    }
}

/// Constraint bookkeeping: periodic master/slave identification composed
/// with Dirichlet elimination.
#[derive(Debug, Clone)]
pub struct Constraints {
    /// vertex → representative vertex (union-find result over periodic pairs)
    pub rep: Vec<usize>,
    /// representative vertex → free dof (None when eliminated)
    dof_of_rep: Vec<Option<usize>>,
    /// free dof → representative vertex
    pub free_vertices: Vec<usize>,
}

impl Constraints {
    pub fn n_free(&self) -> usize {
        self.free_vertices.len()
    }

    /// Free dof carrying the given vertex, if any.
    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of_rep[self.rep[vertex]]
    }

    /// Expands a free-dof vector to a full nodal field: slaves copy their
    /// master's value, eliminated vertices get 0.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.rep.len()];
        for (v, slot) in full.iter_mut().enumerate() {
            if let Some(d) = self.dof_of_rep[self.rep[v]] {
                *slot = free[d];
            }
        }
        full
    }

    /// Samples a full nodal field at the free vertices.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_vertices.iter().map(|&v| full[v]).collect()
    }

    /// Folds a full load vector: slave rows add onto masters, eliminated
    /// rows are dropped (transpose of `expand`).
    pub fn fold_load(&self, full: &[f64]) -> Vec<f64> {
        let mut load = vec![0.0; self.n_free()];
        for (v, &fv) in full.iter().enumerate() {
            if let Some(d) = self.dof_of_rep[self.rep[v]] {
                load[d] += fv;
            }
        }
        load
    }
}

/// Assembled P1 matrices over the free degrees of freedom, plus the full
/// vertex-space mass matrices used to pair data fields (which live in L²,
/// unconstrained) against constrained fields.
pub struct FemMatrices {
    /// c-weighted mass (free dofs), symmetric positive definite
    pub m_c: CsrMat,
    /// h-weighted mass (free dofs), symmetric indefinite
    pub m_h: CsrMat,
    /// σ-weighted stiffness (free dofs)
    pub k_sigma: CsrMat,
    /// Robin boundary mass (free dofs)
    pub r_a: CsrMat,
    /// K = K_σ + R_a, the lateral operator (free dofs)
    pub k: CsrMat,
    /// unweighted mass (free dofs)
    pub m_one: CsrMat,
    /// full vertex-space masses
    pub m_c_full: CsrMat,
    pub m_h_full: CsrMat,
    pub m_one_full: CsrMat,
    pub constraints: Constraints,
    pub controls_constants: bool,
    /// ∫ c over Ω
    pub int_c: f64,
    pub area: f64,
}

impl FemMatrices {
    pub fn n_free(&self) -> usize {
        self.constraints.n_free()
    }

    /// Direct solver for K s = load (factorized once). Positive definite
    /// when the constants are controlled, grounded otherwise.
    pub fn k_solver(&self) -> Result<KSolver> {
        if self.controls_constants {
            KSolver::definite(&self.k)
        } else {
            let weights = self.m_one.row_sums();
            KSolver::grounded(&self.k, weights)
        }
    }
}

/// Assembles all matrices for the given mesh, materials and boundary
/// conditions. Periodic tags are resolved internally via
/// [`pair_periodic`].
pub fn assemble(mesh: &Mesh2D, mat: &MaterialField, bc: &BoundarySpec) -> Result<FemMatrices> {
    mat.validate(mesh)?;
    bc.validate(mesh)?;
    let pairing = pair_periodic(mesh, bc)?;

    let n = mesh.n_vertices();
    // union-find over periodic pairs
    let mut rep: Vec<usize> = (0..n).collect();
    fn find(rep: &mut Vec<usize>, mut v: usize) -> usize {
        while rep[v] != v {
            rep[v] = rep[rep[v]];
            v = rep[v];
        }
        v
    }
    for (a, b) in pairing.all_pairs() {
        let ra = find(&mut rep, a);
        let rb = find(&mut rep, b);
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            rep[hi] = lo;
        }
    }
    for v in 0..n {
        let r = find(&mut rep, v);
        rep[v] = r;
    }

    // Dirichlet elimination through representatives
    let mut dirichlet = vec![false; n];
    for e in &mesh.boundary_edges {
        if matches!(bc.kind(e.tag), Some(BcKind::Dirichlet)) {
            dirichlet[rep[e.v[0]]] = true;
            dirichlet[rep[e.v[1]]] = true;
        }
    }
    let mut dof_of_rep = vec![None; n];
    let mut free_vertices = Vec::new();
    for v in 0..n {
        if rep[v] == v && !dirichlet[v] {
            dof_of_rep[v] = Some(free_vertices.len());
            free_vertices.push(v);
        }
    }
    let constraints = Constraints {
        rep,
        dof_of_rep,
        free_vertices,
    };
    let nf = constraints.n_free();
    if nf == 0 {
        return Err(Error::Assembly("no free degrees of freedom".into()));
    }

    // element loop: triplets for both the full and the folded matrices
    let nt = mesh.n_triangles();
    let mut t_mc = Vec::with_capacity(9 * nt);
    let mut t_m1 = Vec::with_capacity(9 * nt);
    let mut f_mc = Vec::with_capacity(9 * nt);
    let mut f_m1 = Vec::with_capacity(9 * nt);
    let mut f_k = Vec::with_capacity(9 * nt);

    for (ti, t) in mesh.triangles.iter().enumerate() {
        let [i, j, k] = t.v;
        let p = [mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]];
        let a2 = mesh.double_area(t);
        let area = 0.5 * a2;
        // gradients of the barycentric functions
        let gx = [
            (p[1][1] - p[2][1]) / a2,
            (p[2][1] - p[0][1]) / a2,
            (p[0][1] - p[1][1]) / a2,
        ];
        let gy = [
            (p[2][0] - p[1][0]) / a2,
            (p[0][0] - p[2][0]) / a2,
            (p[1][0] - p[0][0]) / a2,
        ];
        let verts = [i, j, k];
        for a in 0..3 {
            for b in 0..3 {
                let mass1 = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                let mc = mat.c[ti] * mass1;
                t_m1.push((verts[a], verts[b], mass1));
                t_mc.push((verts[a], verts[b], mc));
                if let (Some(da), Some(db)) =
                    (constraints.dof(verts[a]), constraints.dof(verts[b]))
                {
                    f_m1.push((da, db, mass1));
                    f_mc.push((da, db, mc));
                    f_k.push((
                        da,
                        db,
                        mat.sigma[ti] * area * (gx[a] * gx[b] + gy[a] * gy[b]),
                    ));
                }
            }
        }
    }

    // Robin boundary mass
    let mut t_ra = Vec::new();
    let mut robin_declared = false;
    let mut robin_measure = 0.0;
    for e in &mesh.boundary_edges {
        if let Some(BcKind::Robin(acoef)) = bc.kind(e.tag) {
            robin_declared = true;
            let pa = mesh.vertices[e.v[0]];
            let pb = mesh.vertices[e.v[1]];
            let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            robin_measure += len;
            let w = acoef * len / 6.0;
            let vv = [e.v[0], e.v[1]];
            for a in 0..2 {
                for b in 0..2 {
                    if let (Some(da), Some(db)) = (constraints.dof(vv[a]), constraints.dof(vv[b]))
                    {
                        t_ra.push((da, db, w * if a == b { 2.0 } else { 1.0 }));
                    }
                }
            }
        }
    }
    if robin_declared && robin_measure <= 0.0 {
        return Err(Error::Assembly(
            "Robin condition declared on a zero-measure edge set".into(),
        ));
    }

    let m_c_full = CsrMat::from_triplets(n, n, &t_mc);
    let m_one_full = CsrMat::from_triplets(n, n, &t_m1);
    let m_c = CsrMat::from_triplets(nf, nf, &f_mc);
    let m_one = CsrMat::from_triplets(nf, nf, &f_m1);
    let k_sigma = CsrMat::from_triplets(nf, nf, &f_k);
    let r_a = CsrMat::from_triplets(nf, nf, &t_ra);
    let mut k_trips = Vec::new();
    for r in 0..nf {
        for idx in k_sigma.row_ptr[r]..k_sigma.row_ptr[r + 1] {
            k_trips.push((r, k_sigma.col_idx[idx], k_sigma.vals[idx]));
        }
        for idx in r_a.row_ptr[r]..r_a.row_ptr[r + 1] {
            k_trips.push((r, r_a.col_idx[idx], r_a.vals[idx]));
        }
    }
    let k = CsrMat::from_triplets(nf, nf, &k_trips);

    let ones_full = vec![1.0; n];
    let int_c = m_c_full.quad(&ones_full, &ones_full);
    let area = m_one_full.quad(&ones_full, &ones_full);

    Ok(FemMatrices {
        m_c,
        m_h: CsrMat::from_triplets(nf, nf, &[]),
        k_sigma,
        r_a,
        k,
        m_one,
        m_c_full,
        m_h_full: CsrMat::from_triplets(n, n, &[]),
        m_one_full,
        constraints,
        controls_constants: bc.controls_constants(),
        int_c,
        area,
    })
}

/// Installs the h-weighted mass matrices for the given velocity field
/// (exact quadrature of ∫ h φ_a φ_b with h piecewise linear).
pub fn with_velocity(mut fem: FemMatrices, mesh: &Mesh2D, v: &VelocityField) -> FemMatrices {
    let n = mesh.n_vertices();
    let nf = fem.n_free();
    let mut t_full = Vec::with_capacity(9 * mesh.n_triangles());
    let mut t_fold = Vec::with_capacity(9 * mesh.n_triangles());
    for t in &mesh.triangles {
        let verts = t.v;
        let area = mesh.area(t);
        let hv = [v.h[verts[0]], v.h[verts[1]], v.h[verts[2]]];
        for a in 0..3 {
            for b in 0..3 {
                let val = if a == b {
                    let j = (a + 1) % 3;
                    let k = (a + 2) % 3;
                    area / 30.0 * (3.0 * hv[a] + hv[j] + hv[k])
                } else {
                    let k = 3 - a - b;
                    area / 60.0 * (2.0 * hv[a] + 2.0 * hv[b] + hv[k])
                };
                t_full.push((verts[a], verts[b], val));
                if let (Some(da), Some(db)) =
                    (fem.constraints.dof(verts[a]), fem.constraints.dof(verts[b]))
                {
                    t_fold.push((da, db, val));
                }
            }
        }
    }
    fem.m_h_full = CsrMat::from_triplets(n, n, &t_full);
    fem.m_h = CsrMat::from_triplets(nf, nf, &t_fold);
    fem
}

/// One-call assembly of materials + velocity.
pub fn assemble_with_velocity(
    mesh: &Mesh2D,
    mat: &MaterialField,
    bc: &BoundarySpec,
    v: &VelocityField,
) -> Result<FemMatrices> {
    Ok(with_velocity(assemble(mesh, mat, bc)?, mesh, v))
}

/// Inverse σ-Laplacian with the lateral boundary conditions:
/// s = Δσ⁻¹ f solves div(σ ∇s) = f weakly, i.e. (K_σ + R_a) s = −F with
/// F_i = ∫ f φ_i. When the constants are not controlled the load must
/// have zero sum and the zero-mean representative is returned.
pub struct LaplaceSolver {
    solver: KSolver,
}

impl LaplaceSolver {
    pub fn new(fem: &FemMatrices) -> Result<Self> {
        Ok(Self {
            solver: fem.k_solver()?,
        })
    }

    /// Solves from a pre-integrated load vector (free dofs).
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let neg: Vec<f64> = load.iter().map(|v| -v).collect();
        self.solver.solve(&neg)
    }

    /// Solves from a nodal right-hand side on the free dofs
    /// (load = M₁ f).
    pub fn solve_nodal(&self, fem: &FemMatrices, f: &[f64]) -> Result<Vec<f64>> {
        self.solve_load(&fem.m_one.matvec(f))
    }

    pub fn inner(&self) -> &KSolver {
        &self.solver
    }
}

/// Convenience one-shot Δσ⁻¹ for a nodal f (factorizes on every call;
/// use [`LaplaceSolver`] for repeated solves).
pub fn laplace_inverse(fem: &FemMatrices, f_nodal: &[f64]) -> Result<Vec<f64>> {
    LaplaceSolver::new(fem)?.solve_nodal(fem, f_nodal)
}

/// ∫ h s quadrature on free dofs via M_h.
pub fn weighted_integral(fem: &FemMatrices, s: &[f64]) -> f64 {
    let ones = vec![1.0; fem.n_free()];
    fem.m_h.quad(&ones, s)
}

/// Removes the lumped-mass mean of a free-dof field (quotient
/// representative in the uncontrolled case).
pub fn remove_mean(fem: &FemMatrices, s: &mut [f64]) {
    let w = fem.m_one.row_sums();
    let total: f64 = w.iter().sum();
    let mean = dot(&w, s) / total;
    for v in s {
        *v -= mean;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use crate::mesh::{
        generate_square_with_tubes, generate_unit_square, BcKind, BoundarySpec, TubeSpec, TAG_BOTTOM,
        TAG_LEFT, TAG_RIGHT, TAG_TOP,
    };

    fn all_tags(kind: BcKind) -> BoundarySpec {
        BoundarySpec::new()
            .set(TAG_LEFT, kind)
            .set(TAG_RIGHT, kind)
            .set(TAG_BOTTOM, kind)
            .set(TAG_TOP, kind)
    }

    #[test]
    fn matrices_symmetric_and_definite() {
        let mesh = generate_unit_square(6);
        let mat = MaterialField::constant(&mesh, 1.3, 0.7);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Robin(2.0))).unwrap();
        assert_eq!(fem.m_c.max_asymmetry(), 0.0);
        assert_eq!(fem.k.max_asymmetry(), 0.0);
        assert_eq!(fem.r_a.max_asymmetry(), 0.0);
        let (vals, _) = sym_eigen(&fem.m_c.to_dense());
        assert!(vals[0] > 0.0, "M_c must be positive definite");
        let (kvals, _) = sym_eigen(&fem.k.to_dense());
        assert!(kvals[0] > 0.0, "K + R_a must be positive definite with Robin bc");
    }

    #[test]
    fn mass_row_sums_give_area() {
        // partition of unity: Σ_ij (M_1)_ij = area
        let mesh = generate_unit_square(5);
        let mat = MaterialField::constant(&mesh, 1.0, 1.0);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Neumann)).unwrap();
        let total: f64 = fem.m_c_full.row_sums().iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn neumann_stiffness_kills_constants() {
        let mesh = generate_unit_square(6);
        let mat = MaterialField::constant(&mesh, 1.0, 2.5);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Neumann)).unwrap();
        let ones = vec![1.0; fem.n_free()];
        let r = fem.k.matvec(&ones);
        let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12, "K·1 = {max}");
        // one-dimensional nullspace: second smallest eigenvalue positive
        let (vals, _) = sym_eigen(&fem.k.to_dense());
        assert!(vals[0].abs() < 1e-10 && vals[1] > 1e-6);
    }

    #[test]
    fn dirichlet_elimination_counts() {
        let n = 5;
        let mesh = generate_unit_square(n);
        let mat = MaterialField::constant(&mesh, 1.0, 1.0);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Dirichlet)).unwrap();
        assert_eq!(fem.n_free(), (n - 1) * (n - 1));
    }

    #[test]
    fn periodic_folding_preserves_integrals() {
        let mesh = generate_unit_square(6);
        let mat = MaterialField::constant(&mesh, 2.0, 1.0);
        let spec = BoundarySpec::new()
            .set(TAG_LEFT, BcKind::Periodic(1))
            .set(TAG_RIGHT, BcKind::Periodic(1))
            .set(TAG_BOTTOM, BcKind::Neumann)
            .set(TAG_TOP, BcKind::Neumann);
        let fem = assemble(&mesh, &mat, &spec).unwrap();
        assert_eq!(fem.n_free(), 7 * 6); // right column folded onto left
        let ones = vec![1.0; fem.n_free()];
        let total = fem.m_c.quad(&ones, &ones);
        assert!((total - 2.0).abs() < 1e-12, "∫c = {total}");
    }

    #[test]
    fn laplace_manufactured_solution_converges() {
        // full Dirichlet, σ = 1: div(∇s) = f with
        // s* = sin(πx)sin(πy), f = −2π² s*
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [12, 24] {
            let mesh = generate_unit_square(n);
            let mat = MaterialField::constant(&mesh, 1.0, 1.0);
            let fem = assemble(&mesh, &mat, &all_tags(BcKind::Dirichlet)).unwrap();
            let f: Vec<f64> = fem
                .constraints
                .free_vertices
                .iter()
                .map(|&v| {
                    let [x, y] = mesh.vertices[v];
                    -2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
                })
                .collect();
            let s = laplace_inverse(&fem, &f).unwrap();
            let exact: Vec<f64> = fem
                .constraints
                .free_vertices
                .iter()
                .map(|&v| {
                    let [x, y] = mesh.vertices[v];
                    (pi * x).sin() * (pi * y).sin()
                })
                .collect();
            let num: f64 = s
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
            errs.push(num / den);
        }
        assert!(errs[1] < 0.02, "fine-mesh error {}", errs[1]);
        assert!(
            errs[0] / errs[1] > 3.0,
            "expected O(h²) convergence, got {errs:?}"
        );
    }

    #[test]
    fn laplace_inverse_self_adjoint() {
        use rand::prelude::*;
        let mesh = generate_unit_square(7);
        let mat = MaterialField::constant(&mesh, 1.0, 1.4);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Robin(0.8))).unwrap();
        let solver = LaplaceSolver::new(&fem).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let f: Vec<f64> = (0..fem.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..fem.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sf = solver.solve_nodal(&fem, &f).unwrap();
            let sg = solver.solve_nodal(&fem, &g).unwrap();
            let lhs = fem.m_one.quad(&sf, &g);
            let rhs = fem.m_one.quad(&f, &sg);
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn laplace_rejects_unbalanced_load_when_uncontrolled() {
        let mesh = generate_unit_square(5);
        let mat = MaterialField::constant(&mesh, 1.0, 1.0);
        let fem = assemble(&mesh, &mat, &all_tags(BcKind::Neumann)).unwrap();
        let f = vec![1.0; fem.n_free()];
        assert!(laplace_inverse(&fem, &f).is_err());
    }

    #[test]
    fn poiseuille_flow_exact_after_rescale() {
        let mesh = generate_square_with_tubes(
            5.0,
            &[TubeSpec { id: 1, center: [0.0, 0.0], radius: 2.0 }],
            0.6,
            32,
        )
        .unwrap();
        let v = poiseuille(&mesh, &[(1, 10.0)]).unwrap();
        let q = v.tube_flow(&mesh, 1);
        assert!((q - 10.0).abs() < 1e-12 * 10.0, "q = {q}");
        // peak near the analytic 2Q/(πR²) = 5/π
        let peak = v.h.iter().fold(0.0f64, |m, &x| m.max(x));
        let analytic = 5.0 / std::f64::consts::PI;
        assert!(
            (peak - analytic).abs() < 0.12 * analytic,
            "peak {peak} vs {analytic}"
        );
        // h vanishes on solid vertices
        for t in mesh.triangles.iter().filter(|t| t.label == SOLID) {
            for &vi in &t.v {
                let r = (mesh.vertices[vi][0].powi(2) + mesh.vertices[vi][1].powi(2)).sqrt();
                if r > 2.0 + 1e-9 {
                    assert_eq!(v.h[vi], 0.0);
                }
            }
        }
        assert!(poiseuille(&mesh, &[(7, 1.0)]).is_err(), "unknown tube id");
    }

    #[test]
    fn counterflow_is_balanced() {
        let tubes = [
            TubeSpec { id: 1, center: [-2.0, 0.0], radius: 1.0 },
            TubeSpec { id: 2, center: [2.0, 0.0], radius: 1.0 },
        ];
        let mesh = generate_square_with_tubes(5.0, &tubes, 0.5, 24).unwrap();
        let v = poiseuille(&mesh, &[(1, 1.0), (2, -1.0)]).unwrap();
        assert!(v.total_flow(&mesh).abs() < 1e-12);
        let case = classify_case(&all_tags(BcKind::Neumann), &mesh, &v);
        assert_eq!(case.kind, CaseKind::Balanced);
        let case2 = classify_case(&all_tags(BcKind::Dirichlet), &mesh, &v);
        assert_eq!(case2.kind, CaseKind::ConstantsControlled);
        let v3 = poiseuille(&mesh, &[(1, 10.0)]).unwrap();
        let case3 = classify_case(&all_tags(BcKind::Neumann), &mesh, &v3);
        assert_eq!(case3.kind, CaseKind::UnbalancedPositive);
    }

    #[test]
    fn constant_velocity_total_flow_is_area() {
        let mesh = generate_unit_square(4);
        let v = VelocityField::from_fn(&mesh, |_, _| 1.0);
        assert!((v.total_flow(&mesh) - 1.0).abs() < 1e-13);
    }
}
