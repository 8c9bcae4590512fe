//! Galerkin discretization on a structured quadrilateral mesh.
//!
//! Plane strain, bilinear displacements with one-point strain quadrature
//! at the cell centers, nodal damage, cell-wise constant deviatoric
//! plastic strain. The space carries every matrix and norm used by the
//! energies, slopes and contact potentials.
//!
//! One-point quadrature admits hourglass displacement modes on meshes
//! with a single row or column of cells away from the Dirichlet side; the
//! viscous stiffness is factorized at build time and rank deficiency is
//! reported as an error rather than silently regularized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::material::{assemble_am, MaterialModel};
use crate::tensor::{Dev2, Sym2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirichletKind {
    Left,
    LeftRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Structured nx x ny quad mesh on [0, lx] x [0, ly].
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Mesh {
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let i = n % (self.nx + 1);
        let j = n / (self.nx + 1);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }
    /// Corner nodes of a cell in the order bl, br, tr, tl.
    pub fn cell_nodes(&self, c: usize) -> [usize; 4] {
        let i = c % self.nx;
        let j = c / self.nx;
        [
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        ]
    }
    pub fn cell_center(&self, c: usize) -> (f64, f64) {
        let i = c % self.nx;
        let j = c / self.nx;
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Nodes on a given boundary side.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::Left => (0..=self.ny).map(|j| self.node(0, j)).collect(),
            Side::Right => (0..=self.ny).map(|j| self.node(self.nx, j)).collect(),
            Side::Bottom => (0..=self.nx).map(|i| self.node(i, 0)).collect(),
            Side::Top => (0..=self.nx).map(|i| self.node(i, self.ny)).collect(),
        }
    }
}

/// Sign stencils of the bilinear shape-function gradients at the cell
/// center, corner order bl, br, tr, tl.
const SX: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const SY: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Finite-dimensional realization of the state space: displacement,
/// damage and plastic-strain components with their operators and norms.
pub struct DiscreteSpace {
    pub mesh: Mesh,
    pub dirichlet: DirichletKind,
    pub dirichlet_nodes: Vec<usize>,
    /// Free displacement dofs (global dof indices).
    pub free_dofs: Vec<usize>,
    /// Map global dof -> position in `free_dofs`, or `usize::MAX`.
    free_index: Vec<usize>,
    /// Lumped nodal masses (scalar fields).
    pub mass_z: DVector<f64>,
    /// Viscous stiffness on free dofs and its factorization.
    pub k_visc: DMatrix<f64>,
    k_visc_chol: Cholesky<f64, Dyn>,
    /// Nonlocal damage matrix (all nodes).
    pub a_m: DMatrix<f64>,
    /// Per-cell gradient operator for scalar nodal fields (2C x N).
    pub grad_op: DMatrix<f64>,
    pub material: MaterialModel,
}

impl DiscreteSpace {
    pub fn build(
        mesh: Mesh,
        dirichlet: DirichletKind,
        material: MaterialModel,
    ) -> Result<Self, CoreError> {
        material.validate()?;
        let n_nodes = mesh.n_nodes();
        let mut dirichlet_nodes: Vec<usize> = mesh.side_nodes(Side::Left);
        if dirichlet == DirichletKind::LeftRight {
            dirichlet_nodes.extend(mesh.side_nodes(Side::Right));
        }
        dirichlet_nodes.sort_unstable();
        dirichlet_nodes.dedup();

        let mut is_fixed = vec![false; 2 * n_nodes];
        for &n in &dirichlet_nodes {
            is_fixed[2 * n] = true;
            is_fixed[2 * n + 1] = true;
        }
        let free_dofs: Vec<usize> = (0..2 * n_nodes).filter(|&d| !is_fixed[d]).collect();
        let mut free_index = vec![usize::MAX; 2 * n_nodes];
        for (k, &d) in free_dofs.iter().enumerate() {
            free_index[d] = k;
        }
        if free_dofs.is_empty() {
            return Err(CoreError::SingularViscousStiffness { nx: mesh.nx, ny: mesh.ny });
        }

        // lumped scalar masses
        let area = mesh.cell_area();
        let mut mass_z = DVector::zeros(n_nodes);
        for c in 0..mesh.n_cells() {
            for &n in &mesh.cell_nodes(c) {
                mass_z[n] += 0.25 * area;
            }
        }

        // viscous stiffness on free dofs
        let k_visc = assemble_strain_form(&mesh, &free_index, free_dofs.len(), |_c| {
            material.viscosity.delta
        });
        let k_visc_chol = Cholesky::new(k_visc.clone())
            .ok_or(CoreError::SingularViscousStiffness { nx: mesh.nx, ny: mesh.ny })?;

        // per-cell scalar gradient operator and the nonlocal matrix
        let (gx, gy) = center_gradients(&mesh);
        let mut grad_op = DMatrix::zeros(2 * mesh.n_cells(), n_nodes);
        for c in 0..mesh.n_cells() {
            for (a, &n) in mesh.cell_nodes(c).iter().enumerate() {
                grad_op[(2 * c, n)] = gx[a];
                grad_op[(2 * c + 1, n)] = gy[a];
            }
        }
        let centers: Vec<(f64, f64)> = (0..mesh.n_cells()).map(|c| mesh.cell_center(c)).collect();
        let areas = vec![area; mesh.n_cells()];
        let a_m = assemble_am(&centers, &areas, &grad_op, material.m_exp)?;

        Ok(DiscreteSpace {
            mesh,
            dirichlet,
            dirichlet_nodes,
            free_dofs,
            free_index,
            mass_z,
            k_visc,
            k_visc_chol,
            a_m,
            grad_op,
            material,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }
    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }
    pub fn cell_area(&self) -> f64 {
        self.mesh.cell_area()
    }

    /// Cell-center strains of a full-length displacement vector.
    pub fn strains(&self, u: &DVector<f64>) -> Vec<Sym2> {
        let (gx, gy) = center_gradients(&self.mesh);
        let mut out = Vec::with_capacity(self.n_cells());
        for c in 0..self.n_cells() {
            let nodes = self.mesh.cell_nodes(c);
            let mut e = Sym2::ZERO;
            for (a, &n) in nodes.iter().enumerate() {
                let ux = u[2 * n];
                let uy = u[2 * n + 1];
                e.xx += gx[a] * ux;
                e.yy += gy[a] * uy;
                e.xy += 0.5 * (gy[a] * ux + gx[a] * uy);
            }
            out.push(e);
        }
        out
    }

    /// Adjoint of the strain operator with area weights:
    /// returns the full-length dual vector `v -> sum_c area sigma_c : (Bv)_c`.
    pub fn strain_adjoint(&self, sigma: &[Sym2]) -> DVector<f64> {
        let (gx, gy) = center_gradients(&self.mesh);
        let area = self.cell_area();
        let mut out = DVector::zeros(2 * self.n_nodes());
        for (c, s) in sigma.iter().enumerate() {
            let nodes = self.mesh.cell_nodes(c);
            for (a, &n) in nodes.iter().enumerate() {
                out[2 * n] += area * (s.xx * gx[a] + s.xy * gy[a]);
                out[2 * n + 1] += area * (s.yy * gy[a] + s.xy * gx[a]);
            }
        }
        out
    }

    /// Cell average of a nodal scalar field.
    pub fn cell_average(&self, z: &DVector<f64>, c: usize) -> f64 {
        let nodes = self.mesh.cell_nodes(c);
        0.25 * nodes.iter().map(|&n| z[n]).sum::<f64>()
    }

    pub fn restrict_free(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_free(), self.free_dofs.iter().map(|&d| full[d]))
    }

    pub fn scatter_free(&self, free: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(2 * self.n_nodes());
        for (k, &d) in self.free_dofs.iter().enumerate() {
            full[d] = free[k];
        }
        full
    }

    pub fn free_position(&self, dof: usize) -> Option<usize> {
        let k = self.free_index[dof];
        (k != usize::MAX).then_some(k)
    }

    /// Elastic stiffness on free dofs for a given damage field.
    pub fn elastic_stiffness(&self, z: &DVector<f64>) -> DMatrix<f64> {
        assemble_strain_form(&self.mesh, &self.free_index, self.n_free(), |c| {
            self.material.elastic.factor(self.cell_average(z, c))
        })
    }

    pub fn solve_k_visc(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.k_visc_chol.solve(rhs)
    }

    // ----- norms -----

    /// Viscosity-weighted H1 seminorm of a full-length displacement field.
    pub fn norm_h1d(&self, u: &DVector<f64>) -> f64 {
        let area = self.cell_area();
        let delta = self.material.viscosity.delta;
        self.strains(u)
            .iter()
            .map(|e| area * delta * e.inner(e))
            .sum::<f64>()
            .sqrt()
    }

    /// Dual norm of a free-dof dual vector.
    pub fn norm_h1d_dual(&self, eta_free: &DVector<f64>) -> f64 {
        self.k_visc_chol.solve(eta_free).dot(eta_free).max(0.0).sqrt()
    }

    /// Mass-weighted L2 norm of a nodal scalar field.
    pub fn norm_l2_z(&self, z: &DVector<f64>) -> f64 {
        z.iter()
            .zip(self.mass_z.iter())
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Nonlocal Sobolev norm of a nodal scalar field.
    pub fn norm_hm(&self, z: &DVector<f64>) -> f64 {
        let l2 = z
            .iter()
            .zip(self.mass_z.iter())
            .map(|(v, m)| m * v * v)
            .sum::<f64>();
        (l2 + (&self.a_m * z).dot(z)).max(0.0).sqrt()
    }

    /// Area-weighted L2 norm of a per-cell deviatoric field.
    pub fn norm_l2_p(&self, p: &[Dev2]) -> f64 {
        let area = self.cell_area();
        p.iter().map(|q| area * q.inner(q)).sum::<f64>().sqrt()
    }

    /// Area-weighted L2 inner product of per-cell deviatoric fields.
    pub fn inner_l2_p(&self, p: &[Dev2], q: &[Dev2]) -> f64 {
        let area = self.cell_area();
        p.iter().zip(q).map(|(a, b)| area * a.inner(b)).sum()
    }
}

fn center_gradients(mesh: &Mesh) -> ([f64; 4], [f64; 4]) {
    let hx = mesh.hx();
    let hy = mesh.hy();
    let mut gx = [0.0; 4];
    let mut gy = [0.0; 4];
    for a in 0..4 {
        gx[a] = SX[a] / (2.0 * hx);
        gy[a] = SY[a] / (2.0 * hy);
    }
    (gx, gy)
}

/// Assembles `sum_c area coeff(c) E(u) : E(v)` on the free dofs.
fn assemble_strain_form(
    mesh: &Mesh,
    free_index: &[usize],
    n_free: usize,
    coeff: impl Fn(usize) -> f64,
) -> DMatrix<f64> {
    let (gx, gy) = center_gradients(mesh);
    let area = mesh.cell_area();
    // basis strains: dof (a, comp) -> Sym2
    let mut basis = [[Sym2::ZERO; 2]; 4];
    for a in 0..4 {
        basis[a][0] = Sym2 { xx: gx[a], yy: 0.0, xy: 0.5 * gy[a] };
        basis[a][1] = Sym2 { xx: 0.0, yy: gy[a], xy: 0.5 * gx[a] };
    }
    let mut k = DMatrix::zeros(n_free, n_free);
    for c in 0..mesh.n_cells() {
        let w = area * coeff(c);
        let nodes = mesh.cell_nodes(c);
        for (a, &na) in nodes.iter().enumerate() {
            for ca in 0..2 {
                let ia = free_index[2 * na + ca];
                if ia == usize::MAX {
                    continue;
                }
                for (b, &nb) in nodes.iter().enumerate() {
                    for cb in 0..2 {
                        let ib = free_index[2 * nb + cb];
                        if ib == usize::MAX {
                            continue;
                        }
                        k[(ia, ib)] += w * basis[a][ca].inner(&basis[b][cb]);
                    }
                }
            }
        }
    }
    k
}

/// Triple of coefficient vectors; the elastic strain and stress are
/// derived quantities, so kinematic admissibility holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Full-length displacement vector, zero at Dirichlet dofs.
    pub u: DVector<f64>,
    /// Nodal damage.
    pub z: DVector<f64>,
    /// Per-cell deviatoric plastic strain.
    pub p: Vec<Dev2>,
}

impl State {
    pub fn zeros(space: &DiscreteSpace, z0: f64) -> State {
        State {
            u: DVector::zeros(2 * space.n_nodes()),
            z: DVector::from_element(space.n_nodes(), z0),
            p: vec![Dev2::ZERO; space.n_cells()],
        }
    }

    /// Elastic strain `e = E(u + w(t)) - p` per cell.
    pub fn elastic_strain(
        &self,
        space: &DiscreteSpace,
        loading: &LoadingProgram,
        t: f64,
    ) -> Vec<Sym2> {
        let total = &self.u + loading.w_profile.value(t) * &loading.w0;
        let mut e = space.strains(&total);
        for (ec, pc) in e.iter_mut().zip(&self.p) {
            *ec = *ec - *pc;
        }
        e
    }

    /// Stress `sigma = C(z) e` per cell.
    pub fn stress(&self, space: &DiscreteSpace, loading: &LoadingProgram, t: f64) -> Vec<Sym2> {
        let mut s = self.elastic_strain(space, loading, t);
        for (c, sc) in s.iter_mut().enumerate() {
            let zc = space.cell_average(&self.z, c);
            *sc = space.material.elastic.apply(zc, sc);
        }
        s
    }

    /// Flat coefficient view (free u dofs, z, p).
    pub fn to_flat(&self, space: &DiscreteSpace) -> DVector<f64> {
        let nf = space.n_free();
        let nn = space.n_nodes();
        let mut v = DVector::zeros(nf + nn + 2 * self.p.len());
        for (k, &d) in space.free_dofs.iter().enumerate() {
            v[k] = self.u[d];
        }
        for i in 0..nn {
            v[nf + i] = self.z[i];
        }
        for (c, pc) in self.p.iter().enumerate() {
            v[nf + nn + 2 * c] = pc.d;
            v[nf + nn + 2 * c + 1] = pc.m;
        }
        v
    }

    pub fn from_flat(space: &DiscreteSpace, v: &DVector<f64>) -> State {
        let nf = space.n_free();
        let nn = space.n_nodes();
        let nc = space.n_cells();
        assert_eq!(v.len(), nf + nn + 2 * nc);
        let mut u = DVector::zeros(2 * nn);
        for (k, &d) in space.free_dofs.iter().enumerate() {
            u[d] = v[k];
        }
        let z = DVector::from_iterator(nn, (0..nn).map(|i| v[nf + i]));
        let p = (0..nc)
            .map(|c| Dev2 { d: v[nf + nn + 2 * c], m: v[nf + nn + 2 * c + 1] })
            .collect();
        State { u, z, p }
    }
}

/// Smooth scalar loading profile `value(t) = p0 + p1 * phi(t / t_end)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub kind: ProfileKind,
    pub p0: f64,
    pub p1: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Linear,
    Smoothstep,
}

impl Profile {
    pub fn constant(v: f64, t_end: f64) -> Profile {
        Profile { kind: ProfileKind::Linear, p0: v, p1: 0.0, t_end }
    }

    pub fn value(&self, t: f64) -> f64 {
        let x = (t / self.t_end).clamp(0.0, 1.0);
        let phi = match self.kind {
            ProfileKind::Linear => x,
            ProfileKind::Smoothstep => x * x * (3.0 - 2.0 * x),
        };
        self.p0 + self.p1 * phi
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let x = (t / self.t_end).clamp(0.0, 1.0);
        let dphi = match self.kind {
            ProfileKind::Linear => 1.0,
            ProfileKind::Smoothstep => 6.0 * x * (1.0 - x),
        };
        self.p1 * dphi / self.t_end
    }
}

/// External loading: an equilibrated stress field driving the total load,
/// a Dirichlet lift, and optional body/traction pieces for tests.
///
/// The total load is built from the safe-load stress, so discrete
/// equilibrium `B^T (area rho(t)) = F_rho(t)` holds identically.
#[derive(Debug, Clone)]
pub struct LoadingProgram {
    /// Per-cell safe-load stress at unit amplitude.
    pub rho0: Vec<Sym2>,
    pub rho_profile: Profile,
    /// Dirichlet lift at unit amplitude (full-length nodal field).
    pub w0: DVector<f64>,
    pub w_profile: Profile,
    /// Per-node body force density at unit amplitude (shares `rho_profile`).
    pub body0: Option<DVector<f64>>,
    /// Uniform tractions per side at unit amplitude (share `rho_profile`).
    pub tractions: Vec<(Side, [f64; 2])>,
}

impl LoadingProgram {
    pub fn zero(space: &DiscreteSpace, t_end: f64) -> LoadingProgram {
        LoadingProgram {
            rho0: vec![Sym2::ZERO; space.n_cells()],
            rho_profile: Profile::constant(0.0, t_end),
            w0: DVector::zeros(2 * space.n_nodes()),
            w_profile: Profile::constant(0.0, t_end),
            body0: None,
            tractions: Vec::new(),
        }
    }

    /// Safe-load stress field at time `t`.
    pub fn rho(&self, t: f64) -> Vec<Sym2> {
        let a = self.rho_profile.value(t);
        self.rho0.iter().map(|r| a * *r).collect()
    }

    /// Total load at unit amplitude (full-length dual vector).
    fn load_shape(&self, space: &DiscreteSpace) -> DVector<f64> {
        let mut f = space.strain_adjoint(&self.rho0);
        if let Some(body) = &self.body0 {
            for n in 0..space.n_nodes() {
                let m = space.mass_z[n];
                f[2 * n] += m * body[2 * n];
                f[2 * n + 1] += m * body[2 * n + 1];
            }
        }
        for &(side, g) in &self.tractions {
            let nodes = space.mesh.side_nodes(side);
            let h = match side {
                Side::Left | Side::Right => space.mesh.hy(),
                Side::Bottom | Side::Top => space.mesh.hx(),
            };
            // trapezoidal edge quadrature: interior nodes see two edges
            for (k, &n) in nodes.iter().enumerate() {
                let w = if k == 0 || k + 1 == nodes.len() { 0.5 * h } else { h };
                f[2 * n] += w * g[0];
                f[2 * n + 1] += w * g[1];
            }
        }
        f
    }

    /// Total load `F(t)` as a full-length dual vector.
    pub fn total_load(&self, space: &DiscreteSpace, t: f64) -> DVector<f64> {
        self.rho_profile.value(t) * self.load_shape(space)
    }

    /// `dF/dt`.
    pub fn total_load_rate(&self, space: &DiscreteSpace, t: f64) -> DVector<f64> {
        self.rho_profile.deriv(t) * self.load_shape(space)
    }

    pub fn w(&self, t: f64) -> DVector<f64> {
        self.w_profile.value(t) * &self.w0
    }

    pub fn w_rate(&self, t: f64) -> DVector<f64> {
        self.w_profile.deriv(t) * &self.w0
    }

    /// Smallest cell-wise safe-load margin `r_bar - max_t |rho_D(t)|`.
    pub fn safe_load_margin(&self, space: &DiscreteSpace) -> f64 {
        let amp = self.rho_profile.value(0.0).abs().max(self.rho_profile.value(self.rho_profile.t_end).abs());
        let max_dev = self
            .rho0
            .iter()
            .map(|r| r.dev().norm())
            .fold(0.0f64, f64::max);
        space.material.constraint.r_bar - amp * max_dev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space_4x4() -> DiscreteSpace {
        config::reference_config().build_space().unwrap()
    }

    #[test]
    fn strain_annihilates_rigid_translations() {
        let s = space_4x4();
        let mut u = DVector::zeros(2 * s.n_nodes());
        for n in 0..s.n_nodes() {
            u[2 * n] = 0.7;
            u[2 * n + 1] = -1.3;
        }
        for e in s.strains(&u) {
            assert!(e.norm() < 1e-14);
        }
    }

    #[test]
    fn strain_of_linear_field_is_exact() {
        let s = space_4x4();
        // u = (a x + b y, c x + d y) has constant strain
        let (a, b, c, d) = (0.3, -0.2, 0.5, 0.9);
        let mut u = DVector::zeros(2 * s.n_nodes());
        for n in 0..s.n_nodes() {
            let (x, y) = s.mesh.node_coords(n);
            u[2 * n] = a * x + b * y;
            u[2 * n + 1] = c * x + d * y;
        }
        for e in s.strains(&u) {
            assert!((e.xx - a).abs() < 1e-13);
            assert!((e.yy - d).abs() < 1e-13);
            assert!((e.xy - 0.5 * (b + c)).abs() < 1e-13);
        }
    }

    #[test]
    fn k_visc_spd_on_small_meshes() {
        for (nx, ny) in [(1, 2), (2, 2), (4, 4), (3, 5)] {
            let cfg = config::reference_config();
            let mesh = Mesh { nx, ny, lx: 1.0, ly: 1.0 };
            let space = DiscreteSpace::build(mesh, DirichletKind::Left, cfg.material_model());
            assert!(space.is_ok(), "nx = {nx}, ny = {ny}");
        }
        // two cells between clamped edges: the tiny-instance layout
        let cfg = config::reference_config();
        let mesh = Mesh { nx: 2, ny: 1, lx: 2.0, ly: 1.0 };
        let space = DiscreteSpace::build(mesh, DirichletKind::LeftRight, cfg.material_model());
        assert!(space.is_ok());
    }

    #[test]
    fn hourglass_mesh_rejected() {
        let cfg = config::reference_config();
        let mesh = Mesh { nx: 2, ny: 1, lx: 1.0, ly: 1.0 };
        let res = DiscreteSpace::build(mesh, DirichletKind::Left, cfg.material_model());
        assert!(matches!(res, Err(CoreError::SingularViscousStiffness { .. })));
    }

    #[test]
    fn dual_norm_duality_identity() {
        let s = space_4x4();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u_free =
            DVector::from_iterator(s.n_free(), (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)));
        let eta = &s.k_visc * &u_free;
        let primal = s.norm_h1d(&s.scatter_free(&u_free));
        let dual = s.norm_h1d_dual(&eta);
        assert!((primal - dual).abs() < 1e-10 * primal.max(1.0));
    }

    #[test]
    fn dual_norm_cauchy_schwarz() {
        let s = space_4x4();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let eta = DVector::from_iterator(
                s.n_free(),
                (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)),
            );
            let v = DVector::from_iterator(
                s.n_free(),
                (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)),
            );
            let lhs = eta.dot(&v);
            let rhs = s.norm_h1d_dual(&eta) * s.norm_h1d(&s.scatter_free(&v));
            assert!(lhs <= rhs + 1e-10);
        }
        // equality for v proportional to K^{-1} eta
        let eta =
            DVector::from_iterator(s.n_free(), (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)));
        let v = s.solve_k_visc(&eta);
        let lhs = eta.dot(&v);
        let rhs = s.norm_h1d_dual(&eta) * s.norm_h1d(&s.scatter_free(&v));
        assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn zero_vector_has_zero_norms() {
        let s = space_4x4();
        let z = DVector::zeros(s.n_nodes());
        let u = DVector::zeros(2 * s.n_nodes());
        assert_eq!(s.norm_l2_z(&z), 0.0);
        assert_eq!(s.norm_hm(&z), 0.0);
        assert_eq!(s.norm_h1d(&u), 0.0);
        assert_eq!(s.norm_l2_p(&vec![Dev2::ZERO; s.n_cells()]), 0.0);
    }

    #[test]
    fn nonlocal_matrix_kills_constants_and_is_symmetric() {
        let s = space_4x4();
        let ones = DVector::from_element(s.n_nodes(), 1.0);
        assert!((&s.a_m * &ones).amax() < 1e-12);
        assert!((&s.a_m - s.a_m.transpose()).amax() == 0.0);
        // PSD on random vectors
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z = DVector::from_iterator(
                s.n_nodes(),
                (0..s.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)),
            );
            assert!((&s.a_m * &z).dot(&z) >= -1e-12);
        }
    }

    #[test]
    fn nonlocal_pair_quadrature_matches_hand_value() {
        // two-cell mesh: exactly one cell pair in the double sum
        let cfg = config::tiny_config();
        let space = cfg.build_space().unwrap();
        assert_eq!(space.n_cells(), 2);
        let mesh = &space.mesh;
        let m = space.material.m_exp;
        let d = mesh.hx(); // center distance of the horizontal pair
        let area = mesh.cell_area();
        // linear field: gradients agree in both cells, so the value is 0
        let z = DVector::from_iterator(
            space.n_nodes(),
            (0..space.n_nodes()).map(|n| mesh.node_coords(n).1),
        );
        assert!((&space.a_m * &z).dot(&z).abs() < 1e-14);
        // a nodal bump has different gradients in the two cells
        let mut z2 = DVector::zeros(space.n_nodes());
        z2[mesh.node(0, 1)] = 1.0;
        let grad = &space.grad_op * &z2;
        let dgx = grad[0] - grad[2];
        let dgy = grad[1] - grad[3];
        let expected = 2.0 * area * area * (dgx * dgx + dgy * dgy) / d.powf(2.0 + 2.0 * (m - 1.0));
        let got = (&space.a_m * &z2).dot(&z2);
        assert!((got - expected).abs() < 1e-13, "got {got}, expected {expected}");
        assert!(got > 0.0);
    }

    #[test]
    fn safe_load_is_discretely_equilibrated() {
        let cfg = config::reference_config();
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        for &t in &[0.0, 0.37, 1.0] {
            let f = loading.total_load(&space, t);
            let bt = space.strain_adjoint(&loading.rho(t));
            assert!((f - bt).amax() < 1e-13);
        }
        assert!(loading.safe_load_margin(&space) > 0.0);
    }

    #[test]
    fn traction_loads_sum_to_resultant() {
        let cfg = config::reference_config();
        let space = cfg.build_space().unwrap();
        let mut loading = LoadingProgram::zero(&space, 1.0);
        loading.rho_profile = Profile::constant(1.0, 1.0);
        loading.tractions.push((Side::Right, [2.0, -1.0]));
        let f = loading.total_load(&space, 0.5);
        let mut sum = [0.0, 0.0];
        for n in 0..space.n_nodes() {
            sum[0] += f[2 * n];
            sum[1] += f[2 * n + 1];
        }
        // |Gamma_Neu| = ly = 1
        assert!((sum[0] - 2.0).abs() < 1e-13);
        assert!((sum[1] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn zero_loading_gives_zero_load() {
        let s = space_4x4();
        let loading = LoadingProgram::zero(&s, 1.0);
        assert_eq!(loading.total_load(&s, 0.5).amax(), 0.0);
    }

    #[test]
    fn state_flat_roundtrip() {
        let s = space_4x4();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut st = State::zeros(&s, 0.9);
        for &d in &s.free_dofs {
            st.u[d] = rng.gen_range(-1.0..1.0);
        }
        for i in 0..s.n_nodes() {
            st.z[i] = rng.gen_range(0.3..1.0);
        }
        for p in st.p.iter_mut() {
            *p = Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) };
        }
        let flat = st.to_flat(&s);
        let back = State::from_flat(&s, &flat);
        assert_eq!(st, back);
    }
}
