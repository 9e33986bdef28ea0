//! IMEX additive Runge–Kutta time stepping.
//!
//! The semidiscrete system `u' = -f_h(u) + Pi s(t) + eps A_h(u)` is split into
//! an explicit part (convection and source) and an implicit part (diffusion).

use crate::error::{Error, Result};
use crate::mesh::{l2_project, CartesianMesh, DgField, TensorBasis};
use crate::operators::{solve_shifted, CsrMatrix, DgOperators, PenaltyConfig};
use crate::problems::ProblemDefinition;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pair of explicit/implicit Butcher tableaux sharing the abscissae.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherPair {
    pub name: &'static str,
    pub order: usize,
    /// Row-major `s x s`, strictly lower triangular.
    pub a_exp: Vec<f64>,
    /// Row-major `s x s`, lower triangular.
    pub a_imp: Vec<f64>,
    pub b_exp: Vec<f64>,
    pub b_imp: Vec<f64>,
    pub c: Vec<f64>,
}

fn r(n: i64, d: i64) -> f64 {
    n as f64 / d as f64
}

fn dense(s: usize, entries: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut a = vec![0.0; s * s];
    for &(i, j, v) in entries {
        a[i * s + j] = v;
    }
    a
}

impl ButcherPair {
    pub fn stages(&self) -> usize {
        self.c.len()
    }

    pub fn ae(&self, i: usize, j: usize) -> f64 {
        self.a_exp[i * self.stages() + j]
    }

    pub fn ai(&self, i: usize, j: usize) -> f64 {
        self.a_imp[i * self.stages() + j]
    }

    /// ARK3(2)4L[2]SA of Kennedy and Carpenter.
    pub fn ark3() -> Self {
        let g = r(1767732205903, 4055673282236);
        let b = vec![
            r(1471266399579, 7840856788654),
            r(-4482444167858, 7529755066697),
            r(11266239266428, 11593286722821),
            g,
        ];
        let a_exp = dense(
            4,
            &[
                (1, 0, r(1767732205903, 2027836641118)),
                (2, 0, r(5535828885825, 10492691773637)),
                (2, 1, r(788022342437, 10882634858940)),
                (3, 0, r(6485989280629, 16251701735622)),
                (3, 1, r(-4246266847089, 9704473918619)),
                (3, 2, r(10755448449292, 10357097424841)),
            ],
        );
        let mut imp = vec![
            (1, 0, g),
            (1, 1, g),
            (2, 0, r(2746238789719, 10658868560708)),
            (2, 1, r(-640167445237, 6845629431997)),
            (2, 2, g),
        ];
        for (j, &bj) in b.iter().enumerate() {
            imp.push((3, j, bj));
        }
        Self {
            name: "ARK3(2)4L[2]SA",
            order: 3,
            a_exp,
            a_imp: dense(4, &imp),
            b_exp: b.clone(),
            b_imp: b,
            c: vec![0.0, 2.0 * g, 0.6, 1.0],
        }
    }

    /// ARK5(4)8L[2]SA of Kennedy and Carpenter.
    pub fn ark5() -> Self {
        let g = r(41, 200);
        let b = vec![
            r(-872700587467, 9133579230613),
            0.0,
            0.0,
            r(22348218063261, 9555858737531),
            r(-1143369518992, 8141816002931),
            r(-39379526789629, 19018526304540),
            r(32727382324388, 42900044865799),
            g,
        ];
        let a_exp = dense(
            8,
            &[
                (1, 0, r(41, 100)),
                (2, 0, r(367902744464, 2072280473677)),
                (2, 1, r(677623207551, 8224143866563)),
                (3, 0, r(1268023523408, 10340822734521)),
                (3, 2, r(1029933939417, 13636558850479)),
                (4, 0, r(14463281900351, 6315353703477)),
                (4, 2, r(66114435211212, 5879490589093)),
                (4, 3, r(-54053170152839, 4284798021562)),
                (5, 0, r(14090043504691, 34967701212078)),
                (5, 2, r(15191511035443, 11219624916014)),
                (5, 3, r(-18461159152457, 12425892160975)),
                (5, 4, r(-281667163811, 9011619295870)),
                (6, 0, r(19230459214898, 13134317526959)),
                (6, 2, r(21275331358303, 2942455364971)),
                (6, 3, r(-38145345988419, 4862620318723)),
                (6, 4, r(-1, 8)),
                (6, 5, r(-1, 8)),
                (7, 0, r(-19977161125411, 11928030595625)),
                (7, 2, r(-40795976796054, 6384907823539)),
                (7, 3, r(177454434618887, 12078138498510)),
                (7, 4, r(782672205425, 8267701900261)),
                (7, 5, r(-69563011059811, 9646580694205)),
                (7, 6, r(7356628210526, 4942186776405)),
            ],
        );
        let mut imp = vec![
            (1, 0, g),
            (2, 0, r(41, 400)),
            (2, 1, r(-567603406766, 11931857230679)),
            (3, 0, r(683785636431, 9252920307686)),
            (3, 2, r(-110385047103, 1367015193373)),
            (4, 0, r(3016520224154, 10081342136671)),
            (4, 2, r(30586259806659, 12414158314087)),
            (4, 3, r(-22760509404356, 11113319521817)),
            (5, 0, r(218866479029, 1489978393911)),
            (5, 2, r(638256894668, 5436446318841)),
            (5, 3, r(-1179710474555, 5321154724896)),
            (5, 4, r(-60928119172, 8023461067671)),
            (6, 0, r(1020004230633, 5715676835656)),
            (6, 2, r(25762820946817, 25263940353407)),
            (6, 3, r(-2161375909145, 9755907335909)),
            (6, 4, r(-211217309593, 5846859502534)),
            (6, 5, r(-4269925059573, 7827059040749)),
        ];
        for i in 1..8 {
            imp.push((i, i, g));
        }
        for (j, &bj) in b.iter().enumerate().take(7) {
            imp.push((7, j, bj));
        }
        Self {
            name: "ARK5(4)8L[2]SA",
            order: 5,
            a_exp,
            a_imp: dense(8, &imp),
            b_exp: b.clone(),
            b_imp: b,
            c: vec![
                0.0,
                r(41, 100),
                r(2935347310677, 11292855782101),
                r(1426016391358, 7196633302097),
                r(92, 100),
                r(24, 100),
                r(3, 5),
                1.0,
            ],
        }
    }

    /// Tableau used with polynomial degree `q`.
    pub fn for_degree(q: usize) -> Result<Self> {
        match q {
            1 => Ok(Self::ark3()),
            2 => Ok(Self::ark5()),
            _ => Err(Error::Config(format!("no shipped tableau for q = {q}"))),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ARK3(2)4L[2]SA" | "ark3" => Ok(Self::ark3()),
            "ARK5(4)8L[2]SA" | "ark5" => Ok(Self::ark5()),
            other => Err(Error::Config(format!("unknown tableau '{other}'"))),
        }
    }
}

/// Split right-hand side `u' = E(t, u) + I(u)` with a linear implicit part.
pub trait ImexSystem {
    fn len(&self) -> usize;
    fn explicit_rhs(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()>;
    /// `false` when the implicit part vanishes identically.
    fn has_implicit(&self) -> bool;
    fn implicit_rhs(&mut self, u: &[f64], out: &mut [f64]) -> Result<()>;
    /// Solve `(I - coef I) x = rhs`.
    fn solve_implicit(&mut self, coef: f64, rhs: &[f64], x: &mut [f64]) -> Result<()>;
}

/// One IMEX step `u^n -> u^{n+1}` of size `tau`.
pub fn imex_step<S: ImexSystem + ?Sized>(
    system: &mut S,
    tab: &ButcherPair,
    t: f64,
    tau: f64,
    u: &[f64],
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let s = tab.stages();
    let n = u.len();
    let implicit = system.has_implicit();
    let mut e_stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut i_stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut rhs = vec![0.0; n];
    for i in 0..s {
        rhs.copy_from_slice(u);
        for j in 0..i {
            let ae = tau * tab.ae(i, j);
            if ae != 0.0 {
                for (r, e) in rhs.iter_mut().zip(&e_stages[j]) {
                    *r += ae * e;
                }
            }
            if implicit {
                let ai = tau * tab.ai(i, j);
                if ai != 0.0 {
                    for (r, e) in rhs.iter_mut().zip(&i_stages[j]) {
                        *r += ai * e;
                    }
                }
            }
        }
        let aii = tab.ai(i, i);
        let stage = if implicit && aii != 0.0 {
            let mut x = rhs.clone();
            system.solve_implicit(tau * aii, &rhs, &mut x)?;
            x
        } else {
            rhs.clone()
        };
        let mut e = vec![0.0; n];
        system.explicit_rhs(t + tab.c[i] * tau, &stage, &mut e)?;
        e_stages.push(e);
        if implicit {
            let mut im = vec![0.0; n];
            system.implicit_rhs(&stage, &mut im)?;
            i_stages.push(im);
        }
    }
    let mut out = u.to_vec();
    for i in 0..s {
        let be = tau * tab.b_exp[i];
        for (o, e) in out.iter_mut().zip(&e_stages[i]) {
            *o += be * e;
        }
        if implicit {
            let bi = tau * tab.b_imp[i];
            for (o, e) in out.iter_mut().zip(&i_stages[i]) {
                *o += bi * e;
            }
        }
    }
    Ok(out)
}

/// How the diffusion operator is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionTreatment {
    #[default]
    Implicit,
    Explicit,
}

/// The dG semidiscretisation as an [`ImexSystem`].
pub struct DgImexSystem<'a> {
    ops: DgOperators<'a>,
    eps: f64,
    treatment: DiffusionTreatment,
    matrix: Option<CsrMatrix>,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    /// Largest CG iteration count seen so far.
    pub cg_iterations_max: usize,
}

impl<'a> DgImexSystem<'a> {
    pub fn new(ops: DgOperators<'a>, treatment: DiffusionTreatment) -> Result<Self> {
        let eps = ops.problem().eps();
        let matrix = if eps > 0.0 && treatment == DiffusionTreatment::Implicit {
            Some(ops.assemble_linear_diffusion()?)
        } else {
            None
        };
        let n = ops.mesh().n_cells() * ops.basis().n_modes() * ops.problem().n_components();
        Ok(Self {
            ops,
            eps,
            treatment,
            matrix,
            cg_tolerance: 1e-12,
            cg_max_iterations: 10 * n.max(100),
            cg_iterations_max: 0,
        })
    }

    pub fn operators(&self) -> &DgOperators<'a> {
        &self.ops
    }

    fn wrap(&self, v: &[f64]) -> DgField {
        DgField::from_coeffs(
            *self.ops.mesh(),
            *self.ops.basis(),
            self.ops.problem().n_components(),
            v.to_vec(),
        )
        .expect("coefficient length fixed by construction")
    }
}

impl ImexSystem for DgImexSystem<'_> {
    fn len(&self) -> usize {
        self.ops.mesh().n_cells() * self.ops.basis().n_modes() * self.ops.problem().n_components()
    }

    fn explicit_rhs(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let field = self.wrap(u);
        let f = self.ops.convective(&field)?;
        for (o, v) in out.iter_mut().zip(f.coeffs()) {
            *o = -v;
        }
        if let Some(s) = self.ops.source(t)? {
            for (o, v) in out.iter_mut().zip(s.coeffs()) {
                *o += v;
            }
        }
        if self.eps > 0.0 && self.treatment == DiffusionTreatment::Explicit {
            let a = self.ops.diffusive(&field)?;
            for (o, v) in out.iter_mut().zip(a.coeffs()) {
                *o += self.eps * v;
            }
        }
        Ok(())
    }

    fn has_implicit(&self) -> bool {
        self.matrix.is_some()
    }

    fn implicit_rhs(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.matrix {
            Some(l) => {
                l.matvec(u, out);
                for o in out.iter_mut() {
                    *o *= self.eps;
                }
            }
            None => out.fill(0.0),
        }
        Ok(())
    }

    fn solve_implicit(&mut self, coef: f64, rhs: &[f64], x: &mut [f64]) -> Result<()> {
        let l = self
            .matrix
            .as_ref()
            .ok_or_else(|| Error::Internal("implicit solve without diffusion matrix".into()))?;
        let stats = solve_shifted(
            l,
            coef * self.eps,
            rhs,
            x,
            self.cg_tolerance,
            self.cg_max_iterations,
        )?;
        self.cg_iterations_max = self.cg_iterations_max.max(stats.iterations);
        Ok(())
    }
}

/// Discretisation and time-step parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub q: usize,
    pub n: usize,
    /// Defaults to the problem's final time.
    pub t_final: Option<f64>,
    pub c_adv: f64,
    /// Replaces the CFL rule when set.
    pub dt_override: Option<f64>,
    pub penalty: PenaltyConfig,
    pub diffusion: DiffusionTreatment,
    /// Defaults to the tableau matched to `q`.
    pub tableau: Option<String>,
}

impl TrajectoryConfig {
    pub fn new(q: usize, n: usize) -> Self {
        Self {
            q,
            n,
            t_final: None,
            c_adv: 0.1,
            dt_override: None,
            penalty: PenaltyConfig::default(),
            diffusion: DiffusionTreatment::Implicit,
            tableau: None,
        }
    }

    pub fn tableau(&self) -> Result<ButcherPair> {
        match &self.tableau {
            Some(name) => ButcherPair::by_name(name),
            None => ButcherPair::for_degree(self.q),
        }
    }
}

/// `C_adv h / ((2q + 1) lambda_max)`.
pub fn cfl_time_step(c_adv: f64, h: f64, q: usize, lambda_max: f64) -> f64 {
    c_adv * h / ((2 * q + 1) as f64 * lambda_max)
}

/// Node times `t_0 = 0, ..., t_N = T` with uniform `dt` and a shortened final step.
pub fn time_nodes(t_final: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need positive final time and step, got T = {t_final}, dt = {dt}"
        )));
    }
    let steps = ((t_final / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let mut t: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    t.push(t_final);
    Ok(t)
}

/// Data delivered for every time node.
pub struct NodeData<'f> {
    pub index: usize,
    pub t: f64,
    pub u: &'f DgField,
    /// `-f_h(u) + eps A_h(u) + Pi s(t)`.
    pub w: &'f DgField,
}

/// Summary of a completed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub tableau: String,
    pub dt: f64,
    pub steps: usize,
    pub t_final: f64,
    pub cg_iterations_max: usize,
}

/// Initial projection `u_h^0 = Pi u(0, .)` with `q + 3` points per direction.
pub fn initial_projection(problem: &dyn ProblemDefinition, mesh: CartesianMesh, q: usize) -> Result<DgField> {
    l2_project(mesh, TensorBasis::new(mesh.dim(), q), problem.n_components(), q + 3, |x, o| {
        let mut xx = [0.0; 2];
        xx[..x.len()].copy_from_slice(x);
        o.copy_from_slice(&problem.exact(0.0, &xx).u)
    })
}

/// Run to the final time, handing every node to `observer` as it is produced.
pub fn run_trajectory_streaming(
    problem: &dyn ProblemDefinition,
    config: &TrajectoryConfig,
    mut observer: impl FnMut(NodeData<'_>) -> Result<()>,
) -> Result<TrajectoryInfo> {
    if config.q < 1 {
        return Err(Error::Config("polynomial degree must be at least 1".into()));
    }
    let mesh = CartesianMesh::new(problem.dim(), config.n)?;
    let basis = TensorBasis::new(mesh.dim(), config.q);
    let tab = config.tableau()?;
    let t_final = config.t_final.unwrap_or(problem.final_time());
    let dt = config
        .dt_override
        .unwrap_or_else(|| cfl_time_step(config.c_adv, mesh.h(), config.q, problem.lambda_max()));
    let times = time_nodes(t_final, dt)?;
    let ops = DgOperators::new(problem, mesh, basis, config.penalty)?;
    let mut system = DgImexSystem::new(ops, config.diffusion)?;
    let mut u = initial_projection(problem, mesh, config.q)?;
    for (k, &t) in times.iter().enumerate() {
        let w = system.operators().time_derivative(t, &u)?;
        observer(NodeData {
            index: k,
            t,
            u: &u,
            w: &w,
        })?;
        if k + 1 < times.len() {
            let next = imex_step(&mut system, &tab, t, times[k + 1] - t, u.coeffs())?;
            if let Some(bad) = next.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("solution after step {}", k + 1),
                    value: *bad,
                });
            }
            u = DgField::from_coeffs(mesh, basis, problem.n_components(), next)?;
        }
    }
    Ok(TrajectoryInfo {
        tableau: tab.name.to_string(),
        dt,
        steps: times.len() - 1,
        t_final,
        cg_iterations_max: system.cg_iterations_max,
    })
}

/// Nodal values and nodal time derivatives of a whole run.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub values: Vec<DgField>,
    pub derivatives: Vec<DgField>,
    pub info: TrajectoryInfo,
}

/// Run and keep every node in memory.
pub fn run_trajectory(problem: &dyn ProblemDefinition, config: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut derivatives = Vec::new();
    let info = run_trajectory_streaming(problem, config, |node| {
        times.push(node.t);
        values.push(node.u.clone());
        derivatives.push(node.w.clone());
        Ok(())
    })?;
    Ok(TrajectoryRecord {
        times,
        values,
        derivatives,
        info,
    })
}

/// Manifest written next to checkpoint snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub problem: String,
    pub eps: f64,
    pub tableau: String,
    pub dt_rule: String,
    pub dt: f64,
    pub times: Vec<f64>,
}

impl TrajectoryRecord {
    /// `manifest.json` plus `u_<k>` snapshots (mesh snapshot format) in `dir`.
    pub fn write_checkpoint(&self, dir: &Path, problem: &dyn ProblemDefinition, c_adv: f64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, (u, t)) in self.values.iter().zip(&self.times).enumerate() {
            u.write_snapshot(&dir.join(format!("u_{k:06}")), *t)?;
        }
        let manifest = CheckpointManifest {
            problem: problem.id().to_string(),
            eps: problem.eps(),
            tableau: self.info.tableau.clone(),
            dt_rule: format!("C_adv h / ((2q+1) lambda_max), C_adv = {c_adv}"),
            dt: self.info.dt,
            times: self.times.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}
