//! Property checks shared by the property tests and the acceptance run.
//! Each returns a description of the first violation found.

use std::collections::HashMap;
use std::sync::Arc;

use fmdpu_core::env::{observe, Env};
use fmdpu_core::expert::{ExpertParams, Oracle};
use fmdpu_core::induction::CpdLearner;
use fmdpu_core::math::lgamma;
use fmdpu_core::model::{ActionSet, VarTable};
use fmdpu_core::structure::{bde_log_score, enumerate_parent_sets, struct_log_prior, AlphaSource, ParentPosterior, Repack};
use fmdpu_core::svi::{full_svi, ActionModel, PlanningProblem, ValueModel};
use fmdpu_core::tree::{max_merge, merge};
use fmdpu_core::{
    ActionId, AgentParams, Awareness, Fmdp, PartialState, SimConfig, Simulation, StepMetrics, Tree, VarId,
    VarSet, Variant,
};
use rand::Rng;

use super::{positive_dist, random_fmdp, random_tree, rng, states, table, TestRng};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn complete(cards: &[usize]) -> Vec<PartialState> {
    states(cards).iter().map(|s| PartialState::complete(s)).collect()
}

fn assignment(n: usize, vars: &[VarId], vals: &[u8]) -> PartialState {
    let mut j = PartialState::empty(n);
    for (v, x) in vars.iter().zip(vals) {
        j.set(*v, *x);
    }
    j
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

// ---- value iteration ----

/// Plain value iteration over explicitly enumerated states.
pub fn brute_values(m: &Fmdp) -> Vec<f64> {
    let cards = m.vars.cards();
    let all = complete(&cards);
    let index = |s: &[u8]| all.iter().position(|t| t.raw() == s).unwrap();
    let trans: Vec<Vec<Vec<(usize, f64)>>> = m
        .action_ids()
        .map(|a| {
            all.iter()
                .map(|s| {
                    states(&cards)
                        .iter()
                        .map(|n| {
                            let p: f64 = m.vars.ids().map(|x| m.cpd(a, x).eval(s).0[n[x.index()] as usize]).product();
                            (index(n), p)
                        })
                        .filter(|&(_, p)| p > 0.0)
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut v = vec![0.0; all.len()];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..all.len())
            .map(|i| {
                let r = *m.reward.eval(&all[i]);
                if m.terminal.eval(&all[i]) {
                    return r;
                }
                trans
                    .iter()
                    .map(|ta| r + m.discount * ta[i].iter().map(|&(j, p)| p * v[j]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let d = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if d < 1e-13 {
            break;
        }
    }
    v
}

pub fn solve(m: &Fmdp, reward: &Tree<f64>) -> ValueModel {
    let cards = m.vars.cards();
    let dbns: Vec<ActionModel> = m.action_ids().map(|a| ActionModel::from_fmdp(m, a)).collect();
    let actions: Vec<(ActionId, &ActionModel)> = m.action_ids().zip(dbns.iter()).collect();
    let terminal = m.terminal_tree();
    let p = PlanningProblem { cards: &cards, reward, terminal: &terminal, actions: &actions, discount: m.discount };
    full_svi(&p, 1e-11, 100_000).unwrap()
}

/// Largest gap between structured and flat optimal values.
pub fn flat_gap(m: &Fmdp) -> f64 {
    let vm = solve(m, &m.reward);
    complete(&m.vars.cards()).iter().zip(brute_values(m)).map(|(s, w)| (vm.v.eval(s) - w).abs()).fold(0.0, f64::max)
}

// ---- structure scores ----

/// Log probability of a count table as a sequence of Pólya-urn draws, in one fixed order.
pub fn sequential_log_marginal(counts: &[u32], alphas: &[f64]) -> f64 {
    let mut seen = vec![0.0; counts.len()];
    let a: f64 = alphas.iter().sum();
    let mut total = 0.0;
    let mut lp = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            lp += ((seen[i] + alphas[i]) / (total + a)).ln();
            seen[i] += 1.0;
            total += 1.0;
        }
    }
    lp
}

pub fn bde_matches_sequential(rows: &[(Vec<u32>, Vec<f64>)], prior: f64) -> Check {
    let counts: Vec<Vec<f64>> = rows.iter().map(|(c, _)| c.iter().map(|&x| x as f64).collect()).collect();
    let alphas: Vec<Vec<f64>> = rows.iter().map(|(_, a)| a.clone()).collect();
    let want = prior + rows.iter().map(|(c, a)| sequential_log_marginal(c, a)).sum::<f64>();
    let got = bde_log_score(&counts, &alphas, prior).map_err(|e| e.to_string())?;
    ensure!((got - want).abs() < 1e-8 * want.abs().max(1.0), "BDe {got} vs sequential {want}");
    Ok(())
}

/// Random count tables for `bde_matches_sequential`.
pub fn random_count_rows(seed: u64) -> Vec<(Vec<u32>, Vec<f64>)> {
    let mut r = rng(seed);
    let card = r.gen_range(2..=4);
    (0..r.gen_range(1..6))
        .map(|_| ((0..card).map(|_| r.gen_range(0..15)).collect(), (0..card).map(|_| r.gen_range(0.05..5.0)).collect()))
        .collect()
}

pub fn prior_normalizes(n: usize, rho: f64) -> Check {
    let total: f64 = (0..=n).map(|k| binomial(n, k) as f64 * struct_log_prior(k, n, rho).exp()).sum();
    ensure!((total - 1.0).abs() < 1e-12, "prior mass {total} over {n} variables");
    Ok(())
}

pub fn family_sizes(n: usize, cap: usize) -> Check {
    let fam = enumerate_parent_sets(VarSet((1u64 << n) - 1), cap);
    let want: usize = (0..=cap.min(n)).map(|k| binomial(n, k)).sum();
    ensure!(fam.len() == want, "{} parent sets, expected {want}", fam.len());
    ensure!(fam.windows(2).all(|w| w[0].len() <= w[1].len() && w[0] != w[1]), "family not ordered by size");
    ensure!(fam.iter().all(|p| p.len() <= cap), "family exceeds the cap");
    Ok(())
}

/// Old posterior mass splits (1-ρ, ρ) between Y and Y∪{z}; the ranking of z-free sets is kept.
pub fn rebuild_keeps_ranking(seed: u64, rho: f64, cap: usize) -> Check {
    let mut r = rng(seed);
    let vars = table(&[2, 3, 2, 2]);
    let aware = VarSet(0b0111);
    let z = VarId(3);
    let child = VarId(r.gen_range(0..3));
    let mut old = ParentPosterior::new(child, aware, rho, cap, AlphaSource::Uniform, &vars);
    for _ in 0..r.gen_range(0..40) {
        let s = PartialState::complete(&[r.gen_range(0..2), r.gen_range(0..3), r.gen_range(0..2), 0]);
        // the child mostly copies V1 mod 2
        let x = if r.gen_bool(0.8) { s.raw()[1] % 2 } else { r.gen_range(0..2) };
        old.update(&s, x.min(vars.card(child) as u8 - 1), &vars);
    }
    let new = old.rebuild_on_new_variable(z, rho, cap, AlphaSource::Uniform, &vars);
    let old_lp: Vec<(VarSet, f64)> = old.candidates().iter().map(|c| c.parents).zip(old.log_posterior()).collect();
    for (ya, la) in &old_lp {
        for (yb, lb) in &old_lp {
            if la > lb {
                let (na, nb) = (new.log_posterior_of(*ya).unwrap(), new.log_posterior_of(*yb).unwrap());
                ensure!(na >= nb - 1e-12, "ranking of {ya:?} over {yb:?} lost");
            }
        }
    }
    if cap > aware.len() {
        for (y, lp) in &old_lp {
            let p = lp.exp();
            let keep = new.log_posterior_of(*y).unwrap().exp();
            let grow = new.log_posterior_of(y.with(z)).unwrap().exp();
            ensure!((keep - (1.0 - rho) * p).abs() < 1e-9, "P({y:?}) = {keep}, expected {}", (1.0 - rho) * p);
            ensure!((grow - rho * p).abs() < 1e-9, "P({y:?}+z) = {grow}, expected {}", rho * p);
        }
    }
    let total: f64 = new.log_posterior().iter().map(|x| x.exp()).sum();
    ensure!((total - 1.0).abs() < 1e-9, "rebuilt posterior mass {total}");
    Ok(())
}

/// Pseudo-counts of a newly discovered child total K over every parent set that excludes it.
pub fn fresh_mass_is_k(k: f64, cards: &[usize], cz: usize) -> Check {
    let mut all = cards.to_vec();
    all.push(cz);
    let vars = table(&all);
    let z = VarId(cards.len() as u8);
    let alpha = AlphaSource::Fresh { k, z };
    for y in enumerate_parent_sets(VarSet((1u64 << cards.len()) - 1), cards.len()) {
        let pv: Vec<VarId> = y.iter().collect();
        let pc: Vec<usize> = pv.iter().map(|v| all[v.index()]).collect();
        let total: f64 =
            states(&pc).iter().map(|vals| alpha.alphas(&vars, z, y, &assignment(all.len(), &pv, vals)).iter().sum::<f64>()).sum();
        ensure!((total - k).abs() < 1e-9 * k, "total pseudo-count {total} for {y:?}, expected {k}");
    }
    Ok(())
}

/// With no data, repacked pseudo-counts and the induced tree reproduce the old conditional.
pub fn repack_reproduces_old(seed: u64, k: f64, ntrials: usize) -> Check {
    let mut r = rng(seed);
    let cards = [2usize, 3, 2, 2];
    let vars = table(&cards);
    let z = VarId(3);
    let child = VarId(r.gen_range(0..3));
    let old_cards = &cards[..3];
    let old = random_tree(old_cards, 3, &mut r, &mut |r: &mut TestRng| positive_dist(cards[child.index()], r)).reduce(old_cards);
    // trial projections predate z, so they leave it unassigned
    let trials: Vec<PartialState> = (0..ntrials)
        .map(|_| {
            PartialState::empty(4)
                .with(VarId(0), r.gen_range(0..2))
                .with(VarId(1), r.gen_range(0..3))
                .with(VarId(2), r.gen_range(0..2))
        })
        .collect();
    let alpha = AlphaSource::Repacked(Arc::new(Repack::new(k, z, Arc::new(trials), old.clone())));
    for y in enumerate_parent_sets(VarSet(0b111), 3) {
        if !old.tested_vars().is_subset(y) {
            continue;
        }
        let learner = CpdLearner::new(child, y, &alpha, &vars);
        let pv: Vec<VarId> = y.iter().collect();
        let pc: Vec<usize> = pv.iter().map(|v| cards[v.index()]).collect();
        for vals in states(&pc) {
            let j = assignment(cards.len(), &pv, &vals);
            let want = &old.eval(&j).0;
            let a = alpha.alphas(&vars, child, y, &j);
            let at: f64 = a.iter().sum();
            ensure!(want.iter().zip(&a).all(|(p, x)| (p - x / at).abs() < 1e-9), "pseudo-counts {a:?} vs old {want:?}");
            let got = &learner.tree().eval(&j).0;
            ensure!(want.iter().zip(got).all(|(p, q)| (p - q).abs() < 1e-9), "tree gives {got:?}, old model {want:?}");
        }
    }
    Ok(())
}

// ---- tree induction ----

/// Every tree over binary tests on `vars`, each variable tested at most once per path.
pub fn all_trees(vars: &[VarId]) -> Vec<Tree<()>> {
    let mut out = vec![Tree::Leaf(())];
    for (k, &v) in vars.iter().enumerate() {
        let rest: Vec<VarId> = vars.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &w)| w).collect();
        let subs = all_trees(&rest);
        for a in &subs {
            for b in &subs {
                out.push(Tree::test(v, 1, a.clone(), b.clone()));
            }
        }
    }
    out
}

fn path<L>(t: &Tree<L>, s: &PartialState, acc: &mut Vec<bool>) {
    if let Tree::Test(n) = t {
        let pass = s.get(n.var) == Some(n.value);
        acc.push(pass);
        path(if pass { &n.pass } else { &n.fail }, s, acc);
    }
}

fn ln_b(a: &[f64]) -> f64 {
    a.iter().map(|&x| lgamma(x)).sum::<f64>() - lgamma(a.iter().sum())
}

/// Tree score from first principles: group parent assignments by leaf, pool counts and pseudo-counts.
pub fn tree_score<L>(t: &Tree<L>, data: &[(PartialState, u8)], alpha: &AlphaSource, child: VarId, parents: VarSet, vars: &VarTable) -> f64 {
    let card = vars.card(child);
    let pv: Vec<VarId> = parents.iter().collect();
    let pc: Vec<usize> = pv.iter().map(|&v| vars.card(v)).collect();
    let mut leaves: Vec<(Vec<bool>, Vec<f64>, Vec<f64>)> = Vec::new();
    for vals in states(&pc) {
        let j = assignment(vars.len(), &pv, &vals);
        let mut p = Vec::new();
        path(t, &j, &mut p);
        let k = match leaves.iter().position(|(q, _, _)| *q == p) {
            Some(k) => k,
            None => {
                leaves.push((p, vec![0.0; card], vec![0.0; card]));
                leaves.len() - 1
            }
        };
        for (acc, a) in leaves[k].2.iter_mut().zip(alpha.alphas(vars, child, parents, &j)) {
            *acc += a;
        }
        for (s, x) in data {
            if s.agrees_on(&j, parents) {
                leaves[k].1[*x as usize] += 1.0;
            }
        }
    }
    leaves
        .iter()
        .map(|(_, n, a)| {
            let post: Vec<f64> = n.iter().zip(a).map(|(x, y)| x + y).collect();
            if alpha.is_default() {
                ln_b(&post) - ln_b(a)
            } else {
                ln_b(&post)
            }
        })
        .sum()
}

/// The maintained CPD tree scores as well as the best of all trees on the parents.
pub fn induction_finds_argmax(seed: u64, nparents: usize, child_card: usize, fresh: bool, n: usize) -> Check {
    let mut r = rng(seed);
    let mut cards = vec![2usize; nparents];
    cards.push(child_card);
    let vars = table(&cards);
    let child = VarId(nparents as u8);
    let parents = VarSet((1u64 << nparents) - 1);
    let alpha = if fresh { AlphaSource::Fresh { k: r.gen_range(0.5..10.0), z: child } } else { AlphaSource::Uniform };
    let cpt: Vec<Vec<f64>> = (0..1 << nparents)
        .map(|_| {
            let w: Vec<f64> = (0..child_card).map(|_| r.gen_range(0.0f64..1.0).powi(3)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect();
    let mut learner = CpdLearner::new(child, parents, &alpha, &vars);
    let mut data = Vec::new();
    for t in 0..n {
        let vals: Vec<u8> = (0..nparents).map(|_| r.gen_range(0..2)).collect();
        let idx = vals.iter().fold(0usize, |acc, &v| acc * 2 + v as usize);
        let mut u: f64 = r.gen();
        let mut x = child_card - 1;
        for (k, p) in cpt[idx].iter().enumerate() {
            if u < *p {
                x = k;
                break;
            }
            u -= p;
        }
        let s = assignment(cards.len(), &(0..nparents as u8).map(VarId).collect::<Vec<_>>(), &vals);
        learner.insert(&s, x as u8);
        data.push((s, x as u8));
        if t % 7 == 0 {
            learner.restructure();
        }
    }
    learner.restructure();
    let pv: Vec<VarId> = parents.iter().collect();
    let best = all_trees(&pv).iter().map(|t| tree_score(t, &data, &alpha, child, parents, &vars)).fold(f64::NEG_INFINITY, f64::max);
    let mine = tree_score(learner.tree(), &data, &alpha, child, parents, &vars);
    let tol = 1e-9 * best.abs().max(1.0);
    ensure!((learner.log_posterior() - best).abs() < tol, "learner posterior {} vs best {best}", learner.log_posterior());
    ensure!((mine - best).abs() < tol, "maintained tree scores {mine}, best tree {best}");
    ensure!((learner.score_structure(learner.tree()) - best).abs() < tol, "learner rescoring disagrees");
    Ok(())
}

// ---- tree algebra ----

fn small_value(r: &mut TestRng) -> f64 {
    // few distinct values so that reduction has something to merge
    r.gen_range(0..4) as f64 * 0.5
}

pub fn reduce_is_equivalent(seed: u64, cards: &[usize]) -> Check {
    let mut r = rng(seed);
    let t = random_tree(cards, 5, &mut r, &mut small_value);
    let red = t.reduce(cards);
    for s in complete(cards) {
        ensure!(t.eval(&s) == red.eval(&s), "reduced tree differs at {:?}", s.raw());
    }
    ensure!(red.is_path_consistent(cards), "reduced tree is not path consistent");
    ensure!(red.reduce(cards) == red, "reduction is not idempotent");
    ensure!(red.num_leaves() <= t.num_leaves(), "reduction grew the tree");
    Ok(())
}

pub fn merge_is_pointwise(seed: u64, cards: &[usize], k: usize) -> Check {
    let mut r = rng(seed);
    let trees: Vec<Tree<f64>> = (0..k).map(|_| random_tree(cards, 4, &mut r, &mut small_value)).collect();
    let sum = merge(&trees, cards, &mut |a: &f64, b: &f64| a + b).unwrap();
    let max = max_merge(&trees, cards).unwrap();
    for s in complete(cards) {
        let xs: Vec<f64> = trees.iter().map(|t| *t.eval(&s)).collect();
        ensure!((sum.eval(&s) - xs.iter().sum::<f64>()).abs() < 1e-12, "sum merge differs at {:?}", s.raw());
        ensure!(*max.eval(&s) == xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), "max merge differs at {:?}", s.raw());
    }
    ensure!(sum.is_path_consistent(cards) && max.is_path_consistent(cards), "merged tree is not path consistent");
    Ok(())
}

// ---- environment ----

/// Joint successor frequencies over `samples` draws lie within 3σ of the factored product.
pub fn sampler_matches_product(seed: u64, samples: usize) -> Check {
    let m = Arc::new(random_fmdp(seed, true));
    let cards = m.vars.cards();
    for s in m.start_states().into_iter().take(3) {
        for a in m.action_ids() {
            let mut env = Env::new(m.clone(), Arc::new(vec![s.clone()]), rng(seed ^ 0x5eed)).unwrap();
            let mut freq: HashMap<Vec<u8>, usize> = HashMap::new();
            for _ in 0..samples {
                env.reset();
                let tr = env.step(a).map_err(|e| e.to_string())?;
                *freq.entry(tr.next.raw().to_vec()).or_default() += 1;
            }
            for n in states(&cards) {
                let p: f64 = m.vars.ids().map(|x| m.cpd(a, x).eval(&s).0[n[x.index()] as usize]).product();
                let got = *freq.get(&n).unwrap_or(&0) as f64;
                let mean = samples as f64 * p;
                let sd = (samples as f64 * p * (1.0 - p)).sqrt();
                if p == 0.0 {
                    ensure!(got == 0.0, "impossible successor {n:?} sampled");
                } else {
                    ensure!((got - mean).abs() <= 3.0 * sd, "{n:?}: {got} draws, expected {mean} ± {sd}");
                }
            }
        }
    }
    Ok(())
}

// ---- agent and expert ----

pub fn simulation(m: &Arc<Fmdp>, seed: u64, variant: Variant, beta: f64) -> Simulation<TestRng> {
    let oracle = Arc::new(Oracle::new(m.clone(), 1e-9).unwrap());
    let config = SimConfig {
        variant,
        agent: AgentParams { conservative: variant != Variant::NonConservative, ..AgentParams::default() },
        expert: ExpertParams { mu: 10, beta, kappa: 20 },
        initial: Awareness { variables: VarSet::singleton(VarId(0)), actions: ActionSet(1), reward_scope: VarSet::singleton(VarId(0)) },
        cutoff: 200,
    };
    Simulation::new(oracle, Arc::new(m.start_states()), config, rng(2 * seed), rng(2 * seed + 1)).unwrap()
}

pub fn run(sim: &mut Simulation<TestRng>, steps: usize) -> Vec<StepMetrics> {
    (0..steps).map(|_| sim.step().unwrap()).collect()
}

/// Advice names the optimal action, strictly beats the action taken, and is spaced by more than μ.
/// Returns the number of advice events checked.
pub fn advice_truthful_and_spaced(seed: u64) -> Result<usize, String> {
    let m = Arc::new(random_fmdp(seed, seed % 2 == 0));
    let mut sim = simulation(&m, seed, Variant::Default, 0.05);
    let rows = run(&mut sim, 400);
    let oracle = sim.expert().oracle().clone();
    let mu = sim.expert().params().mu;
    let mut last: Option<u64> = None;
    let mut n = 0;
    for r in rows.iter().filter(|r| r.advice.is_some()) {
        let adv = r.advice.unwrap();
        ensure!(adv.anchor == r.step && adv.worse == r.action, "advice not anchored at its step");
        ensure!(sim.expert().state_at(adv.anchor) == Some(&r.state), "anchor state mismatch at {}", r.step);
        ensure!(oracle.q(&r.state, adv.better) > oracle.q(&r.state, adv.worse), "untruthful advice at {}", r.step);
        ensure!(adv.better == oracle.best_action(&r.state), "advised action is not optimal at {}", r.step);
        if let Some(t) = last {
            ensure!(r.step - t > mu, "advice at {t} and {} within μ = {mu}", r.step);
        }
        last = Some(r.step);
        n += 1;
    }
    let said = rows.iter().filter(|r| r.advice.is_some()).count() as u64;
    ensure!(sim.expert().utterances() == said, "expert counted {} utterances, trace has {said}", sim.expert().utterances());
    Ok(n)
}

/// Discovering a variable leaves V and Q exactly as they were. Returns the number of discoveries checked.
pub fn discovery_keeps_values(seed: u64) -> Result<usize, String> {
    let m = Arc::new(random_fmdp(200 + seed, seed % 2 == 1));
    let mut sim = simulation(&m, seed, Variant::Default, 0.05);
    let mut n = 0;
    for _ in 0..5 {
        run(&mut sim, 60);
        let before = sim.agent().clone();
        for z in m.vars.ids().filter(|&z| !before.awareness().variables.contains(z)) {
            let mut a = before.clone();
            a.discover(z).map_err(|e| e.to_string())?;
            ensure!(a.values().v == before.values().v, "V changed on discovering {z:?}");
            ensure!(a.values().q == before.values().q, "Q changed on discovering {z:?}");
            ensure!(a.awareness().variables.contains(z) && a.references_only_aware(), "awareness not extended");
            ensure!(a.discover(z).is_err(), "rediscovery accepted");
            n += 1;
        }
    }
    Ok(n)
}

/// The learned reward tree reproduces the reward of every visited successor.
pub fn reward_tree_fits_visits(seed: u64) -> Check {
    let m = Arc::new(random_fmdp(300 + seed, seed % 2 == 0));
    let mut sim = simulation(&m, seed, Variant::Default, 0.05);
    let rows = run(&mut sim, 300);
    let aw = sim.agent().awareness().clone();
    for r in &rows {
        let got = *sim.agent().reward_tree().eval(&observe(&r.next, &aw));
        ensure!(got == r.reward, "reward tree gives {got}, observed {} at step {}", r.reward, r.step);
    }
    Ok(())
}
