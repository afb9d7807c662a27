mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use orplan_core::evalmc::{evaluate_plan, k_sensitivity, validation_scenarios, EvalReport, KSensitivityParams};
use orplan_core::instgen::{
    default_specialties, draw_case_lognormal, generate, specialty_by_code, CostStructure, GenConfig,
    DEFAULT_CV_REDUCTION, DEFAULT_DELTA_NOISE_SD, EMERGENCY_MEAN,
};
use orplan_core::model::{Instance, Plan, Rates, Specialty};
use orplan_core::planners::{dummy_emergency_durations, plan, plan_benders_on, plan_saa_on, Method, PartReport, PlannerConfig};
use orplan_core::rng::substream;
use orplan_core::simpolicy::{simulate, PolicyParams};
use orplan_core::stage2::{best_order_oracle, realized_block_costs, solve_block_lp, svf_order, BlockProblem};
use orplan_core::surrogate::{SurrogateParams, SurrogateSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};

/// Surrogate budget for the full-instance criteria; the cache persists across runs.
const SURROGATE_POINTS: usize = 300;
const TINY_COUNT: u64 = 20;
const TINY_K: usize = 10;
const VALIDATION: usize = 450;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-surrogates")
}

fn full_surrogates(cs: CostStructure) -> SurrogateSet {
    let params = SurrogateParams { n: SURROGATE_POINTS, ..SurrogateParams::default() };
    SurrogateSet::load_or_build(&cache_dir(), &default_specialties(), cs.rates(), &params).unwrap()
}

fn full_instance(seed: u64, n: u32, rate: f64, cs: CostStructure, set: &SurrogateSet) -> Instance {
    let config = GenConfig { seed, n_patients: n, rate, cost_structure: cs, ..GenConfig::default() };
    generate(&config, &set.rightmost_slopes()).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

struct TinyRun {
    seed: u64,
    enumerated: f64,
    saa: f64,
    benders: f64,
    benders_parts: Vec<PartReport>,
    seconds: f64,
}

fn tiny_runs() -> &'static Vec<TinyRun> {
    static RUNS: OnceLock<Vec<TinyRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..TINY_COUNT)
            .map(|seed| {
                let started = Instant::now();
                let t = tiny_case(seed, TINY_K);
                let enumerated = enumerate_saa(&t.instance, &t.scenarios);
                let saa_config = PlannerConfig { mip_gap: 1e-7, ..PlannerConfig::with_method(Method::Saa) };
                let (_, saa) = plan_saa_on(&t.instance, &saa_config, &t.scenarios).unwrap();
                let benders_config = PlannerConfig {
                    epsilon: 1e-6,
                    audit_probes: 20,
                    time_limit: Some(12.0),
                    ..PlannerConfig::with_method(Method::Benders)
                };
                let (_, benders) = plan_benders_on(&t.instance, &benders_config, &t.scenarios).unwrap();
                TinyRun {
                    seed,
                    enumerated,
                    saa: saa.iter().map(|p| p.objective).sum(),
                    benders: benders.iter().map(|p| p.objective).sum(),
                    benders_parts: benders,
                    seconds: started.elapsed().as_secs_f64(),
                }
            })
            .collect()
    })
}

fn oracle_equivalence() -> Verdict {
    let runs = tiny_runs();
    let seconds: f64 = runs.iter().map(|r| r.seconds).sum();
    let saa_ok = runs.iter().filter(|r| rel_close(r.saa, r.enumerated, 1e-4)).count();
    let benders_bad: Vec<String> = runs
        .iter()
        .filter(|r| !rel_close(r.benders, r.enumerated, 1e-4))
        .map(|r| format!("seed {} {:.4} vs {:.4}", r.seed, r.benders, r.enumerated))
        .collect();
    let pass = saa_ok == runs.len() && benders_bad.is_empty() && seconds < 300.0;
    verdict(
        pass,
        format!(
            "saa {saa_ok}/{n}, benders {}/{n} agree with enumeration, {seconds:.1}s{}",
            runs.len() - benders_bad.len(),
            if benders_bad.is_empty() { String::new() } else { format!("; off: {}", benders_bad.join(", ")) },
            n = runs.len(),
        ),
    )
}

fn surrogate_vs_brute_force() -> Verdict {
    let mut solve_seconds = 0.0;
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..TINY_COUNT {
        let t = tiny_case(seed, TINY_K);
        let params = SurrogateParams { n: 60, k: 40, ..SurrogateParams::default() };
        let set = SurrogateSet::load_or_build(&cache_dir().join("tiny"), &t.instance.specialties, t.instance.rates(), &params).unwrap();
        let expected = enumerate_surrogate(&t.instance, &set);
        let started = Instant::now();
        let config = PlannerConfig { mip_gap: 1e-7, ..PlannerConfig::with_method(Method::Smb2ss) };
        let got = plan(&t.instance, Some(&set), &config).unwrap().report.objective;
        solve_seconds += started.elapsed().as_secs_f64();
        let dev = (got - expected).abs() / (1.0 + expected.abs());
        worst = worst.max(dev);
        if dev <= 1e-5 {
            agree += 1;
        }
    }
    let pass = agree == TINY_COUNT && solve_seconds < 60.0;
    verdict(pass, format!("{agree}/{TINY_COUNT} agree, worst relative deviation {worst:.2e}, solve time {solve_seconds:.1}s"))
}

fn svf_near_optimality() -> Verdict {
    let rates = CostStructure::Cs5.rates();
    let started = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for (si, s) in default_specialties().iter().enumerate() {
        let mut gaps = Vec::new();
        let mut exact = 0;
        for b in 0..100u64 {
            let mut rng = substream(500 + si as u64, b);
            let n = rng.gen_range(2..=5);
            let cases: Vec<(f64, f64)> = (0..n)
                .map(|_| draw_case_lognormal(s.marginal_mean, s.marginal_var, DEFAULT_CV_REDUCTION, DEFAULT_DELTA_NOISE_SD, &mut rng).unwrap())
                .collect();
            let durations: Vec<Vec<f64>> = cases
                .iter()
                .map(|(mu, sigma)| {
                    let d = LogNormal::new(*mu, *sigma).unwrap();
                    (0..200).map(|_| d.sample(&mut rng)).collect()
                })
                .collect();
            let problem = BlockProblem::new(durations, 480.0, rates).unwrap();
            let svf = solve_block_lp(&problem.permuted(&svf_order(&cases))).unwrap().cost;
            let (_, best) = best_order_oracle(&problem).unwrap();
            let gap = (svf - best) / best.abs().max(1e-9);
            if gap <= 1e-7 {
                exact += 1;
            }
            gaps.push(gap.max(0.0));
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        pass &= mean_gap <= 0.01 && exact >= 40;
        lines.push(format!("{} gap {:.2e} exact {exact}%", s.id, mean_gap));
    }
    let seconds = started.elapsed().as_secs_f64();
    pass &= seconds < 900.0;
    verdict(pass, format!("{}, {seconds:.0}s", lines.join("; ")))
}

fn dummy_durations() -> Verdict {
    let draws = 1_000_000;
    let mut worst: f64 = 0.0;
    for (ri, rate) in [1.0, 2.0, 3.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + ri as u64);
        let poisson = Poisson::new(rate).unwrap();
        let mut at_least = [0u64; 11];
        for _ in 0..draws {
            let n = poisson.sample(&mut rng) as usize;
            for j in 1..=n.min(10) {
                at_least[j] += 1;
            }
        }
        let l = dummy_emergency_durations(rate, EMERGENCY_MEAN, 10);
        for j in 1..=10 {
            let mc = EMERGENCY_MEAN * at_least[j] as f64 / draws as f64;
            worst = worst.max((l[j - 1] - mc).abs() / EMERGENCY_MEAN);
        }
    }
    verdict(worst <= 0.005, format!("largest deviation {:.3}% of the emergency mean", 100.0 * worst))
}

fn moment_matching() -> Verdict {
    let mut pass = true;
    let mut lines = Vec::new();
    for (si, s) in default_specialties().iter().enumerate() {
        let mut rng = substream(900, si as u64);
        let n = 100_000;
        let sample: Vec<f64> = (0..n)
            .map(|_| {
                let (mu, sigma) =
                    draw_case_lognormal(s.marginal_mean, s.marginal_var, DEFAULT_CV_REDUCTION, DEFAULT_DELTA_NOISE_SD, &mut rng).unwrap();
                LogNormal::new(mu, sigma).unwrap().sample(&mut rng)
            })
            .collect();
        let mean = sample.iter().sum::<f64>() / n as f64;
        let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let target_sd = s.marginal_var.sqrt();
        let ok = (mean - s.marginal_mean).abs() <= 0.02 * s.marginal_mean && (sd - target_sd).abs() <= 0.02 * target_sd;
        pass &= ok;
        lines.push(format!("{} {:.1}/{:.1} vs {}/{}", s.id, mean, sd, s.marginal_mean, target_sd));
    }
    verdict(pass, lines.join("; "))
}

fn simulator_matches_recursion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst: f64 = 0.0;
    let params = PolicyParams { delta: 1000.0, alpha: 0.7 };
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let patients: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(3.5..5.0), rng.gen_range(0.0..0.6))).collect();
        let inst = hand_instance(&[(0, 480.0)], &patients, &vec![(vec![0.0], 500.0); n], rates(1.0, 1.0, 1.0));
        let order = inst.svf(&(0..n as u32).collect::<Vec<_>>());
        let mut tentative = vec![0.0; n];
        let mut t = 0.0;
        for (k, p) in order.iter().enumerate() {
            if k > 0 {
                t += rng.gen_range(0.0..150.0);
            }
            tentative[*p as usize] = t;
        }
        let mut plan = Plan::default();
        for (i, t) in tentative.iter().enumerate() {
            plan.assignment.insert(i as u32, orplan_core::model::BlockRef::Block(0));
            plan.tentative.insert(i as u32, *t);
        }
        let durations: Vec<f64> = (0..n).map(|_| rng.gen_range(15.0..240.0)).collect();
        let out = simulate(&inst, &plan, &scenario(&durations, vec![vec![]]), &params).unwrap();
        let tent: Vec<f64> = order.iter().map(|p| tentative[*p as usize]).collect();
        let dur: Vec<f64> = order.iter().map(|p| durations[*p as usize]).collect();
        let r = realized_block_costs(&tent, &dur, 480.0);
        let c = out.cost_breakdown;
        for (a, b) in [(c.waiting, r.waiting), (c.idle, r.idle), (c.overtime, r.overtime)] {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-9, format!("1000 blocks, largest difference {worst:.1e}"))
}

fn mc_total(inst: &Instance, set: &SurrogateSet, config: &PlannerConfig) -> EvalReport {
    let out = plan(inst, Some(set), config).unwrap();
    let scenarios = validation_scenarios(inst, VALIDATION).unwrap();
    evaluate_plan(inst, &out.plan, &scenarios, &PolicyParams::default()).unwrap()
}

fn ranking_case(rate: f64, n_e: u32, min_improvement: f64) -> (bool, String) {
    let set = full_surrogates(CostStructure::Cs3);
    let mut wins = 0;
    let mut improvements = Vec::new();
    for seed in 1..=10 {
        let inst = full_instance(seed, 70, rate, CostStructure::Cs3, &set);
        let det = mc_total(&inst, &set, &PlannerConfig::with_method(Method::Det)).total.mean;
        let smb = mc_total(&inst, &set, &PlannerConfig { n_e, ..PlannerConfig::with_method(Method::Smb2ss) }).total.mean;
        if smb < det {
            wins += 1;
        }
        improvements.push((det - smb) / det);
    }
    let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
    (wins >= 7 && mean >= min_improvement, format!("wins {wins}/10, mean improvement {:.1}%", 100.0 * mean))
}

fn planner_ranking() -> Verdict {
    let started = Instant::now();
    let (a, da) = ranking_case(0.0, 0, 0.05);
    let (b, db) = ranking_case(3.0, 5, 0.08);
    let seconds = started.elapsed().as_secs_f64();
    verdict(a && b && seconds < 1800.0, format!("rate 0: {da}; rate 3: {db}; {seconds:.0}s"))
}

fn delta_sweep() -> Verdict {
    let set = full_surrogates(CostStructure::Cs6);
    let mut second = [0.0; 2];
    let mut moves = [0.0; 2];
    let mut frozen = true;
    for seed in 1..=5 {
        let inst = full_instance(seed, 70, 3.0, CostStructure::Cs6, &set);
        let out = plan(&inst, Some(&set), &PlannerConfig { n_e: 5, ..PlannerConfig::with_method(Method::Smb2ss) }).unwrap();
        let scenarios = validation_scenarios(&inst, VALIDATION).unwrap();
        for (i, delta) in [60.0, 1000.0].into_iter().enumerate() {
            let params = PolicyParams { delta, ..PolicyParams::default() };
            let report = evaluate_plan(&inst, &out.plan, &scenarios, &params).unwrap();
            second[i] += report.mean.waiting + report.mean.idle + report.mean.overtime;
            moves[i] += report.mean.migration / inst.costs.migration;
            if delta == 1000.0 {
                frozen &= report.scenarios.iter().all(|s| s.cost.migration == 0.0);
            }
        }
    }
    let pass = second[0] <= second[1] && moves[0] >= moves[1] && frozen;
    verdict(
        pass,
        format!(
            "second stage {:.1} vs {:.1}, migrations {:.2} vs {:.2}, none at 1000: {frozen}",
            second[0] / 5.0,
            second[1] / 5.0,
            moves[0] / 5.0,
            moves[1] / 5.0
        ),
    )
}

fn sample_size_curve() -> Verdict {
    let med: Specialty = specialty_by_code("MED").unwrap();
    let params = KSensitivityParams { blocks: 10, reference_k: 10_000, ..KSensitivityParams::default() };
    let rates: Rates = CostStructure::Cs3.rates();
    let points = k_sensitivity(&med, rates, &[10, 50, 150, 450], &params).unwrap();
    let monotone = points.windows(2).all(|w| w[1].deviation <= w[0].deviation);
    let last = points.last().unwrap().deviation;
    let curve: Vec<String> = points.iter().map(|p| format!("{}:{:.3}%", p.k, 100.0 * p.deviation)).collect();
    verdict(monotone && last <= 0.01, curve.join(" "))
}

fn scalability() -> Verdict {
    let set = full_surrogates(CostStructure::Cs3);
    let inst = full_instance(1, 200, 3.0, CostStructure::Cs3, &set);
    let config = PlannerConfig { n_e: 8, mip_gap: 0.005, time_limit: Some(120.0), ..PlannerConfig::with_method(Method::Smb2ss) };
    let started = Instant::now();
    let out = plan(&inst, Some(&set), &config).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let pass = seconds <= 120.0 && out.report.gap <= 0.005 + 1e-9 && inst.blocks.len() == 32;
    verdict(pass, format!("{} blocks, {seconds:.1}s, gap {:.4}, {:?}", inst.blocks.len(), out.report.gap, out.report.status))
}

fn benders_mechanics() -> Verdict {
    let mut problems: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cuts = 0;
    for run in tiny_runs() {
        for part in &run.benders_parts {
            let scale = 1.0 + part.trace.iter().map(|it| it.upper_bound.abs()).fold(0.0, f64::max);
            for w in part.trace.windows(2) {
                if w[1].lower_bound < w[0].lower_bound - 1e-9 * scale {
                    *problems.entry("lower bound decreased").or_default() += 1;
                }
            }
            for it in &part.trace {
                if it.upper_bound < it.lower_bound - 1e-6 * scale {
                    *problems.entry("upper below lower").or_default() += 1;
                }
            }
            for a in &part.audits {
                cuts += 1;
                if a.tight_error > 1e-6 * a.scale {
                    *problems.entry("cut not tight").or_default() += 1;
                }
                if a.probes < 20 || a.max_violation > 1e-6 * a.scale {
                    *problems.entry("cut invalid on a probe").or_default() += 1;
                }
            }
        }
    }
    let detail = if problems.is_empty() {
        format!("{cuts} cuts audited")
    } else {
        let list: Vec<String> = problems.iter().map(|(k, v)| format!("{k} x{v}")).collect();
        format!("{cuts} cuts audited; {}", list.join(", "))
    };
    verdict(problems.is_empty() && cuts > 0, detail)
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("oracle equivalence on tiny instances", oracle_equivalence),
        ("surrogate model matches brute force", surrogate_vs_brute_force),
        ("svf near-optimality", svf_near_optimality),
        ("dummy emergency durations", dummy_durations),
        ("moment matching", moment_matching),
        ("simulator matches recursion", simulator_matches_recursion),
        ("planner ranking", planner_ranking),
        ("migration threshold sweep", delta_sweep),
        ("sample size sensitivity", sample_size_curve),
        ("scalability", scalability),
        ("benders mechanics", benders_mechanics),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {} [{:.0}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, started.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
