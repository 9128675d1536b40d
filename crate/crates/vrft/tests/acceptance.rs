//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vrft::config::RunConfig;
use vrft::knowledge::parse_knowledge;
use vrft::runner::{run, RunSummary};
use vrft::scoring::{score_file, Presets};
use vrft_core::bleu::{bleu, BleuConfig};
use vrft_core::envs::*;
use vrft_core::grpo::{group_advantages, grpo_loss, kl_estimate, GroupBatch, GrpoConfig};
use vrft_core::policy::{Arch, Completion, Head, PolicyParams};
use vrft_core::prompt::{build_prompt, PromptTemplate};
use vrft_core::reward::{
    accuracy_reward, detection_reward, iou, mfrs_reward, recitation_reward, score, GroundTruth, RewardSpec,
};
use vrft_core::sft::{sft_baseline, SftConfig};
use vrft_core::structured_output::{format_reward, parse_completion, render_bbox, render_label, BBox, TaskMode};
use vrft_core::train::{train, GrpoTrainer};

/// Collects individual checks of one criterion.
#[derive(Default)]
struct Checks {
    passed: usize,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn ok(&mut self, cond: bool, what: impl Display) {
        if cond {
            self.passed += 1;
        } else {
            self.failures.push(what.to_string());
        }
    }

    fn close(&mut self, got: f64, want: f64, tol: f64, what: impl Display) {
        self.ok((got - want).abs() <= tol, format!("{what}: got {got}, want {want} +- {tol}"));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn(&mut Checks),
}

fn main() {
    let criteria = [
        Criterion { id: "A1", title: "reward oracles", budget: Duration::from_secs(10), run: a1 },
        Criterion { id: "A2", title: "gradient correctness", budget: Duration::from_secs(60), run: a2 },
        Criterion { id: "A3", title: "advantage invariants", budget: Duration::MAX, run: a3 },
        Criterion { id: "A4", title: "mfrs vs exact match", budget: Duration::from_secs(300), run: a4 },
        Criterion { id: "A5", title: "recitation dynamics", budget: Duration::from_secs(300), run: a5 },
        Criterion { id: "A6", title: "cross-task transfer", budget: Duration::from_secs(300), run: a6 },
        Criterion { id: "A7", title: "parse conformance", budget: Duration::MAX, run: a7 },
        Criterion { id: "A8", title: "determinism", budget: Duration::MAX, run: a8 },
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.iter().any(|o| o == c.id)) {
        let mut checks = Checks::default();
        let start = Instant::now();
        (c.run)(&mut checks);
        let elapsed = start.elapsed();
        if elapsed > c.budget {
            checks.failures.push(format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), c.budget.as_secs()));
        }
        let pass = checks.failures.is_empty();
        let budget = if c.budget == Duration::MAX {
            String::new()
        } else {
            format!(", budget {} s", c.budget.as_secs())
        };
        println!(
            "{} {} {}: {} checks passed, {} failed ({:.2} s{budget})",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            checks.passed,
            checks.failures.len(),
            elapsed.as_secs_f64(),
        );
        for n in &checks.notes {
            println!("    {n}");
        }
        for f in &checks.failures {
            println!("    failed: {f}");
        }
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- oracles

/// Sentence BLEU by direct n-gram counting, order capped at the candidate
/// length, no smoothing.
fn bleu_oracle(cand: &str, refr: &str) -> f64 {
    let c: Vec<String> = cand.split_whitespace().map(str::to_lowercase).collect();
    let r: Vec<String> = refr.split_whitespace().map(str::to_lowercase).collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let orders = c.len().min(4);
    let mut product = 1.0;
    for n in 1..=orders {
        let grams: Vec<&[String]> = c.windows(n).collect();
        let mut matched = 0;
        let mut seen: Vec<&[String]> = Vec::new();
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_cand = grams.iter().filter(|x| *x == g).count();
            let in_ref = r.windows(n).filter(|x| x == g).count();
            matched += in_cand.min(in_ref);
        }
        product *= matched as f64 / grams.len() as f64;
    }
    let bp = if c.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
    bp * product.powf(1.0 / orders as f64)
}

/// IoU of integer boxes by counting unit cells.
fn iou_oracle(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |x: i64, y: i64, q: [i64; 4]| x >= q[0] && x < q[2] && y >= q[1] && y < q[3];
    let (mut inter, mut union) = (0, 0);
    for x in -1..60 {
        for y in -1..60 {
            let (ia, ib) = (inside(x, y, a), inside(x, y, b));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Probability that a group of `n` uniform answers over `vocab` all get the
/// same reward, by enumerating every count vector over the reward classes.
fn degenerate_oracle(grades: usize, vocab: usize, n: usize, weights: &[f64]) -> (f64, f64) {
    let mut degenerate = 0.0;
    let mut total_mass = 0.0;
    for g in 0..grades {
        let mut classes: Vec<(f64, usize)> = Vec::new();
        for a in 0..vocab {
            let w = weights.get(a.abs_diff(g)).copied().unwrap_or(0.0);
            match classes.iter_mut().find(|(v, _)| *v == w) {
                Some((_, c)) => *c += 1,
                None => classes.push((w, 1)),
            }
        }
        let p: Vec<f64> = classes.iter().map(|&(_, c)| c as f64 / vocab as f64).collect();
        let mut counts = vec![0; p.len()];
        enumerate(&p, n, 0, &mut counts, &mut |counts, prob| {
            total_mass += prob;
            if counts.iter().filter(|&&c| c > 0).count() == 1 {
                degenerate += prob;
            }
        });
    }
    (degenerate / grades as f64, total_mass / grades as f64)
}

fn enumerate(p: &[f64], left: usize, k: usize, counts: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize], f64)) {
    if k == p.len() - 1 {
        counts[k] = left;
        let n: usize = counts.iter().sum();
        let mut prob = (1..=n).map(|i| i as f64).product::<f64>();
        for (c, q) in counts.iter().zip(p) {
            prob *= q.powi(*c as i32) / (1..=*c).map(|i| i as f64).product::<f64>();
        }
        visit(counts, prob);
        return;
    }
    for c in 0..=left {
        counts[k] = c;
        enumerate(p, left - c, k + 1, counts, visit);
    }
}

fn fd_grad(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, with a floor for
/// vanishing gradients.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn params(arch: Arch, theta: &[f64]) -> PolicyParams {
    PolicyParams::from_theta(arch, theta.to_vec()).unwrap()
}

// --------------------------------------------------------------------- A1

fn a1(c: &mut Checks) {
    output_grammar_examples(c);
    bleu_examples(c);
    reward_examples(c);
    grpo_examples(c);
    policy_examples(c);
    env_examples(c);
    prompt_examples(c);
    trainer_examples(c);
    tool_examples(c);
}

fn output_grammar_examples(c: &mut Checks) {
    let p = parse_completion("<think>round lesion</think>\\boxed{melanoma}", TaskMode::Classification);
    c.ok(p.format_ok && p.label() == Some("melanoma"), "well-formed classification parses");
    c.ok(format_reward(&p) == 1.0, "format_ok gives format reward 1");
    let p = parse_completion("\\boxed{melanoma}", TaskMode::Classification);
    c.ok(!p.format_ok && p.label() == Some("melanoma"), "missing think block keeps the label");
    c.ok(format_reward(&p) == 0.0, "malformed gives format reward 0");
    let p = parse_completion("<think>t</think><answer>{\"bbox\":[1,2,3,4]}</answer>", TaskMode::Detection);
    c.ok(p.format_ok && p.bbox() == BBox::new(1.0, 2.0, 3.0, 4.0), "json bbox answer parses");
    let p = parse_completion("<think>a</think><think>b</think>\\boxed{x}", TaskMode::Classification);
    c.ok(format_reward(&p) == 0.0, "duplicate think blocks fail format");
}

fn bleu_examples(c: &mut Checks) {
    let cfg = BleuConfig::default();
    c.ok(bleu("a b c d", "a b c d", &cfg) == 1.0, "identical strings score 1");
    c.ok(bleu("x y z", "a b c", &cfg) == 0.0, "disjoint strings score 0");
    let got = bleu("a b c d e", "a b c d f", &cfg);
    let hand = (4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0f64).powf(0.25);
    c.close(got, hand, 1e-15, "one-token substitution against the hand product");
    c.close(got, bleu_oracle("a b c d e", "a b c d f"), 1e-15, "one-token substitution against counting");
    c.close(got, 0.6687, 5e-5, "one-token substitution, 4 digits");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words = ["a", "b", "c", "D", "e"];
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let sentence = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(1..14);
            (0..n).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let (x, y) = (sentence(&mut rng), sentence(&mut rng));
        worst = worst.max((bleu(&x, &y, &cfg) - bleu_oracle(&x, &y)).abs());
    }
    c.ok(worst < 1e-12, format!("500 random pairs agree with counting (max diff {worst:e})"));
}

fn reward_examples(c: &mut Checks) {
    let label = |l: &str| parse_completion(&render_label("t", l), TaskMode::Classification);
    c.ok(accuracy_reward(&label("Melanoma"), &GroundTruth::label("melanoma")) == 1.0, "label match ignores case");
    c.ok(accuracy_reward(&label("nevus"), &GroundTruth::label("melanoma")) == 0.0, "wrong label scores 0");
    let none = parse_completion("<think>t</think>", TaskMode::Classification);
    c.ok(accuracy_reward(&none, &GroundTruth::label("melanoma")) == 0.0, "missing label scores 0");

    let b = |x1, y1, x2, y2| BBox::new(x1, y1, x2, y2).unwrap();
    let unit = b(0.0, 0.0, 10.0, 10.0);
    c.ok(iou(&unit, &unit) == 1.0, "iou of identical boxes");
    c.ok(iou(&unit, &b(20.0, 20.0, 30.0, 30.0)) == 0.0, "iou of disjoint boxes");
    let third = iou(&unit, &b(5.0, 0.0, 15.0, 10.0));
    c.close(third, iou_oracle([0, 0, 10, 10], [5, 0, 15, 10]), 1e-15, "half-shifted box against cell counting");
    c.close(third, 1.0 / 3.0, 1e-15, "half-shifted box is 1/3");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let corner = |rng: &mut ChaCha8Rng| {
            let (x, y) = (rng.random_range(0..40), rng.random_range(0..40));
            [x, y, x + rng.random_range(0..18), y + rng.random_range(0..18)]
        };
        let (p, q) = (corner(&mut rng), corner(&mut rng));
        let f = |a: [i64; 4]| BBox::new(a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64).unwrap();
        worst = worst.max((iou(&f(p), &f(q)) - iou_oracle(p, q)).abs());
    }
    c.ok(worst < 1e-12, format!("300 random integer boxes agree with cell counting (max diff {worst:e})"));

    let det = RewardSpec::detection();
    let boxed = |x: &BBox| parse_completion(&render_bbox("t", x), TaskMode::Detection);
    c.ok(detection_reward(&boxed(&unit), &GroundTruth::bbox(unit), &det) == 1.0, "iou 1 passes the threshold");
    c.ok(detection_reward(&boxed(&b(5.0, 0.0, 15.0, 10.0)), &GroundTruth::bbox(unit), &det) == 0.0, "iou 1/3 fails the threshold");
    c.ok(detection_reward(&parse_completion("<think>t</think>", TaskMode::Detection), &GroundTruth::bbox(unit), &det) == 0.0, "missing box scores 0");

    let g = RewardSpec::grading();
    c.ok(mfrs_reward(3, 3, &g) == 1.0, "grade exact match");
    c.ok(mfrs_reward(2, 3, &g) == 0.25, "grade off by one");
    c.ok(mfrs_reward(0, 4, &g) == 0.0, "grade far off");

    let cls = RewardSpec::classification();
    let copy = parse_completion(&render_label("dark irregular lesion", "x"), TaskMode::Classification);
    c.ok(recitation_reward(&copy, "dark irregular lesion", &cls.clone().with_delta(0.2)) == 0.2, "verbatim recitation at +0.2");
    let other = parse_completion(&render_label("round smooth", "x"), TaskMode::Classification);
    c.ok(recitation_reward(&other, "dark irregular lesion", &cls.clone().with_delta(-2.0)) == 0.0, "no overlap at -2");
    let partial = parse_completion(&render_label("a b c d e", "x"), TaskMode::Classification);
    let r = recitation_reward(&partial, "a b c d f", &cls.clone().with_delta(-2.0));
    c.close(r, -2.0 * bleu_oracle("a b c d e", "a b c d f"), 1e-15, "recitation is delta times bleu, unclamped");
    c.close(r, -1.3374, 1e-4, "recitation example, 4 digits");

    let graded = parse_completion("<think>x</think>\\boxed{2}", TaskMode::Grading);
    let total = score(&graded, &GroundTruth::grade(3), "", &g).unwrap().total;
    c.close(total, 0.9 * 0.25 + 0.1, 1e-15, "grading total");
    c.close(total, 0.325, 1e-15, "grading total literal");
    let right = parse_completion(&render_label("dark lesion", "melanoma"), TaskMode::Classification);
    let total = score(&right, &GroundTruth::label("melanoma"), "dark lesion", &cls.clone().with_delta(0.2)).unwrap().total;
    c.close(total, 1.2, 1e-15, "classification total with recitation");
    let wrong = parse_completion("nothing", TaskMode::Classification);
    c.ok(score(&wrong, &GroundTruth::label("melanoma"), "p", &cls).unwrap().total == 0.0, "all-zero classification total");
}

fn grpo_examples(c: &mut Checks) {
    let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
    // mean 1/4, population std sqrt(3/16)
    let sd = (0.1875f64).sqrt();
    for (i, want) in [0.75 / sd, -0.25 / sd, -0.25 / sd, -0.25 / sd].into_iter().enumerate() {
        c.close(a[i], want, 1e-15, format!("advantage [1,0,0,0][{i}]"));
    }
    c.close(a[0], 3f64.sqrt(), 1e-15, "first advantage is sqrt 3");
    c.ok(group_advantages(&[0.5; 4], 1e-4).unwrap() == [0.0; 4], "flat group has zero advantages");
    c.ok(group_advantages(&[1.0, 0.0], 0.0).unwrap() == [1.0, -1.0], "two-element group");

    c.ok(kl_estimate(-1.3, -1.3) == 0.0, "kl of identical policies");
    c.close(kl_estimate(0.5f64.ln(), 1f64.ln()), 2.0 - 2f64.ln() - 1.0, 1e-15, "kl at rho 2");
    c.close(kl_estimate(0.5f64.ln(), 1f64.ln()), 0.3069, 5e-5, "kl at rho 2, 4 digits");
    c.close(kl_estimate(1f64.ln(), 0.5f64.ln()), 0.5 - 0.5f64.ln() - 1.0, 1e-15, "kl at rho 1/2");
    c.close(kl_estimate(1f64.ln(), 0.5f64.ln()), 0.1931, 5e-5, "kl at rho 1/2, 4 digits");

    // zero advantages, no KL: nothing to optimize
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = Arch::SoftmaxBandit { actions: 3, features: 2 };
    let policy = params(arch, &uniform(&mut rng, arch.num_params(), 1.0));
    let ctx = [0.3, -0.7];
    let (batch, _) = on_policy_batch(&policy, &ctx, Head::Answer, 6, 1.0, &mut rng);
    let cfg = GrpoConfig { beta: 0.0, temperature: 1.0, ..GrpoConfig::default() };
    let flat = GroupBatch { advantages: vec![0.0; 6], ..batch.clone() };
    let (loss, grad) = grpo_loss(&flat, &policy, &cfg).unwrap();
    c.ok(loss == 0.0 && grad.iter().all(|g| *g == 0.0), "zero advantages give zero loss and gradient");

    // at theta = old = ref the surrogate gradient is REINFORCE
    let (loss, grad) = grpo_loss(&batch, &policy, &cfg).unwrap();
    let n = batch.advantages.len() as f64;
    c.close(loss, -batch.advantages.iter().sum::<f64>() / n, 1e-14, "on-policy loss is minus the mean advantage");
    let mut reinforce = vec![0.0; grad.len()];
    for (comp, adv) in batch.completions.iter().zip(&batch.advantages) {
        let (_, g) = policy.log_prob_and_grad(&ctx, Head::Answer, &comp.tokens, 1.0).unwrap();
        for (r, gi) in reinforce.iter_mut().zip(g) {
            *r -= adv * gi / n;
        }
    }
    c.ok(rel_err(&grad, &reinforce) < 1e-12, "on-policy gradient is REINFORCE with advantages");

    // one Bernoulli parameter, off-policy, with KL
    let bern = Arch::SoftmaxBandit { actions: 2, features: 0 };
    let old = params(bern, &[0.2, 0.0]);
    let reference = params(bern, &[-0.1, 0.0]);
    let tokens = [0, 1, 1, 0, 1];
    let completions: Vec<Completion> = tokens
        .iter()
        .map(|&t| Completion {
            tokens: vec![t],
            logp_theta: vec![],
            logp_ref: reference.token_log_probs(&[], Head::Answer, &[t], 1.0).unwrap(),
            logp_old: old.token_log_probs(&[], Head::Answer, &[t], 1.0).unwrap(),
            rendered: String::new(),
        })
        .collect();
    let rewards = vec![1.0, 0.0, 0.25, 1.0, 0.0];
    let bern_batch = GroupBatch {
        prompt_id: 0,
        context: vec![],
        head: Head::Answer,
        completions,
        advantages: group_advantages(&rewards, 1e-4).unwrap(),
        rewards,
    };
    let cfg = GrpoConfig { temperature: 1.0, ..GrpoConfig::default() };
    let loss_at = |t: f64| grpo_loss(&bern_batch, &params(bern, &[t, 0.0]), &cfg).unwrap();
    let theta = 0.27;
    let analytic = loss_at(theta).1[0];
    let h = 1e-5;
    let numeric = (loss_at(theta + h).0 - loss_at(theta - h).0) / (2.0 * h);
    c.ok(rel_err(&[analytic], &[numeric]) < 1e-6, format!("Bernoulli gradient {analytic} vs finite difference {numeric}"));
}

/// A group sampled from `policy` itself, so that old = ref = current.
fn on_policy_batch(policy: &PolicyParams, ctx: &[f64], head: Head, n: usize, temperature: f64, rng: &mut ChaCha8Rng) -> (GroupBatch, Vec<f64>) {
    let completions: Vec<Completion> = (0..n)
        .map(|_| {
            let s = policy.sample(ctx, head, temperature, rng).unwrap();
            Completion {
                tokens: s.tokens,
                logp_theta: s.logp.clone(),
                logp_ref: s.logp.clone(),
                logp_old: s.logp,
                rendered: String::new(),
            }
        })
        .collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let advantages = group_advantages(&rewards, 1e-4).unwrap();
    let batch = GroupBatch {
        prompt_id: 0,
        context: ctx.to_vec(),
        head,
        completions,
        rewards: rewards.clone(),
        advantages,
    };
    (batch, rewards)
}

fn policy_examples(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = Arch::SoftmaxBandit { actions: 4, features: 1 };
    let zero = PolicyParams::zeros(arch);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[zero.sample(&[0.5], Head::Answer, 1.0, &mut rng).unwrap().tokens[0]] += 1;
    }
    let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
    for (k, &n) in counts.iter().enumerate() {
        c.close(n as f64, draws as f64 / 4.0, 3.0 * sigma, format!("uniform sampling count of token {k}"));
    }

    let arch = Arch::SeqSoftmax { think_len: 3, vocab: 5, answers: 4, features: 2 };
    let p = params(arch, &uniform(&mut rng, arch.num_params(), 2.0));
    let mut greedy_ok = true;
    for _ in 0..50 {
        let ctx = uniform(&mut rng, arch.context_len(), 1.0);
        let cold = p.sample(&ctx, Head::Answer, 1e-6, &mut rng).unwrap().tokens;
        greedy_ok &= cold == p.greedy(&ctx, Head::Answer).unwrap();
    }
    c.ok(greedy_ok, "temperature 1e-6 samples the argmax");
    let ctx = uniform(&mut rng, arch.context_len(), 1.0);
    let a = p.sample(&ctx, Head::Answer, 0.9, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let b = p.sample(&ctx, Head::Answer, 0.9, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    c.ok(a == b, "seeded sampling repeats");

    let single = Arch::SoftmaxBandit { actions: 1, features: 2 };
    let p = params(single, &[0.4, -1.2, 3.0]);
    let (lp, g) = p.log_prob_and_grad(&[1.0, 2.0], Head::Answer, &[0], 1.0).unwrap();
    c.ok(lp == 0.0 && g.iter().all(|x| *x == 0.0), "single-token vocabulary has logp 0 and no gradient");
    let two = PolicyParams::zeros(Arch::SoftmaxBandit { actions: 2, features: 0 });
    for t in 0..2 {
        let lp = two.token_log_probs(&[], Head::Answer, &[t], 1.0).unwrap()[0];
        c.close(lp, 0.5f64.ln(), 1e-15, format!("symmetric bandit logp of action {t}"));
    }

    let mut worst: f64 = 0.0;
    for (arch, head) in toy_archs() {
        for _ in 0..10 {
            let theta = uniform(&mut rng, arch.num_params(), 1.0);
            let ctx = uniform(&mut rng, arch.context_len(), 1.0);
            let temperature = rng.random_range(0.5..1.5);
            let p = params(arch, &theta);
            let tokens = p.sample(&ctx, head, temperature, &mut rng).unwrap().tokens;
            let (_, analytic) = p.log_prob_and_grad(&ctx, head, &tokens, temperature).unwrap();
            let numeric = fd_grad(&theta, 1e-5, |t| params(arch, t).log_prob_and_grad(&ctx, head, &tokens, temperature).unwrap().0);
            worst = worst.max(rel_err(&analytic, &numeric));
        }
    }
    c.ok(worst < 1e-6, format!("log-prob gradients match finite differences (max rel err {worst:e})"));

    let backbone = |attention: &[f64]| {
        let mut theta = attention.to_vec();
        theta.push(0.0);
        params(Arch::SharedBackbone { regions: 3, region_features: 1, classes: 2 }, &theta)
    };
    let ctx = [0.0, 1.0, -1.0, 0.0, 0.5, 2.0, 0.0, -3.0, 0.25];
    let one_hot = backbone(&[0.0, 800.0, 0.0]).shared_backbone_forward(&ctx, Head::Classify).unwrap();
    c.ok(one_hot == [0.5, 2.0], "one-hot attention returns that region's evidence");
    let flat = backbone(&[0.0; 3]).shared_backbone_forward(&ctx, Head::Classify).unwrap();
    c.close(flat[0], (1.0 + 0.5 - 3.0) / 3.0, 1e-15, "uniform attention averages class 0 evidence");
    c.close(flat[1], (-1.0 + 2.0 + 0.25) / 3.0, 1e-15, "uniform attention averages class 1 evidence");
}

fn toy_archs() -> Vec<(Arch, Head)> {
    let backbone = Arch::SharedBackbone { regions: 4, region_features: 3, classes: 3 };
    vec![
        (Arch::SoftmaxBandit { actions: 5, features: 4 }, Head::Answer),
        (Arch::SeqSoftmax { think_len: 3, vocab: 6, answers: 4, features: 3 }, Head::Answer),
        (backbone, Head::Localize),
        (backbone, Head::Classify),
    ]
}

/// Nearest-centroid accuracy of fresh draws; optimal for isotropic noise
/// with equal priors.
fn bayes_oracle(cfg: &OrdinalEnvConfig, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..cfg.num_grades).map(|g| cfg.embed(g)).collect();
    let mut hits = 0;
    for _ in 0..draws {
        let g = rng.random_range(0..cfg.num_grades);
        let x = cfg.observe(g, &mut rng).unwrap();
        let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..cfg.num_grades).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
        hits += usize::from(best == g);
    }
    hits as f64 / draws as f64
}

fn env_examples(c: &mut Checks) {
    let draws = 100_000;
    let cfg = OrdinalEnvConfig::default();
    let oracle = bayes_oracle(&cfg, draws, 11);
    let method = cfg.bayes_accuracy_mc(draws, 12);
    let sigma = (2.0 * oracle * (1.0 - oracle) / draws as f64).sqrt();
    c.close(method, oracle, 4.0 * sigma, "Bayes accuracy against an independent nearest-centroid estimate");
    c.note(format!("Bayes accuracy at sigma {}: {oracle:.4}", cfg.noise_sigma));
    let sharp = OrdinalEnvConfig { noise_sigma: 0.0, ..cfg.clone() };
    c.ok(sharp.bayes_accuracy_mc(10_000, 1) == 1.0 && bayes_oracle(&sharp, 10_000, 1) == 1.0, "noiseless grades are separable");
    let blurred = OrdinalEnvConfig { noise_sigma: 1e6, ..cfg.clone() };
    let chance = 1.0 / cfg.num_grades as f64;
    c.close(blurred.bayes_accuracy_mc(draws, 2), chance, 4.0 * (chance * (1.0 - chance) / draws as f64).sqrt(), "huge noise is at chance");

    let exact = RewardSpec::grading_exact();
    let mfrs = RewardSpec::grading();
    for vocab in [5, cfg.answer_vocab] {
        let (want_exact, mass) = degenerate_oracle(5, vocab, 8, &exact.mfrs_weights);
        c.close(mass, 1.0, 1e-12, "enumerated probabilities sum to 1");
        let got_exact = degenerate_group_fraction(5, vocab, 8, &exact);
        c.close(got_exact, want_exact, 1e-12, format!("exact degenerate fraction, vocab {vocab}"));
        let (want_mfrs, _) = degenerate_oracle(5, vocab, 8, &mfrs.mfrs_weights);
        let got_mfrs = degenerate_group_fraction(5, vocab, 8, &mfrs);
        c.close(got_mfrs, want_mfrs, 1e-12, format!("mfrs degenerate fraction, vocab {vocab}"));
        c.ok(got_mfrs < got_exact, format!("mfrs has fewer degenerate groups, vocab {vocab}"));
        c.ok(degenerate_group_fraction(5, vocab, 1, &exact) == 1.0 && degenerate_group_fraction(5, vocab, 1, &mfrs) == 1.0, "singleton groups are degenerate");
    }
    c.close(degenerate_group_fraction(5, 5, 8, &exact), 0.8f64.powi(8) + 0.2f64.powi(8), 1e-15, "exact fraction with 5 answers");

    let pool = |sizes: &[usize]| LabeledDataset {
        classes: sizes.len(),
        pool: sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| {
                (0..n).map(move |i| Sample {
                    id: format!("p{k}-{i}"),
                    observation: vec![i as f64],
                    truth: GroundTruth::label(format!("c{k}")),
                    class: k,
                })
            })
            .collect(),
        test: vec![],
    };
    let (train, _) = few_shot_split(&pool(&[7, 40]), &FewShotSampler::new(10, 3).unwrap()).unwrap();
    c.ok(train.iter().filter(|s| s.class == 0).count() == 7, "a class smaller than the shot count contributes all it has");
    let data = pool(&[50, 50, 50]);
    let (t10, _) = few_shot_split(&data, &FewShotSampler::new(10, 5).unwrap()).unwrap();
    let (t20, _) = few_shot_split(&data, &FewShotSampler::new(20, 5).unwrap()).unwrap();
    c.ok(t10.iter().all(|s| t20.contains(s)), "10-shot set is inside the 20-shot set");
    for shots in ALLOWED_SHOTS {
        let env = AttributeEnv::new(AttributeEnvConfig { shots_per_class: shots, ..AttributeEnvConfig::default() }, None).unwrap();
        let test: std::collections::HashSet<&str> = env.eval_samples().iter().map(|s| s.id.as_str()).collect();
        c.ok(env.train_samples().iter().all(|s| !test.contains(s.id.as_str())), format!("{shots}-shot train and test are disjoint"));
    }
}

fn prompt_examples(c: &mut Checks) {
    let kb = parse_knowledge(r#"{"melanoma": "irregular borders, dark pigment"}"#, "kb").unwrap();
    c.ok(kb.len() == 1, "one-entry knowledge file");
    c.ok(parse_knowledge(r#"{"a": "x", "a": "y"}"#, "kb").is_err(), "duplicate class rejected");
    c.ok(parse_knowledge("", "kb").is_err(), "empty knowledge file rejected");

    let plain = build_prompt(&PromptTemplate::classification("dermoscopy", "skin lesion", &["a", "b"]), None).unwrap();
    c.ok(plain.contains('a') && plain.contains('b') && !plain.contains("irregular"), "plain prompt names classes only");
    let tpl = PromptTemplate::classification("dermoscopy", "skin lesion", &["melanoma", "nevus"]);
    let rich = build_prompt(&tpl, Some(&kb)).unwrap();
    c.ok(rich.contains("melanoma: irregular borders, dark pigment"), "knowledge appended as name: attributes");
    c.ok(rich == build_prompt(&tpl, Some(&kb)).unwrap(), "prompt building is deterministic");
    let det = build_prompt(&PromptTemplate::detection("skin lesion"), None).unwrap();
    c.ok(det.contains("Output the bounding box in the format [x1, y1, x2, y2]"), "detection prompt carries the bbox sentence");
}

/// Every completion earns the same reward.
struct FlatEnv {
    samples: Vec<Sample>,
}

impl Environment for FlatEnv {
    fn name(&self) -> &'static str {
        "flat"
    }
    fn mode(&self) -> TaskMode {
        TaskMode::Classification
    }
    fn train_samples(&self) -> &[Sample] {
        &self.samples
    }
    fn eval_samples(&self) -> &[Sample] {
        &self.samples
    }
    fn prompt(&self, _: &Sample) -> &str {
        ""
    }
    fn render(&self, _: &Sample, tokens: &[usize]) -> String {
        render_label("same", &format!("answer {}", tokens[0]))
    }
    fn supervised_tokens(&self, _: &Sample) -> Option<Vec<usize>> {
        None
    }
    fn accepts(&self, arch: &Arch) -> bool {
        matches!(arch, Arch::SoftmaxBandit { actions: 3, features: 2 })
    }
}

fn trainer_examples(c: &mut Checks) {
    let env = OrdinalEnv::new(OrdinalEnvConfig::default()).unwrap();
    let p0 = PolicyParams::zeros(env.arch());
    let (records, p) = train(&env, p0.clone(), RewardSpec::grading(), GrpoConfig::default(), 0).unwrap();
    c.ok(records.is_empty() && p == p0, "zero steps leave the policy alone");

    let flat = FlatEnv {
        samples: (0..4)
            .map(|i| Sample {
                id: i.to_string(),
                observation: vec![i as f64, 1.0],
                truth: GroundTruth::label("never"),
                class: 0,
            })
            .collect(),
    };
    let start = params(Arch::SoftmaxBandit { actions: 3, features: 2 }, &[0.3, -0.1, 0.2, 0.0, 0.5, -0.4, 0.1, 0.0, 0.2]);
    let mut t = GrpoTrainer::new(&flat, start.clone(), RewardSpec::classification(), GrpoConfig::default()).unwrap();
    let mut still = true;
    for _ in 0..20 {
        still &= t.step().unwrap().mean_kl == 0.0;
    }
    c.ok(still && t.policy() == &start, "flat rewards never move the policy");

    let env = OrdinalEnv::new(OrdinalEnvConfig { seed: 7, ..OrdinalEnvConfig::default() }).unwrap();
    let cfg = GrpoConfig { learning_rate: 0.1, seed: 7, ..GrpoConfig::default() };
    let final_acc = |spec| train(&env, PolicyParams::zeros(env.arch()), spec, cfg.clone(), 300).unwrap().0.last().unwrap().accuracy;
    let (m, e) = (final_acc(RewardSpec::grading()), final_acc(RewardSpec::grading_exact()));
    c.ok(m > e, format!("seed 7: mfrs {m:.4} beats exact {e:.4}"));

    let small = OrdinalEnvConfig { answer_vocab: 5, ..OrdinalEnvConfig::default() };
    let env = OrdinalEnv::new(small.clone()).unwrap();
    let spec = RewardSpec::grading();
    let (sft0, _) = sft_baseline(&env, PolicyParams::zeros(env.arch()), &spec, &SftConfig::default(), 10).unwrap();
    let (grpo0, _) = train(&env, PolicyParams::zeros(env.arch()), spec.clone(), GrpoConfig::default(), 10).unwrap();
    let steps = |r: &[vrft_core::RunRecord]| r.iter().map(|x| x.step).collect::<Vec<_>>();
    c.ok(steps(&sft0) == steps(&grpo0), "sft and grpo records share the step axis");
    let init = vrft_core::train::evaluate(&env, &PolicyParams::zeros(env.arch()), &spec, &Default::default()).unwrap();
    let n = env.eval_samples().len() as f64;
    c.close(init, 0.2, 3.0 * (0.2 * 0.8 / n).sqrt(), "untrained accuracy is at chance");
    let sharp = OrdinalEnv::new(OrdinalEnvConfig { noise_sigma: 0.0, ..small }).unwrap();
    let sft_cfg = SftConfig { learning_rate: 1.0, ..SftConfig::default() };
    let (rec, _) = sft_baseline(&sharp, PolicyParams::zeros(sharp.arch()), &spec, &sft_cfg, 1000).unwrap();
    let (early, late) = (rec[249].accuracy, rec[999].accuracy);
    c.ok(late > 0.98 && 1.0 - late < 0.5 * (1.0 - early), format!("sft on a separable env closes in on 1: {early:.4} at 250 steps, {late:.4} at 1000"));
}

fn tool_examples(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = recipe(dir.path(), "mfrs_vs_exact", r#", "steps": 0, "seeds": [1]"#);
    let summary = run(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("mfrs_vs_exact/records_1.csv")).unwrap();
    c.ok(csv.lines().count() == 1, "zero-step run writes header-only records");
    let s = &summary.seeds[0];
    c.ok(s.arms.len() == 2 && s.arms.iter().all(|a| a.init_accuracy > 0.0), "zero-step summary carries init metrics for both arms");
    c.ok(s.comparison.as_ref().is_some_and(|k| k.arm == "mfrs" && k.baseline == "exact"), "paired recipe has a comparison row");
    c.ok(s.arms[0].dataset_hash == s.arms[1].dataset_hash, "paired arms share their data");
    let bad = RunConfig::from_json(r#"{"experiment": "no_such", "output_dir": "x"}"#);
    c.ok(bad.is_err_and(|e| e.path == "experiment"), "unknown experiment rejected at `experiment`");

    let spec = RewardSpec::classification();
    let line = |id: &str| json!({"id": id, "prompt": "p", "completion": render_label("t", "a"), "ground_truth": {"label": "a"}, "task": "classification"}).to_string();
    let mut out = Vec::new();
    let r = score_file(&b""[..], &spec, &mut out).unwrap();
    c.ok(r.scored == 0 && r.failed == 0 && out.is_empty(), "empty score input");
    let input = [line("1"), line("2"), "{oops".into(), line("3")].join("\n");
    let (mut first, mut second) = (Vec::new(), Vec::new());
    let r = score_file(input.as_bytes(), &spec, &mut first).unwrap();
    c.ok(r.scored == 3 && r.failed == 1, "three good lines and one bad");
    score_file(input.as_bytes(), &spec, &mut second).unwrap();
    c.ok(first == second, "scoring twice is byte-identical");

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let (status, body) = call("GET", "/healthz", None).await;
        c.ok(status == 200 && body["status"] == "ok", "health check is ok");
        let item = |completion: String, gt: Value, task: &str| {
            json!({"id": "i", "prompt": "p", "completion": completion, "ground_truth": gt, "task": task})
        };
        let req = json!({"spec": "paper_default", "items": [item(render_label("t", "melanoma"), json!({"label": "melanoma"}), "classification")]});
        let (status, body) = call("POST", "/v1/score", Some(req)).await;
        c.ok(status == 200 && body["items"][0]["total"].as_f64() == Some(1.0), "correct label scores 1 over http");
        let (status, body) = call("POST", "/v1/score", Some(json!({"spec": "paper_default", "items": []}))).await;
        c.ok(status == 200 && body["items"] == json!([]), "empty batch over http");
        let req = json!({"spec": "mfrs_default", "items": [item("<think>x</think>\\boxed{3}".into(), json!({"grade": 2}), "grading")]});
        let (status, body) = call("POST", "/v1/score", Some(req)).await;
        c.ok(status == 200 && body["items"][0]["task_reward"].as_f64() == Some(0.25), "distance-1 grade over http");
    });
}

async fn call(method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(axum::body::Body::empty, |b| axum::body::Body::from(b.to_string())))
        .unwrap();
    let resp = vrft::service::router(Presets::default()).oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

// --------------------------------------------------------------------- A2

fn a2(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for (arch, heads) in [
        (Arch::SoftmaxBandit { actions: 5, features: 4 }, vec![Head::Answer]),
        (Arch::SeqSoftmax { think_len: 3, vocab: 6, answers: 4, features: 3 }, vec![Head::Answer]),
        (Arch::SharedBackbone { regions: 4, region_features: 3, classes: 3 }, vec![Head::Localize, Head::Classify]),
    ] {
        let mut worst: f64 = 0.0;
        let mut clipped = 0;
        let mut points = 0;
        while points < 100 {
            let head = heads[points % heads.len()];
            let Some((batch, theta, cfg, clips)) = random_point(arch, head, &mut rng) else {
                continue;
            };
            points += 1;
            clipped += clips;
            let (_, analytic) = grpo_loss(&batch, &params(arch, &theta), &cfg).unwrap();
            let numeric = fd_grad(&theta, 1e-5, |t| grpo_loss(&batch, &params(arch, t), &cfg).unwrap().0);
            worst = worst.max(rel_err(&analytic, &numeric));
        }
        c.ok(worst < 1e-4, format!("{}: max rel err {worst:e} over 100 points", arch.name()));
        c.note(format!("{}: max rel err {worst:.2e}, {clipped} clipped tokens", arch.name()));
    }
}

/// An off-policy group around a random point. Returns `None` when a token
/// ratio sits so close to a clip edge that a finite difference would
/// straddle the kink.
fn random_point(arch: Arch, head: Head, rng: &mut ChaCha8Rng) -> Option<(GroupBatch, Vec<f64>, GrpoConfig, usize)> {
    let old = uniform(rng, arch.num_params(), 1.0);
    let reference: Vec<f64> = old.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect();
    let theta: Vec<f64> = old.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
    let ctx = uniform(rng, arch.context_len(), 1.0);
    let cfg = GrpoConfig {
        temperature: rng.random_range(0.5..1.5),
        beta: rng.random_range(0.0..0.2),
        clip_eps: 0.2,
        ..GrpoConfig::default()
    };
    let (old_p, ref_p, cur) = (params(arch, &old), params(arch, &reference), params(arch, &theta));
    let mut clipped = 0;
    let mut completions = Vec::new();
    for _ in 0..6 {
        let s = old_p.sample(&ctx, head, cfg.temperature, rng).unwrap();
        let now = cur.token_log_probs(&ctx, head, &s.tokens, cfg.temperature).unwrap();
        for (a, b) in now.iter().zip(&s.logp) {
            let ratio = (a - b).exp();
            if (ratio - 1.2).abs() < 1e-3 || (ratio - 0.8).abs() < 1e-3 {
                return None;
            }
            clipped += usize::from(!(0.8..=1.2).contains(&ratio));
        }
        completions.push(Completion {
            logp_ref: ref_p.token_log_probs(&ctx, head, &s.tokens, cfg.temperature).unwrap(),
            logp_theta: now,
            tokens: s.tokens,
            logp_old: s.logp,
            rendered: String::new(),
        });
    }
    let rewards: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    let batch = GroupBatch {
        prompt_id: 0,
        context: ctx,
        head,
        completions,
        advantages: group_advantages(&rewards, 1e-4).unwrap(),
        rewards,
    };
    Some((batch, theta, cfg, clipped))
}

// --------------------------------------------------------------------- A3

fn a3(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (mut mean_ok, mut shift_ok, mut flat_ok) = (0, 0, 0);
    let mut worst_mean: f64 = 0.0;
    let groups = 10_000;
    for i in 0..groups {
        let n = if i % 2 == 0 { 1 << rng.random_range(1..7) } else { rng.random_range(2..65) };
        let floor = [0.0, 1e-4, 0.5][i % 3];
        let rewards: Vec<f64> = match i % 4 {
            0 => (0..n).map(|_| rng.random_range(-1e3..1e3)).collect(),
            1 => (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
            2 => (0..n).map(|_| [0.0, 0.0625, 0.25, 1.0][rng.random_range(0..4)] * 0.9 + 0.1).collect(),
            _ => (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let a = group_advantages(&rewards, floor).unwrap();
        let m = a.iter().sum::<f64>() / n as f64;
        worst_mean = worst_mean.max(m.abs() / n as f64);
        mean_ok += usize::from(m.abs() < 1e-9 * n as f64);

        // dyadic rewards and shifts keep every operation exact when n is a
        // power of two, so shifted advantages must agree bit for bit
        let n2 = 1 << rng.random_range(1..7);
        let dyadic: Vec<f64> = (0..n2).map(|_| f64::from(rng.random_range(-64..=64)) / 8.0).collect();
        let shift = f64::from(rng.random_range(-1000..=1000)) / 4.0;
        let moved: Vec<f64> = dyadic.iter().map(|r| r + shift).collect();
        let (x, y) = (group_advantages(&dyadic, floor).unwrap(), group_advantages(&moved, floor).unwrap());
        shift_ok += usize::from(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));

        let value = rng.random_range(-10.0..10.0);
        flat_ok += usize::from(group_advantages(&vec![value; n], floor).unwrap().iter().all(|v| *v == 0.0));
    }
    c.ok(mean_ok == groups, format!("mean advantage below 1e-9 N in {mean_ok}/{groups} groups"));
    c.ok(shift_ok == groups, format!("shift invariance bit-exact in {shift_ok}/{groups} groups"));
    c.ok(flat_ok == groups, format!("all-equal groups give zeros in {flat_ok}/{groups} groups"));
    c.note(format!("largest |mean(A)|/N: {worst_mean:.2e}"));
}

// ------------------------------------------------------------ experiments

fn recipe(dir: &Path, experiment: &str, extra: &str) -> RunConfig {
    let out = dir.join(experiment).display().to_string();
    RunConfig::from_json(&format!(r#"{{"experiment": "{experiment}", "output_dir": {out:?}{extra}}}"#)).unwrap()
}

/// Workspace for the full-length runs; A8 repeats them.
fn runs_dir() -> &'static Path {
    static DIR: std::sync::OnceLock<tempfile::TempDir> = std::sync::OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

const FULL_RUNS: [&str; 4] = ["mfrs_vs_exact", "recite_pos", "recite_neg", "pa_policy"];

fn full_run(experiment: &str) -> RunSummary {
    run(&recipe(runs_dir(), experiment, "")).unwrap()
}

fn a4(c: &mut Checks) {
    let env = OrdinalEnv::new(OrdinalEnvConfig::default()).unwrap();
    let sparse = sparse_reward_probe(&env, RewardKind::Exact, GrpoConfig::default().group_size);
    c.ok(sparse >= 0.6, format!("exact-reward groups of a uniform policy are {sparse:.3} degenerate"));
    let s = full_run("mfrs_vs_exact");
    let diffs: Vec<f64> = s.seeds.iter().map(|x| x.comparison.as_ref().unwrap().accuracy_difference).collect();
    let wins = diffs.iter().filter(|d| **d > 0.0).count();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    c.ok(s.seeds.len() == 10 && s.steps == 300, "10 seeds of 300 steps");
    c.ok(wins >= 8, format!("mfrs wins {wins}/10 seeds"));
    c.ok(mean > 0.05, format!("mean improvement {:.1} points", 100.0 * mean));
    c.note(format!("mfrs wins {wins}/10, mean improvement {:+.1} points, exact groups degenerate {sparse:.3}", 100.0 * mean));
}

fn a5(c: &mut Checks) {
    let pos = full_run("recite_pos");
    let neg = full_run("recite_neg");
    c.ok(pos.seeds.len() == 10 && neg.seeds.len() == 10 && pos.steps == 300, "10 seeds of 300 steps per sign");
    let (mut faster, mut lower_bleu) = (0, 0);
    for (p, n) in pos.seeds.iter().zip(&neg.seeds) {
        let (p, n) = (p.arm("grpo").unwrap(), n.arm("grpo").unwrap());
        faster += usize::from(p.steps_to_plateau.unwrap() < n.steps_to_plateau.unwrap());
        let (pl, nl) = (p.last.unwrap(), n.last.unwrap());
        lower_bleu += usize::from(nl.mean_bleu_vs_prompt.unwrap() < pl.mean_bleu_vs_prompt.unwrap() && nl.accuracy >= pl.accuracy);
    }
    c.ok(faster >= 8, format!("+0.2 plateaus sooner in {faster}/10 seeds"));
    c.ok(lower_bleu >= 7, format!("-2 ends with less copying and no worse accuracy in {lower_bleu}/10 seeds"));
    c.note(format!("sooner plateau {faster}/10, less copying and accuracy >= in {lower_bleu}/10"));
}

fn a6(c: &mut Checks) {
    let s = full_run("pa_policy");
    c.ok(s.seeds.len() == 10, "10 seeds");
    let gains: Vec<f64> = s.seeds.iter().map(|x| x.comparison.as_ref().unwrap().accuracy_difference).collect();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let monotone = s.seeds.iter().filter(|x| x.comparison.as_ref().unwrap().monotone_in_train_size == Some(true)).count();
    c.ok(mean > 0.10, format!("mean zero-shot gain {:.1} points", 100.0 * mean));
    c.ok(monotone >= 8, format!("monotone in training-set size in {monotone}/10 seeds"));
    c.note(format!("zero-shot gain {:+.1} points, monotone {monotone}/10", 100.0 * mean));
}

// --------------------------------------------------------------------- A7

fn a7(c: &mut Checks) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/parse_corpus.jsonl");
    let text = std::fs::read_to_string(path).unwrap();
    let mut by_mode: HashMap<String, (usize, usize)> = HashMap::new();
    for line in text.lines() {
        let case: Value = serde_json::from_str(line).unwrap();
        let id = case["id"].as_str().unwrap();
        let mode: TaskMode = serde_json::from_value(case["mode"].clone()).unwrap();
        let p = parse_completion(case["raw"].as_str().unwrap(), mode);
        let answer = match (p.label(), p.bbox()) {
            (Some(l), _) => json!({"label": l}),
            (_, Some(b)) => json!({"bbox": b.to_array()}),
            _ => Value::Null,
        };
        let as_floats = |v: &Value| -> Value {
            match v.get("bbox") {
                Some(b) => json!({"bbox": b.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>()}),
                None => v.clone(),
            }
        };
        let mut agree = p.format_ok == case["format_ok"].as_bool().unwrap() && answer == as_floats(&case["answer"]);
        if let Some(t) = case.get("think") {
            agree &= p.think_text == t.as_str().unwrap();
        }
        let tally = by_mode.entry(case["mode"].as_str().unwrap().to_owned()).or_default();
        tally.0 += 1;
        tally.1 += usize::from(agree);
        c.ok(agree, format!("{id}: parsed format_ok={} answer={answer}, labelled {line}", p.format_ok));
    }
    let mut modes: Vec<_> = by_mode.into_iter().collect();
    modes.sort();
    let summary: Vec<String> = modes.iter().map(|(m, (n, ok))| format!("{m} {ok}/{n}")).collect();
    c.ok(modes.iter().map(|(_, (n, _))| n).sum::<usize>() == 200, "corpus holds 200 cases");
    c.note(summary.join(", "));
}

// --------------------------------------------------------------------- A8

fn a8(c: &mut Checks) {
    let again = tempfile::tempdir().unwrap();
    for experiment in FULL_RUNS {
        let first = runs_dir().join(experiment);
        if !first.join("summary.json").exists() {
            full_run(experiment);
        }
        run(&recipe(again.path(), experiment, "")).unwrap();
        let second = again.path().join(experiment);
        let mut files = 0;
        for entry in std::fs::read_dir(&first).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            if !(name.starts_with("records_") || name == "summary.json") {
                continue;
            }
            files += 1;
            let same = std::fs::read(first.join(&name)).unwrap() == std::fs::read(second.join(&name)).unwrap();
            c.ok(same, format!("{experiment}/{name} repeats byte for byte"));
        }
        c.ok(files == 11, format!("{experiment}: compared {files} files"));
    }
}
