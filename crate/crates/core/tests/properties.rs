use std::collections::BTreeMap;

use proptest::prelude::*;

use choicelab::analysis::mse_eval;
use choicelab::dataset::format_target_json;
use choicelab::parsing::{parse_prediction, segment_thoughts, strip_final_json};
use choicelab::policy::{ProblemFeatures, ToyGrammar, ToyPolicyParams};
use choicelab::rewards::group_advantages;
use choicelab::training::{clipped_term, derive_seed, GrpoConfig};

proptest! {
    #[test]
    fn advantages_sum_to_zero(rewards in prop::collection::vec(0.0f64..1.0, 2..40)) {
        let a = group_advantages(&rewards).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-12);
        // order is preserved: a larger reward never gets a smaller advantage
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] > rewards[j] {
                    prop_assert!(a[i] > a[j]);
                }
            }
        }
    }

    #[test]
    fn clipped_term_is_pessimistic(ratio in 0.0f64..5.0, adv in -2.0f64..2.0) {
        let cfg = GrpoConfig::default();
        let v = clipped_term(ratio, adv, &cfg);
        prop_assert!(v <= ratio * adv + 1e-15);
        prop_assert!(v <= ratio.clamp(0.8, 1.28) * adv + 1e-15);
    }

    #[test]
    fn target_json_round_trips(b in 0.0f64..=1.0) {
        let parsed = parse_prediction(&format_target_json(b).unwrap()).coherent().unwrap();
        prop_assert_eq!(parsed.o_b, (b * 100.0).round() / 100.0);
        prop_assert!((parsed.o_a + parsed.o_b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stripping_a_single_prediction_is_idempotent(
        cot in "[a-zA-Z0-9 .,\n]{0,80}",
        b in 0u32..=100,
        fenced in any::<bool>(),
    ) {
        let block = format!("{{\"option_A\": {}, \"option_B\": {b}}}", 100 - b);
        let text = if fenced { format!("{cot}\n```json\n{block}\n```") } else { format!("{cot}\n{block}") };
        let once = strip_final_json(&text);
        prop_assert!(!once.contains("option_B"));
        prop_assert_eq!(strip_final_json(&once), once.clone());
        prop_assert_eq!(once, cot.trim_end());
    }

    #[test]
    fn thoughts_partition_the_text(
        preamble in "[a-z ]{0,20}",
        items in prop::collection::vec("[a-z ]{1,30}", 1..8),
        style in 0usize..3,
    ) {
        let mut cot = preamble.clone();
        if !cot.is_empty() {
            cot.push('\n');
        }
        for (i, item) in items.iter().enumerate() {
            let line = match style {
                0 => format!("{}. {item}x\n", i + 1),
                1 => format!("- {item}x\n"),
                _ => format!("### Part {i}\n{item}\n"),
            };
            cot.push_str(&line);
        }
        let thoughts = segment_thoughts(&cot);
        prop_assert_eq!(thoughts.len(), items.len());
        prop_assert_eq!(thoughts.iter().map(|t| t.text.as_str()).collect::<String>(), cot.clone());
        for (t, next) in thoughts.iter().zip(thoughts.iter().skip(1)) {
            prop_assert_eq!(t.span.end, next.span.start);
        }
    }

    #[test]
    fn mse_is_invariant_to_relabeling(
        pairs in prop::collection::vec((prop::option::of(0.0f64..=1.0), 0.0f64..=1.0), 1..30),
        salt in any::<u64>(),
    ) {
        let build = |key: &dyn Fn(usize) -> String| {
            let preds: BTreeMap<String, Option<f64>> = pairs.iter().enumerate().map(|(i, p)| (key(i), p.0)).collect();
            let targets: BTreeMap<String, f64> = pairs.iter().enumerate().map(|(i, p)| (key(i), p.1)).collect();
            mse_eval("c", &preds, &targets).unwrap()
        };
        let a = build(&|i| format!("p{i:03}"));
        let b = build(&|i| format!("{:016x}-{i}", derive_seed(salt, &[i as u64])));
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert_eq!(a.invalid_rate, b.invalid_rate);
    }
}

#[test]
fn sampled_predictions_follow_the_exact_distribution() {
    let grammar = ToyGrammar::default();
    let mut params = ToyPolicyParams::zeros(grammar, ProblemFeatures::DIM);
    for (i, w) in params.weights.iter_mut().enumerate() {
        *w = ((i * 37 % 23) as f64 - 11.0) / 8.0;
    }
    let x = ProblemFeatures((0..ProblemFeatures::DIM).map(|i| 0.2 * i as f64 - 0.5).collect());
    let exact = params.prediction_distribution(&x).unwrap();
    assert!((exact.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    let n = 100_000;
    let mut counts = vec![0usize; 101];
    for s in 0..n {
        let seq = params.sample(&x, derive_seed(9, &[s]), 64);
        counts[seq.option_b().expect("terminated") as usize] += 1;
    }
    for &(b, p) in &exact {
        let freq = counts[b as usize] as f64 / n as f64;
        // five binomial standard deviations
        let tol = 5.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-9;
        assert!((freq - p).abs() <= tol, "value {b}: sampled {freq}, exact {p}");
    }
}
