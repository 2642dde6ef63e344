//! Property tests for the invariants of each module.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::sample::select;
use ragtrim::analytics::{fit_ols_matrix, length_histogram};
use ragtrim::compression::{
    distance_profile, leave_one_out, random_delete, retained_indices, semantic_compress, Percentile,
};
use ragtrim::corpus::{Group, KnowledgeBase, QaItem};
use ragtrim::cost::{question_cost, ComputeCostSpec, Pipeline, PricingTable, QuestionTokens};
use ragtrim::embedding::{cosine, embed, index_build, l2_distance, EmbeddingVector, ReferenceEmbedder, VectorIndex};
use ragtrim::llm::{build_prompt, parse_answer, PromptTemplate};
use ragtrim::retrieval::{Bm25Index, Bm25Params};
use ragtrim::text::{segment, sentence_entropy, CjkCharSegmenter, FrequencyModel, Segmenter, TokenCounter};

fn word() -> impl Strategy<Value = String> {
    select(common::VOCAB).prop_map(str::to_string)
}

fn sentence(lo: usize, hi: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), lo..=hi)
}

fn mixed_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.!宝喝水吃鱼蛋奶]{0,40}"
}

fn corpus(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(sentence(3, 25).prop_map(|w| w.join(" ")), n)
}

fn kb_from(texts: &[String]) -> KnowledgeBase {
    KnowledgeBase::new(texts.iter().enumerate().map(|(i, t)| common::doc(format!("d{i:03}"), t.clone())).collect())
        .unwrap()
}

fn emb() -> ReferenceEmbedder {
    ReferenceEmbedder::new(256).unwrap()
}

proptest! {
    #[test]
    fn segmentation_is_idempotent_on_its_output(text in mixed_text()) {
        let seg = CjkCharSegmenter;
        let words = segment(&text).words;
        prop_assert_eq!(seg.segment_words(&seg.join(&words)), words.clone());
        prop_assert_eq!(segment(&text).words, words);
    }

    #[test]
    fn token_count_is_monotone_under_concatenation(a in mixed_text(), b in mixed_text(), r in 0.5f64..6.0) {
        for counter in [TokenCounter::Word, TokenCounter::chars_per_token(r).unwrap()] {
            let joined = counter.count(&format!("{a}{b}"));
            prop_assert!(joined >= counter.count(&a).max(counter.count(&b)));
        }
    }

    #[test]
    fn smoothed_probabilities_sum_to_one(texts in corpus(1..=6)) {
        let model = FrequencyModel::from_texts(texts.iter().map(String::as_str), &CjkCharSegmenter, true).unwrap();
        let seen: f64 = model.counts.keys().map(|w| model.probability(w)).sum();
        let unseen = model.probability("never-seen-word");
        prop_assert!((seen + unseen - 1.0).abs() < 1e-12);
        prop_assert_eq!(model.total, model.counts.values().sum::<u64>());
    }

    #[test]
    fn entropy_is_nonnegative_and_falls_with_count(texts in corpus(1..=6), smoothing in any::<bool>()) {
        let model = FrequencyModel::from_texts(texts.iter().map(String::as_str), &CjkCharSegmenter, smoothing).unwrap();
        let mut by_count: Vec<(u64, f64)> = model.counts.keys().map(|w| (model.count(w), model.word_entropy(w))).collect();
        by_count.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        prop_assert!(by_count.iter().all(|(_, h)| *h >= 0.0));
        prop_assert!(by_count.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
    }

    #[test]
    fn sentence_sum_is_mean_times_n(texts in corpus(1..=6), probe in sentence(1, 30)) {
        let model = FrequencyModel::from_texts(texts.iter().map(String::as_str), &CjkCharSegmenter, true).unwrap();
        let s = sentence_entropy(&model, &CjkCharSegmenter, &probe.join(" ")).unwrap();
        prop_assert_eq!(s.n, probe.len());
        prop_assert_eq!(s.mean_bits * s.n as f64, s.sum_bits);
    }

    #[test]
    fn reference_embeddings_are_unit_and_deterministic(text in "[a-z宝喝水 ]{1,40}") {
        prop_assume!(!text.trim().is_empty());
        let a = embed(&emb(), &text).unwrap();
        let b = embed(&emb(), &text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 8),
        b in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        let (a, b) = (EmbeddingVector::new(a), EmbeddingVector::new(b));
        prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
        let c = cosine(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&b, &a).unwrap());
        prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        prop_assert!((l2_distance(&a, &b).unwrap() - l2_distance(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bm25_scores_ignore_insertion_order(texts in corpus(2..=12), query in sentence(1, 5), seed in any::<u64>()) {
        let kb = kb_from(&texts);
        let mut docs = kb.documents().to_vec();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(docs.as_mut_slice(), &mut rng);
        let shuffled = KnowledgeBase::new(docs).unwrap();
        let q = query.join(" ");
        let a = Bm25Index::build(&kb, Bm25Params::default());
        let b = Bm25Index::build(&shuffled, Bm25Params::default());
        prop_assert_eq!(a.scores(&q), b.scores(&q));
        prop_assert_eq!(a.search(&q, 5), b.search(&q, 5));
    }

    #[test]
    fn top_k_is_a_prefix_of_top_k_plus_one(texts in corpus(2..=12), query in sentence(1, 5)) {
        let kb = kb_from(&texts);
        let q = query.join(" ");
        let bm25 = Bm25Index::build(&kb, Bm25Params::default());
        let idx = index_build(&kb, &emb()).unwrap();
        let qv = embed(&emb(), &q).unwrap();
        for k in 1..texts.len() {
            let (a, b) = (bm25.search(&q, k), bm25.search(&q, k + 1));
            prop_assert_eq!(&a.hits[..], &b.hits[..k]);
            prop_assert!(a.hits.windows(2).all(|w| w[0].score >= w[1].score));
            let (a, b) = (idx.search(&qv, k).unwrap(), idx.search(&qv, k + 1).unwrap());
            prop_assert_eq!(&a.hits[..], &b.hits[..k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_results_ignore_insertion_order_and_persistence(texts in corpus(2..=10), query in sentence(1, 5), seed in any::<u64>()) {
        let kb = kb_from(&texts);
        let mut docs = kb.documents().to_vec();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(docs.as_mut_slice(), &mut rng);
        let a = index_build(&kb, &emb()).unwrap();
        let b = index_build(&KnowledgeBase::new(docs).unwrap(), &emb()).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let reloaded = VectorIndex::from_bytes(&a.to_bytes()).unwrap();
        let qv = embed(&emb(), &query.join(" ")).unwrap();
        prop_assert_eq!(a.search(&qv, 4).unwrap(), reloaded.search(&qv, 4).unwrap());
    }

    #[test]
    fn semantic_output_is_nested_subsequence(words in sentence(2, 40), j1 in 0u32..100, j2 in 0u32..100) {
        let text = words.join(" ");
        let profile = distance_profile(&text, &CjkCharSegmenter, &emb()).unwrap();
        let (lo, hi) = (j1.min(j2) as f64, j1.max(j2) as f64);
        let keep_lo = retained_indices(&profile.distances(), Percentile::new(lo).unwrap());
        let keep_hi = retained_indices(&profile.distances(), Percentile::new(hi).unwrap());
        prop_assert!(keep_hi.iter().collect::<BTreeSet<_>>().is_subset(&keep_lo.iter().collect()));
        prop_assert!(!keep_hi.is_empty());
        let out = semantic_compress(&text, Percentile::new(hi).unwrap(), &CjkCharSegmenter, &emb()).unwrap();
        let mut it = words.iter();
        prop_assert!(out.retained_words.iter().all(|w| it.any(|x| x == w)));
    }

    #[test]
    fn distance_profile_matches_a_sequential_recomputation(words in sentence(2, 30)) {
        let text = words.join(" ");
        let e = emb();
        let profile = distance_profile(&text, &CjkCharSegmenter, &e).unwrap();
        let base = embed(&e, &text).unwrap();
        for i in (0..words.len()).rev() {
            let v = embed(&e, &leave_one_out(&CjkCharSegmenter, &words, i)).unwrap();
            prop_assert_eq!(profile.entries[i].distance, l2_distance(&base, &v).unwrap());
            prop_assert_eq!(profile.entries[i].index, i);
        }
    }
}

proptest! {
    #[test]
    fn distinct_distances_keep_about_the_complement(
        d in prop::collection::btree_set(0u32..1_000_000, 2..80),
        seed in any::<u64>(),
        j in 1u32..100,
    ) {
        let mut dist: Vec<f64> = d.into_iter().map(|x| x as f64 / 1e3).collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(dist.as_mut_slice(), &mut rng);
        let n = dist.len() as f64;
        let kept = retained_indices(&dist, Percentile::new(j as f64).unwrap()).len() as f64;
        prop_assert!((kept - (100.0 - j as f64) / 100.0 * n).abs() <= 1.0);
    }

    #[test]
    fn random_deletion_is_seeded_and_ordered(words in sentence(1, 50), ratio in 0.0f64..0.99, seed in any::<u64>()) {
        let text = words.join(" ");
        let a = random_delete(&text, ratio, seed, &CjkCharSegmenter).unwrap();
        let b = random_delete(&text, ratio, seed, &CjkCharSegmenter).unwrap();
        prop_assert_eq!(&a, &b);
        let n = words.len();
        let expected = n - ((ratio * n as f64).round() as usize).min(n - 1);
        prop_assert_eq!(a.retained_words.len(), expected);
        let mut it = words.iter();
        prop_assert!(a.retained_words.iter().all(|w| it.any(|x| x == w)));
    }

    #[test]
    fn cost_total_is_the_sum_and_linear(
        q in 0.0f64..2000.0, c in 0.0f64..4000.0, o in 0.0f64..500.0, dq in 0.0f64..500.0,
        ratio in 0.0f64..=1.0,
    ) {
        let table = PricingTable::builtin();
        let compute = table.compute().unwrap();
        let t = QuestionTokens { query: q, context: c, output: o };
        for p in [Pipeline::PlainRag, Pipeline::CompressedRag { context_ratio: ratio }] {
            let r = question_cost(t, p, &table, &compute).unwrap();
            prop_assert_eq!(r.total, r.api_cost + r.retrieval_cost + r.summarization_cost);
            // Cost is affine in each count: equal steps give equal increments.
            let step = |x: f64| question_cost(QuestionTokens { query: x, ..t }, p, &table, &compute).unwrap().total;
            let (f0, f1, f2) = (step(q), step(q + dq), step(q + 2.0 * dq));
            prop_assert!(((f1 - f0) - (f2 - f1)).abs() < 1e-15);
        }
        let free = ComputeCostSpec { hourly_price: 0.0, ..compute };
        let plain = question_cost(t, Pipeline::PlainRag, &table, &free).unwrap();
        let same = question_cost(t, Pipeline::CompressedRag { context_ratio: 1.0 }, &table, &free).unwrap();
        prop_assert_eq!(plain.total, same.total);
    }

    #[test]
    fn ols_residuals_are_orthogonal(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 8..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let y: Vec<f64> = rows.iter().zip(&noise).map(|(r, e)| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + e).collect();
        let fit = match fit_ols_matrix(&["a", "b", "c"], &rows, &y) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let r = &fit.residuals;
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..3 {
            let dot: f64 = r.iter().zip(&rows).map(|(e, x)| e * x[j]).sum();
            prop_assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn duplicated_row_keeps_exact_fit(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..30),
        pick in any::<prop::sample::Index>(),
    ) {
        let y: Vec<f64> = rows.iter().map(|r| 3.0 - r[0] + 4.0 * r[1]).collect();
        let Ok(fit) = fit_ols_matrix(&["a", "b"], &rows, &y) else { return Ok(()) };
        let i = pick.index(rows.len());
        let (mut rows2, mut y2) = (rows.clone(), y.clone());
        rows2.push(rows[i].clone());
        y2.push(y[i]);
        let fit2 = fit_ols_matrix(&["a", "b"], &rows2, &y2).unwrap();
        for ((_, a), (_, b)) in fit.coefficients.iter().zip(&fit2.coefficients) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_counts_every_length(lengths in prop::collection::vec(0usize..500, 0..200), width in 1usize..60) {
        let bins = length_histogram(&lengths, width).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), lengths.len());
        prop_assert!(bins.iter().all(|b| b.end - b.start == width && b.start % width == 0 && b.count > 0));
    }

    #[test]
    fn prompts_are_injective(
        c1 in "[a-z ]{0,20}", c2 in "[a-z ]{0,20}", q1 in "[a-z ?]{1,20}", q2 in "[a-z ?]{1,20}",
    ) {
        let item = |q: &str| QaItem {
            id: "q".into(),
            question: q.into(),
            options: vec!["Recommend".into(), "Neutral".into(), "Avoid".into()],
            answer: 1,
            food: "f".into(),
            group: Group::Infant,
        };
        let t = PromptTemplate::english();
        let a = build_prompt(&c1, &item(&q1), &t).rendered;
        let b = build_prompt(&c2, &item(&q2), &t).rendered;
        prop_assert_eq!(a == b, c1 == c2 && q1 == q2);
    }

    #[test]
    fn cue_pattern_parses_back(i in 1u8..=3, prefix in "[a-zA-Z ]{0,15}") {
        let opts: Vec<String> = vec!["Recommend".into(), "Neutral".into(), "Avoid".into()];
        prop_assert_eq!(parse_answer(&format!("{prefix} ({i})"), &opts).unwrap(), i);
        prop_assert_eq!(parse_answer(&format!("The answer is {i}."), &opts).unwrap(), i);
    }
}
