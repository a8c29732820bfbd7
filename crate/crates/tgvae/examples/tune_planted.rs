use std::collections::HashSet;
use tgvae::corpus::{self, RawDocument, VocabSpec};
use tgvae::ntm;
use tgvae::rng::{stream, uniform};
use tgvae::training::{self, Mode, TrainConfig};

fn planted_word(topic: usize, j: usize) -> String { format!("t{topic}w{j:02}") }

fn planted_corpus(n_docs: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = stream(seed, "planted_corpus", 0);
    let weights: Vec<f64> = (0..10).map(|j| 1.0 / (j + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    (0..n_docs).map(|d| {
        let topic = d % 3;
        let len = 8 + (uniform(&mut rng) * 5.0) as usize;
        let words: Vec<String> = (0..len).map(|_| {
            let mut u = uniform(&mut rng) * total;
            let mut pick = 9;
            for (j, w) in weights.iter().enumerate() { u -= w; if u <= 0.0 { pick = j; break; } }
            planted_word(topic, pick)
        }).collect();
        RawDocument { id: format!("doc{d}"), text: Some(words.join(" ")), article: None, summary: None }
    }).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(30);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let warmup: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(120);
    let lambda: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let docs = planted_corpus(500, 42);
    let stop = HashSet::new();
    let spec = VocabSpec { lm_min_count: 1, tm_stoplist: &stop, tm_top_frac: 0.0, tm_min_docs: 1 };
    let (lm, tm) = corpus::build_vocab(&docs, &spec).unwrap();
    let records: Vec<_> = docs.iter().map(|d| corpus::vectorize(d, &lm, &tm, 300, 30)).collect();
    let items = corpus::items_of(&records);
    let (train_items, dev_items) = training::split_dev(&items, 0.1, 42);

    let mut config = TrainConfig::with_corpus("planted");
    config.mode = Mode::Generation;
    config.num_topics = 3;
    config.flow_depth = 1;
    config.latent_dim = 8;
    config.hidden = Some(32);
    config.embed_dim = 16;
    config.ntm_hidden = 32;
    config.prior_hidden = 16;
    config.batch_size = 25;
    config.epochs = epochs;
    config.learning_rate = lr;
    config.dropout = 0.1;
    config.kl_warmup_steps = warmup;
    config.lambda = lambda;
    config.seed = 42;
    let t0 = std::time::Instant::now();
    let outcome = training::fit(&config, &lm, &tm, &train_items, &dev_items).unwrap();
    for log in outcome.logs.iter().step_by(5.max(epochs/8)) {
        println!("ep {:>3}: obj {:>9.3} ntm_rec {:>8.3} ntm_kl {:.3} seq_rec {:>8.3} ukl {:.3} R {:.4} dev_ppl {:.2}",
            log.epoch, log.total_objective, log.ntm_recon, log.ntm_kl, log.seq_recon, log.u_kl, log.diversity_r, log.dev_ppl);
    }
    let last = outcome.logs.last().unwrap();
    println!("last ep {}: dev_ppl {:.2}  ({:.1}s)", last.epoch, last.dev_ppl, t0.elapsed().as_secs_f64());
    let beta = ntm::beta_values(&outcome.store, 3).unwrap();
    let lists = ntm::top_words(&beta, 5);
    for (k, ids) in lists.iter().enumerate() {
        let words: Vec<&str> = ids.iter().map(|&w| tm.token(w).unwrap()).collect();
        println!("topic {k}: {words:?}");
    }
}
